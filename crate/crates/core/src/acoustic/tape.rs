//! Reverse-mode differentiation over dense row-major `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] on a `1 x 1` node returns the gradient of that scalar
//! with respect to every parameter leaf. Each tape is single-use and owned by
//! one thread; batches are differentiated with one tape per utterance.

use crate::aligner;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "{rows}x{cols} from {} values",
            data.len()
        );
        Self { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self::from_vec(rows, cols, vec![v; rows * cols])
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn matmul(&self, b: &Mat) -> Mat {
        assert_eq!(
            self.cols, b.rows,
            "matmul {}x{} . {}x{}",
            self.rows, self.cols, b.rows, b.cols
        );
        let mut out = Mat::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &b.data[k * b.cols..(k + 1) * b.cols];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    fn add_assign(&mut self, o: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat::from_vec(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

pub type Var = usize;

enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    SqDist(Var, Var),
    GatherRows(Var, Vec<usize>),
    ShiftConcat(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    MulConst(Var, Mat),
    Mse(Var, Mat),
    ForwardSum(Var, Mat),
}

struct Node {
    value: Mat,
    op: Op,
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn param(&mut self, index: usize, value: Mat) -> Var {
        self.push(value, Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "add shape mismatch");
        let mut v = x.clone();
        v.add_assign(y);
        self.push(v, Op::Add(a, b))
    }

    /// `a [n x c] + row [1 x c]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert!(r.rows == 1 && r.cols == x.cols, "add_row shape mismatch");
        let mut v = x.clone();
        for i in 0..v.rows {
            for (o, b) in v.row_mut(i).iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Per-row layer normalization with gain and bias rows `[1 x c]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let c = xv.cols;
        let mut xhat = Mat::zeros(xv.rows, c);
        let mut inv_std = Vec::with_capacity(xv.rows);
        let mut out = Mat::zeros(xv.rows, c);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for k in 0..c {
                let h = (row[k] - mean) * inv;
                xhat.data[r * c + k] = h;
                out.data[r * c + k] = h * g.data[k] + b.data[k];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for r in 0..v.rows {
            let row = v.row_mut(r);
            let lse = aligner::log_sum_exp(row);
            row.iter_mut().for_each(|e| *e = (*e - lse).exp());
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for r in 0..v.rows {
            let row = v.row_mut(r);
            let lse = aligner::log_sum_exp(row);
            row.iter_mut().for_each(|e| *e -= lse);
        }
        self.push(v, Op::LogSoftmaxRows(a))
    }

    /// Squared Euclidean distances: `out[j][i] = ||q_j - k_i||^2`.
    pub fn sq_dist(&mut self, q: Var, k: Var) -> Var {
        let (qv, kv) = (self.value(q), self.value(k));
        assert_eq!(qv.cols, kv.cols, "sq_dist feature mismatch");
        let mut v = Mat::zeros(qv.rows, kv.rows);
        for j in 0..qv.rows {
            for i in 0..kv.rows {
                v.data[j * kv.rows + i] = qv
                    .row(j)
                    .iter()
                    .zip(kv.row(i))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
            }
        }
        self.push(v, Op::SqDist(q, k))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let x = self.value(a);
        let mut v = Mat::zeros(idx.len(), x.cols);
        for (r, &i) in idx.iter().enumerate() {
            v.row_mut(r).copy_from_slice(x.row(i));
        }
        self.push(v, Op::GatherRows(a, idx))
    }

    /// Row `t` of the output is `[a[t - k/2], ..., a[t + k/2]]`, zero beyond
    /// the edges: a 1-D "same" convolution becomes this followed by a matmul.
    pub fn shift_concat(&mut self, a: Var, k: usize) -> Var {
        assert!(k % 2 == 1, "kernel must be odd");
        let x = self.value(a);
        let (n, c) = (x.rows, x.cols);
        let half = (k / 2) as isize;
        let mut v = Mat::zeros(n, k * c);
        for t in 0..n {
            for s in 0..k {
                let src = t as isize + s as isize - half;
                if src >= 0 && (src as usize) < n {
                    v.data[t * k * c + s * c..t * k * c + (s + 1) * c]
                        .copy_from_slice(x.row(src as usize));
                }
            }
        }
        self.push(v, Op::ShiftConcat(a, k))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        let mut v = Mat::zeros(x.rows, len);
        for r in 0..x.rows {
            v.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in &parts {
            let x = self.value(p);
            assert_eq!(x.rows, rows, "concat row mismatch");
            for r in 0..rows {
                v.data[r * cols + off..r * cols + off + x.cols].copy_from_slice(x.row(r));
            }
            off += x.cols;
        }
        self.push(v, Op::ConcatCols(parts))
    }

    pub fn mul_const(&mut self, a: Var, mask: Mat) -> Var {
        let x = self.value(a);
        assert_eq!(
            (x.rows, x.cols),
            (mask.rows, mask.cols),
            "mask shape mismatch"
        );
        let v = Mat::from_vec(
            x.rows,
            x.cols,
            x.data.iter().zip(&mask.data).map(|(a, b)| a * b).collect(),
        );
        self.push(v, Op::MulConst(a, mask))
    }

    /// Mean squared error against a constant target, as a `1 x 1` node.
    pub fn mse(&mut self, a: Var, target: Mat) -> Var {
        let x = self.value(a);
        assert_eq!(
            (x.rows, x.cols),
            (target.rows, target.cols),
            "mse shape mismatch"
        );
        let n = x.data.len().max(1) as f64;
        let s = x
            .data
            .iter()
            .zip(&target.data)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / n;
        self.push(Mat::filled(1, 1, s), Op::Mse(a, target))
    }

    /// Forward-sum alignment loss of a frame-major log posterior
    /// `[n_frames x n_tokens]`, as a `1 x 1` node.
    pub fn forward_sum(&mut self, logp: Var) -> crate::Result<Var> {
        let x = self.value(logp);
        let (t, n) = (x.rows, x.cols);
        let token_major = x.transpose();
        let (loss, g) = aligner::forward_sum_with_grad(&token_major.data, n, t)?;
        let grad = Mat::from_vec(n, t, g).transpose();
        Ok(self.push(Mat::filled(1, 1, loss), Op::ForwardSum(logp, grad)))
    }

    /// Gradients of the scalar `out` for every parameter index below `n_params`.
    pub fn backward(&self, out: Var, n_params: usize) -> Vec<Option<Mat>> {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        assert_eq!(self.value(out).data.len(), 1, "backward needs a scalar");
        grads[out] = Some(Mat::filled(1, 1, 1.0));
        let mut param_grads: Vec<Option<Mat>> = (0..n_params).map(|_| None).collect();

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v] {
                Some(e) => e.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for id in (0..=out).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => match &mut param_grads[*p] {
                    Some(e) => e.add_assign(&g),
                    slot => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.matmul(&bv.transpose()));
                    acc(&mut grads, *b, av.transpose().matmul(&g));
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let mut r = Mat::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (o, v) in r.data.iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *row, r);
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let d = g
                        .data
                        .iter()
                        .zip(&x.data)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    acc(&mut grads, *a, Mat::from_vec(g.rows, g.cols, d));
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma);
                    let c = g.cols;
                    let mut dg = Mat::zeros(1, c);
                    let mut db = Mat::zeros(1, c);
                    let mut dx = Mat::zeros(g.rows, c);
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for k in 0..c {
                            dg.data[k] += gr[k] * hr[k];
                            db.data[k] += gr[k];
                            let d = gr[k] * gv.data[k];
                            sum_d += d;
                            sum_dh += d * hr[k];
                        }
                        for k in 0..c {
                            let d = gr[k] * gv.data[k];
                            dx.data[r * c + k] =
                                inv_std[r] / c as f64 * (c as f64 * d - sum_d - hr[k] * sum_dh);
                        }
                    }
                    acc(&mut grads, *gamma, dg);
                    acc(&mut grads, *beta, db);
                    acc(&mut grads, *x, dx);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut dx = Mat::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for k in 0..g.cols {
                            dx.data[r * g.cols + k] = y.get(r, k) * (g.get(r, k) - dot);
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut dx = Mat::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let gs: f64 = g.row(r).iter().sum();
                        for k in 0..g.cols {
                            dx.data[r * g.cols + k] = g.get(r, k) - y.get(r, k).exp() * gs;
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::SqDist(q, k) => {
                    let (qv, kv) = (self.value(*q), self.value(*k));
                    let d = qv.cols;
                    let mut dq = Mat::zeros(qv.rows, d);
                    let mut dk = Mat::zeros(kv.rows, d);
                    for j in 0..qv.rows {
                        for i in 0..kv.rows {
                            let gji = g.get(j, i);
                            if gji == 0.0 {
                                continue;
                            }
                            for e in 0..d {
                                let diff = 2.0 * gji * (qv.get(j, e) - kv.get(i, e));
                                dq.data[j * d + e] += diff;
                                dk.data[i * d + e] -= diff;
                            }
                        }
                    }
                    acc(&mut grads, *q, dq);
                    acc(&mut grads, *k, dk);
                }
                Op::GatherRows(a, idx) => {
                    let x = self.value(*a);
                    let mut dx = Mat::zeros(x.rows, x.cols);
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, v) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::ShiftConcat(a, k) => {
                    let x = self.value(*a);
                    let (n, c) = (x.rows, x.cols);
                    let half = (*k / 2) as isize;
                    let mut dx = Mat::zeros(n, c);
                    for t in 0..n {
                        for s in 0..*k {
                            let src = t as isize + s as isize - half;
                            if src >= 0 && (src as usize) < n {
                                let gs = &g.data[t * k * c + s * c..t * k * c + (s + 1) * c];
                                for (o, v) in dx.row_mut(src as usize).iter_mut().zip(gs) {
                                    *o += v;
                                }
                            }
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::SliceCols(a, start) => {
                    let x = self.value(*a);
                    let mut dx = Mat::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        dx.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut dp = Mat::zeros(g.rows, w);
                        for r in 0..g.rows {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        acc(&mut grads, p, dp);
                        off += w;
                    }
                }
                Op::MulConst(a, mask) => {
                    let d = g.data.iter().zip(&mask.data).map(|(a, b)| a * b).collect();
                    acc(&mut grads, *a, Mat::from_vec(g.rows, g.cols, d));
                }
                Op::Mse(a, target) => {
                    let x = self.value(*a);
                    let s = g.data[0] * 2.0 / x.data.len().max(1) as f64;
                    let d = x
                        .data
                        .iter()
                        .zip(&target.data)
                        .map(|(a, b)| s * (a - b))
                        .collect();
                    acc(&mut grads, *a, Mat::from_vec(x.rows, x.cols, d));
                }
                Op::ForwardSum(a, local) => {
                    let s = g.data[0];
                    acc(&mut grads, *a, local.map(|v| v * s));
                }
            }
        }
        param_grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Checks every op against central differences through a composite graph.
    #[test]
    fn ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = vec![
            rand_mat(&mut rng, 5, 4),
            rand_mat(&mut rng, 12, 4),
            rand_mat(&mut rng, 1, 4),
            rand_mat(&mut rng, 1, 4),
            rand_mat(&mut rng, 3, 4),
        ];
        let target = rand_mat(&mut rng, 7, 4);
        let mask = rand_mat(&mut rng, 5, 4);
        let build = |ps: &[Mat]| -> (Tape, Var) {
            let mut t = Tape::new();
            let p: Vec<Var> = ps
                .iter()
                .enumerate()
                .map(|(i, m)| t.param(i, m.clone()))
                .collect();
            let x = t.mul_const(p[0], mask.clone());
            let sc = t.shift_concat(x, 3);
            let h = t.matmul(sc, p[1]);
            let h = t.add_row(h, p[3]);
            let h = t.layer_norm(h, p[2], p[3]);
            let h = t.relu(h);
            let a = t.slice_cols(h, 0, 2);
            let b = t.slice_cols(h, 2, 2);
            let at = t.transpose(a);
            let s = t.matmul(b, at);
            let s = t.softmax_rows(s);
            let hb = t.matmul(s, b);
            let h2 = t.concat_cols(vec![hb, a]);
            let h2 = t.scale(h2, 0.7);
            let h = t.add(h, h2);
            let up = t.gather_rows(h, vec![0, 0, 1, 2, 2, 3, 4]);
            let m = t.mse(up, target.clone());
            let d = t.sq_dist(up, p[4]);
            let d = t.scale(d, -0.5);
            let lp = t.log_softmax_rows(d);
            let fs = t.forward_sum(lp).unwrap();
            let out = t.add(m, fs);
            (t, out)
        };
        let (t, out) = build(&params);
        let grads = t.backward(out, params.len());
        let h = 1e-6;
        for (pi, p) in params.iter().enumerate() {
            let g = grads[pi].as_ref().unwrap();
            for k in 0..p.data.len() {
                let mut plus = params.clone();
                plus[pi].data[k] += h;
                let mut minus = params.clone();
                minus[pi].data[k] -= h;
                let (tp, op) = build(&plus);
                let (tm, om) = build(&minus);
                let fd = (tp.value(op).data[0] - tm.value(om).data[0]) / (2.0 * h);
                let rel = (fd - g.data[k]).abs() / fd.abs().max(g.data[k].abs()).max(1e-7);
                assert!(
                    rel < 1e-5,
                    "param {pi}[{k}]: fd {fd} analytic {}",
                    g.data[k]
                );
            }
        }
    }
}
