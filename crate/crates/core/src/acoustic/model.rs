use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Mat, Tape, Var};
use super::{
    AcousticModelState, ForwardOpts, LossBreakdown, PitchTarget, TrainBatchOutput, KERNEL,
    SPEAKER_TABLE,
};
use crate::aligner::{path_to_durations, viterbi_log, AlignmentPosterior, DurationTargets};
use crate::corpus::TokenSequence;
use crate::dsp::{average_pitch_per_token, MelSpectrogram};
use crate::{Error, Result};

pub(crate) fn frame_to_token(d: &DurationTargets) -> Vec<usize> {
    d.durations
        .iter()
        .enumerate()
        .flat_map(|(t, &n)| std::iter::repeat_n(t, n as usize))
        .collect()
}

fn positional_encoding(n: usize, d: usize) -> Mat {
    let mut m = Mat::zeros(n, d);
    for pos in 0..n {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 / rate;
            m.data[pos * d + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    m
}

struct Net<'a> {
    tape: Tape,
    st: &'a AcousticModelState,
    handles: Vec<Option<Var>>,
    dropout: Option<(ChaCha8Rng, f64)>,
}

impl<'a> Net<'a> {
    fn new(st: &'a AcousticModelState, dropout_seed: Option<u64>) -> Self {
        let p = st.cfg.dropout;
        Self {
            tape: Tape::new(),
            st,
            handles: vec![None; st.params.len()],
            dropout: dropout_seed
                .filter(|_| p > 0.0)
                .map(|s| (ChaCha8Rng::seed_from_u64(s), p)),
        }
    }

    fn p(&mut self, name: &str) -> Var {
        let i = self
            .st
            .params
            .index_of(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        if let Some(v) = self.handles[i] {
            return v;
        }
        let v = self.tape.param(i, self.st.params.tensors()[i].clone());
        self.handles[i] = Some(v);
        v
    }

    fn linear(&mut self, x: Var, name: &str) -> Var {
        let w = self.p(&format!("{name}.w"));
        let b = self.p(&format!("{name}.b"));
        let y = self.tape.matmul(x, w);
        self.tape.add_row(y, b)
    }

    fn conv(&mut self, x: Var, name: &str) -> Var {
        let s = self.tape.shift_concat(x, KERNEL);
        self.linear(s, name)
    }

    fn norm(&mut self, x: Var, name: &str) -> Var {
        let g = self.p(&format!("{name}.g"));
        let b = self.p(&format!("{name}.b"));
        self.tape.layer_norm(x, g, b)
    }

    fn drop(&mut self, x: Var) -> Var {
        let Some((rng, p)) = self.dropout.as_mut() else {
            return x;
        };
        let (p, v) = (*p, self.tape.value(x));
        let keep = 1.0 / (1.0 - p);
        let mask = Mat::from_vec(
            v.rows,
            v.cols,
            (0..v.data.len())
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                .collect(),
        );
        self.tape.mul_const(x, mask)
    }

    fn block(&mut self, x: Var, p: &str) -> Var {
        let (d, h) = (self.st.cfg.d_model, self.st.cfg.n_heads);
        let dh = d / h;
        let q = self.linear(x, &format!("{p}.attn.q"));
        let k = self.linear(x, &format!("{p}.attn.k"));
        let v = self.linear(x, &format!("{p}.attn.v"));
        let mut heads = Vec::with_capacity(h);
        for i in 0..h {
            let qh = self.tape.slice_cols(q, i * dh, dh);
            let kh = self.tape.slice_cols(k, i * dh, dh);
            let vh = self.tape.slice_cols(v, i * dh, dh);
            let kt = self.tape.transpose(kh);
            let s = self.tape.matmul(qh, kt);
            let s = self.tape.scale(s, 1.0 / (dh as f64).sqrt());
            let a = self.tape.softmax_rows(s);
            heads.push(self.tape.matmul(a, vh));
        }
        let o = if h == 1 {
            heads[0]
        } else {
            self.tape.concat_cols(heads)
        };
        let o = self.linear(o, &format!("{p}.attn.o"));
        let o = self.drop(o);
        let x = self.tape.add(x, o);
        let x = self.norm(x, &format!("{p}.ln1"));
        let f = self.conv(x, &format!("{p}.ff1"));
        let f = self.tape.relu(f);
        let f = self.conv(f, &format!("{p}.ff2"));
        let f = self.drop(f);
        let x2 = self.tape.add(x, f);
        self.norm(x2, &format!("{p}.ln2"))
    }

    fn predictor(&mut self, x: Var, p: &str) -> Var {
        let mut h = x;
        for layer in 1..=2 {
            h = self.conv(h, &format!("{p}.conv{layer}"));
            h = self.tape.relu(h);
            h = self.norm(h, &format!("{p}.ln{layer}"));
            h = self.drop(h);
        }
        self.linear(h, &format!("{p}.proj"))
    }

    /// Token embeddings (without speaker or position) and encoder output.
    fn encode(&mut self, tokens: &TokenSequence, speaker: &str) -> Result<(Var, Var)> {
        let cfg = &self.st.cfg;
        let n = tokens.token_ids.len();
        if n == 0 {
            return Err(Error::Shape("empty token sequence".into()));
        }
        if let Some(&bad) = tokens
            .token_ids
            .iter()
            .find(|&&t| t as usize >= cfg.vocab_size)
        {
            return Err(Error::Shape(format!(
                "token id {bad} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        let row = self.st.speakers.row_of(speaker)?;
        let d = cfg.d_model;
        let n_enc = cfg.n_enc_layers;
        let emb = self.p("tok_emb");
        let tok = self
            .tape
            .gather_rows(emb, tokens.token_ids.iter().map(|&t| t as usize).collect());
        let table = self.p(SPEAKER_TABLE);
        let spk = self.tape.gather_rows(table, vec![row; n]);
        let x = self.tape.add(tok, spk);
        let pe = self.tape.constant(positional_encoding(n, d));
        let mut h = self.tape.add(x, pe);
        h = self.drop(h);
        for l in 0..n_enc {
            h = self.block(h, &format!("enc.{l}"));
        }
        Ok((tok, h))
    }

    /// Adds the pitch embedding, regulates length and decodes to mel.
    fn decode(&mut self, h: Var, pitch_norm: &[f64], durations: &DurationTargets) -> Var {
        let n = pitch_norm.len();
        let pc = self.tape.constant(Mat::from_vec(n, 1, pitch_norm.to_vec()));
        let pe = self.conv(pc, "pitch_emb");
        let h = self.tape.add(h, pe);
        let idx = frame_to_token(durations);
        let t = idx.len();
        let reg = self.tape.gather_rows(h, idx);
        let pos = self
            .tape
            .constant(positional_encoding(t, self.st.cfg.d_model));
        let mut y = self.tape.add(reg, pos);
        for l in 0..self.st.cfg.n_dec_layers {
            y = self.block(y, &format!("dec.{l}"));
        }
        self.linear(y, "mel_proj")
    }
}

fn column(tape: &Tape, v: Var) -> Vec<f64> {
    tape.value(v).data.clone()
}

fn normalize_pitch(st: &AcousticModelState, hz: &[f64]) -> Vec<f64> {
    hz.iter()
        .map(|&f| {
            if f > 0.0 {
                (f - st.cfg.pitch_mean_hz) / st.cfg.pitch_std_hz
            } else {
                0.0
            }
        })
        .collect()
}

fn mel_target(st: &AcousticModelState, m: &MelSpectrogram) -> Result<Mat> {
    if m.n_mels != st.cfg.n_mels {
        return Err(Error::Shape(format!(
            "target has {} mel bands, model {}",
            m.n_mels, st.cfg.n_mels
        )));
    }
    Ok(Mat::from_vec(m.n_frames, m.n_mels, m.values.clone()))
}

fn run_train(
    st: &AcousticModelState,
    tokens: &TokenSequence,
    speaker: &str,
    target: &MelSpectrogram,
    pitch: &PitchTarget,
    opts: &ForwardOpts,
) -> Result<(Tape, Var, TrainBatchOutput)> {
    let target = mel_target(st, target)?;
    let (n, t) = (tokens.token_ids.len(), target.rows);
    if t < n {
        return Err(Error::NoAlignment {
            n_tokens: n,
            n_frames: t,
        });
    }
    let mut net = Net::new(st, opts.dropout_seed);
    let (tok, h) = net.encode(tokens, speaker)?;
    let d = st.cfg.d_model;

    // Aligner: distance attention between token and mel encodings.
    let k = net.conv(tok, "align.key_conv");
    let k = net.tape.relu(k);
    let k = net.linear(k, "align.key_proj");
    let mel_in = net.tape.constant(target.clone());
    let q = net.conv(mel_in, "align.query_conv");
    let q = net.tape.relu(q);
    let q = net.linear(q, "align.query_proj");
    let dist = net.tape.sq_dist(q, k);
    let logits = net.tape.scale(dist, -1.0 / (d as f64).sqrt());
    let logp = net.tape.log_softmax_rows(logits);
    let fs = net.tape.forward_sum(logp)?;
    let align = net.tape.scale(fs, 1.0 / t as f64);

    let logp_tm = net.tape.value(logp).transpose();
    let durations = match &opts.fixed_durations {
        Some(fd) => {
            if fd.durations.len() != n || fd.total_frames() != t || fd.durations.contains(&0) {
                return Err(Error::Shape(format!(
                    "fixed durations ({} tokens, {} frames) do not match {n} tokens, {t} frames",
                    fd.durations.len(),
                    fd.total_frames()
                )));
            }
            fd.clone()
        }
        None => path_to_durations(&viterbi_log(&logp_tm.data, n, t)?),
    };
    let alignment = AlignmentPosterior::new(n, t, logp_tm.data.iter().map(|x| x.exp()).collect())?;

    let pitch_hz = match pitch {
        PitchTarget::PerToken(v) => {
            if v.len() != n {
                return Err(Error::Shape(format!(
                    "{} pitch values for {n} tokens",
                    v.len()
                )));
            }
            v.clone()
        }
        PitchTarget::PerFrame(c) => {
            if c.n_frames() != t {
                return Err(Error::Shape(format!(
                    "pitch contour has {} frames, mel {t}",
                    c.n_frames()
                )));
            }
            average_pitch_per_token(c, &durations)?
        }
    };
    let pitch_norm = normalize_pitch(st, &pitch_hz);

    let log_dur = net.predictor(h, "dur");
    let dur_target = Mat::from_vec(
        n,
        1,
        durations
            .durations
            .iter()
            .map(|&x| (1.0 + x as f64).ln())
            .collect(),
    );
    let dur_loss = net.tape.mse(log_dur, dur_target);
    let pred_pitch = net.predictor(h, "pitch");
    let pitch_loss = net
        .tape
        .mse(pred_pitch, Mat::from_vec(n, 1, pitch_norm.clone()));

    let mel = net.decode(h, &pitch_norm, &durations);
    let mel_loss = net.tape.mse(mel, target);

    let w = st.cfg.loss_weights;
    let parts = [
        (mel_loss, w.mel),
        (dur_loss, w.duration),
        (pitch_loss, w.pitch),
        (align, w.align),
    ];
    let mut total = net.tape.scale(parts[0].0, parts[0].1);
    for &(v, wt) in &parts[1..] {
        let s = net.tape.scale(v, wt);
        total = net.tape.add(total, s);
    }
    let scalar = |v: Var| net.tape.value(v).data[0];
    let losses = LossBreakdown {
        mel_mse: scalar(mel_loss),
        duration: scalar(dur_loss),
        pitch: scalar(pitch_loss),
        align: scalar(align),
        total: scalar(total),
    };
    if !losses.total.is_finite() {
        return Err(Error::NonFiniteLoss { step: 0 });
    }
    let out = TrainBatchOutput {
        pred_mel: net.tape.value(mel).clone(),
        pred_log_durations: column(&net.tape, log_dur),
        pred_pitch: column(&net.tape, pred_pitch),
        alignment,
        durations,
        losses,
    };
    Ok((net.tape, total, out))
}

/// Teacher-forced forward pass with all four losses.
pub fn forward_train(
    st: &AcousticModelState,
    tokens: &TokenSequence,
    speaker: &str,
    target: &MelSpectrogram,
    pitch: &PitchTarget,
    opts: &ForwardOpts,
) -> Result<TrainBatchOutput> {
    run_train(st, tokens, speaker, target, pitch, opts).map(|(_, _, o)| o)
}

/// Forward pass plus gradients of the weighted total loss, one entry per
/// parameter in [`super::ParamSet`] order (zeros for untouched parameters).
pub fn forward_backward(
    st: &AcousticModelState,
    tokens: &TokenSequence,
    speaker: &str,
    target: &MelSpectrogram,
    pitch: &PitchTarget,
    opts: &ForwardOpts,
) -> Result<(TrainBatchOutput, Vec<Mat>)> {
    let (tape, total, out) = run_train(st, tokens, speaker, target, pitch, opts)?;
    let grads = tape
        .backward(total, st.params.len())
        .into_iter()
        .zip(st.params.tensors())
        .map(|(g, p)| g.unwrap_or_else(|| Mat::zeros(p.rows, p.cols)))
        .collect();
    Ok((out, grads))
}

#[derive(Debug, Clone)]
pub struct InferOutput {
    pub mel: MelSpectrogram,
    pub durations: DurationTargets,
    /// Pitch in Hz per token, after the shift.
    pub pitch_hz: Vec<f64>,
}

/// Mel spectrogram for `tokens` in `speaker`'s voice. Durations are
/// `max(1, round((exp(l) - 1) / pace))` for predicted log durations `l`;
/// `pitch_shift_hz` is added to every predicted token pitch.
pub fn forward_infer(
    st: &AcousticModelState,
    tokens: &TokenSequence,
    speaker: &str,
    pace: f64,
    pitch_shift_hz: f64,
) -> Result<MelSpectrogram> {
    forward_infer_detailed(st, tokens, speaker, pace, pitch_shift_hz).map(|o| o.mel)
}

pub fn forward_infer_detailed(
    st: &AcousticModelState,
    tokens: &TokenSequence,
    speaker: &str,
    pace: f64,
    pitch_shift_hz: f64,
) -> Result<InferOutput> {
    if !(pace > 0.0) || !pace.is_finite() {
        return Err(Error::Config(format!("pace must be positive, got {pace}")));
    }
    let mut net = Net::new(st, None);
    let (_, h) = net.encode(tokens, speaker)?;
    let log_dur = net.predictor(h, "dur");
    let pred_pitch = net.predictor(h, "pitch");
    let durations = DurationTargets {
        durations: column(&net.tape, log_dur)
            .iter()
            .map(|&l| ((l.exp() - 1.0) / pace).round().max(1.0) as u32)
            .collect(),
    };
    let shift = pitch_shift_hz / st.cfg.pitch_std_hz;
    let pitch_norm: Vec<f64> = column(&net.tape, pred_pitch)
        .iter()
        .map(|p| p + shift)
        .collect();
    let mel = net.decode(h, &pitch_norm, &durations);
    let m = net.tape.value(mel);
    let mel = MelSpectrogram::new(m.data.clone(), m.rows, st.mel_cfg)?;
    let pitch_hz = pitch_norm
        .iter()
        .map(|p| p * st.cfg.pitch_std_hz + st.cfg.pitch_mean_hz)
        .collect();
    Ok(InferOutput {
        mel,
        durations,
        pitch_hz,
    })
}
