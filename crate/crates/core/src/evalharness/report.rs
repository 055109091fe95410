use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::embed::SimilarityMatrix;
use super::mos::MosReport;
use super::wer::WerReport;
use crate::{fsutil, Result};

/// Published MOS rows (mean, 95% interval) shown next to measured values.
pub const REFERENCE_MOS: [(&str, f64, f64); 4] = [
    ("Adult speech (Librispeech test_clean)", 3.78, 0.07),
    ("Original child speech (MyST)", 2.91, 0.07),
    ("Tacotron 2 based synthetic child speech", 2.60, 0.06),
    ("FastPitch based synthetic child speech", 3.10, 0.12),
];

/// Published WER rows, percent.
pub const REFERENCE_WER: [(&str, f64); 4] = [
    ("Adult speech (Librispeech test_clean)", 3.43),
    ("Original child speech (MyST)", 15.27),
    ("Tacotron 2 based synthetic child speech", 25.63),
    ("FastPitch based synthetic child speech", 17.61),
];

/// Published cosine-similarity ranges: child vs adult pairs, synthetic vs
/// real child pairs, and the synthetic-vs-real average.
pub const REFERENCE_SIM_MIXED: (f64, f64) = (0.34, 0.53);
pub const REFERENCE_SIM_SYNTH_REAL: (f64, f64) = (0.63, 0.98);
pub const REFERENCE_SIM_MEAN: f64 = 0.77;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub set: String,
    pub speaker: String,
    pub utterance: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSimReport {
    pub matrix: SimilarityMatrix,
    pub projection: Vec<ProjectedPoint>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub mos: Vec<(String, MosReport)>,
    pub wer: Vec<(String, WerReport)>,
    pub similarity: Option<SpeakerSimReport>,
    pub seed: u64,
    pub sample_size: usize,
}

pub const REPORT_FILES: [&str; 5] = [
    "mos.csv",
    "wer.csv",
    "similarity.csv",
    "projection.csv",
    "summary.md",
];

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Write the five report files into `dir` and return their paths.
pub fn render_report(dir: &Path, r: &ReportInputs) -> Result<Vec<PathBuf>> {
    let mut mos = String::from("system,mean,ci95,n,display,source\n");
    for (name, m) in &r.mos {
        writeln!(
            mos,
            "{},{},{},{},{},measured",
            csv_field(name),
            m.mean,
            m.ci95,
            m.n,
            m.display()
        )
        .unwrap();
    }
    for (name, mean, ci) in REFERENCE_MOS {
        writeln!(
            mos,
            "{},{mean},{ci},120,{mean:.2} ± {ci:.2},reference",
            csv_field(name)
        )
        .unwrap();
    }

    let mut wer =
        String::from("system,wer,substitutions,insertions,deletions,n_ref_words,source\n");
    for (name, w) in &r.wer {
        writeln!(
            wer,
            "{},{},{},{},{},{},measured",
            csv_field(name),
            w.wer,
            w.substitutions,
            w.insertions,
            w.deletions,
            w.n_ref_words
        )
        .unwrap();
    }
    for (name, v) in REFERENCE_WER {
        writeln!(wer, "{},{v},,,,,reference", csv_field(name)).unwrap();
    }

    let mut sim = String::from("set_a_speaker,set_b_speaker,cosine\n");
    let mut proj = String::from("set,speaker,utterance,x,y\n");
    if let Some(s) = &r.similarity {
        for (i, a) in s.matrix.row_labels.iter().enumerate() {
            for (j, b) in s.matrix.col_labels.iter().enumerate() {
                writeln!(
                    sim,
                    "{},{},{}",
                    csv_field(a),
                    csv_field(b),
                    s.matrix.values[i][j]
                )
                .unwrap();
            }
        }
        for p in &s.projection {
            writeln!(
                proj,
                "{},{},{},{},{}",
                csv_field(&p.set),
                csv_field(&p.speaker),
                csv_field(&p.utterance),
                p.x,
                p.y
            )
            .unwrap();
        }
    }

    let mut md = String::from("# Evaluation summary\n\n");
    writeln!(
        md,
        "Utterances per system: up to {}, sampled with seed {}.\n",
        r.sample_size, r.seed
    )
    .unwrap();
    md.push_str("## Naturalness (MOS, 95% confidence interval)\n\n| System | MOS | Source |\n|---|---|---|\n");
    for (name, m) in &r.mos {
        writeln!(md, "| {name} | {} | measured |", m.display()).unwrap();
    }
    for (name, mean, ci) in REFERENCE_MOS {
        writeln!(md, "| {name} | {mean:.2} ± {ci:.2} | published reference |").unwrap();
    }
    md.push_str("\n## Intelligibility (WER %)\n\n| System | WER | Source |\n|---|---|---|\n");
    for (name, w) in &r.wer {
        writeln!(md, "| {name} | {:.2} | measured |", w.wer).unwrap();
    }
    for (name, v) in REFERENCE_WER {
        writeln!(md, "| {name} | {v:.2} | published reference |").unwrap();
    }
    md.push_str("\n## Speaker similarity\n\n");
    match &r.similarity {
        Some(s) => {
            writeln!(
                md,
                "Cross-similarity over {} x {} speakers: min {:.3}, max {:.3}, mean {:.3}. \
                 Matrix in `similarity.csv`, projection in `projection.csv`.\n",
                s.matrix.row_labels.len(),
                s.matrix.col_labels.len(),
                s.min,
                s.max,
                s.mean
            )
            .unwrap();
        }
        None => md.push_str("Not computed.\n\n"),
    }
    writeln!(
        md,
        "Published reference: child vs adult pairs {:.2}-{:.2}; synthetic vs real child pairs {:.2}-{:.2}; \
         average synthetic vs real similarity {:.0}%.",
        REFERENCE_SIM_MIXED.0,
        REFERENCE_SIM_MIXED.1,
        REFERENCE_SIM_SYNTH_REAL.0,
        REFERENCE_SIM_SYNTH_REAL.1,
        REFERENCE_SIM_MEAN * 100.0
    )
    .unwrap();
    md.push_str(
        "\nReference rows are the published values for the full-scale system and are shown for comparison only; \
         they are not reproduced by this run.\n",
    );

    let mut paths = Vec::new();
    for (name, body) in REPORT_FILES.iter().zip([mos, wer, sim, proj, md]) {
        let p = dir.join(name);
        fsutil::write_atomic(&p, body.as_bytes())?;
        paths.push(p);
    }
    Ok(paths)
}
