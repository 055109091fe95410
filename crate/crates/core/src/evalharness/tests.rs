use std::collections::BTreeMap;
use std::f64::consts::PI;

use proptest::prelude::*;

use super::*;
use crate::corpus::{CorpusManifest, SplitTag, UtteranceRecord};
use crate::dsp::{write_wav, Waveform};
use crate::external::AdapterCommand;
use crate::par::Exec;

/// Exhaustive minimum edit distance, by plain recursion.
fn brute_distance(r: &[&str], h: &[&str]) -> usize {
    match (r.split_first(), h.split_first()) {
        (None, _) => h.len(),
        (_, None) => r.len(),
        (Some((a, rr)), Some((b, hh))) => {
            let sub = brute_distance(rr, hh) + usize::from(a != b);
            sub.min(brute_distance(rr, h) + 1)
                .min(brute_distance(r, hh) + 1)
        }
    }
}

fn word_seq() -> impl Strategy<Value = Vec<&'static str>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..7)
}

proptest! {
    #[test]
    fn edit_counts_match_exhaustive_search(r in word_seq(), h in word_seq()) {
        let c = edit_counts(&r, &h);
        prop_assert_eq!(c.total(), brute_distance(&r, &h));
        // Every reference word is matched, substituted or deleted; likewise
        // every hypothesis word is matched, substituted or inserted.
        prop_assert!(c.substitutions + c.deletions <= r.len());
        prop_assert_eq!(r.len() - c.substitutions - c.deletions, h.len() - c.substitutions - c.insertions);
    }
}

#[test]
fn wer_worked_examples() {
    let w = wer("a b c", "a c").unwrap();
    assert_eq!((w.substitutions, w.deletions, w.insertions), (0, 1, 0));
    assert!((w.wer - 100.0 / 3.0).abs() < 1e-9);
    assert_eq!(wer("the cat sat", "the cat sat").unwrap().wer, 0.0);
    let w = wer("the cat", "a dog ran").unwrap();
    assert_eq!(w.substitutions + w.insertions + w.deletions, 3);
    assert!((w.wer - 150.0).abs() < 1e-9);
    // Case and sentence punctuation do not count as errors.
    assert_eq!(wer("Hello, world.", "hello world").unwrap().wer, 0.0);
    assert!(wer("", "x").is_err());
}

#[test]
fn corpus_wer_pools_counts() {
    let pairs = vec![
        (
            "u1".to_string(),
            "a b c d".to_string(),
            "a b c d".to_string(),
        ),
        ("u2".to_string(), "a b".to_string(), "a x y".to_string()),
    ];
    let r = corpus_wer(&pairs).unwrap();
    assert_eq!(r.n_ref_words, 6);
    assert!((r.wer - 100.0 * 2.0 / 6.0).abs() < 1e-12);
    assert_eq!(r.per_utterance[1].wer, 100.0);
}

#[test]
fn mos_closed_form() {
    let r = aggregate_mos(&[3.0, 4.0, 5.0]).unwrap();
    assert_eq!(r.mean, 4.0);
    assert!((r.ci95 - 1.96 / 3f64.sqrt()).abs() < 1e-12);
    assert_eq!(aggregate_mos(&[4.0; 10]).unwrap().ci95, 0.0);
    assert!(aggregate_mos(&[3.0]).is_err());
    let r = MosReport {
        mean: 3.1,
        ci95: 0.12,
        n: 120,
        scores: vec![],
    };
    assert_eq!(r.display(), "3.10 ± 0.12");
}

#[test]
fn cosine_and_cross_similarity() {
    assert!((cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    assert!((cosine_similarity(&[1.0, 2.0], &[-2.0, -4.0]).unwrap() + 1.0).abs() < 1e-12);
    assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());

    let a = BTreeMap::from([
        ("s2".to_string(), vec![0.0, 1.0]),
        ("s1".to_string(), vec![1.0, 0.0]),
    ]);
    let b = BTreeMap::from([("t".to_string(), vec![3.0, 4.0])]);
    let m = cross_similarity(&a, &b).unwrap();
    assert_eq!(m.row_labels, ["s1", "s2"]);
    assert!((m.get("s1", "t").unwrap() - 0.6).abs() < 1e-12);
    assert!((m.get("s2", "t").unwrap() - 0.8).abs() < 1e-12);
    assert_eq!(m.range(), (m.values[0][0], m.values[1][0]));
    assert!((m.mean() - 0.7).abs() < 1e-12);
}

#[test]
fn projection_recovers_planar_layout() {
    // Points on a plane inside 4-D space, with more spread along x than y:
    // the projection must preserve pairwise distances.
    let planar = [
        [0.0, 0.0],
        [4.0, 0.0],
        [0.0, 1.0],
        [4.0, 1.0],
        [2.0, 0.5],
        [-3.0, 0.2],
    ];
    let (c, s) = (0.3f64.cos(), 0.3f64.sin());
    let pts: Vec<Vec<f64>> = planar
        .iter()
        .map(|&[x, y]| vec![c * x, s * x, y, 1.0])
        .collect();
    let proj = project_2d(&pts).unwrap();
    for i in 0..pts.len() {
        for j in 0..pts.len() {
            let d_orig = ((planar[i][0] - planar[j][0]).powi(2)
                + (planar[i][1] - planar[j][1]).powi(2))
            .sqrt();
            let d_proj =
                ((proj[i][0] - proj[j][0]).powi(2) + (proj[i][1] - proj[j][1]).powi(2)).sqrt();
            assert!((d_orig - d_proj).abs() < 1e-9);
        }
    }
    // First axis carries the larger variance.
    let var = |k: usize| proj.iter().map(|p| p[k] * p[k]).sum::<f64>();
    assert!(var(0) > var(1));
    let collinear: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
    assert!(project_2d(&collinear).is_err());
    assert!(project_2d(&pts[..2]).is_err());
}

fn tone(f0: f64, secs: f64) -> Waveform {
    let sr = 22050;
    let n = (secs * sr as f64) as usize;
    Waveform::clipped(
        (0..n).map(|i| {
            let t = i as f64 / sr as f64;
            (1..=5)
                .map(|k| 0.15 / k as f64 * (2.0 * PI * f0 * k as f64 * t).sin())
                .sum::<f64>()
        }),
        sr,
    )
}

#[test]
fn builtin_embedding_separates_pitch() {
    let low = builtin_embed(&tone(220.0, 1.0)).unwrap();
    let low2 = builtin_embed(&tone(225.0, 1.0)).unwrap();
    let high = builtin_embed(&tone(440.0, 1.0)).unwrap();
    assert_eq!(low.len(), BUILTIN_DIM);
    assert!((low.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    let near = cosine_similarity(&low, &low2).unwrap();
    let far = cosine_similarity(&low, &high).unwrap();
    assert!(near > far, "near {near} far {far}");
    // The median-F0 dimension is proportional to pitch before normalization.
    let unnorm = |v: &[f64]| v[16] / v[18];
    assert!((unnorm(&high) / unnorm(&low) - 2.0).abs() < 0.05);
    assert!(builtin_embed(&tone(220.0, 0.2)).is_err());
}

#[test]
fn builtin_mos_prefers_tones_over_noise() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let noise = Waveform::clipped((0..22050).map(|_| rng.gen_range(-0.3..0.3)), 22050);
    let t = builtin_mos(&tone(200.0, 1.0)).unwrap();
    let n = builtin_mos(&noise).unwrap();
    assert!((1.0..=5.0).contains(&t) && (1.0..=5.0).contains(&n));
    assert!(t > n, "tone {t} noise {n}");
}

fn manifest_of(dir: &std::path::Path, items: &[(&str, &str, f64)]) -> CorpusManifest {
    let recs = items
        .iter()
        .map(|&(id, spk, f0)| {
            let w = tone(f0, 0.8);
            write_wav(&dir.join(format!("{id}.wav")), &w).unwrap();
            UtteranceRecord {
                id: id.into(),
                audio_path: format!("{id}.wav").into(),
                transcript: format!("utterance {id}"),
                speaker_id: spk.into(),
                duration_s: w.duration_s(),
                sample_rate: 22050,
            }
        })
        .collect();
    CorpusManifest::new(recs, SplitTag::Test, dir).unwrap()
}

#[test]
fn builtin_adapters_cover_every_utterance() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest_of(
        dir.path(),
        &[("u1", "a", 200.0), ("u2", "a", 210.0), ("u3", "b", 400.0)],
    );
    let asr = run_asr_adapter(&m, &Evaluator::Builtin, Exec::Sequential)
        .unwrap()
        .require_all()
        .unwrap();
    assert_eq!(asr["u2"], "utterance u2");
    let mos = run_mos_adapter(&m, &Evaluator::Builtin, Exec::Sequential).unwrap();
    assert_eq!(mos.values.len(), 3);
    let emb = run_embedding_adapter(&m, &Evaluator::Builtin, Exec::Sequential)
        .unwrap()
        .require_all()
        .unwrap();
    assert!(emb.values().all(|v| v.len() == BUILTIN_DIM));
}

#[test]
fn external_adapter_failures_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest_of(dir.path(), &[("u1", "a", 200.0), ("u2", "a", 210.0)]);
    // Echo ASR for u1; u2 reports an error.
    let cmd = r#"sed 's/"wav":"[^"]*",//; s/"reference"/"hypothesis"/; s/{"id":"u2".*/{"id":"u2","error":"decoder crashed"}/' {dir}/batch.jsonl > {dir}/result.jsonl"#;
    let eval = Evaluator::External(AdapterCommand {
        command: cmd.into(),
        exchange_dir: dir.path().join("x"),
        timeout_s: 30.0,
    });
    let out = run_asr_adapter(&m, &eval, Exec::Sequential).unwrap();
    assert_eq!(out.values["u1"], "utterance u1");
    assert_eq!(out.failures["u2"], "decoder crashed");
    let err = out.require_all().unwrap_err().to_string();
    assert!(err.contains("u2") && err.contains("1 of 2"), "{err}");
}

#[test]
fn evaluator_config_round_trip() {
    let e: Evaluator = serde_json::from_str(
        r#"{"kind":"external","command":"run {dir}","exchange_dir":"/tmp/x","timeout_s":5}"#,
    )
    .unwrap();
    assert!(matches!(&e, Evaluator::External(c) if c.timeout_s == 5.0));
    let back: Evaluator = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
    assert_eq!(back, e);
    assert_eq!(
        serde_json::from_str::<Evaluator>(r#"{"kind":"builtin"}"#).unwrap(),
        Evaluator::Builtin
    );
}

#[test]
fn sampling_is_seeded_and_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let recs: Vec<UtteranceRecord> = (0..20)
        .map(|i| UtteranceRecord {
            id: format!("u{i:02}"),
            audio_path: "x.wav".into(),
            transcript: "a".into(),
            speaker_id: "s".into(),
            duration_s: 1.0,
            sample_rate: 22050,
        })
        .collect();
    let m = CorpusManifest::new(recs, SplitTag::Test, dir.path()).unwrap();
    let a = sample_utterances(&m, 5, 9);
    assert_eq!(a, sample_utterances(&m, 5, 9));
    assert_ne!(a, sample_utterances(&m, 5, 10));
    assert_eq!(a.len(), 5);
    assert!(a.records.windows(2).all(|p| p[0].id < p[1].id));
    assert_eq!(sample_utterances(&m, 50, 9).len(), 20);
}

#[test]
fn similarity_report_and_rendering() {
    let set = |spk: &str, f: &[f64]| EmbeddingSet {
        speaker: spk.into(),
        encoder_tag: BUILTIN_TAG.into(),
        vectors: f
            .iter()
            .map(|&f0| builtin_embed(&tone(f0, 0.6)).unwrap())
            .collect(),
    };
    let a = BTreeMap::from([
        ("c1".to_string(), set("c1", &[300.0, 310.0])),
        ("c2".to_string(), set("c2", &[420.0, 430.0])),
    ]);
    let b = BTreeMap::from([
        ("c1".to_string(), set("c1", &[305.0])),
        ("c2".to_string(), set("c2", &[425.0])),
    ]);
    let sim = speaker_similarity(&a, &b, &BTreeMap::new()).unwrap();
    assert_eq!(sim.projection.len(), 6);
    assert!(sim.matrix.get("c1", "c1").unwrap() > sim.matrix.get("c1", "c2").unwrap());
    assert!(sim.min <= sim.mean && sim.mean <= sim.max);

    let dir = tempfile::tempdir().unwrap();
    let inputs = ReportInputs {
        mos: vec![("synthetic".into(), aggregate_mos(&[3.0, 3.5, 4.0]).unwrap())],
        wer: vec![("synthetic".into(), wer("a b c", "a c").unwrap())],
        similarity: Some(sim),
        seed: 4,
        sample_size: 120,
    };
    let paths = render_report(dir.path(), &inputs).unwrap();
    assert_eq!(paths.len(), REPORT_FILES.len());
    let mos_csv = std::fs::read_to_string(dir.path().join("mos.csv")).unwrap();
    assert!(mos_csv.contains("synthetic,3.5,"));
    assert!(mos_csv.contains("3.10 ± 0.12,reference"));
    let sim_csv = std::fs::read_to_string(dir.path().join("similarity.csv")).unwrap();
    assert_eq!(sim_csv.lines().count(), 5);
    let summary = std::fs::read_to_string(dir.path().join("summary.md")).unwrap();
    assert!(summary.contains("33.33") && summary.contains("17.61") && summary.contains("77%"));
}
