//! Checks the corpus BLEU implementation against 20 frozen hyp/ref
//! corpora scored by an independent reference implementation before this
//! scorer was written.

use std::fs;
use std::path::PathBuf;

use lrmt::eval::{bleu, Smoothing};

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bleu")
}

fn read_lines(path: &PathBuf) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {path:?}: {e}"))
        .lines()
        .map(str::to_string)
        .collect()
}

struct Expected {
    id: usize,
    bleu: f64,
    precisions: [f64; 4],
    bp: f64,
    hyp_len: u64,
    ref_len: u64,
}

fn load_expected() -> Vec<Expected> {
    let text = fs::read_to_string(fixture_dir().join("expected.tsv")).unwrap();
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            Expected {
                id: f[0].parse().unwrap(),
                bleu: f[1].parse().unwrap(),
                precisions: [
                    f[2].parse().unwrap(),
                    f[3].parse().unwrap(),
                    f[4].parse().unwrap(),
                    f[5].parse().unwrap(),
                ],
                bp: f[6].parse().unwrap(),
                hyp_len: f[7].parse().unwrap(),
                ref_len: f[8].parse().unwrap(),
            }
        })
        .collect()
}

#[test]
fn matches_reference_scorer_on_frozen_corpora() {
    let expected = load_expected();
    assert_eq!(expected.len(), 20);
    for exp in expected {
        let hyps = read_lines(&fixture_dir().join(format!("corpus_{:02}.hyp", exp.id)));
        let refs = read_lines(&fixture_dir().join(format!("corpus_{:02}.ref", exp.id)));
        let report = bleu(&hyps, &refs, Smoothing::Exp).unwrap();
        assert!(
            (report.bleu - exp.bleu).abs() < 0.01,
            "corpus {:02}: got {} expected {}",
            exp.id,
            report.bleu,
            exp.bleu
        );
        for n in 0..4 {
            assert!(
                (report.precisions[n] - exp.precisions[n]).abs() < 1e-6,
                "corpus {:02} p{}: got {} expected {}",
                exp.id,
                n + 1,
                report.precisions[n],
                exp.precisions[n]
            );
        }
        assert!(
            (report.brevity_penalty - exp.bp).abs() < 1e-9,
            "corpus {:02}",
            exp.id
        );
        assert_eq!(report.hyp_len, exp.hyp_len, "corpus {:02}", exp.id);
        assert_eq!(report.ref_len, exp.ref_len, "corpus {:02}", exp.id);
    }
}
