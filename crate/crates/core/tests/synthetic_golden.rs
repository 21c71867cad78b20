use std::path::PathBuf;

use tempgen::synthetic::{Split, SyntheticTask};

/// The shipped CSV pins the generator stream (ChaCha8 + SplitMix64 labels +
/// Box-Muller) so other implementations can check theirs against it.
#[test]
fn generator_matches_golden_dataset() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic_d2_seed7_t3_train.csv");
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x0,x1,y"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();

    let task = SyntheticTask::with_default_coeffs(2, 7);
    assert_eq!(task.noise_sigma, 0.1);
    let data = task.generate_n(3, Split::Train, rows.len());
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(data.row(i), &r[..2], "row {i}");
        assert_eq!(data.y[i], r[2], "row {i}");
    }
}
