use std::fs;
use std::path::PathBuf;

use proptest::prelude::*;
use tempgen::{AnyCheckpoint, Checkpoint, DType, Tensor, Trajectory};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn golden_f64_loads_with_expected_contents() {
    let c = Checkpoint::<f64>::load(fixture("golden_f64.tgck")).unwrap();
    assert_eq!(c.names().collect::<Vec<_>>(), ["layer.weight", "layer.bias", "scale"]);
    let w = c.get("layer.weight").unwrap();
    assert_eq!(w.shape(), [2, 3]);
    assert_eq!(w.data(), [0.5, -1.25, 3.0, 1e-300, -0.0, 6.02214076e23]);
    assert!(w.data()[4].is_sign_negative());
    assert_eq!(c.get("layer.bias").unwrap().data(), [0.1, 0.2, 0.3]);
    let s = c.get("scale").unwrap();
    assert!(s.shape().is_empty());
    assert_eq!(s.data(), [std::f64::consts::E]);
}

#[test]
fn golden_files_reserialize_byte_identically() {
    for name in ["golden_f64.tgck", "golden_f32.tgck"] {
        let bytes = fs::read(fixture(name)).unwrap();
        let again = match AnyCheckpoint::from_bytes(&bytes).unwrap() {
            AnyCheckpoint::F32(c) => c.to_bytes().unwrap(),
            AnyCheckpoint::F64(c) => c.to_bytes().unwrap(),
        };
        assert_eq!(again, bytes, "{name}");
    }
}

#[test]
fn golden_f32_widens_exactly() {
    let any = AnyCheckpoint::load(fixture("golden_f32.tgck")).unwrap();
    assert_eq!(any.dtype(), DType::F32);
    let wide = any.to_f64().unwrap();
    assert_eq!(wide.get("w").unwrap().data(), [1.0, -2.5, 0.15625, 1024.0]);
    assert!(Checkpoint::<f64>::load(fixture("golden_f32.tgck")).is_err());
}

#[test]
fn trajectory_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cks = (1..=4)
        .map(|t| Checkpoint::from_tensors(t * 10, [("w", Tensor::vector(vec![t as f32 * 0.1, -1.0]))]).unwrap())
        .collect();
    let traj = Trajectory::new(cks, 10).unwrap();
    let manifest = dir.path().join("trajectory.json");
    traj.save(&manifest).unwrap();
    assert_eq!(Trajectory::<f32>::load(&manifest).unwrap(), traj);
    let wide = Trajectory::load_widened(&manifest).unwrap();
    assert_eq!(wide.get(2).unwrap().timestamp(), 30);
    assert_eq!(wide.step(), 10);
}

fn finite_f64() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
}

fn finite_f32() -> impl Strategy<Value = f32> {
    prop::num::f32::NORMAL | prop::num::f32::SUBNORMAL | prop::num::f32::ZERO
}

fn shapes() -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::vec(0usize..4, 0..3), 1..4)
}

fn build<S: tempgen::Scalar>(shapes: &[Vec<usize>], values: &[S]) -> Checkpoint<S> {
    let mut c = Checkpoint::new(0);
    let mut it = values.iter().cycle();
    for (i, s) in shapes.iter().enumerate() {
        let n: usize = s.iter().product();
        let data = (0..n).map(|_| *it.next().unwrap()).collect();
        c.insert(format!("t{i}.ü"), Tensor::new(s.clone(), data).unwrap()).unwrap();
    }
    c
}

proptest! {
    #[test]
    fn f64_round_trip_is_bit_exact(shapes in shapes(), values in prop::collection::vec(finite_f64(), 1..20)) {
        let c = build(&shapes, &values);
        let back = Checkpoint::<f64>::from_bytes(&c.to_bytes().unwrap()).unwrap();
        let bits = |c: &Checkpoint<f64>| c.to_f64_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&c));
        prop_assert_eq!(back, c);
    }

    #[test]
    fn f32_round_trip_is_bit_exact(shapes in shapes(), values in prop::collection::vec(finite_f32(), 1..20)) {
        let c = build(&shapes, &values);
        let back = Checkpoint::<f32>::from_bytes(&c.to_bytes().unwrap()).unwrap();
        for ((_, a), (_, b)) in c.iter().zip(back.iter()) {
            let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(ab, bb);
        }
    }

    #[test]
    fn flatten_is_linear(shapes in shapes(), xs in prop::collection::vec(-1e3f64..1e3, 1..20), a in -3.0f64..3.0) {
        let x = build(&shapes, &xs);
        let y = x.map_f64(|v| 0.5 * v - 1.0).unwrap();
        let combo = x.to_f64_vec().iter().zip(y.to_f64_vec()).map(|(p, q)| a * p + q).collect::<Vec<_>>();
        let built = x.from_f64_like(&combo).unwrap();
        prop_assert_eq!(built.to_f64_vec(), combo);
        let view = x.flatten();
        prop_assert_eq!(view.unflatten(&x).unwrap(), x);
    }

    #[test]
    fn l2_norm_matches_naive_sum(values in prop::collection::vec(-1e6f64..1e6, 1..50)) {
        let c = Checkpoint::from_tensors(0, [("v", Tensor::vector(values.clone()))]).unwrap();
        let mut acc = 0.0;
        for v in &values {
            acc += v * v;
        }
        let oracle = acc.sqrt();
        prop_assert!((c.l2_norm() - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }
}
