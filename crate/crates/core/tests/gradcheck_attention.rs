//! Finite-difference verification of every attention variant, end to end
//! through rotation, Z-pool, gate convolution, batch norm (eval mode),
//! sigmoid gates, and SE bottlenecks, in f64.

use tripse_core::{finite_diff_check_many, AttentionBlock, AttentionKind, Tensor};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn check_kind(kind: AttentionKind, seed: u64) {
    let x: Tensor<f64> = Tensor::randn(&[1, 4, 5, 5], 0.0, 1.0, seed)
        .unwrap()
        .trainable();
    let blk: AttentionBlock<f64> = AttentionBlock::new(kind, (4, 5, 5), 2, 3, seed + 1).unwrap();
    let proj = Tensor::randn(&[1, 4, 5, 5], 0.0, 1.0, seed + 2).unwrap();

    let mut params = vec![("input".to_string(), x.clone())];
    blk.params("blk", &mut params);
    assert!(!params.is_empty());

    let f = || blk.forward(&x, false)?.mul(&proj)?.sum_all();
    for (name, err) in finite_diff_check_many(f, &params, EPS).unwrap() {
        assert!(err < TOL, "{kind:?} {name} rel err {err}");
    }
}

#[test]
fn se_gradients() {
    check_kind(AttentionKind::Se, 10);
}

#[test]
fn ta_gradients() {
    check_kind(AttentionKind::Ta, 20);
}

#[test]
fn tripse1_gradients() {
    check_kind(AttentionKind::TripSe1, 30);
}

#[test]
fn tripse2_gradients() {
    check_kind(AttentionKind::TripSe2, 40);
}

#[test]
fn tripse3_gradients() {
    check_kind(AttentionKind::TripSe3, 50);
}

#[test]
fn tripse4_gradients() {
    check_kind(AttentionKind::TripSe4, 60);
}
