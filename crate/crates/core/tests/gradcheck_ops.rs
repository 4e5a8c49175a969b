//! Central finite differences versus reverse-mode gradients for every
//! primitive, evaluated in f64 so the 1e-4 relative tolerance is meaningful.

use tripse_core::{
    finite_diff_check, finite_diff_check_many, BatchNorm2d, Conv2d, Linear, ReduceMode, Tensor,
};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Fixed random projection makes the scalar objective sensitive to every
/// output coordinate, so misrouted gradients cannot cancel.
fn project(t: &Tensor<f64>, seed: u64) -> Tensor<f64> {
    Tensor::randn(t.shape().dims(), 0.0, 1.0, seed).unwrap()
}

#[test]
fn linear_map_is_exact_to_rounding() {
    let x: Tensor<f64> = Tensor::randn(&[3, 4], 0.0, 1.0, 1).unwrap().trainable();
    let err = finite_diff_check(|| x.sum_all(), &x, EPS).unwrap();
    assert!(err < 1e-9, "sum objective err {err}");
}

#[test]
fn sigmoid_sum_is_tight_in_f64() {
    let x: Tensor<f64> = Tensor::randn(&[4, 5], 0.0, 2.0, 2).unwrap().trainable();
    let err = finite_diff_check(|| x.sigmoid().unwrap().sum_all(), &x, EPS).unwrap();
    assert!(err < 1e-6, "sigmoid err {err}");
}

#[test]
fn relu_away_from_kink() {
    let x: Tensor<f64> = Tensor::randn(&[4, 5], 0.0, 2.0, 3).unwrap().trainable();
    let err = finite_diff_check(|| x.relu().unwrap().sum_all(), &x, EPS).unwrap();
    assert!(err < TOL, "relu err {err}");
}

#[test]
fn conv2d_all_parameters() {
    let x: Tensor<f64> = Tensor::randn(&[2, 3, 6, 6], 0.0, 1.0, 4).unwrap().trainable();
    let conv: Conv2d<f64> = Conv2d::seeded(3, 4, 3, 1, 1, true, 5).unwrap();
    let proj = project(&conv.forward(&x).unwrap(), 1000);
    let f = || conv.forward(&x)?.mul(&proj)?.sum_all();

    let params = vec![
        ("x".to_string(), x.clone()),
        ("weight".to_string(), conv.weight.clone()),
        ("bias".to_string(), conv.bias.clone().unwrap()),
    ];
    for (name, err) in finite_diff_check_many(f, &params, EPS).unwrap() {
        assert!(err < TOL, "conv {name} err {err}");
    }
}

#[test]
fn conv2d_strided() {
    let x: Tensor<f64> = Tensor::randn(&[1, 2, 7, 7], 0.0, 1.0, 6).unwrap().trainable();
    let conv: Conv2d<f64> = Conv2d::seeded(2, 3, 3, 2, 1, false, 7).unwrap();
    let proj = project(&conv.forward(&x).unwrap(), 1001);
    let f = || conv.forward(&x)?.mul(&proj)?.sum_all();
    let params = vec![
        ("x".to_string(), x.clone()),
        ("weight".to_string(), conv.weight.clone()),
    ];
    for (name, err) in finite_diff_check_many(f, &params, EPS).unwrap() {
        assert!(err < TOL, "strided conv {name} err {err}");
    }
}

#[test]
fn linear_all_parameters() {
    let x: Tensor<f64> = Tensor::randn(&[3, 5], 0.0, 1.0, 8).unwrap().trainable();
    let lin: Linear<f64> = Linear::seeded(5, 4, 9).unwrap();
    let proj = project(&lin.forward(&x).unwrap(), 1002);
    let f = || lin.forward(&x)?.mul(&proj)?.sum_all();
    let params = vec![
        ("x".to_string(), x.clone()),
        ("weight".to_string(), lin.weight.clone()),
        ("bias".to_string(), lin.bias.clone()),
    ];
    for (name, err) in finite_diff_check_many(f, &params, EPS).unwrap() {
        assert!(err < TOL, "linear {name} err {err}");
    }
}

#[test]
fn batchnorm_training_mode() {
    let x: Tensor<f64> = Tensor::randn(&[2, 3, 4, 4], 0.0, 1.5, 10).unwrap().trainable();
    let bn: BatchNorm2d<f64> = BatchNorm2d::new(3).unwrap();
    bn.gamma.with_data_mut(|g| {
        g.iter_mut().enumerate().for_each(|(i, v)| *v = 0.5 + 0.3 * i as f64)
    });
    bn.beta.with_data_mut(|b| {
        b.iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f64)
    });
    let proj = project(&x, 1003);
    let f = || bn.forward(&x, true)?.mul(&proj)?.sum_all();
    let params = vec![
        ("x".to_string(), x.clone()),
        ("gamma".to_string(), bn.gamma.clone()),
        ("beta".to_string(), bn.beta.clone()),
    ];
    for (name, err) in finite_diff_check_many(f, &params, EPS).unwrap() {
        assert!(err < TOL, "bn train {name} err {err}");
    }
}

#[test]
fn batchnorm_eval_mode() {
    let x: Tensor<f64> = Tensor::randn(&[2, 3, 4, 4], 0.0, 1.0, 11).unwrap().trainable();
    let bn: BatchNorm2d<f64> = BatchNorm2d::new(3).unwrap();
    bn.running_mean.with_data_mut(|m| m.iter_mut().enumerate().for_each(|(i, v)| *v = 0.2 * i as f64));
    bn.running_var.with_data_mut(|m| m.iter_mut().enumerate().for_each(|(i, v)| *v = 1.0 + 0.5 * i as f64));
    let proj = project(&x, 1004);
    let f = || bn.forward(&x, false)?.mul(&proj)?.sum_all();
    let params = vec![
        ("x".to_string(), x.clone()),
        ("gamma".to_string(), bn.gamma.clone()),
        ("beta".to_string(), bn.beta.clone()),
    ];
    for (name, err) in finite_diff_check_many(f, &params, EPS).unwrap() {
        assert!(err < TOL, "bn eval {name} err {err}");
    }
}

#[test]
fn movement_ops_route_gradients_correctly() {
    let x: Tensor<f64> = Tensor::randn(&[2, 3, 4, 5], 0.0, 1.0, 12).unwrap().trainable();
    let proj = Tensor::randn(&[5, 2, 4, 3], 0.0, 1.0, 1005).unwrap();
    let f = || x.permute(&[3, 0, 2, 1])?.mul(&proj)?.sum_all();
    let err = finite_diff_check(f, &x, EPS).unwrap();
    assert!(err < TOL, "permute err {err}");

    let proj2 = Tensor::randn(&[12, 10], 0.0, 1.0, 1006).unwrap();
    let f2 = || x.reshape(&[12, 10])?.mul(&proj2)?.sum_all();
    let err2 = finite_diff_check(f2, &x, EPS).unwrap();
    assert!(err2 < TOL, "reshape err {err2}");

    let small: Tensor<f64> = Tensor::randn(&[2, 1, 4, 1], 0.0, 1.0, 13).unwrap().trainable();
    let proj3 = Tensor::randn(&[2, 3, 4, 5], 0.0, 1.0, 1007).unwrap();
    let f3 = || small.broadcast_to(&[2, 3, 4, 5])?.mul(&proj3)?.sum_all();
    let err3 = finite_diff_check(f3, &small, EPS).unwrap();
    assert!(err3 < TOL, "broadcast err {err3}");
}

#[test]
fn elementwise_broadcast_gradients() {
    let x: Tensor<f64> = Tensor::randn(&[2, 3, 4], 0.0, 1.0, 14).unwrap().trainable();
    let y: Tensor<f64> = Tensor::randn(&[2, 1, 4], 0.0, 1.0, 15).unwrap().trainable();
    let proj = Tensor::randn(&[2, 3, 4], 0.0, 1.0, 1008).unwrap();

    let f_mul = || x.mul(&y)?.mul(&proj)?.sum_all();
    let report = finite_diff_check_many(
        f_mul,
        &[("x".to_string(), x.clone()), ("y".to_string(), y.clone())],
        EPS,
    )
    .unwrap();
    for (name, err) in report {
        assert!(err < TOL, "broadcast mul {name} err {err}");
    }

    let f_add = || x.add(&y)?.mul(&proj)?.sum_all();
    let report = finite_diff_check_many(
        f_add,
        &[("x".to_string(), x.clone()), ("y".to_string(), y.clone())],
        EPS,
    )
    .unwrap();
    for (name, err) in report {
        assert!(err < TOL, "broadcast add {name} err {err}");
    }
}

#[test]
fn reductions_and_concat_gradients() {
    let x: Tensor<f64> = Tensor::randn(&[2, 4, 3, 3], 0.0, 1.0, 16).unwrap().trainable();
    let y: Tensor<f64> = Tensor::randn(&[2, 2, 3, 3], 0.0, 1.0, 17).unwrap().trainable();

    let proj_mean = Tensor::randn(&[2, 1, 3, 3], 0.0, 1.0, 1009).unwrap();
    let f_mean = || {
        x.reduce_axis(1, ReduceMode::Mean, true)?
            .mul(&proj_mean)?
            .sum_all()
    };
    let err = finite_diff_check(f_mean, &x, EPS).unwrap();
    assert!(err < TOL, "reduce mean err {err}");

    let f_max = || {
        x.reduce_axis(1, ReduceMode::Max, true)?
            .mul(&proj_mean)?
            .sum_all()
    };
    let err = finite_diff_check(f_max, &x, EPS).unwrap();
    assert!(err < TOL, "reduce max err {err}");

    let proj_cat = Tensor::randn(&[2, 6, 3, 3], 0.0, 1.0, 1010).unwrap();
    let f_cat = || {
        Tensor::concat(&[x.clone(), y.clone()], 1)?
            .mul(&proj_cat)?
            .sum_all()
    };
    let report = finite_diff_check_many(
        f_cat,
        &[("x".to_string(), x.clone()), ("y".to_string(), y.clone())],
        EPS,
    )
    .unwrap();
    for (name, err) in report {
        assert!(err < TOL, "concat {name} err {err}");
    }

    let proj_gap = Tensor::randn(&[2, 4], 0.0, 1.0, 1011).unwrap();
    let f_gap = || x.global_avg_pool()?.mul(&proj_gap)?.sum_all();
    let err = finite_diff_check(f_gap, &x, EPS).unwrap();
    assert!(err < TOL, "gap err {err}");

    let f_div = || x.div_scalar(3.0)?.mul(&project(&x, 1012))?.sum_all();
    let err = finite_diff_check(f_div, &x, EPS).unwrap();
    assert!(err < TOL, "div_scalar err {err}");
}

#[test]
fn conv_bn_sigmoid_composite() {
    let x: Tensor<f64> = Tensor::randn(&[2, 2, 5, 5], 0.0, 1.0, 18).unwrap().trainable();
    let conv: Conv2d<f64> = Conv2d::seeded(2, 1, 3, 1, 1, false, 19).unwrap();
    let bn: BatchNorm2d<f64> = BatchNorm2d::new(1).unwrap();
    let proj = Tensor::randn(&[2, 1, 5, 5], 0.0, 1.0, 1013).unwrap();
    let f = || {
        bn.forward(&conv.forward(&x)?, false)?
            .sigmoid()?
            .mul(&proj)?
            .sum_all()
    };
    let params = vec![
        ("x".to_string(), x.clone()),
        ("conv.weight".to_string(), conv.weight.clone()),
        ("bn.gamma".to_string(), bn.gamma.clone()),
        ("bn.beta".to_string(), bn.beta.clone()),
    ];
    for (name, err) in finite_diff_check_many(f, &params, EPS).unwrap() {
        assert!(err < TOL, "composite {name} err {err}");
    }
}
