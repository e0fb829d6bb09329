//! Every primitive's reverse-mode gradient against central differences at
//! 64-bit precision, plus the forward-value properties of the engine.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tritrans_tensor::{container, grad_check, GradCheck, Graph, Tensor, TensorError, Var};

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

/// `sum(op(inputs) ⊙ r)` with a fixed random projection `r`, so every output
/// element carries a distinct weight into the scalar.
fn check(name: &str, inputs: Vec<Tensor<f64>>, op: impl Fn(&Graph<f64>, &[Var]) -> Result<Var, TensorError>) {
    let total: usize = inputs.iter().map(|t| t.numel()).sum();
    assert!(total >= 100, "{name}: only {total} coordinates");
    let report = GradCheck::new(H)
        .run(&inputs, |g, v| {
            let y = op(g, v)?;
            let r = g.constant(randn(&g.shape(y), 999));
            let p = g.mul(y, r)?;
            Ok::<_, TensorError>(g.sum(p))
        })
        .unwrap();
    assert!(report.coords_checked >= 100);
    assert!(report.max_relative_error < TOL, "{name}: max relative error {:.3e}", report.max_relative_error);
}

#[test]
fn grad_elementwise_binary_with_broadcast() {
    let a = randn(&[2, 3, 4, 5], 1);
    let b = randn(&[2, 3, 1, 1], 2);
    check("add", vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1]));
    check("sub", vec![a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]));
    check("mul", vec![a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]));
    let denom = randn(&[1, 3, 4, 5], 3).map(|x| x.abs() + 0.5);
    check("div", vec![a, denom], |g, v| g.div(v[0], v[1]));
}

#[test]
fn grad_unary() {
    let x = randn(&[4, 32], 4);
    check("relu", vec![x.clone()], |g, v| Ok(g.relu(v[0])));
    check("sigmoid", vec![x.clone()], |g, v| Ok(g.sigmoid(v[0])));
    check("gelu", vec![x.clone()], |g, v| Ok(g.gelu(v[0])));
    check("softplus", vec![x.scale_by(8.0)], |g, v| Ok(g.softplus(v[0])));
    check("abs", vec![x.clone()], |g, v| Ok(g.abs(v[0])));
    check("exp", vec![x.clone()], |g, v| Ok(g.exp(v[0])));
    check("scale", vec![x.clone()], |g, v| Ok(g.scale(v[0], -1.7)));
    check("add_scalar", vec![x], |g, v| Ok(g.add_scalar(v[0], 0.3)));
}

#[test]
fn grad_matmul_and_linear() {
    check("matmul batched", vec![randn(&[2, 6, 5], 5), randn(&[2, 5, 4], 6)], |g, v| g.matmul(v[0], v[1]));
    check("matmul shared", vec![randn(&[3, 6, 5], 7), randn(&[5, 6], 8)], |g, v| g.matmul(v[0], v[1]));
    check("linear", vec![randn(&[2, 9, 5], 9), randn(&[5, 4], 10), randn(&[4], 11)], |g, v| {
        g.linear(v[0], v[1], Some(v[2]))
    });
}

#[test]
fn grad_conv2d() {
    for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (1, 3, 7)] {
        let x = randn(&[2, 3, 7, 6], 12);
        let w = randn(&[4, 3, k, k], 13);
        let b = randn(&[4], 14);
        check("conv2d", vec![x, w, b], move |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad));
    }
}

#[test]
fn grad_softmax_and_layer_norm() {
    check("softmax", vec![randn(&[6, 20], 15)], |g, v| g.softmax(v[0]));
    check("layer_norm", vec![randn(&[10, 12], 16), randn(&[12], 17), randn(&[12], 18)], |g, v| {
        g.layer_norm(v[0], v[1], v[2], 1e-6)
    });
}

#[test]
fn grad_layout_ops() {
    check("concat", vec![randn(&[2, 3, 4, 4], 19), randn(&[2, 2, 4, 4], 20)], |g, v| g.concat(&[v[0], v[1]], 1));
    check("reshape", vec![randn(&[4, 30], 21)], |g, v| g.reshape(v[0], &[2, 6, 10]));
    check("permute", vec![randn(&[2, 3, 4, 5], 22)], |g, v| g.permute(v[0], &[0, 2, 3, 1]));
}

#[test]
fn grad_resampling_and_pooling() {
    let x = randn(&[2, 3, 5, 4], 23);
    check("upsample2x", vec![x.clone()], |g, v| g.upsample2x(v[0]));
    check("resize", vec![x.clone()], |g, v| g.resize_bilinear(v[0], 7, 9));
    check("max_pool", vec![x.clone()], |g, v| g.max_pool2d(v[0], 2, 2, 0));
    check("max_pool padded", vec![x.clone()], |g, v| g.max_pool2d(v[0], 3, 1, 1));
    check("avg_pool", vec![x.clone()], |g, v| g.avg_pool2d(v[0], 3, 1, 1));
    check("avg_pool strided", vec![x.clone()], |g, v| g.avg_pool2d(v[0], 2, 2, 0));
    check("global_avg", vec![x.clone()], |g, v| g.global_avg_pool(v[0]));
    check("global_max", vec![x], |g, v| g.global_max_pool(v[0]));
}

#[test]
fn grad_reductions() {
    let x = randn(&[3, 5, 8], 24);
    check("sum_axis", vec![x.clone()], |g, v| g.sum_axis(v[0], 1));
    check("mean_axis", vec![x.clone()], |g, v| g.mean_axis(v[0], 2));
    check("max_axis", vec![x.clone()], |g, v| g.max_axis(v[0], 1));
    check("sum", vec![x.clone()], |g, v| Ok(g.sum(v[0])));
    check("mean", vec![x], |g, v| Ok(g.mean(v[0])));
}

#[test]
fn grad_sigmoid_of_affine_map() {
    // loss = sum(sigmoid(W x)), gradient w.r.t. W.
    let w = Tensor::randn(&[12, 10], 0.3, &mut rng(25));
    let x = Tensor::randn(&[10, 1], 0.3, &mut rng(26));
    let err = grad_check(&[w, x], H, |g, v| {
        let y = g.matmul(v[0], v[1])?;
        let s = g.sigmoid(y);
        Ok::<_, TensorError>(g.sum(s))
    })
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn grad_check_of_identity_sum_is_exact() {
    let err = grad_check(&[randn(&[4, 4], 27)], H, |g, v| Ok::<_, TensorError>(g.sum(v[0]))).unwrap();
    assert!(err < 1e-10, "{err}");
}

#[test]
fn grad_check_of_layer_norm_sum() {
    let x = randn(&[8], 28);
    let err = grad_check(&[x], H, |g, v| {
        let gamma = g.constant(randn(&[8], 29));
        let beta = g.constant(Tensor::zeros(&[8]));
        let y = g.layer_norm(v[0], gamma, beta, 1e-6)?;
        let r = g.constant(randn(&[8], 30));
        let p = g.mul(y, r)?;
        Ok::<_, TensorError>(g.sum(p))
    })
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn grad_check_reports_non_finite() {
    let x = Tensor::<f64>::from_f64(&[2], &[1.0, 0.0]).unwrap();
    let res = grad_check(&[x], H, |g, v| {
        let one = g.constant(Tensor::scalar(1.0));
        let r = g.div(one, v[0])?;
        let r = g.mul(r, r)?;
        let r = g.mul(r, r)?;
        let e = g.exp(r);
        Ok::<_, TensorError>(g.sum(e))
    });
    assert!(matches!(res, Err(TensorError::NonFinite { input: 0, .. })), "{res:?}");
}

#[test]
fn upsampling_a_constant_map_is_constant() {
    let g = Graph::<f32>::new();
    let x = g.constant(Tensor::full(&[1, 2, 3, 5], 0.7));
    for y in [g.upsample2x(x).unwrap(), g.resize_bilinear(x, 11, 4).unwrap()] {
        assert!(g.value(y).data().iter().all(|&v| v == 0.7));
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::randn(&[16, 33], 4.0, &mut rng(31)));
    let y = g.softmax(x).unwrap();
    for row in g.value(y).data().chunks(33) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn layer_norm_rows_are_standardized() {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::randn(&[16, 24], 3.0, &mut rng(32)).map(|v| v + 5.0));
    let gamma = g.constant(Tensor::ones(&[24]));
    let beta = g.constant(Tensor::zeros(&[24]));
    let y = g.layer_norm(x, gamma, beta, 1e-6).unwrap();
    for row in g.value(y).data().chunks(24) {
        let mean = row.iter().sum::<f64>() / 24.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 24.0;
        assert!(mean.abs() <= 1e-6);
        assert!((var - 1.0).abs() <= 1e-5);
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let g = Graph::<f32>::new();
        let x = g.constant(Tensor::randn(&[2, 3, 8, 8], 1.0, &mut rng(33)));
        let w = g.constant(Tensor::randn(&[4, 3, 3, 3], 0.2, &mut rng(34)));
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        let y = g.upsample2x(y).unwrap();
        let y = g.gelu(y);
        let out = g.value(y).clone();
        out
    };
    assert_eq!(run().data(), run().data());
}

proptest! {
    #[test]
    fn container_round_trips_f32(shape in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
        let t = Tensor::<f32>::randn(&shape, 1.0, &mut rng(seed));
        let mut buf = Vec::new();
        container::write_tensor(&mut buf, &t).unwrap();
        prop_assert_eq!(container::read_tensor::<f32>(&mut buf.as_slice()).unwrap(), t);
    }
}

trait ScaleBy {
    fn scale_by(&self, c: f64) -> Self;
}

impl ScaleBy for Tensor<f64> {
    fn scale_by(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }
}
