//! Finite-difference verification of recorded gradients for any [`Flow`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::flow::Flow;
use crate::tensor::{finite_diff_grad, max_relative_error, Eager, Graph, Ops, Real, Tensor};

/// Worst elementwise relative error for one differentiated tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `"input"` or `"param[i]"`.
    pub name: String,
    pub max_rel_err: f64,
}

/// Fixed random weights `r` with `|r_i| in [0.5, 1.5]`, so the probe loss
/// `sum(r * f(x))` has no tiny or cancelling gradient entries by design.
fn probe_weights(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.gen_range(0.5..1.5);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn probe_loss<F: Flow<f64>>(layer: &F, x: &Tensor<f64>, r: &Tensor<f64>) -> Result<f64> {
    let e = Eager;
    let y = layer.forward(&e, x)?;
    Ok(e.sum(&e.mul(&y, r)?)?.data()[0])
}

/// Compares reverse-mode gradients of `sum(r * layer.forward(x))` against
/// central differences with step `h`, for the input and every parameter.
pub fn check_flow_gradients<F: Flow<f64> + Clone>(
    layer: &F,
    x: &Tensor<f64>,
    h: f64,
    seed: u64,
) -> Result<Vec<GradCheck>> {
    let r = probe_weights(layer.forward(&Eager, x)?.shape(), seed);
    let g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let y = layer.forward(&g, &xv)?;
    let rv = g.input(r.clone());
    let loss = g.sum(&g.mul(&y, &rv)?)?;
    let grads = g.backward(loss)?;

    let mut out = Vec::new();
    let ad_x = grads
        .get(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
    let fd_x = finite_diff_grad(|xx| probe_loss(layer, xx, &r), x, h)?;
    out.push(GradCheck {
        name: "input".into(),
        max_rel_err: max_relative_error(&ad_x, &fd_x),
    });

    let params = layer.params();
    for (i, (p, ad)) in params.iter().zip(grads.params()).enumerate() {
        let ad = ad.cloned().unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()));
        let fd = finite_diff_grad(
            |pp| {
                let mut probe = layer.clone();
                *probe.params_mut()[i] = pp.clone();
                probe_loss(&probe, x, &r)
            },
            p,
            h,
        )?;
        out.push(GradCheck {
            name: format!("param[{i}]"),
            max_rel_err: max_relative_error(&ad, &fd),
        });
    }
    Ok(out)
}

/// Largest error over a [`check_flow_gradients`] report.
pub fn worst(checks: &[GradCheck]) -> f64 {
    checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
}

/// Max of `|inverse(forward(x)) - x|` and `|forward(inverse(x)) - x|` over
/// `trials` random `[0, 1]` inputs of `size x size`, processed as one batch.
pub fn round_trip_error<T: Real, F: Flow<T>>(
    layer: &F,
    shape: [usize; 3],
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let [c, h, w] = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(vec![trials, c, h, w], |_| T::from_f64_lossy(rng.gen::<f64>()));
    let e = Eager;
    let a = layer.inverse(&e, &layer.forward(&e, &x)?)?;
    let b = layer.forward(&e, &layer.inverse(&e, &x)?)?;
    Ok(a.max_abs_diff(&x)?.max(b.max_abs_diff(&x)?))
}
