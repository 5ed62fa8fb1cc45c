use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::Result;

/// Largest relative error between `grad` and central differences of `f`
/// at `x`; denominator `max(|g_ad|, |g_fd|, 1e-8)`.
pub fn finite_diff_check(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], grad: &[f64], h: f64) -> f64 {
    let mut xs = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        xs[i] = x[i] + h;
        let fp = f(&xs);
        xs[i] = x[i] - h;
        let fm = f(&xs);
        xs[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        let denom = grad[i].abs().max(fd.abs()).max(1e-8);
        worst = worst.max((grad[i] - fd).abs() / denom);
    }
    worst
}

/// Checks the reverse-mode gradient of a scalar graph built by `build`
/// from a single tracked input shaped like `x`.
pub fn check_graph(build: impl Fn(&mut Graph, NodeId) -> Result<NodeId>, x: &Tensor, h: f64) -> Result<f64> {
    let mut g = Graph::new();
    let xi = g.param(x.clone())?;
    let loss = build(&mut g, xi)?;
    let grad = g.backward(loss)?.wrt(xi);
    let shape = x.shape().to_vec();
    let eval = |v: &[f64]| -> f64 {
        let mut g = Graph::new();
        let t = Tensor::new(shape.clone(), v.to_vec()).expect("shape");
        let xi = g.constant(t).expect("finite");
        let out = build(&mut g, xi).expect("forward");
        g.value(out).item()
    };
    Ok(finite_diff_check(eval, x.data(), grad.data(), h))
}
