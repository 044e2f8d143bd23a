//! Central finite-difference gradient checking.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Largest elementwise relative error between the analytic gradient of
/// `f` and its central finite-difference estimate, over every element of
/// every parameter.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn gradient_check<T, F>(f: F, params: &[Tensor<T>], epsilon: f64) -> Result<f64>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    gradient_check_sampled(f, params, epsilon, usize::MAX)
}

/// Like [`gradient_check`] but probes at most `max_per_param` evenly spaced
/// elements of each parameter.
pub fn gradient_check_sampled<T, F>(f: F, params: &[Tensor<T>], epsilon: f64, max_per_param: usize) -> Result<f64>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.scalar(out)?.as_f64())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    if g.value(loss).numel() != 1 {
        return Err(TensorError::NotScalar(g.value(loss).shape().to_vec()));
    }
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| match g.grad(v) {
            Some(d) => d.iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; p.numel()],
        })
        .collect();

    let mut worst = 0.0f64;
    let mut probe = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let step = if n <= max_per_param { 1 } else { n.div_ceil(max_per_param) };
        for idx in (0..n).step_by(step.max(1)) {
            let orig = p.data()[idx];
            probe[pi].data_mut()[idx] = orig + T::from_f64(epsilon);
            let plus = eval(&probe)?;
            probe[pi].data_mut()[idx] = orig - T::from_f64(epsilon);
            let minus = eval(&probe)?;
            probe[pi].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[pi][idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
