//! Central-difference gradient checker.

use super::Tensor;

/// Relative discrepancy used by [`grad_check`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients against central differences.
///
/// `f` maps the inputs to a scalar loss together with the analytic gradient
/// of that loss with respect to every input. Each input element is perturbed
/// by `±eps` in turn; the result is the maximum of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)` over all
/// elements of all inputs.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> f64
where
    F: Fn(&[Tensor<f64>]) -> (f64, Vec<Tensor<f64>>),
{
    let (_, analytic) = f(inputs);
    assert_eq!(analytic.len(), inputs.len(), "one gradient per input");
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        assert_eq!(grad.shape(), inputs[t].shape(), "gradient shape of input {t}");
        for i in 0..inputs[t].numel() {
            let orig = inputs[t].data()[i];
            work[t].data_mut()[i] = orig + eps;
            let (up, _) = f(&work);
            work[t].data_mut()[i] = orig - eps;
            let (down, _) = f(&work);
            work[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(grad.data()[i], numeric));
        }
    }
    worst
}
