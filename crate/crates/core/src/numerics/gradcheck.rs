/// Gradients smaller than this are compared in absolute terms.
const REL_FLOOR: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-4)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central-difference check of an analytic gradient.
///
/// `loss_fn` returns the loss and its analytic gradient at the given
/// parameters. Returns the worst per-parameter [`relative_error`].
pub fn check_gradients<F>(loss_fn: F, params: &[f64], epsilon: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    assert!(
        (1e-6..=1e-3).contains(&epsilon),
        "epsilon must lie in [1e-6, 1e-3]"
    );
    let (_, analytic) = loss_fn(params);
    assert_eq!(analytic.len(), params.len(), "gradient length");
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + epsilon;
        let (up, _) = loss_fn(&probe);
        probe[i] = orig - epsilon;
        let (down, _) = loss_fn(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}
