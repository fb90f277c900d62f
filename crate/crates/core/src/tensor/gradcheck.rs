/// Central-difference step used throughout the gradient suite.
pub const FD_STEP: f64 = 1e-3;

/// Step for whole-network checks: thousands of ReLU and max-pool units put
/// some kink within 1e-3 of almost any point, so a smaller probe is needed.
pub const GRAPH_FD_STEP: f64 = 1e-5;

/// Max over all coordinates of `|analytic − central difference| /
/// max(1, |analytic|)` for the scalar function `f` at `point`.
pub fn finite_diff_check<F>(point: &[f64], analytic: &[f64], step: f64, f: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let coords: Vec<usize> = (0..point.len()).collect();
    finite_diff_check_coords(point, analytic, &coords, step, f)
}

/// Same measure restricted to `coords`, for operators too large to probe
/// exhaustively.
pub fn finite_diff_check_coords<F>(
    point: &[f64],
    analytic: &[f64],
    coords: &[usize],
    step: f64,
    mut f: F,
) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(point.len(), analytic.len(), "gradient length differs from point");
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let orig = x[i];
        x[i] = orig + step;
        let up = f(&x);
        x[i] = orig - step;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}
