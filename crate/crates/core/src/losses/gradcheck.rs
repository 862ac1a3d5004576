//! Central finite differences, used as an independent oracle for the
//! analytic gradient. Only evaluates the objective as a black box.

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn finite_difference_grad<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest per-entry mismatch, where an entry passes if either its absolute
/// error is within `abs_floor` or its relative error is within `rel_tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientComparison {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub fn compare_gradients(
    analytic: &[f64],
    numeric: &[f64],
    rel_tol: f64,
    abs_floor: f64,
) -> GradientComparison {
    assert_eq!(analytic.len(), numeric.len());
    let mut out = GradientComparison {
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        passed: true,
    };
    for (a, n) in analytic.iter().zip(numeric) {
        let abs = (a - n).abs();
        let scale = a.abs().max(n.abs());
        let rel = if scale > 0.0 { abs / scale } else { 0.0 };
        out.max_abs_error = out.max_abs_error.max(abs);
        if abs > abs_floor {
            out.max_rel_error = out.max_rel_error.max(rel);
            if rel > rel_tol || !abs.is_finite() {
                out.passed = false;
            }
        }
    }
    out
}
