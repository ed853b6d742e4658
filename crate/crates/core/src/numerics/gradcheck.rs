use super::NumericsError;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter index where the maximum occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares `gradient` with central differences of `f` at `params`.
///
/// Per coordinate the error is |analytic − numeric| / max(|analytic|,
/// |numeric|, 1e-8); the maximum over all coordinates is reported.
pub fn grad_check<F>(
    mut f: F,
    gradient: &[f64],
    params: &[f64],
    step: f64,
) -> Result<GradCheckReport, NumericsError>
where
    F: FnMut(&[f64]) -> f64,
{
    if step.is_nan() || step <= 0.0 {
        return Err(NumericsError::Shape("step must be positive".into()));
    }
    if gradient.len() != params.len() {
        return Err(NumericsError::Shape(format!(
            "{} gradient entries for {} parameters",
            gradient.len(),
            params.len()
        )));
    }
    let mut p = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + step;
        let plus = f(&p);
        p[i] = orig - step;
        let minus = f(&p);
        p[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumericsError::NonFinite(format!("f at perturbed parameter {i}")));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let analytic = gradient[i];
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let err = (analytic - numeric).abs() / denom;
        if err > report.max_rel_error || i == 0 {
            report = GradCheckReport {
                max_rel_error: err,
                worst_index: i,
                analytic,
                numeric,
            };
        }
    }
    Ok(report)
}
