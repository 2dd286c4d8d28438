use super::{Tape, Tensor, TensorError, Var};

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// One-sided step of the kink detector.
pub const KINK_STEP: f64 = 2e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradMismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub passed: bool,
    pub max_rel_error: f64,
    pub checked: usize,
    pub kinks_skipped: usize,
    pub failures: Vec<GradMismatch>,
    /// Set when `f` itself failed or did not return a scalar.
    pub error: Option<String>,
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let v = tape.value(root);
    if v.len() != 1 {
        return Err(TensorError::NonScalarRoot(v.shape.clone()));
    }
    Ok(v.data[0])
}

/// Compares reverse-mode gradients of `f` with central differences.
///
/// Coordinates where the one-sided slopes disagree (a kink within
/// [`KINK_STEP`]) are skipped.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], tolerance: f64) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let analytic = match f(&mut tape, &vars).and_then(|root| tape.backward(root)) {
        Ok(g) => vars.iter().map(|v| g.get(*v)).collect::<Vec<_>>(),
        Err(e) => return GradCheckReport::failed(e),
    };
    finite_difference_check(inputs, &analytic, |x| eval(&f, x), tolerance)
}

impl GradCheckReport {
    pub fn failed(e: impl std::fmt::Display) -> Self {
        GradCheckReport {
            passed: false,
            max_rel_error: 0.0,
            checked: 0,
            kinks_skipped: 0,
            failures: Vec::new(),
            error: Some(e.to_string()),
        }
    }
}

/// Checks `analytic` gradients of the scalar function `eval` at `inputs`.
pub fn finite_difference_check<F, E>(
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    eval: F,
    tolerance: f64,
) -> GradCheckReport
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64, E>,
    E: std::fmt::Display,
{
    let coords: Vec<(usize, usize)> =
        inputs.iter().enumerate().flat_map(|(i, t)| (0..t.len()).map(move |k| (i, k))).collect();
    finite_difference_check_at(inputs, analytic, &coords, eval, tolerance)
}

/// As [`finite_difference_check`], restricted to `(input, index)` coordinates.
pub fn finite_difference_check_at<F, E>(
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    coords: &[(usize, usize)],
    mut eval: F,
    tolerance: f64,
) -> GradCheckReport
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64, E>,
    E: std::fmt::Display,
{
    let mut report = GradCheckReport {
        passed: false,
        max_rel_error: 0.0,
        checked: 0,
        kinks_skipped: 0,
        failures: Vec::new(),
        error: None,
    };
    let mut work = inputs.to_vec();
    for &(input, index) in coords {
        {
            let x0 = inputs[input].data[index];
            let mut at = |x: f64| {
                work[input].data[index] = x;
                let r = eval(&work);
                work[input].data[index] = x0;
                r
            };
            let probe = (|| -> Result<(f64, f64, f64, f64, f64), E> {
                Ok((at(x0 + STEP)?, at(x0 - STEP)?, at(x0 + KINK_STEP)?, at(x0 - KINK_STEP)?, at(x0)?))
            })();
            let (fp, fm, kp, km, f0) = match probe {
                Ok(v) => v,
                Err(e) => return GradCheckReport::failed(e),
            };
            let right = (kp - f0) / KINK_STEP;
            let left = (f0 - km) / KINK_STEP;
            let slope = 0.5 * (right + left);
            if (right - left).abs() > 1e-3 * slope.abs().max(1.0) {
                report.kinks_skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * STEP);
            let a = analytic[input].data[index];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(rel);
            if !(rel < tolerance) {
                report.failures.push(GradMismatch { input, index, analytic: a, numeric, rel_error: rel });
            }
        }
    }
    report.passed = report.failures.is_empty();
    report
}
