use crate::tensor::{Real, Tape, TensorError, Var};

/// Radius of the typical set of an `n`-dimensional standard normal.
pub fn radius(n: usize) -> f64 {
    ((n - 1) as f64).sqrt()
}

/// Hyperspherical coordinates to a point of norm `sqrt(n - 1)`.
///
/// `theta` holds `n - 1` angles; the first `n - 2` lie in `[0, pi]`, the last
/// in `[0, 2 pi)`.
pub fn angles_to_point(theta: &[f64], n: usize) -> Vec<f64> {
    assert!(n >= 2 && theta.len() == n - 1, "need n >= 2 and n - 1 angles");
    let r = radius(n);
    let mut x = Vec::with_capacity(n);
    let mut prefix = r;
    for &t in theta {
        x.push(prefix * t.cos());
        prefix *= t.sin();
    }
    x.push(prefix);
    x
}

/// Inverse of [`angles_to_point`] up to scale. Once the remaining tail of
/// the point vanishes (relative norm below 1e-12) the remaining angles are 0.
pub fn point_to_angles(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert!(n >= 2, "need n >= 2");
    let total = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut theta = vec![0.0; n - 1];
    // tail[j] = |x[j..]|
    let mut tail = vec![0.0f64; n + 1];
    for j in (0..n).rev() {
        tail[j] = tail[j + 1].hypot(x[j]);
    }
    for j in 0..n - 1 {
        if total == 0.0 || tail[j] / total < 1e-12 {
            break;
        }
        theta[j] = if j == n - 2 {
            let a = x[n - 1].atan2(x[n - 2]);
            if a < 0.0 {
                a + 2.0 * std::f64::consts::PI
            } else {
                a
            }
        } else {
            tail[j + 1].atan2(x[j])
        };
    }
    theta
}

/// Row-wise [`angles_to_point`] on the tape: `theta` is `rows x (n - 1)`.
pub fn angles_to_point_tape<T: Real>(t: &mut Tape<T>, theta: Var, n: usize) -> Result<Var, TensorError> {
    let sin = t.sin(theta);
    let cos = t.cos(theta);
    let mut cols = Vec::with_capacity(n);
    let mut prefix: Option<Var> = None;
    for j in 0..n - 1 {
        let c = t.slice_cols(cos, j, j + 1)?;
        let s = t.slice_cols(sin, j, j + 1)?;
        let (term, next) = match prefix {
            None => (c, s),
            Some(p) => (t.mul(p, c)?, t.mul(p, s)?),
        };
        cols.push(term);
        prefix = Some(next);
    }
    cols.push(prefix.expect("n >= 2"));
    let x = t.concat(&cols, 1)?;
    Ok(t.scale(x, T::from_f64(radius(n))))
}
