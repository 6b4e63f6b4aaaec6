//! Scalar root finding and minimization.

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Result of a golden-section search.
#[derive(Debug, Clone, Copy)]
pub struct Minimum {
    pub x: f64,
    pub fx: f64,
    pub evals: usize,
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
///
/// Stops when the bracket is shorter than `xtol * (1 + |x|)`.
pub fn golden_section<F>(mut f: F, lo: f64, hi: f64, xtol: f64, max_evals: usize) -> Result<Minimum>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Numerical(format!("invalid golden-section bracket [{lo}, {hi}]")));
    }
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    let mut evals = 2;
    while (b - a) > xtol * (1.0 + 0.5 * (a + b).abs()) && evals < max_evals {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2)?;
        }
        evals += 1;
    }
    let (x, fx) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    Ok(Minimum { x, fx, evals })
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
///
/// Returns the midpoint of the final bracket. `f(lo)` and `f(hi)` must have
/// opposite signs (zero counts as either).
pub fn bisect<F>(mut f: F, lo: f64, hi: f64, xtol: f64, max_iters: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a)?;
    let fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Numerical(format!(
            "bisection bracket [{lo}, {hi}] has no sign change (f = {fa:.3e}, {fb:.3e})"
        )));
    }
    for _ in 0..max_iters {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= xtol || m == a || m == b {
            break;
        }
        let fm = f(m)?;
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_two_sqrt_mu() {
        let m = golden_section(|l| Ok((l * l + 1.0) / l), 0.1, 5.0, 1e-12, 500).unwrap();
        assert!((m.x - 1.0).abs() < 1e-6);
        assert!((m.fx - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bisect_finds_sqrt_two() {
        let r = bisect(|x| Ok(x * x - 2.0), 0.0, 2.0, 1e-15, 200).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn bisect_rejects_bad_bracket() {
        assert!(bisect(|x| Ok(x * x + 1.0), -1.0, 1.0, 1e-10, 100).is_err());
    }
}
