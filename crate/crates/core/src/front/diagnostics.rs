//! Translation pinning and profile diagnostics.

use serde::Serialize;

use super::iteration::max_z_slope;
use super::{Field3, FrontProfile};
use crate::dispersion::RootPair;
use crate::error::{Error, Result};
use crate::optimize::bisect;

/// Cubic Lagrange interpolation in z of node `(j, i)` at fractional plane `s`.
fn interp_z(phi: &Field3, j: usize, i: usize, s: f64) -> f64 {
    let nz = phi.nz;
    let k0 = (s.floor() as isize).clamp(1, nz as isize - 2) as usize;
    let ks = [k0 - 1, k0, k0 + 1, k0 + 2];
    let mut v = 0.0;
    for (m, &km) in ks.iter().enumerate() {
        let mut w = 1.0;
        for (n, &kn) in ks.iter().enumerate() {
            if n != m {
                w *= (s - kn as f64) / (km as f64 - kn as f64);
            }
        }
        v += w * phi.get(km, j, i);
    }
    v
}

fn interp_mean(phi: &Field3, s: f64) -> f64 {
    let mut acc = 0.0;
    for j in 0..phi.nt {
        for i in 0..phi.nx {
            acc += interp_z(phi, j, i, s);
        }
    }
    acc / (phi.nt * phi.nx) as f64
}

/// The z at which the torus mean of `phi` equals half the mean of `p`.
pub fn pin_offset(profile: &FrontProfile) -> Result<f64> {
    let g = profile.grid;
    let phi = &profile.phi;
    let target = 0.5 * profile.p.mean();
    let k = (0..g.nz)
        .find(|&k| phi.plane_mean(k) <= target && phi.plane_mean(k + 1) > target)
        .ok_or_else(|| Error::Domain("profile never crosses half of the mean of p".into()))?;
    let s = bisect(|s| Ok(interp_mean(phi, s) - target), k as f64, (k + 1) as f64, 1e-13, 200)?;
    Ok(-g.a + s * g.dz)
}

/// Pinned profile sampled at `z_pin + s` for `s` on the grid of `[-w, w]`.
#[derive(Debug, Clone)]
pub struct PinnedWindow {
    pub z_pin: f64,
    pub offsets: Vec<f64>,
    pub dz: f64,
    pub nt: usize,
    pub nx: usize,
    /// `values[(m * nt + j) * nx + i]` at offset `m`.
    pub values: Vec<f64>,
}

pub fn pinned_window(profile: &FrontProfile, half_width: f64) -> Result<PinnedWindow> {
    let g = profile.grid;
    let z_pin = pin_offset(profile)?;
    let nh = (half_width / g.dz).round() as isize;
    let offsets: Vec<f64> = (-nh..=nh).map(|m| m as f64 * g.dz).collect();
    let (lo, hi) = (z_pin - half_width, z_pin + half_width);
    if lo < -g.a + 2.0 * g.dz || hi > g.a - 2.0 * g.dz {
        return Err(Error::Domain(format!(
            "pinned window [{lo:.3}, {hi:.3}] leaves the cylinder of half-length {}",
            g.a
        )));
    }
    let (nt, nx) = (g.base.nt, g.base.nx);
    let mut values = Vec::with_capacity(offsets.len() * nt * nx);
    for &o in &offsets {
        let s = (z_pin + o + g.a) / g.dz;
        for j in 0..nt {
            for i in 0..nx {
                values.push(interp_z(&profile.phi, j, i, s));
            }
        }
    }
    Ok(PinnedWindow { z_pin, offsets, dz: g.dz, nt, nx, values })
}

/// Torus mean of the trapezoidal `int |u - v| dz` over the window.
pub(crate) fn window_l1(u: &PinnedWindow, v: &PinnedWindow) -> f64 {
    let w = u.nt * u.nx;
    let nm = u.offsets.len();
    let mut acc = 0.0;
    for m in 0..nm {
        let weight = if m == 0 || m == nm - 1 { 0.5 } else { 1.0 };
        let s: f64 = (0..w).map(|n| (u.values[m * w + n] - v.values[m * w + n]).abs()).sum();
        acc += weight * s;
    }
    acc * u.dz / w as f64
}

/// Torus mean of `sum |phi(z + dz) - phi(z)|` over the window.
pub(crate) fn window_variation(u: &PinnedWindow) -> f64 {
    let w = u.nt * u.nx;
    let nm = u.offsets.len();
    let mut acc = 0.0;
    for m in 0..nm - 1 {
        acc += (0..w).map(|n| (u.values[(m + 1) * w + n] - u.values[m * w + n]).abs()).sum::<f64>();
    }
    acc / w as f64
}

/// Tail and monotonicity diagnostics of a computed profile.
#[derive(Debug, Clone, Serialize)]
pub struct ProfileReport {
    /// Least-squares slope of `ln mean phi` on `z in [-0.9a, -0.5a]`.
    pub tail_slope: f64,
    pub lam: f64,
    #[serde(rename = "Lam")]
    pub big_lam: f64,
    /// `|tail_slope - lam| / lam`.
    pub tail_rel_error: f64,
    /// `(max - min) / mean` of `phi / (psi e^{lam z})` on the tail window.
    pub ratio_flatness: f64,
    /// Range of the discrete `phi_z / phi` on `z in [-a, -a/2]`.
    pub log_derivative_min: f64,
    pub log_derivative_max: f64,
    pub log_derivative_mean: f64,
    /// Which of `lam`, `Lam` the mean log-derivative is closer to.
    pub log_derivative_nearest: &'static str,
    pub log_derivative_rel_distance: f64,
    pub max_slope: f64,
    /// `max |phi(a) - p|`.
    pub right_limit_error: f64,
    /// `max phi(-a)`.
    pub left_limit: f64,
    pub monotone_defect: f64,
    pub sandwich_defect: f64,
    pub outer_defect: f64,
    pub sub_residual: f64,
    pub super_residual: f64,
}

/// Left-tail rate, ratio flatness, log-derivative and defect report.
/// `roots` are the decay rates the tail is compared against.
pub fn profile_diagnostics(profile: &FrontProfile, roots: &RootPair) -> ProfileReport {
    let g = profile.grid;
    let phi = &profile.phi;
    let (nt, nx) = (g.base.nt, g.base.nx);

    let tail: Vec<usize> = (0..=g.nz)
        .filter(|&k| {
            let z = g.z_at(k);
            z >= -0.9 * g.a - 1e-12 && z <= -0.5 * g.a + 1e-12
        })
        .collect();
    let pts: Vec<(f64, f64)> = tail.iter().map(|&k| (g.z_at(k), phi.plane_mean(k).ln())).collect();
    let tail_slope = ls_slope(&pts);

    let sub = &profile.barriers.sub;
    let (mut rmin, mut rmax, mut rsum, mut rn) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for &k in &tail {
        let e = (sub.lam * (g.z_at(k) + profile.barriers.shift_sub)).exp();
        for j in 0..nt {
            for i in 0..nx {
                let r = phi.get(k, j, i) / (sub.psi_lam.get(j, i) * e);
                rmin = rmin.min(r);
                rmax = rmax.max(r);
                rsum += r;
                rn += 1;
            }
        }
    }
    let ratio_flatness = (rmax - rmin) / (rsum / rn as f64);

    let (mut lmin, mut lmax, mut lsum, mut ln_) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for k in 0..g.nz / 4 {
        for j in 0..nt {
            for i in 0..nx {
                let (u0, u1) = (phi.get(k, j, i), phi.get(k + 1, j, i));
                if u0 > 0.0 && u1 > 0.0 {
                    let d = (u1.ln() - u0.ln()) / g.dz;
                    lmin = lmin.min(d);
                    lmax = lmax.max(d);
                    lsum += d;
                    ln_ += 1;
                }
            }
        }
    }
    let lmean = lsum / ln_.max(1) as f64;
    let (d_lam, d_big) = ((lmean - roots.lam).abs() / roots.lam, (lmean - roots.big_lam).abs() / roots.big_lam);
    let (nearest, rel) = if d_lam <= d_big { ("lam", d_lam) } else { ("Lam", d_big) };

    let mut right = 0.0f64;
    let mut left = 0.0f64;
    for j in 0..nt {
        for i in 0..nx {
            right = right.max((phi.get(g.nz, j, i) - profile.p.get(j, i)).abs());
            left = left.max(phi.get(0, j, i));
        }
    }

    ProfileReport {
        tail_slope,
        lam: roots.lam,
        big_lam: roots.big_lam,
        tail_rel_error: (tail_slope - roots.lam).abs() / roots.lam,
        ratio_flatness,
        log_derivative_min: lmin,
        log_derivative_max: lmax,
        log_derivative_mean: lmean,
        log_derivative_nearest: nearest,
        log_derivative_rel_distance: rel,
        max_slope: max_z_slope(profile),
        right_limit_error: right,
        left_limit: left,
        monotone_defect: profile.monotone_defect,
        sandwich_defect: profile.sandwich_defect,
        outer_defect: profile.outer_defect,
        sub_residual: profile.barriers.sub_residual,
        super_residual: profile.barriers.super_residual,
    }
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
