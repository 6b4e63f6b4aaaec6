//! Small direct solvers: tridiagonal, cyclic tridiagonal and banded LU.
//!
//! All factorizations are done once and reused; the time steppers call
//! `solve_in_place` thousands of times per period map.

use crate::error::{Error, Result};

/// Tridiagonal matrix in diagonal storage. `lower[0]` and `upper[n-1]` are the
/// cyclic corner entries when the matrix is used in periodic form, and are
/// ignored otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// y = A x with cyclic wrap (corner entries live in `lower[0]`, `upper[n-1]`).
    pub fn mul_cyclic(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let im = if i == 0 { n - 1 } else { i - 1 };
            let ip = if i + 1 == n { 0 } else { i + 1 };
            y[i] = self.lower[i] * x[im] + self.diag[i] * x[i] + self.upper[i] * x[ip];
        }
    }

    /// Weak diagonal dominance with nonpositive off-diagonals and positive
    /// diagonal: the conditions under which the inverse is entrywise positive.
    pub fn is_m_matrix(&self) -> bool {
        self.diag.iter().all(|&d| d > 0.0)
            && self.lower.iter().all(|&l| l <= 0.0)
            && self.upper.iter().all(|&u| u <= 0.0)
    }
}

/// Thomas algorithm factorization of a (non-cyclic) tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct ThomasFactor {
    lower: Vec<f64>,
    inv_pivot: Vec<f64>,
    upper_scaled: Vec<f64>,
}

impl ThomasFactor {
    pub fn new(m: &Tridiagonal) -> Result<Self> {
        let n = m.len();
        if n == 0 {
            return Err(Error::Numerical("empty tridiagonal system".into()));
        }
        let mut inv_pivot = vec![0.0; n];
        let mut upper_scaled = vec![0.0; n];
        let mut pivot = m.diag[0];
        for i in 0..n {
            if i > 0 {
                pivot = m.diag[i] - m.lower[i] * upper_scaled[i - 1];
            }
            if pivot.abs() < 1e-300 || !pivot.is_finite() {
                return Err(Error::Numerical(format!(
                    "singular tridiagonal system: pivot {pivot:.3e} at row {i}"
                )));
            }
            inv_pivot[i] = 1.0 / pivot;
            upper_scaled[i] = if i + 1 < n { m.upper[i] * inv_pivot[i] } else { 0.0 };
        }
        Ok(Self {
            lower: m.lower.clone(),
            inv_pivot,
            upper_scaled,
        })
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.inv_pivot.len();
        rhs[0] *= self.inv_pivot[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.upper_scaled[i] * rhs[i + 1];
        }
    }
}

/// Cyclic tridiagonal factorization via Sherman-Morrison.
#[derive(Debug, Clone)]
pub struct CyclicFactor {
    inner: ThomasFactor,
    // u = (gamma, 0, ..., 0, corner_low); v = (1, 0, ..., 0, corner_up / gamma)
    z: Vec<f64>,
    v_last: f64,
    denom: f64,
}

impl CyclicFactor {
    pub fn new(m: &Tridiagonal) -> Result<Self> {
        let n = m.len();
        if n < 3 {
            return Err(Error::Numerical(format!(
                "cyclic tridiagonal system needs n >= 3, got {n}"
            )));
        }
        let alpha = m.upper[n - 1]; // A[n-1][0]
        let beta = m.lower[0]; // A[0][n-1]
        let gamma = -m.diag[0];
        let mut modified = m.clone();
        modified.diag[0] -= gamma;
        modified.diag[n - 1] -= alpha * beta / gamma;
        modified.lower[0] = 0.0;
        modified.upper[n - 1] = 0.0;
        let inner = ThomasFactor::new(&modified)?;
        let mut z = vec![0.0; n];
        z[0] = gamma;
        z[n - 1] = alpha;
        inner.solve_in_place(&mut z);
        let v_last = beta / gamma;
        let denom = 1.0 + z[0] + v_last * z[n - 1];
        if denom.abs() < 1e-300 {
            return Err(Error::Numerical(
                "singular cyclic system (Sherman-Morrison denominator vanished)".into(),
            ));
        }
        Ok(Self {
            inner,
            z,
            v_last,
            denom,
        })
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        self.inner.solve_in_place(rhs);
        let fact = (rhs[0] + self.v_last * rhs[n - 1]) / self.denom;
        for (r, z) in rhs.iter_mut().zip(&self.z) {
            *r -= fact * z;
        }
    }
}

/// Banded matrix in row-oriented band storage, factorized without pivoting.
///
/// Only used for the strictly diagonally dominant step matrices of the
/// cylinder solver, where Gaussian elimination without pivoting is stable.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    // row i holds columns i-kl ..= i+ku at offsets 0 ..= kl+ku
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    /// Adds `value` at (row, col). Panics if outside the band.
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        assert!(
            col + self.kl >= row && col <= row + self.ku,
            "entry ({row}, {col}) outside band"
        );
        let w = self.width();
        self.data[row * w + (col + self.kl - row)] += value;
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        if col + self.kl < row || col > row + self.ku {
            return 0.0;
        }
        self.data[row * self.width() + (col + self.kl - row)]
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        let w = self.width();
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let row = &self.data[i * w..(i + 1) * w];
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += row[j + self.kl - i] * x[j];
            }
            y[i] = acc;
        }
    }

    /// In-place LU (Doolittle, unit lower) without pivoting.
    pub fn factorize(mut self) -> Result<BandedLu> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let w = self.width();
        for k in 0..n {
            let pivot = self.data[k * w + kl];
            if pivot.abs() < 1e-300 || !pivot.is_finite() {
                return Err(Error::Numerical(format!(
                    "banded LU breakdown: pivot {pivot:.3e} at row {k}"
                )));
            }
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + ku).min(n - 1);
            for i in k + 1..=last_row {
                let ik = i * w + (k + kl - i);
                let factor = self.data[ik] / pivot;
                if factor == 0.0 {
                    continue;
                }
                self.data[ik] = factor;
                for j in k + 1..=last_col {
                    let kj = self.data[k * w + (j + kl - k)];
                    self.data[i * w + (j + kl - i)] -= factor * kj;
                }
            }
        }
        Ok(BandedLu { m: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    m: BandedMatrix,
}

impl BandedLu {
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let BandedMatrix { n, kl, ku, .. } = self.m;
        let w = kl + ku + 1;
        let data = &self.m.data;
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let row = &data[i * w..(i + 1) * w];
            let mut acc = rhs[i];
            for j in lo..i {
                acc -= row[j + kl - i] * rhs[j];
            }
            rhs[i] = acc;
        }
        for i in (0..n).rev() {
            let hi = (i + ku).min(n - 1);
            let row = &data[i * w..(i + 1) * w];
            let mut acc = rhs[i];
            for j in i + 1..=hi {
                acc -= row[j + kl - i] * rhs[j];
            }
            rhs[i] = acc / row[kl];
        }
    }
}
