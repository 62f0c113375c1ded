//! Periodic matrix functions stored as Fourier coefficients.
//!
//! A `T`-periodic matrix `P(t) = Σ P_k e^{jkωt}` is real-valued in time iff
//! `P_{-k} = conj(P_k)`. Real evaluation uses the cosine/sine form
//!
//! ```text
//! P(θ) = P_0 + Σ_{k=1}^{h} P_{c,k} cos(kθ) + P_{s,k} sin(kθ),
//! P_{c,k} = 2 Re(P_k),   P_{s,k} = -2 Im(P_k)
//! ```
//!
//! which is also how gains are shipped to the real-time controller.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::C64;

/// Fourier-coefficient representation of a periodic matrix function.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicMatrix {
    rows: usize,
    cols: usize,
    h: usize,
    omega: f64,
    /// 2h+1 coefficient matrices, index k+h.
    coeffs: Vec<DMatrix<C64>>,
}

impl PeriodicMatrix {
    pub fn zeros(rows: usize, cols: usize, h: usize, omega: f64) -> Self {
        Self {
            rows,
            cols,
            h,
            omega,
            coeffs: vec![DMatrix::zeros(rows, cols); 2 * h + 1],
        }
    }

    /// Constant (time-invariant) matrix.
    pub fn constant(m: &DMatrix<f64>, omega: f64) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols(), 0, omega);
        out.coeffs[0] = m.map(|v| C64::new(v, 0.0));
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn order(&self) -> usize {
        self.h
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn coeff(&self, k: i64) -> &DMatrix<C64> {
        assert!(k.unsigned_abs() as usize <= self.h);
        &self.coeffs[(k + self.h as i64) as usize]
    }

    pub fn coeff_or_zero(&self, k: i64) -> DMatrix<C64> {
        if k.unsigned_abs() as usize > self.h {
            DMatrix::zeros(self.rows, self.cols)
        } else {
            self.coeff(k).clone()
        }
    }

    pub fn set_coeff(&mut self, k: i64, value: DMatrix<C64>) {
        assert!(k.unsigned_abs() as usize <= self.h);
        assert_eq!((value.nrows(), value.ncols()), (self.rows, self.cols));
        self.coeffs[(k + self.h as i64) as usize] = value;
    }

    /// Real-valued evaluation at angle θ via the cosine/sine form.
    pub fn eval_real(&self, theta: f64) -> DMatrix<f64> {
        let mut out = self.coeffs[self.h].map(|z| z.re);
        for k in 1..=self.h {
            let (c, s) = ((k as f64 * theta).cos(), (k as f64 * theta).sin());
            let pk = &self.coeffs[self.h + k];
            out.zip_apply(pk, |o, z| *o += 2.0 * z.re * c - 2.0 * z.im * s);
        }
        out
    }

    /// Complex evaluation `Σ P_k e^{jkθ}` (uses both coefficient sides).
    pub fn eval_complex(&self, theta: f64) -> DMatrix<C64> {
        let mut out = self.coeffs[self.h].clone();
        for k in 1..=self.h {
            let w = C64::new(0.0, k as f64 * theta).exp();
            out += &self.coeffs[self.h + k] * w + &self.coeffs[self.h - k] * w.conj();
        }
        out
    }

    /// Max |P_{-k} - conj(P_k)| entrywise; zero iff real-valued in time.
    pub fn conjugate_symmetry_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..=self.h {
            let a = &self.coeffs[self.h - k];
            let b = &self.coeffs[self.h + k];
            for i in 0..self.rows {
                for j in 0..self.cols {
                    worst = worst.max((a[(i, j)] - b[(i, j)].conj()).norm());
                }
            }
        }
        worst
    }

    /// Project onto the real-in-time subspace: `P_k ← (P_k + conj(P_{-k}))/2`.
    pub fn real_symmetrize(&mut self) {
        for k in 1..=self.h {
            let plus = self.coeffs[self.h + k].clone();
            let minus = self.coeffs[self.h - k].clone();
            let sym = (&plus + minus.map(|z| z.conj())) * C64::new(0.5, 0.0);
            self.coeffs[self.h + k] = sym.clone();
            self.coeffs[self.h - k] = sym.map(|z| z.conj());
        }
        let mid = self.coeffs[self.h].clone();
        self.coeffs[self.h] = (&mid + mid.map(|z| z.conj())) * C64::new(0.5, 0.0);
    }

    /// Hermitian part in the operator sense: `P_k ← (P_k + P_{-k}^*)/2`
    /// (time-domain `P(t) ← (P(t) + P(t)')/2` for real P).
    pub fn hermitian_symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        for k in 0..=self.h {
            let plus = self.coeffs[self.h + k].clone();
            let minus = self.coeffs[self.h - k].clone();
            let sym = (&plus + minus.adjoint()) * C64::new(0.5, 0.0);
            self.coeffs[self.h + k] = sym.clone();
            self.coeffs[self.h - k] = sym.adjoint();
        }
    }

    /// Symmetrize in the matrix sense: `P_k ← (P_k + P_k^T)/2`, i.e.
    /// `P(t) ← (P(t) + P(t)')/2` pointwise in time.
    pub fn transpose_symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        for c in self.coeffs.iter_mut() {
            let t = c.transpose();
            *c = (&*c + t) * C64::new(0.5, 0.0);
        }
    }

    pub fn truncated(&self, h_new: usize) -> Self {
        let mut out = Self::zeros(self.rows, self.cols, h_new, self.omega);
        let band = self.h.min(h_new) as i64;
        for k in -band..=band {
            out.set_coeff(k, self.coeff(k).clone());
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows, self.h, self.omega);
        for k in -(self.h as i64)..=(self.h as i64) {
            out.set_coeff(k, self.coeff(k).transpose());
        }
        out
    }

    /// Coefficients of dP/dt: `jωk P_k`.
    pub fn derivative(&self) -> Self {
        let mut out = Self::zeros(self.rows, self.cols, self.h, self.omega);
        for k in -(self.h as i64)..=(self.h as i64) {
            out.set_coeff(k, self.coeff(k) * C64::new(0.0, self.omega * k as f64));
        }
        out
    }

    /// Cosine/sine coefficient pair for harmonic k ≥ 1.
    pub fn cos_sin_coeffs(&self, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        assert!(k >= 1 && k <= self.h);
        let pk = &self.coeffs[self.h + k];
        (pk.map(|z| 2.0 * z.re), pk.map(|z| -2.0 * z.im))
    }

    /// Largest coefficient norm at harmonic |k| (Frobenius).
    pub fn coeff_norm(&self, k: usize) -> f64 {
        assert!(k <= self.h);
        let a = self.coeffs[self.h + k].norm();
        let b = self.coeffs[self.h - k].norm();
        a.max(b)
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols, self.h), (rhs.rows, rhs.cols, rhs.h));
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(rhs.coeffs.iter()) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols, self.h), (rhs.rows, rhs.cols, rhs.h));
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(rhs.coeffs.iter()) {
            *a -= b;
        }
        out
    }
}

/// Serialized form mirrors `PhasorVector`: per-harmonic re/im matrices.
#[derive(Serialize, Deserialize)]
struct PeriodicMatrixRepr {
    omega: f64,
    h: usize,
    rows: usize,
    cols: usize,
    /// re[k+h][i][j]
    re: Vec<Vec<Vec<f64>>>,
    im: Vec<Vec<Vec<f64>>>,
}

impl Serialize for PeriodicMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let grab = |f: fn(&C64) -> f64| {
            self.coeffs
                .iter()
                .map(|m| (0..self.rows).map(|i| (0..self.cols).map(|j| f(&m[(i, j)])).collect()).collect())
                .collect()
        };
        PeriodicMatrixRepr {
            omega: self.omega,
            h: self.h,
            rows: self.rows,
            cols: self.cols,
            re: grab(|z| z.re),
            im: grab(|z| z.im),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PeriodicMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = PeriodicMatrixRepr::deserialize(d)?;
        let n = 2 * repr.h + 1;
        if repr.re.len() != n || repr.im.len() != n {
            return Err(D::Error::custom("coefficient count mismatch"));
        }
        let mut out = PeriodicMatrix::zeros(repr.rows, repr.cols, repr.h, repr.omega);
        for idx in 0..n {
            let mut m = DMatrix::zeros(repr.rows, repr.cols);
            for i in 0..repr.rows {
                if repr.re[idx][i].len() != repr.cols || repr.im[idx][i].len() != repr.cols {
                    return Err(D::Error::custom("coefficient row length mismatch"));
                }
                for j in 0..repr.cols {
                    m[(i, j)] = C64::new(repr.re[idx][i][j], repr.im[idx][i][j]);
                }
            }
            out.coeffs[idx] = m;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cosine_sine_evaluation_matches_complex_form() {
        let omega = 314.159;
        let mut p = PeriodicMatrix::zeros(2, 2, 2, omega);
        let mut c1 = DMatrix::zeros(2, 2);
        c1[(0, 0)] = C64::new(0.3, -0.1);
        c1[(1, 0)] = C64::new(-0.2, 0.05);
        p.set_coeff(1, c1.clone());
        p.set_coeff(-1, c1.map(|z| z.conj()));
        let mut c0 = DMatrix::zeros(2, 2);
        c0[(0, 1)] = C64::new(1.5, 0.0);
        p.set_coeff(0, c0);

        for theta in [0.0, 0.4, 1.9, 5.0] {
            let real = p.eval_real(theta);
            let cplx = p.eval_complex(theta);
            for i in 0..2 {
                for j in 0..2 {
                    assert_relative_eq!(real[(i, j)], cplx[(i, j)].re, epsilon = 1e-13);
                    assert!(cplx[(i, j)].im.abs() < 1e-13);
                }
            }
        }
        assert!(p.conjugate_symmetry_error() < 1e-15);
    }

    #[test]
    fn derivative_coefficients() {
        let omega = 100.0;
        let mut p = PeriodicMatrix::zeros(1, 1, 1, omega);
        p.set_coeff(1, DMatrix::from_element(1, 1, C64::new(0.5, 0.0)));
        p.set_coeff(-1, DMatrix::from_element(1, 1, C64::new(0.5, 0.0)));
        let d = p.derivative();
        // d/dt cos(ωt) = -ω sin(ωt): at θ=π/2 value -ω
        let v = d.eval_real(std::f64::consts::FRAC_PI_2);
        assert_relative_eq!(v[(0, 0)], -omega, max_relative = 1e-12);
    }

    #[test]
    fn serialization_roundtrip() {
        let mut p = PeriodicMatrix::zeros(2, 3, 1, 314.0);
        p.set_coeff(0, DMatrix::from_fn(2, 3, |i, j| C64::new(i as f64, j as f64)));
        p.set_coeff(1, DMatrix::from_element(2, 3, C64::new(0.1, -0.2)));
        let json = serde_json::to_string(&p).unwrap();
        let back: PeriodicMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}
