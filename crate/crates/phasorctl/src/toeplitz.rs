//! Truncated block-Toeplitz operators on phasor sequences.
//!
//! Multiplication by a `T`-periodic matrix function `A(t)` acts on phasor
//! sequences as an infinite block-Toeplitz operator whose (p, q) entry inside
//! block (i, j) is the (p-q)-th Fourier coefficient of `a_ij`. This module
//! stores the truncation to harmonics `|k| ≤ h`: an `m(2h+1) × n(2h+1)`
//! complex matrix laid out as an m×n grid of (2h+1)×(2h+1) scalar Toeplitz
//! blocks (channel-major, matching [`crate::phasor::PhasorVector::stacked`]).
//!
//! Products of truncations are only exact on the central band: if the factors
//! have bandwidths `b_A` and `b_B`, coefficients of the product are exact for
//! `|k| ≤ h - b_A - b_B`. Solvers account for this by solving above the kept
//! order and certifying inter-order consistency.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::periodic::PeriodicMatrix;
use crate::phasor::PhasorVector;
use crate::C64;

#[derive(Debug, Error)]
pub enum ToeplitzError {
    #[error("dimension mismatch: left is {lm}x{ln} blocks at order {lh}, right is {rm}x{rn} at order {rh}")]
    DimensionMismatch { lm: usize, ln: usize, lh: usize, rm: usize, rn: usize, rh: usize },
}

/// Truncated block-Toeplitz operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzOperator {
    block_rows: usize,
    block_cols: usize,
    h: usize,
    data: DMatrix<C64>,
}

impl ToeplitzOperator {
    fn band(h: usize) -> usize {
        2 * h + 1
    }

    pub fn zeros(block_rows: usize, block_cols: usize, h: usize) -> Self {
        let k = Self::band(h);
        Self { block_rows, block_cols, h, data: DMatrix::zeros(block_rows * k, block_cols * k) }
    }

    pub fn block_rows(&self) -> usize {
        self.block_rows
    }

    pub fn block_cols(&self) -> usize {
        self.block_cols
    }

    pub fn order(&self) -> usize {
        self.h
    }

    pub fn data(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<C64> {
        self.data
    }

    /// Scalar entry at block (i, j), harmonic row p, harmonic col q (both in
    /// `-h..=h`).
    pub fn entry(&self, i: usize, j: usize, p: i64, q: i64) -> C64 {
        let k = Self::band(self.h);
        let hp = (p + self.h as i64) as usize;
        let hq = (q + self.h as i64) as usize;
        self.data[(i * k + hp, j * k + hq)]
    }

    fn entry_mut(&mut self, i: usize, j: usize, p: i64, q: i64) -> &mut C64 {
        let k = Self::band(self.h);
        let hp = (p + self.h as i64) as usize;
        let hq = (q + self.h as i64) as usize;
        &mut self.data[(i * k + hp, j * k + hq)]
    }

    /// Toeplitz lift of a (possibly multichannel) phasor vector: block column
    /// of scalar Toeplitz blocks, one per channel. Coefficients outside the
    /// band of `x` are treated as zero.
    pub fn lift(x: &PhasorVector, h_out: usize) -> Self {
        let mut op = Self::zeros(x.channels(), 1, h_out);
        for c in 0..x.channels() {
            for p in -(h_out as i64)..=(h_out as i64) {
                for q in -(h_out as i64)..=(h_out as i64) {
                    *op.entry_mut(c, 0, p, q) = x.coeff_or_zero(c, p - q);
                }
            }
        }
        op
    }

    /// Toeplitz lift of a periodic matrix function given by its Fourier
    /// coefficients.
    pub fn lift_periodic(m: &PeriodicMatrix, h_out: usize) -> Self {
        let mut op = Self::zeros(m.rows(), m.cols(), h_out);
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                for p in -(h_out as i64)..=(h_out as i64) {
                    for q in -(h_out as i64)..=(h_out as i64) {
                        *op.entry_mut(i, j, p, q) = m.coeff_or_zero(p - q)[(i, j)];
                    }
                }
            }
        }
        op
    }

    /// Lift of a constant real matrix: `A ⊗ I`.
    pub fn constant(a: &DMatrix<f64>, h: usize) -> Self {
        let mut op = Self::zeros(a.nrows(), a.ncols(), h);
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                for p in -(h as i64)..=(h as i64) {
                    *op.entry_mut(i, j, p, p) = C64::new(a[(i, j)], 0.0);
                }
            }
        }
        op
    }

    pub fn identity(channels: usize, h: usize) -> Self {
        Self::constant(&DMatrix::identity(channels, channels), h)
    }

    /// The derivative operator `N = Id_n ⊗ diag(jωk)`: block-diagonal, purely
    /// imaginary, skew-adjoint.
    pub fn n_operator(channels: usize, h: usize, omega: f64) -> Self {
        let mut op = Self::zeros(channels, channels, h);
        for c in 0..channels {
            for k in -(h as i64)..=(h as i64) {
                *op.entry_mut(c, c, k, k) = C64::new(0.0, omega * k as f64);
            }
        }
        op
    }

    /// Diagonal phase-shift operator `S_α = diag(e^{jkα})` (single channel).
    /// `F(u(t - αT)) = S_{-2πα} F(u)` for T-periodic `u`.
    pub fn phase_shift(alpha: f64, h: usize) -> Self {
        let mut op = Self::zeros(1, 1, h);
        for k in -(h as i64)..=(h as i64) {
            *op.entry_mut(0, 0, k, k) = C64::new(0.0, alpha * k as f64).exp();
        }
        op
    }

    /// Truncated operator product; exact only on the central band (see module
    /// docs).
    pub fn truncated_product(&self, rhs: &Self) -> Result<Self, ToeplitzError> {
        if self.block_cols != rhs.block_rows || self.h != rhs.h {
            return Err(ToeplitzError::DimensionMismatch {
                lm: self.block_rows,
                ln: self.block_cols,
                lh: self.h,
                rm: rhs.block_rows,
                rn: rhs.block_cols,
                rh: rhs.h,
            });
        }
        Ok(Self {
            block_rows: self.block_rows,
            block_cols: rhs.block_cols,
            h: self.h,
            data: &self.data * &rhs.data,
        })
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!((self.block_rows, self.block_cols, self.h), (rhs.block_rows, rhs.block_cols, rhs.h));
        Self {
            block_rows: self.block_rows,
            block_cols: self.block_cols,
            h: self.h,
            data: &self.data + &rhs.data,
        }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!((self.block_rows, self.block_cols, self.h), (rhs.block_rows, rhs.block_cols, rhs.h));
        Self {
            block_rows: self.block_rows,
            block_cols: self.block_cols,
            h: self.h,
            data: &self.data - &rhs.data,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            block_rows: self.block_rows,
            block_cols: self.block_cols,
            h: self.h,
            data: &self.data * C64::new(s, 0.0),
        }
    }

    pub fn adjoint(&self) -> Self {
        Self {
            block_rows: self.block_cols,
            block_cols: self.block_rows,
            h: self.h,
            data: self.data.adjoint(),
        }
    }

    pub fn apply(&self, v: &DVector<C64>) -> DVector<C64> {
        &self.data * v
    }

    /// Apply to a phasor vector (channel counts must match block columns).
    pub fn apply_phasors(&self, x: &PhasorVector) -> PhasorVector {
        assert_eq!(x.channels(), self.block_cols);
        assert_eq!(x.order(), self.h);
        let y = self.apply(&x.stacked());
        PhasorVector::from_stacked(&y, self.block_rows, self.h, x.omega()).expect("shape by construction")
    }

    /// Worst deviation from the Toeplitz structure: for each block and each
    /// diagonal, entries must agree with the diagonal's central value.
    pub fn structure_error(&self) -> f64 {
        let hh = self.h as i64;
        let mut worst = 0.0f64;
        for i in 0..self.block_rows {
            for j in 0..self.block_cols {
                for d in -(2 * hh)..=(2 * hh) {
                    let mut reference: Option<C64> = None;
                    for p in -hh..=hh {
                        let q = p - d;
                        if q < -hh || q > hh {
                            continue;
                        }
                        let v = self.entry(i, j, p, q);
                        match reference {
                            None => reference = Some(v),
                            Some(r) => worst = worst.max((v - r).norm()),
                        }
                    }
                }
            }
        }
        worst
    }

    /// Central block column read back as phasors: for a lifted operator this
    /// reproduces the Fourier coefficients of the underlying function.
    pub fn central_column(&self, omega: f64) -> PhasorVector {
        assert_eq!(self.block_cols, 1, "central_column expects a block column operator");
        let mut out = PhasorVector::zeros(self.block_rows, self.h, omega);
        for c in 0..self.block_rows {
            for k in -(self.h as i64)..=(self.h as i64) {
                out.set_coeff(c, k, self.entry(c, 0, k, 0));
            }
        }
        out
    }

    /// Fourier coefficients of the periodic matrix represented by this
    /// operator, from the central block column, kept to order `h_keep`.
    pub fn extract_periodic(&self, h_keep: usize, omega: f64) -> PeriodicMatrix {
        let band = h_keep.min(self.h) as i64;
        let mut m = PeriodicMatrix::zeros(self.block_rows, self.block_cols, h_keep, omega);
        for k in -band..=band {
            let mut c = DMatrix::zeros(self.block_rows, self.block_cols);
            for i in 0..self.block_rows {
                for j in 0..self.block_cols {
                    c[(i, j)] = self.entry(i, j, k, 0);
                }
            }
            m.set_coeff(k, c);
        }
        m
    }

    /// Restriction to the central band `|k| ≤ h_new` (equals the lift of the
    /// same function at the smaller order, for exactly Toeplitz operators).
    pub fn sub_truncate(&self, h_new: usize) -> Self {
        assert!(h_new <= self.h);
        let mut op = Self::zeros(self.block_rows, self.block_cols, h_new);
        for i in 0..self.block_rows {
            for j in 0..self.block_cols {
                for p in -(h_new as i64)..=(h_new as i64) {
                    for q in -(h_new as i64)..=(h_new as i64) {
                        *op.entry_mut(i, j, p, q) = self.entry(i, j, p, q);
                    }
                }
            }
        }
        op
    }

    /// Frobenius norm of the central band `|p|,|q| ≤ h_band`.
    pub fn central_band_norm(&self, h_band: usize) -> f64 {
        let hb = h_band.min(self.h) as i64;
        let mut acc = 0.0;
        for i in 0..self.block_rows {
            for j in 0..self.block_cols {
                for p in -hb..=hb {
                    for q in -hb..=hb {
                        acc += self.entry(i, j, p, q).norm_sqr();
                    }
                }
            }
        }
        acc.sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    /// Horizontal concatenation of block columns.
    pub fn hstack(parts: &[&Self]) -> Self {
        assert!(!parts.is_empty());
        let h = parts[0].h;
        let rows = parts[0].block_rows;
        let cols: usize = parts.iter().map(|p| p.block_cols).sum();
        let mut out = Self::zeros(rows, cols, h);
        let k = Self::band(h);
        let mut col0 = 0;
        for p in parts {
            assert_eq!(p.block_rows, rows);
            assert_eq!(p.h, h);
            out.data.view_mut((0, col0 * k), (rows * k, p.block_cols * k)).copy_from(&p.data);
            col0 += p.block_cols;
        }
        out
    }

    /// Vertical concatenation of block rows.
    pub fn vstack(parts: &[&Self]) -> Self {
        assert!(!parts.is_empty());
        let h = parts[0].h;
        let cols = parts[0].block_cols;
        let rows: usize = parts.iter().map(|p| p.block_rows).sum();
        let mut out = Self::zeros(rows, cols, h);
        let k = Self::band(h);
        let mut row0 = 0;
        for p in parts {
            assert_eq!(p.block_cols, cols);
            assert_eq!(p.h, h);
            out.data.view_mut((row0 * k, 0), (p.block_rows * k, cols * k)).copy_from(&p.data);
            row0 += p.block_rows;
        }
        out
    }

    /// Place `block` at block position (i, j) of a larger zero operator.
    pub fn embed(&mut self, i: usize, j: usize, block: &Self) {
        assert_eq!(block.h, self.h);
        let k = Self::band(self.h);
        self.data
            .view_mut((i * k, j * k), (block.block_rows * k, block.block_cols * k))
            .copy_from(&block.data);
    }
}
