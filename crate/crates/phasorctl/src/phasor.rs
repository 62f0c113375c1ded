//! Sliding Fourier decomposition and reconstruction.
//!
//! The k-th phasor of a signal `x` over a trailing window of length `T` is
//!
//! ```text
//! X_k(t) = (1/T) ∫_{t-T}^{t} x(τ) e^{-jωkτ} dτ,     ω = 2π/T
//! ```
//!
//! For a `T`-periodic signal the phasors are constant; during transients they
//! move, which is what makes them usable as a state representation. `x` is
//! recovered exactly from the full phasor sequence as
//! `x(t) = Σ_k X_k(t) e^{jωkt} + (T/2) Ẋ_0(t)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::C64;

#[derive(Debug, Error)]
pub enum PhasorError {
    #[error("signal shorter than one window: {samples} samples, window needs {window}")]
    SignalTooShort { samples: usize, window: usize },
    #[error("non-uniform timestamps: max deviation {deviation:.3e} s exceeds tolerance")]
    NonUniformTimestamps { deviation: f64 },
    #[error("sample spacing {dt:.3e} s does not divide the period {period:.3e} s (mismatch {mismatch:.3e})")]
    SpacingMismatch { dt: f64, period: f64, mismatch: f64 },
    #[error("empty signal")]
    EmptySignal,
    #[error("channel length mismatch: channel {channel} has {len} samples, expected {expected}")]
    ChannelLengthMismatch { channel: usize, len: usize, expected: usize },
    #[error("invalid phasor shape: {0}")]
    InvalidShape(String),
}

/// Complex Fourier coefficients of a multichannel signal over one period.
///
/// Coefficients are stored centered: column `k + h` holds the k-th phasor,
/// `k ∈ [-h, h]`, so conjugate symmetry of real signals is a mirror test.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasorVector {
    omega: f64,
    h: usize,
    /// channels × (2h+1)
    coeffs: DMatrix<C64>,
}

impl PhasorVector {
    pub fn zeros(channels: usize, h: usize, omega: f64) -> Self {
        assert!(omega > 0.0, "omega must be positive");
        assert!(channels > 0, "at least one channel");
        Self { omega, h, coeffs: DMatrix::zeros(channels, 2 * h + 1) }
    }

    pub fn from_coeffs(coeffs: DMatrix<C64>, omega: f64) -> Result<Self, PhasorError> {
        if coeffs.ncols() % 2 == 0 || coeffs.ncols() == 0 {
            return Err(PhasorError::InvalidShape(format!(
                "coefficient matrix needs an odd number of columns, got {}",
                coeffs.ncols()
            )));
        }
        if !(omega > 0.0) {
            return Err(PhasorError::InvalidShape("omega must be positive".into()));
        }
        let h = (coeffs.ncols() - 1) / 2;
        Ok(Self { omega, h, coeffs })
    }

    pub fn channels(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn order(&self) -> usize {
        self.h
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega
    }

    /// k-th phasor of a channel; panics if `|k| > h`.
    pub fn coeff(&self, channel: usize, k: i64) -> C64 {
        assert!(k.unsigned_abs() as usize <= self.h, "harmonic index out of range");
        self.coeffs[(channel, (k + self.h as i64) as usize)]
    }

    /// k-th phasor, with coefficients outside the stored band read as zero.
    pub fn coeff_or_zero(&self, channel: usize, k: i64) -> C64 {
        if k.unsigned_abs() as usize > self.h {
            C64::new(0.0, 0.0)
        } else {
            self.coeff(channel, k)
        }
    }

    pub fn set_coeff(&mut self, channel: usize, k: i64, value: C64) {
        assert!(k.unsigned_abs() as usize <= self.h, "harmonic index out of range");
        self.coeffs[(channel, (k + self.h as i64) as usize)] = value;
    }

    /// Max |X(c,-k) - conj(X(c,k))| over all channels and k. Zero (to rounding)
    /// iff the underlying signal is real-valued.
    pub fn conjugate_symmetry_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for c in 0..self.channels() {
            for k in 0..=self.h as i64 {
                let e = (self.coeff(c, -k) - self.coeff(c, k).conj()).norm();
                worst = worst.max(e);
            }
        }
        worst
    }

    /// Σ_k X_k e^{jωkt} per channel (no Ẋ_0 term).
    pub fn eval(&self, t: f64) -> Vec<C64> {
        let base = C64::new(0.0, self.omega * t).exp();
        (0..self.channels())
            .map(|c| {
                let mut acc = self.coeff(c, 0);
                let mut w = C64::new(1.0, 0.0);
                for k in 1..=self.h as i64 {
                    w *= base;
                    acc += self.coeff(c, k) * w + self.coeff(c, -k) * w.conj();
                }
                acc
            })
            .collect()
    }

    /// Channel-major stacked vector: channel 0 coefficients, then channel 1, …
    pub fn stacked(&self) -> DVector<C64> {
        let n = 2 * self.h + 1;
        let mut v = DVector::zeros(self.channels() * n);
        for c in 0..self.channels() {
            for i in 0..n {
                v[c * n + i] = self.coeffs[(c, i)];
            }
        }
        v
    }

    pub fn from_stacked(v: &DVector<C64>, channels: usize, h: usize, omega: f64) -> Result<Self, PhasorError> {
        let n = 2 * h + 1;
        if v.len() != channels * n {
            return Err(PhasorError::InvalidShape(format!(
                "stacked vector has length {}, expected {}",
                v.len(),
                channels * n
            )));
        }
        let mut coeffs = DMatrix::zeros(channels, n);
        for c in 0..channels {
            for i in 0..n {
                coeffs[(c, i)] = v[c * n + i];
            }
        }
        Self::from_coeffs(coeffs, omega)
    }

    /// Same phasors re-centered in a band of order `h_new` (truncating or
    /// zero-padding as needed).
    pub fn resized(&self, h_new: usize) -> Self {
        let mut out = Self::zeros(self.channels(), h_new, self.omega);
        let band = self.h.min(h_new) as i64;
        for c in 0..self.channels() {
            for k in -band..=band {
                out.set_coeff(c, k, self.coeff(c, k));
            }
        }
        out
    }

    /// New vector holding a contiguous subset of channels.
    pub fn select_channels(&self, range: std::ops::Range<usize>) -> Self {
        let mut out = Self::zeros(range.len(), self.h, self.omega);
        for (dst, src) in range.enumerate() {
            for i in 0..(2 * self.h + 1) {
                out.coeffs[(dst, i)] = self.coeffs[(src, i)];
            }
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Serialized form: `{omega, h, channels, re[][], im[][]}`.
#[derive(Serialize, Deserialize)]
struct PhasorVectorRepr {
    omega: f64,
    h: usize,
    channels: usize,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl Serialize for PhasorVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let n = 2 * self.h + 1;
        let row = |c: usize, f: fn(&C64) -> f64| (0..n).map(|i| f(&self.coeffs[(c, i)])).collect();
        let repr = PhasorVectorRepr {
            omega: self.omega,
            h: self.h,
            channels: self.channels(),
            re: (0..self.channels()).map(|c| row(c, |z| z.re)).collect(),
            im: (0..self.channels()).map(|c| row(c, |z| z.im)).collect(),
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PhasorVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = PhasorVectorRepr::deserialize(d)?;
        let n = 2 * repr.h + 1;
        if repr.re.len() != repr.channels || repr.im.len() != repr.channels {
            return Err(D::Error::custom("channel count mismatch"));
        }
        let mut coeffs = DMatrix::zeros(repr.channels, n);
        for c in 0..repr.channels {
            if repr.re[c].len() != n || repr.im[c].len() != n {
                return Err(D::Error::custom("coefficient row length mismatch"));
            }
            for i in 0..n {
                coeffs[(c, i)] = C64::new(repr.re[c][i], repr.im[c][i]);
            }
        }
        PhasorVector::from_coeffs(coeffs, repr.omega).map_err(D::Error::custom)
    }
}

/// Time-stamped sequence of phasor vectors with identical shape.
#[derive(Debug, Clone)]
pub struct PhasorTrajectory {
    pub timestamps: Vec<f64>,
    pub samples: Vec<PhasorVector>,
}

impl PhasorTrajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Finite-difference estimate of Ẋ at sample `idx` (central where
    /// possible, one-sided at the ends).
    pub fn derivative_fd(&self, idx: usize) -> PhasorVector {
        assert!(self.len() >= 2, "need at least two samples for a derivative");
        let last = self.len() - 1;
        let (i0, i1) = if idx == 0 {
            (0, 1)
        } else if idx == last {
            (last - 1, last)
        } else {
            (idx - 1, idx + 1)
        };
        let dt = self.timestamps[i1] - self.timestamps[i0];
        let a = &self.samples[i0];
        let b = &self.samples[i1];
        let mut out = PhasorVector::zeros(a.channels(), a.order(), a.omega());
        for c in 0..a.channels() {
            for k in -(a.order() as i64)..=(a.order() as i64) {
                out.set_coeff(c, k, (b.coeff(c, k) - a.coeff(c, k)) / dt);
            }
        }
        out
    }
}

/// Uniformly sampled multichannel signal.
#[derive(Debug, Clone)]
pub struct SampledSignal {
    pub timestamps: Vec<f64>,
    /// One `Vec<f64>` per channel, each aligned with `timestamps`.
    pub channels: Vec<Vec<f64>>,
}

impl SampledSignal {
    pub fn new(timestamps: Vec<f64>, channels: Vec<Vec<f64>>) -> Result<Self, PhasorError> {
        if timestamps.len() < 2 || channels.is_empty() {
            return Err(PhasorError::EmptySignal);
        }
        for (c, ch) in channels.iter().enumerate() {
            if ch.len() != timestamps.len() {
                return Err(PhasorError::ChannelLengthMismatch {
                    channel: c,
                    len: ch.len(),
                    expected: timestamps.len(),
                });
            }
        }
        Ok(Self { timestamps, channels })
    }

    pub fn single(timestamps: Vec<f64>, values: Vec<f64>) -> Result<Self, PhasorError> {
        Self::new(timestamps, vec![values])
    }

    fn uniform_dt(&self) -> Result<f64, PhasorError> {
        let n = self.timestamps.len();
        let dt = (self.timestamps[n - 1] - self.timestamps[0]) / (n - 1) as f64;
        let mut worst = 0.0f64;
        for i in 1..n {
            worst = worst.max(((self.timestamps[i] - self.timestamps[i - 1]) - dt).abs());
        }
        if worst > 1e-6 * dt.abs().max(1e-300) {
            return Err(PhasorError::NonUniformTimestamps { deviation: worst });
        }
        Ok(dt)
    }
}

/// Sliding Fourier decomposition of a uniformly sampled real signal.
///
/// Phasors are computed by trapezoidal quadrature over the trailing window of
/// length `period`; one output sample is produced per input sample from the
/// first full window onward. The sample spacing must divide the period to
/// within 0.1%.
pub fn sliding_fourier(
    signal: &SampledSignal,
    period: f64,
    h: usize,
) -> Result<PhasorTrajectory, PhasorError> {
    let dt = signal.uniform_dt()?;
    if dt <= 0.0 {
        return Err(PhasorError::NonUniformTimestamps { deviation: dt });
    }
    let n_win = (period / dt).round() as usize;
    let mismatch = (n_win as f64 * dt - period).abs();
    if n_win == 0 || mismatch > 1e-3 * period {
        return Err(PhasorError::SpacingMismatch { dt, period, mismatch });
    }
    let n = signal.timestamps.len();
    if n < n_win + 1 {
        return Err(PhasorError::SignalTooShort { samples: n, window: n_win + 1 });
    }

    let omega = 2.0 * std::f64::consts::PI / period;
    let channels = signal.channels.len();

    // kernel[m][k] = e^{-jωk t_m}, built by recurrence in k for each sample.
    let mut kernel: Vec<Vec<C64>> = Vec::with_capacity(n);
    for &t in &signal.timestamps {
        let base = C64::new(0.0, -omega * t).exp();
        let mut row = Vec::with_capacity(h + 1);
        let mut w = C64::new(1.0, 0.0);
        row.push(w);
        for _ in 1..=h {
            w *= base;
            row.push(w);
        }
        kernel.push(row);
    }

    let mut timestamps = Vec::with_capacity(n - n_win);
    let mut samples = Vec::with_capacity(n - n_win);
    for end in n_win..n {
        let start = end - n_win;
        let mut pv = PhasorVector::zeros(channels, h, omega);
        for (c, ch) in signal.channels.iter().enumerate() {
            for k in 0..=h {
                // trapezoid: half-weight endpoints
                let mut acc = (C64::new(ch[start], 0.0) * kernel[start][k]
                    + C64::new(ch[end], 0.0) * kernel[end][k])
                    * 0.5;
                for m in (start + 1)..end {
                    acc += C64::new(ch[m], 0.0) * kernel[m][k];
                }
                let xk = acc * (dt / period);
                pv.set_coeff(c, k as i64, xk);
                if k > 0 {
                    pv.set_coeff(c, -(k as i64), xk.conj());
                }
            }
        }
        timestamps.push(signal.timestamps[end]);
        samples.push(pv);
    }
    Ok(PhasorTrajectory { timestamps, samples })
}

/// Inverse of the sliding decomposition:
/// `x(t) = Σ_k X_k e^{jωkt} + (T/2)·Ẋ_0`, one complex value per channel.
///
/// Callers with real signals take the real part; for a correctly formed
/// phasor vector the imaginary part is at rounding level.
pub fn reconstruct(x: &PhasorVector, dx0: &[C64], t: f64) -> Vec<C64> {
    assert_eq!(dx0.len(), x.channels(), "one Ẋ_0 entry per channel");
    let half_period = x.period() / 2.0;
    x.eval(t)
        .into_iter()
        .zip(dx0.iter())
        .map(|(v, d)| v + d * half_period)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const TWO_PI: f64 = std::f64::consts::TAU;

    fn sample(f: impl Fn(f64) -> f64, t_end: f64, dt: f64) -> SampledSignal {
        let n = (t_end / dt).round() as usize + 1;
        let ts: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let vals = ts.iter().map(|&t| f(t)).collect();
        SampledSignal::single(ts, vals).unwrap()
    }

    #[test]
    fn constant_signal_has_only_dc_phasor() {
        let period = 0.02;
        let sig = sample(|_| 3.25, 3.0 * period, period / 400.0);
        let traj = sliding_fourier(&sig, period, 3).unwrap();
        for pv in &traj.samples {
            assert_relative_eq!(pv.coeff(0, 0).re, 3.25, max_relative = 1e-12);
            assert!(pv.coeff(0, 0).im.abs() < 1e-12);
            for k in 1..=3 {
                assert!(pv.coeff(0, k).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn cosine_decomposes_to_half_at_first_order() {
        let period = 0.02;
        let omega = TWO_PI / period;
        let sig = sample(|t| (omega * t).cos(), 2.0 * period, period / 400.0);
        let traj = sliding_fourier(&sig, period, 2).unwrap();
        let pv = traj.samples.last().unwrap();
        assert_relative_eq!(pv.coeff(0, 1).re, 0.5, max_relative = 1e-9);
        assert!(pv.coeff(0, 1).im.abs() < 1e-9);
        assert_relative_eq!(pv.coeff(0, -1).re, 0.5, max_relative = 1e-9);
        assert!(pv.coeff(0, 0).norm() < 1e-9);
        assert!(pv.coeff(0, 2).norm() < 1e-9);
    }

    #[test]
    fn squared_cosine_matches_trig_identity() {
        // cos²(ωt) = 1/2 + cos(2ωt)/2, so X_0 = 1/2 and X_{±2} = 1/4.
        let period = 0.02;
        let omega = TWO_PI / period;
        let sig = sample(|t| (omega * t).cos().powi(2), 2.0 * period, period / 400.0);
        let traj = sliding_fourier(&sig, period, 3).unwrap();
        let pv = traj.samples.last().unwrap();
        assert_relative_eq!(pv.coeff(0, 0).re, 0.5, max_relative = 1e-9);
        assert_relative_eq!(pv.coeff(0, 2).re, 0.25, max_relative = 1e-9);
        assert_relative_eq!(pv.coeff(0, -2).re, 0.25, max_relative = 1e-9);
        assert!(pv.coeff(0, 1).norm() < 1e-9);
        assert!(pv.coeff(0, 3).norm() < 1e-9);
    }

    #[test]
    fn window_longer_than_signal_is_refused() {
        let period = 0.02;
        let sig = sample(|t| t, 0.5 * period, period / 100.0);
        match sliding_fourier(&sig, period, 2) {
            Err(PhasorError::SignalTooShort { .. }) => {}
            other => panic!("expected SignalTooShort, got {other:?}"),
        }
    }

    #[test]
    fn non_uniform_timestamps_are_refused() {
        let mut ts: Vec<f64> = (0..500).map(|i| i as f64 * 1e-4).collect();
        ts[250] += 3e-5;
        let vals = vec![1.0; ts.len()];
        let sig = SampledSignal::single(ts, vals).unwrap();
        match sliding_fourier(&sig, 0.02, 2) {
            Err(PhasorError::NonUniformTimestamps { .. }) => {}
            other => panic!("expected NonUniformTimestamps, got {other:?}"),
        }
    }

    #[test]
    fn reconstruct_constant_and_cosine_values() {
        let omega = TWO_PI / 0.02;
        let mut pv = PhasorVector::zeros(1, 2, omega);
        pv.set_coeff(0, 0, C64::new(4.0, 0.0));
        let v = reconstruct(&pv, &[C64::new(0.0, 0.0)], 0.123);
        assert_relative_eq!(v[0].re, 4.0, max_relative = 1e-14);

        let mut pv = PhasorVector::zeros(1, 2, omega);
        pv.set_coeff(0, 1, C64::new(0.5, 0.0));
        pv.set_coeff(0, -1, C64::new(0.5, 0.0));
        let v = reconstruct(&pv, &[C64::new(0.0, 0.0)], 0.0);
        assert_relative_eq!(v[0].re, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn roundtrip_on_band_limited_signal() {
        let period = 0.02;
        let omega = TWO_PI / period;
        let f = |t: f64| {
            1.3 + 0.8 * (omega * t + 0.4).cos() + 0.25 * (3.0 * omega * t - 1.1).cos()
                + 0.1 * (5.0 * omega * t).sin()
        };
        let dt = period / 512.0;
        let sig = sample(f, 4.0 * period, dt);
        let traj = sliding_fourier(&sig, period, 6).unwrap();
        let mid = traj.len() / 2;
        let dx = traj.derivative_fd(mid);
        let dx0 = vec![dx.coeff(0, 0)];
        let t = traj.timestamps[mid];
        let rec = reconstruct(&traj.samples[mid], &dx0, t);
        assert!(rec[0].im.abs() < 1e-9, "imaginary residue {}", rec[0].im);
        assert_relative_eq!(rec[0].re, f(t), max_relative = 1e-6);
    }

    #[test]
    fn roundtrip_ramp_exercises_dx0_term() {
        // For x(t) = a·t the k≠0 phasor contributions cancel pairwise and the
        // (T/2)Ẋ_0 term carries the window-lag correction exactly; remaining
        // error is trapezoidal quadrature on the oscillatory integrands.
        let period = 0.02;
        let a = 7.0;
        let dt = period / 1024.0;
        let sig = sample(|t| a * t, 4.0 * period, dt);
        let traj = sliding_fourier(&sig, period, 4).unwrap();
        let mid = traj.len() / 2;
        let dx = traj.derivative_fd(mid);
        let t = traj.timestamps[mid];
        let rec = reconstruct(&traj.samples[mid], &[dx.coeff(0, 0)], t);
        assert_relative_eq!(rec[0].re, a * t, max_relative = 1e-6);
    }

    #[test]
    fn conjugate_symmetry_of_real_signals() {
        let period = 0.02;
        let omega = TWO_PI / period;
        let sig = sample(
            |t| 0.3 + (omega * t).cos() - 0.4 * (2.0 * omega * t + 0.7).sin(),
            2.0 * period,
            period / 400.0,
        );
        let traj = sliding_fourier(&sig, period, 5).unwrap();
        for pv in &traj.samples {
            assert!(pv.conjugate_symmetry_error() < 1e-14);
        }
    }

    #[test]
    fn serialization_roundtrip() {
        let omega = TWO_PI / 0.02;
        let mut pv = PhasorVector::zeros(2, 2, omega);
        pv.set_coeff(0, 1, C64::new(0.5, -0.25));
        pv.set_coeff(0, -1, C64::new(0.5, 0.25));
        pv.set_coeff(1, 0, C64::new(-3.0, 0.0));
        let json = serde_json::to_string(&pv).unwrap();
        assert!(json.contains("\"omega\""));
        assert!(json.contains("\"re\""));
        let back: PhasorVector = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pv);
    }
}
