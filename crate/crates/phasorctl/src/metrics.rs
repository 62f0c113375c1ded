//! Distortion metrics over sliding-window phasors.
//!
//! ```text
//! THD(t) = √( Σ_{k=2..kmax} |X_k(t)|² ) / |X_1(t)|
//! HC(t)  = Σ_{k=1..kmax} 2|X_k(t)|        (one-sided, real signals)
//! ```
//!
//! `HC` quantifies ripple on nominally constant (DC-side) signals, hence the
//! doubling of the one-sided magnitudes so a ripple `a·cos(kωt)` reports `a`.

use crate::phasor::{sliding_fourier, PhasorError, SampledSignal};

pub const DEFAULT_K_MAX: usize = 25;

/// Fraction of full scale below which the fundamental is considered absent
/// and THD reports undefined instead of dividing.
const FUNDAMENTAL_FLOOR: f64 = 1e-9;

fn channel_trajectory(
    values: &[f64],
    ts: f64,
    omega: f64,
    k_max: usize,
) -> Result<(usize, Vec<Vec<f64>>), PhasorError> {
    let period = 2.0 * std::f64::consts::PI / omega;
    let timestamps: Vec<f64> = (0..values.len()).map(|i| i as f64 * ts).collect();
    let sig = SampledSignal::single(timestamps, values.to_vec())?;
    let traj = sliding_fourier(&sig, period, k_max)?;
    let offset = values.len() - traj.len();
    // magnitudes[k][sample]
    let mags = (0..=k_max)
        .map(|k| traj.samples.iter().map(|pv| pv.coeff(0, k as i64).norm()).collect())
        .collect();
    Ok((offset, mags))
}

/// Total harmonic distortion series, aligned with the input samples; `None`
/// before the first full window or when the fundamental is below scale.
pub fn thd_series(
    values: &[f64],
    ts: f64,
    omega: f64,
    k_max: usize,
) -> Result<Vec<Option<f64>>, PhasorError> {
    let (offset, mags) = channel_trajectory(values, ts, omega, k_max)?;
    let full_scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = vec![None; offset];
    for s in 0..mags[0].len() {
        let fundamental = mags[1][s];
        if fundamental < FUNDAMENTAL_FLOOR * full_scale.max(f64::MIN_POSITIVE) {
            out.push(None);
            continue;
        }
        let harmonics: f64 = (2..=k_max).map(|k| mags[k][s] * mags[k][s]).sum();
        out.push(Some(harmonics.sqrt() / fundamental));
    }
    Ok(out)
}

/// Harmonic-content series for DC-side signals.
pub fn hc_series(
    values: &[f64],
    ts: f64,
    omega: f64,
    k_max: usize,
) -> Result<Vec<Option<f64>>, PhasorError> {
    let (offset, mags) = channel_trajectory(values, ts, omega, k_max)?;
    let mut out = vec![None; offset];
    for s in 0..mags[0].len() {
        out.push(Some((1..=k_max).map(|k| 2.0 * mags[k][s]).sum()));
    }
    Ok(out)
}

/// |X_k(t)| series for one channel.
pub fn phasor_magnitude_series(
    values: &[f64],
    ts: f64,
    omega: f64,
    k: usize,
) -> Result<Vec<Option<f64>>, PhasorError> {
    let (offset, mags) = channel_trajectory(values, ts, omega, k)?;
    let mut out = vec![None; offset];
    for s in 0..mags[0].len() {
        out.push(Some(mags[k][s]));
    }
    Ok(out)
}

/// Mean of the defined tail of a metric series over the trailing window
/// `[t_end - span, t_end]` (sample count based).
pub fn steady_tail_mean(series: &[Option<f64>], tail: usize) -> Option<f64> {
    let vals: Vec<f64> = series.iter().rev().take(tail).filter_map(|v| *v).collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}
