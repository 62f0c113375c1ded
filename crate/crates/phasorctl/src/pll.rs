//! Synchronous-reference-frame phase-locked loop.
//!
//! The phase detector is the q-axis component of the measured grid EMF in the
//! estimated frame, normalized by `√2·E_rms`; the loop transfer function is
//!
//! ```text
//! H(s) = 1e5 · (1 + s/(5·2π)) / (1 + s/(500·2π)) · 1/s²
//! ```
//!
//! realized as a bilinear-discretized lead-lag followed by two trapezoidal
//! integrators. The first integrator output is the frequency estimate ω̂,
//! clamped to the configured lock band (clamping, not failure); the second
//! wraps into the phase estimate θ̂ ∈ [0, 2π).

use serde::{Deserialize, Serialize};

use crate::converter::park;
use nalgebra::Vector3;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PllConfig {
    /// Loop gain applied to the normalized phase error.
    pub gain: f64,
    /// Lead corner (rad/s).
    pub lead: f64,
    /// Lag corner (rad/s).
    pub lag: f64,
    /// Frequency clamp band (rad/s).
    pub omega_min: f64,
    pub omega_max: f64,
    /// Normalization voltage (rms).
    pub e_rms: f64,
}

impl PllConfig {
    pub fn standard(e_rms: f64) -> Self {
        Self {
            gain: 1e5,
            lead: 5.0 * std::f64::consts::TAU,
            lag: 500.0 * std::f64::consts::TAU,
            omega_min: 30.0 * std::f64::consts::TAU,
            omega_max: 80.0 * std::f64::consts::TAU,
            e_rms,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PllState {
    pub theta_hat: f64,
    pub omega_hat: f64,
    // lead-lag direct-form state
    eps_prev: f64,
    ll_prev: f64,
    u_prev: f64,
}

impl PllState {
    /// Start locked at `theta0` with nominal frequency.
    pub fn new(theta0: f64, omega0: f64) -> Self {
        Self {
            theta_hat: theta0.rem_euclid(std::f64::consts::TAU),
            omega_hat: omega0,
            eps_prev: 0.0,
            ll_prev: 0.0,
            u_prev: 0.0,
        }
    }
}

/// Advance the PLL by one control period from a grid EMF measurement.
pub fn pll_step(e_abc: &Vector3<f64>, pll: &mut PllState, cfg: &PllConfig, ts: f64) {
    // phase detector: q-axis of the EMF in the estimated frame. With
    // e_a = -√2 E cos θ this is √3 E sin(θ̂ - θ); the sign below closes the
    // loop negatively.
    let dq = park(e_abc, pll.theta_hat);
    let eps = -dq[1] / (std::f64::consts::SQRT_2 * cfg.e_rms);

    // bilinear lead-lag (1 + s/lead)/(1 + s/lag)
    let ka = 2.0 / (cfg.lead * ts);
    let kb = 2.0 / (cfg.lag * ts);
    let den = 1.0 + kb;
    let b0 = (1.0 + ka) / den;
    let b1 = (1.0 - ka) / den;
    let a1 = (1.0 - kb) / den;
    let ll = b0 * eps + b1 * pll.eps_prev - a1 * pll.ll_prev;
    pll.eps_prev = eps;

    let u = cfg.gain * ll;
    // trapezoidal double integrator with frequency clamp
    let omega_new = (pll.omega_hat + 0.5 * ts * (u + pll.u_prev))
        .clamp(cfg.omega_min, cfg.omega_max);
    pll.theta_hat = (pll.theta_hat + 0.5 * ts * (omega_new + pll.omega_hat))
        .rem_euclid(std::f64::consts::TAU);
    pll.omega_hat = omega_new;
    pll.u_prev = u;
    pll.ll_prev = ll;
}
