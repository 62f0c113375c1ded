//! Cascaded PI comparison controller with optional 150 Hz notch.
//!
//! Outer loop regulates the capacitor energy `E = C v_dc²/2` (PI on the
//! filtered reference energy, plus a feedforward of its derivative); the
//! power command maps to a d-axis current reference; inner per-axis current
//! PIs with grid-voltage and cross-coupling feedforward produce the duty.
//! The rotating frame here is the amplitude-invariant one of the textbook dq
//! model. Without the notch this scheme propagates DC-side harmonic content
//! into the AC current, which is the behavior the harmonic controller is
//! compared against.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::converter::{inverse_park_amplitude, rot90, ConverterParams, StateAbc};

/// Gains and filter settings of the cascade.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PiCascadeConfig {
    pub kp_i: f64,
    pub ki_i: f64,
    pub kp_v: f64,
    pub ki_v: f64,
    /// Reference prefilter corner (rad/s).
    pub omega_cons: f64,
    /// Prefilter damping ratio.
    pub prefilter_zeta: f64,
    pub notch_enabled: bool,
    /// Notch center (rad/s).
    pub notch_omega: f64,
    pub notch_zeta: f64,
    /// Capacitance used by the energy loop (from the plant parameters).
    pub c: f64,
    pub l: f64,
    pub omega: f64,
    pub e_rms: f64,
}

impl PiCascadeConfig {
    /// Published tuning: current loop `K_P = L·6280`, `K_I = K_P·6280`;
    /// voltage loop `K_P = 2·0.707·627`, `K_I = K_P·627`; prefilter at
    /// 62 rad/s; notch at 150 Hz.
    pub fn tuned(p: &ConverterParams, notch_enabled: bool) -> Self {
        let kp_i = p.l * 6280.0;
        let kp_v = 2.0 * 0.707 * 627.0;
        Self {
            kp_i,
            ki_i: kp_i * 6280.0,
            kp_v,
            ki_v: kp_v * 627.0,
            omega_cons: 62.0,
            prefilter_zeta: 0.707,
            notch_enabled,
            notch_omega: 2.0 * std::f64::consts::PI * 150.0,
            // 0.6 keeps the 50 Hz passband gain above 0.9 while attenuating
            // the center by orders of magnitude
            notch_zeta: 0.6,
            c: p.c,
            l: p.l,
            omega: p.omega,
            e_rms: p.e_rms,
        }
    }

    pub fn validate(&self) -> bool {
        [self.kp_i, self.ki_i, self.kp_v, self.ki_v, self.omega_cons].iter().all(|g| *g > 0.0)
    }
}

/// Discrete biquad (direct form II transposed).
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    s: [f64; 2],
}

impl Biquad {
    /// Notch `(s² + ωn²)/(s² + 2ζωn s + ωn²)` discretized by the bilinear
    /// transform with frequency prewarping at ωn.
    pub fn notch(omega_n: f64, zeta: f64, ts: f64) -> Self {
        let k = omega_n / (omega_n * ts / 2.0).tan();
        let k2 = k * k;
        let w2 = omega_n * omega_n;
        let a0 = k2 + 2.0 * zeta * omega_n * k + w2;
        Self {
            b: [(k2 + w2) / a0, 2.0 * (w2 - k2) / a0, (k2 + w2) / a0],
            a: [2.0 * (w2 - k2) / a0, (k2 - 2.0 * zeta * omega_n * k + w2) / a0],
            s: [0.0, 0.0],
        }
    }

    pub fn step(&mut self, u: f64) -> f64 {
        let y = self.b[0] * u + self.s[0];
        self.s[0] = self.b[1] * u - self.a[0] * y + self.s[1];
        self.s[1] = self.b[2] * u - self.a[1] * y;
        y
    }

    /// Magnitude of the discrete frequency response at `omega` rad/s.
    pub fn gain_at(&self, omega: f64, ts: f64) -> f64 {
        use crate::C64;
        let z = C64::new(0.0, -omega * ts).exp();
        let num = C64::new(self.b[0], 0.0) + z * self.b[1] + z * z * self.b[2];
        let den = C64::new(1.0, 0.0) + z * self.a[0] + z * z * self.a[1];
        (num / den).norm()
    }
}

/// Mutable state of the cascade.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PiCascadeState {
    /// Prefilter states (value, derivative).
    pub vf: f64,
    pub vf_dot: f64,
    pub vf_initialized: bool,
    /// Energy-loop integrator.
    pub int_v: f64,
    /// Current-loop integrators (d, q).
    pub int_i: Vector2<f64>,
    /// Feedforward derivative filter state.
    pub deriv_state: f64,
    pub deriv_initialized: bool,
    pub notch: Biquad,
    /// True when the last output hit a duty bound (freezes integrators).
    pub saturated: bool,
}

impl PiCascadeState {
    pub fn new(cfg: &PiCascadeConfig) -> Self {
        Self {
            notch: Biquad::notch(cfg.notch_omega, cfg.notch_zeta, 50e-6),
            ..Default::default()
        }
    }

    pub fn with_ts(cfg: &PiCascadeConfig, ts: f64) -> Self {
        Self { notch: Biquad::notch(cfg.notch_omega, cfg.notch_zeta, ts), ..Default::default() }
    }
}

/// Power command to current reference: `i_d_ref = P / ((3/2)·e_d_eff)`,
/// `i_q_ref = 0`. The effective voltage is the magnitude of the d-axis EMF
/// (nominally `√2·E_rms`), signed so positive power draws positive `i_d`.
pub fn power_to_current_ref(p_f: f64, e_dq: &Vector2<f64>) -> Vector2<f64> {
    let e_eff = (-e_dq[0]).max(1.0);
    Vector2::new(p_f / (1.5 * e_eff), 0.0)
}

/// One control step of the cascade. `e_dq` is the measured grid EMF in the
/// amplitude-invariant rotating frame at `theta_hat`.
pub fn pi_baseline_step(
    x: &StateAbc,
    e_dq: &Vector2<f64>,
    theta_hat: f64,
    v_ref: f64,
    cfg: &PiCascadeConfig,
    state: &mut PiCascadeState,
    ts: f64,
) -> Vector3<f64> {
    // reference prefilter (2nd order, RK4 on held input)
    if !state.vf_initialized {
        state.vf = v_ref;
        state.vf_initialized = true;
    }
    {
        let wc = cfg.omega_cons;
        let zeta = cfg.prefilter_zeta;
        let f = |y: f64, yd: f64| (yd, wc * wc * (v_ref - y) - 2.0 * zeta * wc * yd);
        let (k1, k1d) = f(state.vf, state.vf_dot);
        let (k2, k2d) = f(state.vf + 0.5 * ts * k1, state.vf_dot + 0.5 * ts * k1d);
        let (k3, k3d) = f(state.vf + 0.5 * ts * k2, state.vf_dot + 0.5 * ts * k2d);
        let (k4, k4d) = f(state.vf + ts * k3, state.vf_dot + ts * k3d);
        state.vf += ts / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        state.vf_dot += ts / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d);
    }

    let e_ref = 0.5 * cfg.c * state.vf * state.vf;
    let e_meas = 0.5 * cfg.c * x.v_dc * x.v_dc;
    let e_err = e_ref - e_meas;

    // energy PI with conditional integration
    if !state.saturated {
        state.int_v += cfg.ki_v * e_err * ts;
    }
    let p_cmd = cfg.kp_v * e_err + state.int_v;

    // feedforward: filtered derivative of the reference energy
    if !state.deriv_initialized {
        state.deriv_state = e_ref;
        state.deriv_initialized = true;
    }
    let pole = 10.0 * cfg.omega_cons;
    let p_r = pole * (e_ref - state.deriv_state);
    state.deriv_state += ts * p_r;

    let p_total = p_cmd + p_r;
    let p_f = if cfg.notch_enabled { state.notch.step(p_total) } else { p_total };

    let i_ref = power_to_current_ref(p_f, e_dq);

    // rotating-frame currents (amplitude-invariant)
    let i_dq = crate::converter::park_amplitude(&x.i_abc, theta_hat);
    let i_err = i_ref - i_dq;
    if !state.saturated {
        state.int_i += cfg.ki_i * i_err * ts;
    }
    let u_pi = cfg.kp_i * i_err + state.int_i;

    // v_conv = u + e + LωR i decouples the axes; d = -v_conv / v_dc
    let v_conv = u_pi + e_dq + cfg.l * cfg.omega * rot90() * i_dq;
    let v_bus = x.v_dc.max(10.0);
    let d_dq = -v_conv / v_bus;
    let d_raw = Vector3::from_element(0.5) + inverse_park_amplitude(&d_dq, theta_hat);

    let d = Vector3::new(
        d_raw[0].clamp(0.0, 1.0),
        d_raw[1].clamp(0.0, 1.0),
        d_raw[2].clamp(0.0, 1.0),
    );
    state.saturated = (0..3).any(|i| (d[i] - d_raw[i]).abs() > 1e-12);
    d
}
