//! Periodic equilibrium of the converter and the lifted harmonic model.
//!
//! The nominal operating point fixes `v_dc = v_dc_ref`, unity power factor
//! (`i_q = 0`) and a 0.5 zero-sequence duty. Solving the rotating-frame steady
//! state gives `(i_d, d_d, d_q)`; the corresponding phasors
//!
//! ```text
//! I_a1 = (i_d + j i_q)/√6,   D_a0 = 0.5,   D_a1 = (d_d + j d_q)/√6,
//! X_b = S_{-2π/3} X_a,       X_c = S_{2π/3} X_a
//! ```
//!
//! form a constant triple `(X^e, D^e, V^e)` that satisfies the harmonic
//! stationarity equation `0 = (A - N)X^e + G(X^e)D^e + B V^e` exactly: the
//! time-domain trajectory is band-limited, so truncation introduces no error.

use nalgebra::{DMatrix, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::converter::{a_matrix, a_of_duty, c33, inverse_park, ConverterParams, StateAbc};
use crate::phasor::PhasorVector;
use crate::toeplitz::ToeplitzOperator;
use crate::C64;

const SQRT6: f64 = 2.449_489_742_783_178;

#[derive(Debug, Error)]
pub enum SetpointError {
    #[error("infeasible setpoint: power demand exceeds capability (discriminant {discriminant:.3e})")]
    Infeasible { discriminant: f64 },
    #[error("infeasible setpoint: equilibrium duty leaves [0,1]^3 (range {min:.3}..{max:.3})")]
    DutyOutOfRange { min: f64, max: f64 },
}

/// Nominal periodic operating point in rotating-frame, time and phasor form.
///
/// Rotating-frame values use the [`crate::converter::park`] scaling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Setpoint {
    pub i_d: f64,
    pub i_q: f64,
    pub d_d: f64,
    pub d_q: f64,
    pub e_d: f64,
    pub v_dc: f64,
    pub i_dc: f64,
    /// Extra programmable load current folded into the equilibrium.
    pub i_sink_offset: f64,
    pub omega: f64,
    /// State phasors (I_a, I_b, I_c, V_dc).
    pub x_phasors: PhasorVector,
    /// Duty phasors (D_a, D_b, D_c).
    pub d_phasors: PhasorVector,
    /// Input phasors (E_a, E_b, E_c, I_dc).
    pub v_phasors: PhasorVector,
}

impl Setpoint {
    /// Time evaluator for the equilibrium state at electrical angle θ.
    pub fn x_at(&self, theta: f64) -> StateAbc {
        StateAbc {
            i_abc: inverse_park(&Vector2::new(self.i_d, self.i_q), theta),
            v_dc: self.v_dc,
        }
    }

    /// Time evaluator for the equilibrium duty at electrical angle θ.
    pub fn d_at(&self, theta: f64) -> Vector3<f64> {
        Vector3::from_element(0.5) + inverse_park(&Vector2::new(self.d_d, self.d_q), theta)
    }

    /// Time-domain error-dynamics matrix `A + A(d^e(θ))`.
    pub fn a_cl_time(&self, theta: f64, p: &ConverterParams) -> Matrix4<f64> {
        a_matrix(p) + a_of_duty(&self.d_at(theta), p)
    }
}

fn balanced_channel_phasors(x_a: &[(i64, C64)], shift: f64, h: usize) -> Vec<(i64, C64)> {
    x_a.iter()
        .filter(|(k, _)| k.unsigned_abs() as usize <= h)
        .map(|&(k, v)| (k, v * C64::new(0.0, shift * k as f64).exp()))
        .collect()
}

/// Solve the nominal steady state and populate all phasor forms.
///
/// `i_sink_offset` shifts the equilibrium load current away from
/// `v_dc_ref / R_L`. The quadratic for `i_d` keeps the smaller-magnitude
/// (low-loss) branch.
pub fn compute_setpoint(
    p: &ConverterParams,
    i_sink_offset: f64,
    h: usize,
) -> Result<Setpoint, SetpointError> {
    let e_d = -(3.0f64).sqrt() * p.e_rms;
    let v0 = p.v_dc_ref;
    let i_dc = v0 / p.r_load + i_sink_offset;

    // r i_d² + e_d i_d + v0 i_dc = 0
    let disc = e_d * e_d - 4.0 * p.r * v0 * i_dc;
    if disc < 0.0 {
        return Err(SetpointError::Infeasible { discriminant: disc });
    }
    let sq = disc.sqrt();
    let roots = [(-e_d - sq) / (2.0 * p.r), (-e_d + sq) / (2.0 * p.r)];
    let i_d = if roots[0].abs() <= roots[1].abs() { roots[0] } else { roots[1] };

    let d_d = (-e_d - p.r * i_d) / v0;
    let d_q = -p.l * p.omega * i_d / v0;

    // duty excursion check: d_a(t) = 0.5 + 2|D_a1| cos(...)
    let amp = 2.0 * (d_d * d_d + d_q * d_q).sqrt() / SQRT6;
    if 0.5 - amp < 0.0 || 0.5 + amp > 1.0 {
        return Err(SetpointError::DutyOutOfRange { min: 0.5 - amp, max: 0.5 + amp });
    }

    let shift = 2.0 * std::f64::consts::FRAC_PI_3;

    let i_a1 = C64::new(i_d / SQRT6, 0.0); // (i_d + j i_q)/√6 with i_q = 0
    let mut x_phasors = PhasorVector::zeros(4, h, p.omega);
    let i_a: Vec<(i64, C64)> = vec![(1, i_a1), (-1, i_a1.conj())];
    for (c, sh) in [(0usize, 0.0), (1, -shift), (2, shift)] {
        for (k, v) in balanced_channel_phasors(&i_a, sh, h) {
            x_phasors.set_coeff(c, k, v);
        }
    }
    x_phasors.set_coeff(3, 0, C64::new(v0, 0.0));

    let d_a1 = C64::new(d_d / SQRT6, d_q / SQRT6);
    let mut d_phasors = PhasorVector::zeros(3, h, p.omega);
    let d_a: Vec<(i64, C64)> = vec![(0, C64::new(0.5, 0.0)), (1, d_a1), (-1, d_a1.conj())];
    for (c, sh) in [(0usize, 0.0), (1, -shift), (2, shift)] {
        for (k, v) in balanced_channel_phasors(&d_a, sh, h) {
            d_phasors.set_coeff(c, k, v);
        }
    }

    let e_a1 = C64::new(-p.e_rms * std::f64::consts::SQRT_2 / 2.0, 0.0);
    let mut v_phasors = PhasorVector::zeros(4, h, p.omega);
    let e_a: Vec<(i64, C64)> = vec![(1, e_a1), (-1, e_a1.conj())];
    for (c, sh) in [(0usize, 0.0), (1, -shift), (2, shift)] {
        for (k, v) in balanced_channel_phasors(&e_a, sh, h) {
            v_phasors.set_coeff(c, k, v);
        }
    }
    v_phasors.set_coeff(3, 0, C64::new(i_dc, 0.0));

    Ok(Setpoint {
        i_d,
        i_q: 0.0,
        d_d,
        d_q,
        e_d,
        v_dc: v0,
        i_dc,
        i_sink_offset,
        omega: p.omega,
        x_phasors,
        d_phasors,
        v_phasors,
    })
}

/// Truncated operators of the lifted bilinear model
/// `Ẋ = (A - N)X + G(X)D + B V` and of the error dynamics
/// `Ẋ̄ = (A + A(D^e) - N)X̄ + G(X)D̄`.
#[derive(Debug, Clone)]
pub struct HarmonicModel {
    pub a: ToeplitzOperator,
    pub b: ToeplitzOperator,
    pub n: ToeplitzOperator,
    /// `G(X)` for the state phasors this model was built from.
    pub g: ToeplitzOperator,
    /// `A(D^e)` built from the equilibrium duty phasors.
    pub a_de: ToeplitzOperator,
    pub h: usize,
    pub omega: f64,
}

impl HarmonicModel {
    /// Build all operators at order `h` from state phasors `x` (4 channels)
    /// and equilibrium duty phasors `d_e` (3 channels).
    pub fn build(p: &ConverterParams, x: &PhasorVector, d_e: &PhasorVector, h: usize) -> Self {
        assert_eq!(x.channels(), 4, "state phasors are (I_a, I_b, I_c, V_dc)");
        assert_eq!(d_e.channels(), 3, "duty phasors are (D_a, D_b, D_c)");
        let omega = p.omega;

        let mut a_mat = DMatrix::zeros(4, 4);
        for i in 0..3 {
            a_mat[(i, i)] = -p.r / p.l;
        }
        let a = ToeplitzOperator::constant(&a_mat, h);

        let mut b_mat = DMatrix::zeros(4, 4);
        for i in 0..3 {
            b_mat[(i, i)] = -1.0 / p.l;
        }
        b_mat[(3, 3)] = -1.0 / p.c;
        let b = ToeplitzOperator::constant(&b_mat, h);

        let n = ToeplitzOperator::n_operator(4, h, omega);

        let g = Self::g_operator(p, x, h);

        // A(D^e): upper-right column -T([C33 d^e]_i)/L, lower-left row T(d^e_j)/C
        let lap = c33();
        let mut a_de = ToeplitzOperator::zeros(4, 4, h);
        for i in 0..3 {
            let mut gd = PhasorVector::zeros(1, d_e.order(), omega);
            for k in -(d_e.order() as i64)..=(d_e.order() as i64) {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..3 {
                    acc += C64::new(lap[(i, j)], 0.0) * d_e.coeff(j, k);
                }
                gd.set_coeff(0, k, acc);
            }
            let block = ToeplitzOperator::lift(&gd, h).scale(-1.0 / p.l);
            a_de.embed(i, 3, &block);
        }
        for j in 0..3 {
            // T(d)* = T(d) for the real equilibrium duty
            let dj = d_e.select_channels(j..j + 1);
            let block = ToeplitzOperator::lift(&dj, h).scale(1.0 / p.c);
            a_de.embed(3, j, &block);
        }

        Self { a, b, n, g, a_de, h, omega }
    }

    /// `G(X)` alone (used with time-varying state phasors).
    pub fn g_operator(p: &ConverterParams, x: &PhasorVector, h: usize) -> ToeplitzOperator {
        let lap = c33();
        let v_dc = x.select_channels(3..4);
        let v_lift = ToeplitzOperator::lift(&v_dc, h);
        let mut g = ToeplitzOperator::zeros(4, 3, h);
        for i in 0..3 {
            for j in 0..3 {
                let block = v_lift.scale(-lap[(i, j)] / p.l);
                g.embed(i, j, &block);
            }
        }
        for j in 0..3 {
            let ij = x.select_channels(j..j + 1);
            let block = ToeplitzOperator::lift(&ij, h).scale(1.0 / p.c);
            g.embed(3, j, &block);
        }
        g
    }

    /// Open-loop error-dynamics operator `A + A(D^e) - N`.
    pub fn error_dynamics_operator(&self) -> ToeplitzOperator {
        self.a.add(&self.a_de).sub(&self.n)
    }

    /// Drift operator `A - N` of the bilinear model.
    pub fn drift_operator(&self) -> ToeplitzOperator {
        self.a.sub(&self.n)
    }
}

/// Scaled norm of `(A - N)X^e + G(X^e)D^e + B V^e`.
///
/// The scale is the largest of the three term norms, so an exact equilibrium
/// reports at rounding level regardless of the 1/L, 1/C magnitudes.
pub fn equilibrium_residual(
    x_e: &PhasorVector,
    d_e: &PhasorVector,
    v_e: &PhasorVector,
    p: &ConverterParams,
    h: usize,
) -> f64 {
    let model = HarmonicModel::build(p, &x_e.resized(h), &d_e.resized(h), h);
    let xs = x_e.resized(h).stacked();
    let ds = d_e.resized(h).stacked();
    let vs = v_e.resized(h).stacked();
    let t1 = model.drift_operator().apply(&xs);
    let t2 = model.g.apply(&ds);
    let t3 = model.b.apply(&vs);
    let resid = (&t1 + &t2 + &t3).norm();
    let scale = t1.norm().max(t2.norm()).max(t3.norm()).max(f64::MIN_POSITIVE);
    resid / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::converter::{abc_derivative, dq_derivative, grid_emf, DutyCycle, SQRT_2_3};
    use crate::phasor::{sliding_fourier, SampledSignal};
    use approx::assert_relative_eq;

    fn bench() -> ConverterParams {
        ConverterParams::bench()
    }

    #[test]
    fn steady_state_satisfies_rotating_frame_equations() {
        let p = bench();
        let sp = compute_setpoint(&p, 0.0, 10).unwrap();
        assert_relative_eq!(-p.r * sp.i_d - sp.d_d * sp.v_dc - sp.e_d, 0.0, epsilon = 1e-9);
        assert_relative_eq!(-p.l * p.omega * sp.i_d - sp.d_q * sp.v_dc, 0.0, epsilon = 1e-12);
        assert_relative_eq!(sp.d_d * sp.i_d, sp.i_dc, epsilon = 1e-12);
        assert!(sp.i_d > 0.0 && sp.i_d < 10.0, "low-loss branch: {}", sp.i_d);
    }

    #[test]
    fn steady_state_plugs_into_dq_model() {
        // The textbook dq model lives in the amplitude-invariant frame;
        // rescale and check the derivative vanishes.
        let p = bench();
        let sp = compute_setpoint(&p, 0.0, 4).unwrap();
        let i_cl = Vector2::new(sp.i_d, sp.i_q) * SQRT_2_3;
        let d_cl = Vector2::new(sp.d_d, sp.d_q) * SQRT_2_3;
        let e_cl = Vector2::new(sp.e_d, 0.0) * SQRT_2_3;
        let (di, dv) = dq_derivative(&i_cl, sp.v_dc, &d_cl, &e_cl, sp.i_dc, &p);
        assert!(di.norm() < 1e-10, "di = {di}");
        assert!(dv.abs() < 1e-10, "dv = {dv}");
    }

    #[test]
    fn no_load_limit_gives_zero_current() {
        let p = bench();
        // cancel the resistive load entirely
        let sp = compute_setpoint(&p, -p.v_dc_ref / p.r_load, 4).unwrap();
        assert!(sp.i_d.abs() < 1e-12);
        assert_relative_eq!(sp.d_d * sp.v_dc, -sp.e_d, max_relative = 1e-12);
    }

    #[test]
    fn infeasible_power_demand_is_reported() {
        let p = bench();
        match compute_setpoint(&p, 500.0, 4) {
            Err(SetpointError::Infeasible { .. }) => {}
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn equilibrium_residual_is_tiny_and_sensitive() {
        let p = bench();
        let sp = compute_setpoint(&p, 0.0, 10).unwrap();
        let r = equilibrium_residual(&sp.x_phasors, &sp.d_phasors, &sp.v_phasors, &p, 10);
        assert!(r < 1e-8, "scaled residual {r}");

        // 1% duty perturbation must be clearly visible
        let mut d_bad = sp.d_phasors.clone();
        for c in 0..3 {
            for k in [-1i64, 0, 1] {
                let v = d_bad.coeff(c, k);
                d_bad.set_coeff(c, k, v * 1.01);
            }
        }
        let r_bad = equilibrium_residual(&sp.x_phasors, &d_bad, &sp.v_phasors, &p, 10);
        assert!(r_bad > 1e-3, "perturbed residual {r_bad}");
    }

    #[test]
    fn power_balance_within_a_tenth_of_percent() {
        let p = bench();
        let sp = compute_setpoint(&p, 0.0, 4).unwrap();
        let i_peak = SQRT_2_3 * sp.i_d;
        let i_rms = i_peak / std::f64::consts::SQRT_2;
        let supplied = 3.0 * p.e_rms * i_rms; // unity power factor
        let consumed = sp.v_dc * sp.i_dc + 3.0 * p.r * i_rms * i_rms;
        assert_relative_eq!(supplied, consumed, max_relative = 1e-3);
    }

    #[test]
    fn time_evaluators_match_phasor_forms() {
        let p = bench();
        let sp = compute_setpoint(&p, 0.0, 5).unwrap();
        let period = 2.0 * std::f64::consts::PI / p.omega;
        let dt = period / 600.0;
        let n = (2.5 * period / dt).round() as usize;
        let ts: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let ia: Vec<f64> = ts.iter().map(|&t| sp.x_at(p.omega * t).i_abc[0]).collect();
        let da: Vec<f64> = ts.iter().map(|&t| sp.d_at(p.omega * t)[0]).collect();
        let traj_i =
            sliding_fourier(&SampledSignal::single(ts.clone(), ia).unwrap(), period, 3).unwrap();
        let traj_d = sliding_fourier(&SampledSignal::single(ts, da).unwrap(), period, 3).unwrap();
        let pi = traj_i.samples.last().unwrap();
        let pd = traj_d.samples.last().unwrap();
        // fundamental phasor relation <I_a>_1 = i_d/√6 (i_q = 0)
        assert!((pi.coeff(0, 1) - C64::new(sp.i_d / SQRT6, 0.0)).norm() < 1e-9);
        assert!((pd.coeff(0, 0) - C64::new(0.5, 0.0)).norm() < 1e-9);
        assert!((pd.coeff(0, 1) - C64::new(sp.d_d / SQRT6, sp.d_q / SQRT6)).norm() < 1e-9);
    }

    #[test]
    fn phase_shift_relations_between_channels() {
        let p = bench();
        let sp = compute_setpoint(&p, 0.0, 5).unwrap();
        let shift = 2.0 * std::f64::consts::FRAC_PI_3;
        for k in [-1i64, 0, 1] {
            let sa = sp.x_phasors.coeff(0, k);
            let sb = sp.x_phasors.coeff(1, k);
            let sc = sp.x_phasors.coeff(2, k);
            assert!((sb - sa * C64::new(0.0, -shift * k as f64).exp()).norm() < 1e-14);
            assert!((sc - sa * C64::new(0.0, shift * k as f64).exp()).norm() < 1e-14);
        }
    }

    #[test]
    fn g_of_zero_state_vanishes_and_constant_case_matches() {
        let p = bench();
        let zero = PhasorVector::zeros(4, 3, p.omega);
        let g = HarmonicModel::g_operator(&p, &zero, 3);
        assert!(g.norm() < 1e-15);

        // constant v_dc = V0, i = 0: upper block is -C33 ⊗ V0·I / L, lower 0
        let mut x = PhasorVector::zeros(4, 3, p.omega);
        let v0 = 150.0;
        x.set_coeff(3, 0, C64::new(v0, 0.0));
        let g = HarmonicModel::g_operator(&p, &x, 3);
        let lap = c33();
        for i in 0..3 {
            for j in 0..3 {
                for k in -3i64..=3 {
                    let expect = -lap[(i, j)] * v0 / p.l;
                    assert_relative_eq!(g.entry(i, j, k, k).re, expect, max_relative = 1e-14);
                }
                assert!(g.entry(i, j, 1, 0).norm() < 1e-15);
            }
            assert!(g.entry(3, i, 0, 0).norm() < 1e-15);
        }
    }

    /// Lifting oracle: simulate the abc model through a transient, take the
    /// sliding Fourier decomposition of the trajectory, and check that the
    /// phasors satisfy the lifted bilinear model on the central band.
    #[test]
    fn lifted_model_matches_simulated_trajectory() {
        let p = bench();
        let sp = compute_setpoint(&p, 0.0, 6).unwrap();
        let period = 2.0 * std::f64::consts::PI / p.omega;
        let dt = period / 2000.0;
        let t_end = 0.1;
        let n = (t_end / dt).round() as usize;

        // fixed periodic duty d^e(ωt), start away from the equilibrium
        let mut x = StateAbc { i_abc: Vector3::zeros(), v_dc: 0.75 * p.v_dc_ref };
        let i_dc_const = sp.i_dc;
        let mut ts = Vec::with_capacity(n + 1);
        let mut ch: Vec<Vec<f64>> = vec![Vec::with_capacity(n + 1); 4];
        let push = |t: f64, x: &StateAbc, ts: &mut Vec<f64>, ch: &mut Vec<Vec<f64>>| {
            ts.push(t);
            for i in 0..3 {
                ch[i].push(x.i_abc[i]);
            }
            ch[3].push(x.v_dc);
        };
        push(0.0, &x, &mut ts, &mut ch);
        let f = |t: f64, s: &StateAbc| {
            let d = DutyCycle(sp.d_at(p.omega * t));
            abc_derivative(s, &d, &grid_emf(p.e_rms, p.omega * t), i_dc_const, &p)
        };
        for step in 0..n {
            let t = step as f64 * dt;
            let k1 = f(t, &x);
            let mid1 = StateAbc {
                i_abc: x.i_abc + 0.5 * dt * k1.i_abc,
                v_dc: x.v_dc + 0.5 * dt * k1.v_dc,
            };
            let k2 = f(t + 0.5 * dt, &mid1);
            let mid2 = StateAbc {
                i_abc: x.i_abc + 0.5 * dt * k2.i_abc,
                v_dc: x.v_dc + 0.5 * dt * k2.v_dc,
            };
            let k3 = f(t + 0.5 * dt, &mid2);
            let end = StateAbc { i_abc: x.i_abc + dt * k3.i_abc, v_dc: x.v_dc + dt * k3.v_dc };
            let k4 = f(t + dt, &end);
            x = StateAbc {
                i_abc: x.i_abc
                    + dt / 6.0 * (k1.i_abc + 2.0 * k2.i_abc + 2.0 * k3.i_abc + k4.i_abc),
                v_dc: x.v_dc + dt / 6.0 * (k1.v_dc + 2.0 * k2.v_dc + 2.0 * k3.v_dc + k4.v_dc),
            };
            push(t + dt, &x, &mut ts, &mut ch);
        }

        let h = 6usize;
        let sig = SampledSignal::new(ts.clone(), ch).unwrap();
        let traj = sliding_fourier(&sig, period, h).unwrap();

        let mut v_ph = sp.v_phasors.resized(h);
        v_ph.set_coeff(3, 0, C64::new(i_dc_const, 0.0));
        let d_ph = sp.d_phasors.resized(h);

        let h_central = 3usize;
        let mut worst: f64 = 0.0;
        let stride = 40;
        for idx in (stride..traj.len() - stride).step_by(stride) {
            let xk = &traj.samples[idx];
            let model = HarmonicModel::build(&p, xk, &d_ph, h);
            let rhs = model.drift_operator().apply(&xk.stacked())
                + model.g.apply(&d_ph.stacked())
                + model.b.apply(&v_ph.stacked());
            let xdot = traj.derivative_fd(idx).stacked();
            let scale = rhs.norm().max(1.0);
            for c in 0..4 {
                for k in -(h_central as i64)..=(h_central as i64) {
                    let row = c * (2 * h + 1) + (k + h as i64) as usize;
                    worst = worst.max((xdot[row] - rhs[row]).norm() / scale);
                }
            }
        }
        assert!(worst < 1e-4, "central-band lifting residual {worst}");
    }
}
