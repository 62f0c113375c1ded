//! Physical parameters and time-domain models of the AC/DC converter.
//!
//! Average model in the abc frame (state `x = [i_abc, v_dc]`, control `d_abc`,
//! inputs `e_abc`, `i_dc`):
//!
//! ```text
//! L di_abc/dt = -r i_abc - C33 d_abc v_dc - e_abc
//! C dv_dc/dt  =  d_abc' i_abc - i_dc
//! ```
//!
//! `C33` is the Laplacian removing the zero sequence; its zero row sums keep
//! `i_a + i_b + i_c = 0` under balanced operation. The textbook dq model uses
//! the amplitude-invariant rotating frame; the phasor-facing [`park`] pair is
//! scaled so the fundamental phasor relation `<I_a>_1 = (i_d + j i_q)/√6`
//! holds, which the setpoint construction relies on.

use nalgebra::{Matrix2, Matrix3, Matrix3x4, Matrix4x3, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SQRT_2_3: f64 = 0.816_496_580_927_726_1; // √(2/3)

#[derive(Debug, Error)]
pub enum ConverterError {
    #[error("parameter {name} must be strictly positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
}

/// Electrical constants of the converter and its grid/load interface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConverterParams {
    /// Phase resistance, Ω.
    pub r: f64,
    /// Phase inductance, H.
    pub l: f64,
    /// DC bus capacitance, F.
    pub c: f64,
    /// Nominal load resistance, Ω.
    pub r_load: f64,
    /// AC rms phase voltage, V.
    pub e_rms: f64,
    /// Grid pulsation, rad/s.
    pub omega: f64,
    /// DC bus reference voltage, V.
    pub v_dc_ref: f64,
}

impl ConverterParams {
    /// Reference 45 V / 150 V test-bench values.
    pub fn bench() -> Self {
        Self {
            r: 1.15,
            l: 122e-6,
            c: 100e-6,
            r_load: 120.0,
            e_rms: 45.0,
            omega: 2.0 * std::f64::consts::PI * 50.0,
            v_dc_ref: 150.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConverterError> {
        let checks = [
            ("r", self.r),
            ("L", self.l),
            ("C", self.c),
            ("R_L", self.r_load),
            ("E_rms", self.e_rms),
            ("omega", self.omega),
            ("v_dc_ref", self.v_dc_ref),
        ];
        for (name, value) in checks {
            if !(value > 0.0) {
                return Err(ConverterError::NonPositiveParameter { name, value });
            }
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        std::f64::consts::TAU / self.omega
    }
}

/// Zero-sequence-removing Laplacian.
pub fn c33() -> Matrix3<f64> {
    let a = 2.0 / 3.0;
    let b = -1.0 / 3.0;
    Matrix3::new(a, b, b, b, a, b, b, b, a)
}

/// 90° rotation `R = [[0, -1], [1, 0]]`.
pub fn rot90() -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, 1.0, 0.0)
}

/// Converter state: phase currents and DC bus voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateAbc {
    pub i_abc: Vector3<f64>,
    pub v_dc: f64,
}

impl StateAbc {
    pub fn zero() -> Self {
        Self { i_abc: Vector3::zeros(), v_dc: 0.0 }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.i_abc[0], self.i_abc[1], self.i_abc[2], self.v_dc)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self { i_abc: Vector3::new(v[0], v[1], v[2]), v_dc: v[3] }
    }

    pub fn is_finite(&self) -> bool {
        self.i_abc.iter().all(|x| x.is_finite()) && self.v_dc.is_finite()
    }
}

/// Per-arm duty cycle; controller outputs live on the plane Σd = 1.5 inside
/// [0,1]³.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DutyCycle(pub Vector3<f64>);

impl DutyCycle {
    pub fn balanced() -> Self {
        Self(Vector3::new(0.5, 0.5, 0.5))
    }

    pub fn in_bounds(&self, slack: f64) -> bool {
        self.0.iter().all(|d| (-slack..=1.0 + slack).contains(d))
    }

    pub fn sum(&self) -> f64 {
        self.0[0] + self.0[1] + self.0[2]
    }
}

/// Right-hand side of the abc average model.
pub fn abc_derivative(
    x: &StateAbc,
    d: &DutyCycle,
    e_abc: &Vector3<f64>,
    i_dc: f64,
    p: &ConverterParams,
) -> StateAbc {
    let di = (-p.r * x.i_abc - c33() * d.0 * x.v_dc - e_abc) / p.l;
    let dv = (d.0.dot(&x.i_abc) - i_dc) / p.c;
    StateAbc { i_abc: di, v_dc: dv }
}

/// Right-hand side of the textbook dq model (amplitude-invariant frame):
/// `L di_dq/dt = -r i_dq - LωR i_dq - d_dq v_dc - e_dq`,
/// `C dv_dc/dt = (3/2) d_dq' i_dq - i_dc`.
pub fn dq_derivative(
    i_dq: &Vector2<f64>,
    v_dc: f64,
    d_dq: &Vector2<f64>,
    e_dq: &Vector2<f64>,
    i_dc: f64,
    p: &ConverterParams,
) -> (Vector2<f64>, f64) {
    let di = (-p.r * i_dq - p.l * p.omega * rot90() * i_dq - d_dq * v_dc - e_dq) / p.l;
    let dv = (1.5 * d_dq.dot(i_dq) - i_dc) / p.c;
    (di, dv)
}

fn rotation_columns(theta: f64) -> (Vector3<f64>, Vector3<f64>) {
    let thirds = 2.0 * std::f64::consts::FRAC_PI_3;
    let cos = Vector3::new(theta.cos(), (theta - thirds).cos(), (theta + thirds).cos());
    let sin = Vector3::new(theta.sin(), (theta - thirds).sin(), (theta + thirds).sin());
    (cos, sin)
}

/// Rotating-frame projection used by the controller outputs and the setpoint
/// phasor relations: `s_d = √(2/3) Σ s_i cos θ_i`, `s_q = -√(2/3) Σ s_i sin θ_i`.
///
/// With this scaling a constant `(i_d, i_q)` maps to the fundamental phasor
/// `<I_a>_1 = (i_d + j i_q)/√6`, and `park ∘ inverse_park` is the identity on
/// zero-sequence-free signals.
pub fn park(s_abc: &Vector3<f64>, theta: f64) -> Vector2<f64> {
    let (cos, sin) = rotation_columns(theta);
    Vector2::new(SQRT_2_3 * cos.dot(s_abc), -SQRT_2_3 * sin.dot(s_abc))
}

/// Inverse of [`park`]: `s_i = √(2/3) (s_d cos θ_i - s_q sin θ_i)`.
pub fn inverse_park(s_dq: &Vector2<f64>, theta: f64) -> Vector3<f64> {
    let (cos, sin) = rotation_columns(theta);
    SQRT_2_3 * (cos * s_dq[0] - sin * s_dq[1])
}

/// Amplitude-invariant variant: the frame in which [`dq_derivative`] is
/// expressed (`park_amplitude = √(2/3) · park`). Used to map states and
/// inputs between the abc and dq models.
pub fn park_amplitude(s_abc: &Vector3<f64>, theta: f64) -> Vector2<f64> {
    park(s_abc, theta) * SQRT_2_3
}

pub fn inverse_park_amplitude(s_dq: &Vector2<f64>, theta: f64) -> Vector3<f64> {
    inverse_park(s_dq, theta) / SQRT_2_3
}

/// Balanced grid EMF with `e_a = -√2 E_rms cos θ`.
pub fn grid_emf(e_rms: f64, theta: f64) -> Vector3<f64> {
    let (cos, _) = rotation_columns(theta);
    -std::f64::consts::SQRT_2 * e_rms * cos
}

/// Bilinear input matrix `G(x)`: `G(x) d = [-C33 d v_dc / L ; d' i_abc / C]`.
pub fn g_of_x(x: &StateAbc, p: &ConverterParams) -> Matrix4x3<f64> {
    let top = -c33() * (x.v_dc / p.l);
    let mut g = Matrix4x3::zeros();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&top);
    g.fixed_view_mut::<1, 3>(3, 0).copy_from(&(x.i_abc.transpose() / p.c));
    g
}

/// `G(x)'` as used by the feedback law.
pub fn g_transpose(x: &StateAbc, p: &ConverterParams) -> Matrix3x4<f64> {
    g_of_x(x, p).transpose()
}

/// Constant drift matrix `A = blkdiag(-r/L I3, 0)`.
pub fn a_matrix(p: &ConverterParams) -> nalgebra::Matrix4<f64> {
    let mut a = nalgebra::Matrix4::zeros();
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-(p.r / p.l) * Matrix3::identity()));
    a
}

/// Time-periodic coupling from the equilibrium duty:
/// `A(d^e) = [[0, -C33 d^e / L], [d^e' / C, 0]]`.
pub fn a_of_duty(d_e: &Vector3<f64>, p: &ConverterParams) -> nalgebra::Matrix4<f64> {
    let mut a = nalgebra::Matrix4::zeros();
    let col = -c33() * d_e / p.l;
    a.fixed_view_mut::<3, 1>(0, 3).copy_from(&col);
    a.fixed_view_mut::<1, 3>(3, 0).copy_from(&(d_e.transpose() / p.c));
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector2;

    #[test]
    fn c33_row_sums_vanish() {
        let m = c33();
        for i in 0..3 {
            assert!(m.row(i).sum().abs() < 1e-15);
        }
        // balanced duty produces no current drive
        let v = m * Vector3::new(0.5, 0.5, 0.5);
        assert!(v.norm() < 1e-15);
    }

    #[test]
    fn abc_derivative_zero_cases() {
        let p = ConverterParams::bench();
        let x = StateAbc::zero();
        let d = DutyCycle::balanced();
        let dx = abc_derivative(&x, &d, &Vector3::zeros(), 0.0, &p);
        assert!(dx.i_abc.norm() < 1e-15);
        assert!(dx.v_dc.abs() < 1e-15);

        // single-phase EMF drives only that phase: di/dt = -e/L
        let e = Vector3::new(1.0, 0.0, 0.0);
        let dx = abc_derivative(&x, &d, &e, 0.0, &p);
        assert_relative_eq!(dx.i_abc[0], -1.0 / p.l, max_relative = 1e-14);
        assert!(dx.i_abc[1].abs() < 1e-15);
        assert!(dx.i_abc[2].abs() < 1e-15);
    }

    #[test]
    fn dq_derivative_zero_and_coupling() {
        let p = ConverterParams::bench();
        let (di, dv) = dq_derivative(
            &Vector2::zeros(),
            0.0,
            &Vector2::zeros(),
            &Vector2::zeros(),
            0.0,
            &p,
        );
        assert!(di.norm() < 1e-15 && dv.abs() < 1e-15);

        // i_dq = (1, 0): cross-coupling puts -ω on the q axis
        let (di, _) = dq_derivative(
            &Vector2::new(1.0, 0.0),
            0.0,
            &Vector2::zeros(),
            &Vector2::zeros(),
            0.0,
            &p,
        );
        assert_relative_eq!(di[1], -p.omega, max_relative = 1e-14);
        assert_relative_eq!(di[0], -p.r / p.l, max_relative = 1e-14);
    }

    #[test]
    fn park_roundtrip_identity() {
        for &theta in &[0.0, 0.3, 1.7, 4.0] {
            for &(d, q) in &[(1.0, 0.0), (0.0, 1.0), (-0.4, 2.2)] {
                let v = Vector2::new(d, q);
                let abc = inverse_park(&v, theta);
                assert!(abc.sum().abs() < 1e-12, "zero sequence free");
                let back = park(&abc, theta);
                assert_relative_eq!(back[0], d, epsilon = 1e-12);
                assert_relative_eq!(back[1], q, epsilon = 1e-12);

                let abc = inverse_park_amplitude(&v, theta);
                let back = park_amplitude(&abc, theta);
                assert_relative_eq!(back[0], d, epsilon = 1e-12);
                assert_relative_eq!(back[1], q, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn park_zero_maps_to_zero() {
        let z = park(&Vector3::zeros(), 1.234);
        assert!(z.norm() < 1e-15);
    }

    #[test]
    fn grid_emf_amplitude_and_symmetry() {
        let e = grid_emf(45.0, 0.0);
        assert_relative_eq!(e[0], -45.0 * std::f64::consts::SQRT_2, max_relative = 1e-14);
        for theta in [0.1, 2.0, 5.5] {
            assert!(grid_emf(45.0, theta).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn g_transpose_rows_sum_to_zero_on_balanced_current() {
        let p = ConverterParams::bench();
        let x = StateAbc { i_abc: Vector3::new(1.0, -0.4, -0.6), v_dc: 150.0 };
        let gt = g_transpose(&x, &p);
        let row_sum = gt.row(0) + gt.row(1) + gt.row(2);
        assert!(row_sum.norm() < 1e-10, "Σ rows of G' = 0 on zero-sum currents");
    }
}
