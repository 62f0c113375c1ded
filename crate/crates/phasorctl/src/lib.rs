//! Phasor-domain modeling and control of a three-phase grid-tied AC/DC converter.
//!
//! The library is organized around the sliding Fourier decomposition: a signal
//! `x(t)` is represented by its time-varying phasors `X_k(t)` computed over a
//! trailing window of one grid period. Periodic matrix functions lift to
//! block-Toeplitz operators acting on phasor sequences, which turns the
//! periodic converter dynamics into a time-invariant (infinite-dimensional)
//! model. Controller synthesis solves truncated harmonic Lyapunov and
//! Sylvester equations with a consistency certificate, producing periodic
//! feedback gains plus integral/resonant actions that can be evaluated in the
//! time domain and discretized for a fixed-rate digital loop.
//!
//! Modules:
//! - [`phasor`]: sliding Fourier decomposition, reconstruction, phasor types
//! - [`toeplitz`]: truncated block-Toeplitz operators and the constant
//!   harmonic operators (`N`, phase shifts)
//! - [`periodic`]: periodic matrix functions stored as Fourier coefficients
//! - [`converter`]: physical parameters and abc/dq time-domain models
//! - [`setpoint`]: periodic equilibrium and the lifted harmonic model
//! - [`solvers`]: harmonic Lyapunov/Sylvester solvers and spectral analysis
//! - [`controller`]: forwarding controller synthesis, saturation, runtime
//! - [`pll`]: synchronous-reference-frame phase-locked loop
//! - [`baseline`]: cascaded PI + notch comparison controller
//! - [`sim`]: fixed-step closed-loop simulator and scenarios
//! - [`metrics`]: THD / harmonic-content / phasor-magnitude series
//! - [`config`]: parameter and scenario files

pub mod baseline;
pub mod config;
pub mod controller;
pub mod converter;
pub mod metrics;
pub mod periodic;
pub mod phasor;
pub mod pll;
pub mod setpoint;
pub mod sim;
pub mod solvers;
pub mod toeplitz;

pub use num_complex::Complex64;

/// Convenience alias used throughout the crate.
pub type C64 = num_complex::Complex<f64>;
