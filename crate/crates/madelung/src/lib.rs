//! Numerical workbench for the Madelung picture of quantum
//! mechanics: the formulation in which the state of a system is not
//! a wave function but a pair of classical fields — a probability
//! density ρ and a drift velocity field X⃗ — evolving under a
//! continuity equation and a Newton-type momentum equation with one
//! extra, ħ-dependent force term.
//!
//! The crate provides both sides of that equivalence and the bridge
//! between them:
//!
//! - [`dynamics`] — time-dependent Schrödinger solvers (Strang-split
//!   spectral stepping, Crank–Nicolson) on uniform grids in 1–3
//!   dimensions, built on [`grid`].
//! - [`bridge`] — `Ψ ↔ (ρ, X⃗)` in both directions, the quantum
//!   potential and Bohm force, and discrete residuals of the
//!   hydrodynamic equations (Newton-Madelung, continuity,
//!   irrotationality, Bernoulli, Weber).
//! - [`transport`] — the flow of X⃗: advected points and regions,
//!   probability conservation over transported regions, the
//!   expectation-drift theorem, local drift probes, and the
//!   large-mass (classical) limit.
//! - [`observables`] — expectation values two ways: Kolmogorov
//!   integrals of random variables against ρ, and the operator
//!   formalism, with both energy-probability constructions side by
//!   side.
//! - [`analytic`] — closed-form oracles (spreading Gaussian,
//!   oscillator eigenstates and coherent states, the hydrogen drift
//!   field with its quantized circulation).
//! - [`creation`] — sources and sinks in the continuity equation and
//!   the nonlinear wave equation they induce.
//! - [`io`] — a fixed binary container for fields with bit-exact
//!   round trips.
//!
//! # Quick start
//!
//! Propagate a Gaussian packet, then look at the same state through
//! the hydrodynamic lens:
//!
//! ```
//! use madelung::bridge::decompose;
//! use madelung::dynamics::{self, InitialState, Potential, SimParams};
//! use madelung::grid::GridSpec;
//!
//! let grid = GridSpec::line_periodic(256, -16.0, 16.0)?;
//! let params = SimParams::natural(1e-3, 1.0); // mass = ħ = 1, split-step
//! let psi0 = dynamics::initialize(
//!     &InitialState::GaussianPacket { x0: vec![0.0], p0: vec![1.0], sigma: 1.0 },
//!     &grid,
//!     params,
//! )?;
//! let traj = dynamics::evolve(&psi0, &Potential::Free, 1.0, 100)?;
//! assert!(traj.max_norm_drift() < 1e-12); // unitary to machine precision
//!
//! // The Madelung state: density, drift velocity, and its support.
//! let state = decompose(traj.snapshots.last().unwrap(), None)?;
//! let peak = (0..grid.len()).max_by(|&a, &b| {
//!     state.rho.values()[a].total_cmp(&state.rho.values()[b])
//! }).unwrap();
//! // A packet launched with p0 = 1 drifts at X ≈ p0/m near its peak.
//! assert!((state.drift.component(0).values()[peak] - 1.0).abs() < 1e-6);
//! # Ok::<(), madelung::MadelungError>(())
//! ```
//!
//! The reverse direction reconstructs the phase from the drift by
//! line integration and reassembles the wave function up to one
//! global phase:
//!
//! ```
//! use madelung::analytic;
//! use madelung::bridge::{decompose, reconstruct_phase_anchored, reconstruct_wave};
//! use madelung::dynamics::SimParams;
//! use madelung::grid::GridSpec;
//! use num_complex::Complex64;
//!
//! let grid = GridSpec::line_periodic(256, -16.0, 16.0)?;
//! let params = SimParams::natural(1e-3, 1.0);
//! let psi = analytic::coherent_state(&grid, Complex64::new(1.0, 0.0), 1.0, 0.3, params)?;
//!
//! let m = decompose(&psi, None)?;
//! let phase = reconstruct_phase_anchored(&m, Some(&psi.psi))?;
//! let back = reconstruct_wave(&m, &phase)?;
//! let worst = m.support.member().iter().enumerate()
//!     .filter(|&(_, &on)| on)
//!     .map(|(i, _)| (back.psi.values()[i] - psi.psi.values()[i]).norm())
//!     .fold(0.0_f64, f64::max);
//! assert!(worst < 1e-10);
//! # Ok::<(), madelung::MadelungError>(())
//! ```
//!
//! A companion command-line runner (`madelung-cli`) drives the same
//! machinery from TOML configurations and writes JSON reports with
//! CSV sidecars; see the repository guide in `book/`.

pub mod analytic;
pub mod bridge;
pub mod creation;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod io;
pub mod observables;
pub mod transport;

pub use error::{MadelungError, Result};
