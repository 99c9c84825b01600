//! Particle creation and annihilation as a source term in the
//! continuity equation: ∂ρ/∂t + ∇·(ρX⃗) = u(ρ, X⃗). The induced
//! wave equation gains the anti-Hermitian term iξ(Ψ)Ψ with
//! ξ = (ħ/2ρ)u — pure amplitude gain or loss, no phase injection.
//! The physically correct u is unknown; the stocked models are
//! proof-of-mechanism and all satisfy the locality and separation
//! constraints.

use num_complex::Complex64;
use serde::Serialize;

use crate::bridge::RHO_FLOOR_REL;
use crate::dynamics::{self, l2_norm, Potential, WaveState};
use crate::error::{MadelungError, Result};
use crate::grid::{ComplexField, RealField};

/// Stocked source models for u(ρ, X⃗).
#[derive(Debug, Clone)]
pub enum SourceModel {
    None,
    /// u = −γρ: the density cancels in ξ exactly, leaving the
    /// constant ξ ≡ −ħγ/2.
    UniformDecay { gamma: f64 },
    /// u = +γρ. Runs must start below total probability 1 and halt
    /// when they reach it.
    UniformGain { gamma: f64 },
    /// u = −γ(x)ρ with a spatial rate profile; ξ(x) = −ħγ(x)/2.
    LocalizedSink { profile: RealField },
    /// u = −γρ²: ξ = −ħγρ/2 depends on the state. Stocked only as
    /// the nonlinearity witness — superposition fails under it.
    QuadraticDecay { gamma: f64 },
}

/// ξ(Ψ) = (ħ/2|Ψ|²)·u(|Ψ|², X⃗), masked to zero off the support.
/// For the uniform and localized models the division by ρ cancels
/// algebraically and is never performed.
pub fn xi_from_u(source: &SourceModel, psi: &WaveState) -> Result<RealField> {
    let grid = psi.grid().clone();
    let hbar = psi.params.hbar;
    let rho: Vec<f64> = psi.psi.values().iter().map(|z| z.norm_sqr()).collect();
    let max_rho = rho.iter().cloned().fold(0.0_f64, f64::max);
    if max_rho <= 0.0 {
        return Err(MadelungError::VanishingDensity);
    }
    let floor = RHO_FLOOR_REL * max_rho;
    let on = |i: usize| rho[i] >= floor;
    let time = psi.time();
    let values: Vec<f64> = match source {
        SourceModel::None => vec![0.0; grid.len()],
        SourceModel::UniformDecay { gamma } => (0..grid.len())
            .map(|i| if on(i) { -hbar * gamma / 2.0 } else { 0.0 })
            .collect(),
        SourceModel::UniformGain { gamma } => (0..grid.len())
            .map(|i| if on(i) { hbar * gamma / 2.0 } else { 0.0 })
            .collect(),
        SourceModel::LocalizedSink { profile } => {
            if profile.grid() != &grid {
                return Err(MadelungError::GridMismatch);
            }
            (0..grid.len())
                .map(|i| {
                    if on(i) {
                        -hbar * profile.values()[i] / 2.0
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        SourceModel::QuadraticDecay { gamma } => (0..grid.len())
            .map(|i| if on(i) { -hbar * gamma * rho[i] / 2.0 } else { 0.0 })
            .collect(),
    };
    RealField::new(grid, values, time)
}

// exp(ξ·dt/(2ħ)) applied pointwise; the identity is skipped so a
// None source stays bit-compatible with the unitary path.
fn half_amplitude(psi: &WaveState, source: &SourceModel, dt: f64) -> Result<WaveState> {
    if matches!(source, SourceModel::None) {
        return Ok(psi.clone());
    }
    let xi = xi_from_u(source, psi)?;
    let hbar = psi.params.hbar;
    let values: Vec<Complex64> = psi
        .psi
        .values()
        .iter()
        .zip(xi.values())
        .map(|(z, &x)| z * (x * dt / (2.0 * hbar)).exp())
        .collect();
    WaveState::new(
        ComplexField::new(psi.grid().clone(), values, psi.time())?,
        psi.params,
    )
}

/// One Strang step of the sourced equation
/// iħ∂Ψ/∂t = −(ħ²/2m)ΔΨ + VΨ + iξ(Ψ)Ψ:
/// half amplitude, full unitary step, half amplitude (ξ re-evaluated
/// on the intermediate state for density-dependent sources).
pub fn step_with_source(
    state: &WaveState,
    potential: &Potential,
    source: &SourceModel,
) -> Result<WaveState> {
    let dt = state.params.dt;
    let a = half_amplitude(state, source, dt)?;
    let b = dynamics::step(&a, potential)?;
    let c = half_amplitude(&b, source, dt)?;
    let mass = l2_norm(&c.psi).powi(2);
    if mass > 1.0 + 1e-9 {
        return Err(MadelungError::ProbabilityOverflow { mass });
    }
    Ok(c)
}

/// A sourced run with its probability bookkeeping.
#[derive(Debug, Clone)]
pub struct SourcedTrajectory {
    pub snapshots: Vec<WaveState>,
    pub times: Vec<f64>,
    /// ∫ρ at each snapshot.
    pub masses: Vec<f64>,
    /// True when a gain run reached total probability 1 before
    /// t_final and was stopped there.
    pub halted: bool,
}

/// Evolves under the sourced equation until `t_final`, keeping every
/// `snapshot_every`-th state. Gain runs stop the step before total
/// probability would exceed 1.
pub fn evolve_with_source(
    state: &WaveState,
    potential: &Potential,
    source: &SourceModel,
    t_final: f64,
    snapshot_every: usize,
) -> Result<SourcedTrajectory> {
    let dt = state.params.dt;
    let steps = ((t_final - state.time()) / dt).round() as usize;
    let every = snapshot_every.max(1);
    let mut current = state.clone();
    let mut snapshots = vec![current.clone()];
    let mut times = vec![current.time()];
    let mut masses = vec![l2_norm(&current.psi).powi(2)];
    let mut halted = false;
    for k in 1..=steps {
        match step_with_source(&current, potential, source) {
            Ok(next) => current = next,
            Err(MadelungError::ProbabilityOverflow { .. })
                if matches!(source, SourceModel::UniformGain { .. }) =>
            {
                halted = true;
                break;
            }
            Err(e) => return Err(e),
        }
        if k % every == 0 || k == steps {
            snapshots.push(current.clone());
            times.push(current.time());
            masses.push(l2_norm(&current.psi).powi(2));
        }
    }
    Ok(SourcedTrajectory {
        snapshots,
        times,
        masses,
        halted,
    })
}

/// Total-probability series with a least-squares exponential fit:
/// the slope of ln∫ρ against t, negated, estimates the decay rate.
#[derive(Debug, Clone, Serialize)]
pub struct ProbabilitySeries {
    pub times: Vec<f64>,
    pub masses: Vec<f64>,
    pub fitted_rate: f64,
}

pub fn probability_series(run: &SourcedTrajectory) -> Result<ProbabilitySeries> {
    if run.times.len() < 2 {
        return Err(MadelungError::InsufficientSnapshots {
            needed: 2,
            got: run.times.len(),
        });
    }
    if run.masses.iter().any(|&m| m <= 0.0) {
        return Err(MadelungError::VanishingDensity);
    }
    let n = run.times.len() as f64;
    let logs: Vec<f64> = run.masses.iter().map(|m| m.ln()).collect();
    let t_mean = run.times.iter().sum::<f64>() / n;
    let l_mean = logs.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&t, &l) in run.times.iter().zip(&logs) {
        num += (t - t_mean) * (l - l_mean);
        den += (t - t_mean) * (t - t_mean);
    }
    Ok(ProbabilitySeries {
        times: run.times.clone(),
        masses: run.masses.clone(),
        fitted_rate: -num / den,
    })
}

/// Superposition test: one sourced step of Ψ₁, Ψ₂, and their raw
/// sum, reporting ‖step(Ψ₁+Ψ₂) − step(Ψ₁) − step(Ψ₂)‖. Zero for
/// linear evolution, strictly positive under density-dependent
/// sources on overlapping states. The inputs must jointly carry at
/// most unit probability — nonlinear evolution is not
/// scale-equivariant, so the sum cannot be normalized away.
pub fn nonlinearity_witness(
    psi1: &WaveState,
    psi2: &WaveState,
    potential: &Potential,
    source: &SourceModel,
) -> Result<f64> {
    let grid = psi1.grid().clone();
    if psi2.grid() != &grid {
        return Err(MadelungError::GridMismatch);
    }
    let sum = WaveState::new(
        ComplexField::new(
            grid.clone(),
            psi1.psi
                .values()
                .iter()
                .zip(psi2.psi.values())
                .map(|(a, b)| a + b)
                .collect(),
            psi1.time(),
        )?,
        psi1.params,
    )?;

    let s1 = step_with_source(psi1, potential, source)?;
    let s2 = step_with_source(psi2, potential, source)?;
    let ss = step_with_source(&sum, potential, source)?;

    let dv = grid.cell_volume();
    let mut defect2 = 0.0;
    for i in 0..grid.len() {
        let d = ss.psi.values()[i] - s1.psi.values()[i] - s2.psi.values()[i];
        defect2 += d.norm_sqr();
    }
    Ok((defect2 * dv).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::decompose;
    use crate::dynamics::{initialize, InitialState, SimParams};
    use crate::grid::{self, GridSpec, RegionMask};
    use approx::assert_abs_diff_eq;

    fn params() -> SimParams {
        SimParams::natural(1e-3, 1.0)
    }

    // Quarter-probability packet: any pair sums to at most unit mass
    // in the witness, even with full constructive overlap.
    fn sub_packet(grid: &GridSpec, x0: f64, p0: f64, sigma: f64) -> WaveState {
        let full = packet(grid, x0, p0, sigma);
        WaveState::new(full.psi.map(|z| z / 2.0), full.params).unwrap()
    }

    fn packet(grid: &GridSpec, x0: f64, p0: f64, sigma: f64) -> WaveState {
        initialize(
            &InitialState::GaussianPacket {
                x0: vec![x0],
                p0: vec![p0],
                sigma,
            },
            grid,
            params(),
        )
        .unwrap()
    }

    #[test]
    fn no_source_means_no_xi() {
        let grid = GridSpec::line_periodic(128, -10.0, 10.0).unwrap();
        let psi = packet(&grid, 0.0, 0.0, 1.0);
        let xi = xi_from_u(&SourceModel::None, &psi).unwrap();
        assert!(xi.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_decay_xi_is_constant_and_density_independent() {
        let grid = GridSpec::line_periodic(128, -10.0, 10.0).unwrap();
        let gamma = 0.3;
        let source = SourceModel::UniformDecay { gamma };
        let narrow = packet(&grid, 0.0, 0.0, 0.5);
        let wide = packet(&grid, 1.0, 0.7, 2.0);
        for psi in [&narrow, &wide] {
            let xi = xi_from_u(&source, psi).unwrap();
            let max_rho = psi
                .psi
                .values()
                .iter()
                .map(|z| z.norm_sqr())
                .fold(0.0_f64, f64::max);
            for (i, &v) in xi.values().iter().enumerate() {
                if psi.psi.values()[i].norm_sqr() >= 1e-12 * max_rho {
                    // Exact algebraic cancellation: the ρ never
                    // enters.
                    assert_eq!(v, -gamma / 2.0);
                }
            }
        }
    }

    #[test]
    fn localized_sink_xi_follows_the_profile() {
        let grid = GridSpec::line_periodic(128, -10.0, 10.0).unwrap();
        let profile = RealField::from_fn(&grid, 0.0, |x| 0.4 * (-x[0] * x[0]).exp());
        let psi = packet(&grid, 0.0, 0.0, 1.0);
        let xi = xi_from_u(&SourceModel::LocalizedSink { profile: profile.clone() }, &psi).unwrap();
        let max_rho = psi
            .psi
            .values()
            .iter()
            .map(|z| z.norm_sqr())
            .fold(0.0_f64, f64::max);
        for (i, &v) in xi.values().iter().enumerate() {
            if psi.psi.values()[i].norm_sqr() >= 1e-12 * max_rho {
                assert_eq!(v, -profile.values()[i] / 2.0);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn none_source_step_is_bit_identical_to_dynamics() {
        let grid = GridSpec::line_periodic(256, -12.0, 12.0).unwrap();
        let psi = packet(&grid, 0.0, 0.8, 1.0);
        let plain = dynamics::step(&psi, &Potential::Free).unwrap();
        let sourced = step_with_source(&psi, &Potential::Free, &SourceModel::None).unwrap();
        for (a, b) in plain.psi.values().iter().zip(sourced.psi.values()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn uniform_decay_mass_is_exactly_exponential() {
        let grid = GridSpec::line_periodic(256, -16.0, 16.0).unwrap();
        let gamma = 0.1;
        let psi = packet(&grid, 0.0, 0.0, 1.0);
        let run = evolve_with_source(
            &psi,
            &Potential::Free,
            &SourceModel::UniformDecay { gamma },
            5.0,
            100,
        )
        .unwrap();
        assert!(!run.halted);
        let m_final = *run.masses.last().unwrap();
        let expect = (-gamma * 5.0_f64).exp();
        assert!(
            ((m_final - expect) / expect).abs() < 1e-6,
            "mass {m_final} vs {expect}"
        );
        let series = probability_series(&run).unwrap();
        assert_abs_diff_eq!(series.fitted_rate, gamma, epsilon = 1e-4);
    }

    #[test]
    fn zero_rate_series_is_flat() {
        let grid = GridSpec::line_periodic(256, -16.0, 16.0).unwrap();
        let psi = packet(&grid, 0.0, 0.5, 1.0);
        let run = evolve_with_source(
            &psi,
            &Potential::Free,
            &SourceModel::UniformDecay { gamma: 0.0 },
            0.5,
            50,
        )
        .unwrap();
        let series = probability_series(&run).unwrap();
        for &m in &series.masses {
            assert_abs_diff_eq!(m, 1.0, epsilon = 1e-12);
        }
        assert!(series.fitted_rate.abs() < 1e-10);
    }

    #[test]
    fn gain_run_halts_at_unit_probability() {
        let grid = GridSpec::line_periodic(256, -16.0, 16.0).unwrap();
        let psi = packet(&grid, 0.0, 0.0, 1.0);
        let half = WaveState::new(psi.psi.map(|z| z / 2.0_f64.sqrt()), psi.params).unwrap();
        let run = evolve_with_source(
            &half,
            &Potential::Free,
            &SourceModel::UniformGain { gamma: 0.5 },
            5.0,
            100,
        )
        .unwrap();
        assert!(run.halted, "gain run should stop at unit mass");
        let m_final = *run.masses.last().unwrap();
        assert!(m_final <= 1.0 + 1e-9);
        // ln 2 / γ ≈ 1.386: the run must have covered most of the
        // doubling before stopping.
        assert!(*run.times.last().unwrap() > 1.2);
    }

    #[test]
    fn decay_keeps_mass_monotone_and_bounded() {
        let grid = GridSpec::line_periodic(256, -16.0, 16.0).unwrap();
        let psi = packet(&grid, 0.0, 0.3, 1.0);
        let run = evolve_with_source(
            &psi,
            &Potential::Free,
            &SourceModel::UniformDecay { gamma: 0.2 },
            1.0,
            20,
        )
        .unwrap();
        for w in run.masses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(run.masses.iter().all(|&m| (0.0..=1.0 + 1e-9).contains(&m)));
    }

    #[test]
    fn sourced_continuity_residual_is_small() {
        let grid = GridSpec::line_periodic(512, -16.0, 16.0).unwrap();
        let gamma = 0.2;
        let source = SourceModel::UniformDecay { gamma };
        let psi = packet(&grid, 0.0, 1.0, 1.0);
        // Three closely spaced sourced snapshots around t = 0.1.
        let run = evolve_with_source(&psi, &Potential::Free, &source, 0.12, 10).unwrap();
        let k = run
            .times
            .iter()
            .position(|&t| (t - 0.1).abs() < 1e-9)
            .unwrap();
        let dt2 = run.times[k + 1] - run.times[k - 1];
        let states: Vec<_> = (k - 1..=k + 1)
            .map(|j| decompose(&run.snapshots[j], None).unwrap())
            .collect();
        // flux divergence ∇·(ρX) at the middle snapshot
        let flux = crate::grid::RealVectorField::new(vec![RealField::new(
            grid.clone(),
            (0..grid.len())
                .map(|i| states[1].rho.values()[i] * states[1].drift.component(0).values()[i])
                .collect(),
            run.times[k],
        )
        .unwrap()])
        .unwrap();
        let div = grid::divergence(&flux);
        let max_rho = states[1].rho.values().iter().cloned().fold(0.0, f64::max);
        let mut worst = 0.0_f64;
        for i in 0..grid.len() {
            if states[1].rho.values()[i] < 1e-6 * max_rho {
                continue;
            }
            let drho_dt = (states[2].rho.values()[i] - states[0].rho.values()[i]) / dt2;
            let u = -gamma * states[1].rho.values()[i];
            worst = worst.max((drho_dt + div.values()[i] - u).abs());
        }
        assert!(worst < 1e-4, "sourced continuity residual {worst}");
    }

    #[test]
    fn witness_is_zero_without_a_source() {
        let grid = GridSpec::line_periodic(256, -16.0, 16.0).unwrap();
        let p1 = sub_packet(&grid, -0.5, 0.0, 1.0);
        let p2 = sub_packet(&grid, 0.5, 0.4, 1.0);
        let defect =
            nonlinearity_witness(&p1, &p2, &Potential::Free, &SourceModel::None).unwrap();
        assert!(defect < 1e-12, "linear defect {defect}");
    }

    #[test]
    fn quadratic_source_breaks_superposition_for_overlapping_packets() {
        let grid = GridSpec::line_periodic(256, -16.0, 16.0).unwrap();
        let p1 = sub_packet(&grid, -0.5, 0.0, 1.0);
        let p2 = sub_packet(&grid, 0.5, 0.4, 1.0);
        let defect = nonlinearity_witness(
            &p1,
            &p2,
            &Potential::Free,
            &SourceModel::QuadraticDecay { gamma: 10.0 },
        )
        .unwrap();
        assert!(defect > 1e-4, "nonlinear defect only {defect}");
    }

    #[test]
    fn disjoint_packets_separate_even_with_a_local_source() {
        let grid = GridSpec::line_periodic(512, -16.0, 16.0).unwrap();
        let p1 = sub_packet(&grid, -8.0, 0.0, 0.5);
        let p2 = sub_packet(&grid, 8.0, 0.0, 0.5);
        let defect = nonlinearity_witness(
            &p1,
            &p2,
            &Potential::Free,
            &SourceModel::QuadraticDecay { gamma: 10.0 },
        )
        .unwrap();
        assert!(defect < 1e-8, "separation defect {defect}");
    }

    #[test]
    fn localized_sink_only_drains_the_colocated_packet() {
        let grid = GridSpec::line_periodic(512, -16.0, 16.0).unwrap();
        // Two far-separated packets, sink sitting on the left one.
        let p1 = packet(&grid, -6.0, 0.0, 0.5);
        let p2 = packet(&grid, 6.0, 0.0, 0.5);
        let both = WaveState::new(
            ComplexField::new(
                grid.clone(),
                p1.psi
                    .values()
                    .iter()
                    .zip(p2.psi.values())
                    .map(|(a, b)| (a + b) / 2.0_f64.sqrt())
                    .collect(),
                0.0,
            )
            .unwrap(),
            p1.params,
        )
        .unwrap();
        let profile = RealField::from_fn(&grid, 0.0, |x| {
            let d = x[0] + 6.0;
            0.5 * (-d * d).exp()
        });
        let run = evolve_with_source(
            &both,
            &Potential::Free,
            &SourceModel::LocalizedSink { profile },
            0.2,
            200,
        )
        .unwrap();
        let left = RegionMask::from_predicate(&grid, |x| x[0] < 0.0);
        let right = left.complement();
        let mass = |psi: &WaveState, region: &RegionMask| {
            let rho = RealField::new(
                grid.clone(),
                psi.psi.values().iter().map(|z| z.norm_sqr()).collect(),
                psi.time(),
            )
            .unwrap();
            grid::integrate(&rho, region).unwrap()
        };
        let first = &run.snapshots[0];
        let last = run.snapshots.last().unwrap();
        let left_loss = mass(first, &left) - mass(last, &left);
        let right_change = (mass(first, &right) - mass(last, &right)).abs();
        assert!(left_loss > 1e-3, "sink removed only {left_loss}");
        assert!(right_change < 1e-8, "remote packet changed by {right_change}");
    }
}
