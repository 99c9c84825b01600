//! Built-in invariant suite: fast, deterministic checks of the
//! structural guarantees the library rests on. One line of output per
//! property; any failure exits with the numerical-failure code.

use num_complex::Complex64;

use madelung::bridge::{decompose, reconstruct_phase_anchored, reconstruct_wave};
use madelung::creation::{evolve_with_source, nonlinearity_witness, SourceModel};
use madelung::dynamics::{self, initialize, InitialState, Potential, SimParams};
use madelung::grid::{integrate, ComplexField, GridSpec, RealField, RegionMask};
use madelung::io::{read_field_from, write_field_to, FieldData};
use madelung::observables::{heisenberg_report, momentum_kolmogorov, momentum_operator};

use crate::CliError;

type Check = fn() -> Result<(), String>;

fn e(msg: impl Into<String>) -> Result<(), String> {
    Err(msg.into())
}

fn line(n: usize, half: f64) -> GridSpec {
    GridSpec::line_periodic(n, -half, half).expect("valid grid")
}

fn packet(grid: &GridSpec, p0: f64, params: SimParams) -> dynamics::WaveState {
    initialize(
        &InitialState::GaussianPacket {
            x0: vec![0.0],
            p0: vec![p0],
            sigma: 1.0,
        },
        grid,
        params,
    )
    .expect("stock packet")
}

fn grid_index_round_trip() -> Result<(), String> {
    let grid = GridSpec::new(
        2,
        &[12, 9],
        &[0.0, -1.0],
        &[1.0, 1.0],
        &[true, false],
    )
    .map_err(|err| err.to_string())?;
    for flat in 0..grid.len() {
        let idx = grid.multi_index(flat);
        if grid.flat_index(&idx[..2]) != flat {
            return e(format!("index {flat} does not round-trip"));
        }
    }
    Ok(())
}

fn constant_field_integration() -> Result<(), String> {
    let grid = line(128, 4.0);
    let f = RealField::from_fn(&grid, 0.0, |_| 2.5);
    let total = integrate(&f, &RegionMask::full(&grid)).map_err(|err| err.to_string())?;
    if (total - 20.0).abs() > 1e-10 {
        return e(format!("constant integral {total}, expected 20"));
    }
    Ok(())
}

fn unitarity_split_step() -> Result<(), String> {
    let grid = line(256, 16.0);
    let psi = packet(&grid, 1.0, SimParams::natural(1e-3, 0.2));
    let tr = dynamics::evolve(&psi, &Potential::Free, 0.2, 50).map_err(|err| err.to_string())?;
    let drift = tr.max_norm_drift();
    if drift > 1e-12 {
        return e(format!("norm drift {drift:.3e} over 200 steps"));
    }
    Ok(())
}

fn decompose_reconstruct_round_trip() -> Result<(), String> {
    let grid = line(256, 16.0);
    let psi = packet(&grid, 0.7, SimParams::natural(1e-3, 1.0));
    let state = decompose(&psi, None).map_err(|err| err.to_string())?;
    let phase =
        reconstruct_phase_anchored(&state, Some(&psi.psi)).map_err(|err| err.to_string())?;
    let back = reconstruct_wave(&state, &phase).map_err(|err| err.to_string())?;
    let mut worst = 0.0_f64;
    for i in 0..grid.len() {
        if state.support.contains(i) {
            worst = worst.max((back.psi.values()[i] - psi.psi.values()[i]).norm());
        }
    }
    if worst > 1e-10 {
        return e(format!("round-trip deviation {worst:.3e}"));
    }
    Ok(())
}

fn momentum_identity() -> Result<(), String> {
    let grid = line(256, 16.0);
    let psi = packet(&grid, 1.3, SimParams::natural(1e-3, 1.0));
    let state = decompose(&psi, None).map_err(|err| err.to_string())?;
    let full = RegionMask::full(&grid);
    let k = momentum_kolmogorov(&state, &full).map_err(|err| err.to_string())?;
    let o = momentum_operator(&psi, &full).map_err(|err| err.to_string())?;
    let gap = (k[0] - o[0].re).abs();
    if gap > 1e-8 {
        return e(format!("|<p> - E[mX]| = {gap:.3e}"));
    }
    Ok(())
}

fn fourier_uncertainty_minimum() -> Result<(), String> {
    let grid = line(512, 16.0);
    let psi = initialize(
        &InitialState::HarmonicEigenstate { n: 0, omega: 1.0 },
        &grid,
        SimParams::natural(1e-3, 1.0),
    )
    .map_err(|err| err.to_string())?;
    let state = decompose(&psi, None).map_err(|err| err.to_string())?;
    let rep = heisenberg_report(&psi, &state).map_err(|err| err.to_string())?;
    if (rep.product_fourier - 0.5).abs() > 1e-6 {
        return e(format!(
            "ground-state product {} is not the minimum 1/2",
            rep.product_fourier
        ));
    }
    if rep.dp_madelung.abs() > 1e-12 {
        return e(format!(
            "real eigenstate has nonzero drift spread {}",
            rep.dp_madelung
        ));
    }
    Ok(())
}

fn decay_mass_monotone() -> Result<(), String> {
    let grid = line(128, 12.0);
    let psi = packet(&grid, 0.0, SimParams::natural(1e-2, 1.0));
    let tr = evolve_with_source(
        &psi,
        &Potential::Free,
        &SourceModel::UniformDecay { gamma: 0.3 },
        1.0,
        10,
    )
    .map_err(|err| err.to_string())?;
    if !tr.masses.windows(2).all(|w| w[1] <= w[0] + 1e-12) {
        return e("decaying mass series is not monotone");
    }
    Ok(())
}

fn field_file_bit_round_trip() -> Result<(), String> {
    let grid = line(64, 4.0);
    let field = FieldData::Complex(ComplexField::from_fn(&grid, 0.125, |x| {
        Complex64::new((x[0] * 3.1).sin(), (x[0] * 1.7).cos() / 3.0)
    }));
    let mut buf = Vec::new();
    write_field_to(&mut buf, &field).map_err(|err| err.to_string())?;
    let back = read_field_from(&mut buf.as_slice()).map_err(|err| err.to_string())?;
    let mut buf2 = Vec::new();
    write_field_to(&mut buf2, &back).map_err(|err| err.to_string())?;
    if buf != buf2 {
        return e("field file bytes changed across a round trip");
    }
    Ok(())
}

fn hydrogen_winding() -> Result<(), String> {
    use madelung::analytic::{circle, circulation, hydrogen_drift_field, HydrogenDriftParams};
    // A coarse smoke grid: the fine-grid 1e-6 checks live in the
    // test suite; here the point is that the winding is counted.
    let grid = GridSpec::new(
        3,
        &[128, 128, 8],
        &[-2.0, -2.0, -0.5],
        &[2.0, 2.0, 0.5],
        &[false, false, false],
    )
    .map_err(|err| err.to_string())?;
    let hp = HydrogenDriftParams::new(1.0, 1.0, 1.0, 0.2);
    let (field, _) = hydrogen_drift_field(&hp, &grid).map_err(|err| err.to_string())?;
    let w = circulation(&field, 1.0, 1.0, circle([0.0; 3], 1.0), 8192)
        .map_err(|err| err.to_string())?;
    if (w - 1.0).abs() > 1e-4 {
        return e(format!("winding {w}, expected 1"));
    }
    Ok(())
}

fn nonlinearity_witness_disjoint() -> Result<(), String> {
    let grid = line(512, 16.0);
    let p = SimParams::natural(1e-3, 1.0);
    let half = |center: f64| {
        let psi = initialize(
            &InitialState::GaussianPacket {
                x0: vec![center],
                p0: vec![0.0],
                sigma: 0.8,
            },
            &grid,
            p,
        )
        .expect("stock packet");
        dynamics::WaveState::new(psi.psi.map(|z| z / 2.0), p).expect("scaled packet")
    };
    let defect = nonlinearity_witness(
        &half(-8.0),
        &half(8.0),
        &Potential::Free,
        &SourceModel::QuadraticDecay { gamma: 10.0 },
    )
    .map_err(|err| err.to_string())?;
    if defect > 1e-8 {
        return e(format!("disjoint packets show defect {defect:.3e}"));
    }
    Ok(())
}

const CHECKS: &[(&str, Check)] = &[
    ("grid-index-round-trip", grid_index_round_trip),
    ("constant-field-integration", constant_field_integration),
    ("unitarity-split-step", unitarity_split_step),
    (
        "decompose-reconstruct-round-trip",
        decompose_reconstruct_round_trip,
    ),
    ("momentum-identity", momentum_identity),
    ("fourier-uncertainty-minimum", fourier_uncertainty_minimum),
    ("decay-mass-monotone", decay_mass_monotone),
    ("field-file-bit-round-trip", field_file_bit_round_trip),
    ("hydrogen-winding", hydrogen_winding),
    (
        "nonlinearity-witness-disjoint",
        nonlinearity_witness_disjoint,
    ),
];

pub fn run_all() -> Result<(), CliError> {
    let mut failed = 0usize;
    for (name, check) in CHECKS {
        match check() {
            Ok(()) => println!("PASS {name}"),
            Err(msg) => {
                println!("FAIL {name}: {msg}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Numerical(format!(
            "{failed} of {} selftest properties failed",
            CHECKS.len()
        )));
    }
    println!("selftest: all {} properties pass", CHECKS.len());
    Ok(())
}
