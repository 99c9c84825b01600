//! The batch engine: evolve once, decompose the snapshots, dispatch
//! the configured experiments, and emit one JSON report plus CSV
//! sidecars for the time series.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use madelung::analytic::{circle, circulation, hydrogen_drift_field, HydrogenDriftParams};
use madelung::bridge::{decompose, reconstruct_phase_anchored, residuals, MadelungState};
use madelung::creation::{evolve_with_source, probability_series, SourceModel};
use madelung::dynamics::{self, Potential, WaveState};
use madelung::grid::{
    gradient_mode, integrate, DerivMode, GridSpec, RealField, RealVectorField, RegionMask,
};
use madelung::observables::{
    self, energy_field, energy_operator, heisenberg_report, kolmogorov_energy_probability,
    momentum_kolmogorov, momentum_operator, neumann_energy_probability, ObservableReport,
};
use madelung::transport::{
    classical_limit_run, conservation_check, expectation_drift_check, local_drift_estimate,
    ClassicalScenario,
};

use crate::config::{ExperimentBlock, RunConfig};
use crate::{num, CliError};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

struct Emitter<'a> {
    dir: &'a Path,
    csv: bool,
}

impl Emitter<'_> {
    fn write_csv(&self, name: &str, contents: &str) -> Result<(), CliError> {
        if self.csv {
            fs::write(self.dir.join(name), contents)?;
        }
        Ok(())
    }
}

/// Executes the run described by `config`. With a `filter`, only
/// experiment blocks of that kind are dispatched. Returns the report.
pub fn run(config: &RunConfig, filter: Option<&str>) -> Result<Value, CliError> {
    let grid = config.grid_spec()?;
    let params = config.sim_params()?;
    let initial = config.initial_state()?;
    let potential = config.potential()?;
    let source = config.source_model()?;

    let blocks: Vec<&ExperimentBlock> = config
        .experiments
        .iter()
        .filter(|b| filter.map_or(true, |k| b.kind == k))
        .collect();
    if let Some(kind) = filter {
        if blocks.is_empty() {
            return Err(CliError::Config(format!(
                "no experiments of kind \"{kind}\" configured"
            )));
        }
    }

    let dir = Path::new(&config.output.directory);
    fs::create_dir_all(dir)?;
    let emit = Emitter {
        dir,
        csv: config.output.formats.iter().any(|f| f == "csv"),
    };

    let psi0 = dynamics::initialize(&initial, &grid, params).map_err(num)?;

    // The evolve loop. Sourced runs use the nonlinear stepper and
    // track total probability; closed runs track the norm.
    let mut warnings: Vec<String> = Vec::new();
    let (snapshots, norms): (Vec<WaveState>, Vec<f64>) = match &source {
        SourceModel::None => {
            let tr = dynamics::evolve(
                &psi0,
                &potential,
                params.t_final,
                config.sim.snapshot_every,
            )
            .map_err(num)?;
            warnings.extend(tr.warnings.iter().cloned());
            (tr.snapshots, tr.norms)
        }
        s => {
            let tr = evolve_with_source(
                &psi0,
                &potential,
                s,
                params.t_final,
                config.sim.snapshot_every,
            )
            .map_err(num)?;
            if tr.halted {
                warnings.push("gain run halted at total probability 1".into());
            }
            let norms = tr.masses.iter().map(|m| m.sqrt()).collect();
            (tr.snapshots, norms)
        }
    };

    let mut csv = String::from("t,norm\n");
    for (s, n) in snapshots.iter().zip(&norms) {
        writeln!(csv, "{},{}", s.time(), n).expect("string write");
    }
    emit.write_csv("norms.csv", &csv)?;

    // Snapshot decompositions, shared by the experiments that work in
    // the density/drift picture.
    let needs_madelung = blocks
        .iter()
        .any(|b| matches!(b.kind.as_str(), "residuals" | "transport" | "observables"));
    let mstates: Vec<MadelungState> = if needs_madelung {
        snapshots
            .iter()
            .map(|s| decompose(s, None))
            .collect::<madelung::Result<_>>()
            .map_err(num)?
    } else {
        Vec::new()
    };

    let mut results = Vec::new();
    let mut failure: Option<String> = None;
    for block in &blocks {
        match dispatch(block, config, &grid, &snapshots, &mstates, &potential, &emit) {
            Ok(value) => results.push(json!({
                "name": block.name,
                "kind": block.kind,
                "result": value,
            })),
            Err(CliError::Numerical(e)) => {
                failure = Some(format!("experiment \"{}\": {e}", block.name));
                break;
            }
            Err(other) => return Err(other),
        }
    }

    let norm_drift = norms
        .iter()
        .fold(0.0_f64, |m, &n| m.max((n - norms[0]).abs()));
    let report = json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "config": config,
        "times": snapshots.iter().map(|s| s.time()).collect::<Vec<_>>(),
        "norm_drift": norm_drift,
        "warnings": warnings,
        "experiments": results,
        "status": if failure.is_none() { "ok" } else { "numerical-failure" },
        "error": failure,
    });

    if config.output.formats.iter().any(|f| f == "json") {
        fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(&report).expect("report serialization") + "\n",
        )?;
    }

    if let Some(msg) = report["error"].as_str() {
        return Err(CliError::Numerical(msg.to_string()));
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn dispatch(
    block: &ExperimentBlock,
    config: &RunConfig,
    grid: &GridSpec,
    snapshots: &[WaveState],
    mstates: &[MadelungState],
    potential: &Potential,
    emit: &Emitter,
) -> Result<Value, CliError> {
    match block.kind.as_str() {
        "residuals" => residuals_experiment(config, grid, snapshots, mstates, potential),
        "transport" => transport_experiment(block, grid, mstates, emit),
        "observables" => observables_experiment(block, config, grid, snapshots, mstates, emit),
        "hydrogen" => hydrogen_experiment(block, config, grid, emit),
        "decay" => decay_experiment(block, config, grid, potential, emit),
        "classical_limit" => classical_limit_experiment(block, config, grid, emit),
        other => Err(CliError::Config(format!("unknown experiment kind {other}"))),
    }
}

fn external_force(
    potential: &Potential,
    grid: &GridSpec,
    mass: f64,
) -> Result<(RealField, RealVectorField), CliError> {
    let v = potential.evaluate_massive(grid, mass);
    // Local stencils: a confining potential sampled on a periodic box
    // is not smoothly periodic, and a spectral gradient would smear
    // the wrap mismatch over the whole domain as ringing.
    let grad = gradient_mode(&v, DerivMode::LocalFd4);
    let force = RealVectorField::new(
        grad.components()
            .iter()
            .map(|c| c.map(|x| -x))
            .collect::<Vec<_>>(),
    )
    .map_err(num)?;
    Ok((v, force))
}

fn residuals_experiment(
    config: &RunConfig,
    grid: &GridSpec,
    snapshots: &[WaveState],
    mstates: &[MadelungState],
    potential: &Potential,
) -> Result<Value, CliError> {
    if mstates.len() < 3 {
        return Err(CliError::Config(
            "residuals needs at least 3 snapshots: lower snapshot_every or raise t_final".into(),
        ));
    }
    let k = (mstates.len() / 2).clamp(1, mstates.len() - 2);
    let window = &mstates[k - 1..=k + 1];
    let phases: Vec<_> = window
        .iter()
        .zip(&snapshots[k - 1..=k + 1])
        .map(|(m, s)| reconstruct_phase_anchored(m, Some(&s.psi)))
        .collect::<madelung::Result<_>>()
        .map_err(num)?;
    let (v, force) = external_force(potential, grid, config.sim.mass)?;
    let report = residuals(window, &force, &v, &phases).map_err(num)?;
    report.check_finite().map_err(num)?;
    Ok(json!(report))
}

fn block_region(block: &ExperimentBlock, grid: &GridSpec) -> Result<RegionMask, CliError> {
    if let Some([a, b]) = block.interval {
        if grid.dim() != 1 {
            return Err(CliError::Config(format!(
                "experiment \"{}\": interval regions are one-dimensional",
                block.name
            )));
        }
        return Ok(RegionMask::from_predicate(grid, |x| {
            x[0] >= a && x[0] <= b
        }));
    }
    if let (Some(center), Some(radius)) = (&block.center, block.radius) {
        if center.len() != grid.dim() {
            return Err(CliError::Config(format!(
                "experiment \"{}\": center must have {} coordinates",
                block.name,
                grid.dim()
            )));
        }
        let c = center.clone();
        return Ok(RegionMask::from_predicate(grid, move |x| {
            x.iter()
                .zip(&c)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                <= radius * radius
        }));
    }
    Err(CliError::Config(format!(
        "experiment \"{}\": needs interval = [a, b] or center + radius",
        block.name
    )))
}

fn transport_experiment(
    block: &ExperimentBlock,
    grid: &GridSpec,
    mstates: &[MadelungState],
    emit: &Emitter,
) -> Result<Value, CliError> {
    let region = block_region(block, grid)?;
    let substeps = block.substeps.unwrap_or(4);
    let cons = conservation_check(mstates, &region, substeps).map_err(num)?;
    let drift = expectation_drift_check(mstates, &region, substeps).map_err(num)?;

    let mut csv = String::from("t,probability\n");
    for (t, p) in cons.times.iter().zip(&cons.probabilities) {
        writeln!(csv, "{t},{p}").expect("string write");
    }
    emit.write_csv(&format!("{}_conservation.csv", block.name), &csv)?;

    let local = match (&block.center, &block.radii) {
        (Some(center), Some(radii)) => Some(
            local_drift_estimate(mstates, center, radii, substeps).map_err(num)?,
        ),
        _ => None,
    };
    Ok(json!({
        "conservation": cons,
        "expectation_drift": drift,
        "local_drift": local,
    }))
}

fn observables_experiment(
    block: &ExperimentBlock,
    config: &RunConfig,
    grid: &GridSpec,
    snapshots: &[WaveState],
    mstates: &[MadelungState],
    emit: &Emitter,
) -> Result<Value, CliError> {
    let psi = snapshots.last().expect("evolve returns snapshots");
    let state = mstates.last().expect("decompositions match snapshots");
    let full = RegionMask::full(grid);
    let t = psi.time();

    let mom_k = momentum_kolmogorov(state, &full).map_err(num)?;
    let mom_o = momentum_operator(psi, &full).map_err(num)?;
    let mut reports: Vec<ObservableReport> = mom_k
        .iter()
        .zip(&mom_o)
        .enumerate()
        .map(|(a, (&k, &o))| ObservableReport::new(format!("p[{a}]"), k, o, "full", t))
        .collect();

    let (v, _) = external_force(&config.potential()?, grid, config.sim.mass)?;
    let e = energy_field(state, &v).map_err(num)?;
    let e_rho = RealField::new(
        grid.clone(),
        e.values()
            .iter()
            .zip(state.rho.values())
            .map(|(a, b)| a * b)
            .collect(),
        t,
    )
    .map_err(num)?;
    let e_k = integrate(&e_rho, &state.support).map_err(num)?;
    let e_o = energy_operator(psi, &v).map_err(num)?;
    reports.push(ObservableReport::new("H", e_k, e_o, "full", t));

    let heisenberg = if grid.dim() == 1 {
        Some(heisenberg_report(psi, state).map_err(num)?)
    } else {
        None
    };

    let sweep = match &block.j_intervals {
        Some(intervals) => {
            if !grid.fully_periodic() {
                return Err(CliError::Config(format!(
                    "experiment \"{}\": the Neumann sweep needs a fully periodic grid",
                    block.name
                )));
            }
            let modes = block.modes.unwrap_or(observables::DEFAULT_EIGEN_MODES);
            let mut rows = Vec::new();
            let mut csv = String::from("j_lower,j_upper,kolmogorov,neumann,completeness_deficit\n");
            for &[lo, hi] in intervals {
                let kolmo = kolmogorov_energy_probability(state, &v, (lo, hi)).map_err(num)?;
                let neumann = neumann_energy_probability(psi, &v, (lo, hi), modes).map_err(num)?;
                writeln!(
                    csv,
                    "{lo},{hi},{kolmo},{},{}",
                    neumann.probability, neumann.completeness_deficit
                )
                .expect("string write");
                rows.push(json!({
                    "j": [lo, hi],
                    "kolmogorov": kolmo,
                    "neumann": neumann.probability,
                    "completeness_deficit": neumann.completeness_deficit,
                }));
            }
            emit.write_csv(&format!("{}_energy_sweep.csv", block.name), &csv)?;
            Some(rows)
        }
        None => None,
    };

    Ok(json!({
        "expectations": reports,
        "heisenberg": heisenberg,
        "energy_sweep": sweep,
    }))
}

fn hydrogen_experiment(
    block: &ExperimentBlock,
    config: &RunConfig,
    grid: &GridSpec,
    emit: &Emitter,
) -> Result<Value, CliError> {
    if grid.dim() != 3 {
        return Err(CliError::Config(format!(
            "experiment \"{}\": the hydrogen drift field needs a 3D grid",
            block.name
        )));
    }
    let m_tildes = block.m_tildes.clone().unwrap_or(vec![1.0, 2.0, 0.5]);
    let r_min = block.r_min.unwrap_or(0.5);
    let loop_radius = block.loop_radius.unwrap_or(2.0);

    let mut rows = Vec::new();
    let mut csv = String::from("m_tilde,winding,non_winding\n");
    for &m_tilde in &m_tildes {
        let hp = HydrogenDriftParams::new(m_tilde, config.sim.mass, config.sim.hbar, r_min);
        let (field, _support) = hydrogen_drift_field(&hp, grid).map_err(num)?;
        let winding = circulation(
            &field,
            config.sim.mass,
            config.sim.hbar,
            circle([0.0, 0.0, 0.0], loop_radius),
            8192,
        )
        .map_err(num)?;
        // A loop of a quarter the radius, centered on the main loop's
        // rightmost point: it stays off the axis and must not wind.
        let non_winding = circulation(
            &field,
            config.sim.mass,
            config.sim.hbar,
            circle([loop_radius, 0.0, 0.0], loop_radius / 4.0),
            8192,
        )
        .map_err(num)?;
        writeln!(csv, "{m_tilde},{winding},{non_winding}").expect("string write");
        rows.push(json!({
            "m_tilde": m_tilde,
            "winding": winding,
            "non_winding": non_winding,
        }));
    }
    emit.write_csv(&format!("{}_circulation.csv", block.name), &csv)?;
    Ok(json!({ "loops": rows, "r_min": r_min, "loop_radius": loop_radius }))
}

fn decay_experiment(
    block: &ExperimentBlock,
    config: &RunConfig,
    grid: &GridSpec,
    potential: &Potential,
    emit: &Emitter,
) -> Result<Value, CliError> {
    let gamma = block
        .gamma
        .or(config.source.gamma)
        .ok_or_else(|| {
            CliError::Config(format!(
                "experiment \"{}\": needs gamma (on the block or in [source])",
                block.name
            ))
        })?;
    let params = config.sim_params()?;
    let psi0 = dynamics::initialize(&config.initial_state()?, grid, params).map_err(num)?;
    let tr = evolve_with_source(
        &psi0,
        potential,
        &SourceModel::UniformDecay { gamma },
        params.t_final,
        config.sim.snapshot_every,
    )
    .map_err(num)?;
    let series = probability_series(&tr).map_err(num)?;

    let mut csv = String::from("t,mass\n");
    for (t, m) in series.times.iter().zip(&series.masses) {
        writeln!(csv, "{t},{m}").expect("string write");
    }
    emit.write_csv(&format!("{}_mass.csv", block.name), &csv)?;

    let span = series.times.last().unwrap() - series.times[0];
    Ok(json!({
        "gamma": gamma,
        "fitted_rate": series.fitted_rate,
        "final_mass": series.masses.last(),
        "expected_final_mass": series.masses[0] * (-gamma * span).exp(),
        "halted": tr.halted,
    }))
}

fn classical_limit_experiment(
    block: &ExperimentBlock,
    config: &RunConfig,
    grid: &GridSpec,
    emit: &Emitter,
) -> Result<Value, CliError> {
    let masses = block
        .masses
        .clone()
        .unwrap_or(vec![1.0, 10.0, 100.0, 1000.0]);
    let scenario = ClassicalScenario::GaussianInWell {
        omega: block.omega.unwrap_or(1.0),
        sigma: block.sigma.unwrap_or(1.0),
    };
    let points = classical_limit_run(grid, &masses, &scenario, config.sim.hbar).map_err(num)?;

    let mut csv = String::from("mass,bohm_norm,force_norm,ratio\n");
    for p in &points {
        writeln!(csv, "{},{},{},{}", p.mass, p.bohm_norm, p.force_norm, p.ratio)
            .expect("string write");
    }
    emit.write_csv(&format!("{}_ratios.csv", block.name), &csv)?;

    let strictly_decreasing = points.windows(2).all(|w| w[1].ratio < w[0].ratio);
    Ok(json!({
        "points": points,
        "strictly_decreasing": strictly_decreasing,
    }))
}
