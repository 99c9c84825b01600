//! Run configuration: flat TOML sections with typed keys. Unknown
//! keys are hard errors — a typo never silently changes a run — and
//! a parsed config serializes back to an equivalent document.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use madelung::creation::SourceModel;
use madelung::dynamics::{InitialState, Potential, SimParams, SolverKind};
use madelung::grid::GridSpec;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub sim: SimSection,
    pub initial: InitialSection,
    #[serde(default)]
    pub potential: PotentialSection,
    #[serde(default)]
    pub source: SourceSection,
    #[serde(default)]
    pub experiments: Vec<ExperimentBlock>,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub n: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub periodic: Vec<bool>,
}

fn default_mass() -> f64 {
    1.0
}
fn default_hbar() -> f64 {
    1.0
}
fn default_solver() -> String {
    "split-step".into()
}
fn default_snapshot_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_mass")]
    pub mass: f64,
    #[serde(default = "default_hbar")]
    pub hbar: f64,
    pub dt: f64,
    pub t_final: f64,
    /// "split-step" or "crank-nicolson".
    #[serde(default = "default_solver")]
    pub solver: String,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// "gaussian", "eigenstate", or "coherent".
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_re: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_im: Option<f64>,
}

fn default_potential_kind() -> String {
    "free".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    /// "free", "harmonic", or "soft-coulomb".
    #[serde(default = "default_potential_kind")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

impl Default for PotentialSection {
    fn default() -> Self {
        PotentialSection {
            kind: default_potential_kind(),
            omega: None,
            q: None,
            eps: None,
        }
    }
}

fn default_source_kind() -> String {
    "none".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    /// "none", "uniform-decay", "uniform-gain", or "quadratic-decay".
    #[serde(default = "default_source_kind")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl Default for SourceSection {
    fn default() -> Self {
        SourceSection {
            kind: default_source_kind(),
            gamma: None,
        }
    }
}

/// One named experiment. `kind` selects the procedure; the optional
/// keys parametrize it (each kind documents which it reads).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub name: String,
    /// "residuals", "transport", "observables", "hydrogen", "decay",
    /// or "classical_limit".
    pub kind: String,
    /// transport / local drift: RK4 substeps per snapshot interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    /// transport, 1D: initial region [from, to].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<[f64; 2]>,
    /// transport (>1D ball region) and local drift probe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// local drift: strictly decreasing probe radii.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    /// observables: energy intervals J for the Kolmogorov/Neumann sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_intervals: Option<Vec<[f64; 2]>>,
    /// observables: number of discrete-Hamiltonian modes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
    /// hydrogen: winding parameters to sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_tildes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_radius: Option<f64>,
    /// decay: rate (overrides the [source] section's gamma).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// classical_limit: strictly increasing mass sequence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masses: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

fn default_formats() -> Vec<String> {
    vec!["json".into(), "csv".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

pub const EXPERIMENT_KINDS: &[&str] = &[
    "residuals",
    "transport",
    "observables",
    "hydrogen",
    "decay",
    "classical_limit",
];

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        let g = &self.grid;
        let sizes_ok = g.n.len() == g.dim
            && g.lower.len() == g.dim
            && g.upper.len() == g.dim
            && g.periodic.len() == g.dim;
        if !sizes_ok {
            return Err(CliError::Config(format!(
                "grid: n, lower, upper, periodic must each have dim = {} entries",
                g.dim
            )));
        }
        if !(self.sim.dt > 0.0 && self.sim.t_final >= 0.0 && self.sim.mass > 0.0) {
            return Err(CliError::Config(
                "sim: dt and mass must be positive, t_final nonnegative".into(),
            ));
        }
        self.solver()?;
        self.initial_state()?;
        self.potential()?;
        self.source_model()?;
        for block in &self.experiments {
            if !EXPERIMENT_KINDS.contains(&block.kind.as_str()) {
                return Err(CliError::Config(format!(
                    "experiment \"{}\": unknown kind \"{}\" (expected one of {})",
                    block.name,
                    block.kind,
                    EXPERIMENT_KINDS.join(", ")
                )));
            }
        }
        for fmt in &self.output.formats {
            if fmt != "json" && fmt != "csv" {
                return Err(CliError::Config(format!(
                    "output: unknown format \"{fmt}\" (expected json or csv)"
                )));
            }
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        GridSpec::new(
            self.grid.dim,
            &self.grid.n,
            &self.grid.lower,
            &self.grid.upper,
            &self.grid.periodic,
        )
        .map_err(|e| CliError::Config(format!("grid: {e}")))
    }

    pub fn solver(&self) -> Result<SolverKind, CliError> {
        match self.sim.solver.as_str() {
            "split-step" => Ok(SolverKind::SplitStepFourier),
            "crank-nicolson" => Ok(SolverKind::CrankNicolson),
            other => Err(CliError::Config(format!(
                "sim: unknown solver \"{other}\" (expected split-step or crank-nicolson)"
            ))),
        }
    }

    pub fn sim_params(&self) -> Result<SimParams, CliError> {
        Ok(SimParams::new(
            self.sim.mass,
            self.sim.hbar,
            self.sim.dt,
            self.sim.t_final,
            self.solver()?,
        ))
    }

    pub fn initial_state(&self) -> Result<InitialState, CliError> {
        let init = &self.initial;
        match init.kind.as_str() {
            "gaussian" => Ok(InitialState::GaussianPacket {
                x0: init.x0.clone().unwrap_or_else(|| vec![0.0; self.grid.dim]),
                p0: init.p0.clone().unwrap_or_else(|| vec![0.0; self.grid.dim]),
                sigma: init.sigma.unwrap_or(1.0),
            }),
            "eigenstate" => Ok(InitialState::HarmonicEigenstate {
                n: init.n.unwrap_or(0),
                omega: init.omega.unwrap_or(1.0),
            }),
            "coherent" => Ok(InitialState::CoherentState {
                alpha: Complex64::new(init.alpha_re.unwrap_or(1.0), init.alpha_im.unwrap_or(0.0)),
                omega: init.omega.unwrap_or(1.0),
            }),
            other => Err(CliError::Config(format!(
                "initial: unknown kind \"{other}\" (expected gaussian, eigenstate, or coherent)"
            ))),
        }
    }

    pub fn potential(&self) -> Result<Potential, CliError> {
        match self.potential.kind.as_str() {
            "free" => Ok(Potential::Free),
            "harmonic" => Ok(Potential::Harmonic {
                omega: self.potential.omega.unwrap_or(1.0),
            }),
            "soft-coulomb" => Ok(Potential::SoftCoulomb {
                q: self.potential.q.unwrap_or(1.0),
                eps: self.potential.eps.unwrap_or(1.0),
            }),
            other => Err(CliError::Config(format!(
                "potential: unknown kind \"{other}\" (expected free, harmonic, or soft-coulomb)"
            ))),
        }
    }

    pub fn source_model(&self) -> Result<SourceModel, CliError> {
        let gamma = || {
            self.source.gamma.ok_or_else(|| {
                CliError::Config(format!("source: kind \"{}\" needs gamma", self.source.kind))
            })
        };
        match self.source.kind.as_str() {
            "none" => Ok(SourceModel::None),
            "uniform-decay" => Ok(SourceModel::UniformDecay { gamma: gamma()? }),
            "uniform-gain" => Ok(SourceModel::UniformGain { gamma: gamma()? }),
            "quadratic-decay" => Ok(SourceModel::QuadraticDecay { gamma: gamma()? }),
            other => Err(CliError::Config(format!(
                "source: unknown kind \"{other}\" \
                 (expected none, uniform-decay, uniform-gain, or quadratic-decay)"
            ))),
        }
    }
}
