//! Time-dependent Schrödinger propagation on a grid.
//!
//! Two solver backends: Strang-split spectral stepping on fully
//! periodic grids and Crank-Nicolson on bounded grids with Dirichlet
//! walls. Both are unitary; the L2 norm is tracked, never silently
//! renormalized.

use num_complex::Complex64;

use crate::analytic;
use crate::error::{MadelungError, Result};
use crate::grid::{self, ComplexField, GridSpec, RealField, RegionMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolverKind {
    SplitStepFourier,
    CrankNicolson,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SimParams {
    pub mass: f64,
    pub hbar: f64,
    pub dt: f64,
    pub t_final: f64,
    pub solver: SolverKind,
}

impl SimParams {
    pub fn new(mass: f64, hbar: f64, dt: f64, t_final: f64, solver: SolverKind) -> Self {
        assert!(mass > 0.0 && hbar > 0.0 && dt > 0.0);
        SimParams {
            mass,
            hbar,
            dt,
            t_final,
            solver,
        }
    }

    /// Natural units (hbar = m = 1), split-step.
    pub fn natural(dt: f64, t_final: f64) -> Self {
        Self::new(1.0, 1.0, dt, t_final, SolverKind::SplitStepFourier)
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_mass(mut self, mass: f64) -> Self {
        self.mass = mass;
        self
    }
}

/// A rectangular slab of constant potential along one axis.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct Slab {
    pub axis: usize,
    pub from: f64,
    pub to: f64,
    pub height: f64,
}

/// Double-slit wall geometry: a slab at `wall_center` along axis 0
/// pierced by two slits along axis 1.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SlitGeometry {
    pub wall_center: f64,
    pub wall_thickness: f64,
    pub slit_separation: f64,
    pub slit_width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub enum Potential {
    Free,
    Harmonic { omega: f64 },
    SoftCoulomb { q: f64, eps: f64 },
    Barrier { slabs: Vec<Slab> },
    DoubleSlit(SlitGeometry),
}

impl Potential {
    /// Samples V on the grid. All stock potentials are time-independent.
    pub fn evaluate(&self, grid: &GridSpec) -> RealField {
        match self {
            Potential::Free => RealField::zeros(grid, 0.0),
            Potential::Harmonic { omega } => RealField::from_fn(grid, 0.0, |x| {
                0.5 * omega * omega * x.iter().map(|&c| c * c).sum::<f64>()
            }),
            Potential::SoftCoulomb { q, eps } => RealField::from_fn(grid, 0.0, |x| {
                let r2: f64 = x.iter().map(|&c| c * c).sum();
                -q * q / (r2 + eps * eps).sqrt()
            }),
            Potential::Barrier { slabs } => RealField::from_fn(grid, 0.0, |x| {
                slabs
                    .iter()
                    .filter(|s| s.axis < x.len() && x[s.axis] >= s.from && x[s.axis] <= s.to)
                    .map(|s| s.height)
                    .sum()
            }),
            Potential::DoubleSlit(geo) => RealField::from_fn(grid, 0.0, |x| {
                let in_wall = (x[0] - geo.wall_center).abs() <= geo.wall_thickness / 2.0;
                if !in_wall || x.len() < 2 {
                    return 0.0;
                }
                let y = x[1];
                let half = geo.slit_width / 2.0;
                let s = geo.slit_separation / 2.0;
                let in_slit = (y - s).abs() <= half || (y + s).abs() <= half;
                if in_slit {
                    0.0
                } else {
                    geo.height
                }
            }),
        }
    }

    /// Harmonic potential scaled by the particle mass, V = m w^2 x^2 / 2.
    pub fn evaluate_massive(&self, grid: &GridSpec, mass: f64) -> RealField {
        match self {
            Potential::Harmonic { omega } => RealField::from_fn(grid, 0.0, |x| {
                0.5 * mass * omega * omega * x.iter().map(|&c| c * c).sum::<f64>()
            }),
            other => other.evaluate(grid),
        }
    }
}

/// Schrödinger-picture state: complex field plus its run parameters.
#[derive(Debug, Clone)]
pub struct WaveState {
    pub psi: ComplexField,
    pub params: SimParams,
    /// L2 norm at construction; unitary steps must preserve it.
    pub norm0: f64,
}

impl WaveState {
    pub fn new(psi: ComplexField, params: SimParams) -> Result<Self> {
        psi.check_finite("wave state construction")?;
        let norm0 = l2_norm(&psi);
        Ok(WaveState { psi, params, norm0 })
    }

    pub fn time(&self) -> f64 {
        self.psi.time()
    }

    pub fn grid(&self) -> &GridSpec {
        self.psi.grid()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.psi)
    }

    /// Probability mass within two cells of a bounded wall.
    pub fn boundary_mass(&self) -> f64 {
        let grid = self.psi.grid();
        let interior = RegionMask::full(grid).erode(2);
        let dv = grid.cell_volume();
        self.psi
            .values()
            .iter()
            .zip(interior.member())
            .filter(|(_, &m)| !m)
            .map(|(v, _)| v.norm_sqr())
            .sum::<f64>()
            * dv
    }
}

pub fn l2_norm(psi: &ComplexField) -> f64 {
    let dv = psi.grid().cell_volume();
    (psi.values().iter().map(|v| v.norm_sqr()).sum::<f64>() * dv).sqrt()
}

/// Stock initial conditions.
#[derive(Debug, Clone)]
pub enum InitialState {
    /// exp(-(x-x0)^2/4s^2) exp(i p0.(x-x0)/hbar), normalized.
    GaussianPacket {
        x0: Vec<f64>,
        p0: Vec<f64>,
        sigma: f64,
    },
    /// n-th eigenstate of the harmonic oscillator with frequency omega.
    HarmonicEigenstate { n: usize, omega: f64 },
    /// Coherent state of the oscillator with (complex) amplitude alpha.
    CoherentState { alpha: Complex64, omega: f64 },
    Custom(ComplexField),
}

/// Builds a normalized wave state on `grid`.
pub fn initialize(kind: &InitialState, grid: &GridSpec, params: SimParams) -> Result<WaveState> {
    let mut psi = match kind {
        InitialState::GaussianPacket { x0, p0, sigma } => {
            let (x0, p0, s) = (x0.clone(), p0.clone(), *sigma);
            ComplexField::from_fn(grid, 0.0, |x| {
                let mut arg = Complex64::new(0.0, 0.0);
                for a in 0..x.len() {
                    let d = x[a] - x0.get(a).copied().unwrap_or(0.0);
                    arg += Complex64::new(
                        -d * d / (4.0 * s * s),
                        p0.get(a).copied().unwrap_or(0.0) * d / params.hbar,
                    );
                }
                arg.exp()
            })
        }
        InitialState::HarmonicEigenstate { n, omega } => {
            analytic::oscillator_eigenstate(grid, *n, *omega, 0.0, params)?.psi
        }
        InitialState::CoherentState { alpha, omega } => {
            analytic::coherent_state(grid, *alpha, *omega, 0.0, params)?.psi
        }
        InitialState::Custom(field) => field.clone(),
    };
    psi.check_finite("initial state")?;
    let norm = l2_norm(&psi);
    if !(norm.is_finite() && norm > 1e-300) {
        return Err(MadelungError::NonNormalizable { norm });
    }
    let inv = 1.0 / norm;
    for v in psi.values_mut() {
        *v *= inv;
    }
    WaveState::new(psi, params)
}

// n-dimensional FFT in place (all axes).
pub(crate) fn fft_nd(grid: &GridSpec, values: &mut Vec<Complex64>, inverse: bool) {
    for axis in 0..grid.dim() {
        let n = grid.n(axis);
        let plan = grid::plan(n, inverse);
        let out = grid::apply_lines(grid, values, axis, |line| {
            let mut buf = line.to_vec();
            plan.process(&mut buf);
            if inverse {
                let inv = 1.0 / n as f64;
                for v in &mut buf {
                    *v *= inv;
                }
            }
            buf
        });
        *values = out;
    }
}

/// Advances the state by one dt with the configured solver.
pub fn step(state: &WaveState, potential: &Potential) -> Result<WaveState> {
    match state.params.solver {
        SolverKind::SplitStepFourier => step_split(state, potential),
        SolverKind::CrankNicolson => step_crank_nicolson(state, potential),
    }
}

fn step_split(state: &WaveState, potential: &Potential) -> Result<WaveState> {
    let grid = state.grid();
    if !grid.fully_periodic() {
        return Err(MadelungError::InvalidGrid(
            "split-step requires a fully periodic grid".into(),
        ));
    }
    let p = state.params;
    let dt = p.dt;
    let v = potential.evaluate_massive(grid, p.mass);
    let mut values = state.psi.values().to_vec();

    // Half potential kick.
    for (z, &vv) in values.iter_mut().zip(v.values()) {
        *z *= Complex64::new(0.0, -vv * dt / (2.0 * p.hbar)).exp();
    }
    // Full kinetic step in frequency space.
    fft_nd(grid, &mut values, false);
    let ks: Vec<Vec<f64>> = (0..grid.dim()).map(|a| grid.wavenumbers(a)).collect();
    for (flat, z) in values.iter_mut().enumerate() {
        let idx = grid.multi_index(flat);
        let k2: f64 = (0..grid.dim()).map(|a| ks[a][idx[a]].powi(2)).sum();
        *z *= Complex64::new(0.0, -p.hbar * k2 * dt / (2.0 * p.mass)).exp();
    }
    fft_nd(grid, &mut values, true);
    // Second half potential kick.
    for (z, &vv) in values.iter_mut().zip(v.values()) {
        *z *= Complex64::new(0.0, -vv * dt / (2.0 * p.hbar)).exp();
    }

    let psi = ComplexField::new(grid.clone(), values, state.time() + dt)?;
    psi.check_finite("split step")?;
    Ok(WaveState {
        psi,
        params: p,
        norm0: state.norm0,
    })
}

// Applies the Dirichlet 3-point Hamiltonian H = -(hbar^2/2m) L + V.
fn apply_hamiltonian(
    grid: &GridSpec,
    v: &RealField,
    params: &SimParams,
    psi: &[Complex64],
    out: &mut [Complex64],
) {
    let kin = -params.hbar * params.hbar / (2.0 * params.mass);
    for (o, (&z, &vv)) in out.iter_mut().zip(psi.iter().zip(v.values())) {
        *o = z * vv;
    }
    for axis in 0..grid.dim() {
        let h2 = grid.spacing(axis).powi(2);
        for flat in 0..psi.len() {
            let center = psi[flat];
            let left = grid
                .neighbor(flat, axis, -1)
                .map_or(Complex64::new(0.0, 0.0), |j| psi[j]);
            let right = grid
                .neighbor(flat, axis, 1)
                .map_or(Complex64::new(0.0, 0.0), |j| psi[j]);
            out[flat] += (left - center * 2.0 + right) * (kin / h2);
        }
    }
}

fn step_crank_nicolson(state: &WaveState, potential: &Potential) -> Result<WaveState> {
    let grid = state.grid();
    if grid.fully_periodic() {
        return Err(MadelungError::InvalidGrid(
            "Crank-Nicolson requires a bounded grid".into(),
        ));
    }
    let p = state.params;
    let v = potential.evaluate_massive(grid, p.mass);
    let lambda = Complex64::new(0.0, p.dt / (2.0 * p.hbar));
    let psi = state.psi.values();

    // rhs = (I - i dt/2hbar H) psi
    let mut hpsi = vec![Complex64::new(0.0, 0.0); psi.len()];
    apply_hamiltonian(grid, &v, &p, psi, &mut hpsi);
    let rhs: Vec<Complex64> = psi
        .iter()
        .zip(&hpsi)
        .map(|(&z, &hz)| z - lambda * hz)
        .collect();

    let solution = if grid.dim() == 1 {
        solve_tridiagonal_cn(grid, &v, &p, lambda, &rhs)
    } else {
        solve_bicgstab_cn(grid, &v, &p, lambda, &rhs, psi)?
    };

    // Residual check on the implicit solve.
    let mut hs = vec![Complex64::new(0.0, 0.0); solution.len()];
    apply_hamiltonian(grid, &v, &p, &solution, &mut hs);
    let mut res2 = 0.0;
    let mut rhs2 = 0.0;
    for i in 0..solution.len() {
        let r = solution[i] + lambda * hs[i] - rhs[i];
        res2 += r.norm_sqr();
        rhs2 += rhs[i].norm_sqr();
    }
    let rel = (res2 / rhs2.max(1e-300)).sqrt();
    if rel > 1e-10 {
        return Err(MadelungError::SolverDivergence {
            iterations: 0,
            residual: rel,
        });
    }

    let out = ComplexField::new(grid.clone(), solution, state.time() + p.dt)?;
    out.check_finite("Crank-Nicolson step")?;
    Ok(WaveState {
        psi: out,
        params: p,
        norm0: state.norm0,
    })
}

// Thomas algorithm for the 1D CN system (I + lambda H) x = rhs.
fn solve_tridiagonal_cn(
    grid: &GridSpec,
    v: &RealField,
    p: &SimParams,
    lambda: Complex64,
    rhs: &[Complex64],
) -> Vec<Complex64> {
    let n = grid.n(0);
    let h2 = grid.spacing(0).powi(2);
    let kin = -p.hbar * p.hbar / (2.0 * p.mass * h2);
    let off = lambda * kin;
    let diag: Vec<Complex64> = v
        .values()
        .iter()
        .map(|&vv| Complex64::new(1.0, 0.0) + lambda * (vv - 2.0 * kin))
        .collect();

    let mut c = vec![Complex64::new(0.0, 0.0); n];
    let mut d = vec![Complex64::new(0.0, 0.0); n];
    c[0] = off / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - off * c[i - 1];
        c[i] = off / m;
        d[i] = (rhs[i] - off * d[i - 1]) / m;
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

// Matrix-free BiCGStab for (I + lambda H) x = rhs in 2D/3D.
fn solve_bicgstab_cn(
    grid: &GridSpec,
    v: &RealField,
    p: &SimParams,
    lambda: Complex64,
    rhs: &[Complex64],
    guess: &[Complex64],
) -> Result<Vec<Complex64>> {
    let n = rhs.len();
    let apply = |x: &[Complex64], out: &mut Vec<Complex64>| {
        let mut hx = vec![Complex64::new(0.0, 0.0); n];
        apply_hamiltonian(grid, v, p, x, &mut hx);
        out.clear();
        out.extend(x.iter().zip(&hx).map(|(&xv, &hv)| xv + lambda * hv));
    };
    let dot = |a: &[Complex64], b: &[Complex64]| -> Complex64 {
        a.iter().zip(b).map(|(&x, &y)| x.conj() * y).sum()
    };
    let norm = |a: &[Complex64]| -> f64 { a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() };

    let mut x = guess.to_vec();
    let mut ax = Vec::with_capacity(n);
    apply(&x, &mut ax);
    let mut r: Vec<Complex64> = rhs.iter().zip(&ax).map(|(&b, &a)| b - a).collect();
    let r0 = r.clone();
    let bnorm = norm(rhs).max(1e-300);
    let tol = 1e-13;
    let max_iter = 20_000;

    let mut rho = Complex64::new(1.0, 0.0);
    let mut alpha = Complex64::new(1.0, 0.0);
    let mut omega = Complex64::new(1.0, 0.0);
    let mut vv = vec![Complex64::new(0.0, 0.0); n];
    let mut pv = vec![Complex64::new(0.0, 0.0); n];
    let mut t = Vec::with_capacity(n);
    let mut s = vec![Complex64::new(0.0, 0.0); n];

    for iter in 0..max_iter {
        if norm(&r) / bnorm < tol {
            return Ok(x);
        }
        let rho_new = dot(&r0, &r);
        if rho_new.norm() < 1e-300 {
            return Err(MadelungError::SolverDivergence {
                iterations: iter,
                residual: norm(&r) / bnorm,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            pv[i] = r[i] + beta * (pv[i] - omega * vv[i]);
        }
        apply(&pv, &mut t);
        vv.copy_from_slice(&t);
        alpha = rho / dot(&r0, &vv);
        for i in 0..n {
            s[i] = r[i] - alpha * vv[i];
        }
        apply(&s, &mut t);
        let ts = dot(&t, &s);
        let tt = dot(&t, &t);
        omega = ts / tt;
        for i in 0..n {
            x[i] += alpha * pv[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
    }
    Err(MadelungError::SolverDivergence {
        iterations: max_iter,
        residual: norm(&r) / bnorm,
    })
}

/// Result of an `evolve` run: recorded snapshots, per-step norms and
/// any warnings (boundary leak, large potential phase per step).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<WaveState>,
    pub norms: Vec<f64>,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn max_norm_drift(&self) -> f64 {
        let n0 = self.norms.first().copied().unwrap_or(1.0);
        self.norms
            .iter()
            .map(|&n| (n - n0).abs())
            .fold(0.0, f64::max)
    }
}

/// Repeated `step` until `t_final`, recording a snapshot every
/// `snapshot_every` steps (and always the initial and final states).
pub fn evolve(
    state: &WaveState,
    potential: &Potential,
    t_final: f64,
    snapshot_every: usize,
) -> Result<Trajectory> {
    evolve_with_observer(state, potential, t_final, snapshot_every, |_| {})
}

pub fn evolve_with_observer(
    state: &WaveState,
    potential: &Potential,
    t_final: f64,
    snapshot_every: usize,
    mut observer: impl FnMut(&WaveState),
) -> Result<Trajectory> {
    let p = state.params;
    let steps = ((t_final - state.time()) / p.dt).round().max(0.0) as usize;
    let every = snapshot_every.max(1);

    let mut warnings = Vec::new();
    let vmax = potential
        .evaluate_massive(state.grid(), p.mass)
        .values()
        .iter()
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    if p.dt * vmax / p.hbar >= 0.5 {
        warnings.push(format!(
            "potential phase per step dt*max|V|/hbar = {:.3} >= 0.5",
            p.dt * vmax / p.hbar
        ));
    }

    let mut snapshots = vec![state.clone()];
    let mut norms = vec![state.norm()];
    let mut current = state.clone();
    observer(&current);
    for step_no in 1..=steps {
        current = step(&current, potential)?;
        norms.push(current.norm());
        observer(&current);
        if !current.grid().fully_periodic() {
            let leak = current.boundary_mass();
            if leak > 1e-8 && warnings.len() < 16 {
                warnings.push(format!(
                    "boundary mass {leak:.3e} at t = {:.6}",
                    current.time()
                ));
            }
        }
        if step_no % every == 0 || step_no == steps {
            snapshots.push(current.clone());
        }
    }
    Ok(Trajectory {
        snapshots,
        norms,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn packet_grid() -> GridSpec {
        GridSpec::line_periodic(256, -16.0, 16.0).unwrap()
    }

    #[test]
    fn initialize_normalizes() {
        let grid = packet_grid();
        let params = SimParams::natural(1e-3, 1.0);
        let st = initialize(
            &InitialState::GaussianPacket {
                x0: vec![0.0],
                p0: vec![0.0],
                sigma: 1.0,
            },
            &grid,
            params,
        )
        .unwrap();
        assert_abs_diff_eq!(st.norm(), 1.0, epsilon = 1e-12);
        // Real positive packet: no imaginary part.
        assert!(st.psi.values().iter().all(|z| z.im.abs() < 1e-14));
    }

    #[test]
    fn ground_state_matches_closed_form() {
        let grid = packet_grid();
        let params = SimParams::natural(1e-3, 1.0);
        let st = initialize(
            &InitialState::HarmonicEigenstate { n: 0, omega: 1.0 },
            &grid,
            params,
        )
        .unwrap();
        // psi0 = (m w / pi hbar)^(1/4) exp(-m w x^2 / 2 hbar)
        let pref = (1.0 / std::f64::consts::PI).powf(0.25);
        for (i, z) in st.psi.values().iter().enumerate() {
            let x = grid.coord(0, i);
            assert_abs_diff_eq!(z.re, pref * (-x * x / 2.0).exp(), epsilon = 1e-8);
        }
    }

    #[test]
    fn coherent_state_center() {
        let grid = packet_grid();
        let params = SimParams::natural(1e-3, 1.0);
        let alpha = Complex64::new(1.0, 0.0);
        let st = initialize(
            &InitialState::CoherentState { alpha, omega: 1.0 },
            &grid,
            params,
        )
        .unwrap();
        // <x> = sqrt(2 hbar / m w) Re alpha
        let dv = grid.cell_volume();
        let mean: f64 = st
            .psi
            .values()
            .iter()
            .enumerate()
            .map(|(i, z)| grid.coord(0, i) * z.norm_sqr() * dv)
            .sum();
        assert_abs_diff_eq!(mean, 2.0_f64.sqrt(), epsilon = 1e-8);
    }

    #[test]
    fn free_gaussian_spreads_like_the_oracle() {
        let grid = packet_grid();
        let params = SimParams::natural(1e-3, 1.0);
        let st = initialize(
            &InitialState::GaussianPacket {
                x0: vec![0.0],
                p0: vec![0.0],
                sigma: 1.0,
            },
            &grid,
            params,
        )
        .unwrap();
        let traj = evolve(&st, &Potential::Free, 1.0, 1000).unwrap();
        let end = traj.snapshots.last().unwrap();
        let sigma_t = (1.0 + (0.5 * 1.0f64).powi(2)).sqrt();
        // measured width
        let dv = grid.cell_volume();
        let var: f64 = end
            .psi
            .values()
            .iter()
            .enumerate()
            .map(|(i, z)| grid.coord(0, i).powi(2) * z.norm_sqr() * dv)
            .sum();
        assert!((var.sqrt() - sigma_t).abs() < 1e-6 * sigma_t);
    }

    #[test]
    fn stationary_state_amplitude_is_static() {
        let grid = packet_grid();
        let params = SimParams::natural(1e-3, 1.0);
        let st = initialize(
            &InitialState::HarmonicEigenstate { n: 0, omega: 1.0 },
            &grid,
            params,
        )
        .unwrap();
        let traj = evolve(&st, &Potential::Harmonic { omega: 1.0 }, 0.5, 500).unwrap();
        let end = traj.snapshots.last().unwrap();
        // Strang splitting leaves an O(dt^2) wobble on top of the
        // stationary amplitude.
        for (a, b) in st.psi.values().iter().zip(end.psi.values()) {
            assert!((a.norm() - b.norm()).abs() < 1e-6);
        }
        // phase advances at -E0/hbar = -1/2
        let mid = grid.len() / 2;
        let phase = (end.psi.values()[mid] / st.psi.values()[mid]).arg();
        assert_abs_diff_eq!(phase, -0.25, epsilon = 1e-5);
    }

    #[test]
    fn plane_wave_translates() {
        let n = 128;
        let grid = GridSpec::line_periodic(n, 0.0, std::f64::consts::TAU).unwrap();
        let params = SimParams::natural(1e-2, 1.0);
        let p0 = 3.0;
        let psi = ComplexField::from_fn(&grid, 0.0, |x| {
            Complex64::new(0.0, p0 * x[0]).exp() / std::f64::consts::TAU.sqrt()
        });
        let st = initialize(&InitialState::Custom(psi), &grid, params).unwrap();
        let stepped = step(&st, &Potential::Free).unwrap();
        // psi(x, dt) = exp(i p0 x - i p0^2 dt / 2); compare against shift
        for (i, z) in stepped.psi.values().iter().enumerate() {
            let x = grid.coord(0, i);
            let expect = Complex64::new(0.0, p0 * x - p0 * p0 * 1e-2 / 2.0).exp()
                / std::f64::consts::TAU.sqrt();
            assert_abs_diff_eq!((z - expect).norm(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn evolve_zero_steps_returns_initial_state() {
        let grid = packet_grid();
        let params = SimParams::natural(1e-3, 0.0);
        let st = initialize(
            &InitialState::GaussianPacket {
                x0: vec![0.0],
                p0: vec![0.0],
                sigma: 1.0,
            },
            &grid,
            params,
        )
        .unwrap();
        let traj = evolve(&st, &Potential::Free, 0.0, 1).unwrap();
        assert_eq!(traj.snapshots.len(), 1);
        assert_eq!(traj.norms.len(), 1);
    }

    #[test]
    fn split_step_norm_is_conserved() {
        let grid = packet_grid();
        let params = SimParams::natural(1e-3, 1.0);
        let st = initialize(
            &InitialState::CoherentState {
                alpha: Complex64::new(1.0, 0.0),
                omega: 1.0,
            },
            &grid,
            params,
        )
        .unwrap();
        let traj = evolve(&st, &Potential::Harmonic { omega: 1.0 }, 1.0, 100).unwrap();
        assert!(traj.max_norm_drift() < 1e-12);
    }

    #[test]
    fn crank_nicolson_norm_and_phase() {
        let grid = GridSpec::line_bounded(256, -12.0, 12.0).unwrap();
        let params = SimParams::new(1.0, 1.0, 1e-3, 1.0, SolverKind::CrankNicolson);
        let st = initialize(
            &InitialState::HarmonicEigenstate { n: 0, omega: 1.0 },
            &grid,
            params,
        )
        .unwrap();
        let traj = evolve(&st, &Potential::Harmonic { omega: 1.0 }, 0.2, 50).unwrap();
        assert!(traj.max_norm_drift() < 1e-10, "drift {}", traj.max_norm_drift());
    }

    #[test]
    fn time_reversal_recovers_initial_state() {
        let grid = packet_grid();
        let params = SimParams::natural(1e-3, 1.0);
        let st = initialize(
            &InitialState::GaussianPacket {
                x0: vec![-2.0],
                p0: vec![1.0],
                sigma: 1.0,
            },
            &grid,
            params,
        )
        .unwrap();
        let pot = Potential::Harmonic { omega: 1.0 };
        let fwd = evolve(&st, &pot, 1.0, 1000).unwrap();
        let mut back = fwd.snapshots.last().unwrap().clone();
        back.params.dt = -params.dt;
        let mut current = back;
        for _ in 0..1000 {
            current = step(&current, &pot).unwrap();
        }
        let max_dev = st
            .psi
            .values()
            .iter()
            .zip(current.psi.values())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(max_dev < 1e-8, "max dev {max_dev}");
    }

    #[test]
    fn second_order_in_time() {
        // Terminal error vs a dt/8 reference shrinks ~4x when dt halves.
        let grid = GridSpec::line_periodic(128, -16.0, 16.0).unwrap();
        let pot = Potential::Harmonic { omega: 1.0 };
        let run = |dt: f64| {
            let params = SimParams::natural(dt, 1.0);
            let st = initialize(
                &InitialState::CoherentState {
                    alpha: Complex64::new(1.0, 0.0),
                    omega: 1.0,
                },
                &grid,
                params,
            )
            .unwrap();
            let traj = evolve(&st, &pot, 0.5, usize::MAX).unwrap();
            traj.snapshots.last().unwrap().clone()
        };
        let reference = run(0.02 / 8.0);
        let err = |dt: f64| {
            let end = run(dt);
            end.psi
                .values()
                .iter()
                .zip(reference.psi.values())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max)
        };
        let ratio = err(0.02) / err(0.01);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }
}
