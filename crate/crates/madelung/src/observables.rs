//! Expectation values two ways: as plain Kolmogorov integrals of
//! random variables against ρ, and through the operator formalism.
//! On full-domain position, momentum, and energy the two coincide
//! for solutions; the energy *probability* assignments (level sets
//! of the energy field vs. spectral projections) are computed side
//! by side and deliberately never asserted equal outside the
//! eigenstate cases where they provably agree.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::bridge::{quantum_potential, MadelungState};
use crate::dynamics::{fft_nd, SimParams, WaveState};
use crate::error::{MadelungError, Result};
use crate::grid::{DerivMode, GridSpec, RealField, RegionMask};

/// Default number of modes kept by the spectral energy projector.
pub const DEFAULT_EIGEN_MODES: usize = 64;

// Dense eigensolves above this size are not worth the wall time.
const MAX_EIGEN_POINTS: usize = 4096;

/// One observable evaluated both ways.
#[derive(Debug, Clone, Serialize)]
pub struct ObservableReport {
    pub name: String,
    pub kolmogorov_value: f64,
    pub operator_value: f64,
    /// Imaginary residue of the operator-side integral — zero in
    /// exact arithmetic on the full domain, and the reason operator
    /// expectations over proper subregions are refused.
    pub operator_imag: f64,
    pub region: String,
    pub time: f64,
    pub gap: f64,
}

impl ObservableReport {
    pub fn new(
        name: impl Into<String>,
        kolmogorov_value: f64,
        operator_value: Complex64,
        region: impl Into<String>,
        time: f64,
    ) -> Self {
        ObservableReport {
            name: name.into(),
            kolmogorov_value,
            operator_value: operator_value.re,
            operator_imag: operator_value.im,
            region: region.into(),
            time,
            gap: (kolmogorov_value - operator_value.re).abs(),
        }
    }
}

/// E[f, region] = ∫_region f·ρ. Defined on arbitrary regions — no
/// operator is needed to restrict a Kolmogorov expectation.
pub fn expectation(f: &RealField, state: &MadelungState, region: &RegionMask) -> Result<f64> {
    let grid = state.grid();
    if f.grid() != grid || region.grid() != grid {
        return Err(MadelungError::GridMismatch);
    }
    let dv = grid.cell_volume();
    let mut sum = 0.0;
    for i in 0..grid.len() {
        if region.contains(i) {
            sum += f.values()[i] * state.rho.values()[i];
        }
    }
    Ok(sum * dv)
}

/// Momentum as the random variable mX⃗: per-component ∫ mXⁱρ over
/// the region.
pub fn momentum_kolmogorov(state: &MadelungState, region: &RegionMask) -> Result<Vec<f64>> {
    let grid = state.grid();
    if region.grid() != grid {
        return Err(MadelungError::GridMismatch);
    }
    let dv = grid.cell_volume();
    let m = state.params.mass;
    let mut out = vec![0.0; grid.dim()];
    for i in 0..grid.len() {
        if !region.contains(i) {
            continue;
        }
        let r = state.rho.values()[i];
        for (a, o) in out.iter_mut().enumerate() {
            *o += m * state.drift.component(a).values()[i] * r * dv;
        }
    }
    Ok(out)
}

/// ⟨p̂ᵢ⟩ = −iħ∫Ψ*∂ᵢΨ with spectral derivatives. Only the full
/// domain is accepted: over a proper subregion the integral is
/// usually not real, so the operator formalism has nothing to say
/// there. The imaginary residue of each component is returned for
/// inspection.
pub fn momentum_operator(psi: &WaveState, region: &RegionMask) -> Result<Vec<Complex64>> {
    let grid = psi.grid();
    if region.grid() != grid {
        return Err(MadelungError::GridMismatch);
    }
    if region.count() != grid.len() {
        return Err(MadelungError::RegionNotSupported);
    }
    let dv = grid.cell_volume();
    let hbar = psi.params.hbar;
    let mut out = Vec::with_capacity(grid.dim());
    for a in 0..grid.dim() {
        let d = psi.psi.derivative_axis(a, DerivMode::Auto);
        let mut acc = Complex64::new(0.0, 0.0);
        for (z, dz) in psi.psi.values().iter().zip(d.values()) {
            acc += z.conj() * dz;
        }
        out.push(Complex64::new(0.0, -hbar) * acc * dv);
    }
    Ok(out)
}

/// The energy as a pointwise random variable:
/// E(x) = (m/2)X⃗² + V + U(ρ), zero off the support. For solutions
/// it equals ħ∂φ/∂t.
pub fn energy_field(state: &MadelungState, v: &RealField) -> Result<RealField> {
    let grid = state.grid().clone();
    if v.grid() != &grid {
        return Err(MadelungError::GridMismatch);
    }
    let u = quantum_potential(&state.rho, &state.support, &state.params)?;
    let m = state.params.mass;
    let mut values = vec![0.0; grid.len()];
    for (i, val) in values.iter_mut().enumerate() {
        if !state.support.contains(i) {
            continue;
        }
        let mut x2 = 0.0;
        for a in 0..grid.dim() {
            x2 += state.drift.component(a).values()[i].powi(2);
        }
        *val = 0.5 * m * x2 + v.values()[i] + u.values()[i];
    }
    RealField::new(grid, values, state.time())
}

/// Kolmogorov energy probability: rasterize the level set
/// {x on support : E(x) ∈ J} and integrate ρ over it.
pub fn kolmogorov_energy_probability(
    state: &MadelungState,
    v: &RealField,
    j: (f64, f64),
) -> Result<f64> {
    if j.1 < j.0 {
        return Err(MadelungError::InvalidGrid(
            "energy interval must be ordered".into(),
        ));
    }
    let e = energy_field(state, v)?;
    let grid = state.grid();
    let dv = grid.cell_volume();
    let mut mass = 0.0;
    for i in 0..grid.len() {
        if state.support.contains(i) && (j.0..=j.1).contains(&e.values()[i]) {
            mass += state.rho.values()[i] * dv;
        }
    }
    Ok(mass)
}

/// Spectral-projection energy probability and its completeness
/// bookkeeping.
#[derive(Debug, Clone, Serialize)]
pub struct NeumannReport {
    pub probability: f64,
    /// 1 − Σₙ|⟨Φₙ|Ψ⟩|² over the retained modes. Reported, never
    /// hidden.
    pub completeness_deficit: f64,
    pub eigenvalues: Vec<f64>,
    pub modes: usize,
}

// Dense Hamiltonian −(ħ²/2m)Δ + V with the spectral Laplacian,
// assembled column by column through the FFT.
fn hamiltonian_matrix(grid: &GridSpec, v: &RealField, params: &SimParams) -> Result<DMatrix<f64>> {
    if !grid.fully_periodic() {
        return Err(MadelungError::EigenSolveFailure(
            "spectral Hamiltonian needs a fully periodic grid".into(),
        ));
    }
    let n = grid.len();
    if n > MAX_EIGEN_POINTS {
        return Err(MadelungError::EigenSolveFailure(format!(
            "dense eigensolve limited to {MAX_EIGEN_POINTS} points, grid has {n}"
        )));
    }
    let mut k2 = vec![0.0; n];
    let wavenumbers: Vec<Vec<f64>> = (0..grid.dim()).map(|a| grid.wavenumbers(a)).collect();
    for (i, k) in k2.iter_mut().enumerate() {
        let idx = grid.multi_index(i);
        *k = (0..grid.dim()).map(|a| wavenumbers[a][idx[a]].powi(2)).sum();
    }
    let coef = params.hbar * params.hbar / (2.0 * params.mass);
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        col[j] = Complex64::new(1.0, 0.0);
        fft_nd(grid, &mut col, false);
        for (c, &kk) in col.iter_mut().zip(&k2) {
            *c *= coef * kk;
        }
        fft_nd(grid, &mut col, true);
        for i in 0..n {
            h[(i, j)] = col[i].re;
        }
        h[(j, j)] += v.values()[j];
    }
    // The operator is symmetric; scrub FFT roundoff so the
    // eigensolver sees it that way too.
    let ht = h.transpose();
    h = (h + ht) * 0.5;
    Ok(h)
}

/// Probability that the energy lies in J according to the operator
/// formalism: Σ |⟨Φₙ|Ψ⟩|² over discrete eigenpairs with Eₙ ∈ J,
/// keeping the lowest `modes` modes.
pub fn neumann_energy_probability(
    psi: &WaveState,
    v: &RealField,
    j: (f64, f64),
    modes: usize,
) -> Result<NeumannReport> {
    if j.1 < j.0 {
        return Err(MadelungError::InvalidGrid(
            "energy interval must be ordered".into(),
        ));
    }
    let grid = psi.grid().clone();
    if v.grid() != &grid {
        return Err(MadelungError::GridMismatch);
    }
    let h = hamiltonian_matrix(&grid, v, &psi.params)?;
    let eig = nalgebra::SymmetricEigen::try_new(h, f64::EPSILON, 0)
        .ok_or_else(|| MadelungError::EigenSolveFailure("QL iteration did not converge".into()))?;

    let n = grid.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let modes = modes.max(1).min(n);

    let dv = grid.cell_volume();
    let mut probability = 0.0;
    let mut captured = 0.0;
    let mut eigenvalues = Vec::with_capacity(modes);
    for &col in order.iter().take(modes) {
        let e_n = eig.eigenvalues[col];
        // Discrete eigenvectors are ℓ²-orthonormal; √dv converts the
        // overlap to the L² pairing.
        let mut c = Complex64::new(0.0, 0.0);
        for (i, z) in psi.psi.values().iter().enumerate() {
            c += eig.eigenvectors[(i, col)] * z;
        }
        let w = c.norm_sqr() * dv;
        captured += w;
        if (j.0..=j.1).contains(&e_n) {
            probability += w;
        }
        eigenvalues.push(e_n);
    }
    Ok(NeumannReport {
        probability,
        completeness_deficit: 1.0 - captured,
        eigenvalues,
        modes,
    })
}

/// ⟨Ê⟩ = ∫Ψ*(−(ħ²/2m)Δ + V)Ψ with spectral derivatives. The paper's
/// iħ∂_t agrees with this on solutions.
pub fn energy_operator(psi: &WaveState, v: &RealField) -> Result<Complex64> {
    let grid = psi.grid();
    if v.grid() != grid {
        return Err(MadelungError::GridMismatch);
    }
    let coef = psi.params.hbar * psi.params.hbar / (2.0 * psi.params.mass);
    let dv = grid.cell_volume();
    let mut acc = Complex64::new(0.0, 0.0);
    for a in 0..grid.dim() {
        let dd = psi.psi.second_derivative_axis(a, DerivMode::Auto);
        for (z, ddz) in psi.psi.values().iter().zip(dd.values()) {
            acc -= coef * z.conj() * ddz;
        }
    }
    for (z, &vv) in psi.psi.values().iter().zip(v.values()) {
        acc += vv * z.norm_sqr();
    }
    Ok(acc * dv)
}

/// Δx·Δp both ways. The Fourier width obeys the uncertainty bound;
/// the Madelung momentum spread does not — it is the standard
/// deviation of the random variable mX, which vanishes for every
/// real wave function.
#[derive(Debug, Clone, Serialize)]
pub struct HeisenbergReport {
    pub dx: f64,
    pub dp_fourier: f64,
    pub dp_madelung: f64,
    pub product_fourier: f64,
    pub product_madelung: f64,
}

pub fn heisenberg_report(psi: &WaveState, state: &MadelungState) -> Result<HeisenbergReport> {
    let grid = psi.grid().clone();
    if state.grid() != &grid {
        return Err(MadelungError::GridMismatch);
    }
    if grid.dim() != 1 {
        return Err(MadelungError::InvalidGrid(
            "Heisenberg report is one-dimensional".into(),
        ));
    }
    let dv = grid.cell_volume();
    let rho = &state.rho;
    let mass: f64 = rho.values().iter().sum::<f64>() * dv;
    if mass <= 0.0 {
        return Err(MadelungError::VanishingState);
    }
    let moments = |f: &dyn Fn(usize) -> f64| -> (f64, f64) {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for i in 0..grid.len() {
            let w = rho.values()[i] * dv / mass;
            let x = f(i);
            m1 += w * x;
            m2 += w * x * x;
        }
        (m1, (m2 - m1 * m1).max(0.0))
    };
    let (_, var_x) = moments(&|i| grid.coord(0, i));
    let dx = var_x.sqrt();

    let m = state.params.mass;
    let (_, var_px) = moments(&|i| m * state.drift.component(0).values()[i]);
    let dp_madelung = var_px.sqrt();

    // Momentum-space density |Ψ̂(k)|², p = ħk.
    let mut hat = psi.psi.values().to_vec();
    fft_nd(&grid, &mut hat, false);
    let ks = grid.wavenumbers(0);
    let total: f64 = hat.iter().map(|z| z.norm_sqr()).sum();
    let mut p1 = 0.0;
    let mut p2 = 0.0;
    for (z, &k) in hat.iter().zip(&ks) {
        let w = z.norm_sqr() / total;
        let p = psi.params.hbar * k;
        p1 += w * p;
        p2 += w * p * p;
    }
    let dp_fourier = (p2 - p1 * p1).max(0.0).sqrt();

    Ok(HeisenbergReport {
        dx,
        dp_fourier,
        dp_madelung,
        product_fourier: dx * dp_fourier,
        product_madelung: dx * dp_madelung,
    })
}

/// L⃗ = m(x⃗×X⃗) integrated against ρ over the region. 3D only.
pub fn angular_momentum_expectation(
    state: &MadelungState,
    region: &RegionMask,
) -> Result<Vec<f64>> {
    let grid = state.grid();
    if region.grid() != grid {
        return Err(MadelungError::GridMismatch);
    }
    if grid.dim() != 3 {
        return Err(MadelungError::InvalidGrid(
            "angular momentum needs a 3-dimensional grid".into(),
        ));
    }
    let dv = grid.cell_volume();
    let m = state.params.mass;
    let mut out = vec![0.0; 3];
    for i in 0..grid.len() {
        if !region.contains(i) {
            continue;
        }
        let p = grid.point(i);
        let x = [
            state.drift.component(0).values()[i],
            state.drift.component(1).values()[i],
            state.drift.component(2).values()[i],
        ];
        let r = state.rho.values()[i] * dv * m;
        out[0] += r * (p[1] * x[2] - p[2] * x[1]);
        out[1] += r * (p[2] * x[0] - p[0] * x[2]);
        out[2] += r * (p[0] * x[1] - p[1] * x[0]);
    }
    Ok(out)
}
