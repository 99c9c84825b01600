//! Closed-form reference states and the hydrogen circulation
//! experiment.
//!
//! Everything here is an oracle: spreading free Gaussians, harmonic
//! oscillator eigenstates and coherent states with exact phases, and
//! the hydrogen drift field whose loop circulation quantifies the
//! winding number m̃ — including non-integer m̃, which the drift
//! picture admits even though single-valued wave functions do not.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::dynamics::{SimParams, WaveState};
use crate::error::{MadelungError, Result};
use crate::grid::{
    interpolate_vector, ComplexField, GridSpec, RealField, RealVectorField, RegionMask,
};

/// Free spreading Gaussian packet in closed form: wave function,
/// density, and drift velocity on the same grid.
pub struct GaussianPacketState {
    pub psi: WaveState,
    pub rho: RealField,
    pub drift: RealVectorField,
    /// Width at the requested time, σ(t) = σ0·√(1 + (ħt/2mσ0²)²).
    pub sigma: f64,
}

/// Width of the free Gaussian at time `t`.
pub fn sigma_t(sigma0: f64, t: f64, params: &SimParams) -> f64 {
    let tau = params.hbar * t / (2.0 * params.mass * sigma0 * sigma0);
    sigma0 * (1.0 + tau * tau).sqrt()
}

/// Exact solution of the free Schrödinger equation launched at `x0`
/// with momentum `p0` and initial width `sigma0` (isotropic across
/// axes). Phases are exact, so the result can be compared pointwise
/// against solver output.
pub fn gaussian_packet(
    grid: &GridSpec,
    t: f64,
    x0: &[f64],
    p0: &[f64],
    sigma0: f64,
    params: SimParams,
) -> Result<GaussianPacketState> {
    let dim = grid.dim();
    if x0.len() != dim || p0.len() != dim {
        return Err(MadelungError::InvalidGrid(format!(
            "packet parameters have {} components on a {}-dimensional grid",
            x0.len(),
            dim
        )));
    }
    if !(sigma0 > 0.0) {
        return Err(MadelungError::InvalidGrid(format!(
            "packet width must be positive, got {sigma0}"
        )));
    }
    let (m, hbar) = (params.mass, params.hbar);
    let tau = hbar * t / (2.0 * m * sigma0 * sigma0);
    let st2 = sigma0 * sigma0 * (1.0 + tau * tau);
    // ψ = Π_a (2πσ0²)^(-1/4) (1+iτ)^(-1/2)
    //        · exp(-(x-xc)²/(4σ0²(1+iτ)) + i(p0(x-x0)/ħ - p0²t/(2mħ)))
    let prefactor = Complex64::new(1.0, tau).sqrt().inv()
        * (2.0 * PI * sigma0 * sigma0).powf(-0.25);
    let denom = Complex64::new(1.0, tau) * 4.0 * sigma0 * sigma0;
    let centers: Vec<f64> = (0..dim).map(|a| x0[a] + p0[a] * t / m).collect();
    let psi = ComplexField::from_fn(grid, t, |x| {
        let mut value = Complex64::new(1.0, 0.0);
        for a in 0..dim {
            let dx = x[a] - centers[a];
            let gauss = (-dx * dx / denom).exp();
            let phase = p0[a] * (x[a] - x0[a]) / hbar - p0[a] * p0[a] * t / (2.0 * m * hbar);
            value *= prefactor * gauss * Complex64::from_polar(1.0, phase);
        }
        value
    });
    let rho = RealField::from_fn(grid, t, |x| {
        let mut value = 1.0;
        for a in 0..dim {
            let dx = x[a] - centers[a];
            value *= (2.0 * PI * st2).sqrt().recip() * (-dx * dx / (2.0 * st2)).exp();
        }
        value
    });
    let drift = RealVectorField::from_fn(grid, t, |x, a| {
        p0[a] / m + (x[a] - centers[a]) * hbar * tau / (2.0 * m * st2)
    });
    Ok(GaussianPacketState {
        psi: WaveState::new(psi, params)?,
        rho,
        drift,
        sigma: st2.sqrt(),
    })
}

/// Harmonic oscillator eigenstate Φ_n at time `t`, including the
/// stationary phase e^(−iE_n t/ħ) with E_n = ħω(n + 1/2). The Hermite
/// functions are built with the normalized three-term recurrence, so
/// they stay finite for large n.
pub fn oscillator_eigenstate(
    grid: &GridSpec,
    n: usize,
    omega: f64,
    t: f64,
    params: SimParams,
) -> Result<WaveState> {
    if grid.dim() != 1 {
        return Err(MadelungError::InvalidGrid(
            "oscillator eigenstates are defined on one-dimensional grids".into(),
        ));
    }
    if !(omega > 0.0) {
        return Err(MadelungError::InvalidGrid(format!(
            "oscillator frequency must be positive, got {omega}"
        )));
    }
    let (m, hbar) = (params.mass, params.hbar);
    let scale = (m * omega / hbar).sqrt();
    let norm = (m * omega / (PI * hbar)).powf(0.25);
    let energy = hbar * omega * (n as f64 + 0.5);
    let phase = Complex64::from_polar(1.0, -energy * t / hbar);
    let psi = ComplexField::from_fn(grid, t, |x| {
        let xi = scale * x[0];
        // h_k = H_k(ξ)/√(2^k k!), recurrence in the normalized form.
        let mut prev = 0.0_f64;
        let mut cur = 1.0_f64;
        for k in 0..n {
            let kf = k as f64;
            let next = xi * (2.0 / (kf + 1.0)).sqrt() * cur - (kf / (kf + 1.0)).sqrt() * prev;
            prev = cur;
            cur = next;
        }
        phase * norm * cur * (-xi * xi / 2.0).exp()
    });
    WaveState::new(psi, params)
}

/// Coherent state |α, t⟩ = e^(−iωt/2) |α e^(−iωt)⟩ with the exact
/// global phase. Its center follows the classical trajectory
/// x_c(t) = √(2ħ/mω)·Re(α e^(−iωt)).
pub fn coherent_state(
    grid: &GridSpec,
    alpha: Complex64,
    omega: f64,
    t: f64,
    params: SimParams,
) -> Result<WaveState> {
    if grid.dim() != 1 {
        return Err(MadelungError::InvalidGrid(
            "coherent states are defined on one-dimensional grids".into(),
        ));
    }
    if !(omega > 0.0) {
        return Err(MadelungError::InvalidGrid(format!(
            "oscillator frequency must be positive, got {omega}"
        )));
    }
    let (m, hbar) = (params.mass, params.hbar);
    let beta = alpha * Complex64::from_polar(1.0, -omega * t);
    let xc = (2.0 * hbar / (m * omega)).sqrt() * beta.re;
    let pc = (2.0 * hbar * m * omega).sqrt() * beta.im;
    let norm = (m * omega / (PI * hbar)).powf(0.25);
    let global = Complex64::from_polar(1.0, -omega * t / 2.0 - pc * xc / (2.0 * hbar));
    let psi = ComplexField::from_fn(grid, t, |x| {
        let dx = x[0] - xc;
        global * norm * (-m * omega * dx * dx / (2.0 * hbar)).exp()
            * Complex64::from_polar(1.0, pc * x[0] / hbar)
    });
    WaveState::new(psi, params)
}

/// Parameters of the hydrogen drift field
/// X⃗ = ħ·m̃/(m(x²+y²))·(−y, x, 0).
#[derive(Debug, Clone, Copy)]
pub struct HydrogenDriftParams {
    /// Winding parameter m̃; need not be an integer.
    pub m_tilde: f64,
    pub mass: f64,
    pub hbar: f64,
    /// Cylindrical exclusion radius around the z-axis where the field
    /// diverges and is masked out instead.
    pub r_min: f64,
}

impl HydrogenDriftParams {
    pub fn new(m_tilde: f64, mass: f64, hbar: f64, r_min: f64) -> Self {
        HydrogenDriftParams {
            m_tilde,
            mass,
            hbar,
            r_min,
        }
    }
}

/// Hydrogen drift field on a 3D grid, zeroed (and excluded from the
/// returned support mask) within `r_min` of the z-axis.
pub fn hydrogen_drift_field(
    params: &HydrogenDriftParams,
    grid: &GridSpec,
) -> Result<(RealVectorField, RegionMask)> {
    if grid.dim() != 3 {
        return Err(MadelungError::InvalidGrid(
            "the hydrogen drift field is three-dimensional".into(),
        ));
    }
    if !(params.mass > 0.0 && params.hbar > 0.0 && params.r_min > 0.0) {
        return Err(MadelungError::InvalidGrid(
            "hydrogen drift parameters must be positive".into(),
        ));
    }
    let h_max = grid.spacing(0).max(grid.spacing(1));
    if params.r_min < 2.0 * h_max {
        return Err(MadelungError::AxisTooClose {
            r_min: params.r_min,
        });
    }
    let coeff = params.hbar * params.m_tilde / params.mass;
    let r2_min = params.r_min * params.r_min;
    let field = RealVectorField::from_fn(grid, 0.0, |x, a| {
        let s2 = x[0] * x[0] + x[1] * x[1];
        if s2 < r2_min {
            return 0.0;
        }
        match a {
            0 => -coeff * x[1] / s2,
            1 => coeff * x[0] / s2,
            _ => 0.0,
        }
    });
    let support = RegionMask::from_predicate(grid, |x| x[0] * x[0] + x[1] * x[1] >= r2_min);
    Ok((field, support))
}

/// Circle of the given radius in the plane z = `center[2]`, traced
/// counterclockwise when seen from +z. Parametrized over [0, 1).
pub fn circle(center: [f64; 3], radius: f64) -> impl Fn(f64) -> [f64; 3] {
    move |s| {
        let theta = 2.0 * PI * s;
        [
            center[0] + radius * theta.cos(),
            center[1] + radius * theta.sin(),
            center[2],
        ]
    }
}

/// Normalized circulation (m/2πħ)·∮ X⃗·dl around a closed curve,
/// computed by the trapezoid rule on the multilinearly interpolated
/// field. For drift fields of single-valued wave functions this is
/// the integer winding number; at least 256 samples are always used.
pub fn circulation(
    v: &RealVectorField,
    mass: f64,
    hbar: f64,
    curve: impl Fn(f64) -> [f64; 3],
    samples: usize,
) -> Result<f64> {
    let samples = samples.max(256);
    let dim = v.dim();
    let mut points = Vec::with_capacity(samples);
    let mut values = Vec::with_capacity(samples);
    for i in 0..samples {
        let p = curve(i as f64 / samples as f64);
        let val = interpolate_vector(v, &p[..dim]).ok_or(MadelungError::LoopLeavesGrid {
            x: p[0],
            y: p[1],
            z: p[2],
        })?;
        points.push(p);
        values.push(val);
    }
    let mut integral = 0.0;
    for i in 0..samples {
        let j = (i + 1) % samples;
        for a in 0..dim {
            integral += 0.5 * (values[i][a] + values[j][a]) * (points[j][a] - points[i][a]);
        }
    }
    Ok(mass / (2.0 * PI * hbar) * integral)
}
