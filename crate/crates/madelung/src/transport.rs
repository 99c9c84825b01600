//! Drift-flow machinery: trajectories of X⃗, transported regions,
//! probability conservation, and the expectation-drift theorem.
//!
//! Probability is conserved along the flow of the drift field — not
//! just globally but over every co-moving region N_t. The checks here
//! make that quantitative on a grid: regions are transported by
//! advecting their *boundary* (so holes stay holes), and in 1D the
//! boundary is tracked at sub-cell resolution because rasterized
//! region edges alone would drown the conservation signal in O(h)
//! jumps.

use serde::Serialize;
use std::io::Write;

use crate::bridge::{MadelungState, RHO_FLOOR_REL};
use crate::error::{MadelungError, Result};
use crate::grid::{
    self, interpolate_scalar, interpolate_vector, GridSpec, RealField, RealVectorField, RegionMask,
};

/// Advected seed trajectories.
#[derive(Debug, Clone)]
pub struct TrajectoryBundle {
    pub seeds: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    /// positions[seed][time] is a dim-vector.
    pub positions: Vec<Vec<Vec<f64>>>,
    /// False from the step at which a seed left the grid or the
    /// support; the position is frozen there.
    pub in_domain: Vec<Vec<bool>>,
}

impl TrajectoryBundle {
    /// CSV rows: t, seed, x[, y, z], in_domain.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let dim = self.seeds.first().map_or(1, Vec::len);
        let coords = ["x", "y", "z"];
        write!(out, "t,seed")?;
        for c in coords.iter().take(dim) {
            write!(out, ",{c}")?;
        }
        writeln!(out, ",in_domain")?;
        for (s, (pos, flags)) in self.positions.iter().zip(&self.in_domain).enumerate() {
            for (k, t) in self.times.iter().enumerate() {
                write!(out, "{t},{s}")?;
                for a in 0..dim {
                    write!(out, ",{}", pos[k][a])?;
                }
                writeln!(out, ",{}", flags[k])?;
            }
        }
        Ok(())
    }
}

// Velocity of the flow at (t, x): multilinear in space, linear in
// time between the two bracketing snapshots. None once x leaves the
// grid or the density drops below the support floor.
fn drift_at(snapshots: &[MadelungState], t: f64, x: &[f64]) -> Option<Vec<f64>> {
    let times: Vec<f64> = snapshots.iter().map(MadelungState::time).collect();
    let k = match times.iter().position(|&tk| tk > t) {
        Some(0) => 0,
        Some(j) => j - 1,
        None => times.len().saturating_sub(2),
    };
    let (s0, s1) = (&snapshots[k], &snapshots[k + 1]);
    let w = ((t - times[k]) / (times[k + 1] - times[k])).clamp(0.0, 1.0);

    let rho0 = interpolate_scalar(&s0.rho, x)?;
    let rho1 = interpolate_scalar(&s1.rho, x)?;
    let floor = RHO_FLOOR_REL
        * s0.rho
            .values()
            .iter()
            .cloned()
            .fold(0.0_f64, f64::max);
    if rho0.max(rho1) < floor {
        return None;
    }
    let v0 = interpolate_vector(&s0.drift, x)?;
    let v1 = interpolate_vector(&s1.drift, x)?;
    Some(
        v0.iter()
            .zip(&v1)
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect(),
    )
}

fn validate_snapshots(snapshots: &[MadelungState]) -> Result<&GridSpec> {
    if snapshots.len() < 2 {
        return Err(MadelungError::InsufficientSnapshots {
            needed: 2,
            got: snapshots.len(),
        });
    }
    let grid = snapshots[0].grid();
    for s in snapshots {
        if s.grid() != grid {
            return Err(MadelungError::GridMismatch);
        }
    }
    if !snapshots.windows(2).all(|w| w[1].time() > w[0].time()) {
        return Err(MadelungError::InvalidGrid(
            "snapshots must be strictly increasing in time".into(),
        ));
    }
    Ok(grid)
}

/// Integrates seed points along the drift flow with classic RK4,
/// `substeps` steps per snapshot interval. Seeds that leave the grid
/// or the support are flagged and frozen, never an error.
pub fn advect_points(
    snapshots: &[MadelungState],
    seeds: &[Vec<f64>],
    substeps: usize,
) -> Result<TrajectoryBundle> {
    let grid = validate_snapshots(snapshots)?;
    let dim = grid.dim();
    for s in seeds {
        if s.len() != dim {
            return Err(MadelungError::InvalidGrid(format!(
                "seed has {} components on a {dim}-dimensional grid",
                s.len()
            )));
        }
    }
    let substeps = substeps.max(1);
    let times: Vec<f64> = snapshots.iter().map(MadelungState::time).collect();

    let mut positions = Vec::with_capacity(seeds.len());
    let mut in_domain = Vec::with_capacity(seeds.len());
    for seed in seeds {
        let mut x = seed.clone();
        let mut alive = drift_at(snapshots, times[0], &x).is_some();
        let mut pos_series = vec![x.clone()];
        let mut flag_series = vec![alive];
        for w in times.windows(2) {
            let dt = (w[1] - w[0]) / substeps as f64;
            for j in 0..substeps {
                if !alive {
                    break;
                }
                let t = w[0] + j as f64 * dt;
                alive = rk4_step(snapshots, t, dt, &mut x);
            }
            pos_series.push(x.clone());
            flag_series.push(alive);
        }
        positions.push(pos_series);
        in_domain.push(flag_series);
    }
    Ok(TrajectoryBundle {
        seeds: seeds.to_vec(),
        times,
        positions,
        in_domain,
    })
}

// One RK4 step in place; false if the trajectory left the domain.
fn rk4_step(snapshots: &[MadelungState], t: f64, dt: f64, x: &mut [f64]) -> bool {
    let dim = x.len();
    let probe = |t: f64, base: &[f64], dir: Option<(&[f64], f64)>| -> Option<Vec<f64>> {
        let mut p = base.to_vec();
        if let Some((k, c)) = dir {
            for a in 0..dim {
                p[a] += c * k[a];
            }
        }
        drift_at(snapshots, t, &p)
    };
    let Some(k1) = probe(t, x, None) else {
        return false;
    };
    let Some(k2) = probe(t + dt / 2.0, x, Some((&k1, dt / 2.0))) else {
        return false;
    };
    let Some(k3) = probe(t + dt / 2.0, x, Some((&k2, dt / 2.0))) else {
        return false;
    };
    let Some(k4) = probe(t + dt, x, Some((&k3, dt))) else {
        return false;
    };
    for a in 0..dim {
        x[a] += dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
    }
    true
}

/// A region carried along the flow: rasterized masks at every
/// snapshot time, plus exact interval bounds in 1D (sub-cell
/// resolution — rasterization alone is an O(h) measurement).
#[derive(Debug, Clone)]
pub struct TransportedRegions {
    pub times: Vec<f64>,
    pub masks: Vec<RegionMask>,
    /// 1D only: disjoint closed intervals per time, ascending.
    pub intervals: Option<Vec<Vec<(f64, f64)>>>,
}

// Maximal runs of member cells as continuous intervals
// [left cell edge, right cell edge].
fn mask_intervals_1d(region: &RegionMask) -> Vec<(f64, f64)> {
    let grid = region.grid();
    let h = grid.spacing(0);
    let mut intervals = Vec::new();
    let mut start: Option<usize> = None;
    for i in 0..grid.len() {
        match (region.contains(i), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                intervals.push((grid.coord(0, s) - h / 2.0, grid.coord(0, i - 1) + h / 2.0));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        intervals.push((
            grid.coord(0, s) - h / 2.0,
            grid.coord(0, grid.len() - 1) + h / 2.0,
        ));
    }
    intervals
}

// Nearest cell multi-index for a physical point, None off a bounded
// grid.
fn nearest_cell(grid: &GridSpec, point: &[f64]) -> Option<[usize; 3]> {
    let mut idx = [0usize; 3];
    for a in 0..grid.dim() {
        let h = grid.spacing(a);
        if grid.periodic(a) {
            let n = grid.n(a) as isize;
            let i = ((point[a] - grid.lower(a)) / h).floor() as isize;
            idx[a] = i.rem_euclid(n) as usize;
        } else {
            let u = (point[a] - grid.lower(a)) / h - 0.5;
            let i = u.round();
            if i < 0.0 || i > (grid.n(a) - 1) as f64 {
                return None;
            }
            idx[a] = i as usize;
        }
    }
    Some(idx)
}

/// Transports `region` along the flow of the snapshots. The boundary
/// is advected (1D: interval endpoints; 2D/3D: a dense cloud seeded
/// on the boundary cells) and the mask re-rasterized at each time —
/// per-cell advection would destroy the region's topology.
pub fn transport_region(
    snapshots: &[MadelungState],
    region: &RegionMask,
    substeps: usize,
) -> Result<TransportedRegions> {
    let grid = validate_snapshots(snapshots)?;
    if region.grid() != grid {
        return Err(MadelungError::GridMismatch);
    }
    if region.count() == 0 {
        return Err(MadelungError::EmptyRegion);
    }
    if grid.dim() == 1 {
        transport_region_1d(snapshots, region, substeps)
    } else {
        transport_region_nd(snapshots, region, substeps)
    }
}

fn transport_region_1d(
    snapshots: &[MadelungState],
    region: &RegionMask,
    substeps: usize,
) -> Result<TransportedRegions> {
    let grid = snapshots[0].grid().clone();
    let base = mask_intervals_1d(region);
    let seeds: Vec<Vec<f64>> = base
        .iter()
        .flat_map(|&(a, b)| [vec![a], vec![b]])
        .collect();
    let bundle = advect_points(snapshots, &seeds, substeps)?;

    let mut times = Vec::new();
    let mut masks = Vec::new();
    let mut intervals = Vec::new();
    for (k, &t) in bundle.times.iter().enumerate() {
        let mut at_t = Vec::with_capacity(base.len());
        for pair in 0..base.len() {
            let a = bundle.positions[2 * pair][k][0];
            let b = bundle.positions[2 * pair + 1][k][0];
            if b <= a {
                return Err(MadelungError::BoundaryDegenerate(format!(
                    "interval endpoints crossed at t = {t}: [{a}, {b}]"
                )));
            }
            at_t.push((a, b));
        }
        let member: Vec<bool> = (0..grid.len())
            .map(|i| {
                let x = grid.coord(0, i);
                at_t.iter().any(|&(a, b)| (a..=b).contains(&x))
            })
            .collect();
        masks.push(RegionMask::new(grid.clone(), member)?);
        intervals.push(at_t);
        times.push(t);
    }
    Ok(TransportedRegions {
        times,
        masks,
        intervals: Some(intervals),
    })
}

fn transport_region_nd(
    snapshots: &[MadelungState],
    region: &RegionMask,
    substeps: usize,
) -> Result<TransportedRegions> {
    let grid = snapshots[0].grid().clone();
    let dim = grid.dim();
    let member = region.member();

    // Boundary cells: members with a non-member (or off-grid) face
    // neighbor. Each is seeded with its center and corners so the
    // advected shell stays closed under moderate stretching.
    let mut seeds = Vec::new();
    for i in 0..grid.len() {
        if !member[i] {
            continue;
        }
        let is_boundary = (0..dim).any(|a| {
            [-1isize, 1].iter().any(|&s| match grid.neighbor(i, a, s) {
                Some(j) => !member[j],
                None => true,
            })
        });
        if !is_boundary {
            continue;
        }
        let center = grid.point(i);
        let n_corners = 1usize << dim;
        seeds.push(center[..dim].to_vec());
        for c in 0..n_corners {
            let mut p = center[..dim].to_vec();
            for (a, q) in p.iter_mut().enumerate() {
                let s = if (c >> a) & 1 == 1 { 0.5 } else { -0.5 };
                *q += s * grid.spacing(a);
            }
            seeds.push(p);
        }
    }
    if seeds.is_empty() {
        return Err(MadelungError::EmptyRegion);
    }
    let bundle = advect_points(snapshots, &seeds, substeps)?;

    // Exterior reference: the non-member cell farthest from the
    // member centroid, advected alongside the boundary.
    let exterior_ref = {
        let mut centroid = vec![0.0; dim];
        let mut count = 0.0;
        for i in 0..grid.len() {
            if member[i] {
                let p = grid.point(i);
                for a in 0..dim {
                    centroid[a] += p[a];
                }
                count += 1.0;
            }
        }
        for c in centroid.iter_mut() {
            *c /= count;
        }
        let far = (0..grid.len())
            .filter(|&i| !member[i])
            .max_by(|&i, &j| {
                let d = |i: usize| {
                    let p = grid.point(i);
                    (0..dim).map(|a| (p[a] - centroid[a]).powi(2)).sum::<f64>()
                };
                d(i).total_cmp(&d(j))
            });
        match far {
            Some(i) => {
                let p = grid.point(i);
                Some(advect_points(snapshots, &[p[..dim].to_vec()], substeps)?)
            }
            None => None,
        }
    };

    let mut masks = Vec::new();
    for (k, &t) in bundle.times.iter().enumerate() {
        // Shell = cells containing advected boundary points.
        let mut shell = vec![false; grid.len()];
        for pos in &bundle.positions {
            if let Some(idx) = nearest_cell(&grid, &pos[k]) {
                shell[grid.flat_index(&idx[..dim])] = true;
            }
        }
        // Exterior flood fill (face adjacency) from every grid-border
        // cell not in the shell, plus the advected exterior reference
        // (the only handle on "outside" when every axis is periodic —
        // the flow is a homeomorphism, so an outside point stays
        // outside).
        let mut exterior = vec![false; grid.len()];
        let mut queue = std::collections::VecDeque::new();
        for i in 0..grid.len() {
            if shell[i] {
                continue;
            }
            let idx = grid.multi_index(i);
            let on_border =
                (0..dim).any(|a| !grid.periodic(a) && (idx[a] == 0 || idx[a] == grid.n(a) - 1));
            if on_border {
                exterior[i] = true;
                queue.push_back(i);
            }
        }
        if let Some(pos) = exterior_ref.as_ref().map(|b| &b.positions[0][k]) {
            if let Some(idx) = nearest_cell(&grid, pos) {
                let i = grid.flat_index(&idx[..dim]);
                if !shell[i] && !exterior[i] {
                    exterior[i] = true;
                    queue.push_back(i);
                }
            }
        }
        while let Some(i) = queue.pop_front() {
            for a in 0..dim {
                for s in [-1isize, 1] {
                    if let Some(j) = grid.neighbor(i, a, s) {
                        if !shell[j] && !exterior[j] {
                            exterior[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        let inside: Vec<bool> = (0..grid.len()).map(|i| !exterior[i]).collect();
        let mask = RegionMask::new(grid.clone(), inside)?;
        if mask.count() == 0 {
            return Err(MadelungError::BoundaryDegenerate(format!(
                "advected boundary encloses no cells at t = {t}"
            )));
        }
        masks.push(mask);
    }
    Ok(TransportedRegions {
        times: bundle.times,
        masks,
        intervals: None,
    })
}

/// ∫_N ρ — plain masked Riemann sum.
pub fn probability_over_region(state: &MadelungState, region: &RegionMask) -> Result<f64> {
    grid::integrate(&state.rho, region)
}

// ∫ ρ over a union of intervals with the cell-overlap rule (ρ
// constant per cell — consistent with the Riemann quadrature).
fn interval_mass(rho: &RealField, intervals: &[(f64, f64)]) -> f64 {
    moment(rho, None, intervals)
}

// ∫ w·ρ over intervals, with w = x if `weight_x`, or an arbitrary
// per-cell field.
fn moment(rho: &RealField, weight: Option<&RealField>, intervals: &[(f64, f64)]) -> f64 {
    let grid = rho.grid();
    let h = grid.spacing(0);
    let mut total = 0.0;
    for i in 0..grid.len() {
        let lo = grid.coord(0, i) - h / 2.0;
        let hi = grid.coord(0, i) + h / 2.0;
        let mut overlap = 0.0;
        for &(a, b) in intervals {
            let l = a.max(lo);
            let r = b.min(hi);
            if r > l {
                overlap += r - l;
            }
        }
        if overlap > 0.0 {
            let w = weight.map_or(1.0, |f| f.values()[i]);
            total += w * rho.values()[i] * overlap;
        }
    }
    total
}

fn moment_x(rho: &RealField, intervals: &[(f64, f64)]) -> f64 {
    let grid = rho.grid();
    let h = grid.spacing(0);
    let mut total = 0.0;
    for i in 0..grid.len() {
        let lo = grid.coord(0, i) - h / 2.0;
        let hi = grid.coord(0, i) + h / 2.0;
        let mut acc = 0.0;
        for &(a, b) in intervals {
            let l = a.max(lo);
            let r = b.min(hi);
            if r > l {
                acc += (r - l) * (r + l) / 2.0; // ∫ x dx over the overlap
            }
        }
        total += rho.values()[i] * acc;
    }
    total
}

/// Probability over the transported region at each snapshot, and its
/// maximum excursion from the initial value. The continuum value is
/// exactly conserved; the excursion measures discretization error.
#[derive(Debug, Clone, Serialize)]
pub struct ConservationReport {
    pub times: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub max_drift: f64,
}

pub fn conservation_check(
    snapshots: &[MadelungState],
    region: &RegionMask,
    substeps: usize,
) -> Result<ConservationReport> {
    let moved = transport_region(snapshots, region, substeps)?;
    let mut probabilities = Vec::with_capacity(moved.times.len());
    for (k, _) in moved.times.iter().enumerate() {
        let p = match &moved.intervals {
            Some(iv) => interval_mass(&snapshots[k].rho, &iv[k]),
            None => probability_over_region(&snapshots[k], &moved.masks[k])?,
        };
        probabilities.push(p);
    }
    let p0 = probabilities[0];
    let max_drift = probabilities
        .iter()
        .fold(0.0_f64, |m, &p| m.max((p - p0).abs()));
    Ok(ConservationReport {
        times: moved.times,
        probabilities,
        max_drift,
    })
}

/// Both sides of the expectation-drift theorem over a transported
/// region: d/dt E[x⃗, N_t] (centered differences) against E[X⃗, N_t]
/// (direct quadrature). Both are unnormalized integrals against ρ.
#[derive(Debug, Clone, Serialize)]
pub struct ExpectationDriftReport {
    /// Interior snapshot times (endpoints have no centered
    /// difference).
    pub times: Vec<f64>,
    /// lhs[k][a] = d/dt E[x_a, N_t] at times[k].
    pub lhs: Vec<Vec<f64>>,
    pub rhs: Vec<Vec<f64>>,
    pub gap: f64,
}

pub fn expectation_drift_check(
    snapshots: &[MadelungState],
    region: &RegionMask,
    substeps: usize,
) -> Result<ExpectationDriftReport> {
    let grid = validate_snapshots(snapshots)?.clone();
    let dim = grid.dim();
    let moved = transport_region(snapshots, region, substeps)?;

    // E[x_a, N_t] for every snapshot.
    let mut ex = Vec::with_capacity(moved.times.len());
    let mut e_drift = Vec::with_capacity(moved.times.len());
    for k in 0..moved.times.len() {
        let s = &snapshots[k];
        let mut pos = vec![0.0; dim];
        let mut drf = vec![0.0; dim];
        match &moved.intervals {
            Some(iv) => {
                pos[0] = moment_x(&s.rho, &iv[k]);
                drf[0] = moment(&s.rho, Some(s.drift.component(0)), &iv[k]);
            }
            None => {
                let dv = grid.cell_volume();
                for i in 0..grid.len() {
                    if !moved.masks[k].contains(i) {
                        continue;
                    }
                    let p = grid.point(i);
                    let r = s.rho.values()[i];
                    for a in 0..dim {
                        pos[a] += p[a] * r * dv;
                        drf[a] += s.drift.component(a).values()[i] * r * dv;
                    }
                }
            }
        }
        ex.push(pos);
        e_drift.push(drf);
    }

    let mut times = Vec::new();
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let mut gap = 0.0_f64;
    for k in 1..moved.times.len() - 1 {
        let dt2 = moved.times[k + 1] - moved.times[k - 1];
        let l: Vec<f64> = (0..dim)
            .map(|a| (ex[k + 1][a] - ex[k - 1][a]) / dt2)
            .collect();
        let r = e_drift[k].clone();
        for a in 0..dim {
            gap = gap.max((l[a] - r[a]).abs());
        }
        times.push(moved.times[k]);
        lhs.push(l);
        rhs.push(r);
    }
    Ok(ExpectationDriftReport {
        times,
        lhs,
        rhs,
        gap,
    })
}

/// The drift field as a limit of normalized region velocities: the
/// ratio (d/dt E[x⃗, N_t^ε]) / P(t, N_t^ε) over shrinking transported
/// balls, Richardson-extrapolated in ε².
#[derive(Debug, Clone, Serialize)]
pub struct LocalDriftReport {
    pub radii: Vec<f64>,
    /// estimates[j][a]: ratio for radius j, component a, at the
    /// middle snapshot.
    pub estimates: Vec<Vec<f64>>,
    pub extrapolated: Vec<f64>,
    /// Interpolated X⃗ at the transported center, same time.
    pub reference: Vec<f64>,
}

pub fn local_drift_estimate(
    snapshots: &[MadelungState],
    center: &[f64],
    radii: &[f64],
    substeps: usize,
) -> Result<LocalDriftReport> {
    let grid = validate_snapshots(snapshots)?.clone();
    let dim = grid.dim();
    if snapshots.len() < 3 {
        return Err(MadelungError::InsufficientSnapshots {
            needed: 3,
            got: snapshots.len(),
        });
    }
    if radii.len() < 2 || !radii.windows(2).all(|w| w[1] < w[0]) {
        return Err(MadelungError::InvalidGrid(
            "need at least two strictly decreasing radii".into(),
        ));
    }
    let h_max = (0..dim).map(|a| grid.spacing(a)).fold(0.0_f64, f64::max);
    let smallest = *radii.last().unwrap();
    if smallest < 2.0 * h_max {
        return Err(MadelungError::RadiusBelowGrid {
            radius: smallest,
            spacing: h_max,
        });
    }

    let mid = snapshots.len() / 2;
    let mut estimates = Vec::with_capacity(radii.len());
    for &eps in radii {
        let region = RegionMask::from_predicate(&grid, |x| {
            let mut d2 = 0.0;
            for a in 0..dim {
                d2 += (x[a] - center[a]).powi(2);
            }
            d2 <= eps * eps
        });
        let moved = transport_region(snapshots, &region, substeps)?;
        let (ex, mass): (Vec<Vec<f64>>, Vec<f64>) = (mid - 1..=mid + 1)
            .map(|k| {
                let s = &snapshots[k];
                match &moved.intervals {
                    Some(iv) => (vec![moment_x(&s.rho, &iv[k])], interval_mass(&s.rho, &iv[k])),
                    None => {
                        let dv = grid.cell_volume();
                        let mut pos = vec![0.0; dim];
                        let mut m = 0.0;
                        for i in 0..grid.len() {
                            if moved.masks[k].contains(i) {
                                let p = grid.point(i);
                                let r = s.rho.values()[i];
                                for a in 0..dim {
                                    pos[a] += p[a] * r * dv;
                                }
                                m += r * dv;
                            }
                        }
                        (pos, m)
                    }
                }
            })
            .unzip();
        let dt2 = snapshots[mid + 1].time() - snapshots[mid - 1].time();
        if mass[1] <= 0.0 {
            return Err(MadelungError::EmptyRegion);
        }
        let est: Vec<f64> = (0..dim)
            .map(|a| (ex[2][a] - ex[0][a]) / dt2 / mass[1])
            .collect();
        estimates.push(est);
    }

    // Richardson in ε² from the two smallest radii.
    let m = radii.len();
    let (e_big, e_small) = (radii[m - 2], radii[m - 1]);
    let extrapolated: Vec<f64> = (0..dim)
        .map(|a| {
            let (f_big, f_small) = (estimates[m - 2][a], estimates[m - 1][a]);
            f_small + (f_small - f_big) * e_small * e_small / (e_big * e_big - e_small * e_small)
        })
        .collect();

    // Reference: X⃗ interpolated at the transported center.
    let bundle = advect_points(snapshots, &[center.to_vec()], substeps)?;
    let at = &bundle.positions[0][mid];
    let reference = interpolate_vector(&snapshots[mid].drift, at).ok_or(
        MadelungError::LoopLeavesGrid {
            x: at[0],
            y: *at.get(1).unwrap_or(&0.0),
            z: *at.get(2).unwrap_or(&0.0),
        },
    )?;
    Ok(LocalDriftReport {
        radii: radii.to_vec(),
        estimates,
        extrapolated,
        reference,
    })
}

/// One entry of `classical_limit_run`.
#[derive(Debug, Clone, Serialize)]
pub struct ClassicalLimitPoint {
    pub mass: f64,
    pub bohm_norm: f64,
    pub force_norm: f64,
    /// ‖F_B‖ / ‖F⃗‖.
    pub ratio: f64,
}

/// Scenario for the non-quantum limit: which density and external
/// force to evaluate at each mass.
pub enum ClassicalScenario {
    /// The same Gaussian of width `sigma` for every mass, against
    /// the harmonic force −mω²x. The width is deliberately *not* the
    /// per-mass ground-state width: the ground state is exactly
    /// force-balanced (F_B = −F⃗ pointwise), so it would report a
    /// ratio of 1 at every mass.
    GaussianInWell { omega: f64, sigma: f64 },
    /// A fixed density shape for every mass, against a fixed force
    /// field; isolates the explicit 1/m prefactor of the Bohm term.
    FixedDensity {
        rho: RealField,
        force: RealVectorField,
    },
}

/// Evaluates ‖F_B‖/‖F⃗‖ across a mass sequence: the quantum force
/// carries ħ²/2m and fades as the mass grows — the non-quantum limit
/// made quantitative.
pub fn classical_limit_run(
    grid: &GridSpec,
    masses: &[f64],
    scenario: &ClassicalScenario,
    hbar: f64,
) -> Result<Vec<ClassicalLimitPoint>> {
    if masses.is_empty() || !masses.windows(2).all(|w| w[1] > w[0]) {
        return Err(MadelungError::InvalidGrid(
            "mass sequence must be strictly increasing".into(),
        ));
    }
    let mut out = Vec::with_capacity(masses.len());
    for &m in masses {
        let params = crate::dynamics::SimParams::new(
            m,
            hbar,
            1e-3,
            1.0,
            crate::dynamics::SolverKind::SplitStepFourier,
        );
        let (rho, force) = match scenario {
            ClassicalScenario::GaussianInWell { omega, sigma } => {
                let s2 = sigma * sigma;
                let rho = RealField::from_fn(grid, 0.0, |x| {
                    let r2: f64 = x.iter().map(|&c| c * c).sum();
                    (-r2 / (2.0 * s2)).exp()
                });
                let w = *omega;
                let force = RealVectorField::from_fn(grid, 0.0, move |x, a| -m * w * w * x[a]);
                (rho, force)
            }
            ClassicalScenario::FixedDensity { rho, force } => (rho.clone(), force.clone()),
        };
        let max_rho = rho.values().iter().cloned().fold(0.0_f64, f64::max);
        let support = {
            let member: Vec<bool> = rho.values().iter().map(|&r| r >= 1e-8 * max_rho).collect();
            RegionMask::new(grid.clone(), member)?
        };
        let probe = support.erode(3);
        let fb = crate::bridge::bohm_force(&rho, &support, &params)?;
        let norm_of = |v: &RealVectorField| -> f64 {
            let dv = grid.cell_volume();
            let mut sum = 0.0;
            for i in 0..grid.len() {
                if probe.contains(i) {
                    for a in 0..grid.dim() {
                        sum += v.component(a).values()[i].powi(2);
                    }
                }
            }
            (sum * dv).sqrt()
        };
        let bohm_norm = norm_of(&fb);
        let force_norm = norm_of(&force);
        out.push(ClassicalLimitPoint {
            mass: m,
            bohm_norm,
            force_norm,
            ratio: if force_norm > 0.0 {
                bohm_norm / force_norm
            } else {
                f64::INFINITY
            },
        });
    }
    Ok(out)
}
