//! Poincare constants and spectral gaps via the Witten Laplacian
//! `-Delta + 1/4 |grad V|^2 - 1/2 Delta V`, discretized with Dirichlet
//! truncation at the box boundary. 1D uses a Sturm-sequence bisection on the
//! symmetric tridiagonal matrix; 2D/3D use Lanczos with deflation of the
//! known ground state `e^(-V/2)`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::grid::SpatialGrid;
use crate::potentials::ConfinementPotential;
use crate::steady::SteadyState;
use crate::Result;

/// Which measure the gap refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapMeasure {
    BarePotential,
    SteadyState,
}

/// Spectral-gap report for one confinement measure.
#[derive(Debug, Clone)]
pub struct GapReport {
    /// Smallest positive eigenvalue (the ground eigenvalue is 0 up to
    /// discretization error).
    pub gap: f64,
    pub poincare_constant: f64,
    /// L2 residual of the known ground state `e^(-V/2)` under the discrete
    /// operator, relative to its norm.
    pub ground_state_defect: f64,
    pub measure: GapMeasure,
}

/// Holley-Stroock envelope around the bare-potential gap.
#[derive(Debug, Clone)]
pub struct SteadyGapReport {
    pub report: GapReport,
    /// Oscillation of the interaction perturbation `K rho_star` on the grid.
    pub oscillation: f64,
    /// `gap_V * e^(-osc)`.
    pub envelope_lower: f64,
    /// `gap_V * e^(osc)`.
    pub envelope_upper: f64,
    /// Holley-Stroock bound on the steady Poincare constant, `C_P e^(osc)`.
    pub poincare_bound: f64,
}

/// Witten gap of a closed-form (or tabulated) potential.
pub fn witten_gap(p: &ConfinementPotential, grid: &SpatialGrid) -> Result<GapReport> {
    let n = grid.len();
    let mut a = vec![0.0; n];
    let mut half_v = vec![0.0; n];
    for i in 0..n {
        let x = grid.point(i);
        let ev = p.eval(&x[..p.dim])?;
        let g2: f64 = ev.gradient.iter().map(|g| g * g).sum();
        a[i] = 0.25 * g2 - 0.5 * ev.laplacian;
        half_v[i] = ev.value;
    }
    gap_from_zeroth_order(grid, &a, &half_v, GapMeasure::BarePotential)
}

/// Witten gap from nodal samples of the potential (derivatives by centered
/// finite differences).
pub fn witten_gap_from_samples(
    grid: &SpatialGrid,
    v: &[f64],
    measure: GapMeasure,
) -> Result<GapReport> {
    let n = grid.len();
    let mut a = vec![0.0; n];
    for i in 0..n {
        let mut g2 = 0.0;
        let mut lap = 0.0;
        for axis in 0..grid.dim() {
            let (d1, d2) = fd_axis(grid, v, i, axis);
            g2 += d1 * d1;
            lap += d2;
        }
        a[i] = 0.25 * g2 - 0.5 * lap;
    }
    gap_from_zeroth_order(grid, &a, v, measure)
}

fn gap_from_zeroth_order(
    grid: &SpatialGrid,
    a: &[f64],
    v: &[f64],
    measure: GapMeasure,
) -> Result<GapReport> {
    let gap = if grid.dim() == 1 {
        tridiag_second_eigenvalue(grid, a)?
    } else {
        lanczos_deflated_gap(grid, a, v)?
    };
    if !(gap > 0.0) {
        return Err(Error::EigenFailure);
    }

    // Residual of the analytic ground state under the discrete operator.
    let mut psi: Vec<f64> = v.iter().map(|&vi| (-0.5 * vi).exp()).collect();
    let norm = grid.l2_norm(&psi);
    for p in psi.iter_mut() {
        *p /= norm;
    }
    let apsi = apply_witten(grid, a, &psi);
    let defect = grid.l2_norm(&apsi);

    Ok(GapReport { gap, poincare_constant: 1.0 / gap, ground_state_defect: defect, measure })
}

/// Gap for the steady measure `rho_star = e^(-V_star)` plus the
/// Holley-Stroock envelope derived from the bare-potential gap.
pub fn steady_measure_gap(
    steady: &SteadyState,
    bare: &ConfinementPotential,
) -> Result<SteadyGapReport> {
    let grid = steady.rho_star.grid();
    let report = witten_gap_from_samples(grid, &steady.v_star, GapMeasure::SteadyState)?;
    let bare_gap = witten_gap(bare, grid)?;
    let mut osc_min = f64::INFINITY;
    let mut osc_max = f64::NEG_INFINITY;
    for i in 0..grid.len() {
        let x = grid.point(i);
        let perturbation = steady.v_star[i] - bare.value(&x[..bare.dim])?;
        osc_min = osc_min.min(perturbation);
        osc_max = osc_max.max(perturbation);
    }
    let osc = osc_max - osc_min;
    Ok(SteadyGapReport {
        report,
        oscillation: osc,
        envelope_lower: bare_gap.gap * (-osc).exp(),
        envelope_upper: bare_gap.gap * osc.exp(),
        poincare_bound: bare_gap.poincare_constant * osc.exp(),
    })
}

/// Apply the discrete Witten operator (Dirichlet beyond the box).
fn apply_witten(grid: &SpatialGrid, a: &[f64], v: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut out = vec![0.0; n];
    let dims = grid.nodes_per_axis().to_vec();
    let d = grid.dim();
    let mut strides = vec![1usize; d];
    for k in (0..d.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    for i in 0..n {
        let mi = grid.multi_index(i);
        let mut acc = a[i] * v[i];
        for k in 0..d {
            let h2 = grid.spacing(k) * grid.spacing(k);
            let left = if mi[k] > 0 { v[i - strides[k]] } else { 0.0 };
            let right = if mi[k] + 1 < dims[k] { v[i + strides[k]] } else { 0.0 };
            acc += (2.0 * v[i] - left - right) / h2;
        }
        out[i] = acc;
    }
    out
}

/// First and second centered differences of nodal samples along one axis
/// (second-order one-sided at the boundary).
fn fd_axis(grid: &SpatialGrid, v: &[f64], i: usize, axis: usize) -> (f64, f64) {
    let dims = grid.nodes_per_axis();
    let d = grid.dim();
    let mut stride = 1usize;
    for k in (axis + 1..d).rev() {
        stride *= dims[k];
    }
    let mi = grid.multi_index(i);
    let h = grid.spacing(axis);
    let m = dims[axis];
    let j = mi[axis];
    let get = |jj: isize| -> f64 {
        let off = jj - j as isize;
        v[(i as isize + off * stride as isize) as usize]
    };
    if j == 0 {
        let d1 = (-3.0 * get(0) + 4.0 * get(1) - get(2)) / (2.0 * h);
        let d2 = (get(0) - 2.0 * get(1) + get(2)) / (h * h);
        (d1, d2)
    } else if j + 1 == m {
        let d1 = (3.0 * get(j as isize) - 4.0 * get(j as isize - 1) + get(j as isize - 2)) / (2.0 * h);
        let d2 = (get(j as isize) - 2.0 * get(j as isize - 1) + get(j as isize - 2)) / (h * h);
        (d1, d2)
    } else {
        let d1 = (get(j as isize + 1) - get(j as isize - 1)) / (2.0 * h);
        let d2 = (get(j as isize + 1) - 2.0 * get(j as isize) + get(j as isize - 1)) / (h * h);
        (d1, d2)
    }
}

/// Second-smallest eigenvalue of the 1D Witten tridiagonal via Sturm
/// bisection.
fn tridiag_second_eigenvalue(grid: &SpatialGrid, a: &[f64]) -> Result<f64> {
    let n = grid.len();
    let h2 = grid.spacing(0) * grid.spacing(0);
    let diag: Vec<f64> = a.iter().map(|&ai| 2.0 / h2 + ai).collect();
    let off = -1.0 / h2;

    // Gershgorin bounds.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, &di) in diag.iter().enumerate() {
        let r = if i == 0 || i + 1 == n { off.abs() } else { 2.0 * off.abs() };
        lo = lo.min(di - r);
        hi = hi.max(di + r);
    }

    // Number of eigenvalues below lambda by the LDL^T sign count.
    let count_below = |lambda: f64| -> usize {
        let mut count = 0usize;
        let mut d = 1.0_f64;
        for (i, &di) in diag.iter().enumerate() {
            let coupling = if i == 0 { 0.0 } else { off * off / d };
            d = di - lambda - coupling;
            if d == 0.0 {
                d = 1e-300;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };

    // Bisect for the k-th eigenvalue (0-based k = 1).
    let target = 2usize;
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count_below(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-13 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Smallest Ritz value of the Witten operator restricted to the complement of
/// the analytic ground state (Lanczos with full reorthogonalization).
fn lanczos_deflated_gap(grid: &SpatialGrid, a: &[f64], v: &[f64]) -> Result<f64> {
    let n = grid.len();
    let mut ground: Vec<f64> = v.iter().map(|&vi| (-0.5 * vi).exp()).collect();
    let gn = (ground.iter().map(|x| x * x).sum::<f64>()).sqrt();
    for g in ground.iter_mut() {
        *g /= gn;
    }

    let m = 80.min(n.saturating_sub(2)).max(2);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut alpha = Vec::with_capacity(m);
    let mut beta = Vec::with_capacity(m);

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    orthogonalize(&mut q, &ground);
    normalize_vec(&mut q)?;

    let mut q_prev: Vec<f64> = vec![0.0; n];
    let mut beta_prev = 0.0;
    for j in 0..m {
        let mut w = apply_witten(grid, a, &q);
        for (wi, &qi) in w.iter_mut().zip(&q_prev) {
            *wi -= beta_prev * qi;
        }
        let aj: f64 = w.iter().zip(&q).map(|(&x, &y)| x * y).sum();
        for (wi, &qi) in w.iter_mut().zip(&q) {
            *wi -= aj * qi;
        }
        // Full reorthogonalization against ground state and earlier vectors.
        orthogonalize(&mut w, &ground);
        for b in &basis {
            orthogonalize(&mut w, b);
        }
        alpha.push(aj);
        basis.push(q.clone());
        let bj = (w.iter().map(|x| x * x).sum::<f64>()).sqrt();
        if j + 1 == m || bj < 1e-12 {
            break;
        }
        beta.push(bj);
        q_prev = q;
        q = w;
        for x in q.iter_mut() {
            *x /= bj;
        }
        beta_prev = bj;
    }

    // Smallest eigenvalue of the Lanczos tridiagonal by Sturm bisection.
    smallest_tridiag_eigenvalue(&alpha, &beta)
}

fn smallest_tridiag_eigenvalue(diag: &[f64], off: &[f64]) -> Result<f64> {
    let n = diag.len();
    if n == 0 {
        return Err(Error::EigenFailure);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let mut r = 0.0;
        if i > 0 {
            r += off[i - 1].abs();
        }
        if i < n - 1 {
            r += off[i].abs();
        }
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    let count_below = |lambda: f64| -> usize {
        let mut count = 0usize;
        let mut d = 1.0_f64;
        for i in 0..n {
            let coupling = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] / d };
            d = diag[i] - lambda - coupling;
            if d == 0.0 {
                d = 1e-300;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count_below(mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-12 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn orthogonalize(v: &mut [f64], against: &[f64]) {
    let dot: f64 = v.iter().zip(against).map(|(&a, &b)| a * b).sum();
    for (vi, &gi) in v.iter_mut().zip(against) {
        *vi -= dot * gi;
    }
}

fn normalize_vec(v: &mut [f64]) -> Result<()> {
    let n = (v.iter().map(|x| x * x).sum::<f64>()).sqrt();
    if !(n > 0.0) {
        return Err(Error::EigenFailure);
    }
    for x in v.iter_mut() {
        *x /= n;
    }
    Ok(())
}

/// Randomized Poincare validation: max over smooth mean-zero trial functions
/// of `||u||^2 / ||grad u||^2` in `L^2(rho)`, to be compared with `C_P`.
pub fn poincare_ratio_max(
    grid: &SpatialGrid,
    rho: &[f64],
    trials: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let u = random_smooth_field(grid, &mut rng);
        let (num, den) = weighted_rayleigh(grid, rho, &u, None);
        worst = worst.max(num / den.max(1e-300));
    }
    worst
}

/// Max over trials of `||u w|| / ||grad u||` in `L^2(rho)` for a nodal
/// weight `w`, the measured constant of the first weighted Poincare
/// inequality (w = |grad V_star|).
pub fn weighted_poincare_ratio_max(
    grid: &SpatialGrid,
    rho: &[f64],
    weight: &[f64],
    trials: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let u = random_smooth_field(grid, &mut rng);
        let (num, den) = weighted_rayleigh(grid, rho, &u, Some(weight));
        worst = worst.max(num / den.max(1e-300));
    }
    worst.sqrt()
}

/// Max over trials of `||u w^2|| / (||grad u|| + ||w grad u||)` in `L^2(rho)`,
/// the measured constant of the second weighted Poincare inequality.
pub fn weighted_poincare2_ratio_max(
    grid: &SpatialGrid,
    rho: &[f64],
    weight: &[f64],
    trials: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let u = random_smooth_field(grid, &mut rng);
        let n = grid.len();
        let mut mass = 0.0;
        let mut mean = 0.0;
        for i in 0..n {
            let w = grid.quad_weight(i) * rho[i];
            mass += w;
            mean += w * u[i];
        }
        mean /= mass;
        let mut num = 0.0;
        let mut den_plain = 0.0;
        let mut den_weighted = 0.0;
        for i in 0..n {
            let w = grid.quad_weight(i) * rho[i];
            let ui = u[i] - mean;
            num += w * (ui * weight[i] * weight[i]).powi(2);
            let mut g2 = 0.0;
            for axis in 0..grid.dim() {
                let (d1, _) = fd_axis(grid, &u, i, axis);
                g2 += d1 * d1;
            }
            den_plain += w * g2;
            den_weighted += w * g2 * weight[i] * weight[i];
        }
        let den = den_plain.sqrt() + den_weighted.sqrt();
        worst = worst.max(num.sqrt() / den.max(1e-300));
    }
    worst
}

/// `(||u w||^2_{L2(rho)}, ||grad u||^2_{L2(rho)})` with the rho-weighted mean
/// of `u` removed first.
fn weighted_rayleigh(
    grid: &SpatialGrid,
    rho: &[f64],
    u: &[f64],
    weight: Option<&[f64]>,
) -> (f64, f64) {
    let n = grid.len();
    let mut mass = 0.0;
    let mut mean = 0.0;
    for i in 0..n {
        let w = grid.quad_weight(i) * rho[i];
        mass += w;
        mean += w * u[i];
    }
    mean /= mass;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let w = grid.quad_weight(i) * rho[i];
        let ui = u[i] - mean;
        let scale = weight.map_or(1.0, |wt| wt[i] * wt[i]);
        num += w * ui * ui * scale;
        let mut g2 = 0.0;
        for axis in 0..grid.dim() {
            let (d1, _) = fd_axis(grid, u, i, axis);
            g2 += d1 * d1;
        }
        den += w * g2;
    }
    (num, den)
}

fn random_smooth_field(grid: &SpatialGrid, rng: &mut impl Rng) -> Vec<f64> {
    let d = grid.dim();
    let modes = 3;
    let mut coeffs = Vec::new();
    for _ in 0..modes {
        let mut k = [0.0; 3];
        for (axis, kk) in k.iter_mut().enumerate().take(d) {
            *kk = rng.random_range(0.2..1.5) / grid.half_widths()[axis];
        }
        coeffs.push((k, rng.random_range(-1.0..1.0_f64), rng.random_range(0.0..std::f64::consts::TAU)));
    }
    let lin: Vec<f64> = (0..d).map(|_| rng.random_range(-0.3..0.3)).collect();
    let mut u = vec![0.0; grid.len()];
    for (i, ui) in u.iter_mut().enumerate() {
        let x = grid.point(i);
        let mut acc = 0.0;
        for (k, amp, phase) in &coeffs {
            let arg: f64 = (0..d).map(|axis| k[axis] * x[axis] * 2.0).sum::<f64>() + phase;
            acc += amp * arg.sin();
        }
        for axis in 0..d {
            acc += lin[axis] * x[axis];
        }
        *ui = acc;
    }
    u
}
