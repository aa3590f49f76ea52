//! Steady states of the kinetic equation through the fixed-point problem
//! `rho = T(rho)` with `S(rho) = e^(-V - K rho)` and `T = S / ||S||_L1`,
//! solved by damped Picard iteration from `rho_0 = e^-V`.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use crate::error::Error;
use crate::grid::{DensityField, SpatialGrid};
use crate::hermite::HermiteBasis;
use crate::kernels::{verify_positivity, InteractionKernel, PreparedKernel};
use crate::potentials::ConfinementPotential;
use crate::Result;

/// Converged (or best-effort) steady state.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub rho_star: DensityField,
    /// Effective potential `V + K rho_star` at the grid nodes.
    pub v_star: Vec<f64>,
    /// `||K^*(e^-V)||_Linf` on the grid.
    pub zeta: f64,
    /// Per-iteration L1 residuals.
    pub residuals: Vec<f64>,
    pub converged: bool,
    /// Whether the residual history was non-increasing.
    pub residuals_monotone: bool,
}

/// Damped Picard options.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Damping factor in (0, 1]; `None` selects 1 when `2 zeta e^zeta < 0.9`
    /// and 0.5 otherwise.
    pub damping: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Skip the kernel positivity gate (attractive Newton case).
    pub positivity_override: bool,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { damping: None, tol: 1e-12, max_iter: 500, positivity_override: false, seed: 7 }
    }
}

/// Precomputed data shared by the fixed-point maps on one grid.
pub struct FixedPoint {
    grid: SpatialGrid,
    potential: ConfinementPotential,
    prep: PreparedKernel,
    v_values: Vec<f64>,
    gibbs: Vec<f64>,
    zeta: f64,
}

impl FixedPoint {
    pub fn new(
        potential: &ConfinementPotential,
        kernel: &InteractionKernel,
        grid: &SpatialGrid,
    ) -> Result<Self> {
        let prep = kernel.prepare(grid)?;
        let mut v_values = vec![0.0; grid.len()];
        for (i, v) in v_values.iter_mut().enumerate() {
            let x = grid.point(i);
            *v = potential.value(&x[..potential.dim])?;
        }
        let gibbs: Vec<f64> = v_values.iter().map(|&v| (-v).exp()).collect();
        let adj = prep.convolve_values(&gibbs, true)?;
        let zeta = grid.linf_norm(&adj);
        Ok(Self {
            grid: grid.clone(),
            potential: potential.clone(),
            prep,
            v_values,
            gibbs,
            zeta,
        })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn prepared_kernel(&self) -> &PreparedKernel {
        &self.prep
    }

    pub fn potential(&self) -> &ConfinementPotential {
        &self.potential
    }

    /// `||K^*(e^-V)||_Linf`, the mass/contraction control constant.
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Gibbs samples `e^-V`.
    pub fn gibbs(&self) -> &[f64] {
        &self.gibbs
    }

    /// `S(rho) = e^(-V - K rho)` pointwise. Errors if the exponent overflows
    /// or the input is negative somewhere.
    pub fn s_map(&self, rho: &DensityField) -> Result<DensityField> {
        if !rho.is_nonnegative() {
            return Err(Error::NonpositiveDensity);
        }
        let psi = self.prep.convolve_values(rho.values(), false)?;
        let mut out = vec![0.0; self.grid.len()];
        let mut max_exp = f64::NEG_INFINITY;
        for i in 0..out.len() {
            let e = -self.v_values[i] - psi[i];
            max_exp = max_exp.max(e);
            out[i] = e.exp();
        }
        if max_exp > 700.0 {
            return Err(Error::ExponentOverflow { max_exponent: max_exp });
        }
        DensityField::new(self.grid.clone(), out)
    }

    /// `T(rho) = S(rho) / ||S(rho)||_L1`, unit mass after quadrature.
    pub fn t_map(&self, rho: &DensityField) -> Result<DensityField> {
        let s = self.s_map(rho)?;
        let mass = s.mass();
        if !(mass > 0.0) {
            return Err(Error::NonFinite { context: "mass of S(rho)" });
        }
        let vals: Vec<f64> = s.values().iter().map(|&v| v / mass).collect();
        DensityField::new(self.grid.clone(), vals)
    }

    /// Damped Picard iteration from `rho_0 = e^-V`.
    pub fn solve(&self, kernel: &InteractionKernel, opts: &SolveOptions) -> Result<SteadyState> {
        let rho0 = DensityField::new(self.grid.clone(), self.gibbs.clone())?;
        self.solve_from(kernel, rho0, opts)
    }

    /// Damped Picard iteration from an arbitrary admissible initialization
    /// (used by the uniqueness probe).
    pub fn solve_from(
        &self,
        kernel: &InteractionKernel,
        rho0: DensityField,
        opts: &SolveOptions,
    ) -> Result<SteadyState> {
        if !opts.positivity_override && !kernel.is_zero() {
            let report = verify_positivity(kernel, &self.grid, 4, opts.seed)?;
            if !report.passed {
                return Err(Error::KernelNotPositive { worst_ratio: report.worst_ratio });
            }
        }
        let contraction = 2.0 * self.zeta * self.zeta.exp();
        let omega = opts.damping.unwrap_or(if contraction < 0.9 { 1.0 } else { 0.5 });

        let mut rho = rho0;
        let mut residuals = Vec::new();
        let mut converged = false;
        for _ in 0..opts.max_iter {
            let t_rho = self.t_map(&rho)?;
            let next = rho.lin_comb(1.0 - omega, &t_rho, omega)?;
            let residual = next.l1_distance(&rho);
            residuals.push(residual);
            if let Some(&first) = residuals.first() {
                if residual > 10.0 * first && residual > opts.tol {
                    return Err(Error::Divergence { residual, initial: first });
                }
            }
            rho = next;
            if residual < opts.tol {
                converged = true;
                break;
            }
        }
        let psi = self.prep.convolve_values(rho.values(), false)?;
        let v_star: Vec<f64> = self.v_values.iter().zip(&psi).map(|(&v, &p)| v + p).collect();
        let residuals_monotone =
            residuals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-300);
        Ok(SteadyState {
            rho_star: rho,
            v_star,
            zeta: self.zeta,
            residuals,
            converged,
            residuals_monotone,
        })
    }

    /// Macroscopic free energy `int (V + K^e rho / 2) rho + int rho log rho`.
    pub fn macro_free_energy(&self, rho: &DensityField) -> Result<f64> {
        if rho.min() <= 0.0 {
            return Err(Error::NonpositiveDensity);
        }
        let even = self.prep.convolve_even(rho.values())?;
        let mut acc = 0.0;
        for (i, &r) in rho.values().iter().enumerate() {
            let w = self.grid.quad_weight(i);
            acc += w * ((self.v_values[i] + 0.5 * even[i]) * r + r * r.ln());
        }
        Ok(acc)
    }
}

/// One-shot helpers matching the operation signatures.
pub fn s_map(
    rho: &DensityField,
    potential: &ConfinementPotential,
    kernel: &InteractionKernel,
) -> Result<DensityField> {
    FixedPoint::new(potential, kernel, rho.grid())?.s_map(rho)
}

pub fn t_map(
    rho: &DensityField,
    potential: &ConfinementPotential,
    kernel: &InteractionKernel,
) -> Result<DensityField> {
    FixedPoint::new(potential, kernel, rho.grid())?.t_map(rho)
}

pub fn estimate_zeta(
    potential: &ConfinementPotential,
    kernel: &InteractionKernel,
    grid: &SpatialGrid,
) -> Result<f64> {
    Ok(FixedPoint::new(potential, kernel, grid)?.zeta())
}

pub fn solve_fixed_point(
    potential: &ConfinementPotential,
    kernel: &InteractionKernel,
    grid: &SpatialGrid,
    opts: &SolveOptions,
) -> Result<SteadyState> {
    FixedPoint::new(potential, kernel, grid)?.solve(kernel, opts)
}

/// L2 norm of the discrete stationary defect of `F = rho_star M` under the
/// centered semi-discretization of the kinetic equation. Second-order small
/// for a converged steady state.
pub fn verify_steady_kinetic(ss: &SteadyState, basis: &HermiteBasis, nu: f64) -> Result<f64> {
    let grid = ss.rho_star.grid();
    if grid.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: grid.dim() });
    }
    let n_x = grid.len();
    let n_v = basis.n_modes();
    let h = grid.spacing(0);

    // Coefficient rows of F = rho_star M: only row 0 is nonzero.
    let mut coeffs = vec![0.0; n_v * n_x];
    coeffs[..n_x].copy_from_slice(ss.rho_star.values());

    // Force field E = -d/dx V_star by centered differences (zero-ghost ends).
    let dxc = |row: &[f64], i: usize| -> f64 {
        let left = if i > 0 { row[i - 1] } else { 0.0 };
        let right = if i + 1 < n_x { row[i + 1] } else { 0.0 };
        (right - left) / (2.0 * h)
    };
    let mut force = vec![0.0; n_x];
    for i in 0..n_x {
        // V_star does not vanish at the boundary; one-sided there.
        force[i] = if i == 0 {
            -(ss.v_star[1] - ss.v_star[0]) / h
        } else if i + 1 == n_x {
            -(ss.v_star[n_x - 1] - ss.v_star[n_x - 2]) / h
        } else {
            -(ss.v_star[i + 1] - ss.v_star[i - 1]) / (2.0 * h)
        };
    }

    // dC/dt = -D_x(Vm C) + E (U C) + L C, evaluated rowwise.
    let mut vc = vec![0.0; n_v * n_x];
    crate::hermite::vmult_into(basis, n_x, &coeffs, &mut vc);
    let mut uc = vec![0.0; n_v * n_x];
    crate::hermite::dv_star_into(basis, n_x, &coeffs, &mut uc);

    let mut res_sq = 0.0;
    for n in 0..n_v {
        let vrow = &vc[n * n_x..(n + 1) * n_x];
        let urow = &uc[n * n_x..(n + 1) * n_x];
        let crow = &coeffs[n * n_x..(n + 1) * n_x];
        for i in 0..n_x {
            let rhs = -dxc(vrow, i) + force[i] * urow[i] - nu * n as f64 * crow[i];
            res_sq += grid.quad_weight(i) * rhs * rhs;
        }
    }
    Ok(res_sq.sqrt())
}

const RHO_MAGIC: &[u8; 9] = b"VFPK-RHO1";

/// Persist a steady state: magic, dimension, node counts, half-widths, then
/// `rho_star` and `V_star` as row-major little-endian f64.
pub fn write_snapshot(ss: &SteadyState, path: &Path) -> Result<()> {
    let grid = ss.rho_star.grid();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(RHO_MAGIC);
    buf.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    for &n in grid.nodes_per_axis() {
        buf.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for &l in grid.half_widths() {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    for &v in ss.rho_star.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &ss.v_star {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Read a steady-state snapshot back. The iteration history is not part of
/// the format; the loaded state reports converged with an empty history and
/// a NaN zeta (recompute it against a kernel if needed).
pub fn read_snapshot(path: &Path) -> Result<SteadyState> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut off = 0usize;
    let take = |buf: &[u8], off: &mut usize, n: usize| -> Result<Vec<u8>> {
        if *off + n > buf.len() {
            return Err(Error::Snapshot("truncated steady snapshot".into()));
        }
        let out = buf[*off..*off + n].to_vec();
        *off += n;
        Ok(out)
    };
    let magic = take(&buf, &mut off, 9)?;
    if magic != RHO_MAGIC {
        return Err(Error::Snapshot("bad magic for steady snapshot".into()));
    }
    let dim = u32::from_le_bytes(take(&buf, &mut off, 4)?.try_into().unwrap()) as usize;
    if dim == 0 || dim > 3 {
        return Err(Error::Snapshot(format!("bad dimension {dim}")));
    }
    let mut nodes = Vec::with_capacity(dim);
    for _ in 0..dim {
        nodes.push(u32::from_le_bytes(take(&buf, &mut off, 4)?.try_into().unwrap()) as usize);
    }
    let mut half = Vec::with_capacity(dim);
    for _ in 0..dim {
        half.push(f64::from_le_bytes(take(&buf, &mut off, 8)?.try_into().unwrap()));
    }
    let grid = SpatialGrid::new(&half, &nodes)?;
    let n = grid.len();
    let mut rho = Vec::with_capacity(n);
    for _ in 0..n {
        rho.push(f64::from_le_bytes(take(&buf, &mut off, 8)?.try_into().unwrap()));
    }
    let mut v_star = Vec::with_capacity(n);
    for _ in 0..n {
        v_star.push(f64::from_le_bytes(take(&buf, &mut off, 8)?.try_into().unwrap()));
    }
    if off != buf.len() {
        return Err(Error::Snapshot("trailing bytes in steady snapshot".into()));
    }
    Ok(SteadyState {
        rho_star: DensityField::new(grid, rho)?,
        v_star,
        zeta: f64::NAN,
        residuals: Vec::new(),
        converged: true,
        residuals_monotone: true,
    })
}
