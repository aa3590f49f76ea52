//! Confinement potentials V, their derivatives, Gibbs normalization
//! `int e^-V = 1`, and the machine-checkable confinement assumptions
//! (weighted integrability, Hessian-gradient smallness pairs, Poincare
//! constant via the Witten spectral gap).

use crate::error::Error;
use crate::grid::SpatialGrid;
use crate::Result;

/// Closed-form and tabulated confinement families.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialFamily {
    /// `|x|^2 / 2`, the harmonic well of the Gaussian equilibrium.
    Quadratic,
    /// `<x>^(1+alpha)` with `<x> = sqrt(1 + |x|^2)`.
    PowerGrowth { alpha: f64 },
    /// `<x> log(1 + |x|^2)^alpha`.
    LogPower { alpha: f64 },
    /// Nodal samples on a 1D grid, cubic (Catmull-Rom) interpolation off-node.
    Tabulated { grid: SpatialGrid, samples: Vec<f64> },
}

/// A confinement potential with its additive Gibbs normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfinementPotential {
    pub family: PotentialFamily,
    pub additive_constant: f64,
    pub dim: usize,
}

/// Pointwise evaluation data: value, gradient, Frobenius norm of the Hessian
/// and the Laplacian (trace of the Hessian).
#[derive(Debug, Clone)]
pub struct PotentialEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian_norm: f64,
    pub laplacian: f64,
}

impl ConfinementPotential {
    /// Harmonic well with the analytic Gaussian normalizer `d/2 log(2 pi)`.
    pub fn quadratic(dim: usize) -> Self {
        Self {
            family: PotentialFamily::Quadratic,
            additive_constant: 0.5 * dim as f64 * (2.0 * std::f64::consts::PI).ln(),
            dim,
        }
    }

    pub fn power_growth(alpha: f64, dim: usize) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::NonFinite { context: "power-growth exponent" });
        }
        Ok(Self { family: PotentialFamily::PowerGrowth { alpha }, additive_constant: 0.0, dim })
    }

    pub fn log_power(alpha: f64, dim: usize) -> Result<Self> {
        if !(alpha >= 1.0) {
            // Below alpha = 1 the Hessian blows up at the origin and V is not C^2.
            return Err(Error::NonFinite { context: "log-power exponent" });
        }
        Ok(Self { family: PotentialFamily::LogPower { alpha }, additive_constant: 0.0, dim })
    }

    /// Tabulated 1D potential from nodal samples.
    pub fn tabulated(grid: SpatialGrid, samples: Vec<f64>) -> Result<Self> {
        if grid.dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: grid.dim() });
        }
        if samples.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: samples.len() });
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "potential table" });
        }
        Ok(Self { family: PotentialFamily::Tabulated { grid, samples }, additive_constant: 0.0, dim: 1 })
    }

    /// Evaluate value, gradient, Hessian Frobenius norm and Laplacian at `x`.
    pub fn eval(&self, x: &[f64]) -> Result<PotentialEval> {
        debug_assert_eq!(x.len(), self.dim);
        match &self.family {
            PotentialFamily::Quadratic => {
                let r2: f64 = x.iter().map(|&c| c * c).sum();
                Ok(PotentialEval {
                    value: 0.5 * r2 + self.additive_constant,
                    gradient: x.to_vec(),
                    hessian_norm: (self.dim as f64).sqrt(),
                    laplacian: self.dim as f64,
                })
            }
            PotentialFamily::PowerGrowth { alpha } => {
                // V = phi(s) with s = |x|^2, phi = (1+s)^((1+alpha)/2).
                let s: f64 = x.iter().map(|&c| c * c).sum();
                let a = *alpha;
                let u = (1.0 + s).sqrt();
                let value = u.powf(1.0 + a) + self.additive_constant;
                let dphi = 0.5 * (1.0 + a) * (1.0 + s).powf(0.5 * (a - 1.0));
                let d2phi = 0.25 * (1.0 + a) * (a - 1.0) * (1.0 + s).powf(0.5 * (a - 3.0));
                Ok(self.from_radial(x, s, dphi, d2phi, value))
            }
            PotentialFamily::LogPower { alpha } => {
                // V = phi(s), phi = (1+s)^(1/2) * log(1+s)^alpha.
                let s: f64 = x.iter().map(|&c| c * c).sum();
                let a = *alpha;
                let l = (1.0 + s).ln();
                let sq = (1.0 + s).sqrt();
                let value = sq * l.powf(a) + self.additive_constant;
                let la1 = if l == 0.0 && a == 1.0 { 1.0 } else { a * l.powf(a - 1.0) };
                let dphi = (0.5 * l.powf(a) + la1) / sq;
                // At the origin the rank-one Hessian term carries a factor
                // |x|^2 that kills the l^(a-2) blow-up for a >= 1; the limit
                // of 4 phi'' x x^T is zero there.
                let d2phi = if s == 0.0 {
                    0.0
                } else {
                    let la2 = a * (a - 1.0) * l.powf(a - 2.0);
                    (-0.25 * l.powf(a) + la2) / (1.0 + s).powf(1.5)
                };
                Ok(self.from_radial(x, s, dphi, d2phi, value))
            }
            PotentialFamily::Tabulated { grid, samples } => {
                let (v, dv, d2v) = cubic_interp(grid, samples, x[0])?;
                Ok(PotentialEval {
                    value: v + self.additive_constant,
                    gradient: vec![dv],
                    hessian_norm: d2v.abs(),
                    laplacian: d2v,
                })
            }
        }
    }

    /// Assemble gradient/Hessian data for radial `V = phi(|x|^2)`.
    fn from_radial(&self, x: &[f64], s: f64, dphi: f64, d2phi: f64, value: f64) -> PotentialEval {
        let d = self.dim as f64;
        let gradient: Vec<f64> = x.iter().map(|&c| 2.0 * c * dphi).collect();
        // Hessian = 2 dphi I + 4 phi'' x x^T.
        let diag = 2.0 * dphi;
        let frob2 = d * diag * diag + (4.0 * d2phi).powi(2) * s * s
            + 2.0 * diag * 4.0 * d2phi * s;
        let laplacian = d * diag + 4.0 * d2phi * s;
        PotentialEval { value, gradient, hessian_norm: frob2.max(0.0).sqrt(), laplacian }
    }

    /// Value only.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval(x)?.value)
    }

    /// Nodal samples of `e^-V` on a grid.
    pub fn gibbs_values(&self, grid: &SpatialGrid) -> Result<Vec<f64>> {
        let mut out = vec![0.0; grid.len()];
        for (i, o) in out.iter_mut().enumerate() {
            let x = grid.point(i);
            *o = (-self.value(&x[..self.dim])?).exp();
        }
        Ok(out)
    }

    /// Check the boundary-decay precondition: relative to its maximum, `e^-V`
    /// must fall below 1e-14 at every boundary node (box large enough).
    pub fn check_boundary_decay(&self, grid: &SpatialGrid) -> Result<()> {
        let mut v_min = f64::INFINITY;
        let mut v_bdry_min = f64::INFINITY;
        for i in 0..grid.len() {
            let x = grid.point(i);
            let v = self.value(&x[..self.dim])?;
            v_min = v_min.min(v);
            if grid.on_boundary(i) {
                v_bdry_min = v_bdry_min.min(v);
            }
        }
        if v_bdry_min - v_min < -(1e-14_f64.ln()) {
            return Err(Error::BoundaryDecay);
        }
        Ok(())
    }
}

/// Cubic Catmull-Rom interpolation of a 1D table with first and second
/// derivatives; errors outside the box.
fn cubic_interp(grid: &SpatialGrid, samples: &[f64], x: f64) -> Result<(f64, f64, f64)> {
    let l = grid.half_widths()[0];
    let h = grid.spacing(0);
    let n = grid.len();
    if x < -l - 1e-12 || x > l + 1e-12 {
        return Err(Error::OutOfDomain);
    }
    let t_full = (x + l) / h;
    let j = (t_full.floor() as isize).clamp(0, n as isize - 2) as usize;
    let t = t_full - j as f64;
    // Clamped end handling: duplicate boundary samples.
    let p0 = samples[j.saturating_sub(1)];
    let p1 = samples[j];
    let p2 = samples[(j + 1).min(n - 1)];
    let p3 = samples[(j + 2).min(n - 1)];
    let a = -0.5 * p0 + 1.5 * p1 - 1.5 * p2 + 0.5 * p3;
    let b = p0 - 2.5 * p1 + 2.0 * p2 - 0.5 * p3;
    let c = -0.5 * p0 + 0.5 * p2;
    let d = p1;
    let v = ((a * t + b) * t + c) * t + d;
    let dv = ((3.0 * a * t + 2.0 * b) * t + c) / h;
    let d2v = (6.0 * a * t + 2.0 * b) / (h * h);
    Ok((v, dv, d2v))
}

/// Normalize the additive constant so that the trapezoid-rule mass of `e^-V`
/// on the grid is one.
pub fn normalize(p: &ConfinementPotential, grid: &SpatialGrid) -> Result<ConfinementPotential> {
    p.check_boundary_decay(grid)?;
    let gibbs = p.gibbs_values(grid)?;
    let mass = grid.quadrature(&gibbs);
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::NonFinite { context: "Gibbs mass" });
    }
    let mut out = p.clone();
    out.additive_constant += mass.ln();
    Ok(out)
}

/// Numerical verification report for the confinement assumptions.
#[derive(Debug, Clone)]
pub struct AssumptionReportV {
    /// `||(1 + |grad V|^2) e^-V||_{L1 cap Linf}` on the grid.
    pub r_v: f64,
    /// Fitted pairs `(eps, C_eps)` with `|hess V| <= eps |grad V| + C_eps`.
    pub smoothness_pairs: Vec<(f64, f64)>,
    /// Poincare constant `1 / gap` of the Witten Laplacian (from the spectral
    /// module).
    pub poincare_constant: f64,
    /// `|1 - mass(e^-V)|` on the grid.
    pub mass_defect: f64,
}

/// Verify the confinement assumptions on a grid: weighted-integrability norm,
/// fitted Hessian-gradient pairs for each requested epsilon, mass defect, and
/// the Poincare constant delegated to the Witten-gap eigensolver.
pub fn verify_assumption_confinement(
    p: &ConfinementPotential,
    grid: &SpatialGrid,
    eps_list: &[f64],
) -> Result<AssumptionReportV> {
    let n = grid.len();
    let mut weighted = vec![0.0; n];
    let mut c_eps = vec![0.0_f64; eps_list.len()];
    let mut gibbs = vec![0.0; n];
    for i in 0..n {
        let x = grid.point(i);
        let ev = p.eval(&x[..p.dim])?;
        let grad_norm: f64 = ev.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
        let e = (-ev.value).exp();
        gibbs[i] = e;
        weighted[i] = (1.0 + grad_norm * grad_norm) * e;
        for (k, &eps) in eps_list.iter().enumerate() {
            c_eps[k] = c_eps[k].max(ev.hessian_norm - eps * grad_norm);
        }
    }
    let l1 = grid.l1_norm(&weighted);
    let linf = grid.linf_norm(&weighted);
    let mass = grid.quadrature(&gibbs);
    let gap = crate::spectral::witten_gap(p, grid)?;
    Ok(AssumptionReportV {
        r_v: l1.max(linf),
        smoothness_pairs: eps_list.iter().cloned().zip(c_eps.iter().map(|c| c.max(0.0))).collect(),
        poincare_constant: gap.poincare_constant,
        mass_defect: (1.0 - mass).abs(),
    })
}

/// `||(1 + |grad V|) e^-V||_{L1 cap Linf}`, the weighted Sobolev norm entering
/// the fixed-point map bounds.
pub fn weighted_sobolev_norm(p: &ConfinementPotential, grid: &SpatialGrid) -> Result<f64> {
    let n = grid.len();
    let mut weighted = vec![0.0; n];
    for (i, w) in weighted.iter_mut().enumerate() {
        let x = grid.point(i);
        let ev = p.eval(&x[..p.dim])?;
        let grad_norm: f64 = ev.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
        *w = (1.0 + grad_norm) * (-ev.value).exp();
    }
    Ok(grid.l1_norm(&weighted).max(grid.linf_norm(&weighted)))
}
