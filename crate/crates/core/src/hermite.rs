//! Maxwellian-weighted Hermite velocity basis and its exact ladder algebra.
//!
//! States store coefficients `C[n][i]` of `F(x, v) = sum_n C_n(x) phi_n(v)`
//! with `phi_n = H_n M`, where the `H_n` are Hermite polynomials orthonormal
//! under the Maxwellian weight `M(v) dv` (`H_0 = 1`, `H_1 = v`). In this
//! representation
//!
//! - multiplication by `v` is the symmetric tridiagonal ladder,
//! - the velocity derivative (annihilation) lowers the mode index,
//! - its adjoint (creation) raises it, and
//! - the Fokker-Planck operator is exactly diagonal with eigenvalue `-nu n`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::Error;
use crate::exec;
use crate::grid::{DensityField, SpatialGrid};
use crate::Result;

/// Ladder coefficients and collocation data for a truncated Hermite basis.
#[derive(Debug, Clone)]
pub struct HermiteBasis {
    n_modes: usize,
    /// `sqrt(n)` for `n = 0..n_modes`.
    sqrt_n: Vec<f64>,
    /// Gauss-Hermite nodes (eigenvalues of the truncated v-multiplication).
    nodes: Vec<f64>,
    /// Quadrature weights against `M(v) dv` (sum to one).
    weights: Vec<f64>,
    /// `H_n(v_j)` as a row-major `n_modes x n_modes` table.
    htab: Vec<f64>,
    /// Orthonormal eigenvectors of the v-multiplication matrix, row-major;
    /// column `j` transforms coefficients to the characteristic field `j`.
    eigvecs: Vec<f64>,
}

impl HermiteBasis {
    pub fn new(n_modes: usize) -> Result<Self> {
        if n_modes < 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: n_modes });
        }
        let sqrt_n: Vec<f64> = (0..=n_modes).map(|n| (n as f64).sqrt()).collect();

        // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite
        // polynomials: nodes are eigenvalues, weights are squared first
        // eigenvector components.
        let mut jac = DMatrix::<f64>::zeros(n_modes, n_modes);
        for n in 1..n_modes {
            jac[(n - 1, n)] = sqrt_n[n];
            jac[(n, n - 1)] = sqrt_n[n];
        }
        let eig = SymmetricEigen::new(jac);
        let mut order: Vec<usize> = (0..n_modes).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());

        let mut nodes = Vec::with_capacity(n_modes);
        let mut weights = Vec::with_capacity(n_modes);
        let mut eigvecs = vec![0.0; n_modes * n_modes];
        for (j, &col) in order.iter().enumerate() {
            nodes.push(eig.eigenvalues[col]);
            let v = eig.eigenvectors.column(col);
            let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
            weights.push(v[0] * v[0]);
            for n in 0..n_modes {
                eigvecs[n * n_modes + j] = sign * v[n];
            }
        }
        let mut htab = vec![0.0; n_modes * n_modes];
        for j in 0..n_modes {
            // Stable three-term recurrence for the normalized polynomials.
            let v = nodes[j];
            htab[j] = 1.0;
            if n_modes > 1 {
                htab[n_modes + j] = v;
            }
            for n in 1..n_modes - 1 {
                htab[(n + 1) * n_modes + j] =
                    (v * htab[n * n_modes + j] - sqrt_n[n] * htab[(n - 1) * n_modes + j])
                        / sqrt_n[n + 1];
            }
        }
        Ok(Self { n_modes, sqrt_n, nodes, weights, htab, eigvecs })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn sqrt_n(&self, n: usize) -> f64 {
        self.sqrt_n[n]
    }

    /// Spectral radius bound of the truncated v-multiplication.
    pub fn v_max(&self) -> f64 {
        (2.0 * self.n_modes as f64 + 1.0).sqrt()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `H_n(v_j)` table, row-major over `n`.
    pub fn polynomial_table(&self) -> &[f64] {
        &self.htab
    }

    /// Orthonormal characteristic transform (eigenvectors of v-multiplication).
    pub fn characteristic_transform(&self) -> &[f64] {
        &self.eigvecs
    }

    /// Spectral filter factors `exp(-36 (n / N)^36)` damping the last modes.
    pub fn filter_factors(&self) -> Vec<f64> {
        (0..self.n_modes)
            .map(|n| (-36.0 * (n as f64 / self.n_modes as f64).powi(36)).exp())
            .collect()
    }
}

/// Hermite-in-velocity coefficient array over a 1D spatial grid.
#[derive(Debug, Clone)]
pub struct PhaseSpaceState {
    /// Mode-major coefficients: row `n` holds `C_n` over the grid.
    pub coeffs: Vec<f64>,
    pub n_modes: usize,
    pub grid: SpatialGrid,
    pub time: f64,
}

impl PhaseSpaceState {
    pub fn zero(basis: &HermiteBasis, grid: &SpatialGrid) -> Result<Self> {
        if grid.dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: grid.dim() });
        }
        Ok(Self {
            coeffs: vec![0.0; basis.n_modes() * grid.len()],
            n_modes: basis.n_modes(),
            grid: grid.clone(),
            time: 0.0,
        })
    }

    /// Pure local-Maxwellian state `rho(x) M(v)`.
    pub fn from_density(basis: &HermiteBasis, rho: &DensityField) -> Result<Self> {
        let mut s = Self::zero(basis, rho.grid())?;
        s.row_mut(0).copy_from_slice(rho.values());
        Ok(s)
    }

    pub fn n_x(&self) -> usize {
        self.grid.len()
    }

    pub fn row(&self, n: usize) -> &[f64] {
        let nx = self.grid.len();
        &self.coeffs[n * nx..(n + 1) * nx]
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [f64] {
        let nx = self.grid.len();
        &mut self.coeffs[n * nx..(n + 1) * nx]
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite())
    }

    /// Quadrature of the mass mode.
    pub fn mass(&self) -> f64 {
        self.grid.quadrature(self.row(0))
    }

    /// Squared phase-space L^2 norm against the weight `M^-1`, i.e. the sum of
    /// spatial L^2 norms of the coefficient rows.
    pub fn l2_sq(&self) -> f64 {
        let nx = self.grid.len();
        let mut acc = 0.0;
        for n in 0..self.n_modes {
            let row = &self.coeffs[n * nx..(n + 1) * nx];
            for (i, &c) in row.iter().enumerate() {
                acc += self.grid.quad_weight(i) * c * c;
            }
        }
        acc
    }
}

/// `out_n = sqrt(n) C_{n-1} + sqrt(n+1) C_{n+1}` (v-multiplication, top mode
/// truncated).
pub fn vmult_into(basis: &HermiteBasis, n_x: usize, src: &[f64], dst: &mut [f64]) {
    let n_v = basis.n_modes();
    exec::chunks_mut(dst, n_x, |n, out| {
        let lower = if n > 0 { Some(&src[(n - 1) * n_x..n * n_x]) } else { None };
        let upper = if n + 1 < n_v { Some(&src[(n + 1) * n_x..(n + 2) * n_x]) } else { None };
        for i in 0..n_x {
            let mut acc = 0.0;
            if let Some(lo) = lower {
                acc += basis.sqrt_n(n) * lo[i];
            }
            if let Some(up) = upper {
                acc += basis.sqrt_n(n + 1) * up[i];
            }
            out[i] = acc;
        }
    });
}

/// Velocity derivative (annihilation): `out_n = sqrt(n+1) C_{n+1}`.
pub fn dv_into(basis: &HermiteBasis, n_x: usize, src: &[f64], dst: &mut [f64]) {
    let n_v = basis.n_modes();
    exec::chunks_mut(dst, n_x, |n, out| {
        if n + 1 < n_v {
            let up = &src[(n + 1) * n_x..(n + 2) * n_x];
            let c = basis.sqrt_n(n + 1);
            for i in 0..n_x {
                out[i] = c * up[i];
            }
        } else {
            out.fill(0.0);
        }
    });
}

/// Adjoint velocity derivative (creation): `out_n = sqrt(n) C_{n-1}`.
pub fn dv_star_into(basis: &HermiteBasis, n_x: usize, src: &[f64], dst: &mut [f64]) {
    exec::chunks_mut(dst, n_x, |n, out| {
        if n > 0 {
            let lo = &src[(n - 1) * n_x..n * n_x];
            let c = basis.sqrt_n(n);
            for i in 0..n_x {
                out[i] = c * lo[i];
            }
        } else {
            out.fill(0.0);
        }
    });
}

/// v-multiplication as a state operation.
pub fn apply_v_multiplication(basis: &HermiteBasis, state: &PhaseSpaceState) -> PhaseSpaceState {
    let mut out = state.clone();
    vmult_into(basis, state.n_x(), &state.coeffs, &mut out.coeffs);
    out
}

/// Velocity derivative as a state operation.
pub fn apply_dv(basis: &HermiteBasis, state: &PhaseSpaceState) -> PhaseSpaceState {
    let mut out = state.clone();
    dv_into(basis, state.n_x(), &state.coeffs, &mut out.coeffs);
    out
}

/// Adjoint velocity derivative as a state operation.
pub fn apply_dv_star(basis: &HermiteBasis, state: &PhaseSpaceState) -> PhaseSpaceState {
    let mut out = state.clone();
    dv_star_into(basis, state.n_x(), &state.coeffs, &mut out.coeffs);
    out
}

/// Exact integration of the Fokker-Planck substep: row `n` decays by
/// `exp(-nu n dt)`.
pub fn fokker_planck_decay(state: &mut PhaseSpaceState, nu: f64, dt: f64) {
    let nx = state.n_x();
    exec::chunks_mut(&mut state.coeffs, nx, |n, row| {
        let factor = (-nu * n as f64 * dt).exp();
        for c in row.iter_mut() {
            *c *= factor;
        }
    });
}

/// Apply the spectral filter rows once.
pub fn apply_filter(basis: &HermiteBasis, state: &mut PhaseSpaceState) {
    let factors = basis.filter_factors();
    let nx = state.n_x();
    exec::chunks_mut(&mut state.coeffs, nx, |n, row| {
        let f = factors[n];
        if f < 1.0 {
            for c in row.iter_mut() {
                *c *= f;
            }
        }
    });
}

/// Macroscopic moments: density `C_0`, current `C_1`, and kinetic energy
/// density `(C_0 + sqrt(2) C_2) / 2` from the Hermite second-moment relation.
pub fn moments(state: &PhaseSpaceState) -> Result<(DensityField, Vec<f64>, Vec<f64>)> {
    if state.n_modes < 3 {
        return Err(Error::DimensionMismatch { expected: 3, got: state.n_modes });
    }
    let density = DensityField::new(state.grid.clone(), state.row(0).to_vec())?;
    let current = state.row(1).to_vec();
    let energy: Vec<f64> = state
        .row(0)
        .iter()
        .zip(state.row(2))
        .map(|(&c0, &c2)| 0.5 * (c0 + 2f64.sqrt() * c2))
        .collect();
    Ok((density, current, energy))
}

/// Coefficients of a Maxwellian shifted to mean velocity `m`:
/// `M(v - m) = sum_n m^n / sqrt(n!) phi_n(v)`.
pub fn shifted_maxwellian_coeffs(basis: &HermiteBasis, mean: f64) -> Vec<f64> {
    let n = basis.n_modes();
    let mut out = vec![0.0; n];
    out[0] = 1.0;
    for k in 1..n {
        out[k] = out[k - 1] * mean / basis.sqrt_n(k);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_state(basis: &HermiteBasis, grid: &SpatialGrid, seed: u64) -> PhaseSpaceState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = PhaseSpaceState::zero(basis, grid).unwrap();
        for c in s.coeffs.iter_mut() {
            *c = rng.random_range(-1.0..1.0);
        }
        s
    }

    #[test]
    fn v_times_maxwellian_is_first_mode() {
        let basis = HermiteBasis::new(8).unwrap();
        let grid = SpatialGrid::isotropic(1, 1.0, 5).unwrap();
        let mut s = PhaseSpaceState::zero(&basis, &grid).unwrap();
        s.row_mut(0).fill(2.0);
        let v = apply_v_multiplication(&basis, &s);
        assert!(v.row(0).iter().all(|&c| c == 0.0));
        assert!(v.row(1).iter().all(|&c| c == 2.0));
        assert!(v.row(2).iter().all(|&c| c == 0.0));
    }

    #[test]
    fn dv_star_dv_is_diagonal_number_operator() {
        let basis = HermiteBasis::new(8).unwrap();
        let grid = SpatialGrid::isotropic(1, 1.0, 3).unwrap();
        let mut s = PhaseSpaceState::zero(&basis, &grid).unwrap();
        s.row_mut(3).fill(1.5);
        let out = apply_dv_star(&basis, &apply_dv(&basis, &s));
        assert!(out.row(3).iter().all(|&c| (c - 4.5).abs() < 1e-15));
        for n in [0usize, 1, 2, 4, 5, 6] {
            assert!(out.row(n).iter().all(|&c| c == 0.0));
        }
    }

    /// Quadrature oracle: tabulate phi_n = H_n M on a fine velocity grid,
    /// apply the differential operator -d/dv (d/dv + v) (the weighted form of
    /// the Fokker-Planck generator) by finite differences, and project back.
    #[test]
    fn number_operator_matches_fine_grid_quadrature() {
        let n_modes = 6;
        let m = 40001;
        let vmax = 12.0;
        let h = 2.0 * vmax / (m - 1) as f64;
        let vs: Vec<f64> = (0..m).map(|j| -vmax + j as f64 * h).collect();
        // Normalized Hermite polynomials by recurrence.
        let mut htab = vec![vec![0.0; m]; n_modes];
        for j in 0..m {
            htab[0][j] = 1.0;
            htab[1][j] = vs[j];
        }
        for n in 1..n_modes - 1 {
            for j in 0..m {
                htab[n + 1][j] = (vs[j] * htab[n][j] - (n as f64).sqrt() * htab[n - 1][j])
                    / ((n + 1) as f64).sqrt();
            }
        }
        let maxw: Vec<f64> =
            vs.iter().map(|&v| (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt()).collect();
        let n_probe = 3;
        let phi: Vec<f64> = (0..m).map(|j| htab[n_probe][j] * maxw[j]).collect();
        // (d/dv + v) phi then -d/dv of the result, by centered differences.
        let mut inner = vec![0.0; m];
        for j in 1..m - 1 {
            inner[j] = (phi[j + 1] - phi[j - 1]) / (2.0 * h) + vs[j] * phi[j];
        }
        let mut outer = vec![0.0; m];
        for j in 2..m - 2 {
            outer[j] = -(inner[j + 1] - inner[j - 1]) / (2.0 * h);
        }
        // Project onto phi_k with weight M^-1: int phi_k outer / M dv.
        for k in 0..n_modes - 1 {
            let mut acc = 0.0;
            for j in 2..m - 2 {
                acc += htab[k][j] * outer[j] * h;
            }
            let expected = if k == n_probe { n_probe as f64 } else { 0.0 };
            assert!((acc - expected).abs() < 1e-5, "mode {k}: {acc} vs {expected}");
        }
    }

    #[test]
    fn ladder_adjointness_exact_in_coefficient_arithmetic() {
        let basis = HermiteBasis::new(12).unwrap();
        let grid = SpatialGrid::isotropic(1, 2.0, 9).unwrap();
        let f = tiny_state(&basis, &grid, 1);
        let g = tiny_state(&basis, &grid, 2);
        let df = apply_dv(&basis, &f);
        let dsg = apply_dv_star(&basis, &g);
        let dot = |a: &PhaseSpaceState, b: &PhaseSpaceState| -> f64 {
            a.coeffs.iter().zip(&b.coeffs).map(|(&x, &y)| x * y).sum()
        };
        assert_relative_eq!(dot(&df, &g), dot(&f, &dsg), epsilon = 1e-13, max_relative = 1e-13);
    }

    #[test]
    fn commutator_dv_vmult_is_identity_below_boundary_mode() {
        let basis = HermiteBasis::new(10).unwrap();
        let grid = SpatialGrid::isotropic(1, 2.0, 7).unwrap();
        let f = tiny_state(&basis, &grid, 3);
        let a = apply_dv(&basis, &apply_v_multiplication(&basis, &f));
        let b = apply_v_multiplication(&basis, &apply_dv(&basis, &f));
        for n in 0..basis.n_modes() - 1 {
            for i in 0..grid.len() {
                let comm = a.row(n)[i] - b.row(n)[i];
                assert_relative_eq!(comm, f.row(n)[i], epsilon = 1e-13, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn fokker_planck_rows_decay_exactly() {
        let basis = HermiteBasis::new(6).unwrap();
        let grid = SpatialGrid::isotropic(1, 1.0, 3).unwrap();
        let mut s = tiny_state(&basis, &grid, 4);
        let before = s.clone();
        fokker_planck_decay(&mut s, 1.0, std::f64::consts::LN_2);
        for i in 0..grid.len() {
            assert_relative_eq!(s.row(0)[i], before.row(0)[i], epsilon = 1e-15);
            assert_relative_eq!(s.row(1)[i], 0.5 * before.row(1)[i], epsilon = 1e-15);
        }
        // dt -> infinity leaves only the mass mode.
        let mut long = before.clone();
        fokker_planck_decay(&mut long, 1.0, 1e6);
        for n in 1..basis.n_modes() {
            assert!(long.row(n).iter().all(|&c| c.abs() < 1e-200));
        }
    }

    #[test]
    fn spectral_filter_damps_only_the_top_modes() {
        let basis = HermiteBasis::new(64).unwrap();
        let f = basis.filter_factors();
        assert_eq!(f[0], 1.0);
        // Low modes untouched to machine precision, the last mode crushed.
        assert!(f[16] > 1.0 - 1e-12);
        assert!(f[63] < 1e-8, "top factor {}", f[63]);
        assert!(f.windows(2).all(|w| w[1] <= w[0]));

        let grid = SpatialGrid::isotropic(1, 1.0, 4).unwrap();
        let mut s = tiny_state(&basis, &grid, 9);
        let before = s.clone();
        apply_filter(&basis, &mut s);
        for i in 0..grid.len() {
            assert_eq!(s.row(0)[i], before.row(0)[i]);
            assert!(s.row(63)[i].abs() < 1e-6 * before.row(63)[i].abs().max(1e-30));
        }
    }

    #[test]
    fn moments_of_shifted_maxwellian() {
        let basis = HermiteBasis::new(16).unwrap();
        let grid = SpatialGrid::isotropic(1, 5.0, 64).unwrap();
        let mut s = PhaseSpaceState::zero(&basis, &grid).unwrap();
        let shift = shifted_maxwellian_coeffs(&basis, 0.7);
        let rho: Vec<f64> = (0..grid.len()).map(|i| (-(grid.point(i)[0]).powi(2)).exp()).collect();
        for n in 0..basis.n_modes() {
            for i in 0..grid.len() {
                s.row_mut(n)[i] = shift[n] * rho[i];
            }
        }
        let (density, current, energy) = moments(&s).unwrap();
        for i in 0..grid.len() {
            assert_relative_eq!(current[i], 0.7 * density.values()[i], max_relative = 1e-12);
            // Kinetic energy density of a shifted Maxwellian: (1 + m^2)/2 per unit mass.
            assert_relative_eq!(
                energy[i],
                0.5 * (1.0 + 0.49) * density.values()[i],
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn maxwellian_kinetic_energy_matches_quadrature_oracle() {
        // int v^2 M dv = 1 by adaptive Simpson.
        let oracle = crate::testutil::adaptive_simpson(
            &|v: f64| v * v * (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            -12.0,
            12.0,
            1e-12,
        );
        assert_relative_eq!(oracle, 1.0, epsilon = 1e-10);
        let basis = HermiteBasis::new(4).unwrap();
        let grid = SpatialGrid::isotropic(1, 1.0, 5).unwrap();
        let mut s = PhaseSpaceState::zero(&basis, &grid).unwrap();
        s.row_mut(0).fill(1.0);
        let (_, _, energy) = moments(&s).unwrap();
        assert!(energy.iter().all(|&e| (e - 0.5 * oracle).abs() < 1e-12));
    }

    #[test]
    fn gauss_hermite_rule_integrates_polynomials() {
        let basis = HermiteBasis::new(12).unwrap();
        // Moments of M: 1, 0, 1, 0, 3, 0, 15.
        let expected = [1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 15.0];
        for (p, &want) in expected.iter().enumerate() {
            let got: f64 = basis
                .nodes()
                .iter()
                .zip(basis.weights())
                .map(|(&v, &w)| w * v.powi(p as i32))
                .sum();
            assert_relative_eq!(got, want, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn characteristic_transform_diagonalizes_vmult() {
        let basis = HermiteBasis::new(8).unwrap();
        let n = 8;
        let q = basis.characteristic_transform();
        // Q^T (Vm) Q = diag(nodes).
        for a in 0..n {
            for b in 0..n {
                let mut acc = 0.0;
                for r in 0..n {
                    // (Vm q_b)_r = sqrt(r) q_{r-1,b} + sqrt(r+1) q_{r+1,b}.
                    let mut vq = 0.0;
                    if r > 0 {
                        vq += basis.sqrt_n(r) * q[(r - 1) * n + b];
                    }
                    if r + 1 < n {
                        vq += basis.sqrt_n(r + 1) * q[(r + 1) * n + b];
                    }
                    acc += q[r * n + a] * vq;
                }
                let want = if a == b { basis.nodes()[a] } else { 0.0 };
                assert_relative_eq!(acc, want, epsilon = 1e-10);
            }
        }
    }
}
