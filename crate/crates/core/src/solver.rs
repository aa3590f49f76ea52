//! Time integration of the nonlinear and linearized kinetic equations in
//! 1D-x / Hermite-v by Strang splitting: half transport, half force, a full
//! exactly-integrated Fokker-Planck substep, half force, half transport. The
//! self-consistent field is refreshed once per force stage.
//!
//! Nonlinear runs evolve the coefficients of `F` against the Maxwellian
//! weight. Linearized runs evolve `g = sqrt(rho_star) f`, the conjugated
//! perturbation, for which the transport + steady-force generator splits into
//! the same v-multiplication ladder plus an exactly skew-symmetric force
//! ladder `(V_star'/2)(lower - raise)`.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use rustfft::num_complex::Complex64;

use crate::diagnostics::{DiagnosticSeries, Monitor, MonitorOptions};
use crate::error::Error;
use crate::exec;
use crate::grid::SpatialGrid;
use crate::hermite::{self, HermiteBasis, PhaseSpaceState};
use crate::kernels::{InteractionKernel, PreparedKernel};
use crate::potentials::ConfinementPotential;
use crate::steady::SteadyState;
use crate::Result;

/// Spatial transport scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    /// Second-order MUSCL finite volume on characteristic fields, outflow
    /// boundaries.
    Muscl,
    /// Exact characteristic advection per Fourier mode (periodic wrap), for
    /// runs that must resolve fine spatial scales without numerical
    /// dissipation.
    Spectral,
}

/// Slope limiter for the MUSCL reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Limiter {
    /// Unlimited central slopes (Fromm), best for smooth fields.
    None,
    MinMod,
    VanLeer,
    /// Monotonized central.
    Mc,
}

/// Which equation is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Nonlinear,
    LinearizedAroundSteady,
}

/// Evolution parameters.
#[derive(Debug, Clone)]
pub struct EvolveConfig {
    pub nu: f64,
    pub dt: f64,
    pub t_end: f64,
    pub cfl_guard: f64,
    pub filter_on: bool,
    pub mode: Mode,
    pub output_stride: usize,
    /// Geometric early sampling on top of the stride (dense short-time data
    /// for regularization fits).
    pub log_sampling: bool,
    pub transport: Transport,
    pub limiter: Limiter,
    pub monitor: MonitorOptions,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            nu: 1.0,
            dt: 1e-3,
            t_end: 1.0,
            cfl_guard: 0.9,
            filter_on: false,
            mode: Mode::Nonlinear,
            output_stride: 10,
            log_sampling: false,
            transport: Transport::Muscl,
            limiter: Limiter::VanLeer,
            monitor: MonitorOptions::default(),
        }
    }
}

impl EvolveConfig {
    /// CFL admissibility for the MUSCL transport; the spectral propagator is
    /// exact and imposes no step restriction.
    pub fn validate(&self, grid: &SpatialGrid, basis: &HermiteBasis) -> Result<()> {
        if self.transport == Transport::Muscl {
            let limit = self.cfl_guard * grid.spacing(0) / basis.v_max();
            // Transport substeps run at dt/2.
            if 0.5 * self.dt > limit {
                return Err(Error::CflViolation { dt: self.dt, limit: 2.0 * limit });
            }
        }
        Ok(())
    }
}

/// Microscopic source in divergence form: returns the phi coefficient array
/// (mode-major, same layout as the state); the increment applied is
/// `dv_star(phi)`, which has no mass-mode component by the ladder structure.
pub type SourceFn = dyn Fn(f64, &PhaseSpaceState) -> Vec<f64> + Sync;

/// Confinement + interaction data shared by the whole evolution.
pub struct Background {
    pub potential: ConfinementPotential,
    pub kernel: InteractionKernel,
    pub prep: PreparedKernel,
    /// Required for LinearizedAroundSteady and for perturbation norms.
    pub steady: Option<SteadyState>,
    v_prime: Vec<f64>,
}

impl Background {
    pub fn new(
        potential: &ConfinementPotential,
        kernel: &InteractionKernel,
        grid: &SpatialGrid,
        steady: Option<SteadyState>,
    ) -> Result<Self> {
        if grid.dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: grid.dim() });
        }
        let prep = kernel.prepare(grid)?;
        let mut v_prime = vec![0.0; grid.len()];
        for (i, v) in v_prime.iter_mut().enumerate() {
            let x = grid.point(i);
            *v = potential.eval(&x[..1])?.gradient[0];
        }
        Ok(Self { potential: potential.clone(), kernel: kernel.clone(), prep, steady, v_prime })
    }

    pub fn v_prime(&self) -> &[f64] {
        &self.v_prime
    }
}

/// Evolution result: diagnostics plus the final state. `completed` is false
/// when the state went non-finite; `final_state` is then the last good one.
pub struct EvolveOutcome {
    pub series: DiagnosticSeries,
    pub final_state: PhaseSpaceState,
    pub completed: bool,
    pub abort_time: Option<f64>,
    /// Mass drift relative to the initial mass, for leakage monitoring.
    pub mass_drift: f64,
}

struct Workspace {
    /// Characteristic fields / generic n_v x n_x scratch.
    wa: Vec<f64>,
    wb: Vec<f64>,
    /// Complex buffers for the spectral transport.
    spec: Vec<Complex64>,
    spec_t: Vec<Complex64>,
}

/// Strang-splitting integrator for one background and configuration.
pub struct Stepper<'a> {
    basis: &'a HermiteBasis,
    grid: SpatialGrid,
    cfg: EvolveConfig,
    bg: &'a Background,
    sqrt_rho: Vec<f64>,
    /// Half-gradient of the effective steady potential, `V_star' / 2`
    /// (linearized mode only).
    e_half: Vec<f64>,
    ws: Workspace,
}

impl<'a> Stepper<'a> {
    pub fn new(
        basis: &'a HermiteBasis,
        grid: &SpatialGrid,
        bg: &'a Background,
        cfg: &EvolveConfig,
    ) -> Result<Self> {
        cfg.validate(grid, basis)?;
        let n = grid.len();
        let (sqrt_rho, e_half) = match (&cfg.mode, &bg.steady) {
            (Mode::LinearizedAroundSteady, Some(ss)) => {
                let sqrt_rho: Vec<f64> = ss.rho_star.values().iter().map(|&r| r.sqrt()).collect();
                let dpsi = bg.prep.grad_convolve_values(ss.rho_star.values(), false)?;
                let e_half: Vec<f64> =
                    bg.v_prime.iter().zip(&dpsi[0]).map(|(&v, &p)| 0.5 * (v + p)).collect();
                (sqrt_rho, e_half)
            }
            (Mode::LinearizedAroundSteady, None) => {
                return Err(Error::NonFinite { context: "linearized mode needs a steady state" })
            }
            (Mode::Nonlinear, _) => (vec![1.0; n], vec![0.0; n]),
        };
        let n_v = basis.n_modes();
        Ok(Self {
            basis,
            grid: grid.clone(),
            cfg: cfg.clone(),
            bg,
            sqrt_rho,
            e_half,
            ws: Workspace {
                wa: vec![0.0; n_v * n],
                wb: vec![0.0; n_v * n],
                spec: vec![Complex64::default(); n_v * n],
                spec_t: vec![Complex64::default(); n_v * n],
            },
        })
    }

    /// One transport substep of length tau.
    pub fn step_transport(&mut self, state: &mut PhaseSpaceState, tau: f64) -> Result<()> {
        match self.cfg.transport {
            Transport::Muscl => self.transport_muscl(state, tau),
            Transport::Spectral => {
                self.transport_spectral(state, tau);
                Ok(())
            }
        }
    }

    fn transport_muscl(&mut self, state: &mut PhaseSpaceState, tau: f64) -> Result<()> {
        let n_x = state.n_x();
        let n_v = self.basis.n_modes();
        let h = self.grid.spacing(0);
        let cfl = tau * self.basis.v_max() / h;
        if cfl > self.cfg.cfl_guard + 1e-12 {
            return Err(Error::CflViolation {
                dt: tau,
                limit: self.cfg.cfl_guard * h / self.basis.v_max(),
            });
        }
        let q = self.basis.characteristic_transform();
        // w = Q^T C  (row j of w is the field advected at speed nodes[j]).
        transform_rows(q, true, &state.coeffs, &mut self.ws.wa, n_v, n_x);
        let nodes = self.basis.nodes().to_vec();
        let limiter = self.cfg.limiter;
        exec::chunks_mut(&mut self.ws.wa, n_x, |j, row| {
            advect_row(row, nodes[j], tau, h, limiter);
        });
        // C = Q w.
        transform_rows(q, false, &self.ws.wa, &mut state.coeffs, n_v, n_x);
        Ok(())
    }

    fn transport_spectral(&mut self, state: &mut PhaseSpaceState, tau: f64) {
        let n_x = state.n_x();
        let n_v = self.basis.n_modes();
        let h = self.grid.spacing(0);
        let period = n_x as f64 * h;
        // Row-wise FFT.
        for (row, dst) in state.coeffs.chunks(n_x).zip(self.ws.spec.chunks_mut(n_x)) {
            for (d, &s) in dst.iter_mut().zip(row) {
                *d = Complex64::new(s, 0.0);
            }
        }
        exec::chunks_mut(&mut self.ws.spec, n_x, |_, row| {
            crate::fftconv::fftnd(row, &[row.len()], false);
        });
        // Transpose to k-major columns.
        let spec = &self.ws.spec;
        exec::fill_indexed(&mut self.ws.spec_t, |idx| {
            let k = idx / n_v;
            let n = idx % n_v;
            spec[n * n_x + k]
        });
        // Per-k exact propagator Q e^{-i xi v_j tau} Q^T.
        let q = self.basis.characteristic_transform().to_vec();
        let nodes = self.basis.nodes().to_vec();
        exec::chunks_mut(&mut self.ws.spec_t, n_v, |k, col| {
            let m = if k <= n_x / 2 { k as i64 } else { k as i64 - n_x as i64 };
            let xi = 2.0 * std::f64::consts::PI * m as f64 / period;
            let mut y = vec![Complex64::default(); n_v];
            for (j, yj) in y.iter_mut().enumerate() {
                let mut acc = Complex64::default();
                for (n, &cn) in col.iter().enumerate() {
                    acc += q[n * n_v + j] * cn;
                }
                let phase = Complex64::from_polar(1.0, -xi * nodes[j] * tau);
                *yj = acc * phase;
            }
            for (n, slot) in col.iter_mut().enumerate() {
                let mut acc = Complex64::default();
                for (j, &yj) in y.iter().enumerate() {
                    acc += q[n * n_v + j] * yj;
                }
                *slot = acc;
            }
        });
        // Transpose back and inverse FFT.
        let spec_t = &self.ws.spec_t;
        exec::fill_indexed(&mut self.ws.spec, |idx| {
            let n = idx / n_x;
            let k = idx % n_x;
            spec_t[k * n_v + n]
        });
        exec::chunks_mut(&mut self.ws.spec, n_x, |_, row| {
            crate::fftconv::fftnd(row, &[row.len()], true);
        });
        let scale = 1.0 / n_x as f64;
        for (row, src) in state.coeffs.chunks_mut(n_x).zip(self.ws.spec.chunks(n_x)) {
            for (d, &s) in row.iter_mut().zip(src) {
                *d = s.re * scale;
            }
        }
    }

    /// One force substep of length tau. In nonlinear mode applies
    /// `exp(tau E (x) U)` columnwise with `E = -d/dx (V + psi)` and the
    /// raising ladder `U` (fourth-order Taylor). In linearized mode applies
    /// the skew ladder generator `(V_star'/2)(A - U)` plus the frozen field
    /// source by a midpoint Duhamel rule.
    pub fn step_force(&mut self, state: &mut PhaseSpaceState, tau: f64) -> Result<()> {
        let n_x = state.n_x();
        match self.cfg.mode {
            Mode::Nonlinear => {
                let rho = state.row(0).to_vec();
                let dpsi = self.bg.prep.grad_convolve_values(&rho, false)?;
                let force: Vec<f64> =
                    self.bg.v_prime.iter().zip(&dpsi[0]).map(|(&v, &p)| -(v + p)).collect();
                apply_exp_ladder(
                    self.basis,
                    n_x,
                    &force,
                    LadderKind::Raise,
                    tau,
                    &mut state.coeffs,
                    &mut self.ws.wa,
                    &mut self.ws.wb,
                );
            }
            Mode::LinearizedAroundSteady => {
                // Frozen field source: -sqrt(rho_star) d/dx psi_f on mode 1.
                let rho_f: Vec<f64> =
                    self.sqrt_rho.iter().zip(state.row(0)).map(|(&s, &g)| s * g).collect();
                let dpsi = self.bg.prep.grad_convolve_values(&rho_f, false)?;
                let source_row1: Vec<f64> =
                    self.sqrt_rho.iter().zip(&dpsi[0]).map(|(&s, &p)| -s * p).collect();
                // g <- e^{tau G} g + tau e^{tau G / 2} s  ==  H(H(g) + tau s)
                // with H = e^{(tau/2) G}.
                let half = 0.5 * tau;
                apply_exp_ladder(
                    self.basis,
                    n_x,
                    &self.e_half,
                    LadderKind::Skew,
                    half,
                    &mut state.coeffs,
                    &mut self.ws.wa,
                    &mut self.ws.wb,
                );
                for (w, &s) in state.coeffs[n_x..2 * n_x].iter_mut().zip(&source_row1) {
                    *w += tau * s;
                }
                apply_exp_ladder(
                    self.basis,
                    n_x,
                    &self.e_half,
                    LadderKind::Skew,
                    half,
                    &mut state.coeffs,
                    &mut self.ws.wa,
                    &mut self.ws.wb,
                );
            }
        }
        Ok(())
    }

    /// Full Strang step of length dt (transport and force at dt/2, exact
    /// Fokker-Planck relaxation over dt, source increment at the midpoint).
    pub fn step(&mut self, state: &mut PhaseSpaceState, source: Option<&SourceFn>) -> Result<()> {
        let dt = self.cfg.dt;
        self.step_transport(state, 0.5 * dt)?;
        self.step_force(state, 0.5 * dt)?;
        hermite::fokker_planck_decay(state, self.cfg.nu, dt);
        if let Some(src) = source {
            let phi = src(state.time + 0.5 * dt, state);
            let n_x = state.n_x();
            hermite::dv_star_into(self.basis, n_x, &phi, &mut self.ws.wa);
            if self.cfg.mode == Mode::LinearizedAroundSteady {
                for n_row in 0..self.basis.n_modes() {
                    let chunk = self.ws.wa[n_row * n_x..(n_row + 1) * n_x].to_vec();
                    let row = state.row_mut(n_row);
                    for (i, (r, &v)) in row.iter_mut().zip(&chunk).enumerate() {
                        *r += dt * self.sqrt_rho[i] * v;
                    }
                }
            } else {
                for (c, &v) in state.coeffs.iter_mut().zip(self.ws.wa.iter()) {
                    *c += dt * v;
                }
            }
        }
        if self.cfg.filter_on {
            hermite::apply_filter(self.basis, state);
        }
        self.step_force(state, 0.5 * dt)?;
        self.step_transport(state, 0.5 * dt)?;
        state.time += dt;
        Ok(())
    }
}

enum LadderKind {
    /// Raising ladder `(U c)_n = sqrt(n) c_{n-1}`.
    Raise,
    /// Skew ladder `((A - U) c)_n = sqrt(n+1) c_{n+1} - sqrt(n) c_{n-1}`.
    Skew,
}

/// Fourth-order Taylor of `exp(tau diag(coeff) (x) L)` acting row-wise on the
/// coefficient array; `term` and `scratch` are n_v*n_x work buffers.
#[allow(clippy::too_many_arguments)]
fn apply_exp_ladder(
    basis: &HermiteBasis,
    n_x: usize,
    coeff: &[f64],
    kind: LadderKind,
    tau: f64,
    state: &mut [f64],
    term: &mut [f64],
    scratch: &mut [f64],
) {
    term.copy_from_slice(state);
    for k in 1..=4 {
        // scratch = L term (ladder action).
        match kind {
            LadderKind::Raise => exec::chunks_mut(scratch, n_x, |n, out| {
                if n > 0 {
                    let lo = &term[(n - 1) * n_x..n * n_x];
                    let c = basis.sqrt_n(n);
                    for (o, &l) in out.iter_mut().zip(lo) {
                        *o = c * l;
                    }
                } else {
                    out.fill(0.0);
                }
            }),
            LadderKind::Skew => {
                let n_v = basis.n_modes();
                exec::chunks_mut(scratch, n_x, |n, out| {
                    let up =
                        if n + 1 < n_v { Some(&term[(n + 1) * n_x..(n + 2) * n_x]) } else { None };
                    let lo = if n > 0 { Some(&term[(n - 1) * n_x..n * n_x]) } else { None };
                    for (i, o) in out.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        if let Some(u) = up {
                            acc += basis.sqrt_n(n + 1) * u[i];
                        }
                        if let Some(l) = lo {
                            acc -= basis.sqrt_n(n) * l[i];
                        }
                        *o = acc;
                    }
                })
            }
        }
        // term = (tau / k) coeff (x) scratch; state += term.
        let factor = tau / k as f64;
        exec::chunks_mut(term, n_x, |n, row| {
            let s = &scratch[n * n_x..(n + 1) * n_x];
            for (i, r) in row.iter_mut().enumerate() {
                *r = factor * coeff[i] * s[i];
            }
        });
        for (st, &t) in state.iter_mut().zip(term.iter()) {
            *st += t;
        }
    }
}

/// `dst = Q^T src` (transpose = true) or `dst = Q src`, where Q is the
/// n_v x n_v characteristic transform and src/dst are mode-major fields.
fn transform_rows(q: &[f64], transpose: bool, src: &[f64], dst: &mut [f64], n_v: usize, n_x: usize) {
    exec::chunks_mut(dst, n_x, |m, out| {
        out.fill(0.0);
        for n in 0..n_v {
            let w = if transpose { q[n * n_v + m] } else { q[m * n_v + n] };
            if w != 0.0 {
                let row = &src[n * n_x..(n + 1) * n_x];
                for (o, &r) in out.iter_mut().zip(row) {
                    *o += w * r;
                }
            }
        }
    });
}

/// Flux-form MUSCL-Hancock update of one scalar field advected at speed `a`
/// with zero-inflow boundaries.
fn advect_row(w: &mut [f64], a: f64, dt: f64, h: f64, limiter: Limiter) {
    let n = w.len();
    if a == 0.0 || n < 3 {
        return;
    }
    let nu = a * dt / h;
    let get = |w: &[f64], i: isize| -> f64 {
        if i < 0 || i >= n as isize {
            0.0
        } else {
            w[i as usize]
        }
    };
    let slope = |dm: f64, dp: f64| -> f64 {
        match limiter {
            Limiter::None => 0.5 * (dm + dp),
            Limiter::MinMod => {
                if dm * dp > 0.0 {
                    if dm.abs() < dp.abs() {
                        dm
                    } else {
                        dp
                    }
                } else {
                    0.0
                }
            }
            Limiter::VanLeer => {
                if dm * dp > 0.0 {
                    2.0 * dm * dp / (dm + dp)
                } else {
                    0.0
                }
            }
            Limiter::Mc => {
                if dm * dp > 0.0 {
                    let c = 0.5 * (dm + dp);
                    let bound = 2.0 * dm.abs().min(dp.abs());
                    c.signum() * c.abs().min(bound)
                } else {
                    0.0
                }
            }
        }
    };
    // Upwind-biased interface values with the Hancock half-step factor.
    let mut flux = vec![0.0; n + 1];
    if a > 0.0 {
        for (i, f) in flux.iter_mut().enumerate() {
            let il = i as isize - 1;
            let u = get(w, il);
            let s = slope(u - get(w, il - 1), get(w, il + 1) - u);
            *f = a * (u + 0.5 * (1.0 - nu) * s);
        }
    } else {
        for (i, f) in flux.iter_mut().enumerate() {
            let ir = i as isize;
            let u = get(w, ir);
            let s = slope(u - get(w, ir - 1), get(w, ir + 1) - u);
            *f = a * (u - 0.5 * (1.0 + nu.abs()) * s);
        }
    }
    for i in 0..n {
        w[i] -= dt / h * (flux[i + 1] - flux[i]);
    }
}

/// Run a full evolution, emitting diagnostics every `output_stride` steps
/// (plus geometric early samples when `log_sampling` is on).
pub fn evolve(
    initial: PhaseSpaceState,
    basis: &HermiteBasis,
    bg: &Background,
    cfg: &EvolveConfig,
    source: Option<&SourceFn>,
) -> Result<EvolveOutcome> {
    let grid = initial.grid.clone();
    let mut stepper = Stepper::new(basis, &grid, bg, cfg)?;
    let mut monitor = Monitor::new(basis, bg, cfg.mode, cfg.nu, &cfg.monitor)?;
    let mut series = monitor.new_series();
    let mut state = initial;
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let mass0 = state.mass();

    monitor.record(&mut series, &state)?;
    let mut last_good = state.clone();
    let mut next_log = 1usize;
    for step in 1..=steps {
        stepper.step(&mut state, source)?;
        if !state.is_finite() {
            return Ok(EvolveOutcome {
                series,
                completed: false,
                abort_time: Some(state.time),
                mass_drift: (last_good.mass() - mass0) / mass0.abs().max(1.0),
                final_state: last_good,
            });
        }
        let stride_hit = step % cfg.output_stride == 0 || step == steps;
        let log_hit = cfg.log_sampling && step == next_log;
        if log_hit {
            next_log = (next_log + 1).max((next_log as f64 * 1.15).ceil() as usize);
        }
        if stride_hit || log_hit {
            monitor.record(&mut series, &state)?;
            last_good = state.clone();
        }
    }
    let mass_drift = (state.mass() - mass0) / mass0.abs().max(1.0);
    Ok(EvolveOutcome { series, completed: true, abort_time: None, mass_drift, final_state: state })
}

const PSS_MAGIC: &[u8; 9] = b"VFPK-PSS1";

/// Persist a phase-space state: magic, N_v, N_x, box half-width, time, nu,
/// then the mode-major coefficients as little-endian f64.
pub fn write_state_snapshot(state: &PhaseSpaceState, nu: f64, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(PSS_MAGIC);
    buf.extend_from_slice(&(state.n_modes as u32).to_le_bytes());
    buf.extend_from_slice(&(state.n_x() as u32).to_le_bytes());
    buf.extend_from_slice(&state.grid.half_widths()[0].to_le_bytes());
    buf.extend_from_slice(&state.time.to_le_bytes());
    buf.extend_from_slice(&nu.to_le_bytes());
    for &c in &state.coeffs {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Read a phase-space snapshot; returns the state and the stored nu.
pub fn read_state_snapshot(path: &Path) -> Result<(PhaseSpaceState, f64)> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 9 + 8 + 24 || &buf[..9] != PSS_MAGIC {
        return Err(Error::Snapshot("bad phase-space snapshot header".into()));
    }
    let mut off = 9usize;
    let rd_u32 = |buf: &[u8], off: &mut usize| {
        let v = u32::from_le_bytes(buf[*off..*off + 4].try_into().unwrap());
        *off += 4;
        v as usize
    };
    let rd_f64 = |buf: &[u8], off: &mut usize| {
        let v = f64::from_le_bytes(buf[*off..*off + 8].try_into().unwrap());
        *off += 8;
        v
    };
    let n_v = rd_u32(&buf, &mut off);
    let n_x = rd_u32(&buf, &mut off);
    let half = rd_f64(&buf, &mut off);
    let time = rd_f64(&buf, &mut off);
    let nu = rd_f64(&buf, &mut off);
    let need = off + 8 * n_v * n_x;
    if buf.len() != need {
        return Err(Error::Snapshot(format!("expected {need} bytes, got {}", buf.len())));
    }
    let mut coeffs = Vec::with_capacity(n_v * n_x);
    for _ in 0..n_v * n_x {
        coeffs.push(rd_f64(&buf, &mut off));
    }
    let grid = SpatialGrid::isotropic(1, half, n_x)?;
    Ok((PhaseSpaceState { coeffs, n_modes: n_v, grid, time }, nu))
}
