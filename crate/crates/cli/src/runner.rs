//! Builds core objects from a run configuration and executes the
//! experiment subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vfpk_core::diagnostics;
use vfpk_core::grid::SpatialGrid;
use vfpk_core::hermite::{shifted_maxwellian_coeffs, HermiteBasis, PhaseSpaceState};
use vfpk_core::kernels::{self, InteractionKernel};
use vfpk_core::potentials::{self, ConfinementPotential};
use vfpk_core::solver::{self, Background, EvolveConfig, Limiter, Mode, Transport};
use vfpk_core::spectral;
use vfpk_core::steady::{self, SolveOptions, SteadyState};

use crate::config::{ConfigError, RunConfig};

/// Exit codes: 0 ok, 2 config, 3 non-convergence, 4 CFL, 5 sweep partial.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;
pub const EXIT_CFL: i32 = 4;
pub const EXIT_SWEEP_PARTIAL: i32 = 5;

pub struct Ctx {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

fn config_err(e: ConfigError) -> (i32, String) {
    (EXIT_CONFIG, e.to_string())
}

fn core_err(e: vfpk_core::Error) -> (i32, String) {
    let code = match &e {
        vfpk_core::Error::CflViolation { .. } => EXIT_CFL,
        vfpk_core::Error::Divergence { .. } => EXIT_NONCONVERGENCE,
        _ => EXIT_CONFIG,
    };
    (code, e.to_string())
}

type RunResult = Result<(), (i32, String)>;

fn build_grid(cfg: &mut RunConfig) -> Result<SpatialGrid, (i32, String)> {
    let dim = cfg.usize("grid.dimension", 1).map_err(config_err)?;
    let half = cfg.f64("grid.half_width", 10.0).map_err(config_err)?;
    let nodes = cfg.usize("grid.nodes", 256).map_err(config_err)?;
    SpatialGrid::isotropic(dim, half, nodes).map_err(core_err)
}

fn build_potential(
    cfg: &mut RunConfig,
    grid: &SpatialGrid,
) -> Result<ConfinementPotential, (i32, String)> {
    let family = cfg.string("potential.family", "quadratic");
    let alpha = cfg.f64("potential.alpha", 1.0).map_err(config_err)?;
    let table = cfg.raw("potential.table");
    let raw = match family.as_str() {
        "quadratic" => ConfinementPotential::quadratic(grid.dim()),
        "power_growth" => ConfinementPotential::power_growth(alpha, grid.dim()).map_err(core_err)?,
        "log_power" => ConfinementPotential::log_power(alpha, grid.dim()).map_err(core_err)?,
        "tabulated" => {
            let path = table.ok_or((
                EXIT_CONFIG,
                "config error at `potential.table`: required for the tabulated family".to_string(),
            ))?;
            let (xs, vs) = read_two_column_csv(Path::new(&path))
                .map_err(|m| (EXIT_CONFIG, format!("config error at `potential.table`: {m}")))?;
            // Resample onto the run grid through linear interpolation of the table.
            let samples: Vec<f64> = (0..grid.len())
                .map(|i| interp_linear(&xs, &vs, grid.point(i)[0]))
                .collect();
            ConfinementPotential::tabulated(grid.clone(), samples).map_err(core_err)?
        }
        other => {
            return Err((
                EXIT_CONFIG,
                format!("config error at `potential.family`: unknown family `{other}`"),
            ))
        }
    };
    potentials::normalize(&raw, grid).map_err(core_err)
}

fn build_kernel(cfg: &mut RunConfig, dim: usize) -> Result<InteractionKernel, (i32, String)> {
    let family = cfg.string("kernel.family", "zero");
    let strength = cfg.f64("kernel.strength", 0.0).map_err(config_err)?;
    let alpha = cfg.f64("kernel.alpha", 2.0).map_err(config_err)?;
    let table = cfg.raw("kernel.table");
    match family.as_str() {
        "zero" => Ok(InteractionKernel::zero(dim)),
        "coulomb" => InteractionKernel::coulomb(strength, dim).map_err(core_err),
        "newton" => InteractionKernel::newton(strength, dim).map_err(core_err),
        "riesz" => InteractionKernel::riesz(strength, alpha, dim).map_err(core_err),
        "synchrotron" => Ok(InteractionKernel::synchrotron(strength)),
        "table" => {
            let path = table.ok_or((
                EXIT_CONFIG,
                "config error at `kernel.table`: required for the table family".to_string(),
            ))?;
            let (xs, ks) = read_two_column_csv(Path::new(&path))
                .map_err(|m| (EXIT_CONFIG, format!("config error at `kernel.table`: {m}")))?;
            let scaled: Vec<f64> =
                ks.iter().map(|&k| if strength != 0.0 { strength * k } else { k }).collect();
            InteractionKernel::table(xs, scaled).map_err(core_err)
        }
        other => Err((
            EXIT_CONFIG,
            format!("config error at `kernel.family`: unknown family `{other}`"),
        )),
    }
}

fn read_two_column_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>), String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',');
        let x: f64 = parts
            .next()
            .ok_or(format!("line {}: missing x", lineno + 1))?
            .trim()
            .parse()
            .map_err(|_| format!("line {}: bad x", lineno + 1))?;
        let y: f64 = parts
            .next()
            .ok_or(format!("line {}: missing value", lineno + 1))?
            .trim()
            .parse()
            .map_err(|_| format!("line {}: bad value", lineno + 1))?;
        xs.push(x);
        ys.push(y);
    }
    if xs.len() < 2 || xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err("table must have at least two strictly increasing x values".to_string());
    }
    Ok((xs, ys))
}

fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let j = xs.partition_point(|&v| v < x).max(1) - 1;
    let t = (x - xs[j]) / (xs[j + 1] - xs[j]);
    ys[j] * (1.0 - t) + ys[j + 1] * t
}

fn build_solve_options(cfg: &mut RunConfig, seed: u64) -> Result<SolveOptions, (i32, String)> {
    let damping = match cfg.string("steady.damping", "auto").as_str() {
        "auto" => None,
        v => Some(v.parse().map_err(|_| {
            (EXIT_CONFIG, format!("config error at `steady.damping`: not a number: `{v}`"))
        })?),
    };
    Ok(SolveOptions {
        damping,
        tol: cfg.f64("steady.tol", 1e-12).map_err(config_err)?,
        max_iter: cfg.usize("steady.max_iter", 500).map_err(config_err)?,
        positivity_override: cfg.bool("steady.positivity_override", false).map_err(config_err)?,
        seed,
    })
}

fn build_evolve_config(cfg: &mut RunConfig, mode: Mode) -> Result<EvolveConfig, (i32, String)> {
    let transport = match cfg.string("evolve.transport", "muscl").as_str() {
        "muscl" => Transport::Muscl,
        "spectral" => Transport::Spectral,
        other => {
            return Err((
                EXIT_CONFIG,
                format!("config error at `evolve.transport`: unknown scheme `{other}`"),
            ))
        }
    };
    let limiter = match cfg.string("evolve.limiter", "vanleer").as_str() {
        "none" => Limiter::None,
        "minmod" => Limiter::MinMod,
        "vanleer" => Limiter::VanLeer,
        "mc" => Limiter::Mc,
        other => {
            return Err((
                EXIT_CONFIG,
                format!("config error at `evolve.limiter`: unknown limiter `{other}`"),
            ))
        }
    };
    let mut out = EvolveConfig {
        nu: cfg.f64("velocity.nu", 1.0).map_err(config_err)?,
        dt: cfg.f64("evolve.dt", 1e-3).map_err(config_err)?,
        t_end: cfg.f64("evolve.t_end", 1.0).map_err(config_err)?,
        cfl_guard: cfg.f64("evolve.cfl_guard", 0.9).map_err(config_err)?,
        filter_on: cfg.bool("evolve.filter", false).map_err(config_err)?,
        mode,
        output_stride: cfg.usize("evolve.output_stride", 10).map_err(config_err)?,
        log_sampling: cfg.bool("evolve.log_sampling", false).map_err(config_err)?,
        transport,
        limiter,
        monitor: Default::default(),
    };
    out.monitor.track_functionals =
        cfg.bool("evolve.track_functionals", true).map_err(config_err)?;
    out.monitor.track_moments = cfg.bool("evolve.track_moments", true).map_err(config_err)?;
    out.monitor.track_energy = cfg.bool("evolve.track_energy", true).map_err(config_err)?;
    out.monitor.hs_list = cfg.f64_list("evolve.hs_list").map_err(config_err)?;
    out.monitor.e0_epsilon = cfg.f64("evolve.e0_epsilon", 0.1).map_err(config_err)?;
    Ok(out)
}

/// Initial data construction per the perturbation block.
#[allow(clippy::too_many_arguments)]
fn build_initial_state(
    cfg: &mut RunConfig,
    basis: &HermiteBasis,
    grid: &SpatialGrid,
    steady: &SteadyState,
    mode: Mode,
    seed: u64,
) -> Result<(PhaseSpaceState, bool), (i32, String)> {
    let kind = cfg.string("perturb.kind", "none");
    let amp = cfg.f64("perturb.amplitude", 1e-3).map_err(config_err)?;
    let sqrt_rho: Vec<f64> = steady.rho_star.values().iter().map(|r| r.sqrt()).collect();
    let n_x = grid.len();
    let mut rough = false;

    // Perturbation rows in the conjugated representation g = sqrt(rho*) f.
    let mut g = vec![0.0; basis.n_modes() * n_x];
    match kind.as_str() {
        "none" => {}
        "bump" => {
            let center = cfg.f64("perturb.center", 0.5).map_err(config_err)?;
            let width = cfg.f64("perturb.width", 0.8).map_err(config_err)?;
            for i in 0..n_x {
                let x = grid.point(i)[0];
                g[i] = amp * (-0.5 * ((x - center) / width).powi(2)).exp() * sqrt_rho[i];
            }
        }
        "shifted_gaussian" => {
            // Full phase-space replacement: N(mean_x, sigma_x^2) x M(v - mean_v).
            let mean_x = cfg.f64("perturb.mean_x", 1.0).map_err(config_err)?;
            let sigma_x = cfg.f64("perturb.sigma_x", 1.0).map_err(config_err)?;
            let mean_v = cfg.f64("perturb.mean_v", 0.5).map_err(config_err)?;
            if mode != Mode::Nonlinear {
                return Err((
                    EXIT_CONFIG,
                    "config error at `perturb.kind`: shifted_gaussian needs the nonlinear mode"
                        .to_string(),
                ));
            }
            let mut state = PhaseSpaceState::zero(basis, grid).map_err(core_err)?;
            let shift = shifted_maxwellian_coeffs(basis, mean_v);
            for i in 0..n_x {
                let x = grid.point(i)[0];
                let rho = (-0.5 * ((x - mean_x) / sigma_x).powi(2)).exp()
                    / (sigma_x * (2.0 * std::f64::consts::PI).sqrt());
                for (n, &sn) in shift.iter().enumerate() {
                    state.row_mut(n)[i] = sn * rho;
                }
            }
            return Ok((state, false));
        }
        "rough" => {
            rough = true;
            // Scale-free noise: 1/sqrt(k) spectrum in x on the mass mode plus
            // a 1/sqrt(n) Hermite tail on a smooth profile, both under the
            // sqrt(rho*) envelope. This saturates both short-time
            // regularization envelopes at once.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let period = n_x as f64 * grid.spacing(0);
            let k_max = (0.9 * (n_x as f64 / 2.0)) as usize;
            let mut xrow = vec![0.0; n_x];
            for k in 1..=k_max {
                let a = amp / (k as f64).sqrt();
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                for (i, v) in xrow.iter_mut().enumerate() {
                    let x = grid.point(i)[0] + grid.half_widths()[0];
                    *v += a
                        * (2.0 * std::f64::consts::PI * k as f64 * x / period + phase).cos();
                }
            }
            for i in 0..n_x {
                g[i] = xrow[i] * sqrt_rho[i];
            }
            let v_amp = cfg.f64("perturb.v_amplitude", amp).map_err(config_err)?;
            for n in 1..basis.n_modes() {
                let b = v_amp / (n as f64).sqrt();
                let xi: f64 = rng.random_range(-1.0..1.0_f64);
                let sign = if xi >= 0.0 { 1.0 } else { -1.0 };
                for i in 0..n_x {
                    g[n * n_x + i] = b * sign * sqrt_rho[i];
                }
            }
        }
        other => {
            return Err((
                EXIT_CONFIG,
                format!("config error at `perturb.kind`: unknown kind `{other}`"),
            ))
        }
    }

    // Remove the F*-mean so the perturbation stays mass-neutral.
    let dot: f64 = g[..n_x].iter().zip(&sqrt_rho).enumerate().map(|(i, (&a, &b))| {
        grid.quad_weight(i) * a * b
    }).sum();
    let nrm: f64 =
        sqrt_rho.iter().enumerate().map(|(i, &s)| grid.quad_weight(i) * s * s).sum();
    for (gi, &s) in g[..n_x].iter_mut().zip(&sqrt_rho) {
        *gi -= dot / nrm * s;
    }

    let mut state = PhaseSpaceState::zero(basis, grid).map_err(core_err)?;
    match mode {
        Mode::LinearizedAroundSteady => {
            state.coeffs.copy_from_slice(&g);
        }
        Mode::Nonlinear => {
            // F = F* + sqrt(rho*) g in coefficient space.
            for n in 0..basis.n_modes() {
                for i in 0..n_x {
                    state.coeffs[n * n_x + i] = sqrt_rho[i] * g[n * n_x + i];
                }
            }
            for (c, r) in state.coeffs[..n_x].iter_mut().zip(steady.rho_star.values()) {
                *c += r;
            }
        }
    }
    Ok((state, rough))
}

fn write_json(path: &Path, pairs: &[(&str, String)]) -> std::io::Result<()> {
    let mut out = String::from("{\n");
    for (i, (k, v)) in pairs.iter().enumerate() {
        out.push_str(&format!("  \"{k}\": {v}"));
        out.push_str(if i + 1 < pairs.len() { ",\n" } else { "\n" });
    }
    out.push_str("}\n");
    fs::write(path, out)
}

fn json_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.12e}")
    } else {
        format!("\"{v}\"")
    }
}

pub fn cmd_steady(mut cfg: RunConfig, ctx: &Ctx) -> RunResult {
    let grid = build_grid(&mut cfg)?;
    let potential = build_potential(&mut cfg, &grid)?;
    let kernel = build_kernel(&mut cfg, grid.dim())?;
    let opts = build_solve_options(&mut cfg, ctx.seed)?;
    cfg.reject_unknown().map_err(config_err)?;

    let fp = steady::FixedPoint::new(&potential, &kernel, &grid).map_err(core_err)?;
    let ss = fp.solve(&kernel, &opts).map_err(core_err)?;

    fs::create_dir_all(&ctx.out_dir).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    steady::write_snapshot(&ss, &ctx.out_dir.join("steady.rho")).map_err(core_err)?;
    let mut csv = String::from("iteration,residual,contraction_factor,zeta\n");
    for (i, r) in ss.residuals.iter().enumerate() {
        let factor = if i > 0 && ss.residuals[i - 1] > 0.0 {
            format!("{:.17e}", r / ss.residuals[i - 1])
        } else {
            String::new()
        };
        csv.push_str(&format!("{i},{r:.17e},{factor},{:.17e}\n", ss.zeta));
    }
    fs::write(ctx.out_dir.join("convergence.csv"), csv)
        .map_err(|e| (EXIT_CONFIG, e.to_string()))?;

    ctx.say(format!(
        "steady: converged = {}, iterations = {}, zeta = {:.6e}",
        ss.converged,
        ss.residuals.len(),
        ss.zeta
    ));
    if !ss.converged {
        return Err((EXIT_NONCONVERGENCE, "fixed point did not converge".to_string()));
    }
    Ok(())
}

pub fn cmd_evolve(mut cfg: RunConfig, ctx: &Ctx, mode: Mode) -> RunResult {
    let grid = build_grid(&mut cfg)?;
    if grid.dim() != 1 {
        return Err((
            EXIT_CONFIG,
            "config error at `grid.dimension`: evolution requires dimension 1".to_string(),
        ));
    }
    let potential = build_potential(&mut cfg, &grid)?;
    let kernel = build_kernel(&mut cfg, grid.dim())?;
    let n_modes = cfg.usize("velocity.modes", 64).map_err(config_err)?;
    let basis = HermiteBasis::new(n_modes).map_err(core_err)?;
    let mut evolve_cfg = build_evolve_config(&mut cfg, mode)?;
    let opts = build_solve_options(&mut cfg, ctx.seed)?;

    // Steady solve or load.
    let ss = match cfg.raw("steady.load") {
        Some(path) => steady::read_snapshot(Path::new(&path)).map_err(core_err)?,
        None => steady::solve_fixed_point(&potential, &kernel, &grid, &opts).map_err(core_err)?,
    };

    let (initial, rough) =
        build_initial_state(&mut cfg, &basis, &grid, &ss, mode, ctx.seed)?;
    evolve_cfg.monitor.blank_initial_h1x = rough;

    // Optional manufactured source for linearized runs.
    let source_kind = cfg.string("linear.source", "none");
    let src_amp = cfg.f64("linear.source_amplitude", 0.0).map_err(config_err)?;
    let src_mode = cfg.usize("linear.source_mode", 1).map_err(config_err)?;
    let src_decay = cfg.f64("linear.source_decay", 1.0).map_err(config_err)?;
    let fit_start = cfg.f64("fit.window_start", 0.5 * evolve_cfg.t_end).map_err(config_err)?;
    let fit_end = cfg.f64("fit.window_end", evolve_cfg.t_end).map_err(config_err)?;
    let fit_column = cfg.string("fit.column", "l2_fstar");
    cfg.reject_unknown().map_err(config_err)?;

    let n_x = grid.len();
    let n_v = basis.n_modes();
    let source_cl = move |t: f64, state: &PhaseSpaceState| -> Vec<f64> {
        let mut phi = vec![0.0; n_v * n_x];
        let decay = (-src_decay * t).exp();
        for i in 0..n_x {
            let x = state.grid.point(i)[0];
            phi[src_mode * n_x + i] = src_amp * decay * (-x * x).exp();
        }
        phi
    };
    let source: Option<&solver::SourceFn> = match source_kind.as_str() {
        "none" => None,
        "manufactured" => Some(&source_cl),
        other => {
            return Err((
                EXIT_CONFIG,
                format!("config error at `linear.source`: unknown source `{other}`"),
            ))
        }
    };

    let bg = Background::new(&potential, &kernel, &grid, Some(ss)).map_err(core_err)?;
    let out = solver::evolve(initial, &basis, &bg, &evolve_cfg, source).map_err(core_err)?;

    fs::create_dir_all(&ctx.out_dir).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    let mut series = out.series;
    // Weighted columns with the fitted decay rate (the rate is not assumed).
    if let Ok(samples) = series.column(&fit_column) {
        if let Ok(fit) = diagnostics::fit_rates(&samples, (fit_start, fit_end)) {
            series.append_weighted_columns(fit.lambda_hat).map_err(core_err)?;
            write_json(
                &ctx.out_dir.join("fit.json"),
                &[
                    ("column", format!("\"{fit_column}\"")),
                    ("window_start", json_f64(fit.window.0)),
                    ("window_end", json_f64(fit.window.1)),
                    ("lambda_hat", json_f64(fit.lambda_hat)),
                    ("exponent_hat", json_f64(fit.exponent_hat)),
                    ("r_squared", json_f64(fit.r_squared)),
                    ("r_squared_power", json_f64(fit.r_squared_power)),
                    ("samples", format!("{}", fit.samples)),
                ],
            )
            .map_err(|e| (EXIT_CONFIG, e.to_string()))?;
        }
    }
    series.write_csv(&ctx.out_dir.join("series.csv")).map_err(core_err)?;
    solver::write_state_snapshot(&out.final_state, evolve_cfg.nu, &ctx.out_dir.join("final.pss"))
        .map_err(core_err)?;

    ctx.say(format!(
        "evolve: completed = {}, t = {:.3}, mass drift = {:.3e}",
        out.completed, out.final_state.time, out.mass_drift
    ));
    if !out.completed {
        return Err((EXIT_NONCONVERGENCE, "state went non-finite".to_string()));
    }
    Ok(())
}

pub fn cmd_diagnose(mut cfg: RunConfig, ctx: &Ctx) -> RunResult {
    let nodes = cfg.usize("diagnose.nodes", 32).map_err(config_err)?;
    let modes = cfg.usize("diagnose.modes", 8).map_err(config_err)?;
    let trials = cfg.usize("diagnose.trials", 100).map_err(config_err)?;
    let e0_eps = cfg.f64("diagnose.e0_epsilon", 0.25).map_err(config_err)?;
    let theta = cfg.f64("kernel.theta", 0.5).map_err(config_err)?;
    let half = cfg.f64("grid.half_width", 9.0).map_err(config_err)?;
    let nu = cfg.f64("velocity.nu", 1.0).map_err(config_err)?;
    cfg.set("grid.half_width", format!("{half}"));
    cfg.set("grid.nodes", format!("{nodes}"));
    let grid = build_grid(&mut cfg)?;
    let potential = build_potential(&mut cfg, &grid)?;
    let kernel = build_kernel(&mut cfg, grid.dim())?;
    let opts = build_solve_options(&mut cfg, ctx.seed)?;
    cfg.reject_unknown().map_err(config_err)?;

    let ss = steady::solve_fixed_point(&potential, &kernel, &grid, &opts).map_err(core_err)?;
    let prep = kernel.prepare(&grid).map_err(core_err)?;
    let basis = HermiteBasis::new(modes).map_err(core_err)?;
    let mut v_prime = vec![0.0; grid.len()];
    for (i, v) in v_prime.iter_mut().enumerate() {
        *v = potential.eval(&grid.point(i)[..1]).map_err(core_err)?.gradient[0];
    }
    let bundle = diagnostics::assemble_discrete_operators(&ss, &prep, &v_prime, &basis, nu)
        .map_err(core_err)?;
    let lambda_m =
        diagnostics::macroscopic_coercivity_constant(&ss, &prep, &v_prime).map_err(core_err)?;
    let coercivity = kernels::coercivity_estimate(&kernel, &grid, theta).map_err(core_err)?;

    // Randomized A-operator bound and E_0 sandwich checks.
    let bounds = diagnostics::verify_bundle_bounds(&bundle, trials, ctx.seed, e0_eps);
    let (worst_a, worst_al, worst_ta) = (bounds.a_bound, bounds.al_bound, bounds.ta_bound);
    let (e0_low, e0_high) = (bounds.e0_ratio_min, bounds.e0_ratio_max);

    fs::create_dir_all(&ctx.out_dir).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    write_json(
        &ctx.out_dir.join("operators.json"),
        &[
            ("n_x", format!("{}", bundle.n_x)),
            ("n_v", format!("{}", bundle.n_v)),
            ("skew_defect", json_f64(bundle.report.skew_defect)),
            ("sym_defect", json_f64(bundle.report.sym_defect)),
            ("parabolic_defect", json_f64(bundle.report.parabolic_defect)),
            ("gram_min_eig", json_f64(bundle.report.gram_min_eig)),
            ("a_bound", json_f64(worst_a)),
            ("al_bound", json_f64(worst_al)),
            ("ta_bound", json_f64(worst_ta)),
            ("nu", json_f64(nu)),
            ("e0_epsilon", json_f64(e0_eps)),
            ("e0_ratio_min", json_f64(e0_low)),
            ("e0_ratio_max", json_f64(e0_high)),
            ("lambda_macro", json_f64(lambda_m)),
            ("kappa_lower_even", json_f64(coercivity.kappa_lower_even)),
            ("kappa_upper_even", json_f64(coercivity.kappa_upper_even)),
            ("kappa_upper_odd", json_f64(coercivity.kappa_upper_odd)),
            ("trials", format!("{trials}")),
        ],
    )
    .map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    ctx.say(format!(
        "diagnose: skew {:.2e}, sym {:.2e}, PiTPi {:.2e}, |A| <= {:.4}, lambda_M = {:.4}",
        bundle.report.skew_defect,
        bundle.report.sym_defect,
        bundle.report.parabolic_defect,
        worst_a,
        lambda_m
    ));
    Ok(())
}

pub fn cmd_poincare(mut cfg: RunConfig, ctx: &Ctx) -> RunResult {
    let grid = build_grid(&mut cfg)?;
    let potential = build_potential(&mut cfg, &grid)?;
    let kernel = build_kernel(&mut cfg, grid.dim())?;
    let opts = build_solve_options(&mut cfg, ctx.seed)?;
    let trials = cfg.usize("poincare.trials", 100).map_err(config_err)?;
    cfg.reject_unknown().map_err(config_err)?;

    let bare = spectral::witten_gap(&potential, &grid).map_err(core_err)?;
    let rho = potential.gibbs_values(&grid).map_err(core_err)?;
    let ratio = spectral::poincare_ratio_max(&grid, &rho, trials, ctx.seed);

    let mut pairs = vec![
        ("gap", json_f64(bare.gap)),
        ("poincare_constant", json_f64(bare.poincare_constant)),
        ("ground_state_defect", json_f64(bare.ground_state_defect)),
        ("max_rayleigh_ratio", json_f64(ratio)),
    ];
    let mut extra: Vec<(String, String)> = Vec::new();
    if !kernel.is_zero() {
        let ss = steady::solve_fixed_point(&potential, &kernel, &grid, &opts).map_err(core_err)?;
        let sg = spectral::steady_measure_gap(&ss, &potential).map_err(core_err)?;
        extra.push(("steady_gap".to_string(), json_f64(sg.report.gap)));
        extra.push(("oscillation".to_string(), json_f64(sg.oscillation)));
        extra.push(("envelope_lower".to_string(), json_f64(sg.envelope_lower)));
        extra.push(("envelope_upper".to_string(), json_f64(sg.envelope_upper)));
        extra.push(("poincare_bound".to_string(), json_f64(sg.poincare_bound)));
        // Measured constants of the weighted Poincare inequalities for the
        // steady measure (randomized validation, not a sharp constant).
        if grid.dim() == 1 {
            let h = grid.spacing(0);
            let n = grid.len();
            let weight: Vec<f64> = (0..n)
                .map(|i| {
                    let left = if i > 0 { ss.v_star[i - 1] } else { ss.v_star[0] };
                    let right = if i + 1 < n { ss.v_star[i + 1] } else { ss.v_star[n - 1] };
                    ((right - left) / (2.0 * h)).abs()
                })
                .collect();
            let c1 = spectral::weighted_poincare_ratio_max(
                &grid,
                ss.rho_star.values(),
                &weight,
                trials,
                ctx.seed,
            );
            let c2 = spectral::weighted_poincare2_ratio_max(
                &grid,
                ss.rho_star.values(),
                &weight,
                trials,
                ctx.seed,
            );
            extra.push(("c_star_weighted".to_string(), json_f64(c1)));
            extra.push(("c_star_weighted2".to_string(), json_f64(c2)));
        }
    }
    let extra_refs: Vec<(&str, String)> =
        extra.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    pairs.extend(extra_refs);

    fs::create_dir_all(&ctx.out_dir).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    write_json(&ctx.out_dir.join("poincare.json"), &pairs)
        .map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    ctx.say(format!("poincare: gap = {:.6}, C_P = {:.6}", bare.gap, bare.poincare_constant));
    Ok(())
}

/// Cartesian sweep over listed parameters; one subdirectory per point,
/// parallel across points, manifest complete even when points fail.
pub fn cmd_sweep(mut cfg: RunConfig, ctx: &Ctx) -> RunResult {
    let params = cfg.string_list("sweep.parameters");
    let experiment = cfg.string("sweep.experiment", "evolve");
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for p in &params {
        let key = format!("sweep.values.{p}");
        let mut values = cfg.string_list(&key);
        if values.is_empty() {
            return Err((EXIT_CONFIG, format!("config error at `{key}`: no values listed")));
        }
        // Deduplicate with a warning.
        let mut seen = Vec::new();
        for v in values.drain(..) {
            if seen.contains(&v) {
                eprintln!("warning: duplicate sweep value `{v}` for `{p}` dropped");
            } else {
                seen.push(v);
            }
        }
        axes.push((p.clone(), seen));
    }
    cfg.consume_prefix("sweep.");

    // Cartesian product (a single empty product is one unmodified point).
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in &axes {
        let mut next = Vec::new();
        for point in &points {
            for v in values {
                let mut p = point.clone();
                p.push((key.clone(), v.clone()));
                next.push(p);
            }
        }
        points = next;
    }
    if points.len() > 10_000 {
        return Err((
            EXIT_CONFIG,
            format!("config error at `sweep.parameters`: {} points exceed the 10^4 cap", points.len()),
        ));
    }
    fs::create_dir_all(&ctx.out_dir).map_err(|e| (EXIT_CONFIG, e.to_string()))?;

    let run_point = |(idx, overrides): (usize, &Vec<(String, String)>)| -> (usize, Vec<String>, String, String, String, String) {
        let mut point_cfg = cfg.clone();
        for (k, v) in overrides {
            point_cfg.set(k, v.clone());
        }
        point_cfg.consume_prefix("sweep.");
        let sub = ctx.out_dir.join(format!("point_{idx:04}"));
        let point_ctx = Ctx { out_dir: sub.clone(), seed: ctx.seed, quiet: true };
        let _ = fs::create_dir_all(&sub);
        let _ = fs::write(sub.join("point.cfg"), point_cfg.serialize());
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            match experiment.as_str() {
                "steady" => cmd_steady(point_cfg.clone(), &point_ctx),
                "evolve" => cmd_evolve(point_cfg.clone(), &point_ctx, Mode::Nonlinear),
                "linear" => {
                    cmd_evolve(point_cfg.clone(), &point_ctx, Mode::LinearizedAroundSteady)
                }
                other => Err((EXIT_CONFIG, format!("unknown sweep experiment `{other}`"))),
            }
        }));
        let status = match &outcome {
            Ok(Ok(())) => "ok".to_string(),
            Ok(Err((code, msg))) => {
                eprintln!("point {idx}: {msg}");
                match *code {
                    EXIT_NONCONVERGENCE => "nonconverged".to_string(),
                    EXIT_CFL => "cfl".to_string(),
                    EXIT_CONFIG => "config".to_string(),
                    _ => "failed".to_string(),
                }
            }
            Err(_) => "crashed".to_string(),
        };
        // Post-run summary values where available.
        let converged = match experiment.as_str() {
            "steady" | "evolve" | "linear" => {
                if status == "ok" {
                    "true".to_string()
                } else if status == "nonconverged" {
                    "false".to_string()
                } else {
                    String::new()
                }
            }
            _ => String::new(),
        };
        let lambda_hat = read_json_field(&sub.join("fit.json"), "lambda_hat").unwrap_or_default();
        let gap = read_json_field(&sub.join("poincare.json"), "gap").unwrap_or_default();
        let values: Vec<String> = overrides.iter().map(|(_, v)| v.clone()).collect();
        (idx, values, status, converged, lambda_hat, gap)
    };

    let indexed: Vec<(usize, &Vec<(String, String)>)> = points.iter().enumerate().collect();
    let results: Vec<_> = {
        use rayon::prelude::*;
        indexed.par_iter().map(|(i, p)| run_point((*i, p))).collect()
    };

    let mut manifest = String::from("point,");
    for (key, _) in &axes {
        manifest.push_str(key);
        manifest.push(',');
    }
    manifest.push_str("status,converged,lambda_hat,gap\n");
    let mut any_crashed = false;
    for (idx, values, status, converged, lambda_hat, gap) in &results {
        manifest.push_str(&format!("{idx},"));
        for v in values {
            manifest.push_str(v);
            manifest.push(',');
        }
        manifest.push_str(&format!("{status},{converged},{lambda_hat},{gap}\n"));
        any_crashed |= status == "crashed";
    }
    fs::write(ctx.out_dir.join("manifest.csv"), manifest)
        .map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    ctx.say(format!("sweep: {} points", results.len()));
    if any_crashed {
        return Err((EXIT_SWEEP_PARTIAL, "one or more sweep points crashed".to_string()));
    }
    Ok(())
}

fn read_json_field(path: &Path, field: &str) -> Option<String> {
    let text = fs::read_to_string(path).ok()?;
    for line in text.lines() {
        let line = line.trim().trim_end_matches(',');
        if let Some(rest) = line.strip_prefix(&format!("\"{field}\": ")) {
            return Some(rest.trim_matches('"').to_string());
        }
    }
    None
}
