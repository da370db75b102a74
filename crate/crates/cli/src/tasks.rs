//! One function per subcommand. Each returns an [`Outcome`] whose checks
//! decide the exit code.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfred_core::controls::{
    a_priori_band, compare_reduced_full, default_shooting, equivalence_check, fixed_point_solve, multistart_guesses,
    solve_pq, solve_reduced_controls, Band, ControlsGrid, PicardSpec, PqVerdict, PQ_AGREEMENT,
};
use mfred_core::finite::{
    box_grid, eval_u_path, fiber_evolution_check, solve_characteristics, tangential_motion_check, time_grid,
    verify_reduction_identity,
};
use mfred_core::master::{
    boundary_invariance_check, solve_fb_reduced, solve_reduced_master, verify_moment_consistency,
};
use mfred_core::noise::{
    expansion_study, lambda0_consistency, solve_noisy, solve_perturbed, stability_from, Forcing,
};
use mfred_core::ode::{IntegratorSpec, NewtonSpec, ShootDirection, ShootingSpec};
use mfred_core::verify::{
    check_abc, check_h_monotone, check_pair_monotone, check_pair_reduction, quadratic_chain, worst_of, CheckReport,
    SamplingSpec, Witness, DEFAULT_Z_GRID,
};
use mfred_core::zoo::{
    ControlsModel, FiniteStateModel, GridSpec, ModelSpec, NoiseModel, PowerControlsModel, ReducedHamiltonian,
};
use mfred_core::{moments, ParticleCloud, ReductionMap};

use crate::config::ScenarioConfig;
use crate::output::{Outcome, Table};
use crate::{Failure, Task};

pub struct Ctx<'a> {
    pub task: Task,
    pub cfg: &'a ScenarioConfig,
    pub seed: u64,
    pub model: ModelSpec,
}

impl Ctx<'_> {
    fn wrong_family(&self) -> Failure {
        Failure::Usage(format!(
            "task `{}` does not run on {} models",
            self.task.name(),
            self.model.family()
        ))
    }

    fn dt(&self, default: f64) -> f64 {
        self.cfg.dt.unwrap_or(default)
    }

    fn horizon(&self) -> f64 {
        self.cfg.horizon.unwrap_or(1.0)
    }

    fn sampling(&self) -> SamplingSpec {
        SamplingSpec {
            samples: self.cfg.samples.unwrap_or(10_000),
            seed: self.seed,
            half_width: self.cfg.half_width.unwrap_or(5.0),
            tol: self.cfg.tol.unwrap_or(1e-10),
            probes: Vec::new(),
        }
    }

    fn reduced_hamiltonian(&self) -> Result<&dyn ReducedHamiltonian, Failure> {
        match &self.model {
            ModelSpec::PowerMaster(m) => Ok(m),
            ModelSpec::QuadraticMaster(m) => Ok(m),
            _ => Err(self.wrong_family()),
        }
    }

    fn finite(&self) -> Result<(&FiniteStateModel, Option<&ReductionMap>), Failure> {
        match &self.model {
            ModelSpec::Finite { model, reduction } => Ok((model, reduction.as_ref())),
            _ => Err(self.wrong_family()),
        }
    }

    fn noise(&self) -> Result<NoiseModel, Failure> {
        let ModelSpec::Noise(m) = &self.model else {
            return Err(self.wrong_family());
        };
        let mut m = m.clone();
        let g = &mut m.grid;
        if let Some(v) = self.cfg.half_width {
            g.half_width = v;
        }
        if let Some(v) = self.cfg.nodes {
            g.nodes_per_axis = v;
        }
        if let Some(v) = self.cfg.dt {
            g.dt = v;
        }
        if let Some(v) = self.cfg.horizon {
            g.horizon = v;
        }
        if let Some(v) = self.cfg.snapshots {
            g.snapshots = v;
        }
        Ok(m)
    }

    fn power_controls(&self) -> Result<&PowerControlsModel, Failure> {
        match &self.model {
            ModelSpec::PowerControls(m) => Ok(m),
            _ => Err(self.wrong_family()),
        }
    }
}

pub fn run(ctx: &Ctx<'_>) -> Result<Outcome, Failure> {
    match ctx.task {
        Task::SolveFinite => solve_finite(ctx),
        Task::VerifyReduction => verify_reduction(ctx),
        Task::SolveReducedMaster => solve_reduced(ctx),
        Task::SolveFb => solve_fb(ctx),
        Task::VerifyConsistency => verify_consistency(ctx),
        Task::SolveMfgc => solve_mfgc(ctx),
        Task::SolveMfgcReduced => solve_mfgc_reduced(ctx),
        Task::SolvePq => solve_pq_task(ctx),
        Task::CheckAbc => check_abc_task(ctx),
        Task::CheckMonotone => check_monotone(ctx),
        Task::NoiseSolve => noise_solve(ctx),
        Task::NoiseExpansion => noise_expansion(ctx),
        Task::NoiseStability => noise_stability(ctx),
        Task::Convergence => convergence(ctx),
    }
}

/// Report for a single yes/no condition; `margin` is negative on failure.
fn condition(name: &str, margin: f64, witness: Option<Witness>, samples: usize, seed: u64, tol: f64) -> CheckReport {
    CheckReport::from_margin(name, margin, witness, samples, seed, tol)
}

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{prefix}{k}")).collect()
}

fn header<'a>(fixed: &[&'a str], dynamic: &'a [String]) -> Vec<&'a str> {
    let mut h: Vec<&str> = fixed.to_vec();
    h.extend(dynamic.iter().map(String::as_str));
    h
}

/// Random seed pairs on common fibers: `x` uniform in the box and `x'`
/// shifted along `ker L`.
fn fiber_pairs(l: &ReductionMap, count: usize, half_width: f64, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (big_n, k) = (l.big_n(), l.big_n() - l.n());
    (0..count)
        .map(|_| {
            let x: Vec<f64> = (0..big_n).map(|_| rng.random_range(-half_width..=half_width)).collect();
            let c: Vec<f64> = (0..k).map(|_| rng.random_range(-half_width..=half_width)).collect();
            let y = x.iter().zip(l.kernel_point(&c)).map(|(a, b)| a + b).collect();
            (x, y)
        })
        .collect()
}

fn solve_finite(ctx: &Ctx<'_>) -> Result<Outcome, Failure> {
    let (model, reduction) = ctx.finite()?;
    let cfg = ctx.cfg;
    let hw = cfg.half_width.unwrap_or(2.0);
    let horizon = ctx.horizon();
    let spec = IntegratorSpec::rk4(ctx.dt(1e-3));
    let seeds = match &cfg.seeds {
        Some(s) => s.clone(),
        None => box_grid(-hw, hw, cfg.grid_points.unwrap_or(5), model.dim),
    };
    let field = solve_characteristics(model, &seeds, horizon, &spec)?;
    let (xs, vs) = (labels("X", model.dim), labels("V", model.dim));
    let dynamic: Vec<String> = xs.into_iter().chain(vs).collect();
    let mut table = Table::new("characteristics", &header(&["traj", "t"], &dynamic));
    let ts = time_grid(horizon, cfg.times.unwrap_or(11));
    for (i, tr) in field.trajectories.iter().enumerate() {
        for &t in &ts {
            let mut row = vec![i as f64, t];
            row.extend(tr.at(t));
            table.push(&row);
        }
    }
    let mut out = Outcome::default();
    out.tables.push(table);
    out.note("seeds", seeds.len());
    if let Some(l) = reduction {
        let pairs = fiber_pairs(l, cfg.pairs.unwrap_or(20), hw, ctx.seed);
        let mut rep = fiber_evolution_check(model, l, &pairs, horizon, &spec, cfg.tol.unwrap_or(1e-8))?;
        rep.seed = ctx.seed;
        let mut pt = Table::new(
            "fiber_pairs",
            &header(&["pair"], &labels("x", model.dim).into_iter().chain(labels("y", model.dim)).collect::<Vec<_>>()),
        );
        for (i, (a, b)) in pairs.iter().enumerate() {
            let mut row = vec![i as f64];
            row.extend(a);
            row.extend(b);
            pt.push(&row);
        }
        out.tables.push(pt);
        out.checks.push(rep);
        out.checks.push(tangential_motion_check(&field, l, 1e-10)?);
    }
    Ok(out)
}

/// `U(t, x)` on `times x grid` (time-major), integrated with RK4 step `h`.
fn u_values(
    model: &FiniteStateModel,
    grid: &[Vec<f64>],
    times: &[f64],
    h: f64,
    newton: &NewtonSpec,
) -> Result<Vec<Vec<f64>>, Failure> {
    let spec = IntegratorSpec::rk4(h);
    let slots: Vec<std::sync::Mutex<Vec<Vec<f64>>>> = grid.iter().map(|_| Default::default()).collect();
    worst_of(grid.len(), |g| {
        let path = eval_u_path(model, times, &grid[g], &spec, newton)?;
        *slots[g].lock().unwrap() = path.into_iter().map(|p| p.u).collect();
        Ok(0.0)
    })?;
    let by_point: Vec<Vec<Vec<f64>>> = slots.into_iter().map(|s| s.into_inner().unwrap()).collect();
    Ok((0..times.len())
        .flat_map(|k| by_point.iter().map(move |p| p[k].clone()))
        .collect())
}

/// `sup |U_a - U_b|` over matching entries.
fn sup_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn verify_reduction(ctx: &Ctx<'_>) -> Result<Outcome, Failure> {
    let (model, reduction) = ctx.finite()?;
    let l = reduction.ok_or_else(|| Failure::Usage(format!("model `{}` ships no reduction map", model.name)))?;
    let cfg = ctx.cfg;
    let mut out = Outcome::default();
    let mut sampling = ctx.sampling();
    sampling.tol = 1e-10;
    let pr = check_pair_reduction(model, l, &sampling)?;
    out.checks.push(pr.report.clone());
    let Some(reduced) = pr.reduced else {
        return Ok(out);
    };

    let hw = cfg.half_width.unwrap_or(2.0);
    let grid = box_grid(-hw, hw, cfg.grid_points.unwrap_or(9), model.dim);
    let ts = time_grid(ctx.horizon(), cfg.times.unwrap_or(11));
    let dt = ctx.dt(1e-3);
    let newton = NewtonSpec::default();
    let tol = cfg.tol.unwrap_or(1e-6);
    let identity = verify_reduction_identity(model, l, &reduced, &grid, &ts, &IntegratorSpec::rk4(dt), &newton, tol)?;
    out.note("identity_error", -identity.worst_margin);
    out.checks.push(identity);

    // Discretization error of U along dt0 / 2^k against a run four times
    // finer than the finest level.
    let levels = cfg.refinements.unwrap_or(1) + 1;
    let dt0 = cfg.refine_from.unwrap_or(dt);
    let steps: Vec<f64> = (0..levels).map(|k| dt0 / 2f64.powi(k as i32)).collect();
    let reference = u_values(model, &grid, &ts, steps[levels - 1] / 4.0, &newton)?;
    let mut errors = Vec::with_capacity(levels);
    for &h in &steps {
        errors.push(sup_gap(&u_values(model, &grid, &ts, h, &newton)?, &reference));
    }
    let mut table = Table::new("refinement", &["dt", "discretization_error"]);
    for (h, e) in steps.iter().zip(&errors) {
        table.push(&[*h, *e]);
    }
    out.tables.push(table);
    if levels > 1 {
        let (mut worst, mut at) = (f64::INFINITY, 0);
        for k in 0..levels - 1 {
            let ratio = errors[k] / errors[k + 1];
            if ratio < worst {
                worst = ratio;
                at = k;
            }
        }
        out.note("refinement_ratio", worst);
        out.checks.push(condition(
            "rk4 refinement ratio >= 8",
            worst - 8.0,
            Some(Witness::new("dt pair", vec![vec![steps[at], steps[at + 1]]])),
            grid.len() * ts.len(),
            0,
            0.0,
        ));
    }
    Ok(out)
}

fn default_master_seeds(model: &ModelSpec) -> Vec<Vec<f64>> {
    match model {
        ModelSpec::QuadraticMaster(_) => [-1.0, -0.5, 0.0, 0.5, 1.0]
            .iter()
            .map(|z1: &f64| vec![1.0, *z1, 0.5 * z1 * z1])
            .collect(),
        _ => vec![vec![0.0], vec![0.5], vec![1.0], vec![2.0]],
    }
}

fn solve_reduced(ctx: &Ctx<'_>) -> Result<Outcome, Failure> {
    let model = ctx.reduced_hamiltonian()?;
    let cfg = ctx.cfg;
    let seeds = cfg.seeds.clone().unwrap_or_else(|| default_master_seeds(&ctx.model));
    let horizon = ctx.horizon();
    let spec = IntegratorSpec::rk4(ctx.dt(1e-3));
    let sol = solve_reduced_master(model, &seeds, horizon, &spec)?;
    let m = model.dim();
    let dynamic: Vec<String> = labels("Z", m).into_iter().chain(labels("U", m)).collect();
    let mut table = Table::new("characteristics", &header(&["traj", "t"], &dynamic));
    let ts = time_grid(horizon, cfg.times.unwrap_or(11));
    for (i, tr) in sol.trajectories.iter().enumerate() {
        for &t in &ts {
            let mut row = vec![i as f64, t];
            row.extend(tr.at(t));
            table.push(&row);
        }
    }
    let fl = labels("f", m);
    let mut bt = Table::new("boundary", &header(&["traj", "t"], &fl));
    for (i, b) in sol.boundary.iter().enumerate() {
        for &t in &ts {
            let mut row = vec![i as f64, t];
            row.extend(b.f.at(t));
            bt.push(&row);
        }
    }
    let tol = cfg.tol.unwrap_or(match ctx.model {
        ModelSpec::QuadraticMaster(_) => 1e-8,
        _ => 1e-10,
    });
    let mut out = Outcome::default();
    out.tables.push(table);
    out.tables.push(bt);
    if seeds.len() > 1 {
        out.note("monotonicity_modulus_t0", sol.monotonicity_modulus(0.0));
    }
    out.checks.push(boundary_invariance_check(model, &seeds, horizon, &spec, tol)?);
    Ok(out)
}

fn default_z0(model: &ModelSpec) -> Vec<f64> {
    match model {
        ModelSpec::QuadraticMaster(_) => vec![1.0, 0.5, 0.5],
        _ => vec![1.0],
    }
}

fn solve_fb(ctx: &Ctx<'_>) -> Result<Outcome, Failure> {
    let model = ctx.reduced_hamiltonian()?;
    let cfg = ctx.cfg;
    let z0 = cfg.z0.clone().unwrap_or_else(|| default_z0(&ctx.model));
    let horizon = ctx.horizon();
    let mut spec = ShootingSpec::new(z0.clone(), ShootDirection::Backward);
    spec.integrator = IntegratorSpec::rk4(ctx.dt(1e-3));
    if let Some(t) = cfg.tol {
        spec.tol = t;
    }
    if let Some(n) = cfg.max_iter {
        spec.max_iter = n;
    }
    let sol = solve_fb_reduced(model, &z0, horizon, &spec)?;
    let m = model.dim();
    let dynamic: Vec<String> = labels("psi", m).into_iter().chain(labels("z", m)).collect();
    let mut table = Table::new("trajectory", &header(&["t"], &dynamic));
    for t in time_grid(horizon, cfg.times.unwrap_or(101)) {
        let mut row = vec![t];
        row.extend(sol.trajectory().at(t));
        table.push(&row);
    }
    let mut out = Outcome::default();
    out.tables.push(table);
    let res = sol.shoot.terminal_residual.max(sol.shoot.initial_residual);
    out.note("iterations", sol.shoot.iterations);
    out.note("converged", sol.converged());
    let margin = if sol.converged() { -res } else { -res.max(f64::MIN_POSITIVE) - spec.tol };
    out.checks.push(condition("fb shooting", margin, None, 1, ctx.seed, spec.tol));
    Ok(out)
}

fn verify_consistency(ctx: &Ctx<'_>) -> Result<Outcome, Failure> {
    let model = ctx.reduced_hamiltonian()?;
    let cfg = ctx.cfg;
    let [lo, hi] = cfg.support.unwrap_or([0.0, 1.0]);
    let particles = cfg.particles.unwrap_or(10_000);
    let dt = ctx.dt(1e-3);
    let horizon = ctx.horizon();
    let ts = time_grid(horizon, cfg.times.unwrap_or(11));
    let tol = cfg.tol.unwrap_or(1e-3);
    let levels = cfg.refinements.unwrap_or(1) + 1;
    let m = model.dim();
    let zl = labels("z", m);
    let mut table = Table::new("moments", &header(&["level", "dt", "particles", "t"], &zl).into_iter().chain(["error"]).collect::<Vec<_>>());
    let mut out = Outcome::default();
    let mut sups = Vec::with_capacity(levels);
    for k in 0..levels {
        let scale = 1usize << k;
        let h = dt / scale as f64;
        let count = particles * scale;
        let m0 = ParticleCloud::uniform_quantiles(lo, hi, count)?;
        let z0 = match &cfg.z0 {
            Some(z) => z.clone(),
            None => moments(&m0, &model.feature())?,
        };
        let mut spec = ShootingSpec::new(z0.clone(), ShootDirection::Backward);
        spec.integrator = IntegratorSpec::rk4(h);
        let sol = solve_fb_reduced(model, &z0, horizon, &spec)?;
        if !sol.converged() {
            out.checks.push(condition(
                "fb shooting",
                -sol.shoot.terminal_residual.max(sol.shoot.initial_residual),
                None,
                1,
                ctx.seed,
                0.0,
            ));
            return Ok(out);
        }
        let mc = verify_moment_consistency(model, &sol, &m0, &ts, &IntegratorSpec::rk4(h), tol)?;
        for (t, e) in ts.iter().zip(&mc.errors) {
            let mut row = vec![k as f64, h, count as f64, *t];
            row.extend(sol.z(*t));
            row.push(*e);
            table.push(&row);
        }
        sups.push(-mc.report.worst_margin);
        if k == 0 {
            out.checks.push(mc.report);
        }
    }
    out.tables.push(table);
    out.note("sup_errors", &sups);
    if levels > 1 {
        let margin = sups.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
        out.checks.push(condition(
            "moment error decreases under refinement",
            margin,
            Some(Witness::new("sup errors", vec![sups.clone()])),
            levels,
            0,
            0.0,
        ));
    }
    Ok(out)
}

fn controls_inputs(ctx: &Ctx<'_>) -> Result<(ControlsModel, ParticleCloud, f64), Failure> {
    match &ctx.model {
        ModelSpec::Controls { model, m0, horizon } => Ok((model.clone(), m0.clone(), *horizon)),
        ModelSpec::PowerControls(m) => Ok((m.full_model()?, m.m0.clone(), m.horizon)),
        _ => Err(ctx.wrong_family()),
    }
}

fn controls_grid(cfg: &ScenarioConfig) -> ControlsGrid {
    let d = ControlsGrid::default();
    ControlsGrid {
        radius: cfg.radius.unwrap_or(d.radius),
        nx: cfg.nx.unwrap_or(d.nx),
        dt: cfg.dt.unwrap_or(d.dt),
        snapshots: cfg.snapshots.unwrap_or(d.snapshots),
    }
}

fn picard_spec(cfg: &ScenarioConfig) -> PicardSpec {
    let d = PicardSpec::default();
    PicardSpec {
        damping: cfg.damping.unwrap_or(d.damping),
        tol: cfg.picard_tol.unwrap_or(d.tol),
        max_iter: cfg.max_iter.unwrap_or(d.max_iter),
    }
}

fn solve_mfgc(ctx: &Ctx<'_>) -> Result<Outcome, Failure> {
    let (model, m0, horizon) = controls_inputs(ctx)?;
    let cfg = ctx.cfg;
    let grid = controls_grid(cfg);
    let picard = picard_spec(cfg);
    let fp = fixed_point_solve(&model, &m0, horizon, &grid, &picard)?;
    let st = &fp.state;
    let mut out = Outcome::default();

    let mut value = Table::new("value", &["t", "x", "u", "du"]);
    for (t, _) in &st.snapshots {
        let Some(k) = st.times.iter().position(|s| (s - t).abs() <= 1e-12) else {
            continue;
        };
        for (i, &x) in st.nodes.iter().enumerate() {
            value.push(&[*t, x, st.u_level(k)[i], st.du_level(k)[i]]);
        }
    }
    let (pl, ql) = (labels("phi", st.phi_dim), labels("phi_particles", st.phi_dim));
    let dynamic: Vec<String> = pl.into_iter().chain(ql).collect();
    let mut coupling = Table::new("coupling", &header(&["t"], &dynamic).into_iter().chain(["moment"]).collect::<Vec<_>>());
    for k in 0..st.levels() {
        let mut row = vec![st.times[k]];
        row.extend(&st.phi[k]);
        row.extend(&st.phi_particles[k]);
        row.push(st.moments[k]);
        coupling.push(&row);
    }
    let mut gaps = Table::new("picard", &["iteration", "gap"]);
    for (i, g) in fp.gaps.iter().enumerate() {
        gaps.push(&[i as f64, *g]);
    }
    out.tables.extend([value, coupling, gaps]);
    out.note("updates", fp.updates());
    out.note("converged", fp.converged);
    out.note("gamma", fp.gamma);
    out.note("diagnostics", &st.diagnostics);

    let last = fp.gaps.last().copied().unwrap_or(f64::INFINITY);
    out.checks.push(condition(
        "picard converged",
        picard.tol - last,
        Some(Witness::new("gaps", vec![fp.gaps.clone()])),
        fp.gaps.len(),
        0,
        0.0,
    ));
    if let Some(limit) = cfg.max_updates {
        out.checks.push(condition(
            "picard updates within limit",
            limit as f64 - fp.updates() as f64,
            None,
            1,
            0,
            0.0,
        ));
    }
    out.checks.push(equivalence_check(st, cfg.tol.unwrap_or(5e-3)));
    Ok(out)
}

/// `min(v - lower, upper - v)` over `psi` and `z` along the path.
fn band_margin(band: &Band, states: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    let mut worst = (f64::INFINITY, 0.0);
    for (t, v) in states {
        let m = (v - band.lower).min(band.upper - v);
        if m < worst.0 {
            worst = (m, t);
        }
    }
    worst
}

/// `g0 / (1 + g0 (T - t)/2)` applies when `p = 2`, `a` vanishes and `g` is
/// constant; probed on a few points of the coupling and moment ranges.
fn riccati_reference(model: &PowerControlsModel) -> Option<f64> {
    let probes = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0];
    let g0 = model.g.eval(0.0);
    let flat_a = probes.iter().all(|x| model.a.eval(*x) == 0.0);
    let flat_g = probes.iter().all(|x| model.g.eval(*x) == g0);
    ((model.p - 2.0).abs() < 1e-15 && flat_a && flat_g).then_some(g0)
}

fn solve_mfgc_reduced(ctx: &Ctx<'_>) -> Result<Outcome, Failure> {
    let model = ctx.power_controls()?;
    let cfg = ctx.cfg;
    let mut spec = default_shooting(model);
    if let Some(dt) = cfg.dt {
        spec.integrator = IntegratorSpec::rk4(dt);
    }
    let rc = solve_reduced_controls(model, &spec)?;
    let mut out = Outcome::default();
    let mut table = Table::new("reduced", &["t", "psi", "z", "phi"]);
    for (i, t) in rc.times().iter().enumerate() {
        let s = rc.state(i);
        table.push(&[*t, s[0], s[1], s[2]]);
    }
    out.tables.push(table);
    out.note("converged", rc.converged());
    out.note("z0", model.z0());
    out.note("alpha0", model.alpha0());
    out.note("psi0", rc.psi(0.0));
    out.note("band", rc.band);

    let res = rc.shoot.terminal_residual.max(rc.shoot.initial_residual);
    out.checks.push(condition("reduced shooting", -res, None, 1, 0, spec.tol));
    if let Some(band) = &rc.band {
        let states = (0..rc.times().len()).flat_map(|i| {
            let s = rc.state(i);
            [(rc.times()[i], s[0]), (rc.times()[i], s[1])]
        });
        let (margin, t) = band_margin(band, states);
        out.checks.push(condition(
            "a priori band",
            margin,
            Some(Witness::new("t, c0, C0", vec![vec![t, band.lower, band.upper]])),
            rc.times().len(),
            0,
            1e-9 * (1.0 + band.upper),
        ));
    }
    if let Some(g0) = riccati_reference(model) {
        let horizon = model.horizon;
        let (mut worst, mut at) = (0.0, 0.0);
        for (i, t) in rc.times().iter().enumerate() {
            let e = (rc.state(i)[0] - g0 / (1.0 + 0.5 * g0 * (horizon - t))).abs();
            if e > worst {
                (worst, at) = (e, *t);
            }
        }
        out.note("closed_form_error", worst);
        out.checks.push(condition(
            "riccati closed form",
            -worst,
            Some(Witness::new("t", vec![vec![at]])),
            rc.times().len(),
            0,
            cfg.tol.unwrap_or(1e-8),
        ));
    }
    if cfg.compare_full.unwrap_or(false) {
        let full = model.full_model()?;
        let fp = fixed_point_solve(&full, &model.m0, model.horizon, &controls_grid(cfg), &picard_spec(cfg))?;
        out.checks.push(compare_reduced_full(model, &rc, &fp.state, 5e-3));
    }
    Ok(out)
}

fn solve_pq_task(ctx: &Ctx<'_>) -> Result<Outcome, Failure> {
    let model = ctx.power_controls()?;
    let cfg = ctx.cfg;
    let count = cfg.multistarts.unwrap_or(5);
    let mut out = Outcome::default();
    let guesses = match a_priori_band(model) {
        Ok(band) => {
            out.note("guess_source", "band");
            multistart_guesses(&band, count)
        }
        Err(e) => {
            // Without a band the starts spread around the terminal datum.
            out.note("guess_source", format!("terminal datum ({e})"));
            let g = model.g.eval(model.z0()).abs().max(1e-3);
            multistart_guesses(
                &Band {
                    lower: g,
                    upper: g,
                    psi: (g, g),
                    z: (g, g),
                    a_bound: f64::NAN,
                },
                count,
            )
        }
    };
    let mut template = default_shooting(model);
    if let Some(dt) = cfg.dt {
        template.integrator = IntegratorSpec::rk4(dt);
    }
    let study = solve_pq(model, &guesses, &template)?;
    let mut table = Table::new("runs", &["run", "guess", "converged", "t", "psi", "z", "phi", "trace", "det"]);
    for (r, run) in study.runs.iter().enumerate() {
        for i in 0..run.times.len() {
            table.push(&[
                r as f64,
                run.guess,
                if run.converged { 1.0 } else { 0.0 },
                run.times[i],
                run.psi[i],
                run.z[i],
                run.phi[i],
                run.trace[i],
                run.det[i],
            ]);
        }
    }
    out.tables.push(table);
    let verdict = serde_json::to_value(study.verdict).unwrap_or_default();
    let label = verdict.as_str().unwrap_or_default().to_string();
    out.note("verdict", &verdict);
    out.note("reasons", &study.reasons);
    out.note("guesses", &guesses);
    out.note("max_pairwise", study.max_pairwise);
    out.note("band", study.band);
    out.note("delta_threshold", study.delta_threshold);
    out.note("delta_within_threshold", study.delta_within_threshold);
    out.note("identity_defect", study.runs.iter().map(|r| r.identity_defect).fold(0.0, f64::max));
    let pass = study.verdict == PqVerdict::UniqueConsistent;
    out.checks.push(CheckReport {
        name: "p=q uniqueness criterion".into(),
        pass,
        // The spread margin when it decides the verdict, otherwise -inf.
        worst_margin: if pass || !study.agree && study.runs.iter().any(|r| r.converged) {
            PQ_AGREEMENT - study.max_pairwise
        } else {
            f64::NEG_INFINITY
        },
        witness: Some(Witness::new(label, vec![guesses.clone()])),
        samples: study.runs.len(),
        seed: 0,
        tolerance: 0.0,
        failed: if pass { Vec::new() } else { study.reasons.clone() },
        indeterminate: false,
    });
    Ok(out)
}

fn z_grid() -> Vec<f64> {
    let (lo, hi, n) = DEFAULT_Z_GRID;
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn check_abc_task(ctx: &Ctx<'_>) -> Result<Outcome, Failure> {
    let ModelSpec::PowerMaster(model) = &ctx.model else {
        return Err(ctx.wrong_family());
    };
    let mut out = Outcome::default();
    let abc = check_abc(model, &z_grid())?;
    if let Some(w) = &abc.witness {
        out.note("abc_witness", &w.label);
    }
    out.checks.push(abc);
    out.checks.push(check_h_monotone(model, &ctx.sampling())?);
    Ok(out)
}

fn check_monotone(ctx: &Ctx<'_>) -> Result<Outcome, Failure> {
    let sampling = ctx.sampling();
    let mut out = Outcome::default();
    match &ctx.model {
        ModelSpec::Finite { model, reduction } => {
            out.checks.push(check_pair_monotone(model, &sampling, false)?);
            if let (Some(l), true) = (reduction, ctx.cfg.reduced.unwrap_or(true)) {
                let pr = check_pair_reduction(model, l, &sampling)?;
                out.checks.push(pr.report);
                if let Some(r) = &pr.reduced {
                    out.checks.push(check_pair_monotone(r, &sampling, false)?);
                }
            }
        }
        ModelSpec::PowerMaster(m) => out.checks.push(check_h_monotone(m, &sampling)?),
        ModelSpec::QuadraticMaster(m) => {
            let chain = quadratic_chain(m, &sampling)?;
            out.checks.extend([chain.monotone, chain.half_form, chain.three_quarter_form]);
        }
        ModelSpec::Noise(m) => out.checks.push(check_pair_monotone(&m.core, &sampling, false)?),
        _ => return Err(ctx.wrong_family()),
    }
    let mut table = Table::new("checks", &["check", "pass", "worst_margin", "samples"]);
    for c in &out.checks {
        table.push_cells(vec![
            c.name.clone(),
            c.pass.to_string(),
            mfred_core::ode::fmt_f64(c.worst_margin),
            c.samples.to_string(),
        ]);
    }
    out.tables.push(table);
    Ok(out)
}

fn noise_solve(ctx: &Ctx<'_>) -> Result<Outcome, Failure> {
    let model = ctx.noise()?;
    let sol = solve_noisy(&model, model.lambda)?;
    let n = sol.dim;
    let dynamic: Vec<String> = labels("x", n).into_iter().chain(labels("U", n)).collect();
    let mut table = Table::new("solution", &header(&["t"], &dynamic).into_iter().chain(["flagged"]).collect::<Vec<_>>());
    for (k, t) in sol.times.iter().enumerate() {
        for node in 0..sol.node_count() {
            let mut row = vec![*t];
            row.extend(sol.node(node));
            row.extend(sol.value(k, node));
            row.push(if sol.flagged[node] { 1.0 } else { 0.0 });
            table.push(&row);
        }
    }
    let mut out = Outcome::default();
    out.tables.push(table);
    out.note("lambda", sol.lambda);
    out.note("lipschitz", sol.lipschitz);
    out.note("flagged_nodes", sol.flagged.iter().filter(|f| **f).count());
    out.note("nodes", sol.node_count());
    Ok(out)
}

fn noise_expansion(ctx: &Ctx<'_>) -> Result<Outcome, Failure> {
    let model = ctx.noise()?;
    let eps = ctx.cfg.eps.clone().unwrap_or_else(|| vec![0.02, 0.04, 0.08, 0.16, 0.32]);
    let study = expansion_study(&model, &eps)?;
    let mut table = Table::new("expansion", &["eps", "sup_error"]);
    for (e, err) in study.eps.iter().zip(&study.errors) {
        table.push(&[*e, *err]);
    }
    let mut out = Outcome::default();
    out.tables.push(table);
    out.note("slope", study.slope);
    out.checks.push(study.report);
    Ok(out)
}

fn noise_stability(ctx: &Ctx<'_>) -> Result<Outcome, Failure> {
    let model = ctx.noise()?;
    let mags = ctx.cfg.forcing.clone().unwrap_or_else(|| vec![0.01, 0.02, 0.04]);
    let base = solve_noisy(&model, model.lambda)?;
    let mut table = Table::new("stability", &["magnitude", "gap", "lipschitz", "bound", "gap_over_bound"]);
    let mut out = Outcome::default();
    for c in mags {
        let mut v = vec![0.0; model.core.dim];
        v[0] = c;
        let forcing = Forcing::Constant(v);
        let pert = solve_perturbed(&model, model.lambda, &forcing)?;
        let rep = stability_from(&model, &base, &pert, &forcing)?;
        table.push(&[c, rep.gap, rep.lipschitz, rep.bound, rep.gap / rep.bound]);
        let mut check = rep.report;
        check.name = format!("stability bound (|R| = {c})");
        out.checks.push(check);
    }
    out.tables.push(table);
    out.note("lipschitz", base.lipschitz);
    Ok(out)
}

fn convergence(ctx: &Ctx<'_>) -> Result<Outcome, Failure> {
    let cfg = ctx.cfg;
    let levels = cfg.refinements.unwrap_or(2) + 1;
    let mut out = Outcome::default();
    match &ctx.model {
        ModelSpec::Finite { model, .. } => {
            let hw = cfg.half_width.unwrap_or(1.0);
            let horizon = ctx.horizon();
            let points = box_grid(-hw, hw, cfg.grid_points.unwrap_or(3), model.dim);
            let ts = [0.5 * horizon, horizon];
            let newton = NewtonSpec::default();
            let eval = |h: f64| u_values(model, &points, &ts, h, &newton);
            let dt = ctx.dt(0.05);
            let steps: Vec<f64> = (0..levels).map(|k| dt / 2f64.powi(k as i32)).collect();
            let reference = eval(steps[levels - 1] / 8.0)?;
            let mut errors = Vec::new();
            let mut table = Table::new("convergence", &["dt", "error"]);
            for &h in &steps {
                let e = sup_gap(&eval(h)?, &reference);
                table.push(&[h, e]);
                errors.push(e);
            }
            out.tables.push(table);
            let order = mfred_core::finite::log_log_slope(&steps, &errors);
            out.note("order", order);
            let min_order = cfg.min_order.unwrap_or(3.5);
            out.checks.push(condition(
                "rk4 observed order",
                order.map_or(f64::NEG_INFINITY, |o| o - min_order),
                Some(Witness::new("dt-error", vec![steps.clone(), errors])),
                levels,
                0,
                0.0,
            ));
        }
        ModelSpec::Noise(_) => {
            let base = ctx.noise()?;
            let nodes = cfg.nodes.unwrap_or(41);
            let dt = cfg.dt.unwrap_or(0.02);
            let grids: Vec<GridSpec> = (0..levels)
                .map(|k| GridSpec {
                    nodes_per_axis: (nodes - 1) * (1 << k) + 1,
                    dt: dt / (1 << k) as f64,
                    snapshots: cfg.snapshots.unwrap_or(5),
                    ..base.grid
                })
                .collect();
            let study = lambda0_consistency(&base, &grids, cfg.radius.unwrap_or(2.0), cfg.min_order.unwrap_or(0.9))?;
            let mut table = Table::new("consistency", &["dt", "spacing", "error"]);
            for i in 0..study.dts.len() {
                table.push(&[study.dts[i], study.spacings[i], study.errors[i]]);
            }
            out.tables.push(table);
            out.note("order", study.order);
            out.checks.push(study.report);
        }
        _ => return Err(ctx.wrong_family()),
    }
    Ok(out)
}
