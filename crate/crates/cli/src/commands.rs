use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Serialize;
use softscatter::homogenized::{CapacitanceDensityField, HomogenizedSolver};
use softscatter::inverse::{density_relative_l2, reconstruct_density, AmplitudeTable, NuStatus, Reconstruction, ReconstructionStatus};
use softscatter::io;
use softscatter::manybody::{regime_check, ManyBodySystem, ParticleSet, RegimeReport};
use softscatter::medium::BackgroundMedium;
use softscatter::planner::{plan_from_density_with, verify_plan, ParticlePlan, PlanVerification};
use softscatter::Error;

use crate::config::RunConfig;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const PARSE: i32 = 1;
    pub const REGIME: i32 = 2;
    pub const SOLVER: i32 = 3;
    pub const INVERSION: i32 = 4;
    pub const PACKING: i32 = 5;
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub stage: Option<&'static str>,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.stage {
            Some(s) => write!(f, "[{s}] {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Regime(_) => exit::REGIME,
            Error::Divergence { .. } | Error::IllConditioned { .. } | Error::Singular(_) | Error::InsufficientQuadrature { .. } => exit::SOLVER,
            Error::Continuation(_) => exit::INVERSION,
            Error::Packing { .. } => exit::PACKING,
            Error::Domain(_) | Error::Parse { .. } | Error::Format(_) | Error::Io(_) | Error::Json(_) => exit::PARSE,
        };
        CliError { code, stage: None, message: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn tagged<T>(stage: &'static str, r: CliResult<T>) -> CliResult<T> {
    r.map_err(|mut e| {
        e.stage.get_or_insert(stage);
        e
    })
}

pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub force: bool,
}

impl Context {
    pub fn new(config: RunConfig, out: PathBuf, force: bool) -> CliResult<Self> {
        fs::create_dir_all(&out).map_err(Error::from)?;
        Ok(Self { config, out, force })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn log(&self, msg: &str) {
        eprintln!("softscatter: {msg}");
    }
}

fn table_for(medium: &BackgroundMedium, config: &RunConfig, values: Vec<Complex64>) -> CliResult<AmplitudeTable> {
    Ok(AmplitudeTable::new(medium.k(), config.outgoing()?, config.incoming()?, values)?)
}

/// Columns `cos(α′·α), Re, Im, |A|` for the first incoming node.
fn amplitude_rows(table: &AmplitudeTable) -> Vec<Vec<f64>> {
    let a = table.incoming().nodes()[0];
    let mut rows: Vec<Vec<f64>> = table
        .outgoing()
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let v = table.value(i, 0);
            vec![o[0] * a[0] + o[1] * a[1] + o[2] * a[2], v.re, v.im, v.norm()]
        })
        .collect();
    rows.sort_by(|x, y| x[0].total_cmp(&y[0]));
    rows
}

fn write_amplitude_plot(path: &Path, table: &AmplitudeTable) -> CliResult<()> {
    Ok(io::write_columns(path, &["cos_angle", "re", "im", "abs"], &amplitude_rows(table))?)
}

#[derive(Debug, Serialize)]
struct ForwardReport {
    format_version: u32,
    command: &'static str,
    particles: usize,
    regime: RegimeReport,
    forced: bool,
    amplitude: String,
}

pub fn particle_table(medium: &BackgroundMedium, config: &RunConfig, particles: &ParticleSet) -> CliResult<AmplitudeTable> {
    let sys = ManyBodySystem::new(medium, particles)?;
    let values = sys.amplitude_table(config.outgoing()?.nodes(), config.incoming()?.nodes())?;
    table_for(medium, config, values)
}

pub fn forward_particles(ctx: &Context) -> CliResult<()> {
    let c = &ctx.config;
    let medium = c.medium()?;
    let path = c.paths.particles.as_ref().ok_or_else(|| Error::Format("config has no paths.particles".into()))?;
    let (particles, _) = io::read_particles(&c.resolve(path))?;
    let regime = regime_check(&medium, &particles);
    if !regime.valid && !ctx.force {
        io::write_json(&ctx.path("regime.json"), &regime)?;
        return Err(CliError {
            code: exit::REGIME,
            stage: None,
            message: format!(
                "small-particle regime violated: k0·a = {:.3e} (size ok: {}), d/a = {:.3} (distance ok: {}); pass --force to run anyway",
                regime.k0a, regime.size_ok, regime.d_over_a, regime.distance_ok
            ),
        });
    }
    ctx.log(&format!("solving for {} particles", particles.len()));
    let sys = ManyBodySystem::new(&medium, &particles)?;
    let values = sys.amplitude_table(c.outgoing()?.nodes(), c.incoming()?.nodes())?;
    let table = table_for(&medium, c, values)?;
    io::write_amplitude_table(&ctx.path("amplitude.json"), &table)?;
    write_amplitude_plot(&ctx.path("amplitude_vs_angle.txt"), &table)?;
    if let Some(p) = &c.probe {
        let charges = sys.solve(&p.incoming)?;
        let mut rows = Vec::with_capacity(p.samples);
        for i in 0..p.samples {
            let t = i as f64 / (p.samples - 1) as f64;
            let x = [0, 1, 2].map(|a| p.start[a] + t * (p.end[a] - p.start[a]));
            let u = sys.effective_field(&charges, &x)?;
            rows.push(vec![t, x[0], x[1], x[2], u.re, u.im]);
        }
        io::write_columns(&ctx.path("field_probe.txt"), &["t", "x", "y", "z", "re", "im"], &rows)?;
    }
    let report = ForwardReport {
        format_version: io::FORMAT_VERSION,
        command: "forward-particles",
        particles: particles.len(),
        regime,
        forced: ctx.force,
        amplitude: "amplitude.json".into(),
    };
    io::write_json(&ctx.path("report.json"), &report)?;
    Ok(())
}

pub fn medium_table(medium: &BackgroundMedium, config: &RunConfig, density: &CapacitanceDensityField) -> CliResult<AmplitudeTable> {
    let solver = HomogenizedSolver::new(medium, density)?;
    let values = solver.amplitude_table(config.outgoing()?.nodes(), config.incoming()?.nodes())?;
    table_for(medium, config, values)
}

pub fn forward_medium(ctx: &Context) -> CliResult<()> {
    let c = &ctx.config;
    let medium = c.medium()?;
    let density = c.density(&medium)?;
    ctx.log(&format!("homogenized solve on {} grid points", density.values().len()));
    let table = medium_table(&medium, c, &density)?;
    io::write_amplitude_table(&ctx.path("amplitude.json"), &table)?;
    write_amplitude_plot(&ctx.path("amplitude_vs_angle.txt"), &table)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct InversionReport<'a> {
    format_version: u32,
    nodes: usize,
    accepted_fraction: f64,
    failed_fraction: f64,
    clamped_fraction: f64,
    status: ReconstructionStatus,
    diagnostics: &'a [softscatter::inverse::XiDiagnostic],
}

fn status_code(s: NuStatus) -> f64 {
    match s {
        NuStatus::Accepted => 0.0,
        NuStatus::Marginal => 1.0,
        NuStatus::Failed => 2.0,
    }
}

fn run_inversion(ctx: &Context, medium: &BackgroundMedium, table: &AmplitudeTable) -> CliResult<(Reconstruction, bool)> {
    let c = &ctx.config;
    let xi = c.xi_grid(medium)?;
    ctx.log(&format!("inverting on {} frequency nodes", xi.nodes.len()));
    let rec = reconstruct_density(table, medium, &xi, &c.reconstruction_params(medium))?;
    io::write_density(&ctx.path("density.json"), &rec.density)?;
    let report = InversionReport {
        format_version: io::FORMAT_VERSION,
        nodes: rec.diagnostics.len(),
        accepted_fraction: rec.accepted_fraction(),
        failed_fraction: rec.failed_fraction(),
        clamped_fraction: rec.clamped_fraction,
        status: rec.status,
        diagnostics: &rec.diagnostics,
    };
    io::write_json(&ctx.path("diagnostics.json"), &report)?;
    let rows: Vec<Vec<f64>> = rec
        .diagnostics
        .iter()
        .map(|d| {
            let n = (d.xi[0] * d.xi[0] + d.xi[1] * d.xi[1] + d.xi[2] * d.xi[2]).sqrt();
            vec![n, d.theta_magnitude, d.functional, d.d_estimate, status_code(d.status), d.estimate.re, d.estimate.im]
        })
        .collect();
    io::write_columns(&ctx.path("error_vs_theta.txt"), &["xi_norm", "theta_norm", "functional", "d_estimate", "status", "est_re", "est_im"], &rows)?;
    let ok = rec.failed_fraction() <= c.inversion.max_failed_fraction && rec.status == ReconstructionStatus::Ok;
    Ok((rec, ok))
}

fn inversion_failure(rec: &Reconstruction) -> CliError {
    CliError {
        code: exit::INVERSION,
        stage: None,
        message: format!(
            "inversion not accepted: {:.1}% of frequency nodes failed, clamped mass fraction {:.3}, status {:?}",
            100.0 * rec.failed_fraction(),
            rec.clamped_fraction,
            rec.status
        ),
    }
}

pub fn invert(ctx: &Context) -> CliResult<()> {
    let c = &ctx.config;
    let medium = c.medium()?;
    let path = c.paths.amplitude.as_ref().ok_or_else(|| Error::Format("config has no paths.amplitude".into()))?;
    let table = io::read_amplitude_table(&c.resolve(path))?;
    let (rec, ok) = run_inversion(ctx, &medium, &table)?;
    if !ok {
        return Err(inversion_failure(&rec));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct PlanReport {
    format_version: u32,
    count: usize,
    expected_count: f64,
    target_count: usize,
    oversampling: f64,
    regime: RegimeReport,
    verification: Option<PlanVerification>,
}

fn make_plan(ctx: &Context, medium: &BackgroundMedium, density: &CapacitanceDensityField) -> CliResult<ParticlePlan> {
    let c = &ctx.config;
    let p = c.planner()?;
    let plan = plan_from_density_with(medium, density, p.radius, p.seed, &c.plan_options()?)?;
    ctx.log(&format!("planned {} particles (expected {:.1})", plan.count(), plan.expected_count));
    Ok(plan)
}

fn write_plan_report(ctx: &Context, plan: &ParticlePlan, verification: Option<PlanVerification>) -> CliResult<()> {
    let report = PlanReport {
        format_version: io::FORMAT_VERSION,
        count: plan.count(),
        expected_count: plan.expected_count,
        target_count: plan.target_count,
        oversampling: plan.oversampling,
        regime: plan.regime.clone(),
        verification,
    };
    Ok(io::write_json(&ctx.path("plan_report.json"), &report)?)
}

pub fn plan(ctx: &Context) -> CliResult<()> {
    let c = &ctx.config;
    let medium = c.medium()?;
    let density = c.density(&medium)?;
    let plan = make_plan(ctx, &medium, &density)?;
    let reference = c.paths.density.as_ref().map(|p| p.display().to_string());
    io::write_plan(&ctx.path("plan.jsonl"), &plan, reference)?;
    let verification = match &c.paths.target_amplitude {
        Some(t) => Some(verify_plan(&medium, &plan, &io::read_amplitude_table(&c.resolve(t))?)?),
        None => None,
    };
    write_plan_report(ctx, &plan, verification)
}

#[derive(Debug, Serialize)]
struct RoundtripSummary {
    format_version: u32,
    seed: u64,
    target_total: f64,
    reconstructed_total: f64,
    density_relative_l2: f64,
    inversion_accepted_fraction: f64,
    inversion_failed_fraction: f64,
    inversion_ok: bool,
    plan_count: usize,
    plan_expected_count: f64,
    /// Plan from the reconstructed density against the forward table.
    plan_vs_target_l2: f64,
    /// Plan from the true density against the forward table.
    true_plan_vs_target_l2: f64,
}

pub fn roundtrip(ctx: &Context) -> CliResult<()> {
    let c = &ctx.config;
    let medium = c.medium()?;
    let truth = tagged("forward-medium", c.density(&medium).map_err(CliError::from))?;
    ctx.log("stage forward-medium");
    let target = tagged("forward-medium", medium_table(&medium, c, &truth))?;
    io::write_amplitude_table(&ctx.path("target_amplitude.json"), &target)?;

    ctx.log("stage invert");
    let (rec, inversion_ok) = tagged("invert", run_inversion(ctx, &medium, &target))?;
    let grid = rec.density.grid().clone();
    let truth_on_grid = CapacitanceDensityField::new(grid.clone(), grid.points().iter().map(|x| truth.value_at(x)).collect(), rec.density.b0())
        .map_err(CliError::from)?;
    let density_l2 = density_relative_l2(&rec.density, &truth_on_grid).map_err(CliError::from)?;
    let h = grid.spacing();
    let slice: Vec<Vec<f64>> = grid
        .points()
        .iter()
        .zip(truth_on_grid.values().iter().zip(rec.density.values()))
        .filter(|(x, _)| x[2].abs() < 0.5 * h)
        .map(|(x, (t, r))| vec![x[0], x[1], *t, *r])
        .collect();
    io::write_columns(&ctx.path("density_slice.txt"), &["x", "y", "true", "recovered"], &slice)?;

    ctx.log("stage plan");
    let plan = tagged("plan", make_plan(ctx, &medium, &rec.density))?;
    io::write_plan(&ctx.path("plan.jsonl"), &plan, Some("density.json".into()))?;
    let true_plan = tagged("plan", make_plan(ctx, &medium, &truth))?;

    ctx.log("stage forward-particles");
    let verification = tagged("forward-particles", verify_plan(&medium, &plan, &target).map_err(CliError::from))?;
    let true_verification = tagged("forward-particles", verify_plan(&medium, &true_plan, &target).map_err(CliError::from))?;
    let plan_table = tagged("forward-particles", particle_table(&medium, c, &plan.particles))?;
    let mut rows = amplitude_rows(&target);
    for (row, p) in rows.iter_mut().zip(amplitude_rows(&plan_table)) {
        row.extend_from_slice(&p[1..]);
    }
    io::write_columns(
        &ctx.path("amplitude_vs_angle.txt"),
        &["cos_angle", "target_re", "target_im", "target_abs", "plan_re", "plan_im", "plan_abs"],
        &rows,
    )?;
    write_plan_report(ctx, &plan, Some(verification.clone()))?;

    let summary = RoundtripSummary {
        format_version: io::FORMAT_VERSION,
        seed: c.planner()?.seed,
        target_total: truth.total(),
        reconstructed_total: rec.density.total(),
        density_relative_l2: density_l2,
        inversion_accepted_fraction: rec.accepted_fraction(),
        inversion_failed_fraction: rec.failed_fraction(),
        inversion_ok,
        plan_count: plan.count(),
        plan_expected_count: plan.expected_count,
        plan_vs_target_l2: verification.relative_l2,
        true_plan_vs_target_l2: true_verification.relative_l2,
    };
    io::write_json(&ctx.path("summary.json"), &summary)?;
    Ok(())
}
