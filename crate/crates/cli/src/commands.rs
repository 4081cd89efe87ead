//! Subcommand implementations.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;
use surfns::cache::load_or_build;
use surfns::dynamics::{diagnostics, enstrophy_constant, GalerkinState, GalerkinSystem, InitialCondition, MonitorRecord, Snapshot};
use surfns::estimates::{
    appendix_batch, bilinear_fit, bilinear_sweep, fourier_trick_batch, trilinear_decay, write_appendix_csv,
    write_bilinear_csv, write_fourier_csv, write_trilinear_csv, BilinearConfig, TrilinearConfig,
};
use surfns::operators::velocity_energy;
use surfns::spectrum::{build_spectrum, ShellKey, SpectrumTable};
use surfns::transform::Transform;
use surfns::trapping::{
    decay_fit, domination_sweep, e_star, envelope_state, margins_from_norms, power_law_state, ConvectiveEngine,
    DominationReport, TrappingEnvelope,
};
use surfns::triads::TriadTensor;
use surfns::{Error, Result};

use crate::config::{format_shells, Config, EngineChoice, InitialSpec, TrapSection};

/// Environment variable overriding the default cache directory.
pub const CACHE_ENV: &str = "SURFNS_CACHE_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Spectrum,
    Run,
    Trap,
    Estimates,
    Export,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Run => "run",
            Command::Trap => "trap",
            Command::Estimates => "estimates",
            Command::Export => "export",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Options {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub cache: Option<PathBuf>,
    pub quiet: bool,
}

/// Stable process exit codes.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Domain(_) | Error::Dimension { .. } | Error::InsufficientData(_) | Error::Assembly(_) => 2,
        Error::BlowUp { .. } => 3,
        Error::Io(_) | Error::Format(_) | Error::Json(_) => 4,
    }
}

/// Exclusive ownership of an output directory for one invocation.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(OutputLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Io(std::io::Error::new(
                e.kind(),
                format!("{} is locked by another invocation (remove {} if stale)", dir.display(), path.display()),
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

struct Ctx {
    cfg: Config,
    out: PathBuf,
    cache: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn table(&self) -> Result<SpectrumTable> {
        build_spectrum(self.cfg.manifold)
    }

    fn triads(&self, table: &SpectrumTable) -> Result<TriadTensor> {
        let outcome = load_or_build(&self.cache, table)?;
        self.say(format!(
            "triads: {} ({})",
            outcome.path.display(),
            if outcome.hit { "cache hit" } else { "assembled" }
        ));
        Ok(outcome.tensor)
    }
}

/// Resolve the cache directory: flag, then environment, then `<out>/cache`.
pub fn cache_dir(opts: &Options) -> PathBuf {
    if let Some(c) = &opts.cache {
        return c.clone();
    }
    match std::env::var_os(CACHE_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => opts.out.join("cache"),
    }
}

/// Parse the configuration, lock the output directory, write the manifest and dispatch.
pub fn execute(cmd: Command, opts: &Options) -> Result<()> {
    let text = fs::read_to_string(&opts.config)?;
    let base = opts.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let cfg = Config::parse(&text, &base, opts.seed)?;
    let _lock = OutputLock::acquire(&opts.out)?;
    write_manifest(cmd, opts, &cfg)?;
    let ctx = Ctx {
        cfg,
        out: opts.out.clone(),
        cache: cache_dir(opts),
        quiet: opts.quiet,
    };
    match cmd {
        Command::Spectrum => cmd_spectrum(&ctx),
        Command::Run => cmd_run(&ctx),
        Command::Trap => cmd_trap(&ctx),
        Command::Estimates => cmd_estimates(&ctx),
        Command::Export => cmd_export(&ctx),
    }
}

fn write_manifest(cmd: Command, opts: &Options, cfg: &Config) -> Result<()> {
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let abs = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let mut text = format!(
        "[manifest]\ncommand = {}\nconfig = {}\nout = {}\nseed = {}\nversion = {}\ncreated_unix = {created}\n\n",
        cmd.name(),
        abs(&opts.config).display(),
        abs(&opts.out).display(),
        cfg.seed,
        env!("CARGO_PKG_VERSION"),
    );
    text.push_str(&cfg.to_text());
    let mut f = File::create(opts.out.join("manifest.txt"))?;
    f.write_all(text.as_bytes())?;
    f.sync_all()?;
    Ok(())
}

fn cmd_spectrum(ctx: &Ctx) -> Result<()> {
    let table = ctx.table()?;
    let tensor = ctx.triads(&table)?;
    let summary = json!({
        "kind": table.kind().name(),
        "variant": table.config().variant.name(),
        "cutoff": table.config().cutoff,
        "lambda1": table.lambda1(),
        "modes": table.len(),
        "shells": table.shells().len(),
        "quad_degree": tensor.quad_degree(),
        "product_entries": tensor.product_entries().len(),
        "advection_entries": tensor.advection_entries().len(),
        "harmonic_entries": tensor.harmonic_entries().len(),
    });
    ctx.write_json("spectrum.json", &summary)?;
    ctx.say(format!(
        "{} cutoff {}: λ₁ = {}, {} modes in {} shells, {} triad nonzeros",
        table.kind().name(),
        table.config().cutoff,
        table.lambda1(),
        table.len(),
        table.shells().len(),
        tensor.nonzero_count()
    ));
    Ok(())
}

fn build_initial(ctx: &Ctx, table: &SpectrumTable, shells: &[ShellKey], envelope: Option<&TrappingEnvelope>) -> Result<GalerkinState> {
    let spec = ctx
        .cfg
        .initial
        .as_ref()
        .ok_or_else(|| Error::Config("missing [initial] section".into()))?;
    let ic = |ic: InitialCondition| ic.build(table, shells);
    match spec {
        InitialSpec::Zero => ic(InitialCondition::Zero),
        InitialSpec::Mode { mode, amplitude } => ic(InitialCondition::Mode {
            mode: *mode,
            amplitude: *amplitude,
        }),
        InitialSpec::Random {
            seed,
            amplitude,
            slope,
            harmonic_amplitude,
        } => ic(InitialCondition::Random {
            seed: *seed,
            amplitude: *amplitude,
            slope: *slope,
            harmonic_amplitude: *harmonic_amplitude,
        }),
        InitialSpec::TaylorGreen { amplitude } => ic(InitialCondition::TaylorGreen { amplitude: *amplitude }),
        InitialSpec::PowerLaw { seed, amplitude, r } => power_law_state(table, shells, *amplitude, *r, *seed),
        InitialSpec::Envelope { seed } => {
            let env = envelope.ok_or_else(|| {
                Error::Config("envelope initial data needs [trap] with an explicit e_star".into())
            })?;
            envelope_state(table, shells, env, *seed)
        }
        InitialSpec::Snapshot { path } => {
            let snap: Snapshot = serde_json::from_str(&fs::read_to_string(path)?)?;
            let mut s = GalerkinState::from_snapshot(table, &snap)?;
            if s.shells != shells {
                return Err(Error::Config("snapshot shells differ from the configured selection".into()));
            }
            s.t = 0.0;
            Ok(s)
        }
    }
}

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_trajectory(ctx: &Ctx, records: &[MonitorRecord]) -> Result<()> {
    let mut w = ctx.create("trajectory.csv")?;
    let mut header = String::from("t,energy,enstrophy");
    if let Some(r) = records.first() {
        for (k, _) in &r.shell_norms {
            header.push_str(&format!(",shell:{}", k.0));
        }
    }
    header.push_str(",energy_residual,enstrophy_residual");
    writeln!(w, "{header}")?;
    for r in records {
        let mut line = format!("{},{},{}", f(r.t), f(r.energy), f(r.enstrophy));
        for (_, n) in &r.shell_norms {
            line.push(',');
            line.push_str(&f(*n));
        }
        line.push_str(&format!(",{},{}", f(r.energy_residual), f(r.enstrophy_residual)));
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RunSummary {
    steps: u64,
    records: usize,
    t_final: f64,
    enstrophy_constant: f64,
    max_energy_residual: f64,
    max_enstrophy_residual: f64,
    blow_up: Option<String>,
}

/// Run the configured dynamics, writing trajectory, snapshot and summary.
fn run_dynamics(ctx: &Ctx, table: &SpectrumTable, initial: &GalerkinState, triads: &TriadTensor) -> Result<Vec<MonitorRecord>> {
    let run = ctx.cfg.run.as_ref().ok_or_else(|| Error::Config("missing [run] section".into()))?;
    let sys = GalerkinSystem::new(table, triads, run.run_config(ctx.cfg.manifold))?;
    let (traj, failure) = match sys.run(initial) {
        Ok(t) => (t, None),
        Err(fail) => {
            let fail = *fail;
            (fail.partial, Some(fail.error))
        }
    };
    write_trajectory(ctx, &traj.records)?;
    ctx.write_json("final_snapshot.json", &traj.final_state.snapshot(table))?;
    let summary = RunSummary {
        steps: traj.steps,
        records: traj.records.len(),
        t_final: traj.final_state.t,
        enstrophy_constant: enstrophy_constant(table, &ctx.cfg.manifold),
        max_energy_residual: traj.records.iter().map(|r| r.energy_residual).fold(0.0, f64::max),
        max_enstrophy_residual: traj.records.iter().map(|r| r.enstrophy_residual).fold(0.0, f64::max),
        blow_up: failure.as_ref().map(|e| e.to_string()),
    };
    ctx.write_json("summary.json", &summary)?;
    if let Some(e) = failure {
        return Err(e);
    }
    ctx.say(format!(
        "run: {} steps, max energy residual {:e}, max enstrophy residual {:e}",
        summary.steps, summary.max_energy_residual, summary.max_enstrophy_residual
    ));
    Ok(traj.records)
}

fn cmd_run(ctx: &Ctx) -> Result<()> {
    let table = ctx.table()?;
    let run = ctx.cfg.run.as_ref().ok_or_else(|| Error::Config("missing [run] section".into()))?;
    let rc = run.run_config(ctx.cfg.manifold);
    rc.validate()?;
    let shells = surfns::dynamics::resolve_shells(&table, rc.shells.as_deref())?;
    let envelope = explicit_envelope(ctx, &table)?;
    let initial = build_initial(ctx, &table, &shells, envelope.as_ref())?;
    let triads = ctx.triads(&table)?;
    run_dynamics(ctx, &table, &initial, &triads)?;
    Ok(())
}

fn trap_section(ctx: &Ctx) -> Result<&TrapSection> {
    ctx.cfg.trap.as_ref().ok_or_else(|| Error::Config("missing [trap] section".into()))
}

/// The envelope when `e_star` is given explicitly (needed before the initial state exists).
fn explicit_envelope(ctx: &Ctx, table: &SpectrumTable) -> Result<Option<TrappingEnvelope>> {
    match &ctx.cfg.trap {
        Some(t) => match t.e_star {
            Some(e) => Ok(Some(TrappingEnvelope::new(t.r, t.a0, t.k0.resolve(table.lambda1()), e, table.lambda1())?)),
            None => Ok(None),
        },
        None => Ok(None),
    }
}

fn trap_nu(ctx: &Ctx, trap: &TrapSection) -> Result<f64> {
    match (ctx.cfg.run.as_ref().map(|r| r.nu), trap.nu) {
        (Some(a), Some(b)) if a != b => Err(Error::Config(format!("[trap] nu = {b} disagrees with [run] nu = {a}"))),
        (Some(a), _) => Ok(a),
        (None, Some(b)) => Ok(b),
        (None, None) => Err(Error::Config("[trap] requires `nu` when there is no [run] section".into())),
    }
}

fn cmd_trap(ctx: &Ctx) -> Result<()> {
    let trap = trap_section(ctx)?;
    let table = ctx.table()?;
    let lambda1 = table.lambda1();
    let k0 = trap.k0.resolve(lambda1);
    // validate the envelope parameters before any heavy work
    TrappingEnvelope::new(trap.r, trap.a0, k0, trap.e_star.unwrap_or(2.0), lambda1)?;
    let nu = trap_nu(ctx, trap)?;
    let selection = match &ctx.cfg.run {
        Some(r) => r.run_config(ctx.cfg.manifold).shells,
        None => None,
    };
    let shells = surfns::dynamics::resolve_shells(&table, selection.as_deref())?;
    let pre = explicit_envelope(ctx, &table)?;
    let initial = build_initial(ctx, &table, &shells, pre.as_ref())?;
    let t_end = ctx.cfg.run.as_ref().map(|r| r.t_end).unwrap_or(0.0);
    let c = enstrophy_constant(&table, &ctx.cfg.manifold);
    let (e, source) = match trap.e_star {
        Some(e) => (e, "configured"),
        None => {
            let w = initial.omega.l2_norm();
            let u = velocity_energy(&table, &initial.omega, &initial.harmonic).sqrt();
            (e_star(w, u, nu, c, t_end), "(|ω0| + |U0|)^2 exp(2 nu C T), lifted above 1")
        }
    };
    let envelope = TrappingEnvelope::new(trap.r, trap.a0, k0, e, lambda1)?;
    let max_shell = table.shell_keys().last().map(|k| k.0).unwrap_or(0);
    if let Some(&k) = trap.shells.iter().find(|&&k| k > max_shell) {
        return Err(Error::Config(format!("trap shell {k} lies beyond the cutoff (last shell {max_shell})")));
    }
    // torus shells without lattice points carry no energy and are skipped
    let ks: Vec<ShellKey> = trap
        .shells
        .iter()
        .map(|&k| ShellKey(k))
        .filter(|&k| !table.shell_modes(k).is_empty())
        .collect();

    let needs_triads = ctx.cfg.run.is_some() || trap.engine == EngineChoice::Triads;
    let triads = if needs_triads { Some(ctx.triads(&table)?) } else { None };
    let (records, final_state) = if ctx.cfg.run.is_some() {
        let records = run_dynamics(ctx, &table, &initial, triads.as_ref().expect("loaded"))?;
        let snap: Snapshot = serde_json::from_str(&fs::read_to_string(ctx.out.join("final_snapshot.json"))?)?;
        (records, GalerkinState::from_snapshot(&table, &snap)?)
    } else {
        (vec![diagnostics(&table, &initial, None)], initial.clone())
    };

    let mut w = ctx.create("margins.csv")?;
    writeln!(w, "t,shell,k,norm,bound,margin,contact")?;
    let mut min_margin = f64::INFINITY;
    let (mut contacts, mut violations) = (0usize, 0usize);
    for r in &records {
        for m in margins_from_norms(&table, &r.shell_norms, &envelope) {
            writeln!(w, "{},{},{},{},{},{},{}", f(r.t), m.shell.0, f(m.k), f(m.norm), f(m.bound), f(m.margin), m.contact)?;
            min_margin = min_margin.min(m.margin);
            contacts += m.contact as usize;
            violations += (m.margin < 0.0) as usize;
        }
    }
    w.flush()?;

    let transform;
    let engine = match trap.engine {
        EngineChoice::Triads => ConvectiveEngine::Triads(triads.as_ref().expect("loaded")),
        EngineChoice::Transform => {
            transform = Transform::new(&table, 3 * table.max_degree() as usize + 2)?;
            ConvectiveEngine::Transform(&transform)
        }
    };
    let reports = domination_sweep(&table, &final_state, &ks, &envelope, nu, engine)?;
    ctx.write_json(
        "reports.json",
        &json!({
            "envelope": envelope,
            "e_star_source": source,
            "nu": nu,
            "truncation": "pairs with a shell beyond the cutoff are absent; tail_bound is the unresolved envelope mass",
            "reports": reports,
        }),
    )?;
    write_reports_csv(ctx, &reports)?;
    let fit = match decay_fit(&reports, trap.r, trap.slack) {
        Ok(fit) => serde_json::to_value(fit)?,
        Err(e) => json!({ "error": e.to_string() }),
    };
    ctx.write_json("fit.json", &fit)?;
    let dominated_all = reports.iter().all(|r| r.dominated);
    ctx.write_json(
        "trap_summary.json",
        &json!({
            "shells": format_shells(&trap.shells),
            "records": records.len(),
            "min_margin": min_margin,
            "contacts": contacts,
            "violations": violations,
            "dominated_all": dominated_all,
        }),
    )?;
    ctx.say(format!(
        "trap: min margin {min_margin:e}, {contacts} contacts, {violations} violations, dominated at all k: {dominated_all}"
    ));
    Ok(())
}

fn write_reports_csv(ctx: &Ctx, reports: &[DominationReport]) -> Result<()> {
    let mut w = ctx.create("reports.csv")?;
    writeln!(w, "shell,k,convective,harmonic,linear,diffusion,non_diffusive,dominated,tail_bound")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.shell.0,
            f(r.k),
            f(r.convective()),
            f(r.harmonic),
            f(r.linear),
            f(r.diffusion),
            f(r.non_diffusive()),
            r.dominated,
            f(r.tail_bound)
        )?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_estimates(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    if cfg.bilinear.is_none() && cfg.trilinear.is_none() && cfg.fourier.is_none() && cfg.appendix.is_none() {
        return Err(Error::Config(
            "estimates needs at least one of [bilinear], [trilinear], [fourier], [appendix]".into(),
        ));
    }
    let table = ctx.table()?;
    let mut summary = serde_json::Map::new();
    if let Some(b) = &cfg.bilinear {
        let bc = BilinearConfig {
            l1: b.l1.iter().map(|&k| ShellKey(k)).collect(),
            l2: b.l2.iter().map(|&k| ShellKey(k)).collect(),
            pairs: b.pairs,
            a: b.a,
            b: b.b,
            c: b.c,
            trials: b.trials,
            structured: b.structured,
            seed: b.seed,
            quad_degree: b.quad_degree,
        };
        let cells = bilinear_sweep(&table, &bc)?;
        let mut w = ctx.create("bilinear.csv")?;
        write_bilinear_csv(&mut w, &cells)?;
        w.flush()?;
        let fit = match bilinear_fit(&cells) {
            Ok(fit) => serde_json::to_value(fit)?,
            Err(e) => json!({ "error": e.to_string() }),
        };
        ctx.write_json("bilinear_fit.json", &fit)?;
        let max_ratio = cells.iter().map(|c| c.max_ratio).fold(0.0, f64::max);
        summary.insert("bilinear".into(), json!({ "cells": cells.len(), "max_ratio": max_ratio, "fit": fit }));
        ctx.say(format!("bilinear: {} cells, max normalized ratio {max_ratio:.6}", cells.len()));
    }
    if let Some(t) = &cfg.trilinear {
        let tc = TrilinearConfig {
            l2: ShellKey(t.l2),
            l3: ShellKey(t.l3),
            k_values: t.k_values.clone(),
            a: t.a,
            b: t.b,
            trials: t.trials,
            seed: t.seed,
        };
        let curve = trilinear_decay(&table, &tc)?;
        let mut w = ctx.create("trilinear.csv")?;
        write_trilinear_csv(&mut w, &curve)?;
        w.flush()?;
        let max_sep = curve.points.iter().map(|p| p.max_abs).fold(0.0, f64::max);
        summary.insert(
            "trilinear".into(),
            json!({ "points": curve.points.len(), "max_separated": max_sep, "baseline": curve.baseline.max_abs }),
        );
        ctx.say(format!("trilinear: max separated integral {max_sep:e}, baseline {:e}", curve.baseline.max_abs));
    }
    if let Some(fs_) = &cfg.fourier {
        let cases = fourier_trick_batch(&table, fs_.cases, fs_.seed, fs_.theta)?;
        let mut w = ctx.create("fourier.csv")?;
        write_fourier_csv(&mut w, &cases)?;
        w.flush()?;
        let max_res = cases.iter().map(|c| c.result.residual).fold(0.0, f64::max);
        let max_proj = cases.iter().map(|c| c.result.projection_residual).fold(0.0, f64::max);
        summary.insert(
            "fourier".into(),
            json!({ "cases": cases.len(), "max_residual": max_res, "max_projection_residual": max_proj }),
        );
        ctx.say(format!("fourier: {} cases, max residual {max_res:e}", cases.len()));
    }
    if let Some(a) = &cfg.appendix {
        let rows = appendix_batch(&table, a.triples, a.seed)?;
        let mut w = ctx.create("appendix.csv")?;
        write_appendix_csv(&mut w, &rows)?;
        w.flush()?;
        let max_rel = rows.iter().map(|r| r.relative).fold(0.0, f64::max);
        summary.insert("appendix".into(), json!({ "triples": rows.len(), "max_relative": max_rel }));
        ctx.say(format!("appendix: {} triples, max relative residual {max_rel:e}", rows.len()));
    }
    ctx.write_json("estimates_summary.json", &summary)?;
    Ok(())
}

fn cmd_export(ctx: &Ctx) -> Result<()> {
    let ex = ctx
        .cfg
        .export
        .as_ref()
        .ok_or_else(|| Error::Config("missing [export] section".into()))?;
    let table = ctx.table()?;
    let snap: Snapshot = serde_json::from_str(&fs::read_to_string(&ex.snapshot)?)?;
    let state = GalerkinState::from_snapshot(&table, &snap)?;
    let degree = ex.degree.unwrap_or(2 * table.max_degree() as usize);
    let tr = Transform::new(&table, degree)?;
    let w_coeffs = state.omega.coeffs();
    let psi: Vec<f64> = table
        .modes()
        .iter()
        .map(|m| if m.eigenvalue_sq() > 0.0 { w_coeffs[m.id] / m.eigenvalue_sq() } else { 0.0 })
        .collect();
    let omega = tr.synth(w_coeffs);
    let g = tr.synth_grad(&psi);
    let (h1, h2) = (
        state.harmonic.first().copied().unwrap_or(0.0),
        state.harmonic.get(1).copied().unwrap_or(0.0),
    );
    let pts = tr.points();
    let mut w = ctx.create("field.csv")?;
    let (c1, c2) = match table.kind() {
        surfns::spectrum::ManifoldKind::Torus => ("x", "y"),
        surfns::spectrum::ManifoldKind::Sphere => ("theta", "phi"),
    };
    writeln!(w, "{c1},{c2},omega,psi,u1,u2")?;
    for (i, p) in pts.iter().enumerate() {
        // U = 𝒫_H U + curl ψ with curl ψ = (∂₂ψ, −∂₁ψ)
        writeln!(
            w,
            "{},{},{},{},{},{}",
            f(p[0]),
            f(p[1]),
            f(omega[i]),
            f(g.value[i]),
            f(h1 + g.d2[i]),
            f(h2 - g.d1[i])
        )?;
    }
    w.flush()?;
    ctx.say(format!("export: {} grid points at degree {degree}", pts.len()));
    Ok(())
}
