mod config;
mod output;

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use symcrit::integrand::{check_conditions, consistency_check, SampleBox};
use symcrit::solver::{self, ps_diagnostics};
use symcrit::symmetrize::check_axioms;
use symcrit::verify::{palais_check, write_sweep_csv};
use symcrit::{build_domain, build_group, EnergyModel, Error, GridFunction, Integrand, Modulated, PLaplace, Result};

use config::{FlatConfig, RunConfig};
use output::{Outputs, RunManifest};

const EXIT_OK: i32 = 0;
const EXIT_ERROR: i32 = 1;
const EXIT_NOT_CONVERGED: i32 = 2;
const EXIT_PRINCIPLE: i32 = 3;

#[derive(Parser)]
#[command(name = "symcrit", version, about = "Symmetric mountain-pass experiments on discretized quasilinear functionals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file (`section.key = value` lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `run.seed`
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress and stdout reports
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build endpoints, run the path search, verify the result
    Solve,
    /// Sample the structural conditions on the configured integrand
    CheckIntegrand,
    /// Sample the symmetrization axioms on the configured grid
    CheckAxioms,
    /// Compare plain and restricted mountain-pass levels
    CompareLevels,
    /// Run the symmetric-criticality check on a stored field
    VerifyPoint {
        /// Grid function CSV as written by `solve`
        #[arg(long)]
        u: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::CheckIntegrand => "check-integrand",
            Command::CheckAxioms => "check-axioms",
            Command::CompareLevels => "compare-levels",
            Command::VerifyPoint { .. } => "verify-point",
        }
    }
}

fn diagnostic(level: &str, e: &Error) {
    let mut v = json!({ "level": level, "kind": e.kind(), "message": e.to_string() });
    if let Error::Config { field, .. } = e {
        v["field"] = json!(field);
    }
    eprintln!("{v}");
}

fn note(quiet: bool, level: &str, message: &str) {
    if !quiet {
        eprintln!("{}", json!({ "level": level, "message": message }));
    }
}

fn threads_from_env() -> Result<usize> {
    match std::env::var("SYMCRIT_THREADS") {
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::config("SYMCRIT_THREADS", format!("expected a positive integer, got `{s}`"))),
        },
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::config("--config", "a configuration file is required"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
    let mut rc = RunConfig::from_flat(&FlatConfig::parse(&text)?)?;
    if let Some(seed) = cli.seed {
        rc.seed = seed;
        rc.solver.seed = seed;
    }
    Ok(rc)
}

fn make_integrand(rc: &RunConfig) -> Result<Arc<dyn Integrand>> {
    match (rc.integrand.as_str(), rc.delta) {
        ("plaplace", Some(d)) => Ok(Arc::new(PLaplace::new(rc.p)?.with_delta(d))),
        ("modulated", Some(d)) => Ok(Arc::new(Modulated::new(rc.p)?.with_delta(d))),
        (name, _) => symcrit::integrand::builtin(name, rc.p).map_err(|e| Error::config("integrand.name", e.to_string())),
    }
}

fn make_model(rc: &RunConfig) -> Result<EnergyModel> {
    let d = build_domain(&rc.domain)?;
    let g = build_group(&d, rc.group, rc.group_order)?;
    EnergyModel::new(&d, make_integrand(rc)?, rc.q, Some(g), rc.positivity)
        .map_err(|e| Error::config("integrand.q", e.to_string()))
}

fn with_hash<T: Serialize>(hash: &str, key: &str, value: &T) -> serde_json::Value {
    json!({ "config_hash": hash, key: value })
}

fn emit<T: Serialize>(quiet: bool, value: &T) {
    if !quiet {
        let text = serde_json::to_string_pretty(value).expect("reports serialize");
        let _ = writeln!(io::stdout(), "{text}");
    }
}

struct Context<'a> {
    rc: &'a RunConfig,
    hash: String,
    quiet: bool,
}

fn solve(ctx: &Context, out: &mut Outputs) -> Result<i32> {
    let rc = ctx.rc;
    let model = make_model(rc)?;
    out.write("config.cfg", rc.to_flat().to_text().as_bytes())?;
    out.stage("model", "ok", None);
    let ends = solver::init_endpoints(&model, None, rc.seed)?;
    out.stage(
        "endpoints",
        "ok",
        Some(format!("rho0 = {:e}, sigma0 = {:e}, f(e) = {:e}", ends.rho0, ends.sigma0, ends.energy_e)),
    );
    let mut report = solver::run_with_endpoints(&model, &rc.solver, ends)?;
    report.config_hash = Some(ctx.hash.clone());
    for w in &report.warnings {
        note(ctx.quiet, "warning", w);
    }
    out.stage(
        "solve",
        if report.converged { "ok" } else { "not-converged" },
        Some(format!("{} iterations, level {:e}, residual {:e}", report.iterations, report.level, report.residual_norm)),
    );
    out.write_json("solve_report.json", &report)?;
    let mut csv = format!("# config_hash={}\n", ctx.hash).into_bytes();
    report.record.write_csv(&mut csv)?;
    out.write("ps_record.csv", &csv)?;
    let u = GridFunction::from_values(model.domain(), report.u.clone())?;
    let mut buf = Vec::new();
    u.write_csv(&mut buf, &[format!("config_hash={}", ctx.hash), format!("level={:.16e}", report.level)])?;
    out.write("solution.csv", &buf)?;

    let diagnostics = if report.record.len() >= 2 {
        Some(ps_diagnostics(&report.record, &model, rc.solver.w1p_ceiling, rc.verify.cauchy_tol)?)
    } else {
        None
    };
    let d = model.domain();
    let negative: Vec<f64> = report.u.iter().map(|x| (-x).max(0.0)).collect();
    let positivity = json!({
        "negative_part_lp": d.lm_norm(&negative, model.p()),
        "min_value": report.u.iter().cloned().fold(f64::INFINITY, f64::min),
    });
    if !report.converged {
        out.write_json(
            "criticality.json",
            &json!({ "config_hash": ctx.hash, "criticality": null, "ps_diagnostics": diagnostics, "positivity": positivity }),
        )?;
        out.stage("verify", "skipped", Some("solve did not converge".into()));
        return Ok(EXIT_NOT_CONVERGED);
    }
    let invariant = model.group().is_none_or(|g| g.invariance_defect(&report.u) <= symcrit::verify::INVARIANCE_TOL);
    if !invariant {
        out.write_json(
            "criticality.json",
            &json!({ "config_hash": ctx.hash, "criticality": null, "ps_diagnostics": diagnostics, "positivity": positivity }),
        )?;
        out.stage("verify", "skipped", Some("final point is not group-invariant".into()));
        return Ok(EXIT_OK);
    }
    let crit = palais_check(&model, &u, rc.verify.tau_tan, rc.verify.tau_trans)?;
    let mut sweep = format!("# config_hash={}\n", ctx.hash).into_bytes();
    write_sweep_csv(&mut sweep, &crit.sweep)?;
    out.write("sweep.csv", &sweep)?;
    out.write_json(
        "criticality.json",
        &json!({ "config_hash": ctx.hash, "criticality": crit, "ps_diagnostics": diagnostics, "positivity": positivity }),
    )?;
    emit(
        ctx.quiet,
        &json!({
            "converged": true,
            "level": report.level,
            "iterations": report.iterations,
            "tangential": crit.tangential,
            "transverse": crit.transverse,
        }),
    );
    if crit.principle_holds {
        out.stage("verify", "ok", None);
        Ok(EXIT_OK)
    } else {
        out.stage(
            "verify",
            "failed",
            Some(format!("tangential {:e}, transverse {:e}", crit.tangential, crit.transverse)),
        );
        Ok(EXIT_PRINCIPLE)
    }
}

fn check_integrand(ctx: &Context, out: Option<&mut Outputs>) -> Result<i32> {
    let j = make_integrand(ctx.rc)?;
    let conditions = check_conditions(&*j, ctx.rc.q, &SampleBox::default())?;
    let consistency = consistency_check(&*j);
    let pass = conditions.all_pass() && !consistency.flagged;
    let rep = json!({ "config_hash": ctx.hash, "pass": pass, "conditions": conditions, "consistency": consistency });
    finish_report(ctx, out, "integrand_report.json", &rep, pass)
}

fn check_axioms_cmd(ctx: &Context, out: Option<&mut Outputs>) -> Result<i32> {
    let d = build_domain(&ctx.rc.domain)?;
    let rep = check_axioms(&d, ctx.rc.verify.axiom_samples, ctx.rc.seed)?;
    let pass = rep.pass;
    finish_report(ctx, out, "axioms_report.json", &with_hash(&ctx.hash, "axioms", &rep), pass)
}

fn compare_levels_cmd(ctx: &Context, out: Option<&mut Outputs>) -> Result<i32> {
    let model = make_model(ctx.rc)?;
    let (cmp, _, _) = solver::compare_levels(&model, &ctx.rc.solver, ctx.rc.verify.level_tol)?;
    let code = if cmp.declined {
        EXIT_NOT_CONVERGED
    } else if cmp.holds {
        EXIT_OK
    } else {
        EXIT_ERROR
    };
    let rep = with_hash(&ctx.hash, "levels", &cmp);
    finish_report(ctx, out, "levels_report.json", &rep, code == EXIT_OK)?;
    Ok(code)
}

fn verify_point(ctx: &Context, out: Option<&mut Outputs>, path: &Path) -> Result<i32> {
    let model = make_model(ctx.rc)?;
    let file = std::fs::File::open(path).map_err(|e| Error::Usage(format!("cannot open {}: {e}", path.display())))?;
    let u = GridFunction::read_csv(model.domain(), io::BufReader::new(file))?;
    let crit = palais_check(&model, &u, ctx.rc.verify.tau_tan, ctx.rc.verify.tau_trans)?;
    let pass = crit.principle_holds;
    finish_report(ctx, out, "criticality.json", &with_hash(&ctx.hash, "criticality", &crit), pass)?;
    Ok(if pass { EXIT_OK } else { EXIT_PRINCIPLE })
}

fn finish_report(ctx: &Context, out: Option<&mut Outputs>, name: &str, rep: &serde_json::Value, pass: bool) -> Result<i32> {
    if let Some(out) = out {
        out.write_json(name, rep)?;
        out.stage(name.trim_end_matches(".json"), if pass { "ok" } else { "failed" }, None);
    }
    emit(ctx.quiet, rep);
    Ok(if pass { EXIT_OK } else { EXIT_ERROR })
}

fn run(cli: &Cli) -> Result<i32> {
    let started = chrono::Utc::now();
    let clock = Instant::now();
    let threads = threads_from_env()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    let rc = load_config(cli)?;
    let ctx = Context {
        rc: &rc,
        hash: rc.hash(),
        quiet: cli.quiet,
    };
    let out_dir = match (&cli.out, &cli.command) {
        (Some(dir), _) => Some(dir.clone()),
        (None, Command::Solve) => Some(PathBuf::from("symcrit-out")),
        (None, _) => None,
    };
    let mut outputs = out_dir.as_deref().map(Outputs::new).transpose()?;
    let result = match &cli.command {
        Command::Solve => solve(&ctx, outputs.as_mut().expect("solve always has an output directory")),
        Command::CheckIntegrand => check_integrand(&ctx, outputs.as_mut()),
        Command::CheckAxioms => check_axioms_cmd(&ctx, outputs.as_mut()),
        Command::CompareLevels => compare_levels_cmd(&ctx, outputs.as_mut()),
        Command::VerifyPoint { u } => verify_point(&ctx, outputs.as_mut(), u),
    };
    let code = match &result {
        Ok(c) => *c,
        Err(e) => {
            if let Some(o) = outputs.as_mut() {
                o.stage(cli.command.name(), "error", Some(e.to_string()));
                if let Error::Numerical { last_good, .. } = e {
                    let text: String = last_good.iter().map(|v| format!("{v:.16e}\n")).collect();
                    o.write("last_good.txt", text.as_bytes())?;
                }
            }
            EXIT_ERROR
        }
    };
    if let Some(o) = outputs {
        o.finish(RunManifest {
            config_hash: ctx.hash.clone(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: cli.command.name().to_string(),
            started_at: started.to_rfc3339(),
            finished_at: chrono::Utc::now().to_rfc3339(),
            wall_time_s: clock.elapsed().as_secs_f64(),
            threads,
            exit_code: code,
            stages: Vec::new(),
            files: Vec::new(),
        })?;
    }
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            diagnostic("error", &e);
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
