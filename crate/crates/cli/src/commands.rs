use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use prom3::baselines::cutting_plane_solve;
use prom3::outer::{solve as outer_solve, solve_extended};
use prom3::problem::{
    check_subgradients, digest_of, max_violation, penalize, slater_margin, Instance,
    InstanceDocument, OracleCounters, ProblemSpec, DEFAULT_REPORT_BUDGET,
};
use prom3::problems::{gen_lse, gen_newsvendor, gen_qcqp, LseParams, NewsvendorParams, QcqpParams};
use prom3::trace::Trace;
use serde::Serialize;
use serde_json::{json, Value};

use crate::settings::{Algorithm, Settings};
use crate::Family;

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn generate(family: Family, out: Option<PathBuf>) -> Result<ExitCode> {
    let doc = match family {
        Family::Qcqp {
            m,
            n,
            p,
            j,
            seed,
            epigraph_scale,
        } => gen_qcqp(&QcqpParams {
            epigraph_scale,
            ..QcqpParams::new(m, n, p, j, seed)
        })?,
        Family::Lse { m, n, j, seed } => gen_lse(&LseParams { m, n, j, seed })?,
        Family::Newsvendor {
            m,
            n,
            kappa,
            radius,
            seed,
        } => gen_newsvendor(&NewsvendorParams {
            m,
            n,
            kappa,
            radius,
            seed,
        })?,
    };
    let text = doc.to_json()?;
    let margin = doc
        .metadata
        .get("slater_margin")
        .map_or("unknown".to_string(), Value::to_string);
    let info = format!(
        "digest {}\nslater margin {margin}",
        digest_of(text.as_bytes())
    );
    match &out {
        Some(path) => {
            write_file(path, &text)?;
            println!("wrote {}\n{info}", path.display());
        }
        None => {
            println!("{text}");
            eprintln!("{info}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

struct Loaded {
    doc: InstanceDocument,
    instance: Instance,
    digest: String,
}

fn load(path: &Path) -> Result<Loaded> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc = InstanceDocument::from_json(&text)
        .with_context(|| format!("parsing instance {}", path.display()))?;
    let instance = doc
        .build()
        .with_context(|| format!("validating instance {}", path.display()))?;
    Ok(Loaded {
        doc,
        instance,
        digest: digest_of(text.as_bytes()),
    })
}

/// The instance with plain projections: intersection sets go through
/// alternating projection.
fn direct_spec(instance: &Instance, settings: &Settings) -> Result<ProblemSpec> {
    Ok(match instance {
        Instance::Plain(spec) => spec.clone(),
        Instance::Intersection(p) => {
            let (tol, iters) = settings.dykstra();
            p.direct_spec(tol, iters)?
        }
    })
}

/// Everything one solver run reports.
struct RunOutput {
    trace: Trace,
    x: Vec<f64>,
    converged: Option<bool>,
    extra: BTreeMap<String, Value>,
}

fn execute(loaded: &Loaded, settings: &Settings) -> Result<RunOutput> {
    let slater = loaded.doc.slater_point.as_deref();
    match settings.algorithm() {
        Algorithm::Prom3 => {
            let cfg = settings.outer_config(slater)?;
            let spec = direct_spec(&loaded.instance, settings)?;
            let res = outer_solve(&spec, &cfg)?;
            let mut extra = BTreeMap::new();
            extra.insert("resolved".into(), serde_json::to_value(&res.resolved)?);
            extra.insert("lambda".into(), json!(res.lambda));
            Ok(RunOutput {
                trace: res.trace,
                x: res.x,
                converged: None,
                extra,
            })
        }
        Algorithm::Prom3x => {
            let Instance::Intersection(problem) = &loaded.instance else {
                bail!("prom3x needs an instance whose uncertainty sets are described by cuts");
            };
            let cfg = settings.outer_config(slater)?;
            let res = solve_extended(problem, &cfg)?;
            let mut extra = BTreeMap::new();
            extra.insert("caps".into(), json!(res.caps));
            extra.insert("mu".into(), json!(res.mu));
            extra.insert(
                "resolved".into(),
                serde_json::to_value(&res.inner.resolved)?,
            );
            extra.insert("lambda".into(), json!(res.inner.lambda));
            // the trace holds the penalized surrogate; certify on the true sets
            if let Ok(direct) = direct_spec(&loaded.instance, settings) {
                let r = &res.inner.resolved;
                let (v, _, _) =
                    max_violation(&direct, &res.x, r.theta_report, r.report_budget, None)?;
                extra.insert("certified_violation".into(), json!(v));
            }
            Ok(RunOutput {
                trace: res.inner.trace,
                x: res.x,
                converged: None,
                extra,
            })
        }
        Algorithm::CuttingPlane => {
            let cfg = settings.cutting_plane_config();
            let spec = direct_spec(&loaded.instance, settings)?;
            let res = cutting_plane_solve(&spec, &cfg)?;
            let mut extra = BTreeMap::new();
            extra.insert("rounds".into(), json!(res.rounds));
            extra.insert("rho".into(), json!(res.rho));
            let sizes: Vec<usize> = res.scenarios.iter().map(Vec::len).collect();
            extra.insert("scenarios_per_constraint".into(), json!(sizes));
            Ok(RunOutput {
                trace: res.trace,
                x: res.x,
                converged: Some(res.converged),
                extra,
            })
        }
    }
}

#[derive(Serialize)]
struct Summary {
    algorithm: &'static str,
    instance: String,
    instance_digest: String,
    /// Final objective and violation, as in the last trace row.
    objective: Option<f64>,
    violation: Option<f64>,
    counters: OracleCounters,
    total_calls: u64,
    /// Solver time from the trace, reporting excluded.
    solve_time_s: f64,
    /// Whole command, including loading and reporting.
    wall_time_s: f64,
    rows: usize,
    converged: Option<bool>,
    x: Vec<f64>,
    warnings: Vec<String>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

fn summarize(
    algorithm: Algorithm,
    instance: &Path,
    loaded: &Loaded,
    run: RunOutput,
    wall: f64,
    timing: bool,
) -> Summary {
    let last = run.trace.last();
    let counters = last.map(|r| r.counters).unwrap_or_default();
    Summary {
        algorithm: algorithm.name(),
        instance: instance.display().to_string(),
        instance_digest: loaded.digest.clone(),
        objective: last.map(|r| r.objective),
        violation: last.map(|r| r.violation),
        counters,
        total_calls: counters.f0 + counters.gx + counters.gz + counters.h + counters.proj(),
        solve_time_s: if timing {
            last.map_or(0.0, |r| r.time_s)
        } else {
            0.0
        },
        wall_time_s: if timing { wall } else { 0.0 },
        rows: run.trace.rows.len(),
        converged: run.converged,
        x: run.x,
        warnings: run.trace.warnings,
        extra: run.extra,
    }
}

fn merged_settings(config: Option<&Path>, flags: Settings) -> Result<Settings> {
    Ok(match config {
        Some(path) => flags.over(Settings::from_file(path)?),
        None => flags,
    })
}

pub fn solve(
    instance: &Path,
    config: Option<&Path>,
    flags: Settings,
    out: Option<PathBuf>,
    summary_path: Option<PathBuf>,
    timing: bool,
) -> Result<ExitCode> {
    let clock = Instant::now();
    let settings = merged_settings(config, flags)?;
    let loaded = load(instance)?;
    let algorithm = settings.algorithm();
    let run = execute(&loaded, &settings)?;
    let csv = run.trace.to_csv(timing);
    for w in &run.trace.warnings {
        eprintln!("warning: {w}");
    }
    let converged = run.converged;
    let summary = summarize(
        algorithm,
        instance,
        &loaded,
        run,
        clock.elapsed().as_secs_f64(),
        timing,
    );
    match &out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(path) = &summary_path {
        write_file(path, &serde_json::to_string_pretty(&summary)?)?;
    }
    eprintln!(
        "{}: objective {} violation {} over {} rows",
        algorithm.name(),
        summary
            .objective
            .map_or("n/a".into(), |v| format!("{v:.6e}")),
        summary
            .violation
            .map_or("n/a".into(), |v| format!("{v:.6e}")),
        summary.rows
    );
    if converged == Some(false) {
        eprintln!("not converged");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn check(instance: &Path, trials: usize, tol: f64, seed: u64) -> Result<ExitCode> {
    let loaded = load(instance)?;
    let spec = match &loaded.instance {
        Instance::Plain(spec) => spec.clone(),
        Instance::Intersection(p) => {
            println!("intersection instance: checking the penalized problem");
            penalize(p)?.spec
        }
    };
    let report = check_subgradients(&spec, trials, tol, seed);
    let mut failures = report.failures();
    for c in &report.checks {
        println!(
            "{:<32} rel err {:.3e}  max norm {:.4e}  bound {}  ({} samples, {} at kinks)",
            c.name,
            c.max_rel_err,
            c.max_norm,
            c.declared_bound
                .map_or("none".into(), |b| format!("{b:.4e}")),
            c.samples_used,
            c.samples_skipped
        );
    }
    match &loaded.doc.slater_point {
        None => println!("notice: no Slater point recorded; Slater check skipped"),
        Some(xs) => {
            let inside = loaded.doc.decision_set.contains(xs, 1e-9);
            if !inside {
                failures.push("Slater point lies outside the decision set".into());
            }
            let direct = direct_spec(&loaded.instance, &Settings::default())?;
            let margin = slater_margin(&direct, xs, 1e-6, 100 * DEFAULT_REPORT_BUDGET)?;
            println!("slater margin {margin:.6e}");
            if !(margin > 0.0) {
                failures.push(format!(
                    "Slater point is not strictly feasible (margin {margin:.6e})"
                ));
            }
        }
    }
    if failures.is_empty() {
        println!("all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &failures {
            println!("FAILED: {f}");
        }
        Ok(ExitCode::from(1))
    }
}

pub fn bench(
    instance: &Path,
    config: Option<&Path>,
    ks: &[usize],
    flags: Settings,
    out_dir: &Path,
    timing: bool,
) -> Result<ExitCode> {
    let settings = merged_settings(config, flags)?;
    let algorithm = settings.algorithm();
    if algorithm == Algorithm::CuttingPlane {
        bail!("bench sweeps the outer iteration count, which cutting-plane does not have");
    }
    let loaded = load(instance)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut table = String::from("k,objective,violation,solve_time_s,total_calls\n");
    for &k in ks {
        let run = execute(
            &loaded,
            &Settings {
                k: Some(k),
                ..settings.clone()
            },
        )?;
        write_file(
            &out_dir.join(format!("trace_k{k}.csv")),
            &run.trace.to_csv(timing),
        )?;
        let s = summarize(algorithm, instance, &loaded, run, 0.0, timing);
        let line = format!(
            "{k},{:.16e},{:.16e},{:.6},{}",
            s.objective.unwrap_or(f64::NAN),
            s.violation.unwrap_or(f64::NAN),
            s.solve_time_s,
            s.total_calls
        );
        println!("{line}");
        writeln!(table, "{line}")?;
    }
    write_file(&out_dir.join("bench.csv"), &table)?;
    Ok(ExitCode::SUCCESS)
}
