//! Run execution, deterministic batches and report generation.
//!
//! Outputs per run: `trajectory.jsonl` (one record per sample, terminal event
//! last), `summary.json` (classification, rate fits, invariant checks, and the
//! fully materialized config for provenance) and optionally `cutoffs.jsonl`.
//! Batches aggregate one CSV row per run, ordered by run id regardless of
//! scheduling.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::config::{Preset, ResolvedRun, RunConfig, ToyConfig};
use crate::diagnostics::{
    classify_end, detect_tower, toy_closed_form, toy_flow, toy_rhs, verify_energy_monotone,
    EndReport, RateFit,
};
use crate::flow::cutoffs;
use crate::integrator::{simulate, EventKind, FlowContext, Trajectory};
use crate::{Result, ShadowError};

/// Exit code for an error per the CLI contract: 2 for configuration problems,
/// 3 for numeric faults.
pub fn exit_code(e: &ShadowError) -> i32 {
    match e {
        ShadowError::Config(_)
        | ShadowError::Parse(_)
        | ShadowError::DimensionMismatch(_)
        | ShadowError::Degenerate(_)
        | ShadowError::InsufficientData(_)
        | ShadowError::Io(_) => 2,
        ShadowError::Domain(_) | ShadowError::NdViolation(_) | ShadowError::Numeric(_) => 3,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TowerReport {
    pub is_tower_attempt: bool,
    pub min_pair_floor: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChecksReport {
    pub energy_monotone_ok: bool,
    pub worst_energy_increase: f64,
    pub norm_drift_ok: bool,
    pub worst_norm_drift_rate: f64,
    pub lambda_ratio_ok: bool,
    pub worst_ratio_increase: f64,
}

impl ChecksReport {
    pub fn all_ok(&self) -> bool {
        self.energy_monotone_ok && self.norm_drift_ok && self.lambda_ratio_ok
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub preset: Option<String>,
    pub n: usize,
    pub q: usize,
    pub seed: u64,
    pub outcome: EventKind,
    pub t_end: f64,
    pub event_detail: String,
    pub end: EndReport,
    pub tower: Option<TowerReport>,
    pub checks: ChecksReport,
    pub config: RunConfig,
}

#[derive(Serialize)]
struct TrajectoryRecord<'a> {
    t: f64,
    alpha: &'a [f64],
    centers: Vec<&'a [f64]>,
    log_lambda: &'a [f64],
    vnorm: f64,
    energy: f64,
    balance: &'a [f64],
    eps_total: f64,
    etas: &'a crate::integrator::EtaSummary,
    dlog_lambda: &'a [f64],
}

#[derive(Serialize)]
struct EventRecord<'a> {
    event: &'a crate::integrator::Event,
}

fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in &traj.samples {
        let rec = TrajectoryRecord {
            t: s.t,
            alpha: s.state.alpha(),
            centers: s.state.centers().iter().map(|c| c.coords()).collect(),
            log_lambda: s.state.log_lambda(),
            vnorm: s.state.vnorm(),
            energy: s.energy,
            balance: &s.balance,
            eps_total: s.eps_total,
            etas: &s.etas,
            dlog_lambda: &s.dlog_lambda,
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| ShadowError::Parse(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    for ev in &traj.events {
        serde_json::to_writer(&mut out, &EventRecord { event: ev })
            .map_err(|e| ShadowError::Parse(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn write_cutoff_dump(path: &Path, traj: &Trajectory, run: &ResolvedRun) -> Result<()> {
    #[derive(Serialize)]
    struct CutoffRecord<'a> {
        t: f64,
        report: &'a crate::flow::CutoffReport,
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in &traj.samples {
        let report = cutoffs(&s.state, &run.field, &run.flow)?;
        serde_json::to_writer(
            &mut out,
            &CutoffRecord {
                t: s.t,
                report: &report,
            },
        )
        .map_err(|e| ShadowError::Parse(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn run_checks(traj: &Trajectory, cbar0: f64) -> Result<ChecksReport> {
    let (energy_monotone_ok, worst_energy_increase) = verify_energy_monotone(traj)?;

    let mut norm_drift_ok = true;
    let mut worst_norm_drift_rate: f64 = 0.0;
    let n0 = traj.samples[0].state.norm_surrogate(cbar0);
    for w in traj.samples.windows(2) {
        let dt = w[1].t - w[0].t;
        if dt <= 0.0 {
            continue;
        }
        let rate =
            (w[1].state.norm_surrogate(cbar0) - w[0].state.norm_surrogate(cbar0)).abs() / dt;
        worst_norm_drift_rate = worst_norm_drift_rate.max(rate);
        if rate >= 1e-8 * n0.max(1.0) {
            norm_drift_ok = false;
        }
    }

    let mut lambda_ratio_ok = true;
    let mut worst_ratio_increase: f64 = 0.0;
    for w in traj.samples.windows(2) {
        let r0 = (w[0].state.max_log_lambda() - w[0].state.min_log_lambda()).exp();
        let r1 = (w[1].state.max_log_lambda() - w[1].state.min_log_lambda()).exp();
        let increase = r1 - r0;
        worst_ratio_increase = worst_ratio_increase.max(increase);
        if increase > 1e-8 {
            lambda_ratio_ok = false;
        }
    }

    Ok(ChecksReport {
        energy_monotone_ok,
        worst_energy_increase,
        norm_drift_ok,
        worst_norm_drift_rate,
        lambda_ratio_ok,
        worst_ratio_increase,
    })
}

/// Execute one resolved configuration and write its artifacts under
/// `out_dir/<run_id>/`.
pub fn execute_run(
    cfg: &RunConfig,
    run_id: &str,
    preset: Option<&str>,
    out_dir: &Path,
    dump_cutoffs: bool,
) -> Result<RunSummary> {
    let resolved = cfg.resolve()?;
    let ctx = FlowContext {
        field: &resolved.field,
        constants: &cfg.constants,
        flow: &resolved.flow,
        perturbation: &cfg.perturbation,
        crits: &resolved.crits,
        integ: &cfg.integrator,
    };
    let traj = simulate(&resolved.state, &ctx)?;
    let end = classify_end(&traj, &resolved.crits, &resolved.field)?;
    let tower = if cfg.q >= 2 {
        let (is_tower_attempt, min_pair_floor) = detect_tower(&traj)?;
        Some(TowerReport {
            is_tower_attempt,
            min_pair_floor,
        })
    } else {
        None
    };
    let checks = run_checks(&traj, cfg.constants.bubble_norm)?;

    let dir = out_dir.join(run_id);
    std::fs::create_dir_all(&dir)?;
    write_trajectory(&dir.join("trajectory.jsonl"), &traj)?;
    if dump_cutoffs {
        write_cutoff_dump(&dir.join("cutoffs.jsonl"), &traj, &resolved)?;
    }

    let terminal = traj.terminal_event();
    // materialize defaulted constants so the summary is self-describing
    let mut echo = cfg.clone();
    echo.flow = Some(resolved.flow.clone());
    let summary = RunSummary {
        run_id: run_id.to_string(),
        preset: preset.map(|s| s.to_string()),
        n: cfg.n,
        q: cfg.q,
        seed: cfg.seed,
        outcome: terminal.kind,
        t_end: terminal.t,
        event_detail: terminal.detail.clone(),
        end,
        tower,
        checks,
        config: echo,
    };
    let json =
        serde_json::to_string_pretty(&summary).map_err(|e| ShadowError::Parse(e.to_string()))?;
    std::fs::write(dir.join("summary.json"), json)?;
    Ok(summary)
}

/// Summary of a toy-landscape run.
#[derive(Debug, Clone, Serialize)]
pub struct ToySummary {
    pub run_id: String,
    pub preset: Option<String>,
    pub outcome: String,
    pub index_at_infinity: usize,
    pub max_closed_form_deviation: f64,
    pub energy_strictly_decreasing: bool,
    pub toy: ToyConfig,
}

/// Run the closed-form toy scenario, cross-checking against a numerically
/// integrated path, and write summary/path files.
pub fn execute_toy(toy: &ToyConfig, run_id: &str, out_dir: &Path) -> Result<ToySummary> {
    let path = toy_flow(&toy.x0, &toy.signs, toy.t_end)?;

    // numeric cross-check with the embedded integrator at fixed small steps
    let signs = toy.signs.clone();
    let f = |y: &[f64]| -> Result<Vec<f64>> { Ok(toy_rhs(y, &signs)) };
    let mut y = toy.x0.clone();
    let mut t = 0.0;
    let h = toy.t_end / 4000.0;
    let mut max_dev: f64 = 0.0;
    while t < toy.t_end - 1e-12 {
        let (y1, _) = crate::integrator::rk_step(&f, &y, h)?;
        y = y1;
        t += h;
        let exact = toy_closed_form(&toy.x0, &toy.signs, t);
        for (a, b) in y.iter().zip(&exact) {
            max_dev = max_dev.max((a - b).abs());
        }
    }

    let energy_strictly_decreasing = path.energies.windows(2).all(|w| w[1] < w[0]);

    let dir = out_dir.join(run_id);
    std::fs::create_dir_all(&dir)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join("toy_path.jsonl"))?);
    for ((t, x), j) in path.samples.iter().zip(&path.energies) {
        #[derive(Serialize)]
        struct ToyRecord<'a> {
            t: f64,
            x: &'a [f64],
            energy: f64,
        }
        serde_json::to_writer(
            &mut out,
            &ToyRecord {
                t: *t,
                x,
                energy: *j,
            },
        )
        .map_err(|e| ShadowError::Parse(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;

    let summary = ToySummary {
        run_id: run_id.to_string(),
        preset: Some("toy".into()),
        outcome: "completed".into(),
        index_at_infinity: path.index_at_infinity,
        max_closed_form_deviation: max_dev,
        energy_strictly_decreasing,
        toy: toy.clone(),
    };
    let json =
        serde_json::to_string_pretty(&summary).map_err(|e| ShadowError::Parse(e.to_string()))?;
    std::fs::write(dir.join("summary.json"), json)?;
    Ok(summary)
}

/// Build a run config from a preset name at dimension `n` (toy handled by the
/// caller), or load it from a file.
pub fn config_from_preset(preset: Preset, n: usize, seed: u64) -> Result<RunConfig> {
    let mut cfg = preset
        .run_config(n)
        .ok_or_else(|| ShadowError::Config("the toy preset has no bubble config".into()))?;
    cfg.seed = seed;
    cfg.run_id = Some(if seed == 0 {
        preset.name().to_string()
    } else {
        format!("{}-s{seed:04}", preset.name())
    });
    Ok(cfg)
}

/// Expand config paths: directories contribute their `*.toml` files, sorted.
pub fn expand_config_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().map(|x| x == "toml").unwrap_or(false))
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn run_id_for(cfg: &RunConfig, path: &Path) -> String {
    cfg.run_id.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into())
    })
}

pub struct BatchOutcome {
    pub rows: Vec<(String, std::result::Result<RunSummary, (String, i32)>)>,
    pub csv_path: PathBuf,
    pub exit_code: i32,
}

/// Run every config, aggregate a CSV ordered by run id, and return the
/// maximum child exit code.
pub fn batch(paths: &[PathBuf], jobs: usize, out_dir: &Path) -> Result<BatchOutcome> {
    let files = expand_config_paths(paths)?;
    if files.is_empty() {
        return Err(ShadowError::Config("no config files to run".into()));
    }
    std::fs::create_dir_all(out_dir)?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(String, std::result::Result<RunSummary, (String, i32)>)>> =
        Mutex::new(Vec::new());
    let jobs = jobs.max(1).min(files.len());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= files.len() {
                    break;
                }
                let path = &files[i];
                let outcome = (|| -> Result<RunSummary> {
                    let cfg = RunConfig::load(path)?;
                    let id = run_id_for(&cfg, path);
                    execute_run(&cfg, &id, None, out_dir, false)
                })();
                let id = match &outcome {
                    Ok(s) => s.run_id.clone(),
                    Err(_) => path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| format!("run{i}")),
                };
                let entry = outcome.map_err(|e| (e.to_string(), exit_code(&e)));
                results.lock().expect("batch collector").push((id, entry));
            });
        }
    });

    let mut rows = results.into_inner().expect("batch collector");
    rows.sort_by(|a, b| a.0.cmp(&b.0));

    let csv_path = out_dir.join("aggregate.csv");
    let mut csv = String::new();
    csv.push_str(
        "run_id,outcome,limit_points,distinct_limits,index_at_infinity,\
         slope_inv_lambda,slope_balance_defect,slope_vnorm,slope_center_dist,\
         tower_attempt,min_pair_floor,energy_monotone_ok,norm_drift_ok,lambda_ratio_ok\n",
    );
    let mut code = 0;
    for (id, entry) in &rows {
        match entry {
            Ok(s) => csv.push_str(&summary_csv_row(id, s)),
            Err((msg, child_code)) => {
                code = code.max(*child_code);
                let clean = msg.replace([',', '\n'], ";");
                csv.push_str(&format!(
                    "{id},error: {clean},-,-,-,-,-,-,-,-,-,-,-,-\n"
                ));
            }
        }
    }
    std::fs::write(&csv_path, csv)?;
    Ok(BatchOutcome {
        rows,
        csv_path,
        exit_code: code,
    })
}

fn fmt_slope(fit: &RateFit) -> String {
    if fit.collapsed {
        "-inf".into()
    } else {
        format!("{:.6}", fit.slope)
    }
}

fn worst_slope(fits: &[RateFit]) -> String {
    let alive: Vec<&RateFit> = fits.iter().filter(|f| !f.collapsed).collect();
    if alive.is_empty() {
        if fits.is_empty() {
            "-".into()
        } else {
            "-inf".into()
        }
    } else {
        let worst = alive
            .iter()
            .map(|f| f.slope)
            .fold(f64::NEG_INFINITY, f64::max);
        format!("{worst:.6}")
    }
}

fn summary_csv_row(id: &str, s: &RunSummary) -> String {
    let limits = if s.end.limit_points.iter().all(|p| p.is_some()) {
        s.end
            .limit_points
            .iter()
            .map(|p| format!("c{}", p.unwrap()))
            .collect::<Vec<_>>()
            .join("+")
    } else {
        "-".into()
    };
    let index = s
        .end
        .index_at_infinity
        .map(|i| i.to_string())
        .unwrap_or_else(|| "-".into());
    let (sl, sb, sv, sc) = match &s.end.rates {
        Some(r) => {
            let present: Vec<RateFit> = r.center_dist.iter().flatten().cloned().collect();
            (
                worst_slope(&r.inv_lambda),
                worst_slope(&r.balance_defect),
                fmt_slope(&r.vnorm),
                if present.len() == r.center_dist.len() {
                    worst_slope(&present)
                } else {
                    "-".into()
                },
            )
        }
        None => ("-".into(), "-".into(), "-".into(), "-".into()),
    };
    let (ta, tf) = match &s.tower {
        Some(t) => (
            t.is_tower_attempt.to_string(),
            format!("{:.6}", t.min_pair_floor),
        ),
        None => ("-".into(), "-".into()),
    };
    format!(
        "{id},{},{limits},{},{index},{sl},{sb},{sv},{sc},{ta},{tf},{},{},{}\n",
        s.outcome,
        s.end.distinct_limits,
        s.checks.energy_monotone_ok,
        s.checks.norm_drift_ok,
        s.checks.lambda_ratio_ok
    )
}

/// Digest of completed runs under a directory.
pub struct Report {
    pub text: String,
    pub exit_code: i32,
}

/// Read every `summary.json` under `dir` and render a pass/fail digest.
pub fn report(dir: &Path) -> Result<Report> {
    let mut entries: Vec<PathBuf> = match std::fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect(),
        Err(_) => Vec::new(),
    };
    entries.sort();

    let mut text = String::new();
    let mut corrupt = Vec::new();
    let mut rows = Vec::new();
    for run_dir in &entries {
        let summary = run_dir.join("summary.json");
        if !summary.exists() {
            continue;
        }
        let parsed: std::result::Result<serde_json::Value, _> =
            std::fs::read_to_string(&summary)
                .map_err(|e| e.to_string())
                .and_then(|s| serde_json::from_str(&s).map_err(|e| e.to_string()));
        match parsed {
            Ok(v) => rows.push(v),
            Err(e) => corrupt.push(format!("{}: {e}", summary.display())),
        }
    }

    if rows.is_empty() && corrupt.is_empty() {
        return Ok(Report {
            text: "nothing to report\n".into(),
            exit_code: 0,
        });
    }

    text.push_str(&format!("runs: {}\n\n", rows.len()));
    text.push_str(&format!(
        "{:<24} {:<14} {:>6} {:>8}  rates(inv_l, defect, vnorm, dist)\n",
        "run", "outcome", "index", "checks"
    ));
    let mut failed_checks = 0usize;
    let mut pass_energy = 0usize;
    let mut pass_norm = 0usize;
    let mut pass_ratio = 0usize;
    let mut with_checks = 0usize;
    for v in &rows {
        let id = v["run_id"].as_str().unwrap_or("?");
        let outcome = v["outcome"]
            .as_str()
            .map(|s| s.to_string())
            .unwrap_or_else(|| v["outcome"].to_string());
        let index = v["end"]["index_at_infinity"]
            .as_u64()
            .or_else(|| v["index_at_infinity"].as_u64())
            .map(|i| i.to_string())
            .unwrap_or_else(|| "-".into());
        let checks = &v["checks"];
        let check_str = if checks.is_object() {
            with_checks += 1;
            let e = checks["energy_monotone_ok"].as_bool().unwrap_or(false);
            let n = checks["norm_drift_ok"].as_bool().unwrap_or(false);
            let r = checks["lambda_ratio_ok"].as_bool().unwrap_or(false);
            pass_energy += e as usize;
            pass_norm += n as usize;
            pass_ratio += r as usize;
            if e && n && r {
                "ok".to_string()
            } else {
                failed_checks += 1;
                "FAIL".to_string()
            }
        } else {
            "-".to_string()
        };
        let rates = &v["end"]["rates"];
        let rate_str = if rates.is_object() {
            let pick = |key: &str| -> String {
                let f = &rates[key];
                if f.is_array() {
                    f.as_array()
                        .unwrap()
                        .iter()
                        .map(render_slope)
                        .collect::<Vec<_>>()
                        .join("/")
                } else {
                    render_slope(f)
                }
            };
            format!(
                "{} {} {} {}",
                pick("inv_lambda"),
                pick("balance_defect"),
                pick("vnorm"),
                pick("center_dist")
            )
        } else {
            "-".into()
        };
        text.push_str(&format!(
            "{id:<24} {outcome:<14} {index:>6} {check_str:>8}  {rate_str}\n"
        ));
    }
    text.push_str("\ninvariant matrix:\n");
    text.push_str(&format!(
        "  energy monotone : {pass_energy}/{with_checks}\n  norm drift      : {pass_norm}/{with_checks}\n  scale ratio     : {pass_ratio}/{with_checks}\n"
    ));
    if !corrupt.is_empty() {
        text.push_str("\ncorrupt or unreadable summaries:\n");
        for c in &corrupt {
            text.push_str(&format!("  {c}\n"));
        }
    }
    Ok(Report {
        exit_code: if failed_checks > 0 { 1 } else { 0 },
        text,
    })
}

fn render_slope(f: &serde_json::Value) -> String {
    if f["collapsed"].as_bool().unwrap_or(false) {
        "-inf".into()
    } else if let Some(s) = f["slope"].as_f64() {
        format!("{s:.3}")
    } else {
        "-".into()
    }
}
