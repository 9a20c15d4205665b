//! The `fedsplit` command line: `run`, `audit`, `report`, `validate`.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 rejected configuration or
//! missing inputs, 3 invariant violation or failed audit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::orchestrator::{self, theory, FLConfig, Mode, RoundMetrics, RunOptions, RunOutput, Setup, TheoremConstants};
use crate::privacy_audit::{self, DpAuditRow, WitnessCheck};
use crate::rng::{Purpose, Streams};
use crate::{Error, ModelVec, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "fedsplit", version, about = "Federated learning with model splitting: simulator and audits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train for every (sweep point, seed) and write metrics.
    Run(RunArgs),
    /// Record a consensus trace and check the privacy constructions on it.
    Audit(AuditArgs),
    /// Turn a run directory into plot-ready tables.
    Report(ReportArgs),
    /// Validate a configuration and print the derived constants.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's mode; may be repeated or comma separated.
    #[arg(long, value_delimiter = ',')]
    pub mode: Vec<Mode>,
    /// `a..b` (end exclusive), `a..=b`, or a comma-separated list.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// `key=v1,v2,...`; keys are config fields, dotted paths, or the
    /// aliases B, M, eps_split, gamma_max, spread.
    #[arg(long)]
    pub sweep: Vec<String>,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Where to write the audit JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-3, 1.0, 1e3, 1e6])]
    pub magnitudes: Vec<f64>,
    /// Witness tuples per magnitude.
    #[arg(long, default_value_t = 4)]
    pub pairs: usize,
    /// Learning round whose consensus phase is audited.
    #[arg(long, default_value_t = 1)]
    pub round: usize,
    /// Negative control: replay a mutated witness instead of the real one.
    #[arg(long)]
    pub mutate: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory written by `run`.
    pub run_dir: PathBuf,
    /// Defaults to `<run_dir>/report`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub mode: Option<Mode>,
}

impl std::str::FromStr for crate::orchestrator::config::BitBudgetPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.into())).map_err(|_| Error::InvalidParameter(format!("unknown policy `{s}`")))
    }
}

/// Maps an error to its exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Csv(_) => EXIT_IO,
        e if e.is_validation() => EXIT_VALIDATION,
        _ => EXIT_INVARIANT,
    }
}

pub fn main_with(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Audit(a) => cmd_audit(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Validate(a) => cmd_validate(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || Error::InvalidParameter(format!("cannot parse seed list `{spec}`"));
    let seeds: Vec<u64> = if let Some((a, b)) = spec.split_once("..=") {
        (a.trim().parse().map_err(|_| bad())?..=b.trim().parse().map_err(|_| bad())?).collect()
    } else if let Some((a, b)) = spec.split_once("..") {
        (a.trim().parse().map_err(|_| bad())?..b.trim().parse().map_err(|_| bad())?).collect()
    } else {
        spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn sweep_path(key: &str) -> Vec<String> {
    let alias: &[&str] = match key {
        "B" => &["bits"],
        "M" => &["clients_per_round"],
        "E" => &["local_steps"],
        "T" => &["rounds"],
        "eps_split" => &["split", "eps_split"],
        "gamma_max" => &["gamma"],
        "spread" => &["problem", "spread"],
        "target_gamma" => &["problem", "target_gamma"],
        _ => return key.split('.').map(String::from).collect(),
    };
    alias.iter().map(|s| s.to_string()).collect()
}

/// Parsed `--sweep` axes, in the order given.
pub fn parse_sweeps(args: &[String]) -> Result<Vec<(String, Vec<Value>)>> {
    args.iter()
        .map(|a| {
            let (k, vs) = a
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("sweep `{a}` must look like key=v1,v2")))?;
            let values = vs
                .split(',')
                .map(|v| serde_json::from_str(v.trim()).unwrap_or_else(|_| Value::String(v.trim().into())))
                .collect::<Vec<_>>();
            if values.is_empty() {
                return Err(Error::InvalidParameter(format!("sweep `{a}` has no values")));
            }
            Ok((k.to_string(), values))
        })
        .collect()
}

fn set_path(doc: &mut Value, path: &[String], v: Value) -> Result<()> {
    let mut cur = doc;
    for (n, key) in path.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::InvalidParameter(format!("sweep path `{}` is not an object", path.join("."))))?;
        if n + 1 == path.len() {
            obj.insert(key.clone(), v);
            return Ok(());
        }
        cur = obj.entry(key.clone()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// One point of the sweep grid: a label and its patched config.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub label: String,
    pub config: FLConfig,
}

pub fn expand_sweep(base: &Value, modes: &[Mode], axes: &[(String, Vec<Value>)]) -> Result<Vec<SweepPoint>> {
    let base_mode: Mode = serde_json::from_value(base.get("mode").cloned().unwrap_or(Value::Null))?;
    let modes = if modes.is_empty() { vec![base_mode] } else { modes.to_vec() };
    let mut grid: Vec<(Vec<String>, Value)> = vec![(Vec::new(), base.clone())];
    for (key, values) in axes {
        let path = sweep_path(key);
        let mut next = Vec::with_capacity(grid.len() * values.len());
        for (labels, doc) in &grid {
            for v in values {
                let mut d = doc.clone();
                set_path(&mut d, &path, v.clone())?;
                let mut l = labels.clone();
                let shown = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                l.push(format!("{key}={shown}"));
                next.push((l, d));
            }
        }
        grid = next;
    }
    let mut points = Vec::new();
    for mode in modes {
        for (labels, doc) in &grid {
            let mut d = doc.clone();
            set_path(&mut d, &["mode".into()], serde_json::to_value(mode)?)?;
            let mut label = mode.name().to_string();
            for l in labels {
                label.push('_');
                label.push_str(l);
            }
            points.push(SweepPoint { label, config: serde_json::from_value(d)? });
        }
    }
    Ok(points)
}

/// Writes via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn metrics_csv(rows: &[RoundMetrics]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<RoundMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Everything needed to reproduce a sweep point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub label: String,
    pub config: FLConfig,
    pub seeds: Vec<u64>,
    pub constants: ManifestConstants,
    pub theory: TheoremConstants,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestConstants {
    pub mu: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub gamma_het: f64,
    #[serde(rename = "G")]
    pub g: f64,
    pub sigma: Vec<f64>,
    #[serde(rename = "C")]
    pub c: f64,
    pub lambda: f64,
    pub probe_factor: f64,
    pub lambda2_u: f64,
    pub lambda_min_u: f64,
    pub pi_tilde: f64,
    pub w_tilde_max: f64,
    pub vartheta: f64,
    pub w_max_norm: f64,
    pub w_star: Vec<f64>,
    pub f_star: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_gate: Option<f64>,
    #[serde(rename = "D1")]
    pub d1: f64,
    #[serde(rename = "D2")]
    pub d2: f64,
    #[serde(rename = "D3")]
    pub d3: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub label: String,
    pub seeds: usize,
    pub final_gap_mean: f64,
    pub final_gap_std: f64,
    pub uploads_per_seed: u64,
    pub bits_per_seed_mean: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 { xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, v.sqrt())
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("FEDSPLIT_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("FEDSPLIT_THREADS=`{v}` is not a count")))?;
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| Error::Numeric(e.to_string()))
}

fn read_config_value(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Runs every seed of one resolved sweep point.
pub fn run_point(setup: &Setup, seeds: &[u64]) -> Result<Vec<(u64, RunOutput)>> {
    seeds
        .par_iter()
        .map(|&s| {
            let mut st = setup.clone();
            st.config.seed = s;
            orchestrator::run(&st, &RunOptions::default()).map(|o| (s, o))
        })
        .collect()
}

fn manifest_entry(label: &str, setup: &Setup, seeds: &[u64], outs: &[(u64, RunOutput)]) -> Result<ManifestEntry> {
    let pi_tilde = outs.iter().map(|(_, o)| o.pi_tilde).fold(0.0, f64::max);
    let w_tilde_max = outs.iter().map(|(_, o)| o.w_tilde_max).fold(0.0, f64::max);
    let theory = orchestrator::theorem_constants(&orchestrator::bound_inputs(setup, setup.config.mode, pi_tilde))?;
    let c = &setup.constants;
    Ok(ManifestEntry {
        label: label.to_string(),
        config: setup.config.clone(),
        seeds: seeds.to_vec(),
        constants: ManifestConstants {
            mu: c.mu,
            l: c.l,
            gamma_het: c.gamma_het,
            g: c.g,
            sigma: c.sigma.clone(),
            c: setup.c_fit,
            lambda: setup.config.lambda,
            probe_factor: setup.probe.factor(),
            lambda2_u: setup.u.lambda2(),
            lambda_min_u: setup.u.lambda_min(),
            pi_tilde,
            w_tilde_max,
            vartheta: setup.vartheta,
            w_max_norm: c.w_max_norm,
            w_star: c.w_star.iter().copied().collect(),
            f_star: c.f_star,
            bit_gate: setup.quant.as_ref().map(|q| q.bit_gate),
            d1: theory.d1,
            d2: theory.d2,
            d3: theory.d3,
        },
        theory,
    })
}

pub fn cmd_run(a: &RunArgs) -> Result<i32> {
    let base = read_config_value(&a.config)?;
    let seeds = parse_seeds(&a.seeds)?;
    let points = expand_sweep(&base, &a.mode, &parse_sweeps(&a.sweep)?)?;
    // Validate every point before any work starts.
    let setups = points.iter().map(|p| p.config.resolve()).collect::<Result<Vec<_>>>()?;
    let pool = thread_pool()?;
    let mut manifest = Vec::with_capacity(points.len());
    let mut summary = Vec::with_capacity(points.len());
    for (p, setup) in points.iter().zip(&setups) {
        let outs = pool.install(|| run_point(setup, &seeds))?;
        for (s, o) in &outs {
            write_atomic(&a.out.join(&p.label).join(format!("seed_{s}.csv")), &metrics_csv(&o.metrics)?)?;
        }
        let finals: Vec<f64> = outs.iter().map(|(_, o)| o.metrics.last().map(|m| m.gap).unwrap_or(0.0)).collect();
        let bits: Vec<f64> = outs.iter().map(|(_, o)| o.metrics.iter().map(|m| m.bits).sum::<u64>() as f64).collect();
        let (gm, gs) = mean_std(&finals);
        summary.push(SummaryEntry {
            label: p.label.clone(),
            seeds: seeds.len(),
            final_gap_mean: gm,
            final_gap_std: gs,
            uploads_per_seed: outs.first().map(|(_, o)| theory::comm_counter(&o.metrics)).unwrap_or(0),
            bits_per_seed_mean: mean_std(&bits).0,
        });
        manifest.push(manifest_entry(&p.label, setup, &seeds, &outs)?);
        eprintln!("{}: final gap {gm:.4e} ± {gs:.1e} over {} seeds", p.label, seeds.len());
    }
    write_atomic(&a.out.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    write_atomic(&a.out.join("summary.json"), &serde_json::to_vec_pretty(&summary)?)?;
    Ok(EXIT_OK)
}

pub fn cmd_validate(a: &ValidateArgs) -> Result<i32> {
    let mut cfg: FLConfig = serde_json::from_value(read_config_value(&a.config)?)?;
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    let setup = cfg.resolve()?;
    let entry = manifest_entry("validate", &setup, &[cfg.seed], &[])?;
    println!("{}", serde_json::to_string_pretty(&entry.constants)?);
    Ok(EXIT_OK)
}

/// Full audit report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditReport {
    pub pass: bool,
    pub mutate: bool,
    pub witness_checks: Vec<WitnessCheck>,
    pub witness_redraws: usize,
    pub z_attack: ZAttackCheck,
    pub dp: Vec<DpAuditRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZAttackCheck {
    pub slot: usize,
    pub true_m: usize,
    pub relative_error_known_m: f64,
    pub paired_view_deviation: f64,
    pub paired_attack_deviation: f64,
    pub pass: bool,
}

/// Runs the unquantized protocol up to `round` and returns the recorded
/// consensus trace of that round.
pub fn capture_trace(cfg: &FLConfig, round: usize) -> Result<crate::consensus::Trace> {
    let mut c = cfg.clone();
    c.mode = Mode::Msp;
    c.rounds = round.max(1);
    let setup = c.resolve()?;
    let out = orchestrator::run(&setup, &RunOptions { trace_rounds: vec![c.rounds] })?;
    out.traces
        .into_iter()
        .next()
        .ok_or_else(|| Error::Integrity("no trace was recorded".into()))
}

/// Witness tuples over the given magnitudes and how many draws were
/// rejected as degenerate or below [`privacy_audit::CONDITION_FLOOR`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WitnessSweep {
    pub checks: Vec<WitnessCheck>,
    pub redraws: usize,
}

pub fn witness_sweep(
    trace: &crate::consensus::Trace,
    magnitudes: &[f64],
    pairs: usize,
    seed: u64,
    mutate: bool,
) -> Result<WitnessSweep> {
    let slots = trace.client_ids.len();
    if slots < 2 {
        return Err(Error::InvalidParameter("witness audits need at least two clients per round".into()));
    }
    let d = trace.states[0].dim();
    let streams = Streams::new(seed);
    let mut checks = Vec::new();
    let mut redraws = 0;
    for (mi, &mag) in magnitudes.iter().enumerate() {
        for n in 0..pairs {
            let mut rng = streams.stream(Purpose::Witness, mi as u64, n as u64, 0);
            let mut done = false;
            for _attempt in 0..64 {
                let mut order: Vec<usize> = (0..slots).collect();
                order.shuffle(&mut rng);
                let (i, j) = (order[0], order[1]);
                let n_corrupt = rng.gen_range(0..=slots - 2);
                let corrupted: Vec<usize> = order[2..2 + n_corrupt].to_vec();
                let dir = ModelVec::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
                let e = &dir * (mag / dir.norm());
                let conditioned = match privacy_audit::construct_witness(trace, i, j, &e) {
                    Ok(w) => w.min_denominator()? >= privacy_audit::CONDITION_FLOOR,
                    Err(Error::DegenerateWitness(_)) => false,
                    Err(e) => return Err(e),
                };
                if !conditioned {
                    redraws += 1;
                    continue;
                }
                let mut c = privacy_audit::audit_witness(trace, i, j, &e, &corrupted)?;
                if mutate {
                    let bad = c.witness.mutated(c.witness.params()[0]);
                    let view = privacy_audit::record_view(trace, &corrupted, &[i, j])?;
                    c.replay = privacy_audit::replay_and_compare(&bad, &view)?;
                }
                checks.push(c);
                done = true;
                break;
            }
            if !done {
                return Err(Error::DegenerateWitness(format!(
                    "no witness with denominators above {} after 64 draws; the trace coordinates are too close together",
                    privacy_audit::CONDITION_FLOOR
                )));
            }
        }
    }
    Ok(WitnessSweep { checks, redraws })
}

pub fn z_attack_check(trace: &crate::consensus::Trace, slot: usize) -> Result<ZAttackCheck> {
    let view = privacy_audit::record_view(trace, &[], &[])?;
    let m = trace.states[0].clients[slot].m();
    let truth = &trace.states[0].clients[slot].origin;
    let est = privacy_audit::z_inference_attack(&view, slot, m)?;
    let rel = (&est - truth).norm() / truth.norm().max(f64::MIN_POSITIVE);
    let paired = privacy_audit::paired_for_slot(trace, slot)?;
    let pview = privacy_audit::record_view(&paired, &[], &[])?;
    let view_dev = privacy_audit::compare_views(&view, &pview).max_deviation;
    let est2 = privacy_audit::z_inference_attack(&pview, slot, m)?;
    let attack_dev = (&est2 - &est).amax();
    Ok(ZAttackCheck {
        slot,
        true_m: m,
        relative_error_known_m: rel,
        paired_view_deviation: view_dev,
        paired_attack_deviation: attack_dev,
        pass: view_dev <= privacy_audit::REPLAY_TOL && attack_dev <= privacy_audit::REPLAY_TOL,
    })
}

pub fn cmd_audit(a: &AuditArgs) -> Result<i32> {
    let cfg: FLConfig = serde_json::from_value(read_config_value(&a.config)?)?;
    if a.magnitudes.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
        return Err(Error::InvalidParameter("perturbation magnitudes must be positive".into()));
    }
    let trace = capture_trace(&cfg, a.round)?;
    let WitnessSweep { checks, redraws } = witness_sweep(&trace, &a.magnitudes, a.pairs, cfg.seed, a.mutate)?;
    let z = z_attack_check(&trace, 0)?;
    let mut rng = Streams::new(cfg.seed).stream(Purpose::Witness, u64::MAX, 0, 0);
    let dp_cfgs: Vec<_> = (0..20).map(|_| privacy_audit::random_dp_config(&mut rng)).collect();
    let dp = privacy_audit::quantizer_dp_audit(&dp_cfgs)?;
    let pass = checks.iter().all(|c| c.pass()) && z.pass && dp.iter().all(|r| r.pass);
    let report = AuditReport { pass, mutate: a.mutate, witness_checks: checks, witness_redraws: redraws, z_attack: z, dp };
    let json = serde_json::to_vec_pretty(&report)?;
    match &a.out {
        Some(p) => write_atomic(p, &json)?,
        None => println!("{}", String::from_utf8_lossy(&json)),
    }
    eprintln!("audit {}", if pass { "passed" } else { "FAILED" });
    Ok(if pass { EXIT_OK } else { EXIT_INVARIANT })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub label: String,
    pub rho: f64,
    pub measured_uploads: Option<u64>,
    pub bound: f64,
}

pub fn cmd_report(a: &ReportArgs) -> Result<i32> {
    let manifest_path = a.run_dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::InvalidParameter(format!("no manifest at {}", manifest_path.display())));
    }
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    let out = a.out.clone().unwrap_or_else(|| a.run_dir.join("report"));
    let mut complexity = Vec::new();
    let mut flagged = BTreeMap::new();
    for entry in &manifest {
        let mut runs = Vec::new();
        for s in &entry.seeds {
            let p = a.run_dir.join(&entry.label).join(format!("seed_{s}.csv"));
            if !p.exists() {
                return Err(Error::InvalidParameter(format!("missing run {}", p.display())));
            }
            runs.push(read_metrics_csv(&p)?);
        }
        let rows = runs.iter().map(Vec::len).min().unwrap_or(0);
        let mut gap = csv::Writer::from_writer(Vec::new());
        gap.write_record(["t", "mean", "std", "bound"])?;
        let mut bits = csv::Writer::from_writer(Vec::new());
        bits.write_record(["t", "bits_mean", "cumulative_bits_mean", "uploads"])?;
        let mut cumulative = 0.0;
        let mut violations = 0usize;
        let mut dist = Vec::with_capacity(rows);
        let mut uploads = Vec::with_capacity(rows);
        for r in 0..rows {
            let t = runs[0][r].t;
            let (m, s) = mean_std(&runs.iter().map(|x| x[r].gap).collect::<Vec<_>>());
            let bound = entry.theory.bound_curve(t);
            if m > bound {
                violations += 1;
            }
            gap.write_record([t.to_string(), m.to_string(), s.to_string(), bound.to_string()])?;
            let b = mean_std(&runs.iter().map(|x| x[r].bits as f64).collect::<Vec<_>>()).0;
            cumulative += b;
            bits.write_record([t.to_string(), b.to_string(), cumulative.to_string(), runs[0][r].uploads.to_string()])?;
            dist.push(mean_std(&runs.iter().map(|x| x[r].dist_sq).collect::<Vec<_>>()).0);
            uploads.push(runs[0][r].uploads);
        }
        let dir = out.join(&entry.label);
        write_atomic(&dir.join("gap_vs_t.csv"), &gap.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
        write_atomic(&dir.join("bits_vs_t.csv"), &bits.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
        if violations > 0 {
            eprintln!("warning: {}: mean gap above the bound at {violations} rounds", entry.label);
        }
        flagged.insert(entry.label.clone(), violations);
        for rho in [1e-1, 1e-2] {
            complexity.push(ComplexityRow {
                label: entry.label.clone(),
                rho,
                measured_uploads: theory::uploads_to_reach(rho, entry.theory.init_dist_sq, &dist, &uploads),
                bound: orchestrator::comm_complexity_bound(rho, &entry.theory)?,
            });
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &complexity {
        w.serialize(row)?;
    }
    write_atomic(&out.join("complexity.csv"), &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
    write_atomic(&out.join("bound_violations.json"), &serde_json::to_vec_pretty(&flagged)?)?;
    Ok(EXIT_OK)
}
