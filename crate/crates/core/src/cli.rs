//! `hierarchy` command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 invalid configuration or input, 4 numerical fault.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::experiment::{self, ProtocolConfig, TraceSet};
use crate::io;
use crate::liouvillian::{build_adjoint_superoperator, KossakowskiMatrix, LindbladSet, SpectrumSpec, MAX_DENSE_SITES};
use crate::par;
use crate::perturbation::{argmax_order, channel_weights, cluster_table_with, order_center, turnback_k, HierarchyParams};
use crate::spectral::eigendecompose;
use crate::topology::Topology;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "hierarchy", version, about = "Dissipative timescale hierarchies of local Liouvillians and noisy circuits")]
pub struct Cli {
    /// Validate inputs and print the execution plan without computing.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Upper bound on worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a random Liouvillian, diagonalize it and compare with zeroth-order theory.
    Liouville(LiouvilleArgs),
    /// Run a noisy waiting-circuit protocol into a trace store.
    Simulate(SimulateArgs),
    /// Extract rates from a trace store and fit the hierarchy.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct LiouvilleArgs {
    /// Number of qubits.
    #[arg(long = "l")]
    pub l: usize,
    /// Body order of the Lindblad operators (1 or 2).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub bodies: u8,
    /// Connectivity, e.g. chain:5, complete:4, custom:4:1-2,2-3 (default chain:ℓ).
    #[arg(long)]
    pub topo: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Kossakowski spectrum: uniform, uniform:a:b, exponential, constant.
    #[arg(long, default_value = "uniform")]
    pub dist: String,
    /// Use K = d I instead of a random matrix.
    #[arg(long)]
    pub k_identity: bool,
    #[arg(long, default_value = "out/liouville")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out/run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trace store written by `simulate`.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value = "out/analysis")]
    pub out: PathBuf,
    /// Number of harmonic-inversion basis functions (0: a quarter of the trace length).
    #[arg(long, default_value_t = 0)]
    pub max_modes: usize,
    /// Relative amplitude floor for spurious-mode filtering.
    #[arg(long)]
    pub amp_floor: Option<f64>,
    /// Largest inversion error estimate a kept mode may have.
    #[arg(long)]
    pub err_ceiling: Option<f64>,
    /// Minimum |y(0)| for a trace to be analyzed.
    #[arg(long)]
    pub min_signal: Option<f64>,
    /// Skip the least-squares refinement and BIC pruning.
    #[arg(long)]
    pub no_refine: bool,
}

/// Provenance record written before and after every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub seeds: Vec<(String, u64)>,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    fn begin(command: &str, config_path: Option<&Path>, seeds: Vec<(String, u64)>) -> Self {
        RunManifest {
            command: command.into(),
            config_path: config_path.map(|p| p.display().to_string()),
            seeds,
            code_version: env!("CARGO_PKG_VERSION").into(),
            started_unix: unix_now(),
            finished_unix: None,
            status: "running".into(),
            outputs: Vec::new(),
        }
    }

    fn write(&self, dir: &Path) -> crate::Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        io::write_file(&dir.join("manifest.toml"), &text)
    }

    fn finish(&mut self, dir: &Path, status: &str, outputs: Vec<PathBuf>) -> crate::Result<()> {
        self.finished_unix = Some(unix_now());
        self.status = status.into();
        self.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
        self.write(dir)
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError { code: EXIT_USAGE, message: e.to_string() }
}

fn config(e: impl std::fmt::Display) -> CliError {
    CliError { code: EXIT_CONFIG, message: e.to_string() }
}

/// Map a library error raised while computing.
fn compute(e: Error) -> CliError {
    match e {
        Error::Config(_) | Error::Parse(_) => config(e),
        other => CliError { code: EXIT_NUMERICAL, message: other.to_string() },
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(report) => {
            print!("{report}");
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

/// Run a parsed command and return its textual report.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    par::with_jobs(cli.jobs, || match &cli.command {
        Command::Liouville(a) => cmd_liouville(a, cli.dry_run),
        Command::Simulate(a) => cmd_simulate(a, cli.dry_run),
        Command::Analyze(a) => cmd_analyze(a, cli.dry_run),
    })
}

pub fn cmd_liouville(a: &LiouvilleArgs, dry_run: bool) -> Result<String, CliError> {
    let l = a.l;
    if !(1..=MAX_DENSE_SITES).contains(&l) {
        return Err(usage(format!("--l {l} outside 1..={MAX_DENSE_SITES}")));
    }
    let topo_text = a.topo.clone().unwrap_or_else(|| format!("chain:{l}"));
    let topo: Option<Topology> = if l >= 2 || a.topo.is_some() {
        Some(topo_text.parse().map_err(usage)?)
    } else {
        None
    };
    if let Some(t) = &topo {
        if t.sites() != l {
            return Err(usage(format!("topology {t} has {} sites but --l is {l}", t.sites())));
        }
    }
    let set = match (a.bodies, &topo) {
        (1, _) => LindbladSet::one_body(l),
        (_, Some(t)) => LindbladSet::two_body(t),
        _ => return Err(usage("two-body channels need ℓ ≥ 2")),
    }
    .map_err(usage)?;
    let spec: SpectrumSpec = a.dist.parse().map_err(usage)?;
    let n = set.count();
    let mut plan = String::new();
    let _ = writeln!(plan, "model: {} with {n} channels (ℓ = {l})", set.describe());
    let _ = writeln!(plan, "kossakowski: {}, seed {}", if a.k_identity { "d I".to_string() } else { spec.to_string() }, a.seed);
    let _ = writeln!(plan, "superoperator: {0}×{0} dense", 1usize << (2 * l));
    let _ = writeln!(plan, "outputs: {}", a.out.display());
    if dry_run {
        return Ok(format!("[dry run]\n{plan}"));
    }

    let mut manifest = RunManifest::begin("liouville", None, vec![("seed".into(), a.seed)]);
    manifest.write(&a.out).map_err(config)?;
    let k = if a.k_identity {
        KossakowskiMatrix::scaled_identity(n, l)
    } else {
        KossakowskiMatrix::sample(n, l, a.seed, &spec).map_err(compute)?
    };
    let lm = build_adjoint_superoperator(&set, &k).map_err(compute)?;
    let spectrum = eigendecompose(&lm).map_err(compute)?;
    let (d1, d2) = channel_weights(&set, &k).map_err(compute)?;
    let header: io::Header = vec![
        ("sites".into(), l.to_string()),
        ("channels".into(), n.to_string()),
        ("seed".into(), a.seed.to_string()),
        ("topology".into(), topo.as_ref().map_or("none".into(), |t| t.to_string())),
        ("bodies".into(), a.bodies.to_string()),
        ("distribution".into(), if a.k_identity { "identity".into() } else { spec.to_string() }),
    ];
    let mut outputs = Vec::new();
    let mut put = |name: &str, text: String| -> Result<(), CliError> {
        let p = a.out.join(name);
        io::write_file(&p, &text).map_err(compute)?;
        outputs.push(p);
        Ok(())
    };
    put("liouvillian.txt", io::render_matrix(&header, lm.matrix()))?;
    put("kossakowski.txt", io::render_matrix(&header, k.matrix()))?;
    put("spectrum.txt", io::render_spectrum(&header, &spectrum))?;

    let mut report = plan.clone();
    let _ = writeln!(report, "d1 = {d1:.6}, d2 = {d2:.6}, max Re λ = {:.3e}", spectrum.max_real());
    let mut pred = String::new();
    for (key, v) in &header {
        io::header_line(&mut pred, key, v);
    }
    let _ = writeln!(pred, "# d1: {d1:.17e}\n# d2: {d2:.17e}");
    if let Some(t) = &topo {
        put("cluster_table.txt", io::render_cluster_table(&header, &cluster_table_with(t, d1, d2).map_err(compute)?))?;
        let means = spectrum.weighted_cluster_means();
        let _ = writeln!(pred, "# columns: k zeroth_order_rate ed_mean_rate ed_count");
        let _ = writeln!(report, "k  zeroth-order  ED mean");
        for kk in 1..=l {
            let theory = -order_center(kk, t, d1, d2).map_err(compute)?;
            let (m, c) = means.get(&kk).map_or((f64::NAN, 0), |c| (c.mean_rate, c.count));
            let _ = writeln!(pred, "{kk} {theory:.17e} {m:.17e} {c}");
            let _ = writeln!(report, "{kk}  {theory:>12.6}  {m:>10.6}");
        }
        if let Ok(p) = HierarchyParams::from_channel_weights(t, d1, d2) {
            let ks = turnback_k(&p).map_or("none".into(), |v| format!("{v:.6}"));
            let _ = writeln!(pred, "# alpha: {:.17e}\n# beta: {:.17e}\n# turnback_k: {ks}\n# argmax_k: {}", p.alpha, p.beta, argmax_order(&p));
            let _ = writeln!(report, "α = {:.6}, β = {:.6}, k* = {ks}, predicted argmax {}", p.alpha, p.beta, argmax_order(&p));
        }
    }
    put("predictions.txt", pred)?;
    manifest.finish(&a.out, "ok", outputs).map_err(compute)?;
    Ok(report)
}

pub fn cmd_simulate(a: &SimulateArgs, dry_run: bool) -> Result<String, CliError> {
    let cfg = ProtocolConfig::load(&a.config).map_err(config)?;
    let protocol = cfg.validate().map_err(config)?;
    let store = a.out.join("traces.txt");
    let plan = format!("{}store: {}\n", protocol.plan(), store.display());
    if dry_run {
        return Ok(format!("[dry run]\n{plan}"));
    }
    let seeds = vec![
        ("circuit".into(), cfg.seeds.circuit),
        ("states".into(), cfg.seeds.states),
        ("shots".into(), cfg.seeds.shots),
    ];
    let mut manifest = RunManifest::begin("simulate", Some(&a.config), seeds);
    manifest.write(&a.out).map_err(config)?;
    let config_copy = a.out.join("config.toml");
    io::write_file(&config_copy, &cfg.to_toml()).map_err(compute)?;
    match experiment::run_protocol(&protocol, Some(&store)) {
        Ok(set) => {
            manifest.finish(&a.out, "ok", vec![store.clone(), config_copy]).map_err(compute)?;
            Ok(format!("{plan}wrote {} records\n", set.records.len()))
        }
        Err(e) => {
            let _ = manifest.finish(&a.out, "failed", vec![store]);
            Err(compute(e))
        }
    }
}

pub fn cmd_analyze(a: &AnalyzeArgs, dry_run: bool) -> Result<String, CliError> {
    let set = TraceSet::load(&a.store).map_err(config)?;
    if set.records.is_empty() {
        return Err(config(format!("trace store {} is empty", a.store.display())));
    }
    let mut hc = experiment::HinvConfig { max_modes: a.max_modes, refine: !a.no_refine, ..Default::default() };
    if let Some(v) = a.amp_floor {
        hc.amp_floor_rel = v;
    }
    if let Some(v) = a.err_ceiling {
        hc.err_ceiling = v;
    }
    if let Some(v) = a.min_signal {
        hc.min_signal = v;
    }
    let mut errs = Vec::new();
    hc.check_public(&mut errs);
    if !errs.is_empty() {
        return Err(config(Error::Config(errs)));
    }
    let traces = set.traces();
    let plan = format!(
        "store {} ({} records, {} traces)\noutputs: {}\n",
        a.store.display(),
        set.records.len(),
        traces.len(),
        a.out.display()
    );
    if dry_run {
        return Ok(format!("[dry run]\n{plan}"));
    }
    let mut manifest = RunManifest::begin("analyze", Some(&a.store), Vec::new());
    manifest.write(&a.out).map_err(config)?;
    let result = experiment::analyze(&set, &hc.params()).map_err(compute)?;
    let outputs = experiment::write_results(&result, &a.out).map_err(compute)?;
    manifest.finish(&a.out, "ok", outputs).map_err(compute)?;

    let mut report = plan;
    let _ = writeln!(report, "analyzed {} traces, flagged {}", result.traces.len() - result.flagged().count(), result.flagged().count());
    for (k, s) in &result.clusters.orders {
        let _ = writeln!(report, "k = {k}: mean rate {:.6e} ({} traces)", s.mean_rate, s.traces);
    }
    let am = result.argmax_order().map_or("none".into(), |k| k.to_string());
    match &result.fit {
        Ok(f) => {
            let ks = f.turnback().map_or("none".into(), |v| format!("{v:.3}"));
            let _ = writeln!(report, "fit α = {:.6e}, β = {:.6e}; measured argmax k = {am}, predicted turnback k* = {ks}", f.alpha, f.beta);
        }
        Err(e) => {
            let _ = writeln!(report, "no hierarchy fit ({e}); measured argmax k = {am}");
        }
    }
    if let Some(s) = &result.subclusters {
        let _ = writeln!(report, "χ²_stat = {:.3} (pruned {:.3}), sign agreement {:.1}%", s.chi2, s.chi2_pruned, 100.0 * s.sign_agreement);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        std::iter::once("hierarchy".to_string()).chain(s.split_whitespace().map(String::from)).collect()
    }

    #[test]
    fn missing_flag_is_a_usage_error() {
        assert_eq!(run(argv("liouville --bodies 1")), EXIT_USAGE);
        assert_eq!(run(argv("liouville --l 3 --bodies 3")), EXIT_USAGE);
        assert_eq!(run(argv("frobnicate")), EXIT_USAGE);
    }

    #[test]
    fn identity_liouvillian_levels() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("l3");
        let cmd = format!("liouville --l 3 --bodies 1 --seed 7 --k-identity --out {}", out.display());
        assert_eq!(run(argv(&cmd)), 0);
        let spec = io::parse_spectrum(&std::fs::read_to_string(out.join("spectrum.txt")).unwrap()).unwrap();
        let d = 8.0 / 9.0;
        let mut levels: Vec<f64> = spec.iter().map(|(l, _)| l.re).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        assert_eq!(levels.len(), 4);
        for (lv, k) in levels.iter().rev().zip(0..) {
            assert!((lv + 4.0 * d * k as f64).abs() < 1e-9, "{levels:?}");
        }
        let m: RunManifest = toml::from_str(&std::fs::read_to_string(out.join("manifest.toml")).unwrap()).unwrap();
        assert_eq!(m.status, "ok");
        assert!(m.finished_unix.is_some());
    }

    #[test]
    fn two_body_header_reports_channel_count() {
        let cli = Cli::try_parse_from(argv("--dry-run liouville --l 5 --bodies 2 --topo chain:5")).unwrap();
        let report = execute(&cli).unwrap();
        assert!(report.contains("51 channels"), "{report}");
    }

    #[test]
    fn simulate_and_analyze_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.toml");
        std::fs::write(&cfg_path, "l = 2\nt_max = 24\nshots = 0\n[noise]\np1 = 0.02\n").unwrap();
        let run_dir = dir.path().join("run");
        let sim = format!("simulate --config {} --out {}", cfg_path.display(), run_dir.display());
        assert_eq!(run(argv(&sim)), 0);
        let first = std::fs::read(run_dir.join("traces.txt")).unwrap();
        let run2 = dir.path().join("run2");
        assert_eq!(run(argv(&format!("simulate --config {} --out {}", cfg_path.display(), run2.display()))), 0);
        assert_eq!(std::fs::read(run2.join("traces.txt")).unwrap(), first);

        let ana = dir.path().join("ana");
        let cmd = format!("analyze --store {} --out {}", run_dir.join("traces.txt").display(), ana.display());
        assert_eq!(run(argv(&cmd)), 0);
        let results = std::fs::read_to_string(ana.join("results.txt")).unwrap();
        for section in ["[modes]", "[clusters]", "[fit]", "[subclusters]", "[chi2]"] {
            assert!(results.contains(section), "{section}");
        }
        let ana2 = dir.path().join("ana2");
        let cmd2 = format!("analyze --store {} --out {}", run_dir.join("traces.txt").display(), ana2.display());
        assert_eq!(run(argv(&cmd2)), 0);
        assert_eq!(std::fs::read_to_string(ana2.join("results.txt")).unwrap(), results);
    }

    #[test]
    fn invalid_config_exit_code() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("bad.toml");
        std::fs::write(&cfg_path, "l = 1\nfamily = \"W9\"\n").unwrap();
        let cmd = format!("simulate --config {} --out {}", cfg_path.display(), dir.path().join("o").display());
        assert_eq!(run(argv(&cmd)), EXIT_CONFIG);
        let missing = format!("analyze --store {}", dir.path().join("none.txt").display());
        assert_eq!(run(argv(&missing)), EXIT_CONFIG);
    }

    #[test]
    fn dry_run_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.toml");
        std::fs::write(&cfg_path, "l = 3\n").unwrap();
        let out = dir.path().join("o");
        let cmd = format!("--dry-run simulate --config {} --out {}", cfg_path.display(), out.display());
        assert_eq!(run(argv(&cmd)), 0);
        assert!(!out.exists());
    }
}
