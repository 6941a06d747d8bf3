//! Command-line driver: config loading, output files, manifest and resume.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{crossover_report, fit_stable_constant, slope_fit, CrossoverCell};
use crate::brw::brw_ratio_curve;
use crate::config::{calibrate_valpha, ExperimentConfig, ModelKind, PercolationSection};
use crate::diagrams::{
    frac_moment_check, jhat, kdelta, oscillatory_power_integral, shifted_j_moment, triangle_proxy,
    DhatModel, DiagramValue,
};
use crate::error::{invalid, Error, Result};
use crate::kernel::{KernelTable, StepKernel};
use crate::percolation::{
    estimate_gyration, estimate_growth, estimate_pc, estimate_two_point_ratio, for_each_run, Ensemble, PcBracket,
    RatioEstimate,
    SimConfig, WaveSchedule,
};
use crate::rng::RNG_ALGORITHM;
use crate::store::{read_runs, RunStore, StoreHeader};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Parser, Debug)]
#[command(name = "lrperc", version, about = "Long-range percolation experiments")]
pub struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Override the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Continue an interrupted `percolation run` from its run file.
    #[arg(long, global = true)]
    pub resume: bool,
    /// Output directory (default: config `output_dir`, else `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    #[command(subcommand)]
    Kernel(KernelCmd),
    #[command(subcommand)]
    Brw(BrwCmd),
    #[command(subcommand)]
    Percolation(PercolationCmd),
    #[command(subcommand)]
    Diagrams(DiagramsCmd),
    #[command(subcommand)]
    Analysis(AnalysisCmd),
    /// Collect manifests (this output directory plus `dirs`) into a report.
    Report { dirs: Vec<PathBuf> },
}

#[derive(Subcommand, Debug)]
pub enum KernelCmd {
    /// Normalization, tail mass, shell distribution and v_alpha.
    Inspect,
}

#[derive(Subcommand, Debug)]
pub enum BrwCmd {
    /// Exact `D^(k_n)^n` against `exp(-|k|^{alpha ^ 2})`.
    Limit,
}

#[derive(Subcommand, Debug)]
pub enum PercolationCmd {
    /// Monte Carlo ensemble with two-point ratios, growth and gyration.
    Run,
    /// Bracket the critical point.
    Pc,
}

#[derive(Subcommand, Debug)]
pub enum DiagramsCmd {
    Kdelta,
    Fracmoment,
    Jhat,
    Triangle,
    Shifted,
}

#[derive(Subcommand, Debug)]
pub enum AnalysisCmd {
    /// Fit `-ln ratio = C k^{alpha ^ 2}` to a ratios CSV.
    Fit {
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput { .. } | Error::Config(_) => EXIT_CONFIG,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::ResourceCap(_) => EXIT_RESOURCE,
        Error::Io(_) => EXIT_IO,
    }
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("lrperc: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => {
            let mut cfg = ExperimentConfig::load(path)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            Some(cfg)
        }
        None => None,
    };
    let threads = cli.threads.or(cfg.as_ref().and_then(|c| c.threads));
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.as_ref().and_then(|c| c.output_dir.as_ref().map(PathBuf::from)))
        .unwrap_or_else(|| PathBuf::from("out"));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli, cfg.as_ref(), &out_dir))
}

fn need(cfg: Option<&ExperimentConfig>) -> Result<&ExperimentConfig> {
    cfg.ok_or_else(|| Error::Config("this command needs --config".into()))
}

fn dispatch(cli: &Cli, cfg: Option<&ExperimentConfig>, out: &Path) -> Result<()> {
    match &cli.command {
        Command::Kernel(KernelCmd::Inspect) => kernel_inspect(&Output::new(out, need(cfg)?)?),
        Command::Brw(BrwCmd::Limit) => brw_limit(&Output::new(out, need(cfg)?)?),
        Command::Percolation(PercolationCmd::Run) => percolation_run(&Output::new(out, need(cfg)?)?, cli.resume),
        Command::Percolation(PercolationCmd::Pc) => percolation_pc(&Output::new(out, need(cfg)?)?),
        Command::Diagrams(which) => diagrams(&Output::new(out, need(cfg)?)?, which),
        Command::Analysis(AnalysisCmd::Fit { input }) => analysis_fit(out, cfg, input.as_deref()),
        Command::Report { dirs } => report(out, dirs),
    }
}

/// Float formatting used in every CSV.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

struct Output<'a> {
    dir: PathBuf,
    cfg: &'a ExperimentConfig,
    hash: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub code_version: String,
    pub rng_algorithm: String,
    pub seed: u64,
    pub config: Value,
    pub created_unix: u64,
    pub updated_unix: u64,
    /// Per command: `files` and `results`.
    pub commands: BTreeMap<String, Value>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl<'a> Output<'a> {
    fn new(dir: &Path, cfg: &'a ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Output { dir: dir.to_path_buf(), cfg, hash: cfg.hash() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<String> {
        let mut s = format!("# config_hash={}\n{}\n", self.hash, header.join(","));
        for r in rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        std::fs::write(self.path(name), s)?;
        Ok(name.to_string())
    }

    fn json(&self, name: &str, v: &Value) -> Result<String> {
        let text = serde_json::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(self.path(name), text + "\n")?;
        Ok(name.to_string())
    }

    /// Records `command` in `manifest.json`; a manifest for another config is replaced.
    fn record(&self, command: &str, files: &[String], results: Value) -> Result<()> {
        let path = self.path("manifest.json");
        let mut m = match std::fs::read_to_string(&path) {
            Ok(t) => serde_json::from_str::<Manifest>(&t).unwrap_or_default(),
            Err(_) => Manifest::default(),
        };
        if m.config_hash != self.hash {
            m = Manifest {
                config_hash: self.hash.clone(),
                code_version: env!("CARGO_PKG_VERSION").to_string(),
                rng_algorithm: RNG_ALGORITHM.to_string(),
                seed: self.cfg.seed,
                config: serde_json::to_value(self.cfg).map_err(|e| Error::Config(e.to_string()))?,
                created_unix: now(),
                ..Manifest::default()
            };
        }
        m.updated_unix = now();
        m.commands.insert(command.to_string(), json!({ "files": files, "results": results }));
        let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn opt_json<T: Serialize>(r: &Result<T>) -> Value {
    match r {
        Ok(v) => to_json(v),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn kernel_inspect(o: &Output) -> Result<()> {
    let cfg = o.cfg;
    let t = KernelTable::build(&cfg.kernel)?;
    let v = calibrate_valpha(&t, &cfg.direction(), cfg.t_grid.as_deref());
    let cdf = t.shell_cdf();
    let rows: Vec<Vec<String>> = cdf.iter().enumerate().map(|(s, c)| vec![s.to_string(), fmt_f64(*c)]).collect();
    let shells = o.csv("kernel_shells.csv", &["shell", "cdf"], &rows)?;
    let results = json!({
        "spec": to_json(&cfg.kernel),
        "core_radius": t.core_radius(),
        "normalization": t.normalization(),
        "normalization_err": t.normalization_err(),
        "lambda": t.lambda(),
        "dmax": t.dmax(),
        "core_mass": t.core_mass(),
        "tail_mass": t.tail_mass(),
        "valpha": opt_json(&v),
    });
    let summary = o.json("kernel.json", &results)?;
    o.record("kernel inspect", &[shells, summary], results)?;
    v.map(|_| ())
}

fn brw_limit(o: &Output) -> Result<()> {
    let cfg = o.cfg;
    let sec = cfg.brw.as_ref().ok_or_else(|| Error::Config("missing [brw] section".into()))?;
    let t = KernelTable::build(&cfg.kernel)?;
    let v = calibrate_valpha(&t, &cfg.direction(), cfg.t_grid.as_deref())?;
    let alpha = cfg.kernel.alpha;
    let curve = brw_ratio_curve(&t, &v, alpha, &sec.k_mags, &sec.n_grid)?;
    let mut rows = Vec::new();
    let mut long = Vec::new();
    let mut worst = vec![0.0f64; curve.n_grid.len()];
    for (i, n) in curve.n_grid.iter().enumerate() {
        for (j, k) in curve.k_mags.iter().enumerate() {
            let r = curve.ratios[i][j];
            let target = (-k.powf(alpha.min(2.0))).exp();
            worst[i] = worst[i].max((r - target).abs());
            rows.push(vec![
                n.to_string(),
                fmt_f64(*k),
                fmt_f64(r),
                fmt_f64(curve.errs[i][j]),
                fmt_f64(target),
                fmt_f64((r - target).abs()),
            ]);
            long.push(vec![n.to_string(), fmt_f64(*k), fmt_f64(r), fmt_f64(curve.errs[i][j])]);
        }
    }
    let a = o.csv("brw_limit.csv", &["n", "k_mag", "ratio", "err_bound", "target", "abs_dev"], &rows)?;
    let b = o.csv("brw_ratios.csv", RATIO_HEADER, &long)?;
    let points: Vec<RatioEstimate> = long_points(&curve);
    let fit = fit_stable_constant(&points, alpha);
    let results = json!({
        "valpha": to_json(&v),
        "alpha": alpha,
        "spread": cfg.kernel.spread,
        "max_abs_dev_by_n": worst,
        "n_grid": curve.n_grid,
        "fit": opt_json(&fit),
    });
    o.record("brw limit", &[a, b], results)
}

fn long_points(c: &crate::brw::RatioCurve) -> Vec<RatioEstimate> {
    let mut out = Vec::new();
    for (i, n) in c.n_grid.iter().enumerate() {
        for (j, k) in c.k_mags.iter().enumerate() {
            out.push(RatioEstimate { value: c.ratios[i][j], stderr: c.errs[i][j], n: *n, k_mag: *k });
        }
    }
    out
}

const RATIO_HEADER: &[&str] = &["n", "k_mag", "ratio", "stderr"];

fn pc_bracket(o: &Output, t: &KernelTable) -> Result<PcBracket> {
    let cfg = o.cfg;
    let sec = cfg.pc.as_ref().ok_or_else(|| Error::Config("missing [pc] section".into()))?;
    estimate_pc(t, cfg.mode, &sec.search(), cfg.seed)
}

fn write_pc(o: &Output, b: &PcBracket) -> Result<Vec<String>> {
    let rows: Vec<Vec<String>> = b
        .trace
        .iter()
        .map(|p| {
            vec![fmt_f64(p.p), fmt_f64(p.slope), fmt_f64(p.stderr), p.runs.to_string(), p.supercritical.to_string()]
        })
        .collect();
    let a = o.csv("pc_trace.csv", &["p", "slope", "stderr", "runs", "supercritical"], &rows)?;
    let b = o.json("pc.json", &json!({ "p_lo": b.p_lo, "p_hi": b.p_hi, "width": b.width }))?;
    Ok(vec![a, b])
}

fn percolation_pc(o: &Output) -> Result<()> {
    let t = KernelTable::build(&o.cfg.kernel)?;
    let b = pc_bracket(o, &t)?;
    let files = write_pc(o, &b)?;
    o.record("percolation pc", &files, json!({ "p_lo": b.p_lo, "p_hi": b.p_hi, "width": b.width }))
}

/// Runs missing run indices, appending to `runs.bin`, and rebuilds the ensemble
/// from the file in run-index order.
fn simulate(o: &Output, sim: &SimConfig, t: &KernelTable, runs: u64, resume: bool) -> Result<Ensemble> {
    let cfg = o.cfg;
    let path = o.path("runs.bin");
    let header = StoreHeader::new(&o.hash, cfg.seed, sim.n_max, sim.waves.len(), sim.r_values.len())?;
    let (mut store, prior) = RunStore::open(&path, &header, resume)?;
    let mut done = vec![false; runs as usize];
    for r in &prior {
        if r.run_index < runs {
            done[r.run_index as usize] = true;
        }
    }
    let mut i = 0u64;
    let mut failure: Option<Error> = None;
    while i < runs {
        if done[i as usize] {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < runs && !done[j as usize] {
            j += 1;
        }
        let mut since_flush = 0usize;
        for_each_run(sim, t, cfg.seed, i..j, |r| {
            if let Err(e) = store.append(r) {
                failure = Some(e);
                return false;
            }
            since_flush += 1;
            if since_flush == 512 {
                since_flush = 0;
                if let Err(e) = store.flush() {
                    failure = Some(e);
                    return false;
                }
            }
            true
        });
        if let Some(e) = failure.take() {
            return Err(e);
        }
        store.flush()?;
        i = j;
    }
    drop(store);
    let (_, mut all) = read_runs(&path)?;
    all.sort_by_key(|r| r.run_index);
    all.dedup_by_key(|r| r.run_index);
    let mut ens = Ensemble::new(sim, runs);
    for r in all.iter().filter(|r| r.run_index < runs) {
        ens.push(r);
    }
    Ok(ens)
}

fn percolation_run(o: &Output, resume: bool) -> Result<()> {
    let cfg = o.cfg;
    let sec: &PercolationSection =
        cfg.percolation.as_ref().ok_or_else(|| Error::Config("missing [percolation] section".into()))?;
    let t = KernelTable::build(&cfg.kernel)?;
    let alpha = cfg.kernel.alpha;
    let mut files = Vec::new();
    let (p, bracket) = match sec.p {
        Some(p) => (p, None),
        None => {
            let b = pc_bracket(o, &t)?;
            files.extend(write_pc(o, &b)?);
            (b.p_lo, Some(b))
        }
    };
    let v = calibrate_valpha(&t, &cfg.direction(), cfg.t_grid.as_deref())?;
    let mut sim = SimConfig::new(p, sec.n_max, cfg.mode);
    sim.waves = WaveSchedule::scaled(&sec.k_mags, &v, alpha, sec.n_max)?;
    sim.r_values = sec.r_values.clone();
    sim.slice_cap = sec.slice_cap;
    sim.batches = sec.batches;
    sim.validate(&t)?;
    let ens = simulate(o, &sim, &t, sec.runs, resume)?;
    files.push("runs.bin".into());

    let mut header: Vec<String> = vec!["n".into(), "alive".into(), "mean_count".into(), "mean_count_se".into()];
    for j in 0..sec.k_mags.len() {
        header.push(format!("ratio_k{j}"));
        header.push(format!("ratio_se_k{j}"));
    }
    for i in 0..sec.r_values.len() {
        header.push(format!("xi_r{i}"));
        header.push(format!("xi_se_r{i}"));
    }
    let nan = || fmt_f64(f64::NAN);
    let mut rows = Vec::new();
    for n in 0..=sec.n_max {
        let (m, se) = ens.mean_count(n)?;
        let mut row = vec![n.to_string(), ens.alive[n as usize].to_string(), fmt_f64(m), fmt_f64(se)];
        for j in 0..sec.k_mags.len() {
            match estimate_two_point_ratio(&ens, j, n) {
                Ok(r) => row.extend([fmt_f64(r.value), fmt_f64(r.stderr)]),
                Err(_) => row.extend([nan(), nan()]),
            }
        }
        for i in 0..sec.r_values.len() {
            match estimate_gyration(&ens, i, n, alpha) {
                Ok(g) => row.extend([fmt_f64(g.xi), fmt_f64(g.stderr)]),
                Err(_) => row.extend([nan(), nan()]),
            }
        }
        rows.push(row);
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    files.push(o.csv("percolation_summary.csv", &header_refs, &rows)?);

    let fit_n = sec.fit_times();
    let mut points = Vec::new();
    let mut long = Vec::new();
    for &n in &fit_n {
        for j in 0..sec.k_mags.len() {
            if let Ok(r) = estimate_two_point_ratio(&ens, j, n) {
                long.push(vec![n.to_string(), fmt_f64(r.k_mag), fmt_f64(r.value), fmt_f64(r.stderr)]);
                points.push(r);
            }
        }
    }
    files.push(o.csv("percolation_ratios.csv", RATIO_HEADER, &long)?);

    let (n1, n2) = sec.window();
    let growth = estimate_growth(&ens, n1, n2);
    let gyration: Vec<Value> = (0..sec.r_values.len())
        .map(|i| {
            let est: Vec<_> = fit_n.iter().filter_map(|&n| estimate_gyration(&ens, i, n, alpha).ok()).collect();
            let x: Vec<f64> = est.iter().map(|g| g.n as f64).collect();
            let y: Vec<f64> = est.iter().map(|g| g.xi).collect();
            let e: Vec<f64> = est.iter().map(|g| g.stderr).collect();
            json!({ "r": sec.r_values[i], "slope": opt_json(&slope_fit(&x, &y, Some(&e))) })
        })
        .collect();
    let fit = fit_stable_constant(&points, alpha);
    let results = json!({
        "p": p,
        "pc_bracket": bracket.map(|b| json!({ "p_lo": b.p_lo, "p_hi": b.p_hi })),
        "valpha": to_json(&v),
        "alpha": alpha,
        "spread": cfg.kernel.spread,
        "lambda": t.lambda(),
        "runs": ens.runs,
        "capped": ens.capped,
        "overflowed": ens.overflowed,
        "growth": opt_json(&growth),
        "gyration": gyration,
        "fit": opt_json(&fit),
    });
    o.record("percolation run", &files, results)?;
    if ens.overflowed > 0 {
        return Err(Error::ResourceCap(format!("{} runs left the coordinate range", ens.overflowed)));
    }
    Ok(())
}

fn diagram_row(label: Vec<String>, v: &DiagramValue) -> Vec<String> {
    let levels: Vec<String> = v.level_values.iter().map(|x| fmt_f64(*x)).collect();
    let mut row = label;
    row.extend([fmt_f64(v.value), fmt_f64(v.half_width), v.diverging.to_string(), levels.join(";")]);
    row
}

fn diagrams(o: &Output, which: &DiagramsCmd) -> Result<()> {
    let cfg = o.cfg;
    let sec = cfg.diagrams.as_ref().ok_or_else(|| Error::Config("missing [diagrams] section".into()))?;
    let model = || -> Result<DhatModel> {
        Ok(match sec.model {
            ModelKind::Surrogate => DhatModel::surrogate(sec.alpha(&cfg.kernel), sec.dim(&cfg.kernel)),
            ModelKind::Exact => DhatModel::Exact(Arc::new(KernelTable::build(&cfg.kernel)?)),
        })
    };
    let spec = sec.quadrature(&cfg.kernel, cfg.seed);
    let value_cols = ["value", "half_width", "diverging", "level_values"];
    let (name, file, results) = match which {
        DiagramsCmd::Kdelta => {
            if sec.deltas.is_empty() {
                return Err(invalid("diagrams.deltas", "empty"));
            }
            let rows: Vec<Vec<String>> =
                sec.deltas.iter().map(|d| Ok(vec![fmt_f64(*d), fmt_f64(kdelta(*d)?)])).collect::<Result<_>>()?;
            ("diagrams kdelta", o.csv("kdelta.csv", &["delta", "value"], &rows)?, json!({ "rows": rows.len() }))
        }
        DiagramsCmd::Fracmoment => {
            if sec.deltas.is_empty() || sec.a_values.is_empty() {
                return Err(invalid("diagrams.a_values", "fracmoment needs a_values and deltas"));
            }
            let mut rows = Vec::new();
            let mut worst = 0.0f64;
            for &a in &sec.a_values {
                for &d in &sec.deltas {
                    let (val, err) = oscillatory_power_integral(a, d)?;
                    let dev = frac_moment_check(a, d)?;
                    worst = worst.max(dev.abs());
                    rows.push(vec![fmt_f64(a), fmt_f64(d), fmt_f64(val), fmt_f64(err), fmt_f64(dev)]);
                }
            }
            let f = o.csv("fracmoment.csv", &["a", "delta", "value", "err", "identity_dev"], &rows)?;
            ("diagrams fracmoment", f, json!({ "max_identity_dev": worst }))
        }
        DiagramsCmd::Jhat => {
            if sec.u_values.is_empty() {
                return Err(invalid("diagrams.u_values", "empty"));
            }
            let m = model()?;
            let mut rows = Vec::new();
            let mut us = Vec::new();
            let mut vals = Vec::new();
            for &u in &sec.u_values {
                let v = jhat(u, &m, &spec)?;
                us.push(u);
                vals.push(v.value);
                rows.push(diagram_row(vec![fmt_f64(u)], &v));
            }
            let mut header = vec!["u"];
            header.extend(value_cols);
            let f = o.csv("jhat.csv", &header, &rows)?;
            let slope = if us.len() >= 4 { opt_json(&slope_fit(&us, &vals, None)) } else { Value::Null };
            ("diagrams jhat", f, json!({ "loglog_slope": slope }))
        }
        DiagramsCmd::Triangle => {
            let v = triangle_proxy(&model()?, &spec)?;
            let mut header = vec!["d", "alpha"];
            header.extend(value_cols);
            let label = vec![spec.dim.to_string(), fmt_f64(sec.alpha(&cfg.kernel))];
            let f = o.csv("triangle.csv", &header, &[diagram_row(label, &v)])?;
            ("diagrams triangle", f, to_json(&v))
        }
        DiagramsCmd::Shifted => {
            let d2 = sec.delta2.ok_or_else(|| invalid("diagrams.delta2", "required for shifted"))?;
            if sec.u_values.is_empty() {
                return Err(invalid("diagrams.u_values", "empty"));
            }
            let m = model()?;
            let mut rows = Vec::new();
            for &u in &sec.u_values {
                let v = shifted_j_moment(u, d2, &m, &spec)?;
                rows.push(diagram_row(vec![fmt_f64(u)], &v));
            }
            let mut header = vec!["u"];
            header.extend(value_cols);
            let f = o.csv("shifted.csv", &header, &rows)?;
            ("diagrams shifted", f, json!({ "delta2": d2 }))
        }
    };
    o.record(name, &[file], results)
}

/// Reads `n,k_mag,ratio,stderr` rows, skipping `#` comments and the header.
pub fn read_ratio_csv(path: &Path) -> Result<Vec<RatioEstimate>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    let bad = |line: usize| Error::Config(format!("{}:{line}: malformed ratio row", path.display()));
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("n,") || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(i + 1));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(i + 1));
        out.push(RatioEstimate {
            n: f[0].trim().parse().map_err(|_| bad(i + 1))?,
            k_mag: num(f[1])?,
            value: num(f[2])?,
            stderr: num(f[3])?,
        });
    }
    Ok(out)
}

fn analysis_fit(out: &Path, cfg: Option<&ExperimentConfig>, input: Option<&Path>) -> Result<()> {
    let cfg = need(cfg)?;
    let o = Output::new(out, cfg)?;
    let path = match input {
        Some(p) => p.to_path_buf(),
        None => ["percolation_ratios.csv", "brw_ratios.csv"]
            .iter()
            .map(|f| out.join(f))
            .find(|p| p.exists())
            .ok_or_else(|| Error::Config(format!("no ratios CSV in {}", out.display())))?,
    };
    let points = read_ratio_csv(&path)?;
    let alpha = cfg.kernel.alpha;
    let fit = fit_stable_constant(&points, alpha)?;
    let ae = alpha.min(2.0);
    let n_last = fit.per_n.last().map_or(0, |p| p.n);
    let rows: Vec<Vec<String>> = points
        .iter()
        .filter(|p| p.n == n_last && p.k_mag > 0.0)
        .map(|p| {
            let x = p.k_mag.powf(ae);
            vec![fmt_f64(x), fmt_f64(-p.value.ln()), fmt_f64(p.stderr / p.value), fmt_f64(fit.intercept + fit.c_hat * x)]
        })
        .collect();
    let plot = o.csv("fit_plot.csv", &["x", "neg_log_ratio", "stderr", "fit"], &rows)?;
    let results = json!({
        "input": path.display().to_string(),
        "alpha": alpha,
        "spread": cfg.kernel.spread,
        "lambda": cfg.kernel.spread.powf(-ae),
        "fit": to_json(&fit),
    });
    let f = o.json("fit.json", &results)?;
    o.record("analysis fit", &[plot, f], results)
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// One number in the report, with the config hash it came from.
#[derive(Clone, Debug, Serialize)]
pub struct Measurement {
    pub source: String,
    pub command: String,
    pub quantity: String,
    pub value: Value,
    pub config_hash: String,
}

fn measurements(dir: &Path, m: &Manifest) -> Vec<Measurement> {
    let mut out = Vec::new();
    let mut push = |cmd: &str, q: &str, v: &Value| {
        if !v.is_null() {
            out.push(Measurement {
                source: dir.display().to_string(),
                command: cmd.to_string(),
                quantity: q.to_string(),
                value: v.clone(),
                config_hash: m.config_hash.clone(),
            });
        }
    };
    for (cmd, entry) in &m.commands {
        let r = &entry["results"];
        for key in [
            "fit", "growth", "gyration", "pc_bracket", "p_lo", "p_hi", "width", "loglog_slope", "max_abs_dev_by_n",
            "max_identity_dev", "value", "half_width", "diverging", "valpha", "normalization", "tail_mass", "p",
        ] {
            let v = match key {
                "fit" if r["fit"]["c_hat"].is_number() => json!({
                    "c_hat": r["fit"]["c_hat"],
                    "stderr": r["fit"]["stderr"],
                    "intercept": r["fit"]["intercept"],
                    "intercept_stderr": r["fit"]["intercept_stderr"],
                }),
                "valpha" => r["valpha"]["v_alpha"].clone(),
                _ => r[key].clone(),
            };
            push(cmd, key, &v);
        }
    }
    out
}

fn report(out: &Path, extra: &[PathBuf]) -> Result<()> {
    let mut dirs = vec![out.to_path_buf()];
    dirs.extend(extra.iter().cloned());
    let mut cells = Vec::new();
    let mut all = Vec::new();
    let mut md = String::from("# lrperc report\n\n");
    for dir in &dirs {
        let m = read_manifest(dir)?;
        if m.commands.is_empty() {
            return Err(Error::Config(format!("{}: manifest lists no results", dir.display())));
        }
        let _ = writeln!(md, "## {}\n\nconfig hash `{}`, seed {}\n", dir.display(), m.config_hash, m.seed);
        let found = measurements(dir, &m);
        for x in &found {
            let _ = writeln!(md, "- {} / {}: {}", x.command, x.quantity, x.value);
        }
        if let Some(r) = m.commands.get("percolation run").map(|e| &e["results"]) {
            if let (Some(c), Some(se), Some(a), Some(l)) = (
                r["fit"]["c_hat"].as_f64(),
                r["fit"]["stderr"].as_f64(),
                r["alpha"].as_f64(),
                r["spread"].as_f64(),
            ) {
                let lambda = r["lambda"].as_f64().unwrap_or(f64::NAN);
                cells.push(CrossoverCell { alpha: a, spread: l, lambda, c_hat: c, stderr: se });
            }
        }
        md.push('\n');
        all.extend(found);
    }
    let crossover = if cells.len() >= 2 { crossover_report(&cells).ok() } else { None };
    if let Some(c) = &crossover {
        let _ = writeln!(md, "## Spread dependence\n");
        for t in &c.trends {
            let _ = writeln!(
                md,
                "- alpha = {}: |C-1| {:.4} (L = {}) -> {:.4} (L = {}), {}",
                t.alpha,
                t.dev_small,
                t.l_small,
                t.dev_big,
                t.l_big,
                if t.pass { "pass" } else { "FAIL" }
            );
        }
    }
    std::fs::create_dir_all(out)?;
    let doc = json!({ "measurements": to_json(&all), "crossover": crossover.as_ref().map(to_json) });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(out.join("report.json"), text + "\n")?;
    std::fs::write(out.join("report.md"), &md)?;
    print!("{md}");
    Ok(())
}
