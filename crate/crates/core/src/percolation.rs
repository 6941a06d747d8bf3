//! Oriented percolation cluster growth from the origin.
//!
//! Each parent's children form an exact independent Bernoulli field with
//! occupation probability `p D(e)`: a Poisson number of kernel draws is thinned
//! so that every site `e` receives a Poisson(-ln(1 - pD(e))) count, and a
//! site is occupied iff its count is positive.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::{kn_scale, site_dot, site_norm, Site, StepKernel, ValphaEstimate, ORIGIN};
use crate::numerics::linear_fit;
use crate::rng::{run_stream, Stream};

/// Coordinates beyond this magnitude are treated as an overflow of the bounding box.
pub const COORD_LIMIT: i128 = 1 << 120;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Occupied sites are deduplicated: a genuine cluster.
    Percolation,
    /// Poisson(p) offspring, no deduplication: a branching random walk.
    Branching,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterSlice {
    pub n: u64,
    /// Sorted; distinct in percolation mode, a multiset in branching mode.
    pub sites: Vec<Site>,
}

impl ClusterSlice {
    pub fn origin() -> Self {
        ClusterSlice { n: 0, sites: vec![ORIGIN] }
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

/// Wave vectors per observable and time: `vectors[j][n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveSchedule {
    pub k_mags: Vec<f64>,
    vectors: Vec<Vec<Vec<f64>>>,
}

impl WaveSchedule {
    pub fn empty() -> Self {
        WaveSchedule { k_mags: vec![], vectors: vec![] }
    }

    /// `k_n` of [`kn_scale`] for every `n <= n_max` (the `n = 0` entry is unused).
    pub fn scaled(k_mags: &[f64], v: &ValphaEstimate, alpha: f64, n_max: u64) -> Result<Self> {
        let mut vectors = Vec::with_capacity(k_mags.len());
        for &km in k_mags {
            let mut per_n = vec![vec![0.0; v.direction.len()]];
            for n in 1..=n_max {
                per_n.push(kn_scale(km, n, v, alpha)?.as_slice().to_vec());
            }
            vectors.push(per_n);
        }
        Ok(WaveSchedule { k_mags: k_mags.to_vec(), vectors })
    }

    /// The same wave vectors at every time; `k_mags` holds their norms.
    pub fn fixed(ks: &[Vec<f64>], n_max: u64) -> Self {
        let k_mags = ks.iter().map(|k| k.iter().map(|c| c * c).sum::<f64>().sqrt()).collect();
        let vectors = ks.iter().map(|k| vec![k.clone(); n_max as usize + 1]).collect();
        WaveSchedule { k_mags, vectors }
    }

    pub fn len(&self) -> usize {
        self.k_mags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_mags.is_empty()
    }

    pub fn at(&self, j: usize, n: u64) -> &[f64] {
        &self.vectors[j][n as usize]
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub p: f64,
    pub n_max: u64,
    pub mode: Mode,
    pub waves: WaveSchedule,
    pub r_values: Vec<f64>,
    /// Runs whose slice exceeds this many sites are flagged and excluded.
    pub slice_cap: usize,
    /// Number of contiguous run batches for the jackknife.
    pub batches: usize,
}

impl SimConfig {
    pub fn new(p: f64, n_max: u64, mode: Mode) -> Self {
        SimConfig { p, n_max, mode, waves: WaveSchedule::empty(), r_values: vec![], slice_cap: 10_000_000, batches: 20 }
    }

    pub fn validate(&self, kernel: &dyn StepKernel) -> Result<()> {
        if !(self.p >= 0.0) || !self.p.is_finite() {
            return Err(invalid("p", "must be a nonnegative real"));
        }
        if self.mode == Mode::Percolation && self.p * kernel.dmax() >= 1.0 {
            return Err(invalid("p", format!("p * Dmax = {} must be < 1", self.p * kernel.dmax())));
        }
        if self.r_values.iter().any(|r| !(*r > 0.0)) {
            return Err(invalid("r_values", "entries must be positive"));
        }
        if self.batches < 20 {
            return Err(invalid("batches", "need at least 20 batches"));
        }
        if self.waves.vectors.iter().any(|v| v.len() != self.n_max as usize + 1) {
            return Err(invalid("k_mags", "wave schedule does not cover 0..=n_max"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Capped,
    Overflow,
}

/// Observables of one run. Vectors stop at the last nonempty time; later
/// entries are implicitly zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSeries {
    pub run_index: u64,
    pub status: RunStatus,
    pub extinct_at: Option<u64>,
    pub counts: Vec<u64>,
    /// `cos_sums[j][n] = sum_{x in C_n} cos(k_j(n) . x)`.
    pub cos_sums: Vec<Vec<f64>>,
    /// `moments[i][n] = sum_{x in C_n} |x|^{r_i}`.
    pub moments: Vec<Vec<f64>>,
}

/// One time step for every parent in `slice`.
pub fn evolve_slice(
    slice: &ClusterSlice,
    p: f64,
    kernel: &dyn StepKernel,
    mode: Mode,
    rng: &mut Stream,
    cap: usize,
) -> Result<ClusterSlice> {
    let next = slice.n + 1;
    if p == 0.0 || slice.is_empty() {
        return Ok(ClusterSlice { n: next, sites: vec![] });
    }
    let mut out: Vec<Site> = Vec::new();
    match mode {
        Mode::Percolation => {
            let q = p * kernel.dmax();
            if q >= 1.0 {
                return Err(invalid("p", "p * Dmax must be < 1"));
            }
            let c = -(-q).ln_1p() / q;
            let count = Poisson::new(c * p).map_err(|e| Error::Numeric(e.to_string()))?;
            let mut kids: Vec<Site> = Vec::new();
            for parent in &slice.sites {
                kids.clear();
                let m = count.sample(rng) as u64;
                for _ in 0..m {
                    let e = kernel.sample_step(rng);
                    let x = p * kernel.prob(&e);
                    let accept = -(-x).ln_1p() / (x * c);
                    if rng.random::<f64>() < accept {
                        kids.push(shift(parent, &e)?);
                    }
                }
                out.extend_from_slice(&kids);
            }
            out.sort_unstable();
            out.dedup();
        }
        Mode::Branching => {
            let count = Poisson::new(p).map_err(|e| Error::Numeric(e.to_string()))?;
            for parent in &slice.sites {
                let m = count.sample(rng) as u64;
                for _ in 0..m {
                    let e = kernel.sample_step(rng);
                    out.push(shift(parent, &e)?);
                }
                if out.len() > cap {
                    break;
                }
            }
            out.sort_unstable();
        }
    }
    if out.len() > cap {
        return Err(Error::ResourceCap(format!("slice at n = {next} exceeds {cap} sites")));
    }
    Ok(ClusterSlice { n: next, sites: out })
}

fn shift(x: &Site, e: &Site) -> Result<Site> {
    let mut y = *x;
    for (a, b) in y.iter_mut().zip(e) {
        *a = a
            .checked_add(*b)
            .filter(|v| v.abs() <= COORD_LIMIT)
            .ok_or_else(|| Error::Numeric("bounding-box overflow".into()))?;
    }
    Ok(y)
}

/// Simulate one cluster; `observe` sees every slice including the origin.
pub fn run_cluster_observed(
    cfg: &SimConfig,
    kernel: &dyn StepKernel,
    seed: u64,
    run_index: u64,
    mut observe: impl FnMut(&ClusterSlice),
) -> RunSeries {
    let mut rng = run_stream(seed, run_index);
    let mut series = RunSeries {
        run_index,
        status: RunStatus::Complete,
        extinct_at: None,
        counts: vec![],
        cos_sums: vec![vec![]; cfg.waves.len()],
        moments: vec![vec![]; cfg.r_values.len()],
    };
    let mut slice = ClusterSlice::origin();
    loop {
        observe(&slice);
        record(&mut series, &slice, cfg);
        if slice.n == cfg.n_max {
            break;
        }
        match evolve_slice(&slice, cfg.p, kernel, cfg.mode, &mut rng, cfg.slice_cap) {
            Ok(next) => slice = next,
            Err(Error::ResourceCap(_)) => {
                series.status = RunStatus::Capped;
                break;
            }
            Err(_) => {
                series.status = RunStatus::Overflow;
                break;
            }
        }
        if slice.is_empty() {
            series.extinct_at = Some(slice.n);
            break;
        }
    }
    series
}

pub fn run_cluster(cfg: &SimConfig, kernel: &dyn StepKernel, seed: u64, run_index: u64) -> RunSeries {
    run_cluster_observed(cfg, kernel, seed, run_index, |_| {})
}

fn record(series: &mut RunSeries, slice: &ClusterSlice, cfg: &SimConfig) {
    series.counts.push(slice.sites.len() as u64);
    for (j, out) in series.cos_sums.iter_mut().enumerate() {
        let k = cfg.waves.at(j, slice.n);
        out.push(slice.sites.iter().map(|x| site_dot(k, x).cos()).sum());
    }
    if !cfg.r_values.is_empty() {
        let norms: Vec<f64> = slice.sites.iter().map(site_norm).collect();
        for (i, out) in series.moments.iter_mut().enumerate() {
            let r = cfg.r_values[i];
            out.push(norms.iter().map(|v| if *v == 0.0 { 0.0 } else { v.powf(r) }).sum());
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Batch {
    runs: u64,
    n: Vec<f64>,
    s: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
}

/// Per-batch sums of run observables, filled in run-index order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub n_max: u64,
    pub k_mags: Vec<f64>,
    pub r_values: Vec<f64>,
    pub total_runs: u64,
    /// Runs included in the sums.
    pub runs: u64,
    pub capped: u64,
    pub overflowed: u64,
    /// Included runs with a nonempty slice at each time.
    pub alive: Vec<u64>,
    batches: Vec<Batch>,
}

impl Ensemble {
    pub fn new(cfg: &SimConfig, total_runs: u64) -> Self {
        let len = cfg.n_max as usize + 1;
        let batch = Batch {
            runs: 0,
            n: vec![0.0; len],
            s: vec![vec![0.0; len]; cfg.waves.len()],
            m: vec![vec![0.0; len]; cfg.r_values.len()],
        };
        Ensemble {
            n_max: cfg.n_max,
            k_mags: cfg.waves.k_mags.clone(),
            r_values: cfg.r_values.clone(),
            total_runs,
            runs: 0,
            capped: 0,
            overflowed: 0,
            alive: vec![0; len],
            batches: vec![batch; cfg.batches],
        }
    }

    /// Add one run; callers must push in increasing run-index order.
    pub fn push(&mut self, run: &RunSeries) {
        match run.status {
            RunStatus::Capped => {
                self.capped += 1;
                return;
            }
            RunStatus::Overflow => {
                self.overflowed += 1;
                return;
            }
            RunStatus::Complete => {}
        }
        let nb = self.batches.len() as u64;
        let b = ((run.run_index * nb) / self.total_runs.max(1)).min(nb - 1) as usize;
        let batch = &mut self.batches[b];
        batch.runs += 1;
        self.runs += 1;
        for (t, c) in run.counts.iter().enumerate() {
            batch.n[t] += *c as f64;
            if *c > 0 {
                self.alive[t] += 1;
            }
        }
        for (acc, src) in batch.s.iter_mut().zip(&run.cos_sums) {
            for (a, v) in acc.iter_mut().zip(src) {
                *a += v;
            }
        }
        for (acc, src) in batch.m.iter_mut().zip(&run.moments) {
            for (a, v) in acc.iter_mut().zip(src) {
                *a += v;
            }
        }
    }

    fn check_n(&self, n: u64) -> Result<usize> {
        if n > self.n_max {
            return Err(invalid("n", format!("{n} exceeds n_max = {}", self.n_max)));
        }
        Ok(n as usize)
    }

    /// `E^[N_n]` with jackknife standard error.
    pub fn mean_count(&self, n: u64) -> Result<(f64, f64)> {
        let t = self.check_n(n)?;
        Ok(self.jackknife(|b| (b.n[t], b.runs as f64)))
    }

    /// Delete-one-batch jackknife of `sum(num) / sum(den)`.
    fn jackknife(&self, f: impl Fn(&Batch) -> (f64, f64)) -> (f64, f64) {
        let parts: Vec<(f64, f64)> = self.batches.iter().map(f).collect();
        let (tn, td) = parts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let value = tn / td;
        let used: Vec<f64> = parts
            .iter()
            .filter(|p| p.1 != 0.0 || p.0 != 0.0)
            .map(|p| (tn - p.0) / (td - p.1))
            .collect();
        let g = used.len() as f64;
        if g < 2.0 {
            return (value, f64::INFINITY);
        }
        let mean = used.iter().sum::<f64>() / g;
        let var = (g - 1.0) / g * used.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        (value, var.sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatioEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
    pub k_mag: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GyrationEstimate {
    pub xi: f64,
    pub stderr: f64,
    pub r: f64,
    pub n: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthEstimate {
    pub m_hat: f64,
    pub stderr: f64,
    pub chi_partial: f64,
    pub window: (u64, u64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PcBracket {
    pub p_lo: f64,
    pub p_hi: f64,
    pub width: f64,
    /// (p, slope, stderr, verdict) for every classification made.
    pub trace: Vec<PcProbe>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PcProbe {
    pub p: f64,
    pub slope: f64,
    pub stderr: f64,
    pub runs: u64,
    pub supercritical: bool,
}

/// `Z^(k_j(n); n) / Z^(0; n)`.
pub fn estimate_two_point_ratio(ens: &Ensemble, j: usize, n: u64) -> Result<RatioEstimate> {
    if ens.runs < 100 {
        return Err(invalid("runs", "at least 100 runs are required"));
    }
    let t = ens.check_n(n)?;
    let k_mag = *ens.k_mags.get(j).ok_or_else(|| invalid("k", "no such wave vector"))?;
    let total: f64 = ens.batches.iter().map(|b| b.n[t]).sum();
    if total == 0.0 {
        return Err(Error::Numeric(format!("no surviving clusters at n = {n}")));
    }
    if k_mag == 0.0 {
        return Ok(RatioEstimate { value: 1.0, stderr: 0.0, n, k_mag });
    }
    let (value, stderr) = ens.jackknife(|b| (b.s[j][t], b.n[t]));
    Ok(RatioEstimate { value, stderr, n, k_mag })
}

/// `(E^[M_r(n)] / E^[N_n])^{1/r}`.
pub fn estimate_gyration(ens: &Ensemble, i: usize, n: u64, alpha: f64) -> Result<GyrationEstimate> {
    let r = *ens.r_values.get(i).ok_or_else(|| invalid("r", "no such moment"))?;
    if !(r > 0.0 && r < alpha) {
        return Err(invalid("r", format!("need 0 < r < alpha = {alpha}, got {r}")));
    }
    let t = ens.check_n(n)?;
    let total: f64 = ens.batches.iter().map(|b| b.n[t]).sum();
    if total == 0.0 {
        return Err(Error::Numeric(format!("no surviving clusters at n = {n}")));
    }
    let (ratio, se) = ens.jackknife(|b| (b.m[i][t], b.n[t]));
    let xi = ratio.powf(1.0 / r);
    let stderr = if ratio > 0.0 { xi * se / (r * ratio) } else { 0.0 };
    Ok(GyrationEstimate { xi, stderr, r, n })
}

/// Least-squares slope of `ln E^[N_n]` over `[n1, n2]`, with jackknife error.
fn log_count_slope(ens: &Ensemble, n1: u64, n2: u64) -> Result<(f64, f64)> {
    if n2 > ens.n_max || n1 >= n2 {
        return Err(invalid("window", format!("[{n1}, {n2}] is not a valid window")));
    }
    let xs: Vec<f64> = (n1..=n2).map(|n| n as f64).collect();
    let slope_of = |skip: Option<usize>| -> Option<f64> {
        let ys: Option<Vec<f64>> = (n1..=n2)
            .map(|n| {
                let t = n as usize;
                let (num, den) = ens
                    .batches
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| Some(*b) != skip)
                    .fold((0.0, 0.0), |a, (_, b)| (a.0 + b.n[t], a.1 + b.runs as f64));
                let m = num / den;
                (m > 0.0).then(|| m.ln())
            })
            .collect();
        ys.map(|ys| linear_fit(&xs, &ys, None).slope)
    };
    let slope = slope_of(None)
        .ok_or_else(|| Error::Numeric(format!("E[N_n] vanishes inside [{n1}, {n2}]")))?;
    let nb = ens.batches.len();
    let leave: Vec<f64> = (0..nb).filter_map(|b| slope_of(Some(b))).collect();
    let g = leave.len() as f64;
    let se = if leave.len() == nb {
        let mean = leave.iter().sum::<f64>() / g;
        ((g - 1.0) / g * leave.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()).sqrt()
    } else {
        f64::INFINITY
    };
    Ok((slope, se))
}

/// `m^ = exp(-slope)` of `ln E^[N_n]` over `[n1, n2]`, `n2 >= 2 n1`.
pub fn estimate_growth(ens: &Ensemble, n1: u64, n2: u64) -> Result<GrowthEstimate> {
    if n2 < 2 * n1 {
        return Err(invalid("window", "need n2 >= 2 n1"));
    }
    let (slope, se) = log_count_slope(ens, n1, n2)?;
    let m_hat = (-slope).exp();
    let mut chi = 0.0;
    for n in 0..=ens.n_max {
        chi += ens.mean_count(n)?.0;
    }
    Ok(GrowthEstimate { m_hat, stderr: m_hat * se, chi_partial: chi, window: (n1, n2) })
}

/// Simulate `runs` clusters in parallel and reduce in run-index order.
pub fn run_ensemble(cfg: &SimConfig, kernel: &dyn StepKernel, seed: u64, runs: u64) -> Result<Ensemble> {
    cfg.validate(kernel)?;
    let mut ens = Ensemble::new(cfg, runs);
    for_each_run(cfg, kernel, seed, 0..runs, |r| {
        ens.push(r);
        true
    });
    Ok(ens)
}

/// Runs `range` in parallel chunks, feeding results to `sink` in order; stops
/// early when `sink` returns false.
pub fn for_each_run(
    cfg: &SimConfig,
    kernel: &dyn StepKernel,
    seed: u64,
    range: std::ops::Range<u64>,
    mut sink: impl FnMut(&RunSeries) -> bool,
) {
    const CHUNK: u64 = 512;
    let mut start = range.start;
    while start < range.end {
        let end = (start + CHUNK).min(range.end);
        let chunk: Vec<RunSeries> =
            (start..end).into_par_iter().map(|i| run_cluster(cfg, kernel, seed, i)).collect();
        for r in &chunk {
            if !sink(r) {
                return;
            }
        }
        start = end;
    }
}

/// Settings for [`estimate_pc`].
#[derive(Clone, Debug)]
pub struct PcSearch {
    pub p_lo: f64,
    pub p_hi: f64,
    pub target_width: f64,
    pub n_max: u64,
    pub runs: u64,
    /// Undecided classifications are retried with 4x the runs this many times.
    pub escalations: u32,
    pub z: f64,
    pub max_steps: u32,
    pub slice_cap: usize,
}

impl Default for PcSearch {
    fn default() -> Self {
        PcSearch {
            p_lo: 0.25,
            p_hi: 2.0,
            target_width: 0.02,
            n_max: 256,
            runs: 4000,
            escalations: 3,
            z: 3.0,
            max_steps: 30,
            slice_cap: 100_000,
        }
    }
}

/// Classify `p` by the sign of the `ln E^[N_n]` slope over `[n_max/2, n_max]`.
pub fn classify(kernel: &dyn StepKernel, mode: Mode, p: f64, search: &PcSearch, seed: u64) -> Result<PcProbe> {
    let mut runs = search.runs;
    let mut attempt = 0;
    loop {
        let mut cfg = SimConfig::new(p, search.n_max, mode);
        cfg.slice_cap = search.slice_cap;
        cfg.validate(kernel)?;
        let mut ens = Ensemble::new(&cfg, runs);
        let mut capped = false;
        for_each_run(&cfg, kernel, seed, 0..runs, |r| {
            ens.push(r);
            capped = r.status == RunStatus::Capped;
            !capped
        });
        if capped {
            return Ok(PcProbe { p, slope: f64::INFINITY, stderr: 0.0, runs, supercritical: true });
        }
        let n1 = search.n_max / 2;
        match log_count_slope(&ens, n1, search.n_max) {
            Err(_) => return Ok(PcProbe { p, slope: f64::NEG_INFINITY, stderr: 0.0, runs, supercritical: false }),
            Ok((slope, se)) => {
                let decided = slope.abs() > search.z * se;
                if decided || attempt >= search.escalations {
                    return Ok(PcProbe { p, slope, stderr: se, runs, supercritical: slope >= 0.0 });
                }
            }
        }
        attempt += 1;
        runs *= 4;
    }
}

/// Bisection for the growth threshold.
pub fn estimate_pc(kernel: &dyn StepKernel, mode: Mode, search: &PcSearch, seed: u64) -> Result<PcBracket> {
    if !(search.p_lo < search.p_hi) || search.p_lo <= 0.0 {
        return Err(invalid("p_bracket", "need 0 < p_lo < p_hi"));
    }
    let mut trace = Vec::new();
    let lo = classify(kernel, mode, search.p_lo, search, seed)?;
    let hi = classify(kernel, mode, search.p_hi, search, seed)?;
    let straddles = !lo.supercritical && hi.supercritical;
    trace.push(lo);
    trace.push(hi);
    if !straddles {
        return Err(invalid("p_bracket", format!("[{}, {}] does not straddle the threshold", search.p_lo, search.p_hi)));
    }
    let (mut a, mut b) = (search.p_lo, search.p_hi);
    let mut steps = 0;
    while b - a > search.target_width && steps < search.max_steps {
        let mid = 0.5 * (a + b);
        let probe = classify(kernel, mode, mid, search, seed)?;
        if probe.supercritical {
            b = mid;
        } else {
            a = mid;
        }
        trace.push(probe);
        steps += 1;
    }
    Ok(PcBracket { p_lo: a, p_hi: b, width: b - a, trace })
}
