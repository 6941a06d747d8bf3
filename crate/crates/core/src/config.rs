//! Experiment configuration: one TOML document per experiment.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagrams::QuadratureSpec;
use crate::error::{invalid, Error, Result};
use crate::kernel::{KernelSpec, KernelTable, Profile, ValphaEstimate};
use crate::percolation::{Mode, PcSearch};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker threads; not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    pub kernel: KernelSpec,
    /// Unit vector for `k_n`; defaults to the first axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
    /// Grid for calibrating `v_alpha`; the analytic axis value is used when absent
    /// and available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percolation: Option<PercolationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pc: Option<PcSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brw: Option<BrwSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagrams: Option<DiagramsSection>,
}

fn default_mode() -> Mode {
    Mode::Percolation
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PercolationSection {
    /// Bond parameter; when absent the lower end of the `[pc]` bracket is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    pub n_max: u64,
    pub runs: u64,
    #[serde(default)]
    pub k_mags: Vec<f64>,
    #[serde(default)]
    pub r_values: Vec<f64>,
    #[serde(default = "default_slice_cap")]
    pub slice_cap: usize,
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// Times used by `analysis fit`; defaults to four octaves ending at n_max.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_n: Option<Vec<u64>>,
    /// `[n1, n2]` for the growth estimate; defaults to `[n_max/2, n_max]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_window: Option<[u64; 2]>,
}

fn default_slice_cap() -> usize {
    10_000_000
}

fn default_batches() -> usize {
    20
}

impl PercolationSection {
    pub fn fit_times(&self) -> Vec<u64> {
        self.fit_n.clone().unwrap_or_else(|| {
            (0..4).rev().map(|i| self.n_max >> i).filter(|n| *n > 0).collect()
        })
    }

    pub fn window(&self) -> (u64, u64) {
        self.growth_window.map_or((self.n_max / 2, self.n_max), |w| (w[0], w[1]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcSection {
    pub p_lo: f64,
    pub p_hi: f64,
    #[serde(default = "default_width")]
    pub target_width: f64,
    #[serde(default = "default_pc_n")]
    pub n_max: u64,
    #[serde(default = "default_pc_runs")]
    pub runs: u64,
    #[serde(default = "default_escalations")]
    pub escalations: u32,
    #[serde(default = "default_z")]
    pub z: f64,
    #[serde(default = "default_pc_cap")]
    pub slice_cap: usize,
}

fn default_width() -> f64 {
    0.02
}
fn default_pc_n() -> u64 {
    128
}
fn default_pc_runs() -> u64 {
    2000
}
fn default_escalations() -> u32 {
    3
}
fn default_z() -> f64 {
    3.0
}
fn default_pc_cap() -> usize {
    100_000
}

impl PcSection {
    pub fn search(&self) -> PcSearch {
        PcSearch {
            p_lo: self.p_lo,
            p_hi: self.p_hi,
            target_width: self.target_width,
            n_max: self.n_max,
            runs: self.runs,
            escalations: self.escalations,
            z: self.z,
            max_steps: 40,
            slice_cap: self.slice_cap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrwSection {
    pub k_mags: Vec<f64>,
    pub n_grid: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Surrogate,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagramsSection {
    #[serde(default = "default_model")]
    pub model: ModelKind,
    /// Dimension and alpha of the surrogate; the kernel's are used in exact mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "default_nodes")]
    pub nodes_per_level: usize,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default)]
    pub u_values: Vec<f64>,
    #[serde(default)]
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub a_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta2: Option<f64>,
}

fn default_model() -> ModelKind {
    ModelKind::Surrogate
}
fn default_nodes() -> usize {
    1 << 20
}
fn default_levels() -> usize {
    4
}

impl DiagramsSection {
    pub fn dim(&self, kernel: &KernelSpec) -> usize {
        match self.model {
            ModelKind::Exact => kernel.d,
            ModelKind::Surrogate => self.d.unwrap_or(kernel.d),
        }
    }

    pub fn alpha(&self, kernel: &KernelSpec) -> f64 {
        match self.model {
            ModelKind::Exact => kernel.alpha,
            ModelKind::Surrogate => self.alpha.unwrap_or(kernel.alpha),
        }
    }

    pub fn quadrature(&self, kernel: &KernelSpec, seed: u64) -> QuadratureSpec {
        QuadratureSpec::new(self.dim(kernel), self.nodes_per_level, self.levels, seed)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        let d = self.kernel.d;
        if let Some(dir) = &self.direction {
            if dir.len() != d || !(dir.iter().map(|c| c * c).sum::<f64>() > 0.0) {
                return Err(invalid("direction", format!("must be a nonzero {d}-vector")));
            }
        }
        if let Some(g) = &self.t_grid {
            if g.len() < 2 || g.iter().any(|t| !(*t > 0.0 && *t <= std::f64::consts::PI)) {
                return Err(invalid("t_grid", "need at least two points in (0, pi]"));
            }
        }
        if let Some(p) = &self.percolation {
            if p.n_max == 0 {
                return Err(invalid("percolation.n_max", "must be positive"));
            }
            if p.runs < 100 {
                return Err(invalid("percolation.runs", "must be at least 100"));
            }
            if p.batches < 20 {
                return Err(invalid("percolation.batches", "must be at least 20"));
            }
            if p.k_mags.iter().any(|k| !(*k >= 0.0)) {
                return Err(invalid("percolation.k_mags", "must be nonnegative"));
            }
            if let Some(r) = p.r_values.iter().find(|r| !(**r > 0.0 && **r < self.kernel.alpha)) {
                return Err(invalid("percolation.r_values", format!("need 0 < r < alpha, got {r}")));
            }
            if let Some(pv) = p.p {
                if !(pv >= 0.0) {
                    return Err(invalid("percolation.p", "must be nonnegative"));
                }
            } else if self.pc.is_none() {
                return Err(invalid("percolation.p", "give p or a [pc] block"));
            }
            if p.fit_times().iter().any(|n| *n > p.n_max) {
                return Err(invalid("percolation.fit_n", "entries must not exceed n_max"));
            }
            let (a, b) = p.window();
            if b > p.n_max || b < 2 * a {
                return Err(invalid("percolation.growth_window", "need n2 <= n_max and n2 >= 2 n1"));
            }
        }
        if let Some(pc) = &self.pc {
            if !(pc.p_lo > 0.0 && pc.p_lo < pc.p_hi) {
                return Err(invalid("pc.p_lo", "need 0 < p_lo < p_hi"));
            }
            if !(pc.target_width > 0.0) || pc.runs < 100 || pc.n_max < 4 {
                return Err(invalid("pc", "target_width > 0, runs >= 100 and n_max >= 4 required"));
            }
        }
        if let Some(b) = &self.brw {
            if b.k_mags.is_empty() || b.n_grid.is_empty() || b.n_grid.contains(&0) {
                return Err(invalid("brw", "need k_mags and a positive n_grid"));
            }
        }
        if let Some(dg) = &self.diagrams {
            dg.quadrature(&self.kernel, self.seed).validate()?;
            let a = dg.alpha(&self.kernel);
            if !(a > 0.0) {
                return Err(invalid("diagrams.alpha", "must be positive"));
            }
            if dg.u_values.iter().any(|u| !(*u > 0.0 && *u <= 1.0)) {
                return Err(invalid("diagrams.u_values", "must lie in (0, 1]"));
            }
            if dg.deltas.iter().any(|d| !(*d > 0.0 && *d < 2.0)) {
                return Err(invalid("diagrams.deltas", "must lie in (0, 2)"));
            }
            if dg.a_values.iter().any(|a| !(*a > 0.0)) {
                return Err(invalid("diagrams.a_values", "must be positive"));
            }
            if let Some(d2) = dg.delta2 {
                if !(d2 < a.min(2.0)) {
                    return Err(invalid("diagrams.delta2", "need delta2 < alpha ^ 2"));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical (sorted-key) JSON form, without `threads` and
    /// `output_dir`.
    pub fn hash(&self) -> String {
        let mut copy = self.clone();
        copy.threads = None;
        copy.output_dir = None;
        let value = serde_json::to_value(&copy).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("json value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn direction(&self) -> Vec<f64> {
        self.direction.clone().unwrap_or_else(|| {
            let mut e = vec![0.0; self.kernel.d];
            e[0] = 1.0;
            e
        })
    }
}

/// `v_alpha` along `direction`: analytic on an axis of the l-infinity profile
/// for alpha < 2, otherwise calibrated on `t_grid` (default 1e-2 .. 1e-7).
pub fn calibrate_valpha(table: &KernelTable, direction: &[f64], t_grid: Option<&[f64]>) -> Result<ValphaEstimate> {
    let spec = table.spec();
    let on_axis = direction.iter().filter(|c| **c != 0.0).count() == 1 && direction[0] != 0.0;
    if t_grid.is_none() && on_axis && spec.profile == Profile::Linfty && spec.alpha < 2.0 {
        return table.axis_valpha();
    }
    let default: Vec<f64> = (0..11).map(|i| 10f64.powf(-2.0 - 0.5 * i as f64)).collect();
    table.estimate_valpha(direction, t_grid.unwrap_or(&default))
}
