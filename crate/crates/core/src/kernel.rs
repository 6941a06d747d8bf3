//! Spread-out heavy-tailed step distribution `D(x) = h(x/L) / sum_y h(y/L)`
//! with `h(x) = (1 v |x|)^{-d-alpha}`.
//!
//! The table stores `h` exactly on the core cube `|x|_inf <= S_core`; beyond
//! it, the l-infinity shell sums are polynomially weighted power sums and are
//! evaluated through Hurwitz zeta functions, so nothing is truncated.

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{self, hurwitz_zeta, one_minus_sinc, sinc};
use crate::rng::Stream;

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 4;

/// A lattice site; unused trailing coordinates are zero.
///
/// Coordinates are 128-bit: with alpha < 1 single steps beyond 2^63 occur at
/// desk-scale sample sizes.
pub type Site = [i128; MAX_DIM];

pub const ORIGIN: Site = [0; MAX_DIM];

/// Euclidean length of a site.
pub fn site_norm(x: &Site) -> f64 {
    x.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt()
}

pub fn site_dot(k: &[f64], x: &Site) -> f64 {
    k.iter().zip(x).map(|(a, &b)| a * b as f64).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Euclidean,
    Linfty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub d: usize,
    pub alpha: f64,
    #[serde(rename = "L")]
    pub spread: f64,
    #[serde(default = "default_profile")]
    pub profile: Profile,
    /// Defaults to `max(8*ceil(L), 32)` when zero or absent.
    #[serde(default)]
    pub core_radius: u64,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
}

fn default_profile() -> Profile {
    Profile::Linfty
}

fn default_tail_tol() -> f64 {
    1e-10
}

impl KernelSpec {
    pub fn new(d: usize, alpha: f64, spread: f64, profile: Profile) -> Self {
        KernelSpec { d, alpha, spread, profile, core_radius: 0, tail_tol: default_tail_tol() }
    }

    pub fn with_core_radius(mut self, r: u64) -> Self {
        self.core_radius = r;
        self
    }

    /// `alpha ^ 2`, the exponent governing the small-k behaviour of `1 - D^(k)`.
    pub fn alpha_eff(&self) -> f64 {
        self.alpha.min(2.0)
    }

    pub fn effective_core_radius(&self) -> u64 {
        if self.core_radius == 0 {
            (8 * self.spread.ceil() as u64).max(32)
        } else {
            self.core_radius
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d > MAX_DIM {
            return Err(invalid("d", format!("must be in 1..={MAX_DIM}, got {}", self.d)));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(invalid("alpha", format!("must be positive, got {}", self.alpha)));
        }
        if !(self.spread >= 1.0) || !self.spread.is_finite() {
            return Err(invalid("L", format!("must be >= 1, got {}", self.spread)));
        }
        if self.core_radius != 0 && (self.core_radius as f64) < self.spread.ceil() {
            return Err(invalid("core_radius", "must be >= ceil(L)"));
        }
        if !(self.tail_tol > 0.0 && self.tail_tol <= 1e-6) {
            return Err(invalid("tail_tol", format!("must lie in (0, 1e-6], got {}", self.tail_tol)));
        }
        Ok(())
    }
}

/// Fourier value with an absolute error bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FourierEval {
    pub value: f64,
    pub err: f64,
}

/// A wave vector inside the Brillouin zone `[-pi, pi]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveVector(Vec<f64>);

impl WaveVector {
    pub fn new(k: Vec<f64>) -> Result<Self> {
        if k.iter().any(|c| !c.is_finite() || c.abs() > std::f64::consts::PI) {
            return Err(invalid("k", format!("{k:?} is outside the Brillouin zone")));
        }
        Ok(WaveVector(k))
    }

    pub fn zero(d: usize) -> Self {
        WaveVector(vec![0.0; d])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn neg(&self) -> Self {
        WaveVector(self.0.iter().map(|c| -c).collect())
    }
}

/// Calibrated constant of `1 - D^(t e) ~ v t^{alpha ^ 2}` along a direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValphaEstimate {
    pub v_alpha: f64,
    pub direction: Vec<f64>,
    pub fit_window: Vec<f64>,
    pub residual: f64,
}

/// Tuning for the l-infinity Fourier evaluator.
#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    /// Shells are summed exactly until `|k| s` exceeds this many radians.
    pub phase_span: f64,
    /// Below this `max|k_j|` the far shells are integrated (Euler-Maclaurin)
    /// instead of summed.
    pub small_k: f64,
    pub min_exact_shells: u64,
    pub max_exact_shells: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { phase_span: 2e4, small_k: 5e-3, min_exact_shells: 1000, max_exact_shells: 1 << 22 }
    }
}

impl EvalOptions {
    /// Cheap settings for use inside million-node quadratures (err ~ 1e-6).
    pub fn fast() -> Self {
        EvalOptions { phase_span: 300.0, small_k: 5e-3, min_exact_shells: 200, max_exact_shells: 4096 }
    }
}

/// Anything that can drive the cluster simulator.
pub trait StepKernel: Send + Sync {
    fn dim(&self) -> usize;
    /// `D(x)`.
    fn prob(&self, x: &Site) -> f64;
    /// `||D||_inf`.
    fn dmax(&self) -> f64;
    fn sample_step(&self, rng: &mut Stream) -> Site;
}

const REJECTION_CAP: usize = 100_000;

/// Exact tables for the heavy-tailed kernel.
#[derive(Clone, Debug)]
pub struct KernelTable {
    spec: KernelSpec,
    s_core: u64,
    exponent: f64,
    /// `h_s` for the l-infinity envelope, `s = 0..=S_core`.
    shell_h: Vec<f64>,
    shell_counts: Vec<f64>,
    /// `sum_y h(y/L)` for the actual profile.
    norm: f64,
    norm_err: f64,
    /// Probability of leaving the core under the actual profile.
    tail_mass: f64,
    /// Cumulative envelope shell probabilities, `s = 0..=S_core`, then 1.
    shell_cdf: Vec<f64>,
    alias: WeightedAliasIndex<f64>,
    /// Tail proposal acceptance ceiling `((S+3/2)/(S+1))^{d+alpha}`.
    tail_accept_bound: f64,
}

/// `sum_{s >= from} c_s s^{-beta}` with `c_s = (2s+1)^d - (2s-1)^d`.
fn shell_power_tail(d: usize, beta: f64, from: f64) -> (f64, f64) {
    let mut total = 0.0;
    let mut err = 0.0;
    for j in 0..d {
        if (d - j) % 2 == 1 {
            let coef = 2.0 * binom(d, j) * 2f64.powi(j as i32);
            let (z, e) = hurwitz_zeta(beta - j as f64, from);
            total += coef * z;
            err += coef * e;
        }
    }
    (total, err)
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn shell_count(d: usize, s: u64) -> f64 {
    if s == 0 {
        1.0
    } else {
        let s = s as f64;
        (2.0 * s + 1.0).powi(d as i32) - (2.0 * s - 1.0).powi(d as i32)
    }
}

fn linf_norm(x: &Site) -> i128 {
    x.iter().map(|c| c.abs()).max().unwrap_or(0)
}

impl KernelTable {
    pub fn build(spec: &KernelSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.d;
        let s_core = spec.effective_core_radius();
        let exponent = d as f64 + spec.alpha;
        let l = spec.spread;
        let shell_h: Vec<f64> =
            (0..=s_core).map(|s| (s as f64 / l).max(1.0).powf(-exponent)).collect();
        let shell_counts: Vec<f64> = (0..=s_core).map(|s| shell_count(d, s)).collect();
        let core: f64 = shell_h.iter().zip(&shell_counts).map(|(h, c)| h * c).sum();
        let (tail_sum, tail_err) = shell_power_tail(d, exponent, (s_core + 1) as f64);
        let scale = l.powf(exponent);
        let envelope_tail = scale * tail_sum;
        let envelope_norm = core + envelope_tail;
        let envelope_err = scale * tail_err + envelope_norm * 1e-15 * (s_core as f64).sqrt();
        if envelope_err / envelope_norm > spec.tail_tol {
            return Err(Error::Numeric(format!(
                "analytic tail remainder {:.3e} exceeds tail_tol {:.3e}",
                envelope_err / envelope_norm,
                spec.tail_tol
            )));
        }

        let (norm, norm_err, tail_mass) = match spec.profile {
            Profile::Linfty => (envelope_norm, envelope_err, envelope_tail / envelope_norm),
            Profile::Euclidean => {
                let core_e = euclid_core_sum(d, s_core, |r| (r / l).max(1.0).powf(-exponent));
                let (tail_e, tail_e_err) = euclid_tail_estimate(d, spec.alpha, l, s_core);
                let n = core_e + tail_e;
                (n, tail_e_err, tail_e / n)
            }
        };

        let mut weights: Vec<f64> =
            shell_h.iter().zip(&shell_counts).map(|(h, c)| h * c / envelope_norm).collect();
        weights.push(envelope_tail / envelope_norm);
        let mut acc = 0.0;
        let shell_cdf: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        let alias = WeightedAliasIndex::new(weights)
            .map_err(|e| Error::Numeric(format!("alias table: {e}")))?;
        let sc = s_core as f64;
        let tail_accept_bound = ((sc + 1.5) / (sc + 1.0)).powf(exponent);
        Ok(KernelTable {
            spec: spec.clone(),
            s_core,
            exponent,
            shell_h,
            shell_counts,
            norm,
            norm_err,
            tail_mass,
            shell_cdf,
            alias,
            tail_accept_bound,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn core_radius(&self) -> u64 {
        self.s_core
    }

    /// `W = sum_y h(y/L)`.
    pub fn normalization(&self) -> f64 {
        self.norm
    }

    /// Absolute error of `W` (rigorous for l-infinity, estimated for Euclidean).
    pub fn normalization_err(&self) -> f64 {
        self.norm_err
    }

    /// `lambda = L^{-d}`.
    pub fn lambda(&self) -> f64 {
        self.spec.spread.powi(-(self.spec.d as i32))
    }

    /// Probability of a step leaving the core cube.
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn shell_cdf(&self) -> &[f64] {
        &self.shell_cdf
    }

    /// `h(x/L)` for the configured profile.
    pub fn weight(&self, x: &Site) -> f64 {
        let r = match self.spec.profile {
            Profile::Linfty => linf_norm(x) as f64,
            Profile::Euclidean => site_norm(x),
        };
        (r / self.spec.spread).max(1.0).powf(-self.exponent)
    }

    /// Total probability of the core cube under the actual profile.
    pub fn core_mass(&self) -> f64 {
        1.0 - self.tail_mass
    }

    /// `Lambda(p) = sum_e -ln(1 - p D(e))`, with an absolute error bound.
    pub fn poisson_intensity(&self, p: f64) -> (f64, f64) {
        let psi = |x: f64| -(-x).ln_1p() - x;
        let core: f64 = match self.spec.profile {
            Profile::Linfty => self
                .shell_h
                .iter()
                .zip(&self.shell_counts)
                .map(|(h, c)| c * psi(p * h / self.norm))
                .sum(),
            Profile::Euclidean => {
                let l = self.spec.spread;
                let a = self.exponent;
                let w = self.norm;
                euclid_core_sum(self.spec.d, self.s_core, |r| psi(p * (r / l).max(1.0).powf(-a) / w))
            }
        };
        // psi(x) lies in [x^2/2, x^2/(2(1-x))]; the tail has x <= p h_{S+1}/W
        let scale = self.spec.spread.powf(2.0 * self.exponent);
        let (sq, _) = shell_power_tail(self.spec.d, 2.0 * self.exponent, (self.s_core + 1) as f64);
        let xmax = p * self.spec.spread.powf(self.exponent)
            * ((self.s_core + 1) as f64).powf(-self.exponent)
            / self.norm;
        let lo = 0.5 * p * p * scale * sq / (self.norm * self.norm);
        let hi = lo / (1.0 - xmax);
        match self.spec.profile {
            Profile::Linfty => (p + core + 0.5 * (lo + hi), 0.5 * (hi - lo)),
            Profile::Euclidean => (p + core + 0.5 * hi, 0.5 * hi),
        }
    }

    /// `1 - D^(k)` with an error bound.
    pub fn one_minus_dhat(&self, k: &WaveVector) -> FourierEval {
        self.one_minus_dhat_with(k, &EvalOptions::default())
    }

    pub fn one_minus_dhat_with(&self, k: &WaveVector, opts: &EvalOptions) -> FourierEval {
        let k = k.as_slice();
        assert_eq!(k.len(), self.spec.d, "wave vector dimension mismatch");
        if k.iter().all(|c| *c == 0.0) {
            return FourierEval { value: 0.0, err: 0.0 };
        }
        match self.spec.profile {
            Profile::Linfty => self.linf_one_minus(k, opts),
            Profile::Euclidean => {
                let v = self.euclid_core_cos(k);
                FourierEval { value: 1.0 - v, err: self.tail_mass + self.norm_err / self.norm }
            }
        }
    }

    /// `D^(k) = sum_x D(x) e^{ik.x}`.
    pub fn eval_dhat(&self, k: &WaveVector) -> FourierEval {
        let r = self.one_minus_dhat(k);
        FourierEval { value: (1.0 - r.value).clamp(-1.0, 1.0), err: r.err }
    }

    /// As [`eval_dhat`](Self::eval_dhat) but fails when the bound exceeds `ceiling`.
    pub fn eval_dhat_checked(&self, k: &WaveVector, ceiling: f64) -> Result<FourierEval> {
        let r = self.eval_dhat(k);
        if r.err > ceiling {
            return Err(Error::Numeric(format!(
                "D^ error bound {:.3e} exceeds ceiling {:.3e}",
                r.err, ceiling
            )));
        }
        Ok(r)
    }

    fn envelope_w(&self, s: f64) -> f64 {
        if s <= self.s_core as f64 {
            self.shell_h[s as usize]
        } else {
            self.spec.spread.powf(self.exponent) * s.powf(-self.exponent)
        }
    }

    /// `w_s - w_{s+1}` for real `s >= S_core`.
    fn power_diff(&self, s: f64) -> f64 {
        let a = self.exponent;
        self.spec.spread.powf(a) * s.powf(-a) * -(-a * (1.0 / s).ln_1p()).exp_m1()
    }

    /// l-infinity evaluation via the exact cube-character identity
    ///
    /// `1 - D^(k) = W^{-1} sum_s (w_s - w_{s+1}) F(s + 1/2)`,
    /// `F(R) = (2R)^d (1 - prod_j sinc(R k_j) / sinc(k_j / 2))`.
    fn linf_one_minus(&self, k: &[f64], opts: &EvalOptions) -> FourierEval {
        let d = self.spec.d;
        let a = self.exponent;
        let kmax = k.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let knz = k.iter().filter(|c| **c != 0.0).fold(f64::INFINITY, |m, c| m.min(c.abs()));
        let zero_dims = k.iter().filter(|c| **c == 0.0).count() as i32;
        let half: Vec<(f64, f64)> = k.iter().map(|c| (sinc(0.5 * c), one_minus_sinc(0.5 * c))).collect();
        let defect = |r: f64| -> f64 {
            let mut log_sum = 0.0;
            let mut prod = 1.0;
            let mut small = true;
            for (kj, (s_half, e_half)) in k.iter().zip(&half) {
                if *kj == 0.0 {
                    continue;
                }
                let b = (one_minus_sinc(r * kj) - e_half) / s_half;
                if b.abs() >= 0.5 {
                    small = false;
                }
                log_sum += (-b).ln_1p();
                prod *= 1.0 - b;
            }
            let inner = if small { -log_sum.exp_m1() } else { 1.0 - prod };
            (2.0 * r).powi(d as i32) * inner
        };

        let s_core = self.s_core.max(opts.min_exact_shells);
        let small_k = kmax <= opts.small_k;
        let m = if small_k {
            s_core
        } else {
            ((opts.phase_span / knz).ceil() as u64).clamp(s_core, opts.max_exact_shells.max(s_core))
        };

        // exact shells
        let mut sum = 0.0;
        let mut comp = 0.0;
        for s in 0..=m {
            let dw = if s < self.s_core {
                self.shell_h[s as usize] - self.shell_h[s as usize + 1]
            } else {
                self.power_diff(s as f64)
            };
            let term = dw * defect(s as f64 + 0.5) - comp;
            let t = sum + term;
            comp = (t - sum) - term;
            sum = t;
        }
        let mut err = 1e-15 * sum.abs() * ((m + 1) as f64).sqrt();

        let mf = m as f64;
        let y = if small_k { (opts.phase_span / knz).ceil().clamp(mf, 1e60) } else { mf };

        if y > mf {
            // midpoint Euler-Maclaurin over shells m+1..=y
            let phi = |x: f64| self.power_diff(x) * defect(x + 0.5);
            let lo = mf + 0.5;
            let hi = y + 0.5;
            let mut x0 = lo;
            let mut integral = 0.0;
            while x0 < hi {
                let x1 = (2.0 * x0).min(hi);
                let n_sub = (((x1 - x0) * kmax / 1.5).ceil() as usize + 1).min(1 << 20);
                let (v, e) = numerics::composite_gk15(phi, x0, x1, n_sub);
                integral += v;
                err += e;
                x0 = x1;
            }
            let deriv = |x: f64| {
                let h = (1e-2 * x).min(0.05 / kmax);
                (phi(x + h) - phi(x - h)) / (2.0 * h)
            };
            let third = |x: f64| {
                let h = (5e-2 * x).min(0.3 / kmax);
                (phi(x + 2.0 * h) - 2.0 * phi(x + h) + 2.0 * phi(x - h) - phi(x - 2.0 * h))
                    / (2.0 * h * h * h)
            };
            integral += (deriv(lo) - deriv(hi)) / 24.0;
            err += 7.0 / 5760.0 * (third(lo).abs() + third(hi).abs()) + 1e-15 * integral.abs();
            sum += integral;
        }

        // shells beyond y: smooth part exactly, oscillating part bounded
        let w_next = self.envelope_w(y + 1.0);
        let (t, t_err) = shell_power_tail(d, a, y + 1.0);
        let scale = self.spec.spread.powf(a);
        sum += w_next * (2.0 * y + 1.0).powi(d as i32) + scale * t;
        err += scale * t_err;
        let nonzero = d as i32 - zero_dims;
        let inv_sin: f64 = k.iter().filter(|c| **c != 0.0).map(|c| 1.0 / (0.5 * c).sin().abs()).product();
        let g_bound = if nonzero == 1 {
            // summation by parts against a monotone envelope
            self.power_diff(y + 1.0) * (2.0 * y + 3.0).powi(zero_dims) * inv_sin * inv_sin
        } else {
            let b = a - zero_dims as f64;
            inv_sin * a * scale * 3f64.powi(zero_dims) * y.powf(-b) / b
        };
        err += g_bound;

        FourierEval { value: sum / self.norm, err: err / self.norm + sum * self.norm_err / (self.norm * self.norm) }
    }

    fn euclid_core_cos(&self, k: &[f64]) -> f64 {
        let d = self.spec.d;
        let s = self.s_core as i64;
        let l = self.spec.spread;
        let a = self.exponent;
        let mut total = 0.0;
        let mut idx = vec![0i64; d];
        loop {
            let r2: f64 = idx.iter().map(|&c| (c * c) as f64).sum();
            let h = (r2.sqrt() / l).max(1.0).powf(-a);
            let m: f64 = idx
                .iter()
                .zip(k)
                .map(|(&c, kj)| if c == 0 { 1.0 } else { 2.0 * (kj * c as f64).cos() })
                .product();
            total += h * m;
            if !advance(&mut idx, s) {
                break;
            }
        }
        total / self.norm
    }

    /// Ratios `(1 - D^(t e)) / t^{alpha ^ 2}` (divided by `log(1/t)` when alpha = 2).
    pub fn valpha_ratios(&self, direction: &[f64], t_grid: &[f64]) -> Result<Vec<f64>> {
        let unit = unit_vector(direction)?;
        if unit.len() != self.spec.d {
            return Err(invalid("direction", "dimension mismatch"));
        }
        let ae = self.spec.alpha_eff();
        t_grid
            .iter()
            .map(|&t| {
                if !(t > 0.0) {
                    return Err(invalid("t_grid", "entries must be positive"));
                }
                let k = WaveVector::new(unit.iter().map(|c| c * t).collect())?;
                let r = self.one_minus_dhat(&k).value;
                let mut denom = t.powf(ae);
                if self.spec.alpha == 2.0 {
                    denom *= (1.0 / t).ln();
                }
                Ok(r / denom)
            })
            .collect()
    }

    /// Calibrate `v_alpha` along `direction` from the smallest half of `t_grid`.
    pub fn estimate_valpha(&self, direction: &[f64], t_grid: &[f64]) -> Result<ValphaEstimate> {
        if t_grid.len() < 2 {
            return Err(invalid("t_grid", "grid too short: need at least two points"));
        }
        let mut sorted = t_grid.to_vec();
        sorted.sort_by(f64::total_cmp);
        let window: Vec<f64> = sorted[..t_grid.len().div_ceil(2)].to_vec();
        let ratios = self.valpha_ratios(direction, &window)?;
        let v = (ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64).exp();
        let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
        let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
        let residual = (max - min) / v;
        let est = ValphaEstimate { v_alpha: v, direction: unit_vector(direction)?, fit_window: window, residual };
        if !(v > 0.0) || residual > 0.1 {
            return Err(Error::Numeric(format!(
                "v_alpha did not converge on this grid (residual {residual:.3e})"
            )));
        }
        Ok(est)
    }

    /// Asymptotic `v_alpha` along a coordinate axis for the l-infinity profile
    /// and `alpha < 2`, from the continuum limit of the shell identity:
    /// `v = (d+alpha) L^{d+alpha} 2^d W^{-1} int_0^inf x^{-1-alpha}(1 - sinc x) dx`.
    pub fn axis_valpha(&self) -> Result<ValphaEstimate> {
        if self.spec.profile != Profile::Linfty || self.spec.alpha >= 2.0 {
            return Err(invalid("alpha", "axis_valpha needs the linfty profile and alpha < 2"));
        }
        let alpha = self.spec.alpha;
        let q = sinc_moment(alpha);
        let d = self.spec.d;
        let v = self.exponent * self.spec.spread.powf(self.exponent) * 2f64.powi(d as i32) * q / self.norm;
        let mut dir = vec![0.0; d];
        dir[0] = 1.0;
        Ok(ValphaEstimate { v_alpha: v, direction: dir, fit_window: vec![], residual: 0.0 })
    }

    fn sample_envelope(&self, rng: &mut Stream) -> Site {
        let d = self.spec.d;
        let idx = self.alias.sample(rng);
        let s_core = self.s_core as usize;
        if idx == 0 {
            return ORIGIN;
        }
        if idx <= s_core {
            let s = idx as f64;
            let lo = (s - 0.5).powi(d as i32);
            let hi = (s + 0.5).powi(d as i32);
            let u: f64 = rng.random();
            let r = (lo + u * (hi - lo)).powf(1.0 / d as f64);
            return point_on_shell(d, r, idx as i128, rng);
        }
        // continuous Pareto proposal on |y|_inf > S + 1/2, corrected to the shell weight
        let base = self.s_core as f64 + 0.5;
        for _ in 0..REJECTION_CAP {
            let u = 1.0 - rng.random::<f64>();
            let r = base * u.powf(-1.0 / self.spec.alpha);
            let s = r.round().max(self.s_core as f64 + 1.0);
            let accept = (r / s).powf(self.exponent) / self.tail_accept_bound;
            if rng.random::<f64>() < accept {
                return point_on_shell(d, r, s as i128, rng);
            }
        }
        panic!("tail rejection sampler exceeded its iteration cap; acceptance bound violated");
    }
}

/// Uniform point on the l-infinity sphere of radius `r`, rounded to the lattice
/// and clamped onto shell `s`.
fn point_on_shell(d: usize, r: f64, s: i128, rng: &mut Stream) -> Site {
    let mut x = ORIGIN;
    let face = rng.random_range(0..d);
    for (j, c) in x.iter_mut().enumerate().take(d) {
        if j == face {
            *c = if rng.random::<bool>() { s } else { -s };
        } else {
            let y = (2.0 * rng.random::<f64>() - 1.0) * r;
            *c = (y.round() as i128).clamp(-s, s);
        }
    }
    x
}

fn advance(idx: &mut [i64], max: i64) -> bool {
    for c in idx.iter_mut() {
        if *c < max {
            *c += 1;
            return true;
        }
        *c = 0;
    }
    false
}

/// `sum_{x in cube} f(|x|_2)` using orthant symmetry.
fn euclid_core_sum(d: usize, s: u64, f: impl Fn(f64) -> f64) -> f64 {
    let mut idx = vec![0i64; d];
    let mut total = 0.0;
    loop {
        let r2: f64 = idx.iter().map(|&c| (c * c) as f64).sum();
        let mult = idx.iter().filter(|&&c| c != 0).count();
        total += f(r2.sqrt()) * (1u64 << mult) as f64;
        if !advance(&mut idx, s as i64) {
            break;
        }
    }
    total
}

/// Midpoint-cell estimate of `sum_{|x|_inf > S} h_E(x/L)` and its error.
fn euclid_tail_estimate(d: usize, alpha: f64, l: f64, s: u64) -> (f64, f64) {
    let a = d as f64 + alpha;
    // F_d = int_{[-1,1]^{d-1}} (1 + |z|^2)^{-a/2} dz by tensor Gauss-Kronrod
    let nodes = tensor_nodes();
    let mut f = 0.0;
    let mut idx = vec![0usize; d - 1];
    if d == 1 {
        f = 1.0;
    } else {
        loop {
            let mut z2 = 0.0;
            let mut w = 1.0;
            for &i in &idx {
                z2 += nodes[i].0 * nodes[i].0;
                w *= nodes[i].1;
            }
            f += w * (1.0 + z2).powf(-0.5 * a);
            let mut carry = true;
            for c in idx.iter_mut() {
                if *c + 1 < nodes.len() {
                    *c += 1;
                    carry = false;
                    break;
                }
                *c = 0;
            }
            if carry {
                break;
            }
        }
    }
    let r = s as f64 + 0.5;
    let tail = l.powf(a) * 2.0 * d as f64 * r.powf(-alpha) / alpha * f;
    let err = tail * (a * (a + 2.0) + d as f64) / (8.0 * r * r);
    (tail, err)
}

fn tensor_nodes() -> Vec<(f64, f64)> {
    let panels = 8;
    let h = 1.0 / panels as f64;
    let base = numerics::gk15_nodes();
    (0..panels)
        .flat_map(|p| {
            let c = -1.0 + (2 * p + 1) as f64 * h;
            base.iter().map(move |(x, w)| (c + h * x, w * h))
        })
        .collect()
}

/// `int_0^inf x^{-1-alpha} (1 - sin x / x) dx` for `0 < alpha < 2`.
pub fn sinc_moment(alpha: f64) -> f64 {
    let periods = 400.0;
    let big_x = 2.0 * std::f64::consts::PI * periods;
    let f = |x: f64| x.powf(-1.0 - alpha) * one_minus_sinc(x);
    let mut total = 0.0;
    // geometric panels near zero, then one panel per period
    let mut lo: f64 = 1e-12;
    total += lo.powf(2.0 - alpha) / (6.0 * (2.0 - alpha));
    while lo < 1.0 {
        let hi = (lo * 4.0).min(1.0);
        total += numerics::integrate(f, lo, hi, 1e-17, 1e-14, 200).0;
        lo = hi;
    }
    total += numerics::composite_gk15(f, 1.0, 2.0 * std::f64::consts::PI, 8).0;
    total += numerics::composite_gk15(f, 2.0 * std::f64::consts::PI, big_x, 4 * periods as usize).0;
    // tail: int x^{-1-alpha} - int sin(x) x^{-2-alpha}, the latter by parts at a period boundary
    total += big_x.powf(-alpha) / alpha - big_x.powf(-2.0 - alpha);
    total
}

fn unit_vector(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(invalid("direction", "must be a nonzero finite vector"));
    }
    Ok(v.iter().map(|c| c / n).collect())
}

impl StepKernel for KernelTable {
    fn dim(&self) -> usize {
        self.spec.d
    }

    fn prob(&self, x: &Site) -> f64 {
        self.weight(x) / self.norm
    }

    fn dmax(&self) -> f64 {
        1.0 / self.norm
    }

    /// Exact draw from `D`: shell alias table on the core, Pareto proposal with
    /// rejection against the exact shell weight beyond it, uniform site on the
    /// shell; the Euclidean profile thins l-infinity proposals by `h_E / h_inf`.
    fn sample_step(&self, rng: &mut Stream) -> Site {
        match self.spec.profile {
            Profile::Linfty => self.sample_envelope(rng),
            Profile::Euclidean => {
                let l = self.spec.spread;
                for _ in 0..REJECTION_CAP {
                    let x = self.sample_envelope(rng);
                    let ratio = ((site_norm(&x) / l).max(1.0) / (linf_norm(&x) as f64 / l).max(1.0))
                        .powf(-self.exponent);
                    if rng.random::<f64>() < ratio {
                        return x;
                    }
                }
                panic!("euclidean thinning exceeded its iteration cap");
            }
        }
    }
}

/// A finitely supported step law, e.g. a truncated kernel for exhaustive checks.
#[derive(Clone, Debug)]
pub struct FiniteKernel {
    d: usize,
    sites: Vec<Site>,
    probs: Vec<f64>,
    alias: WeightedAliasIndex<f64>,
}

impl FiniteKernel {
    /// Normalizes `weights` to a probability law.
    pub fn new(d: usize, weights: Vec<(Site, f64)>) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return Err(invalid("d", "out of range"));
        }
        let total: f64 = weights.iter().map(|w| w.1).sum();
        if !(total > 0.0) || weights.iter().any(|w| w.1 < 0.0) {
            return Err(invalid("weights", "must be nonnegative with positive sum"));
        }
        let sites: Vec<Site> = weights.iter().map(|w| w.0).collect();
        let probs: Vec<f64> = weights.iter().map(|w| w.1 / total).collect();
        let alias = WeightedAliasIndex::new(probs.clone())
            .map_err(|e| Error::Numeric(format!("alias table: {e}")))?;
        Ok(FiniteKernel { d, sites, probs, alias })
    }

    /// Restrict a kernel table to `sites` and renormalize.
    pub fn restrict(table: &KernelTable, sites: &[Site]) -> Result<Self> {
        FiniteKernel::new(table.spec.d, sites.iter().map(|s| (*s, table.prob(s))).collect())
    }

    pub fn support(&self) -> impl Iterator<Item = (&Site, f64)> {
        self.sites.iter().zip(self.probs.iter().copied())
    }
}

impl StepKernel for FiniteKernel {
    fn dim(&self) -> usize {
        self.d
    }

    fn prob(&self, x: &Site) -> f64 {
        self.sites.iter().position(|s| s == x).map_or(0.0, |i| self.probs[i])
    }

    fn dmax(&self) -> f64 {
        self.probs.iter().cloned().fold(0.0, f64::max)
    }

    fn sample_step(&self, rng: &mut Stream) -> Site {
        self.sites[self.alias.sample(rng)]
    }
}

/// `k_n = k_mag (v n)^{-1/(alpha^2)} e` (alpha != 2) or `k_mag (v n log sqrt n)^{-1/2} e`.
pub fn kn_scale(k_mag: f64, n: u64, v: &ValphaEstimate, alpha: f64) -> Result<WaveVector> {
    if n == 0 {
        return Err(invalid("n", "must be >= 1"));
    }
    if !(k_mag >= 0.0) {
        return Err(invalid("k_mag", "must be nonnegative"));
    }
    let nf = n as f64;
    let factor = if alpha == 2.0 {
        (v.v_alpha * nf * nf.sqrt().ln()).powf(-0.5)
    } else {
        (v.v_alpha * nf).powf(-1.0 / alpha.min(2.0))
    };
    if k_mag == 0.0 {
        return Ok(WaveVector::zero(v.direction.len()));
    }
    let k: Vec<f64> = v.direction.iter().map(|c| c * k_mag * factor).collect();
    WaveVector::new(k).map_err(|_| {
        invalid("n", format!("k_n escapes the Brillouin zone at n = {n}, k_mag = {k_mag}"))
    })
}
