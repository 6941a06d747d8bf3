//! Singular Fourier-space integrals: `K_delta`, the fractional-moment
//! representation, `J(u)`, the triangle proxy and the shifted-J moment.
//!
//! The d-dimensional integrals use dyadic-shell importance strata around each
//! singular centre with quasi-random nodes; successive levels add two inner
//! shells, and the level sequence decides between a finite value and
//! divergence.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::{EvalOptions, KernelTable, WaveVector};
use crate::numerics::{self, one_minus_cos};
use crate::rng::{domain, stream};

/// Shells span radii `R 2^{-i-1} .. R 2^{-i}` with `R = 1`.
const SHELL_RADIUS: f64 = 1.0;
/// Shells on the coarsest level when centres are far apart.
const BASE_SHELLS: usize = 11;
const MAX_LEVELS: usize = 8;
const BLOCK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub dim: usize,
    pub nodes_per_level: usize,
    pub levels: usize,
    /// Extra refinement centres beyond those implied by the integrand.
    #[serde(default)]
    pub singular_centers: Vec<Vec<f64>>,
    pub seed: u64,
}

impl QuadratureSpec {
    pub fn new(dim: usize, nodes_per_level: usize, levels: usize, seed: u64) -> Self {
        QuadratureSpec { dim, nodes_per_level, levels, singular_centers: vec![], seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > 4 {
            return Err(invalid("dim", "must be in 1..=4"));
        }
        if self.nodes_per_level < 1 << 10 {
            return Err(invalid("nodes_per_level", "must be at least 2^10"));
        }
        if self.levels < 3 || self.levels > MAX_LEVELS {
            return Err(invalid("levels", format!("must be in 3..={MAX_LEVELS}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagramValue {
    pub value: f64,
    pub half_width: f64,
    pub level_values: Vec<f64>,
    pub diverging: bool,
}

/// `1 - D^(l)`: exact kernel or the profile `min(1, |l|^{alpha ^ 2})`.
#[derive(Clone, Debug)]
pub enum DhatModel {
    Surrogate { alpha: f64, d: usize },
    Exact(Arc<KernelTable>),
}

impl DhatModel {
    pub fn surrogate(alpha: f64, d: usize) -> Self {
        DhatModel::Surrogate { alpha, d }
    }

    pub fn dim(&self) -> usize {
        match self {
            DhatModel::Surrogate { d, .. } => *d,
            DhatModel::Exact(t) => t.spec().d,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            DhatModel::Surrogate { alpha, .. } => *alpha,
            DhatModel::Exact(t) => t.spec().alpha,
        }
    }

    /// `1 - D^(l)` with `l` reduced into the Brillouin zone.
    pub fn one_minus(&self, l: &[f64]) -> f64 {
        let wrapped: Vec<f64> = l.iter().map(|c| wrap(*c)).collect();
        match self {
            DhatModel::Surrogate { alpha, .. } => {
                let r = wrapped.iter().map(|c| c * c).sum::<f64>().sqrt();
                r.powf(alpha.min(2.0)).min(1.0)
            }
            DhatModel::Exact(t) => {
                let k = WaveVector::new(wrapped).expect("wrapped into the zone");
                t.one_minus_dhat_with(&k, &EvalOptions::fast()).value.max(0.0)
            }
        }
    }
}

fn wrap(x: f64) -> f64 {
    if x.abs() <= PI {
        x
    } else {
        x - 2.0 * PI * (x / (2.0 * PI)).round()
    }
}

/// `int_0^inf (1 - cos(a t)) t^{-1-delta} dt` with an absolute error bound.
///
/// Taylor series on `[0, eps]`, period-aligned Gauss-Kronrod up to
/// `T = 2 pi N / a`, then the exact power tail minus the cosine tail from
/// repeated integration by parts.
pub fn oscillatory_power_integral(a: f64, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 2.0) {
        return Err(invalid("delta", format!("must lie in (0, 2), got {delta}")));
    }
    if !(a > 0.0) || !a.is_finite() {
        return Err(invalid("a", "must be positive"));
    }
    let f = |t: f64| one_minus_cos(a * t) * t.powf(-1.0 - delta);
    let eps = 0.5 / a;
    // sum_j (-1)^{j+1} a^{2j} eps^{2j-delta} / ((2j)! (2j - delta))
    let mut series = 0.0;
    let mut term = 1.0;
    let mut j = 1;
    loop {
        let jf = j as f64;
        term *= (a * eps).powi(2) / ((2.0 * jf - 1.0) * (2.0 * jf));
        let add = term * eps.powf(-delta) / (2.0 * jf - delta);
        series += if j % 2 == 1 { add } else { -add };
        if add < 1e-20 * series.abs() {
            break;
        }
        j += 1;
    }
    let period = 2.0 * PI / a;
    let periods = 64usize;
    let big_t = periods as f64 * period;
    let mut mid = 0.0;
    let mut err = 0.0;
    let (v, e) = numerics::integrate(f, eps, period, 1e-15, 1e-14, 400);
    mid += v;
    err += e;
    for p in 1..periods {
        let lo = p as f64 * period;
        let (v, e) = numerics::integrate(f, lo, lo + period, 1e-16, 1e-14, 50);
        mid += v;
        err += e;
    }
    // tail: int_T^inf t^{-1-delta} - int_T^inf cos(a t) t^{-1-delta}
    // with aT a multiple of 2 pi, int_T^inf cos(a t) g = sum_m (-1)^m a^{-2m} g^{(2m-1)}(T)
    let deriv = |order: i32| -> f64 {
        let mut c = 1.0;
        for i in 1..=order {
            c *= -(i as f64 + delta);
        }
        c * big_t.powf(-1.0 - delta - order as f64)
    };
    let mut cos_tail = 0.0;
    for m in 1..=3 {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        cos_tail += sign * a.powi(-2 * m) * deriv(2 * m - 1);
    }
    let remainder = a.powi(-6) * deriv(5).abs();
    let value = series + mid + big_t.powf(-delta) / delta - cos_tail;
    Ok((value, err + remainder + 1e-15 * value.abs()))
}

/// `K_delta = int_0^inf (1 - cos t) / t^{1+delta} dt`.
pub fn kdelta(delta: f64) -> Result<f64> {
    oscillatory_power_integral(1.0, delta).map(|v| v.0)
}

/// `|K_delta^{-1} int_0^inf (1 - cos(ua)) u^{-1-delta} du - a^delta| / a^delta`.
pub fn frac_moment_check(a: f64, delta: f64) -> Result<f64> {
    let k = kdelta(delta)?;
    let (num, _) = oscillatory_power_integral(a, delta)?;
    let target = a.powf(delta);
    Ok((num / k - target).abs() / target)
}

/// `int_{-pi}^{pi} (a + |theta|)^{-3} dtheta / (2 pi)`.
pub fn theta_integral(a: f64) -> f64 {
    (a.powi(-2) - (a + PI).powi(-2)) / (2.0 * PI)
}

/// Generalised golden-ratio (R_d) low-discrepancy sequence with a random shift.
struct Kronecker {
    step: [f64; 4],
    shift: [f64; 4],
    dim: usize,
}

impl Kronecker {
    fn new(dim: usize, seed: u64, index: u64) -> Self {
        // phi_d solves x^{d+1} = x + 1
        let mut phi: f64 = 2.0;
        for _ in 0..64 {
            phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
        }
        let mut step = [0.0; 4];
        for (j, s) in step.iter_mut().enumerate().take(dim) {
            *s = phi.powi(-(j as i32 + 1)).fract();
        }
        let mut rng = stream(seed, domain::QUADRATURE, index);
        let mut shift = [0.0; 4];
        for s in shift.iter_mut().take(dim) {
            *s = rng.random();
        }
        Kronecker { step, shift, dim }
    }

    fn point(&self, i: usize, out: &mut [f64; 4]) {
        let fi = i as f64;
        for ((o, s), st) in out.iter_mut().zip(&self.shift).zip(&self.step).take(self.dim) {
            *o = (s + fi * st).fract();
        }
    }
}

fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => 2.0 * PI * PI,
    }
}

/// Uniform direction on `S^{d-1}` from `d - 1` uniforms.
fn direction(d: usize, u: &[f64]) -> [f64; 4] {
    let mut x = [0.0; 4];
    match d {
        1 => x[0] = if u[0] < 0.5 { -1.0 } else { 1.0 },
        2 => {
            let t = 2.0 * PI * u[0];
            x[0] = t.cos();
            x[1] = t.sin();
        }
        3 => {
            let z = 2.0 * u[0] - 1.0;
            let s = (1.0 - z * z).max(0.0).sqrt();
            let t = 2.0 * PI * u[1];
            x[0] = s * t.cos();
            x[1] = s * t.sin();
            x[2] = z;
        }
        _ => {
            let (a, b) = ((1.0 - u[0]).sqrt(), u[0].sqrt());
            let (t1, t2) = (2.0 * PI * u[1], 2.0 * PI * u[2]);
            x[0] = a * t1.cos();
            x[1] = a * t1.sin();
            x[2] = b * t2.cos();
            x[3] = b * t2.sin();
        }
    }
    x
}

fn nearest(centers: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d2: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    (best.0, best.1.sqrt())
}

/// Quasi-random sum over `count` nodes in fixed block order.
fn block_sum(count: usize, eval: impl Fn(usize) -> f64 + Sync) -> f64 {
    let blocks = count.div_ceil(BLOCK);
    let partial: Vec<f64> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let hi = ((b + 1) * BLOCK).min(count);
            (b * BLOCK..hi).map(&eval).sum()
        })
        .collect();
    partial.iter().sum()
}

/// Integral of `f` over `[-pi, pi]^d` (normalised by `(2 pi)^d`) at every level.
fn stratified(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    centers: &[Vec<f64>],
    spec: &QuadratureSpec,
) -> Result<DiagramValue> {
    spec.validate()?;
    let d = spec.dim;
    if centers.iter().any(|c| c.len() != d || c.iter().any(|v| v.abs() + SHELL_RADIUS >= PI)) {
        return Err(invalid("singular_centers", "centres must lie well inside the Brillouin zone"));
    }
    // the coarsest level must already separate the centres
    let mut sep = f64::INFINITY;
    for (i, a) in centers.iter().enumerate() {
        for b in &centers[i + 1..] {
            sep = sep.min(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt());
        }
    }
    let base = if sep.is_finite() {
        BASE_SHELLS.max((8.0 * SHELL_RADIUS / sep).log2().ceil() as usize)
    } else {
        BASE_SHELLS
    };
    let max_shells = base + 2 * (spec.levels - 1);
    let strata = 1 + centers.len() * max_shells;
    let outer_nodes = spec.nodes_per_level / 4;
    let shell_nodes = ((spec.nodes_per_level - outer_nodes) / (strata - 1)).max(64);
    let cube = (2.0 * PI).powi(d as i32);
    let mut level_values = Vec::with_capacity(spec.levels);
    for level in 0..spec.levels {
        let first = (level * strata) as u64;
        let seq = Kronecker::new(d, spec.seed, first);
        let outer = block_sum(outer_nodes, |i| {
            let mut u = [0.0; 4];
            seq.point(i, &mut u);
            let x: Vec<f64> = u[..d].iter().map(|v| PI * (2.0 * v - 1.0)).collect();
            if nearest(centers, &x).1 < SHELL_RADIUS {
                0.0
            } else {
                f(&x)
            }
        }) / outer_nodes as f64;
        let mut total = outer;
        let used = base + 2 * level;
        for (ci, c) in centers.iter().enumerate() {
            let mut shells = Vec::with_capacity(used);
            for s in 0..used {
                let hi = SHELL_RADIUS * 0.5f64.powi(s as i32);
                let lo = 0.5 * hi;
                let seq = Kronecker::new(d, spec.seed, first + 1 + (ci * max_shells + s) as u64);
                let jac = sphere_area(d) * (hi / lo).ln() / cube;
                let sum = block_sum(shell_nodes, |i| {
                    let mut u = [0.0; 4];
                    seq.point(i, &mut u);
                    let rho = lo * (hi / lo).powf(u[0]);
                    let dir = direction(d, &u[1..]);
                    let x: Vec<f64> = (0..d).map(|j| c[j] + rho * dir[j]).collect();
                    if nearest(centers, &x).0 != ci {
                        return 0.0;
                    }
                    f(&x) * rho.powi(d as i32) * jac
                });
                shells.push(sum / shell_nodes as f64);
            }
            total += shells.iter().sum::<f64>();
            // geometric continuation of the shell series inside the last shell
            if used >= 2 {
                let q = shells[used - 1] / shells[used - 2];
                if q.is_finite() && (0.0..0.95).contains(&q) {
                    total += shells[used - 1] * q / (1.0 - q);
                }
            }
        }
        level_values.push(total * cube);
    }
    Ok(summarize(level_values))
}

fn summarize(level_values: Vec<f64>) -> DiagramValue {
    let m = level_values.len();
    let ratio = |i: usize| level_values[i + 1] / level_values[i];
    let diverging = m >= 3 && ratio(m - 2) >= 1.5 && ratio(m - 3) >= 1.5;
    let value = level_values[m - 1];
    let half_width = (level_values[m - 1] - level_values[m - 2])
        .abs()
        .max((level_values[m - 2] - level_values[m - 3]).abs());
    DiagramValue { value, half_width, level_values, diverging }
}

fn check_precision(v: DiagramValue) -> Result<DiagramValue> {
    if !v.diverging && v.half_width > 0.2 * v.value.abs() {
        return Err(Error::Numeric(format!(
            "half width {:.3e} exceeds 20% of value {:.3e} at full budget",
            v.half_width, v.value
        )));
    }
    Ok(v)
}

fn merged_centers(implied: Vec<Vec<f64>>, spec: &QuadratureSpec) -> Vec<Vec<f64>> {
    let mut out = implied;
    for c in &spec.singular_centers {
        if !out.contains(c) {
            out.push(c.clone());
        }
    }
    out
}

fn check_model(model: &DhatModel, spec: &QuadratureSpec) -> Result<()> {
    if model.dim() != spec.dim {
        return Err(invalid("dim", "model and quadrature dimensions differ"));
    }
    Ok(())
}

/// `J(u_vec) = int [(1 - D^(l))^2 (1 - D^(l - u_vec))]^{-1} d^d l / (2 pi)^d`.
pub fn jhat_vec(shift: &[f64], model: &DhatModel, spec: &QuadratureSpec) -> Result<DiagramValue> {
    check_model(model, spec)?;
    if shift.len() != spec.dim {
        return Err(invalid("u", "shift dimension mismatch"));
    }
    let f = |l: &[f64]| {
        let a = model.one_minus(l);
        let lu: Vec<f64> = l.iter().zip(shift).map(|(x, s)| x - s).collect();
        let b = model.one_minus(&lu);
        1.0 / (a * a * b)
    };
    let centers = merged_centers(vec![vec![0.0; spec.dim], shift.to_vec()], spec);
    stratified(&f, &centers, spec).and_then(check_precision)
}

/// `J(u)` with the shift along the first axis.
pub fn jhat(u: f64, model: &DhatModel, spec: &QuadratureSpec) -> Result<DiagramValue> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(invalid("u", format!("must lie in (0, 1], got {u}")));
    }
    let mut shift = vec![0.0; spec.dim];
    shift[0] = u;
    jhat_vec(&shift, model, spec)
}

/// `int d^d l / (2 pi)^d int dtheta / (2 pi) (|theta| + 1 - D^(l))^{-3}`.
pub fn triangle_proxy(model: &DhatModel, spec: &QuadratureSpec) -> Result<DiagramValue> {
    check_model(model, spec)?;
    let f = |l: &[f64]| theta_integral(model.one_minus(l));
    let centers = merged_centers(vec![vec![0.0; spec.dim]], spec);
    stratified(&f, &centers, spec).and_then(check_precision)
}

/// `int_0^1 v^{-1-delta2} (1 - D^(v e1)) J(|v - u|)^{1/2} dv`.
///
/// `inner` sets the per-evaluation budget for `J`, which is tabulated on a
/// log grid of shifts and interpolated; the outer integral splits at the
/// singular band `[u/2, 3u/2]` and uses `r = |v - u|` inside it.
pub fn shifted_j_moment(
    u: f64,
    delta2: f64,
    model: &DhatModel,
    inner: &QuadratureSpec,
) -> Result<DiagramValue> {
    let ae = model.alpha().min(2.0);
    if !(delta2 < ae) {
        return Err(invalid("delta2", format!("need delta2 < alpha ^ 2 = {ae}, got {delta2}")));
    }
    if !(u > 0.0 && u <= 1.0) {
        return Err(invalid("u", "must lie in (0, 1]"));
    }
    let table = JTable::build(model, inner, u)?;
    let d = model.dim();
    let moment = |v: f64, which: usize| -> f64 {
        let mut l = vec![0.0; d];
        l[0] = v;
        let w = (v - u).abs();
        v.powf(-1.0 - delta2) * model.one_minus(&l) * table.eval(w, which).sqrt()
    };
    let mut values = Vec::with_capacity(table.levels());
    for which in 0..table.levels() {
        let g = |v: f64| moment(v, which);
        let mut total = 0.0;
        let lo_band = 0.5 * u;
        let hi_band = (1.5 * u).min(1.0);
        // [0, u/2]: v^{-1-delta2+alpha} near zero, geometric panels
        let mut b = lo_band;
        while b > 1e-14 * u {
            let a = 0.25 * b;
            total += numerics::gk15(&mut |x| g(x), a, b).0;
            b = a;
        }
        total += b.powf(ae - delta2) / (ae - delta2) * table.eval(u, which).sqrt();
        // singular band, r = |v - u| on both sides of u
        for side in [-1.0, 1.0] {
            let reach = if side < 0.0 { u - lo_band } else { hi_band - u };
            if reach <= 0.0 {
                continue;
            }
            let mut hi = reach;
            while hi > 1e-12 * reach {
                let lo = 0.25 * hi;
                total += numerics::gk15(&mut |r| g(u + side * r), lo, hi).0;
                hi = lo;
            }
        }
        if hi_band < 1.0 {
            total += numerics::integrate(g, hi_band, 1.0, 1e-14, 1e-10, 200).0;
        }
        values.push(total);
    }
    let v = summarize(values);
    // J enters through a square root; its half width propagates at half strength
    Ok(DiagramValue { diverging: table.diverging, ..v })
}

/// `J(w)` on a log grid, one column per quadrature level.
struct JTable {
    log_w: Vec<f64>,
    log_j: Vec<Vec<f64>>,
    diverging: bool,
}

impl JTable {
    fn build(model: &DhatModel, spec: &QuadratureSpec, u: f64) -> Result<Self> {
        let w_max = u.max(1.0 - u).max(1e-3);
        let w_min = 1e-4f64.min(0.1 * u);
        let points = 16;
        let mut log_w = Vec::with_capacity(points);
        let mut log_j = vec![Vec::with_capacity(points); spec.levels];
        let mut diverging = false;
        for i in 0..points {
            let w = w_min * (w_max / w_min).powf(i as f64 / (points - 1) as f64);
            let mut shift = vec![0.0; spec.dim];
            shift[0] = w;
            let v = jhat_vec(&shift, model, spec)?;
            diverging |= v.diverging;
            log_w.push(w.ln());
            for (col, lv) in log_j.iter_mut().zip(&v.level_values) {
                col.push(lv.ln());
            }
        }
        Ok(JTable { log_w, log_j, diverging })
    }

    fn levels(&self) -> usize {
        self.log_j.len()
    }

    /// Piecewise power-law interpolation; power-law extrapolation at the ends.
    fn eval(&self, w: f64, level: usize) -> f64 {
        let x = w.max(1e-300).ln();
        let xs = &self.log_w;
        let ys = &self.log_j[level];
        let n = xs.len();
        let i = match xs.iter().position(|v| *v > x) {
            Some(0) => 0,
            Some(i) => i - 1,
            None => n - 2,
        }
        .min(n - 2);
        let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
        (ys[i] + t * (ys[i + 1] - ys[i])).exp()
    }
}
