//! Regression of `-ln ratio` on `k^{alpha ^ 2}`, log-log slopes and the
//! spread-dependence report for the fitted constant.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::numerics::linear_fit;
use crate::percolation::RatioEstimate;

/// Relative systematic floor added in quadrature to each `-ln ratio` error.
pub const SYSTEMATIC_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerN {
    pub n: u64,
    pub c: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub intercept_stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StableFit {
    pub c_hat: f64,
    pub stderr: f64,
    pub per_n: Vec<PerN>,
    pub k_grid: Vec<f64>,
    pub intercept: f64,
    pub intercept_stderr: f64,
    /// Residuals at the largest n, in k order.
    pub residuals: Vec<f64>,
}

impl StableFit {
    /// `|intercept| / stderr` at the largest n.
    pub fn intercept_z(&self) -> f64 {
        if self.intercept_stderr > 0.0 {
            self.intercept.abs() / self.intercept_stderr
        } else if self.intercept == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Weighted fit per n with free intercept; `C_hat` is the slope at the largest n.
pub fn fit_stable_constant(points: &[RatioEstimate], alpha: f64) -> Result<StableFit> {
    let ae = alpha.min(2.0);
    let mut ns: Vec<u64> = points.iter().map(|p| p.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let mut ks: Vec<f64> = points.iter().filter(|p| p.k_mag > 0.0).map(|p| p.k_mag).collect();
    ks.sort_by(f64::total_cmp);
    ks.dedup();
    if ks.len() < 4 || ns.len() < 3 {
        return Err(invalid("ratios", "need at least 4 nonzero k_mags and 3 values of n"));
    }
    if let Some(bad) = points.iter().find(|p| !(p.value > 0.0)) {
        return Err(Error::Numeric(format!("nonpositive ratio {} at n = {}, k = {}", bad.value, bad.n, bad.k_mag)));
    }
    let mut per_n = Vec::with_capacity(ns.len());
    let mut last = None;
    for &n in &ns {
        let mut row: Vec<&RatioEstimate> = points.iter().filter(|p| p.n == n && p.k_mag > 0.0).collect();
        row.sort_by(|a, b| a.k_mag.total_cmp(&b.k_mag));
        let x: Vec<f64> = row.iter().map(|p| p.k_mag.powf(ae)).collect();
        let y: Vec<f64> = row.iter().map(|p| -p.value.ln()).collect();
        let s: Vec<f64> = row
            .iter()
            .zip(&y)
            .map(|(p, yv)| {
                let stat = p.stderr / p.value;
                (stat * stat + (SYSTEMATIC_FLOOR * yv).powi(2)).sqrt().max(1e-300)
            })
            .collect();
        let f = linear_fit(&x, &y, Some(&s));
        per_n.push(PerN { n, c: f.slope, stderr: f.se_slope, intercept: f.intercept, intercept_stderr: f.se_intercept });
        last = Some(f);
    }
    let f = last.expect("at least three n values");
    let fit = StableFit {
        c_hat: f.slope,
        stderr: f.se_slope,
        per_n,
        k_grid: ks,
        intercept: f.intercept,
        intercept_stderr: f.se_intercept,
        residuals: f.residuals,
    };
    if fit.intercept_z() > 5.0 {
        return Err(Error::Numeric(format!(
            "regression intercept {:.3e} is {:.1} standard errors from zero",
            fit.intercept,
            fit.intercept_z()
        )));
    }
    Ok(fit)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub window: (f64, f64),
}

/// Log-log slope of `y` against `x`; weighted by `yerr / y` when errors are given.
pub fn slope_fit(x: &[f64], y: &[f64], yerr: Option<&[f64]>) -> Result<SlopeFit> {
    if x.len() < 4 || x.len() != y.len() {
        return Err(invalid("series", "need at least 4 points of matching length"));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(invalid("series", "log-log fit needs positive values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let sig: Option<Vec<f64>> = yerr.and_then(|e| {
        let s: Vec<f64> = e.iter().zip(y).map(|(e, v)| e / v).collect();
        s.iter().all(|v| *v > 0.0).then_some(s)
    });
    let f = linear_fit(&lx, &ly, sig.as_deref());
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(SlopeFit { slope: f.slope, stderr: f.se_slope, intercept: f.intercept, window: (lo, hi) })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossoverCell {
    pub alpha: f64,
    pub spread: f64,
    pub lambda: f64,
    pub c_hat: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrendCheck {
    pub alpha: f64,
    pub l_small: f64,
    pub l_big: f64,
    pub dev_small: f64,
    pub dev_big: f64,
    pub combined_stderr: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossoverReport {
    pub cells: Vec<CrossoverCell>,
    /// `alpha <= 2` (stable) and `alpha > 2` (Gaussian) columns.
    pub stable_alphas: Vec<f64>,
    pub gaussian_alphas: Vec<f64>,
    pub trends: Vec<TrendCheck>,
}

impl CrossoverReport {
    pub fn all_pass(&self) -> bool {
        self.trends.iter().all(|t| t.pass)
    }
}

/// Compares the smallest and largest spread at each alpha:
/// `|C(L_big) - 1| <= |C(L_small) - 1| + 2 sqrt(se_small^2 + se_big^2)`.
pub fn crossover_report(cells: &[CrossoverCell]) -> Result<CrossoverReport> {
    let mut alphas: Vec<f64> = cells.iter().map(|c| c.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let mut trends = Vec::new();
    for &a in &alphas {
        let mut group: Vec<&CrossoverCell> = cells.iter().filter(|c| c.alpha == a).collect();
        group.sort_by(|x, y| x.spread.total_cmp(&y.spread));
        if group.len() < 2 || group[0].spread == group[group.len() - 1].spread {
            return Err(invalid("cells", format!("alpha = {a} needs at least two spreads")));
        }
        let s = group[0];
        let b = group[group.len() - 1];
        let combined = (s.stderr * s.stderr + b.stderr * b.stderr).sqrt();
        let dev_small = (s.c_hat - 1.0).abs();
        let dev_big = (b.c_hat - 1.0).abs();
        trends.push(TrendCheck {
            alpha: a,
            l_small: s.spread,
            l_big: b.spread,
            dev_small,
            dev_big,
            combined_stderr: combined,
            pass: dev_big <= dev_small + 2.0 * combined,
        });
    }
    Ok(CrossoverReport {
        cells: cells.to_vec(),
        stable_alphas: alphas.iter().cloned().filter(|a| *a <= 2.0).collect(),
        gaussian_alphas: alphas.iter().cloned().filter(|a| *a > 2.0).collect(),
        trends,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(c: f64, alpha: f64, ks: &[f64], ns: &[u64]) -> Vec<RatioEstimate> {
        let mut out = vec![];
        for &n in ns {
            for &k in ks {
                out.push(RatioEstimate { value: (-c * k.powf(alpha.min(2.0))).exp(), stderr: 0.0, n, k_mag: k });
            }
        }
        out
    }

    #[test]
    fn recovers_planted_constant() {
        let pts = synthetic(2.0, 0.5, &[0.5, 1.0, 1.5, 2.0], &[10, 100, 1000]);
        let f = fit_stable_constant(&pts, 0.5).unwrap();
        assert!((f.c_hat - 2.0).abs() < 1e-12);
        assert!(f.per_n.iter().all(|p| (p.c - 2.0).abs() < 1e-12));
    }

    #[test]
    fn rescaling_k_and_c_jointly_preserves_predictions() {
        let pts = synthetic(1.3, 1.5, &[0.5, 1.0, 1.5, 2.0], &[10, 100, 1000]);
        let s: f64 = 2.0;
        let scaled: Vec<RatioEstimate> =
            pts.iter().map(|p| RatioEstimate { k_mag: p.k_mag * s, ..*p }).collect();
        let a = fit_stable_constant(&pts, 1.5).unwrap();
        let b = fit_stable_constant(&scaled, 1.5).unwrap();
        assert!((b.c_hat - a.c_hat / s.powf(1.5)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut pts = synthetic(1.0, 0.5, &[0.5, 1.0, 1.5, 2.0], &[10, 100, 1000]);
        assert!(fit_stable_constant(&pts[..8], 0.5).is_err());
        pts[3].value = 0.0;
        assert!(fit_stable_constant(&pts, 0.5).is_err());
        let mut curved = synthetic(1.0, 0.5, &[0.5, 1.0, 1.5, 2.0], &[10, 100, 1000]);
        for p in curved.iter_mut() {
            p.value *= 0.9;
        }
        assert!(fit_stable_constant(&curved, 0.5).is_err());
    }

    #[test]
    fn slope_of_square_is_two() {
        let x = [1.0, 2.0, 3.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let f = slope_fit(&x, &y, None).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!(slope_fit(&x, &[1.0, -1.0, 2.0, 3.0], None).is_err());
    }

    #[test]
    fn crossover_needs_two_spreads() {
        let cell = |l: f64, c: f64| CrossoverCell { alpha: 0.5, spread: l, lambda: l.powi(-2), c_hat: c, stderr: 0.01 };
        assert!(crossover_report(&[cell(2.0, 1.1)]).is_err());
        let r = crossover_report(&[cell(2.0, 1.1), cell(8.0, 1.02)]).unwrap();
        assert!(r.all_pass());
        let r = crossover_report(&[cell(2.0, 1.0), cell(8.0, 1.2)]).unwrap();
        assert!(!r.all_pass());
    }
}
