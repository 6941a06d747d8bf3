//! Branching random walk: `Z(k; n) = p^n D^(k)^n`, evaluated in log space.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::kernel::{kn_scale, KernelTable, ValphaEstimate, WaveVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BrwEval {
    /// `ln |Z(k; n)|`.
    pub log_abs: f64,
    pub sign: i8,
    /// `D^(k)^n`.
    pub ratio: f64,
    /// First-order bound `n |D^|^{n-1} err(D^)`.
    pub ratio_err: f64,
}

pub fn brw_log_zhat(table: &KernelTable, p: f64, k: &WaveVector, n: u64) -> Result<BrwEval> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(invalid("p", "must be positive"));
    }
    if n == 0 {
        return Ok(BrwEval { log_abs: 0.0, sign: 1, ratio: 1.0, ratio_err: 0.0 });
    }
    let om = table.one_minus_dhat(k);
    let nf = n as f64;
    let dhat = 1.0 - om.value;
    // ln D^ straight from 1 - D^, which is where the precision lives for small k
    let log_dhat = if dhat > 0.0 { (-om.value).ln_1p() } else { dhat.abs().ln() };
    let sign: i8 = if dhat < 0.0 && n % 2 == 1 { -1 } else { 1 };
    let log_ratio = nf * log_dhat;
    let ratio = f64::from(sign) * log_ratio.exp();
    let ratio_err = if om.err == 0.0 {
        0.0
    } else {
        (nf * om.err * ((nf - 1.0) * log_dhat).exp()).min(2.0)
    };
    Ok(BrwEval { log_abs: nf * p.ln() + log_ratio, sign, ratio, ratio_err })
}

/// `D^(k_n)^n` on a grid; `ratios[i][j]` is for `n_grid[i]`, `k_mags[j]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioCurve {
    pub k_mags: Vec<f64>,
    pub n_grid: Vec<u64>,
    pub ratios: Vec<Vec<f64>>,
    pub errs: Vec<Vec<f64>>,
}

pub fn brw_ratio_curve(
    table: &KernelTable,
    v: &ValphaEstimate,
    alpha: f64,
    k_mags: &[f64],
    n_grid: &[u64],
) -> Result<RatioCurve> {
    let mut ratios = Vec::with_capacity(n_grid.len());
    let mut errs = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let mut row = Vec::with_capacity(k_mags.len());
        let mut erow = Vec::with_capacity(k_mags.len());
        for &km in k_mags {
            let k = kn_scale(km, n, v, alpha)?;
            let e = brw_log_zhat(table, 1.0, &k, n)?;
            row.push(e.ratio);
            erow.push(e.ratio_err);
        }
        ratios.push(row);
        errs.push(erow);
    }
    Ok(RatioCurve { k_mags: k_mags.to_vec(), n_grid: n_grid.to_vec(), ratios, errs })
}
