//! Power laws with optional logarithmic corrections, fitted in log-log coordinates.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Power of |log x| multiplying x^b.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogCorrection {
    None,
    Half,
    ThreeHalves,
}

impl LogCorrection {
    pub const ALL: [LogCorrection; 3] = [LogCorrection::None, LogCorrection::Half, LogCorrection::ThreeHalves];

    pub fn power(self) -> f64 {
        match self {
            LogCorrection::None => 0.0,
            LogCorrection::Half => 0.5,
            LogCorrection::ThreeHalves => 1.5,
        }
    }
}

/// y = A x^b |log x|^c with c fixed by the correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub log_correction: LogCorrection,
    pub exponent: f64,
    pub prefactor: f64,
    /// 1 - SSE/SST of log y, comparable across corrections
    pub r2: f64,
}

fn check_rows(x: &[f64], y: &[f64], min_rows: usize, min_decades: f64) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput("x and y differ in length".into()));
    }
    if x.len() < min_rows {
        return Err(Error::InvalidInput(format!("need at least {min_rows} rows, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidInput("power fits need positive finite data".into()));
    }
    let (lo, hi) = x.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let decades = (hi / lo).log10();
    if decades < min_decades {
        return Err(Error::InvalidInput(format!("data span {decades:.2} decades, below {min_decades}")));
    }
    Ok(())
}

/// Least squares fit of log y = log A + b log x + c log|log x| with c fixed.
pub fn fit_power_law(x: &[f64], y: &[f64], correction: LogCorrection) -> Result<PowerFit> {
    check_rows(x, y, 3, 0.3)?;
    if correction != LogCorrection::None && x.iter().any(|&v| (v.ln()).abs() < 1e-3) {
        return Err(Error::InvalidInput("log correction needs x away from 1".into()));
    }
    let c = correction.power();
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let target: Vec<f64> = ly.iter().zip(&lx).map(|(l, u)| l - c * u.abs().ln()).collect();
    let n = x.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let mt = target.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|u| (u - mx).powi(2)).sum();
    let sxt: f64 = lx.iter().zip(&target).map(|(u, t)| (u - mx) * (t - mt)).sum();
    let b = sxt / sxx;
    let a = mt - b * mx;
    let my = ly.iter().sum::<f64>() / n;
    let sst: f64 = ly.iter().map(|l| (l - my).powi(2)).sum();
    let sse: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(u, l)| (l - (a + b * u + c * u.abs().ln())).powi(2))
        .sum();
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { 1.0 };
    Ok(PowerFit { log_correction: correction, exponent: b, prefactor: a.exp(), r2 })
}

/// Fit of a modulus zeta against the candidate forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaFit {
    pub exponent: f64,
    pub log_correction: LogCorrection,
    pub r2: f64,
    /// the candidate form closest to the best fit
    pub candidate: String,
    pub fits: Vec<PowerFit>,
}

/// Candidate moduli zeta(t) for dimension `dim`: (name, exponent, correction).
pub fn zeta_candidates(dim: usize) -> Vec<(String, f64, LogCorrection)> {
    let n = dim as f64;
    let mut out = vec![
        ("t".to_string(), 1.0, LogCorrection::None),
        ("t|log t|^(1/2)".to_string(), 1.0, LogCorrection::Half),
    ];
    if dim > 2 {
        out.push(("t^((N+2)/(2(N-2)))".to_string(), (n + 2.0) / (2.0 * (n - 2.0)), LogCorrection::None));
    }
    out.push(("t^((N+2)/16)".to_string(), (n + 2.0) / 16.0, LogCorrection::None));
    out
}

/// Best power law with log correction for y = zeta(t): at least 5 rows over 1.5 decades.
pub fn fit_zeta(t: &[f64], y: &[f64], dim: usize) -> Result<ZetaFit> {
    check_rows(t, y, 5, 1.5)?;
    let fits: Vec<PowerFit> = LogCorrection::ALL.iter().map(|&c| fit_power_law(t, y, c)).collect::<Result<_>>()?;
    let best = *fits.iter().max_by(|a, b| a.r2.total_cmp(&b.r2)).expect("three fits");
    let candidate = zeta_candidates(dim)
        .into_iter()
        .filter(|(_, _, c)| *c == best.log_correction || best.log_correction == LogCorrection::ThreeHalves)
        .min_by(|a, b| (a.1 - best.exponent).abs().total_cmp(&(b.1 - best.exponent).abs()))
        .map(|(name, _, _)| name)
        .unwrap_or_default();
    Ok(ZetaFit { exponent: best.exponent, log_correction: best.log_correction, r2: best.r2, candidate, fits })
}
