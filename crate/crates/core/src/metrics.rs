//! Goodness-of-fit statistics for simulated vs observed discharge.
//!
//! * NSE   = 1 - Σ(obs - sim)² / Σ(obs - mean)²
//! * PBIAS = 100 · Σ(obs - sim) / Σ obs   (positive: model underestimates)
//! * RSR   = RMSE / STDEV_obs, both with `1/n`; hence RSR = sqrt(1 - NSE)

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PbiasForm {
    /// `100 · Σ(obs - sim) / Σ obs`
    #[default]
    Standard,
    /// Squared numerator, `100 · Σ(obs - sim)² / Σ obs`. Never negative;
    /// kept only so published tables can be audited against it.
    AsPrinted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nse: f64,
    #[serde(rename = "pbias_pct")]
    pub pbias: f64,
    pub rsr: f64,
    pub n: usize,
    pub obs_mean: f64,
    pub rmse: f64,
    pub max_abs_error: f64,
}

impl MetricReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("metric report serializes")
    }
}

fn check(obs: &[f64], sim: &[f64]) -> Result<()> {
    if obs.len() != sim.len() {
        return Err(Error::dim(format!("{} observations vs {} simulations", obs.len(), sim.len())));
    }
    if obs.len() < 2 {
        return Err(Error::param("metrics need at least two observations"));
    }
    if obs.iter().chain(sim).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric inputs"));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `(Σ(obs-sim)², Σ(obs-mean)²)`
fn sums_of_squares(obs: &[f64], sim: &[f64]) -> Result<(f64, f64)> {
    check(obs, sim)?;
    let m = mean(obs);
    let sse = obs.iter().zip(sim).map(|(o, s)| (o - s) * (o - s)).sum();
    let sst: f64 = obs.iter().map(|o| (o - m) * (o - m)).sum();
    if sst == 0.0 {
        return Err(Error::Degenerate("observations have zero variance".into()));
    }
    Ok((sse, sst))
}

pub fn nse(obs: &[f64], sim: &[f64]) -> Result<f64> {
    let (sse, sst) = sums_of_squares(obs, sim)?;
    Ok(1.0 - sse / sst)
}

pub fn rsr(obs: &[f64], sim: &[f64]) -> Result<f64> {
    let (sse, sst) = sums_of_squares(obs, sim)?;
    Ok((sse / sst).sqrt())
}

pub fn pbias(obs: &[f64], sim: &[f64]) -> Result<f64> {
    pbias_with(obs, sim, PbiasForm::Standard)
}

pub fn pbias_with(obs: &[f64], sim: &[f64], form: PbiasForm) -> Result<f64> {
    check(obs, sim)?;
    let total: f64 = obs.iter().sum();
    if total == 0.0 {
        return Err(Error::Degenerate("observations sum to zero".into()));
    }
    let num: f64 = match form {
        PbiasForm::Standard => obs.iter().zip(sim).map(|(o, s)| o - s).sum(),
        PbiasForm::AsPrinted => obs.iter().zip(sim).map(|(o, s)| (o - s) * (o - s)).sum(),
    };
    Ok(100.0 * num / total)
}

pub fn report(obs: &[f64], sim: &[f64]) -> Result<MetricReport> {
    report_with(obs, sim, PbiasForm::Standard)
}

pub fn report_with(obs: &[f64], sim: &[f64], form: PbiasForm) -> Result<MetricReport> {
    let (sse, sst) = sums_of_squares(obs, sim)?;
    let n = obs.len();
    Ok(MetricReport {
        nse: 1.0 - sse / sst,
        pbias: pbias_with(obs, sim, form)?,
        rsr: (sse / sst).sqrt(),
        n,
        obs_mean: mean(obs),
        rmse: (sse / n as f64).sqrt(),
        max_abs_error: obs.iter().zip(sim).map(|(o, s)| (o - s).abs()).fold(0.0, f64::max),
    })
}
