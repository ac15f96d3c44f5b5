use serde::Serialize;

use super::ModelArtifact;
use crate::corpus::CaseCollection;
use crate::error::{Error, Result};

/// Search interval for the temperature.
pub const TEMPERATURE_RANGE: (f64, f64) = (0.05, 20.0);
/// Golden-section search stops once the bracket is narrower than this.
pub const TEMPERATURE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub temperature: f64,
    pub nll_at_one: f64,
    pub nll_fitted: f64,
    pub samples: usize,
}

/// Mean negative log-likelihood of `softmax(logits / t)`.
pub fn mean_nll(samples: &[(Vec<f64>, usize)], t: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let total: f64 = samples
        .iter()
        .map(|(z, y)| {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = z.iter().map(|v| ((v - max) / t).exp()).sum::<f64>().ln();
            lse - (z[*y] - max) / t
        })
        .sum();
    total / samples.len() as f64
}

/// Fits a temperature on (logits, gold index) pairs by golden-section search
/// over [`TEMPERATURE_RANGE`]. Falls back to `T = 1` if the search result
/// does not improve on it.
pub fn fit_temperature(samples: &[(Vec<f64>, usize)]) -> Result<CalibrationReport> {
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let f = |t: f64| mean_nll(samples, t);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = TEMPERATURE_RANGE;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > TEMPERATURE_TOLERANCE {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mut temperature = (a + b) / 2.0;
    let mut nll_fitted = f(temperature);
    let nll_at_one = f(1.0);
    if nll_fitted > nll_at_one {
        temperature = 1.0;
        nll_fitted = nll_at_one;
    }
    Ok(CalibrationReport {
        temperature,
        nll_at_one,
        nll_fitted,
        samples: samples.len(),
    })
}

/// Fits the temperature on validation cases and returns the updated model.
/// Rankings are unaffected: `softmax(z / T)` is monotone in `z` for `T > 0`.
pub fn calibrate_temperature(
    model: &ModelArtifact,
    val_cases: &CaseCollection,
) -> Result<(ModelArtifact, CalibrationReport)> {
    if val_cases.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let samples = val_cases
        .iter()
        .map(|c| {
            let ex = model.case_example(c)?;
            Ok((model.logits_from_embedding(&model.pool(&ex.token_ids)), ex.label))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = fit_temperature(&samples)?;
    Ok((model.with_temperature(report.temperature)?, report))
}
