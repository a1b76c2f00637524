//! Correlation and error metrics shared by the analysis and synthesis
//! evaluation stages.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("length mismatch ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} pairs, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("non-finite value")]
    NonFinite,
    #[error("zero variance; correlation undefined")]
    ZeroVariance,
}

fn check_pair(x: &[f64], y: &[f64], min_len: usize) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < min_len {
        return Err(StatsError::TooShort {
            needed: min_len,
            got: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation.
pub fn population_sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

/// 1-based average ranks; tied values share the mean of their positions.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y, 3)?;
    pearson_unchecked(x, y)
}

/// Pearson correlation of mid-ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y, 3)?;
    pearson_unchecked(&midranks(x), &midranks(y))
}

pub fn rmse(pred: &[f64], reference: &[f64]) -> Result<f64, StatsError> {
    check_pair(pred, reference, 1)?;
    let sq: f64 = pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}
