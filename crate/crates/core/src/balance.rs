//! Inverse square-root frequency weighting for multi-label BCE.
//!
//! For a class with `N_i` positives out of `N` samples:
//!
//! ```text
//! r_i    = sqrt(N_i) / (sqrt(N_i) + sqrt(N - N_i))
//! w_i(z) = (z / r_i + (1 - z) / (1 - r_i)) / 2
//! L      = mean_i w_i(y_i) * BCE(y_i, yhat_i)
//! ```
//!
//! `w_i` averages to one under `z ~ Bernoulli(r_i)`, so the weighting
//! rebalances classes without changing the overall loss scale.

use crate::error::{Error, Result};

/// Predictions are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassFrequencyTable {
    total: u64,
    positives: Vec<u64>,
    names: Vec<String>,
}

impl ClassFrequencyTable {
    pub fn new(total: u64, entries: Vec<(String, u64)>) -> Result<Self> {
        for (name, n) in &entries {
            if *n == 0 || *n >= total {
                return Err(Error::DegenerateClass {
                    name: name.clone(),
                    positives: *n,
                    total,
                });
            }
        }
        let (names, positives) = entries.into_iter().unzip();
        Ok(Self {
            total,
            positives,
            names,
        })
    }

    /// Parse `TOTAL,N` followed by `class_name,N_i` rows.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let bad = |line, reason: &str| Error::FrequencyTable {
            line,
            reason: reason.to_owned(),
        };
        let split = |line: usize, row: &str| -> Result<(String, u64)> {
            let (name, count) = row
                .rsplit_once(',')
                .ok_or_else(|| bad(line, "expected `name,count`"))?;
            let count = count
                .trim()
                .parse()
                .map_err(|e| bad(line, &format!("count: {e}")))?;
            Ok((name.trim().to_owned(), count))
        };
        let (line, header) = rows.next().ok_or_else(|| bad(1, "missing TOTAL header"))?;
        let (key, total) = split(line, header)?;
        if key != "TOTAL" {
            return Err(bad(line, "first row must be `TOTAL,N`"));
        }
        let entries = rows
            .map(|(line, row)| split(line, row))
            .collect::<Result<Vec<_>>>()?;
        Self::new(total, entries)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn positives(&self) -> &[u64] {
        &self.positives
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.total as f64;
        self.positives.iter().map(move |&p| p as f64 / n)
    }

    /// Expected positives of each class in a batch of `batch` samples.
    pub fn expected_positives_per_batch(&self, batch: u64) -> Vec<f64> {
        self.positives
            .iter()
            .map(|&p| expected_positives(p as f64, self.total as f64, batch))
            .collect()
    }
}

pub fn expected_positives(positives: f64, total: f64, batch: u64) -> f64 {
    batch as f64 * positives / total
}

/// `r_i` for `positives` out of `total`; both may be fractional.
pub fn balance_ratio(positives: f64, total: f64) -> f64 {
    let (p, q) = (positives.sqrt(), (total - positives).sqrt());
    p / (p + q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    r: Vec<f64>,
}

impl ClassWeights {
    pub fn from_ratios(r: Vec<f64>) -> Self {
        debug_assert!(r.iter().all(|v| *v > 0.0 && *v < 1.0));
        Self { r }
    }

    pub fn ratios(&self) -> &[f64] {
        &self.r
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

pub fn compute_r(t: &ClassFrequencyTable) -> ClassWeights {
    let n = t.total as f64;
    ClassWeights::from_ratios(
        t.positives
            .iter()
            .map(|&p| balance_ratio(p as f64, n))
            .collect(),
    )
}

/// Per-class multiplier for label (or soft label) `z`.
pub fn weight(z: f64, r: f64) -> f64 {
    0.5 * (z / r + (1.0 - z) / (1.0 - r))
}

pub fn bce(y: f64, yhat: f64) -> f64 {
    let p = yhat.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn check_lengths(y: &[f64], yhat: &[f64], w: &ClassWeights) -> Result<()> {
    for actual in [yhat.len(), w.len()] {
        if actual != y.len() {
            return Err(Error::LengthMismatch {
                expected: y.len(),
                actual,
            });
        }
    }
    Ok(())
}

pub fn weighted_bce(y: &[f64], yhat: &[f64], w: &ClassWeights) -> Result<f64> {
    check_lengths(y, yhat, w)?;
    let c = y.len() as f64;
    Ok(y.iter()
        .zip(yhat)
        .zip(&w.r)
        .map(|((&y, &p), &r)| weight(y, r) * bce(y, p))
        .sum::<f64>()
        / c)
}

/// Gradient of [`weighted_bce`] with respect to `yhat`. Zero where the
/// prediction is clamped.
pub fn weighted_bce_grad(y: &[f64], yhat: &[f64], w: &ClassWeights) -> Result<Vec<f64>> {
    check_lengths(y, yhat, w)?;
    let c = y.len() as f64;
    Ok(y.iter()
        .zip(yhat)
        .zip(&w.r)
        .map(|((&y, &p), &r)| {
            if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                return 0.0;
            }
            weight(y, r) * ((1.0 - y) / (1.0 - p) - y / p) / c
        })
        .collect())
}
