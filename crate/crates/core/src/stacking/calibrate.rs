//! Quantiles, winsorization and score-to-action threshold calibration.
//!
//! One quantile definition is used throughout: linear interpolation between
//! closest ranks, `h = (n - 1) q`, `Q(q) = x[floor(h)] + frac(h) * (x[floor(h)+1] - x[floor(h)])`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty slice");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

/// Clipping bounds fitted once and then applied to any vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinsorBounds {
    pub lo: f64,
    pub hi: f64,
}

impl WinsorBounds {
    pub fn fit(y: &[f64], lo_q: f64, hi_q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lo_q) || !(0.0..=1.0).contains(&hi_q) || lo_q >= hi_q {
            return Err(validation(format!(
                "winsorize needs 0 <= lo_q < hi_q <= 1, got ({lo_q}, {hi_q})"
            )));
        }
        if y.is_empty() {
            return Err(validation("winsorize of an empty vector"));
        }
        let mut sorted = y.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(WinsorBounds {
            lo: quantile_sorted(&sorted, lo_q),
            hi: quantile_sorted(&sorted, hi_q),
        })
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| v.clamp(self.lo, self.hi)).collect()
    }
}

/// Clips `y` to its empirical `[lo_q, hi_q]` quantiles.
pub fn winsorize(y: &[f64], lo_q: f64, hi_q: f64) -> Result<Vec<f64>> {
    Ok(WinsorBounds::fit(y, lo_q, hi_q)?.apply(y))
}

/// Target shares of sell / hold / buy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub sell: f64,
    pub hold: f64,
    pub buy: f64,
}

impl ActionDistribution {
    pub fn new(sell: f64, hold: f64, buy: f64) -> Result<Self> {
        let d = ActionDistribution { sell, hold, buy };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.sell, self.hold, self.buy];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(validation("action shares must be non-negative numbers"));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(validation(format!(
                "action shares sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Empirical shares of `-1 / 0 / +1` labels.
    pub fn from_actions(actions: &[i8]) -> Result<Self> {
        if actions.is_empty() {
            return Err(validation("no actions to summarise"));
        }
        let n = actions.len() as f64;
        let share = |a: i8| actions.iter().filter(|&&x| x == a).count() as f64 / n;
        let (sell, buy) = (share(-1), share(1));
        Ok(ActionDistribution {
            sell,
            hold: 1.0 - sell - buy,
            buy,
        })
    }

    /// Integer counts for `n` rows by largest remainder: each count is within
    /// one of `n * share` and the three sum to `n`.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let exact = [self.sell, self.hold, self.buy].map(|p| p * n as f64);
        let mut counts = exact.map(|e| e.floor() as usize);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor())
                .total_cmp(&(exact[a] - exact[a].floor()))
                .then(a.cmp(&b))
        });
        let assigned: usize = counts.iter().sum();
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

impl FromStr for ActionDistribution {
    type Err = Error;

    /// Parses `"p_sell,p_hold,p_buy"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| validation(format!("bad share '{p}' in '{s}'")))
            })
            .collect::<Result<_>>()?;
        match parts.as_slice() {
            [a, b, c] => ActionDistribution::new(*a, *b, *c),
            _ => Err(validation(format!("expected three shares, got '{s}'"))),
        }
    }
}

mod float_or_inf {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Number(*v).serialize(s)
        } else if *v > 0.0 {
            Repr::Text("inf".into()).serialize(s)
        } else {
            Repr::Text("-inf".into()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad threshold '{t}'"))),
        }
    }
}

/// Score cut points: below `t_low` sell (-1), above `t_high` buy (+1),
/// otherwise hold (0). Infinite thresholds disable an action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionThresholds {
    #[serde(with = "float_or_inf")]
    pub t_low: f64,
    #[serde(with = "float_or_inf")]
    pub t_high: f64,
}

impl ActionThresholds {
    pub fn action(&self, score: f64) -> i8 {
        if score < self.t_low {
            -1
        } else if score > self.t_high {
            1
        } else {
            0
        }
    }

    pub fn apply(&self, scores: &[f64]) -> Vec<i8> {
        scores.iter().map(|&s| self.action(s)).collect()
    }
}

/// Chooses thresholds so the calibration scores reproduce `target`'s action
/// shares. Counts come from [`ActionDistribution::counts`]; each threshold is
/// the interpolated quantile halfway between the last score of one action
/// and the first score of the next, so distinct scores hit the counts
/// exactly. Tied scores collapse to the same action.
pub fn calibrate_thresholds(
    scores: &[f64],
    target: &ActionDistribution,
) -> Result<ActionThresholds> {
    target.validate()?;
    if scores.is_empty() {
        return Err(validation("cannot calibrate on an empty score vector"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(validation("scores must be finite"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let [n_sell, _, n_buy] = target.counts(n);

    let t_low = match n_sell {
        0 => f64::NEG_INFINITY,
        c if c == n => f64::INFINITY,
        c => {
            // Halfway between ranks c-1 and c; must satisfy x[c-1] < t <= x[c].
            let t = quantile_sorted(&sorted, (c as f64 - 0.5) / (n - 1) as f64);
            if t > sorted[c - 1] {
                t
            } else {
                sorted[c]
            }
        }
    };
    let t_high = match n_buy {
        0 => f64::INFINITY,
        c if c == n => f64::NEG_INFINITY,
        c => {
            // First buy sits at rank n-c; need x[n-c-1] <= t < x[n-c].
            let first = n - c;
            let t = quantile_sorted(&sorted, (first as f64 - 0.5) / (n - 1) as f64);
            if t < sorted[first] {
                t
            } else {
                sorted[first - 1]
            }
        }
    };
    Ok(ActionThresholds {
        t_low,
        t_high: t_high.max(t_low),
    })
}
