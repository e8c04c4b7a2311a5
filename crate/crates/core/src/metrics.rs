//! Depth evaluation metrics and the weighted sequence loss.

use std::fmt;

use crate::error::{Error, Result};
use crate::maps::DepthMap;

/// Ratio threshold of the inlier metric.
pub const DELTA_THRESHOLD: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub abs_rel: f64,
    pub abs: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    /// Percentage in `[0, 100]`.
    pub delta_125: f64,
    pub valid_count: usize,
}

impl MetricsRecord {
    /// `key=value` lines in a fixed order.
    pub fn to_key_values(&self) -> String {
        format!(
            "abs_rel={}\nabs={}\nsq_rel={}\nrmse={}\ndelta_125={}\nvalid_count={}\n",
            self.abs_rel, self.abs, self.sq_rel, self.rmse, self.delta_125, self.valid_count
        )
    }

    /// Parses the output of [`MetricsRecord::to_key_values`].
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut values = [None::<f64>; 5];
        let mut count = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let ctx = || format!("metrics line {}", i + 1);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(ctx(), "expected key=value"))?;
            let slot = match key {
                "abs_rel" => 0,
                "abs" => 1,
                "sq_rel" => 2,
                "rmse" => 3,
                "delta_125" => 4,
                "valid_count" => {
                    count = Some(value.parse().map_err(|_| Error::parse(ctx(), format!("bad count '{value}'")))?);
                    continue;
                }
                other => return Err(Error::parse(ctx(), format!("unknown key '{other}'"))),
            };
            values[slot] = Some(value.parse().map_err(|_| Error::parse(ctx(), format!("bad number '{value}'")))?);
        }
        let get = |i: usize, name: &str| values[i].ok_or_else(|| Error::parse("metrics", format!("missing {name}")));
        Ok(Self {
            abs_rel: get(0, "abs_rel")?,
            abs: get(1, "abs")?,
            sq_rel: get(2, "sq_rel")?,
            rmse: get(3, "rmse")?,
            delta_125: get(4, "delta_125")?,
            valid_count: count.ok_or_else(|| Error::parse("metrics", "missing valid_count"))?,
        })
    }
}

impl fmt::Display for MetricsRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "AbsRel {:.6}  Abs {:.6}  SqRel {:.6}  RMSE {:.6}  d<1.25 {:.2}%  (M = {})",
            self.abs_rel, self.abs, self.sq_rel, self.rmse, self.delta_125, self.valid_count
        )
    }
}

/// Metrics over pixels valid in both maps.
pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<MetricsRecord> {
    if !pred.same_shape(gt) {
        return Err(Error::shape(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let mut sum_abs_rel = 0.0;
    let mut sum_abs = 0.0;
    let mut sum_sq_rel = 0.0;
    let mut sum_sq = 0.0;
    let mut inliers = 0usize;
    let mut m = 0usize;
    for (d, g) in pred.data().iter().zip(gt.data()) {
        if *d <= 0.0 || *g <= 0.0 {
            continue;
        }
        let err = (g - d).abs();
        sum_abs_rel += err / g;
        sum_abs += err;
        sum_sq_rel += err * err / g;
        sum_sq += err * err;
        if (g / d).max(d / g) < DELTA_THRESHOLD {
            inliers += 1;
        }
        m += 1;
    }
    if m == 0 {
        return Err(Error::EmptyMask);
    }
    let n = m as f64;
    Ok(MetricsRecord {
        abs_rel: sum_abs_rel / n,
        abs: sum_abs / n,
        sq_rel: sum_sq_rel / n,
        rmse: (sum_sq / n).sqrt(),
        delta_125: 100.0 * inliers as f64 / n,
        valid_count: m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub gamma: f64,
    pub iterations: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            iterations: 12,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if self.iterations == 0 {
            return Err(Error::config("loss needs at least one iteration"));
        }
        Ok(())
    }

    /// Weight of iterate `t` in `1..=N`: `gamma^(N - t)`, so the last iterate weighs 1.
    pub fn iterate_weight(&self, t: usize) -> f64 {
        self.gamma.powi((self.iterations - t) as i32)
    }
}

/// Mean absolute difference over pixels valid in both maps.
pub fn mean_l1(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::shape("L1 term over maps of different size"));
    }
    let (sum, n) = pred
        .data()
        .iter()
        .zip(gt.data())
        .filter(|(d, g)| **d > 0.0 && **g > 0.0)
        .fold((0.0, 0usize), |(s, n), (d, g)| (s + (g - d).abs(), n + 1));
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Weighted L1 over the low-resolution iterates plus the full-resolution L1.
pub fn sequence_loss(
    iterates_lo: &[DepthMap],
    gt_lo: &DepthMap,
    final_depth: &DepthMap,
    gt: &DepthMap,
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    if iterates_lo.len() != cfg.iterations {
        return Err(Error::config(format!(
            "{} iterates for a loss over N = {}",
            iterates_lo.len(),
            cfg.iterations
        )));
    }
    let mut total = 0.0;
    for (i, d) in iterates_lo.iter().enumerate() {
        total += cfg.iterate_weight(i + 1) * mean_l1(d, gt_lo)?;
    }
    Ok(total + mean_l1(final_depth, gt)?)
}
