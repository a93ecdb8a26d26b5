//! Evaluation metrics for enriched maps and loss utilities for trainers.

use crate::error::{Error, Result};
use crate::fusion::{beliefs_from_map, FusedBelief};
use crate::grid::{layers, Layer, MultiLayerGridMap};

/// Default weight of the unknown belief in [`loss_mask`].
pub const DEFAULT_MASK_K: f64 = 0.9;

/// Mean absolute and mean squared difference over the selected cells.
pub fn layer_error(target: &Layer, estimate: &Layer, mask: Option<&Layer>) -> Result<(f64, f64)> {
    if target.values.len() != estimate.values.len() {
        return Err(Error::DimensionMismatch(format!(
            "layer '{}' has {} cells, '{}' has {}",
            target.name,
            target.values.len(),
            estimate.name,
            estimate.values.len()
        )));
    }
    let selected = selection(mask, target.values.len())?;
    let (mut l1, mut l2, mut count) = (0.0, 0.0, 0usize);
    for ((t, e), keep) in target.values.iter().zip(&estimate.values).zip(selected) {
        if keep {
            let d = *t as f64 - *e as f64;
            l1 += d.abs();
            l2 += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((l1 / count as f64, l2 / count as f64))
}

fn selection(mask: Option<&Layer>, len: usize) -> Result<impl Iterator<Item = bool> + '_> {
    if let Some(m) = mask {
        if m.values.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "mask '{}' has {} cells, expected {len}",
                m.name,
                m.values.len()
            )));
        }
    }
    Ok((0..len).map(move |k| mask.is_none_or(|m| m.values[k] > 0.0)))
}

/// Mean false-occupied and false-free penalties of an estimate against the
/// target beliefs, over all cells.
pub fn false_belief_metrics(est: &[FusedBelief], tgt: &[FusedBelief]) -> Result<(f64, f64)> {
    false_belief_metrics_masked(est, tgt, None)
}

/// [`false_belief_metrics`] restricted to the cells selected by `mask`.
pub fn false_belief_metrics_masked(
    est: &[FusedBelief],
    tgt: &[FusedBelief],
    mask: Option<&Layer>,
) -> Result<(f64, f64)> {
    if est.len() != tgt.len() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {} cells, target {}",
            est.len(),
            tgt.len()
        )));
    }
    let selected = selection(mask, est.len())?;
    let (mut fo, mut ff, mut count) = (0.0, 0.0, 0usize);
    for ((e, t), keep) in est.iter().zip(tgt).zip(selected) {
        if keep {
            fo += (e.occupied + t.free - 1.0).max(0.0);
            ff += (t.occupied + e.free - 1.0).max(0.0);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((fo / count as f64, ff / count as f64))
}

/// Error of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerScore {
    pub layer: String,
    pub l1: f64,
    pub l2: f64,
}

/// Evaluation of an estimate against a target map.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub layers: Vec<LayerScore>,
    /// Present when both maps carry belief layers.
    pub false_occupied: Option<f64>,
    pub false_free: Option<f64>,
    pub cells: usize,
}

/// One CSV row of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub layer: String,
    pub metric: &'static str,
    pub value: f64,
    pub cells: usize,
}

impl EvalReport {
    pub const CSV_HEADER: [&'static str; 4] = ["layer", "metric", "value", "cells"];

    /// Rows in a stable order: per layer `l1`, `l2`, then the false-belief rows.
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = Vec::with_capacity(self.layers.len() * 2 + 2);
        for s in &self.layers {
            for (metric, value) in [("l1", s.l1), ("l2", s.l2)] {
                rows.push(ReportRow {
                    layer: s.layer.clone(),
                    metric,
                    value,
                    cells: self.cells,
                });
            }
        }
        for (metric, value) in [("false_occupied", self.false_occupied), ("false_free", self.false_free)] {
            if let Some(value) = value {
                rows.push(ReportRow {
                    layer: "beliefs".into(),
                    metric,
                    value,
                    cells: self.cells,
                });
            }
        }
        rows
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<20} {:<15} {:>14}\n", "layer", "metric", "value");
        for r in self.rows() {
            s.push_str(&format!("{:<20} {:<15} {:>14.6}\n", r.layer, r.metric, r.value));
        }
        s.push_str(&format!("cells evaluated: {}\n", self.cells));
        s
    }
}

/// Compares every layer of `target` with the same-named estimate layer.
pub fn evaluate(target: &MultiLayerGridMap, estimate: &MultiLayerGridMap, mask: Option<&Layer>) -> Result<EvalReport> {
    if target.spec() != estimate.spec() {
        return Err(Error::DimensionMismatch(format!(
            "grid specs differ: {:?} vs {:?}",
            target.spec(),
            estimate.spec()
        )));
    }
    let cells = match mask {
        Some(m) => selection(Some(m), target.spec().cell_count())?.filter(|&k| k).count(),
        None => target.spec().cell_count(),
    };
    if cells == 0 {
        return Err(Error::EmptyMask);
    }
    let mut scores = Vec::new();
    for t in target.layers() {
        let e = estimate.require(&t.name)?;
        let (l1, l2) = layer_error(t, e, mask)?;
        scores.push(LayerScore {
            layer: t.name.clone(),
            l1,
            l2,
        });
    }
    let has_beliefs = |m: &MultiLayerGridMap| {
        [layers::BEL_OCCUPIED, layers::BEL_FREE, layers::BEL_UNKNOWN]
            .iter()
            .all(|n| m.layer(n).is_some())
    };
    let (false_occupied, false_free) = if has_beliefs(target) && has_beliefs(estimate) {
        let (fo, ff) = false_belief_metrics_masked(&beliefs_from_map(estimate)?, &beliefs_from_map(target)?, mask)?;
        (Some(fo), Some(ff))
    } else {
        (None, None)
    };
    Ok(EvalReport {
        layers: scores,
        false_occupied,
        false_free,
        cells,
    })
}

/// Per-cell loss weights `1 - k * bel(unknown)`.
pub fn loss_mask(bel_unknown: &Layer, k: f64) -> Result<Layer> {
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::InvalidParameter(format!("mask weight k = {k} outside [0, 1]")));
    }
    let values = bel_unknown
        .values
        .iter()
        .map(|&u| (1.0 - k * (u as f64).clamp(0.0, 1.0)) as f32)
        .collect();
    Ok(Layer::new("loss_mask", values))
}

/// Task-uncertainty scalars: grid-map, evidence, localization, classification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub sigma: [f64; 4],
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { sigma: [1.0; 4] }
    }
}

impl LossWeights {
    pub fn new(sigma1: f64, sigma2: f64, sigma3: f64, sigma4: f64) -> Result<Self> {
        let w = Self {
            sigma: [sigma1, sigma2, sigma3, sigma4],
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "task weights must be positive, got {:?}",
                self.sigma
            )))
        }
    }
}

/// Task losses fed into [`combined_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TaskLosses {
    pub grid_map: f64,
    pub evidence: f64,
    pub localization: f64,
    pub classification: f64,
}

impl TaskLosses {
    fn as_array(&self) -> [f64; 4] {
        [self.grid_map, self.evidence, self.localization, self.classification]
    }

    fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|l| l.is_finite() && *l >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "task losses must be non-negative, got {self:?}"
            )))
        }
    }
}

// regression-style terms are halved, classification-style terms are not
const HALF: [f64; 4] = [0.5, 1.0, 0.5, 1.0];

/// Weighted multi-task loss; returns `(total, enrichment part)`.
pub fn combined_loss(losses: &TaskLosses, w: &LossWeights) -> Result<(f64, f64)> {
    losses.validate()?;
    w.validate()?;
    let l = losses.as_array();
    let term = |i: usize| HALF[i] * l[i] / (w.sigma[i] * w.sigma[i]) + w.sigma[i].ln();
    let enrichment = term(0) + term(1);
    Ok((enrichment + term(2) + term(3), enrichment))
}

/// Analytic partial derivatives of the total loss with respect to each sigma.
pub fn combined_loss_gradient(losses: &TaskLosses, w: &LossWeights) -> Result<[f64; 4]> {
    losses.validate()?;
    w.validate()?;
    let l = losses.as_array();
    Ok(std::array::from_fn(|i| {
        let s = w.sigma[i];
        -2.0 * HALF[i] * l[i] / (s * s * s) + 1.0 / s
    }))
}
