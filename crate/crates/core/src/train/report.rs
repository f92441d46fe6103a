use std::collections::BTreeMap;

use serde::Serialize;

use super::{Model, ModelKind, TaskKind, TrainConfig};
use crate::error::Result;
use crate::layers::{ParamCount, ParamRole, ParamStore, Ratio};
use crate::transformer::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
    pub metric: f64,
}

/// Counts of a model next to its real-valued reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub count: ParamCount,
    pub reference: ParamCount,
    /// Transform weights relative to the reference.
    pub weight_ratio: Ratio,
    pub total_ratio: Ratio,
}

impl ParamSummary {
    pub fn new(model: &ParamStore, reference: &ParamStore) -> Self {
        let count = model.count();
        let reference = reference.count();
        ParamSummary {
            weight_ratio: Ratio::new(count.weights(), reference.weights()),
            total_ratio: Ratio::new(count.total(), reference.total()),
            count,
            reference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub task: TaskKind,
    pub model: ModelKind,
    pub variant: Variant,
    pub metric_name: String,
    pub final_loss: f64,
    pub final_metric: f64,
    pub steps_run: usize,
    pub stopped_early: bool,
    pub params: ParamSummary,
    pub curve: Vec<CurvePoint>,
    pub wall_clock_secs: f64,
}

/// Parameters of one layer, grouped by name prefix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRow {
    pub layer: String,
    pub by_role: BTreeMap<ParamRole, usize>,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantRow {
    pub variant: Variant,
    pub count: ParamCount,
    pub weight_ratio: Ratio,
}

/// Per-layer breakdown of the configured model and the transform-weight
/// ratio of every variant against the real one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamReport {
    pub layers: Vec<LayerRow>,
    pub summary: ParamSummary,
    pub variants: Vec<VariantRow>,
}

impl ParamReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn layer_of(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(layer, _)| layer)
}

pub fn param_report(cfg: &TrainConfig) -> Result<ParamReport> {
    let model = Model::build(cfg)?;
    let reference = Model::reference(cfg)?;
    let mut layers: Vec<LayerRow> = Vec::new();
    for (_, p) in model.params().iter() {
        let layer = layer_of(&p.name);
        if layers.last().is_none_or(|l| l.layer != layer) {
            layers.push(LayerRow {
                layer: layer.to_string(),
                by_role: BTreeMap::new(),
                total: 0,
            });
        }
        let row = layers.last_mut().expect("pushed above");
        *row.by_role.entry(p.role).or_default() += p.value.len();
        row.total += p.value.len();
    }
    let candidates: &[Variant] = match cfg.model {
        ModelKind::Qatt => &[Variant::Real, Variant::Full],
        ModelKind::Qtransformer => &Variant::ALL,
    };
    let real = reference.params().count();
    let mut variants = Vec::new();
    for &variant in candidates {
        let count = Model::build(&TrainConfig {
            variant,
            ..cfg.clone()
        })?
        .params()
        .count();
        variants.push(VariantRow {
            variant,
            weight_ratio: Ratio::new(count.weights(), real.weights()),
            count,
        });
    }
    Ok(ParamReport {
        layers,
        summary: ParamSummary::new(model.params(), reference.params()),
        variants,
    })
}
