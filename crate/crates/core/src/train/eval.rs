use std::collections::BTreeMap;

use crate::data::{Domain, DepthMap, Geometry, SceneSample};
use crate::metrics::{confusion_matrix, ConfusionMatrix, MetricAccumulator, MetricReport};
use crate::model::{Checkpoint, DabcModel};
use crate::pipeline::infer_depth;
use crate::quantizer::QuantizationSpec;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub per_domain: BTreeMap<Domain, MetricReport>,
    pub combined: MetricReport,
    pub confusion: ConfusionMatrix,
}

/// Eval-mode tiled predictions at each sample's own resolution.
pub fn predict_dataset(
    model: &DabcModel,
    spec: &QuantizationSpec,
    dataset: &[SceneSample],
    geometry: &Geometry,
) -> Result<Vec<DepthMap>> {
    dataset
        .iter()
        .map(|s| infer_depth(model, spec, &s.rgb, (geometry.net_height, geometry.net_width)))
        .collect()
}

/// Metrics per domain and pooled, plus the confusion matrix of the
/// re-quantised predictions.
pub fn evaluate(
    model: &DabcModel,
    spec: &QuantizationSpec,
    dataset: &[SceneSample],
    geometry: &Geometry,
) -> Result<EvaluationReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let preds = predict_dataset(model, spec, dataset, geometry)?;
    score_predictions(&preds, dataset, spec)
}

pub fn evaluate_checkpoint(ckpt: &Checkpoint, dataset: &[SceneSample], geometry: &Geometry) -> Result<EvaluationReport> {
    evaluate(&ckpt.to_model()?, &ckpt.spec, dataset, geometry)
}

/// Scores precomputed predictions against the dataset's ground truth.
pub fn score_predictions(preds: &[DepthMap], dataset: &[SceneSample], spec: &QuantizationSpec) -> Result<EvaluationReport> {
    if preds.len() != dataset.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} samples",
            preds.len(),
            dataset.len()
        )));
    }
    let mut per_domain: BTreeMap<Domain, MetricAccumulator> = BTreeMap::new();
    let mut all = MetricAccumulator::new();
    for (p, s) in preds.iter().zip(dataset) {
        let mut one = MetricAccumulator::new();
        one.add_image(p, &s.depth, &s.valid)?;
        per_domain.entry(s.domain).or_default().merge(&one);
        all.merge(&one);
    }
    let per_domain = per_domain
        .into_iter()
        .map(|(d, acc)| acc.finish().map(|r| (d, r)))
        .collect::<Result<_>>()?;
    let gts: Vec<DepthMap> = dataset.iter().map(|s| s.depth.clone()).collect();
    let masks: Vec<_> = dataset.iter().map(|s| s.valid.clone()).collect();
    Ok(EvaluationReport {
        per_domain,
        combined: all.finish()?,
        confusion: confusion_matrix(preds, &gts, &masks, spec)?,
    })
}
