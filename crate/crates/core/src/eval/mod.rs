//! Correlation metrics, benchmark evaluation and the routing ablation.

pub mod ablation;
pub mod metrics;
pub mod report;

use std::path::Path;

use log::warn;
use rayon::prelude::*;

use crate::error::{IqtError, Result};
use crate::io::{parse_manifest, ManifestRow};
use crate::model::{IqtModel, ModelConfig};
use crate::pipeline::{load_pair, score_pair_data, Sample};

pub use ablation::{ablation_configs, ablation_table, probe_diff_level, probe_routing, run_ablation, AblationConfig, AblationResult, RoutingProbe};
pub use metrics::{fractional_ranks, krcc, pearson, plcc_poly3, srcc};
pub use report::{report_csv, report_table, write_report_csv, CorrelationReport, ReportRow};

/// Minimum number of scored rows for a report.
pub const MIN_EVAL_ROWS: usize = 5;

/// Anything that can predict a quality score for a pair.
pub trait PairScorer: Sync {
    fn score(&self, sample: &Sample) -> Result<f64>;
}

impl PairScorer for IqtModel<f32> {
    fn score(&self, sample: &Sample) -> Result<f64> {
        score_pair_data(&sample.pair, self)
    }
}

/// Returns the ground-truth MOS.
pub struct MosOracle;

impl PairScorer for MosOracle {
    fn score(&self, sample: &Sample) -> Result<f64> {
        Ok(sample.mos)
    }
}

/// Predicts the same value for every pair.
pub struct ConstantScorer(pub f64);

impl PairScorer for ConstantScorer {
    fn score(&self, _: &Sample) -> Result<f64> {
        Ok(self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: CorrelationReport,
    /// Score per input row in order; `None` where loading or scoring failed.
    pub predictions: Vec<Option<f64>>,
}

fn summarize(mos: &[f64], results: Vec<Result<f64>>) -> Result<Evaluation> {
    let mut pred = Vec::new();
    let mut target = Vec::new();
    let mut predictions = Vec::with_capacity(results.len());
    for (i, (r, &m)) in results.into_iter().zip(mos).enumerate() {
        match r {
            Ok(s) => {
                pred.push(s);
                target.push(m);
                predictions.push(Some(s));
            }
            Err(e) => {
                warn!("row {}: {e}", i + 1);
                predictions.push(None);
            }
        }
    }
    if pred.len() < MIN_EVAL_ROWS {
        return Err(IqtError::Metric(format!(
            "only {} of {} rows could be scored, need at least {MIN_EVAL_ROWS}",
            pred.len(),
            mos.len()
        )));
    }
    Ok(Evaluation {
        report: CorrelationReport::from_scores(&pred, &target)?,
        predictions,
    })
}

/// Scores in-memory samples in parallel and correlates with their MOS.
pub fn evaluate_samples(samples: &[Sample], scorer: &impl PairScorer) -> Result<Evaluation> {
    let results: Vec<Result<f64>> = samples.par_iter().map(|s| scorer.score(s)).collect();
    let mos: Vec<f64> = samples.iter().map(|s| s.mos).collect();
    summarize(&mos, results)
}

/// Loads and scores every manifest row; rows that fail are skipped.
pub fn evaluate_rows(config: &ModelConfig, rows: &[ManifestRow], scorer: &impl PairScorer) -> Result<Evaluation> {
    let results: Vec<Result<f64>> = rows
        .par_iter()
        .map(|row| {
            let pair = load_pair(config, &row.ref_path, &row.dist_path)?;
            scorer.score(&Sample { pair, mos: row.mos })
        })
        .collect();
    let mos: Vec<f64> = rows.iter().map(|r| r.mos).collect();
    summarize(&mos, results)
}

pub fn evaluate(manifest: impl AsRef<Path>, model: &IqtModel<f32>) -> Result<Evaluation> {
    let rows = parse_manifest(manifest)?;
    evaluate_rows(&model.config, &rows, model)
}
