//! Regularization-policy × loss sweeps.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::er::{debug_retrain, ErConfig, LossKind};
use crate::error::{Error, Result};
use crate::feedback::{FeedbackOp, RegularizationPolicy};
use crate::model::TextClassifier;
use crate::train::evaluate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `None` on the unregularized baseline row.
    pub policy: Option<RegularizationPolicy>,
    pub loss: Option<LossKind>,
    pub id_acc: Option<f64>,
    pub ood_acc: Vec<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn is_baseline(&self) -> bool {
        self.policy.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub ood_names: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn baseline(&self) -> &SweepRow {
        &self.rows[0]
    }

    pub fn cell(&self, policy: RegularizationPolicy, loss: LossKind) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.policy == Some(policy) && r.loss == Some(loss))
    }

    /// Columns `policy, loss, id_acc, ood_acc_1..k`. The baseline row reads
    /// `none, none`; failed cells leave their accuracies empty.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["policy".to_string(), "loss".into(), "id_acc".into()];
        header.extend((1..=self.ood_names.len()).map(|i| format!("ood_acc_{i}")));
        w.write_record(&header)?;
        let fmt = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_default();
        for row in &self.rows {
            let mut record = vec![
                row.policy.map_or("none", |p| p.name()).to_string(),
                row.loss.map_or("none", |l| l.name()).to_string(),
                fmt(row.id_acc),
            ];
            for i in 0..self.ood_names.len() {
                record.push(fmt(row.ood_acc.get(i).copied()));
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io_at(path, e))?;
        self.write_csv(file)
    }
}

pub struct SweepInputs<'a> {
    pub model: &'a TextClassifier,
    pub train: &'a Dataset,
    pub id_eval: &'a Dataset,
    pub ood_evals: &'a [(&'a str, &'a Dataset)],
    pub feedback: &'a [FeedbackOp],
}

/// Runs one retraining per `(policy, loss)` cell, every cell starting from
/// the same baseline model. A failing cell is recorded in its row and does
/// not stop the others. Cells run in parallel; row order is
/// baseline first, then policies in the given order, losses inner.
pub fn run_policy_sweep(
    inputs: &SweepInputs<'_>,
    policies: &[RegularizationPolicy],
    losses: &[LossKind],
    config: &ErConfig,
) -> Result<SweepTable> {
    let ood_names: Vec<String> = inputs.ood_evals.iter().map(|(n, _)| n.to_string()).collect();
    let baseline = SweepRow {
        policy: None,
        loss: None,
        id_acc: Some(evaluate(inputs.model, inputs.id_eval)?),
        ood_acc: inputs
            .ood_evals
            .iter()
            .map(|(_, d)| evaluate(inputs.model, d))
            .collect::<Result<_>>()?,
        error: None,
    };

    let cells: Vec<(RegularizationPolicy, LossKind)> = policies
        .iter()
        .flat_map(|&p| losses.iter().map(move |&l| (p, l)))
        .collect();
    let mut eval_sets: Vec<(&str, &Dataset)> = vec![("id", inputs.id_eval)];
    eval_sets.extend(inputs.ood_evals.iter().copied());

    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(policy, loss)| {
            let config = ErConfig {
                loss,
                ..config.clone()
            };
            match debug_retrain(inputs.model, inputs.train, inputs.feedback, policy, &config, &eval_sets) {
                Ok((_, report)) => SweepRow {
                    policy: Some(policy),
                    loss: Some(loss),
                    id_acc: Some(report.eval[0].post_accuracy),
                    ood_acc: report.eval[1..].iter().map(|e| e.post_accuracy).collect(),
                    error: None,
                },
                Err(e) => SweepRow {
                    policy: Some(policy),
                    loss: Some(loss),
                    id_acc: None,
                    ood_acc: Vec::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let mut all = vec![baseline];
    all.extend(rows);
    Ok(SweepTable {
        ood_names,
        rows: all,
    })
}
