//! End-to-end experiments on the synthetic benchmark: decoy debugging,
//! policy sweeps driven by a JSON plan, and budget curves.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attribution::{explain_dataset, AttributionMethod, Normalization};
use crate::data::{load_dataset, Dataset, Split};
use crate::er::{debug_retrain, DebugReport, ErConfig, LossKind};
use crate::error::{Error, Result};
use crate::feedback::{read_lexicon, FeedbackOp, RegularizationPolicy};
use crate::model::{ModelConfig, TextClassifier};
use crate::sim::budget::{default_methods, simulate_budget, AnnotationMethod, BudgetPoint};
use crate::sim::simulated_feedback::{
    simulate_instance_feedback, simulate_task_feedback, DEFAULT_SALIENCE_THRESHOLD,
};
use crate::sim::sweep::{run_policy_sweep, SweepInputs, SweepTable};
use crate::sim::synthetic::{generate_synthetic, SyntheticBenchmark, SyntheticSpec};
use crate::train::{evaluate, train_baseline, TrainConfig};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoyExperiment {
    pub synthetic: SyntheticSpec,
    pub model: ModelConfig,
    pub baseline: TrainConfig,
    pub er: ErConfig,
    pub policy: RegularizationPolicy,
}

impl Default for DecoyExperiment {
    fn default() -> Self {
        Self {
            synthetic: SyntheticSpec::default(),
            model: ModelConfig::default(),
            baseline: TrainConfig::default(),
            er: ErConfig::default(),
            policy: RegularizationPolicy::CorrectOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoyOutcome {
    pub baseline_id: f64,
    pub baseline_ood: f64,
    pub debugged_id: f64,
    pub debugged_ood: f64,
    /// Mean normalized attribution on decoy occurrences in the training set.
    pub decoy_before: f64,
    pub decoy_after: f64,
    pub report: DebugReport,
}

impl DecoyOutcome {
    pub fn ood_gain(&self) -> f64 {
        self.debugged_ood - self.baseline_ood
    }

    pub fn id_drop(&self) -> f64 {
        self.baseline_id - self.debugged_id
    }
}

/// Mean abs-max normalized input×gradient score over every occurrence of
/// `word` in `data`. `None` when the word never occurs.
pub fn mean_word_attribution(model: &TextClassifier, data: &Dataset, word: &str) -> Result<Option<f64>> {
    let explanations = explain_dataset(model, data, AttributionMethod::InputXGradient, Normalization::AbsMax)?;
    let (mut total, mut n) = (0.0, 0usize);
    for (ex, e) in data.examples().iter().zip(&explanations) {
        for pos in ex.positions_of(word) {
            total += e.attribution.scores[pos];
            n += 1;
        }
    }
    Ok((n > 0).then(|| total / n as f64))
}

/// Generates the benchmark and trains the unregularized baseline on it.
pub fn prepare_baseline(spec: &SyntheticSpec, model: &ModelConfig, train: &TrainConfig) -> Result<(SyntheticBenchmark, TextClassifier)> {
    let bench = generate_synthetic(spec)?;
    let init = TextClassifier::new(bench.vocab.len(), bench.train.num_classes(), model)?;
    let trained = train_baseline(&init, &bench.train, train)?;
    Ok((bench, trained))
}

/// Baseline training, task-level `remove` feedback on the decoy word, then
/// explanation-regularized retraining.
pub fn run_decoy_experiment(cfg: &DecoyExperiment) -> Result<(SyntheticBenchmark, DecoyOutcome)> {
    let (bench, baseline) = prepare_baseline(&cfg.synthetic, &cfg.model, &cfg.baseline)?;
    let outcome = debug_decoy(&bench, &baseline, cfg.policy, &cfg.er)?;
    Ok((bench, outcome))
}

/// The debugging half of [`run_decoy_experiment`], for an existing baseline.
pub fn debug_decoy(
    bench: &SyntheticBenchmark,
    baseline: &TextClassifier,
    policy: RegularizationPolicy,
    er: &ErConfig,
) -> Result<DecoyOutcome> {
    let decoy = bench.spec.decoy_word.to_lowercase();
    let feedback = simulate_task_feedback(std::slice::from_ref(&decoy), &bench.vocab, 0).log;
    let evals: [(&str, &Dataset); 2] = [("id", &bench.id_eval), ("ood", &bench.ood_eval)];
    let decoy_before = mean_word_attribution(baseline, &bench.train, &decoy)?.unwrap_or(0.0);
    let (debugged, report) = debug_retrain(baseline, &bench.train, &feedback, policy, er, &evals)?;
    let decoy_after = mean_word_attribution(&debugged, &bench.train, &decoy)?.unwrap_or(0.0);
    Ok(DecoyOutcome {
        baseline_id: report.eval[0].pre_accuracy,
        baseline_ood: report.eval[1].pre_accuracy,
        debugged_id: report.eval[0].post_accuracy,
        debugged_ood: report.eval[1].post_accuracy,
        decoy_before,
        decoy_after,
        report,
    })
}

/// Accuracy on `eval` after retraining with simulated instance feedback on
/// `instances` annotated examples. Zero instances returns the baseline
/// accuracy unchanged.
pub fn instance_feedback_accuracy(
    bench: &SyntheticBenchmark,
    baseline: &TextClassifier,
    instances: usize,
    er: &ErConfig,
    eval: &Dataset,
) -> Result<f64> {
    if instances == 0 {
        return evaluate(baseline, eval);
    }
    let explanations = explain_dataset(baseline, &bench.train, AttributionMethod::InputXGradient, Normalization::AbsMax)?;
    let log = simulate_instance_feedback(
        &bench.rationales(),
        &bench.train,
        &explanations,
        instances,
        DEFAULT_SALIENCE_THRESHOLD,
        0,
    )?;
    let (model, _) = debug_retrain(baseline, &bench.train, &log, RegularizationPolicy::CorrectOnly, er, &[])?;
    evaluate(&model, eval)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// JSONL datasets; the vocabulary is built from `train`.
    Files {
        train: PathBuf,
        id_eval: PathBuf,
        #[serde(default)]
        ood_evals: Vec<PathBuf>,
        #[serde(default = "one")]
        min_count: usize,
    },
}

fn one() -> usize {
    1
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

/// Loaded train / ID / OOD splits.
pub struct Splits {
    pub vocab: Vocabulary,
    pub train: Dataset,
    pub id_eval: Dataset,
    pub ood_evals: Vec<(String, Dataset)>,
}

impl DataSource {
    /// Relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Splits> {
        match self {
            DataSource::Synthetic(spec) => {
                let b = generate_synthetic(spec)?;
                Ok(Splits {
                    vocab: b.vocab,
                    train: b.train,
                    id_eval: b.id_eval,
                    ood_evals: vec![("ood".into(), b.ood_eval)],
                })
            }
            DataSource::Files {
                train,
                id_eval,
                ood_evals,
                min_count,
            } => {
                let (train, vocab) = load_dataset(&base.join(train), None, *min_count, Split::Train)?;
                let (id_eval, _) = load_dataset(&base.join(id_eval), Some(&vocab), 1, Split::IdEval)?;
                let ood_evals = ood_evals
                    .iter()
                    .map(|p| {
                        let (d, _) = load_dataset(&base.join(p), Some(&vocab), 1, Split::OodEval)?;
                        let name = p.file_stem().map_or("ood".into(), |s| s.to_string_lossy().into_owned());
                        Ok((name, d))
                    })
                    .collect::<Result<_>>()?;
                Ok(Splits {
                    vocab,
                    train,
                    id_eval,
                    ood_evals,
                })
            }
        }
    }
}

/// JSON plan consumed by `run-sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepPlan {
    pub data: DataSource,
    pub model: ModelConfig,
    pub baseline: TrainConfig,
    pub er: ErConfig,
    /// Words to remove at task scope.
    pub lexicon: Vec<String>,
    /// Optional lexicon file, one word per line; merged with `lexicon`.
    pub lexicon_path: Option<PathBuf>,
    pub policies: Vec<RegularizationPolicy>,
    pub losses: Vec<LossKind>,
    pub output: Option<PathBuf>,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            model: ModelConfig::default(),
            baseline: TrainConfig::default(),
            er: ErConfig::default(),
            lexicon: vec!["decoy".into()],
            lexicon_path: None,
            policies: RegularizationPolicy::ALL.to_vec(),
            losses: LossKind::ALL.to_vec(),
            output: None,
        }
    }
}

impl SweepPlan {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Loads data, trains the baseline, simulates task feedback from the
    /// lexicon and runs the sweep. `base` resolves relative paths.
    pub fn run(&self, base: &Path) -> Result<SweepTable> {
        if self.policies.is_empty() || self.losses.is_empty() {
            return Err(Error::Argument("sweep needs at least one policy and one loss".into()));
        }
        let splits = self.data.load(base)?;
        let init = TextClassifier::new(splits.vocab.len(), splits.train.num_classes(), &self.model)?;
        let baseline = train_baseline(&init, &splits.train, &self.baseline)?;
        let mut lexicon = self.lexicon.clone();
        if let Some(p) = &self.lexicon_path {
            lexicon.extend(read_lexicon(&base.join(p))?);
        }
        let feedback: Vec<FeedbackOp> = simulate_task_feedback(&lexicon, &splits.vocab, 0).log;
        let oods: Vec<(&str, &Dataset)> = splits.ood_evals.iter().map(|(n, d)| (n.as_str(), d)).collect();
        let inputs = SweepInputs {
            model: &baseline,
            train: &splits.train,
            id_eval: &splits.id_eval,
            ood_evals: &oods,
            feedback: &feedback,
        };
        run_policy_sweep(&inputs, &self.policies, &self.losses, &self.er)
    }
}

/// JSON plan consumed by `simulate-budget`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetPlan {
    pub synthetic: SyntheticSpec,
    pub model: ModelConfig,
    pub baseline: TrainConfig,
    pub er: ErConfig,
    pub methods: Vec<AnnotationMethod>,
    pub annotators: usize,
}

impl Default for BudgetPlan {
    fn default() -> Self {
        Self {
            synthetic: SyntheticSpec::default(),
            model: ModelConfig::default(),
            baseline: TrainConfig::default(),
            er: ErConfig::default(),
            methods: default_methods(),
            annotators: 1,
        }
    }
}

impl BudgetPlan {
    /// Trains one baseline and evaluates OOD accuracy after instance
    /// feedback for each budget.
    pub fn run(&self, budgets_s: &[f64]) -> Result<Vec<BudgetPoint>> {
        let (bench, baseline) = prepare_baseline(&self.synthetic, &self.model, &self.baseline)?;
        simulate_budget(&self.methods, budgets_s, self.annotators, |n| {
            instance_feedback_accuracy(&bench, &baseline, n, &self.er, &bench.ood_eval)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_defaults_parse_from_empty_object() {
        let plan: SweepPlan = serde_json::from_str("{}").unwrap();
        assert_eq!(plan, SweepPlan::default());
        let plan: SweepPlan =
            serde_json::from_str(r#"{"data":{"kind":"synthetic","train_size":40},"policies":["all"]}"#).unwrap();
        assert_eq!(plan.policies, [RegularizationPolicy::All]);
        assert!(matches!(plan.data, DataSource::Synthetic(ref s) if s.train_size == 40));
    }

    #[test]
    fn small_sweep_has_expected_shape() {
        let plan = SweepPlan {
            data: DataSource::Synthetic(SyntheticSpec {
                train_size: 60,
                id_size: 30,
                ood_size: 30,
                ..SyntheticSpec::default()
            }),
            model: ModelConfig {
                embedding_dim: 8,
                hidden_dim: 8,
                ..ModelConfig::default()
            },
            baseline: TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            },
            er: ErConfig {
                train: TrainConfig {
                    epochs: 1,
                    ..TrainConfig::default()
                },
                ..ErConfig::default()
            },
            ..SweepPlan::default()
        };
        let table = plan.run(Path::new(".")).unwrap();
        assert_eq!(table.rows.len(), 1 + 3 * 2);
        assert!(table.baseline().is_baseline());
        assert!(table.rows.iter().all(|r| r.error.is_none() && r.ood_acc.len() == 1));
    }
}
