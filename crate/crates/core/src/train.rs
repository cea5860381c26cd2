//! Mini-batch gradient descent on cross-entropy, plus evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example};
use crate::error::{Error, Result};
use crate::model::{Params, Prediction, TextClassifier};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.1,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// An extra per-example loss term added to cross-entropy during training.
pub trait AuxiliaryObjective {
    /// Adds `scale * ∂loss/∂θ` for `example` to `grads` and returns the
    /// unscaled loss. Must leave `grads` untouched when it has nothing to
    /// contribute.
    fn accumulate(
        &self,
        model: &TextClassifier,
        example: &Example,
        grads: &mut Params,
        scale: f64,
    ) -> Result<f64>;
}

/// Mean losses over the examples visited in one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochLosses {
    pub task: f64,
    pub auxiliary: f64,
}

/// Stateful driver shared by baseline and regularized training so that both
/// consume the shuffling stream identically.
pub struct Trainer {
    config: TrainConfig,
    rng: ChaCha8Rng,
    grads: Option<Params>,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            config,
            rng,
            grads: None,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    /// One pass over `data` in a freshly shuffled order.
    pub fn run_epoch(
        &mut self,
        model: &mut TextClassifier,
        data: &Dataset,
        auxiliary: Option<&dyn AuxiliaryObjective>,
    ) -> Result<EpochLosses> {
        if data.is_empty() {
            return Err(Error::Argument("cannot train on an empty dataset".into()));
        }
        self.epoch += 1;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);

        let grads = self
            .grads
            .get_or_insert_with(|| Params::zeros_like(model.params()));
        let mut task_total = 0.0;
        let mut aux_total = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            grads.fill_zero();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let ex = &data.examples()[i];
                let ce = model.accumulate_ce_gradient(&ex.token_ids, ex.label, grads, scale)?;
                task_total += ce;
                batch_loss += ce;
                if let Some(aux) = auxiliary {
                    let extra = aux.accumulate(model, ex, grads, scale)?;
                    aux_total += extra;
                    batch_loss += extra;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: self.epoch,
                    loss: batch_loss,
                });
            }
            model.params_mut().descend(grads, self.config.learning_rate);
            if !model.params().all_finite() {
                return Err(Error::Divergence {
                    epoch: self.epoch,
                    loss: f64::NAN,
                });
            }
        }
        let n = data.len() as f64;
        Ok(EpochLosses {
            task: task_total / n,
            auxiliary: aux_total / n,
        })
    }
}

/// Trains `model` on cross-entropy alone for `config.epochs` epochs.
pub fn train_baseline(
    model: &TextClassifier,
    train: &Dataset,
    config: &TrainConfig,
) -> Result<TextClassifier> {
    if train.is_empty() {
        return Err(Error::Argument("cannot train on an empty dataset".into()));
    }
    let mut trainer = Trainer::new(config.clone())?;
    let mut model = model.clone();
    for _ in 0..config.epochs {
        trainer.run_epoch(&mut model, train, None)?;
    }
    Ok(model)
}

/// Mean cross-entropy over a dataset.
pub fn mean_task_loss(model: &TextClassifier, data: &Dataset) -> Result<f64> {
    let losses: Vec<f64> = data
        .examples()
        .par_iter()
        .map(|ex| {
            let logits = model.logits(&ex.token_ids)?;
            Ok(-crate::model::log_softmax_at(&logits, ex.label))
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / data.len().max(1) as f64)
}

pub fn predict_all(model: &TextClassifier, data: &Dataset) -> Result<Vec<Prediction>> {
    data.examples().par_iter().map(|ex| model.forward(ex)).collect()
}

/// Fraction of correctly predicted examples.
pub fn evaluate(model: &TextClassifier, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Argument("cannot evaluate on an empty dataset".into()));
    }
    let predictions = predict_all(model, data)?;
    Ok(accuracy(&predictions))
}

pub fn accuracy(predictions: &[Prediction]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    predictions.iter().filter(|p| p.correct).count() as f64 / predictions.len() as f64
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::data::Split;
    use crate::model::{ModelConfig, Nonlinearity, Params};

    /// Two classes, each marked by its own word among random filler.
    fn separable(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let examples = (0..n)
            .map(|i| {
                let label = i % 2;
                let mut ids = vec![2 + label];
                for _ in 0..rng.random_range(1..5) {
                    ids.push(rng.random_range(4..20));
                }
                Example {
                    id: format!("s{i}"),
                    raw_tokens: ids.iter().map(|t| format!("w{t}")).collect(),
                    token_ids: ids,
                    label,
                }
            })
            .collect();
        Dataset::new(examples, 2, Split::Train).unwrap()
    }

    fn fresh() -> TextClassifier {
        TextClassifier::new(20, 2, &ModelConfig::default()).unwrap()
    }

    #[test]
    fn separable_data_is_learned() {
        let data = separable(200, 1);
        let model = fresh();
        let config = TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        };
        let before = mean_task_loss(&model, &data).unwrap();
        let trained = train_baseline(&model, &data, &config).unwrap();
        assert!(mean_task_loss(&trained, &data).unwrap() <= before);
        assert!(evaluate(&trained, &data).unwrap() >= 0.95);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let data = separable(20, 2);
        let model = fresh();
        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert_eq!(train_baseline(&model, &data, &config).unwrap(), model);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let data = separable(64, 3);
        let config = TrainConfig {
            epochs: 5,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train_baseline(&fresh(), &data, &config).unwrap();
        let b = train_baseline(&fresh(), &data, &config).unwrap();
        let bits = |m: &TextClassifier| m.params().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn divergence_is_reported() {
        let data = separable(32, 4);
        let config = TrainConfig {
            epochs: 3,
            learning_rate: 1e300,
            ..TrainConfig::default()
        };
        let model = TextClassifier::new(
            20,
            2,
            &ModelConfig {
                nonlinearity: Nonlinearity::Identity,
                ..ModelConfig::default()
            },
        )
        .unwrap();
        assert!(matches!(
            train_baseline(&model, &data, &config),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn constant_predictor_scores_half_on_balanced_data() {
        let data = separable(100, 5);
        let model = TextClassifier::zeros(20, 2, &ModelConfig::default()).unwrap();
        assert_eq!(evaluate(&model, &data).unwrap(), 0.5);
    }

    #[test]
    fn evaluate_matches_recount() {
        let data = separable(100, 6);
        let model = fresh();
        let acc = evaluate(&model, &data).unwrap();
        let mut correct = 0;
        for ex in data.examples() {
            let logits = model.logits(&ex.token_ids).unwrap();
            let mut best = 0;
            for c in 1..logits.len() {
                if logits[c] > logits[best] {
                    best = c;
                }
            }
            correct += usize::from(best == ex.label);
        }
        assert_eq!(acc, correct as f64 / 100.0);
    }

    #[test]
    fn perfect_model_scores_one() {
        let data = separable(50, 7);
        let mut model = TextClassifier::zeros(20, 2, &ModelConfig {
            embedding_dim: 2,
            hidden_dim: 2,
            nonlinearity: Nonlinearity::Identity,
            ..ModelConfig::default()
        })
        .unwrap();
        // Words 2 and 3 point along separate axes; identity hidden layer.
        let p: &mut Params = model.params_mut();
        p.embeddings[2 * 2] = 10.0;
        p.embeddings[3 * 2 + 1] = 10.0;
        p.hidden_weights = vec![1.0, 0.0, 0.0, 1.0];
        p.output_weights = vec![1.0, 0.0, 0.0, 1.0];
        assert_eq!(evaluate(&model, &data).unwrap(), 1.0);
    }
}
