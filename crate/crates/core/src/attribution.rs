//! Gradient-based token attributions and task-level word rankings.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example};
use crate::error::{Error, Result};
use crate::model::{Prediction, TextClassifier};
use crate::vocab::{normalize_token, Vocabulary};

pub const DEFAULT_IG_STEPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    InputXGradient,
    IntegratedGradients,
}

/// Attribution method together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum AttributionMethod {
    #[default]
    InputXGradient,
    IntegratedGradients { steps: usize },
}

impl AttributionMethod {
    pub fn integrated_gradients() -> Self {
        AttributionMethod::IntegratedGradients {
            steps: DEFAULT_IG_STEPS,
        }
    }

    pub fn kind(self) -> Method {
        match self {
            AttributionMethod::InputXGradient => Method::InputXGradient,
            AttributionMethod::IntegratedGradients { .. } => Method::IntegratedGradients,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// |s_i| / max_j |s_j|; an all-zero vector stays zero.
    #[default]
    AbsMax,
    /// Min-max rescale; a constant vector maps to 0.5 everywhere.
    Clamp01,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub example_id: String,
    pub class: usize,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedAttribution {
    pub example_id: String,
    pub class: usize,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub normalization: Normalization,
    pub scores: Vec<f64>,
}

/// score_i = e_i · ∂logit_c/∂e_i, from a single reverse pass.
pub fn input_times_gradient(
    model: &TextClassifier,
    example: &Example,
    class: usize,
) -> Result<Attribution> {
    model.check_class(class)?;
    let trace = model.trace(&example.token_ids)?;
    let g = model.input_gradient(&trace, example.len(), class);
    Ok(Attribution {
        example_id: example.id.clone(),
        class,
        method: Method::InputXGradient,
        steps: None,
        scores: dot_each(model, &example.token_ids, &g),
    })
}

/// Integrated gradients from the zero-embedding baseline, left Riemann sum
/// over `steps` points `k/steps`, `k = 0..steps`.
pub fn integrated_gradients(
    model: &TextClassifier,
    example: &Example,
    class: usize,
    steps: usize,
) -> Result<Attribution> {
    if steps == 0 {
        return Err(Error::Argument("integrated gradients needs at least one step".into()));
    }
    model.check_class(class)?;
    model.check_tokens(&example.token_ids)?;
    let n = example.len();
    let pooled = model.pooled(&example.token_ids);
    let mut avg = vec![0.0; model.embedding_dim()];
    for k in 0..steps {
        let alpha = k as f64 / steps as f64;
        let trace = model.trace_pooled(pooled.iter().map(|u| alpha * u).collect());
        for (a, g) in avg.iter_mut().zip(model.input_gradient(&trace, n, class)) {
            *a += g;
        }
    }
    for a in avg.iter_mut() {
        *a /= steps as f64;
    }
    Ok(Attribution {
        example_id: example.id.clone(),
        class,
        method: Method::IntegratedGradients,
        steps: Some(steps),
        scores: dot_each(model, &example.token_ids, &avg),
    })
}

fn dot_each(model: &TextClassifier, token_ids: &[usize], g: &[f64]) -> Vec<f64> {
    token_ids
        .iter()
        .map(|&t| model.embedding(t).iter().zip(g).map(|(e, g)| e * g).sum())
        .collect()
}

pub fn attribute(
    model: &TextClassifier,
    example: &Example,
    class: usize,
    method: AttributionMethod,
) -> Result<Attribution> {
    match method {
        AttributionMethod::InputXGradient => input_times_gradient(model, example, class),
        AttributionMethod::IntegratedGradients { steps } => {
            integrated_gradients(model, example, class, steps)
        }
    }
}

pub fn normalize_scores(scores: &[f64], mode: Normalization) -> Vec<f64> {
    match mode {
        Normalization::AbsMax => {
            let max = scores.iter().fold(0.0f64, |m, s| m.max(s.abs()));
            if max == 0.0 {
                vec![0.0; scores.len()]
            } else {
                scores.iter().map(|s| s.abs() / max).collect()
            }
        }
        Normalization::Clamp01 => {
            let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo == 0.0 || !(hi - lo).is_finite() {
                vec![0.5; scores.len()]
            } else {
                scores.iter().map(|s| ((s - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
            }
        }
    }
}

pub fn normalize(attr: &Attribution, mode: Normalization) -> NormalizedAttribution {
    NormalizedAttribution {
        example_id: attr.example_id.clone(),
        class: attr.class,
        method: attr.method,
        steps: attr.steps,
        normalization: mode,
        scores: normalize_scores(&attr.scores, mode),
    }
}

/// An instance explanation: prediction plus normalized attribution toward
/// the predicted class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub prediction: Prediction,
    pub attribution: NormalizedAttribution,
}

pub fn explain(
    model: &TextClassifier,
    example: &Example,
    method: AttributionMethod,
    mode: Normalization,
) -> Result<Explanation> {
    let prediction = model.forward(example)?;
    let raw = attribute(model, example, prediction.predicted, method)?;
    Ok(Explanation {
        attribution: normalize(&raw, mode),
        prediction,
    })
}

/// Explains every example; work fans out across threads, output keeps
/// dataset order.
pub fn explain_dataset(
    model: &TextClassifier,
    data: &Dataset,
    method: AttributionMethod,
    mode: Normalization,
) -> Result<Vec<Explanation>> {
    data.examples()
        .par_iter()
        .map(|ex| explain(model, ex, method, mode))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub word: String,
    pub mean_importance: f64,
    pub support: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskExplanation {
    pub entries: Vec<TaskEntry>,
}

impl TaskExplanation {
    pub fn get(&self, word: &str) -> Option<&TaskEntry> {
        let word = normalize_token(word);
        self.entries.iter().find(|e| e.word == word)
    }
}

/// Averages normalized scores per word, one contribution per occurrence,
/// skipping out-of-vocabulary positions. `attributions[i]` must belong to
/// `data.examples()[i]`.
pub fn aggregate_task_explanation(
    data: &Dataset,
    attributions: &[NormalizedAttribution],
    top_k: usize,
) -> Result<TaskExplanation> {
    if attributions.len() != data.len() {
        return Err(Error::Consistency(format!(
            "{} attributions for {} examples",
            attributions.len(),
            data.len()
        )));
    }
    struct Acc {
        sum: f64,
        count: usize,
        support: Vec<String>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut acc: HashMap<String, Acc> = HashMap::new();
    for (ex, attr) in data.examples().iter().zip(attributions) {
        if attr.example_id != ex.id || attr.scores.len() != ex.len() {
            return Err(Error::Consistency(format!(
                "attribution for {:?} does not match example {:?}",
                attr.example_id, ex.id
            )));
        }
        for ((token, &id), &score) in ex.raw_tokens.iter().zip(&ex.token_ids).zip(&attr.scores) {
            if id == Vocabulary::UNK_ID || id == Vocabulary::PAD_ID {
                continue;
            }
            let word = normalize_token(token);
            let entry = acc.entry(word.clone()).or_insert_with(|| {
                order.push(word.clone());
                Acc {
                    sum: 0.0,
                    count: 0,
                    support: Vec::new(),
                }
            });
            entry.sum += score;
            entry.count += 1;
            if entry.support.last() != Some(&ex.id) {
                entry.support.push(ex.id.clone());
            }
        }
    }
    let mut entries: Vec<TaskEntry> = order
        .into_iter()
        .map(|word| {
            let a = acc.remove(&word).expect("word was recorded");
            TaskEntry {
                word,
                mean_importance: a.sum / a.count as f64,
                support: a.support,
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        b.mean_importance
            .total_cmp(&a.mean_importance)
            .then_with(|| a.word.cmp(&b.word))
    });
    entries.truncate(top_k);
    Ok(TaskExplanation { entries })
}

/// Ranks words by their mean normalized attribution toward each example's
/// predicted class.
pub fn build_task_explanation(
    model: &TextClassifier,
    data: &Dataset,
    method: AttributionMethod,
    top_k: usize,
) -> Result<TaskExplanation> {
    if data.is_empty() {
        return Err(Error::Argument("task explanation needs a nonempty dataset".into()));
    }
    if top_k == 0 {
        return Ok(TaskExplanation::default());
    }
    let explanations = explain_dataset(model, data, method, Normalization::AbsMax)?;
    let attributions: Vec<NormalizedAttribution> =
        explanations.into_iter().map(|e| e.attribution).collect();
    aggregate_task_explanation(data, &attributions, top_k)
}

#[derive(Serialize)]
struct AttributionLine<'a> {
    example_id: &'a str,
    class: usize,
    method: Method,
    scores: &'a [f64],
}

/// One `{"example_id", "class", "method", "scores"}` object per line.
pub fn write_attributions<'a, I>(path: &Path, attributions: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, usize, Method, &'a [f64])>,
{
    let file = File::create(path).map_err(|e| Error::io_at(path, e))?;
    let mut out = BufWriter::new(file);
    for (example_id, class, method, scores) in attributions {
        let line = AttributionLine {
            example_id,
            class,
            method,
            scores,
        };
        serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_task_explanation(path: &Path, explanation: &TaskExplanation) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(explanation).map_err(std::io::Error::from)?;
    std::fs::write(path, bytes).map_err(|e| Error::io_at(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::model::{ModelConfig, Nonlinearity, Params};

    fn example(id: &str, ids: &[usize], words: &[&str], label: usize) -> Example {
        Example {
            id: id.into(),
            token_ids: ids.to_vec(),
            raw_tokens: words.iter().map(|w| w.to_string()).collect(),
            label,
        }
    }

    fn model(nonlinearity: Nonlinearity) -> TextClassifier {
        let config = ModelConfig {
            embedding_dim: 6,
            hidden_dim: 5,
            nonlinearity,
            embedding_init_std: 0.8,
            seed: 21,
        };
        TextClassifier::new(8, 2, &config).unwrap()
    }

    #[test]
    fn abs_max_formula() {
        assert_eq!(normalize_scores(&[2.0, -4.0, 1.0], Normalization::AbsMax), [0.5, 1.0, 0.25]);
        assert_eq!(normalize_scores(&[0.0, 0.0, 0.0], Normalization::AbsMax), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn clamp01_formula() {
        assert_eq!(normalize_scores(&[1.0, 3.0], Normalization::Clamp01), [0.0, 1.0]);
        assert_eq!(normalize_scores(&[2.0, 2.0], Normalization::Clamp01), [0.5, 0.5]);
    }

    #[test]
    fn zero_embedding_scores_zero() {
        let mut m = model(Nonlinearity::Tanh);
        let d = m.embedding_dim();
        m.params_mut().embeddings[3 * d..4 * d].iter_mut().for_each(|x| *x = 0.0);
        let ex = example("e", &[2, 3, 4], &["a", "b", "c"], 0);
        let attr = input_times_gradient(&m, &ex, 1).unwrap();
        assert_eq!(attr.scores[1], 0.0);
    }

    #[test]
    fn duplicated_token_scores_equal() {
        let m = model(Nonlinearity::Tanh);
        let ex = example("e", &[5, 2, 5], &["x", "y", "x"], 0);
        let attr = input_times_gradient(&m, &ex, 0).unwrap();
        assert_eq!(attr.scores[0], attr.scores[2]);
    }

    /// For input×gradient, Σ-scaling the input of one position:
    /// d/dα logit_c(.., α e_i, ..) at α = 1 equals e_i · ∂logit_c/∂e_i.
    #[test]
    fn input_x_gradient_matches_multiplicative_scaling_fd() {
        let params = Params {
            embeddings: vec![0.0, 0.0, 0.0, 0.0, 0.6, -1.2],
            hidden_weights: vec![0.5, -0.3, 0.8, 1.1],
            hidden_bias: vec![0.0, 0.0],
            output_weights: vec![1.5, -0.4, 0.2, 0.9],
            output_bias: vec![0.0, 0.0],
        };
        let m = TextClassifier::from_params(3, 2, 2, 2, Nonlinearity::Identity, params).unwrap();
        let ex = example("e", &[2], &["w"], 0);
        let e = m.embedding(2).to_vec();
        for class in 0..2 {
            let attr = input_times_gradient(&m, &ex, class).unwrap();
            let h = 1e-4;
            let at = |alpha: f64| m.logits_from_inputs(&[e.iter().map(|x| alpha * x).collect()])[class];
            let fd = (at(1.0 + h) - at(1.0 - h)) / (2.0 * h);
            assert!((attr.scores[0] - fd).abs() <= 1e-4 * fd.abs().max(1e-12));
        }
    }

    #[test]
    fn ig_equals_input_x_gradient_on_linear_model() {
        let m = model(Nonlinearity::Identity);
        let ex = example("e", &[2, 3, 3, 7], &["a", "b", "b", "c"], 1);
        let ixg = input_times_gradient(&m, &ex, 1).unwrap();
        for steps in [1, 2, 7, 64] {
            let ig = integrated_gradients(&m, &ex, 1, steps).unwrap();
            for (a, b) in ig.scores.iter().zip(&ixg.scores) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn ig_rejects_zero_steps() {
        let m = model(Nonlinearity::Tanh);
        let ex = example("e", &[2], &["a"], 0);
        assert!(matches!(integrated_gradients(&m, &ex, 0, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn ig_completeness_at_256_steps() {
        let m = model(Nonlinearity::Tanh);
        let ex = example("e", &[2, 4, 6, 7], &["a", "b", "c", "d"], 0);
        for class in 0..2 {
            let ig = integrated_gradients(&m, &ex, class, 256).unwrap();
            let full = m.logits(&ex.token_ids).unwrap()[class];
            let base = m.logits_from_inputs(&[vec![0.0; 6]])[class];
            let gap = full - base;
            let total: f64 = ig.scores.iter().sum();
            assert!((total - gap).abs() <= 1e-2 * gap.abs() + 1e-6);
        }
    }

    #[test]
    fn zero_model_has_zero_ig() {
        let m = TextClassifier::zeros(5, 2, &ModelConfig::default()).unwrap();
        let ex = example("e", &[2, 3], &["a", "b"], 0);
        let ig = integrated_gradients(&m, &ex, 0, 16).unwrap();
        assert!(ig.scores.iter().all(|&s| s == 0.0));
    }

    fn norm(id: &str, scores: &[f64]) -> NormalizedAttribution {
        NormalizedAttribution {
            example_id: id.into(),
            class: 0,
            method: Method::InputXGradient,
            steps: None,
            normalization: Normalization::AbsMax,
            scores: scores.to_vec(),
        }
    }

    #[test]
    fn task_aggregation_means_and_support() {
        let data = Dataset::new(
            vec![
                example("e1", &[2, 3], &["w", "once"], 0),
                example("e2", &[2, 4], &["w", "x"], 1),
            ],
            2,
            Split::Train,
        )
        .unwrap();
        let attrs = vec![norm("e1", &[0.2, 0.8]), norm("e2", &[0.6, 1.0])];
        let task = aggregate_task_explanation(&data, &attrs, 10).unwrap();
        let once = task.get("once").unwrap();
        assert_eq!(once.mean_importance, 0.8);
        assert_eq!(once.support, ["e1"]);
        let w = task.get("w").unwrap();
        assert!((w.mean_importance - 0.4).abs() < 1e-15);
        assert_eq!(w.support, ["e1", "e2"]);
        assert_eq!(task.entries[0].word, "x");
        assert!(task
            .entries
            .windows(2)
            .all(|p| p[0].mean_importance >= p[1].mean_importance));
    }

    #[test]
    fn unknown_tokens_are_not_ranked() {
        let data = Dataset::new(
            vec![example("e1", &[1, 3], &["rare", "w"], 0)],
            2,
            Split::Train,
        )
        .unwrap();
        let task = aggregate_task_explanation(&data, &[norm("e1", &[1.0, 0.5])], 10).unwrap();
        assert_eq!(task.entries.len(), 1);
        assert_eq!(task.entries[0].word, "w");
    }

    #[test]
    fn top_k_zero_is_empty() {
        let m = model(Nonlinearity::Tanh);
        let data =
            Dataset::new(vec![example("e1", &[2], &["a"], 0)], 2, Split::Train).unwrap();
        let task = build_task_explanation(&m, &data, AttributionMethod::InputXGradient, 0).unwrap();
        assert!(task.entries.is_empty());
    }
}
