//! Explanation-regularized retraining.
//!
//! The retraining objective for a batch is the mean over its examples of
//! `CE + λ · L_ER`, where `L_ER` compares the example's normalized
//! input×gradient attribution with its regularization targets. Because the
//! attribution is itself a gradient, descending on `L_ER` differentiates
//! through the attribution computation; see
//! [`TextClassifier::accumulate_score_gradient`].

use serde::{Deserialize, Serialize};

use crate::attribution::{
    explain_dataset, input_times_gradient, normalize, AttributionMethod, Method,
    NormalizedAttribution, Normalization,
};
use crate::data::{Dataset, Example};
use crate::error::{Error, Result};
use crate::feedback::{apply_feedback, build_targets, FeedbackOp, RegularizationPolicy, TargetMap};
use crate::model::{argmax, log_softmax_at, Params, TextClassifier};
use crate::train::{evaluate, predict_all, AuxiliaryObjective, TrainConfig, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
    Mae,
}

impl LossKind {
    pub const ALL: [LossKind; 2] = [LossKind::Mse, LossKind::Mae];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
        }
    }

    fn value(self, diff: f64) -> f64 {
        match self {
            LossKind::Mse => diff * diff,
            LossKind::Mae => diff.abs(),
        }
    }

    fn derivative(self, diff: f64) -> f64 {
        match self {
            LossKind::Mse => 2.0 * diff,
            LossKind::Mae => {
                if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// How the abs-max normalizer enters the regularization gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerGradient {
    /// Differentiate `|s_i| / max_j |s_j|` exactly, denominator included.
    Full,
    /// Treat `max_j |s_j|` as a constant. The loss value is unchanged; the
    /// gradient pushes `|s_i|` itself toward the target instead of only
    /// its ratio to the largest score, which has zero gradient whenever the
    /// targeted token is the most salient one.
    #[default]
    Detached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErConfig {
    pub loss: LossKind,
    /// λ, the weight of the regularization term.
    pub strength: f64,
    pub train: TrainConfig,
    pub normalization: Normalization,
    pub normalizer_gradient: NormalizerGradient,
    /// Rebuild predictions and targets every this many epochs; 0 freezes
    /// the targets built before the first epoch.
    pub target_refresh_epochs: usize,
    /// Method used for display; recorded in the report. Training always
    /// regularizes input×gradient.
    pub display_method: AttributionMethod,
}

impl Default for ErConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Mse,
            strength: 1.0,
            train: TrainConfig::default(),
            normalization: Normalization::AbsMax,
            normalizer_gradient: NormalizerGradient::default(),
            target_refresh_epochs: 1,
            display_method: AttributionMethod::InputXGradient,
        }
    }
}

impl ErConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return Err(Error::Argument("ER strength must be a finite value >= 0".into()));
        }
        if self.normalization != Normalization::AbsMax {
            return Err(Error::Argument(
                "explanation regularization supports abs_max normalization only".into(),
            ));
        }
        self.train.validate()
    }
}

/// Distance between normalized scores and targets, averaged over the
/// targeted positions. No targets means zero loss.
pub fn er_loss(attr: &NormalizedAttribution, targets: &[(usize, f64)], kind: LossKind) -> Result<f64> {
    if targets.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &(pos, t) in targets {
        let phi = attr.scores.get(pos).ok_or_else(|| {
            Error::Consistency(format!(
                "target position {pos} outside example {:?} of length {}",
                attr.example_id,
                attr.scores.len()
            ))
        })?;
        total += kind.value(phi - t);
    }
    Ok(total / targets.len() as f64)
}

/// Per-example regularization loss and its gradient with respect to the raw
/// scores `s`.
pub fn er_loss_and_score_gradient(
    scores: &[f64],
    targets: &[(usize, f64)],
    kind: LossKind,
    mode: NormalizerGradient,
) -> (f64, Vec<f64>) {
    let mut ds = vec![0.0; scores.len()];
    if targets.is_empty() {
        return (0.0, ds);
    }
    let (argmax_pos, max) = scores
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bm), (i, s)| if s.abs() > bm { (i, s.abs()) } else { (bi, bm) });
    if max == 0.0 {
        let loss = targets.iter().map(|&(_, t)| kind.value(-t)).sum::<f64>() / targets.len() as f64;
        return (loss, ds);
    }
    let inv_t = 1.0 / targets.len() as f64;
    let mut loss = 0.0;
    let mut weighted_abs = 0.0;
    for &(pos, t) in targets {
        let s = scores[pos];
        let phi = s.abs() / max;
        loss += kind.value(phi - t);
        let delta = kind.derivative(phi - t) * inv_t;
        ds[pos] += delta * s.signum() * f64::from(s != 0.0) / max;
        weighted_abs += delta * s.abs();
    }
    if mode == NormalizerGradient::Full {
        ds[argmax_pos] -= scores[argmax_pos].signum() * weighted_abs / (max * max);
    }
    (loss * inv_t, ds)
}

/// The λ·L_ER term as a training objective over a fixed target map.
pub struct ErObjective<'a> {
    pub targets: &'a TargetMap,
    pub strength: f64,
    pub loss: LossKind,
    pub normalizer_gradient: NormalizerGradient,
}

impl ErObjective<'_> {
    /// Unweighted L_ER for one example at the model's current parameters.
    pub fn example_loss(&self, model: &TextClassifier, example: &Example) -> Result<f64> {
        let targets = self.targets.for_example(&example.id);
        if targets.is_empty() {
            return Ok(0.0);
        }
        let trace = model.trace(&example.token_ids)?;
        let class = argmax(&trace.logits);
        let attr = input_times_gradient(model, example, class)?;
        er_loss(&normalize(&attr, Normalization::AbsMax), &targets, self.loss)
    }
}

impl AuxiliaryObjective for ErObjective<'_> {
    fn accumulate(
        &self,
        model: &TextClassifier,
        example: &Example,
        grads: &mut Params,
        scale: f64,
    ) -> Result<f64> {
        if self.strength == 0.0 {
            return Ok(0.0);
        }
        let targets = self.targets.for_example(&example.id);
        if targets.is_empty() {
            return Ok(0.0);
        }
        if let Some(&(pos, _)) = targets.iter().find(|(pos, _)| *pos >= example.len()) {
            return Err(Error::Consistency(format!(
                "target position {pos} outside example {:?}",
                example.id
            )));
        }
        let trace = model.trace(&example.token_ids)?;
        let class = argmax(&trace.logits);
        let g = model.input_gradient(&trace, example.len(), class);
        let scores: Vec<f64> = example
            .token_ids
            .iter()
            .map(|&t| model.embedding(t).iter().zip(&g).map(|(e, g)| e * g).sum())
            .collect();
        let (loss, ds) =
            er_loss_and_score_gradient(&scores, &targets, self.loss, self.normalizer_gradient);
        model.accumulate_score_gradient(
            &example.token_ids,
            &trace,
            class,
            &ds,
            grads,
            scale * self.strength,
        );
        Ok(self.strength * loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean cross-entropy over the training set after the epoch.
    pub task_loss: f64,
    /// Mean L_ER over the training set (untargeted examples count as 0).
    pub er_loss: f64,
    pub objective: f64,
    pub num_targets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDelta {
    pub name: String,
    pub pre_accuracy: f64,
    pub post_accuracy: f64,
}

/// Mean normalized attribution at targeted positions, split by target value.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TargetedScores {
    pub removed: Option<f64>,
    pub added: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugReport {
    pub epochs_run: usize,
    pub final_task_loss: f64,
    pub final_er_loss: f64,
    pub history: Vec<EpochRecord>,
    pub eval: Vec<EvalDelta>,
    pub pre_targeted: TargetedScores,
    pub post_targeted: TargetedScores,
    pub policy: RegularizationPolicy,
    pub loss: LossKind,
    pub strength: f64,
    pub live_feedback: usize,
    pub training_method: Method,
    pub display_method: AttributionMethod,
}

/// Mean normalized score at the positions of `targets`, computed for
/// `model`.
pub fn targeted_scores(
    model: &TextClassifier,
    data: &Dataset,
    targets: &TargetMap,
) -> Result<TargetedScores> {
    let explanations = explain_dataset(
        model,
        data,
        AttributionMethod::InputXGradient,
        Normalization::AbsMax,
    )?;
    let (mut removed, mut n_removed, mut added, mut n_added) = (0.0, 0usize, 0.0, 0usize);
    for (ex, explanation) in data.examples().iter().zip(&explanations) {
        for (pos, t) in targets.for_example(&ex.id) {
            let phi = explanation.attribution.scores[pos];
            if t == 0.0 {
                removed += phi;
                n_removed += 1;
            } else {
                added += phi;
                n_added += 1;
            }
        }
    }
    Ok(TargetedScores {
        removed: (n_removed > 0).then(|| removed / n_removed as f64),
        added: (n_added > 0).then(|| added / n_added as f64),
    })
}

fn training_objective(
    model: &TextClassifier,
    data: &Dataset,
    objective: &ErObjective<'_>,
) -> Result<(f64, f64)> {
    let mut task = 0.0;
    let mut er = 0.0;
    for ex in data.examples() {
        let logits = model.logits(&ex.token_ids)?;
        task -= log_softmax_at(&logits, ex.label);
        er += objective.example_loss(model, ex)?;
    }
    let n = data.len() as f64;
    Ok((task / n, er / n))
}

/// Retrains `model` (warm start) on cross-entropy plus λ·L_ER, rebuilding
/// the target map from `feedback` against fresh predictions on the
/// configured schedule. The input model is never modified; on divergence
/// the error is returned and nothing is committed.
pub fn debug_retrain(
    model: &TextClassifier,
    train: &Dataset,
    feedback: &[FeedbackOp],
    policy: RegularizationPolicy,
    config: &ErConfig,
    eval_sets: &[(&str, &Dataset)],
) -> Result<(TextClassifier, DebugReport)> {
    debug_retrain_with_progress(model, train, feedback, policy, config, eval_sets, &mut |_| {})
}

/// [`debug_retrain`], calling `on_epoch` after every completed epoch.
pub fn debug_retrain_with_progress(
    model: &TextClassifier,
    train: &Dataset,
    feedback: &[FeedbackOp],
    policy: RegularizationPolicy,
    config: &ErConfig,
    eval_sets: &[(&str, &Dataset)],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(TextClassifier, DebugReport)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("cannot retrain on an empty dataset".into()));
    }
    let state = apply_feedback(feedback)?;
    let pre_eval: Vec<f64> = eval_sets
        .iter()
        .map(|(_, data)| evaluate(model, data))
        .collect::<Result<_>>()?;
    let initial_targets = build_targets(&state, &predict_all(model, train)?, train, policy)?;
    let pre_targeted = targeted_scores(model, train, &initial_targets)?;

    let mut working = model.clone();
    let mut trainer = Trainer::new(config.train.clone())?;
    let mut targets = initial_targets.clone();
    let mut history = Vec::with_capacity(config.train.epochs);
    for epoch in 0..config.train.epochs {
        let refresh = config.target_refresh_epochs;
        if epoch > 0 && refresh > 0 && epoch % refresh == 0 {
            targets = build_targets(&state, &predict_all(&working, train)?, train, policy)?;
        }
        let objective = ErObjective {
            targets: &targets,
            strength: config.strength,
            loss: config.loss,
            normalizer_gradient: config.normalizer_gradient,
        };
        let active = config.strength > 0.0 && !targets.is_empty();
        let aux: Option<&dyn AuxiliaryObjective> = if active { Some(&objective) } else { None };
        trainer.run_epoch(&mut working, train, aux)?;

        let (task_loss, er_loss) = training_objective(&working, train, &objective)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            task_loss,
            er_loss,
            objective: task_loss + config.strength * er_loss,
            num_targets: targets.len(),
        };
        if !record.objective.is_finite() {
            return Err(Error::Divergence {
                epoch: epoch + 1,
                loss: record.objective,
            });
        }
        on_epoch(&record);
        history.push(record);
    }

    let eval = eval_sets
        .iter()
        .zip(pre_eval)
        .map(|((name, data), pre)| {
            Ok(EvalDelta {
                name: name.to_string(),
                pre_accuracy: pre,
                post_accuracy: evaluate(&working, data)?,
            })
        })
        .collect::<Result<_>>()?;
    let post_targeted = targeted_scores(&working, train, &initial_targets)?;
    let (final_task_loss, final_er_loss) = history
        .last()
        .map(|r| (r.task_loss, r.er_loss))
        .unwrap_or_default();
    let report = DebugReport {
        epochs_run: history.len(),
        final_task_loss,
        final_er_loss,
        history,
        eval,
        pre_targeted,
        post_targeted,
        policy,
        loss: config.loss,
        strength: config.strength,
        live_feedback: state.len(),
        training_method: Method::InputXGradient,
        display_method: config.display_method,
    };
    Ok((working, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(scores: &[f64]) -> NormalizedAttribution {
        NormalizedAttribution {
            example_id: "e".into(),
            class: 0,
            method: Method::InputXGradient,
            steps: None,
            normalization: Normalization::AbsMax,
            scores: scores.to_vec(),
        }
    }

    #[test]
    fn single_term_losses() {
        let a = attr(&[0.8]);
        assert!((er_loss(&a, &[(0, 0.0)], LossKind::Mse).unwrap() - 0.64).abs() < 1e-15);
        assert!((er_loss(&a, &[(0, 0.0)], LossKind::Mae).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn matching_targets_give_zero() {
        let a = attr(&[0.0, 1.0, 0.3]);
        for kind in LossKind::ALL {
            assert_eq!(er_loss(&a, &[(0, 0.0), (1, 1.0)], kind).unwrap(), 0.0);
        }
    }

    #[test]
    fn averages_over_targeted_positions_only() {
        let a = attr(&[0.5, 0.9, 0.1, 0.2]);
        let loss = er_loss(&a, &[(0, 0.0), (2, 1.0)], LossKind::Mae).unwrap();
        assert!((loss - (0.5 + 0.9) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_targets_give_zero() {
        assert_eq!(er_loss(&attr(&[0.4]), &[], LossKind::Mse).unwrap(), 0.0);
    }

    #[test]
    fn out_of_range_target_is_inconsistent() {
        assert!(matches!(
            er_loss(&attr(&[0.4]), &[(3, 0.0)], LossKind::Mse),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn score_gradient_matches_finite_differences() {
        let scores = [0.3, -1.2, 0.7, 0.05];
        let targets = [(0, 0.0), (2, 1.0), (3, 0.0)];
        for kind in LossKind::ALL {
            let (_, ds) = er_loss_and_score_gradient(&scores, &targets, kind, NormalizerGradient::Full);
            for i in 0..scores.len() {
                let h = 1e-6;
                let f = |delta: f64| {
                    let mut s = scores;
                    s[i] += delta;
                    er_loss_and_score_gradient(&s, &targets, kind, NormalizerGradient::Full).0
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                assert!((fd - ds[i]).abs() < 1e-6, "{kind:?} position {i}: {fd} vs {}", ds[i]);
            }
        }
    }

    #[test]
    fn detached_gradient_freezes_the_normalizer() {
        let scores = [0.3, -1.2, 0.7];
        let targets = [(1, 0.0)];
        let (_, full) = er_loss_and_score_gradient(&scores, &targets, LossKind::Mse, NormalizerGradient::Full);
        let (_, detached) =
            er_loss_and_score_gradient(&scores, &targets, LossKind::Mse, NormalizerGradient::Detached);
        // The most salient token's ratio to itself is constant.
        assert_eq!(full, [0.0, 0.0, 0.0]);
        // d/ds (|s|/1.2)² at s = -1.2 with the denominator held fixed.
        assert!((detached[1] - -2.0 / 1.2).abs() < 1e-15);
    }
}
