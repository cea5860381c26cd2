//! Independent oracles shared by the integration and acceptance tests.
//! Nothing here calls into the model's own gradient code.
#![allow(dead_code)]

use exdebug_core::data::{Example, Split};
use exdebug_core::er::{LossKind, NormalizerGradient};
use exdebug_core::model::{ModelConfig, ParamGroup, Params, TextClassifier};
use exdebug_core::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Dims {
    pub v: usize,
    pub d: usize,
    pub h: usize,
    pub c: usize,
}

pub fn dims(model: &TextClassifier) -> Dims {
    Dims {
        v: model.vocab_size(),
        d: model.embedding_dim(),
        h: model.hidden_dim(),
        c: model.num_classes(),
    }
}

/// Plain-loop forward pass from explicit input rows.
pub fn oracle_logits(p: &Params, dm: &Dims, inputs: &[Vec<f64>]) -> Vec<f64> {
    let n = inputs.len() as f64;
    let u: Vec<f64> = (0..dm.d).map(|j| inputs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let a: Vec<f64> = (0..dm.h)
        .map(|k| {
            let z = p.hidden_bias[k] + (0..dm.d).map(|j| p.hidden_weights[j * dm.h + k] * u[j]).sum::<f64>();
            z.tanh()
        })
        .collect();
    (0..dm.c)
        .map(|c| p.output_bias[c] + (0..dm.h).map(|k| p.output_weights[k * dm.c + c] * a[k]).sum::<f64>())
        .collect()
}

pub fn rows(p: &Params, dm: &Dims, ids: &[usize]) -> Vec<Vec<f64>> {
    ids.iter().map(|&t| p.embeddings[t * dm.d..(t + 1) * dm.d].to_vec()).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Closed-form ∂logit_c/∂x_i for a tanh network under mean pooling,
/// written out independently of the library.
pub fn oracle_input_gradient(p: &Params, dm: &Dims, inputs: &[Vec<f64>], class: usize) -> Vec<f64> {
    let n = inputs.len() as f64;
    let u: Vec<f64> = (0..dm.d).map(|j| inputs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let mut g = vec![0.0; dm.d];
    for k in 0..dm.h {
        let z = p.hidden_bias[k] + (0..dm.d).map(|j| p.hidden_weights[j * dm.h + k] * u[j]).sum::<f64>();
        let t = z.tanh();
        let back = (1.0 - t * t) * p.output_weights[k * dm.c + class] / n;
        for (j, gj) in g.iter_mut().enumerate() {
            *gj += p.hidden_weights[j * dm.h + k] * back;
        }
    }
    g
}

/// Raw input×gradient scores for the predicted class.
pub fn oracle_scores(p: &Params, dm: &Dims, ids: &[usize]) -> Vec<f64> {
    let x = rows(p, dm, ids);
    let class = argmax(&oracle_logits(p, dm, &x));
    let g = oracle_input_gradient(p, dm, &x, class);
    x.iter().map(|xi| xi.iter().zip(&g).map(|(a, b)| a * b).sum()).collect()
}

/// ER loss as a function of the parameters. `frozen_max` replaces the
/// abs-max denominator when given.
pub fn oracle_er_loss(
    p: &Params,
    dm: &Dims,
    ids: &[usize],
    targets: &[(usize, f64)],
    kind: LossKind,
    frozen_max: Option<f64>,
) -> f64 {
    let s = oracle_scores(p, dm, ids);
    let max = frozen_max.unwrap_or_else(|| s.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    let total: f64 = targets
        .iter()
        .map(|&(i, t)| {
            let diff = s[i].abs() / max - t;
            match kind {
                LossKind::Mse => diff * diff,
                LossKind::Mae => diff.abs(),
            }
        })
        .sum();
    total / targets.len() as f64
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn random_model(seed: u64, v: usize, c: usize) -> TextClassifier {
    let config = ModelConfig {
        embedding_dim: 6,
        hidden_dim: 5,
        embedding_init_std: 0.8,
        seed,
        ..ModelConfig::default()
    };
    let mut model = TextClassifier::new(v, c, &config).unwrap();
    // Nonzero biases so no coordinate sits at a symmetric point.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for b in model.params_mut().hidden_bias.iter_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
    for b in model.params_mut().output_bias.iter_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
    model
}

pub fn random_example(rng: &mut ChaCha8Rng, v: usize, c: usize) -> Example {
    let n = rng.random_range(3..9);
    Example {
        id: "x".into(),
        token_ids: (0..n).map(|_| rng.random_range(2..v)).collect(),
        raw_tokens: vec![String::new(); n],
        label: rng.random_range(0..c),
    }
}

/// Worst relative error between the library's input gradient and central
/// differences of the oracle forward pass, over every input coordinate.
pub fn input_gradient_error(seed: u64) -> f64 {
    let (v, c) = (15, 3);
    let model = random_model(seed, v, c);
    let dm = dims(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ex = random_example(&mut rng, v, c);
    let trace = model.trace(&ex.token_ids).unwrap();
    let class = rng.random_range(0..c);
    let g = model.input_gradient(&trace, ex.len(), class);
    let x = rows(model.params(), &dm, &ex.token_ids);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        for j in 0..dm.d {
            let mut plus = x.clone();
            plus[i][j] += h;
            let mut minus = x.clone();
            minus[i][j] -= h;
            let fd = (oracle_logits(model.params(), &dm, &plus)[class]
                - oracle_logits(model.params(), &dm, &minus)[class])
                / (2.0 * h);
            worst = worst.max(rel_err(fd, g[j]));
        }
    }
    worst
}

/// Worst relative error between the library's double-backprop ER gradient
/// and central differences of the oracle ER loss, on `coords` random
/// parameter coordinates.
pub fn er_gradient_error(seed: u64, kind: LossKind, mode: NormalizerGradient, coords: usize) -> f64 {
    use exdebug_core::er::ErObjective;
    use exdebug_core::feedback::TargetMap;
    use exdebug_core::train::AuxiliaryObjective;

    let (v, c) = (15, 3);
    let model = random_model(seed, v, c);
    let dm = dims(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7919));
    let ex = random_example(&mut rng, v, c);
    let data = Dataset::new(vec![ex.clone()], c, Split::Train).unwrap();
    let ex = &data.examples()[0];

    // Target a random non-empty subset of positions with random values.
    let mut map = TargetMap::default();
    let mut targets = Vec::new();
    for pos in 0..ex.len() {
        if rng.random_bool(0.5) || (pos + 1 == ex.len() && targets.is_empty()) {
            let op = if rng.random_bool(0.5) { OpKind::Add } else { OpKind::Remove };
            let source = FeedbackOp::instance(op, "w", "x", pos as u64);
            map.insert_from("x", pos, &source);
            targets.push((pos, op.target().unwrap()));
        }
    }
    let objective = ErObjective {
        targets: &map,
        strength: 1.0,
        loss: kind,
        normalizer_gradient: mode,
    };
    let mut grads = Params::zeros_like(model.params());
    objective.accumulate(&model, ex, &mut grads, 1.0).unwrap();

    let base_scores = oracle_scores(model.params(), &dm, &ex.token_ids);
    let frozen = match mode {
        NormalizerGradient::Full => None,
        NormalizerGradient::Detached => Some(base_scores.iter().fold(0.0f64, |m, s| m.max(s.abs()))),
    };
    let used: Vec<usize> = {
        let mut ids = ex.token_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..coords {
        let group = ParamGroup::ALL[rng.random_range(0..ParamGroup::ALL.len())];
        let idx = match group {
            // Only embeddings of tokens in the example carry gradient.
            ParamGroup::Embeddings => used[rng.random_range(0..used.len())] * dm.d + rng.random_range(0..dm.d),
            _ => rng.random_range(0..model.params().group(group).len()),
        };
        let eval = |delta: f64| {
            let mut p = model.params().clone();
            p.group_mut(group)[idx] += delta;
            oracle_er_loss(&p, &dm, &ex.token_ids, &targets, kind, frozen)
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let analytic = grads.group(group)[idx];
        // Output bias never enters the attribution: both sides must be 0.
        if fd.abs() < 1e-9 && analytic.abs() < 1e-12 {
            continue;
        }
        worst = worst.max(rel_err(fd, analytic));
    }
    let _ = dm.v;
    worst
}

/// `Σ φ_i` against `logit_p(x) - logit_p(0)` for integrated gradients.
pub fn ig_completeness_violation(model: &TextClassifier, ex: &Example, steps: usize) -> f64 {
    let dm = dims(model);
    let x = rows(model.params(), &dm, &ex.token_ids);
    let logits = oracle_logits(model.params(), &dm, &x);
    let p = argmax(&logits);
    let zero = vec![vec![0.0; dm.d]; x.len()];
    let gap = logits[p] - oracle_logits(model.params(), &dm, &zero)[p];
    let attr = exdebug_core::attribution::integrated_gradients(model, ex, p, steps).unwrap();
    let sum: f64 = attr.scores.iter().sum();
    // Positive when the bound is violated.
    (sum - gap).abs() - (0.01 * gap.abs() + 1e-6)
}
