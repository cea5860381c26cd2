//! Explanation-based debugging for text classifiers.
//!
//! A small embedding-bag classifier is explained with input×gradient or
//! integrated gradients; users (or a simulated annotator) mark words that
//! should or should not matter, either for a single example or for the whole
//! task; the marks become per-token targets; and the model is retrained with
//! an explanation-regularization penalty that pulls its attributions toward
//! those targets.
//!
//! ```no_run
//! use exdebug_core::prelude::*;
//!
//! let bench = generate_synthetic(&SyntheticSpec::default())?;
//! let init = TextClassifier::new(bench.vocab.len(), 2, &ModelConfig::default())?;
//! let model = train_baseline(&init, &bench.train, &TrainConfig::default())?;
//! let feedback = vec![FeedbackOp::task(OpKind::Remove, "decoy", 0)];
//! let (debugged, report) = debug_retrain(
//!     &model,
//!     &bench.train,
//!     &feedback,
//!     RegularizationPolicy::CorrectOnly,
//!     &ErConfig::default(),
//!     &[("ood", &bench.ood_eval)],
//! )?;
//! # Ok::<(), exdebug_core::Error>(())
//! ```

pub mod attribution;
pub mod data;
pub mod er;
pub mod error;
pub mod export;
pub mod feedback;
pub mod model;
pub mod sim;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::attribution::{
        attribute, build_task_explanation, explain, explain_dataset, normalize, AttributionMethod,
        Explanation, Method, Normalization, TaskExplanation,
    };
    pub use crate::data::{load_dataset, Dataset, Example, Split};
    pub use crate::er::{debug_retrain, DebugReport, ErConfig, LossKind, NormalizerGradient};
    pub use crate::error::{Error, Result};
    pub use crate::export::{export_model, load_model};
    pub use crate::feedback::{
        apply_feedback, build_targets, FeedbackOp, OpKind, RegularizationPolicy, Scope, TargetMap,
    };
    pub use crate::model::{ModelConfig, TextClassifier};
    pub use crate::sim::synthetic::{generate_synthetic, SyntheticSpec};
    pub use crate::train::{evaluate, train_baseline, TrainConfig};
    pub use crate::vocab::Vocabulary;
}
