//! HTTP service around `exdebug-core`: sessions that pair a training set
//! with a model snapshot, serve explanations, collect feedback and retrain
//! in the background.

pub mod api;
pub mod error;
pub mod session;
pub mod store;

pub use api::router;
pub use error::{ApiError, ApiResult};
pub use session::{AppState, Session};

/// Environment variable that supplies the data directory when `--data-dir`
/// is not given.
pub const DATA_DIR_ENV: &str = "EXDEBUG_DATA_DIR";
