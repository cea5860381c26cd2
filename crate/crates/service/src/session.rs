//! Debugging sessions: one dataset, a model snapshot per round, and an
//! append-only feedback log.
//!
//! Reads see a single immutable [`Snapshot`]; a retraining job builds the
//! next model off to the side and swaps it in only after it has been
//! persisted. While a job runs, reads and writes answer 409.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, OnceLock, RwLock};

use axum::http::StatusCode;
use exdebug_core::attribution::{
    aggregate_task_explanation, explain_dataset, AttributionMethod, Explanation, Normalization,
    TaskEntry,
};
use exdebug_core::data::{load_dataset, load_raw_with_manifest, manifest_path_for, write_dataset, Dataset, Split};
use exdebug_core::er::{debug_retrain_with_progress, DebugReport, EpochRecord, ErConfig};
use exdebug_core::export::{export_model, load_model, model_to_bytes};
use exdebug_core::feedback::{
    append_feedback, apply_feedback, read_feedback_log, FeedbackOp, FeedbackState, OpKind,
    RegularizationPolicy, Scope,
};
use exdebug_core::model::{ModelConfig, Prediction, TextClassifier};
use exdebug_core::train::{predict_all, train_baseline, TrainConfig};
use exdebug_core::vocab::{normalize_token, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::store::{self, SessionMeta, META_VERSION};

pub const DEFAULT_PAGE_SIZE: usize = 20;

/// One committed model and everything derived from it. Predictions and
/// explanations are computed on first use.
pub struct Snapshot {
    pub round: u64,
    pub model: TextClassifier,
    method: AttributionMethod,
    predictions: OnceLock<Vec<Prediction>>,
    explanations: OnceLock<Vec<Explanation>>,
}

impl Snapshot {
    fn new(round: u64, model: TextClassifier, method: AttributionMethod) -> Self {
        Self {
            round,
            model,
            method,
            predictions: OnceLock::new(),
            explanations: OnceLock::new(),
        }
    }

    pub fn predictions(&self, data: &Dataset) -> ApiResult<&[Prediction]> {
        if let Some(p) = self.predictions.get() {
            return Ok(p);
        }
        let p = predict_all(&self.model, data).map_err(ApiError::internal)?;
        Ok(self.predictions.get_or_init(|| p))
    }

    pub fn explanations(&self, data: &Dataset) -> ApiResult<&[Explanation]> {
        if let Some(e) = self.explanations.get() {
            return Ok(e);
        }
        let e = explain_dataset(&self.model, data, self.method, Normalization::AbsMax)
            .map_err(ApiError::internal)?;
        Ok(self.explanations.get_or_init(|| e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Idle,
    Retraining,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    None,
    Add,
    Remove,
}

impl Mark {
    fn of(op: Option<&FeedbackOp>) -> Self {
        match op.map(|o| o.op) {
            Some(OpKind::Add) => Mark::Add,
            Some(OpKind::Remove) => Mark::Remove,
            _ => Mark::None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub min_count: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateSession {
    pub dataset_path: PathBuf,
    /// Defaults to the dataset's sidecar `<stem>.manifest.json`.
    #[serde(default)]
    pub manifest_path: Option<PathBuf>,
    /// An exported model archive. Without it a model is trained from
    /// scratch using `train`.
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    #[serde(default)]
    pub train: Option<TrainSpec>,
    #[serde(default)]
    pub policy: Option<RegularizationPolicy>,
    #[serde(default)]
    pub er: Option<ErConfig>,
    #[serde(default)]
    pub display_method: Option<AttributionMethod>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub round: u64,
    pub status: Status,
    pub num_examples: usize,
    pub labels: Vec<String>,
    pub policy: RegularizationPolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceView {
    pub example_id: String,
    pub tokens: Vec<String>,
    pub label: usize,
    pub label_name: String,
    pub predicted: usize,
    pub scores: Vec<f64>,
    /// Live instance-scope op per token.
    pub marks: Vec<Mark>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstancePage {
    pub round: u64,
    pub page: usize,
    pub page_size: usize,
    /// Correctly predicted examples across all pages.
    pub total: usize,
    pub items: Vec<InstanceView>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskEntryView {
    #[serde(flatten)]
    pub entry: TaskEntry,
    /// Live task-scope op for the word.
    pub mark: Mark,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskView {
    pub round: u64,
    pub entries: Vec<TaskEntryView>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FeedbackRequest {
    pub scope: Scope,
    pub op: OpKind,
    pub word: String,
    #[serde(default)]
    pub example_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackAck {
    /// The op as logged, with its assigned timestamp.
    pub op: FeedbackOp,
    /// Effective op for the affected (scope, word, example) after this one;
    /// `None` once reset.
    pub live: Option<FeedbackOp>,
    pub live_ops: usize,
    pub log_length: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackView {
    pub log: Vec<FeedbackOp>,
    pub live: Vec<FeedbackOp>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct RetrainRequest {
    pub policy: Option<RegularizationPolicy>,
    pub er: Option<ErConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrainAccepted {
    pub job_id: String,
    pub round: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatusReport {
    pub status: Status,
    pub round: u64,
    pub job_id: Option<String>,
    /// Epochs finished by the running (or last) job.
    pub progress: Vec<EpochRecord>,
    /// Report of the last committed round.
    pub report: Option<DebugReport>,
    /// Why the last job failed, if it did.
    pub error: Option<String>,
    pub live_ops: usize,
    pub log_length: usize,
}

struct State {
    meta: SessionMeta,
    snapshot: Arc<Snapshot>,
    log: Vec<FeedbackOp>,
    live: FeedbackState,
    status: Status,
    job_id: Option<String>,
    progress: Vec<EpochRecord>,
    error: Option<String>,
}

pub struct Session {
    pub id: String,
    dir: PathBuf,
    data: Dataset,
    vocab: Vocabulary,
    state: Mutex<State>,
}

struct Job {
    model: TextClassifier,
    log: Vec<FeedbackOp>,
    policy: RegularizationPolicy,
    er: ErConfig,
    round: u64,
}

impl Session {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Loads inputs, trains a model if none was given, and persists the new
    /// session under `sessions_dir/<id>`.
    pub fn create(sessions_dir: &Path, req: CreateSession) -> ApiResult<Session> {
        if req.model_path.is_some() && req.train.is_some() {
            return Err(ApiError::invalid("give either model_path or train, not both"));
        }
        let manifest_path = req
            .manifest_path
            .clone()
            .unwrap_or_else(|| manifest_path_for(&req.dataset_path));
        let raw = load_raw_with_manifest(&req.dataset_path, &manifest_path).map_err(ApiError::from_input)?;
        let num_classes = raw.manifest.num_classes;

        let (model, vocab, data) = match &req.model_path {
            Some(path) => {
                let (model, vocab, manifest) = load_model(path).map_err(ApiError::from_input)?;
                if manifest.num_classes != num_classes {
                    return Err(ApiError::invalid(format!(
                        "model has {} classes, dataset manifest declares {num_classes}",
                        manifest.num_classes
                    )));
                }
                let data = Dataset::encode(&raw, &vocab, Split::Train).map_err(ApiError::from_input)?;
                (model, vocab, data)
            }
            None => {
                let spec = req.train.clone().unwrap_or_default();
                let vocab = Vocabulary::build(raw.token_streams(), spec.min_count.unwrap_or(1))
                    .map_err(ApiError::from_input)?;
                let data = Dataset::encode(&raw, &vocab, Split::Train).map_err(ApiError::from_input)?;
                let init = TextClassifier::new(vocab.len(), num_classes, &spec.model).map_err(ApiError::from_input)?;
                let model = train_baseline(&init, &data, &spec.train).map_err(ApiError::from_input)?;
                (model, vocab, data)
            }
        };

        let er = req.er.clone().unwrap_or_default();
        er.validate().map_err(ApiError::from_input)?;
        let labels = if raw.manifest.labels.is_empty() {
            (0..num_classes).map(|c| c.to_string()).collect()
        } else {
            raw.manifest.labels.clone()
        };
        let id = uuid::Uuid::new_v4().simple().to_string();
        let meta = SessionMeta {
            version: META_VERSION,
            id: id.clone(),
            round: 0,
            labels,
            policy: req.policy.unwrap_or_default(),
            display_method: req.display_method.unwrap_or(er.display_method),
            er,
            last_report: None,
        };

        let dir = sessions_dir.join(&id);
        let persist = || -> exdebug_core::Result<()> {
            std::fs::create_dir_all(&dir)?;
            write_dataset(&store::dataset_path(&dir), &data, &meta.labels)?;
            export_model(&model, &vocab, &store::model_path(&dir, 0))?;
            std::fs::File::create(store::feedback_path(&dir))?.sync_all()?;
            store::write_meta(&dir, &meta)?;
            Ok(())
        };
        if let Err(e) = persist() {
            let _ = std::fs::remove_dir_all(&dir);
            return Err(ApiError::internal(e));
        }
        Ok(Self::assemble(dir, data, vocab, model, meta, Vec::new(), FeedbackState::default()))
    }

    /// Rebuilds a session from its directory.
    pub fn open(dir: &Path) -> exdebug_core::Result<Session> {
        let meta = store::read_meta(dir)?;
        let (model, vocab, _) = load_model(&store::model_path(dir, meta.round))?;
        let (data, _) = load_dataset(&store::dataset_path(dir), Some(&vocab), 1, Split::Train)?;
        let feedback = store::feedback_path(dir);
        let log = if feedback.exists() { read_feedback_log(&feedback)? } else { Vec::new() };
        let live = apply_feedback(&log)?;
        for stale in store::stale_models(dir, meta.round) {
            let _ = std::fs::remove_file(stale);
        }
        Ok(Self::assemble(dir.to_path_buf(), data, vocab, model, meta, log, live))
    }

    fn assemble(
        dir: PathBuf,
        data: Dataset,
        vocab: Vocabulary,
        model: TextClassifier,
        meta: SessionMeta,
        log: Vec<FeedbackOp>,
        live: FeedbackState,
    ) -> Session {
        let snapshot = Arc::new(Snapshot::new(meta.round, model, meta.display_method));
        Session {
            id: meta.id.clone(),
            dir,
            data,
            vocab,
            state: Mutex::new(State {
                meta,
                snapshot,
                log,
                live,
                status: Status::Idle,
                job_id: None,
                progress: Vec::new(),
                error: None,
            }),
        }
    }

    /// The current snapshot and live feedback, or 409 while retraining.
    fn read_view(&self) -> ApiResult<(Arc<Snapshot>, FeedbackState, Vec<String>)> {
        let st = self.lock();
        if st.status == Status::Retraining {
            return Err(ApiError::busy());
        }
        Ok((st.snapshot.clone(), st.live.clone(), st.meta.labels.clone()))
    }

    pub fn snapshot(&self) -> ApiResult<Arc<Snapshot>> {
        Ok(self.read_view()?.0)
    }

    pub fn summary(&self) -> SessionSummary {
        let st = self.lock();
        SessionSummary {
            id: self.id.clone(),
            round: st.meta.round,
            status: st.status,
            num_examples: self.data.len(),
            labels: st.meta.labels.clone(),
            policy: st.meta.policy,
        }
    }

    /// Correctly predicted training examples, `page_size` per page.
    pub fn instances(&self, page: usize, page_size: usize) -> ApiResult<InstancePage> {
        if page_size == 0 {
            return Err(ApiError::invalid("page_size must be positive"));
        }
        let (snapshot, live, labels) = self.read_view()?;
        let explanations = snapshot.explanations(&self.data)?;
        let correct: Vec<(usize, &Explanation)> = explanations
            .iter()
            .enumerate()
            .filter(|(_, e)| e.prediction.correct)
            .collect();
        let items = correct
            .iter()
            .skip(page.saturating_mul(page_size))
            .take(page_size)
            .map(|&(i, e)| {
                let ex = &self.data.examples()[i];
                let marks = ex
                    .raw_tokens
                    .iter()
                    .map(|t| {
                        let key = FeedbackOp::instance(OpKind::Add, &normalize_token(t), &ex.id, 0).key();
                        Mark::of(live.get(&key))
                    })
                    .collect();
                InstanceView {
                    example_id: ex.id.clone(),
                    tokens: ex.raw_tokens.clone(),
                    label: ex.label,
                    label_name: labels.get(ex.label).cloned().unwrap_or_default(),
                    predicted: e.prediction.predicted,
                    scores: e.attribution.scores.clone(),
                    marks,
                }
            })
            .collect();
        Ok(InstancePage {
            round: snapshot.round,
            page,
            page_size,
            total: correct.len(),
            items,
        })
    }

    pub fn task_explanation(&self, top_k: usize) -> ApiResult<TaskView> {
        let (snapshot, live, _) = self.read_view()?;
        let explanations = snapshot.explanations(&self.data)?;
        let attributions: Vec<_> = explanations.iter().map(|e| e.attribution.clone()).collect();
        let task = aggregate_task_explanation(&self.data, &attributions, top_k).map_err(ApiError::internal)?;
        let entries = task
            .entries
            .into_iter()
            .map(|entry| {
                let key = FeedbackOp::task(OpKind::Add, &entry.word, 0).key();
                TaskEntryView {
                    mark: Mark::of(live.get(&key)),
                    entry,
                }
            })
            .collect();
        Ok(TaskView {
            round: snapshot.round,
            entries,
        })
    }

    /// Validates, timestamps, persists and applies one op.
    pub fn post_feedback(&self, req: FeedbackRequest) -> ApiResult<FeedbackAck> {
        let mut st = self.lock();
        if st.status == Status::Retraining {
            return Err(ApiError::busy());
        }
        let timestamp = st.log.last().map_or(0, |op| op.timestamp + 1);
        let op = FeedbackOp {
            scope: req.scope,
            op: req.op,
            word: normalize_token(req.word.trim()),
            example_id: req.example_id,
            timestamp,
        };
        op.validate_against(&self.data, &self.vocab).map_err(ApiError::from_input)?;
        if op.scope == Scope::Instance {
            let id = op.example_id.as_deref().unwrap_or_default();
            let position = self.data.position(id).ok_or_else(|| ApiError::not_found("example"))?;
            let predictions = st.snapshot.predictions(&self.data)?;
            if !predictions[position].correct {
                return Err(ApiError::invalid(format!(
                    "example {id:?} is not correctly predicted; instance feedback is only accepted on shown instances"
                )));
            }
        }
        append_feedback(&store::feedback_path(&self.dir), &op).map_err(ApiError::internal)?;
        st.live.apply(&op);
        st.log.push(op.clone());
        Ok(FeedbackAck {
            live: st.live.get(&op.key()).cloned(),
            op,
            live_ops: st.live.len(),
            log_length: st.log.len(),
        })
    }

    pub fn feedback(&self) -> FeedbackView {
        let st = self.lock();
        FeedbackView {
            log: st.log.clone(),
            live: st.live.live().cloned().collect(),
        }
    }

    pub fn status(&self) -> StatusReport {
        let st = self.lock();
        StatusReport {
            status: st.status,
            round: st.meta.round,
            job_id: st.job_id.clone(),
            progress: st.progress.clone(),
            report: st.meta.last_report.clone(),
            error: st.error.clone(),
            live_ops: st.live.len(),
            log_length: st.log.len(),
        }
    }

    pub fn export(&self) -> ApiResult<Vec<u8>> {
        let snapshot = self.snapshot()?;
        model_to_bytes(&snapshot.model, &self.vocab).map_err(ApiError::internal)
    }

    /// Marks the session as retraining and returns the work to run. The
    /// caller must eventually pass the job to [`Session::run_job`].
    fn begin_retrain(&self, req: RetrainRequest) -> ApiResult<(RetrainAccepted, Job)> {
        let mut st = self.lock();
        if st.status == Status::Retraining {
            return Err(ApiError::new(StatusCode::CONFLICT, "a retraining job is already running"));
        }
        if st.log.is_empty() {
            return Err(ApiError::new(StatusCode::PRECONDITION_FAILED, "feedback log is empty"));
        }
        let policy = req.policy.unwrap_or(st.meta.policy);
        let er = req.er.unwrap_or_else(|| st.meta.er.clone());
        er.validate().map_err(ApiError::from_input)?;
        let round = st.meta.round + 1;
        let job_id = format!("{}-round-{round}", self.id);
        st.status = Status::Retraining;
        st.job_id = Some(job_id.clone());
        st.progress.clear();
        st.error = None;
        let job = Job {
            model: st.snapshot.model.clone(),
            log: st.log.clone(),
            policy,
            er,
            round,
        };
        Ok((RetrainAccepted { job_id, round }, job))
    }

    fn run_job(&self, job: Job) {
        let data_sets = [("train", &self.data)];
        let result = debug_retrain_with_progress(
            &job.model,
            &self.data,
            &job.log,
            job.policy,
            &job.er,
            &data_sets,
            &mut |record| self.lock().progress.push(record.clone()),
        );
        let outcome = result.and_then(|(model, report)| self.commit(job.round, model, report));
        let mut st = self.lock();
        st.status = Status::Idle;
        st.job_id = None;
        if let Err(e) = outcome {
            tracing::warn!(session = %self.id, error = %e, "retraining failed");
            st.error = Some(e.to_string());
        }
    }

    /// Persists round `round` and then swaps it in.
    fn commit(&self, round: u64, model: TextClassifier, report: DebugReport) -> exdebug_core::Result<()> {
        let model_path = store::model_path(&self.dir, round);
        let mut meta = self.lock().meta.clone();
        meta.round = round;
        meta.last_report = Some(report);
        let persisted = export_model(&model, &self.vocab, &model_path)
            .and_then(|_| store::write_meta(&self.dir, &meta).map_err(Into::into));
        if let Err(e) = persisted {
            let _ = std::fs::remove_file(&model_path);
            return Err(e);
        }
        let mut st = self.lock();
        st.snapshot = Arc::new(Snapshot::new(round, model, meta.display_method));
        st.meta = meta;
        Ok(())
    }
}

/// All sessions under one data directory.
pub struct AppState {
    data_dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl AppState {
    /// Opens `data_dir`, recovering every persisted session. Sessions that
    /// fail to load are logged and skipped.
    pub fn open(data_dir: &Path) -> std::io::Result<Self> {
        let dir = store::sessions_dir(data_dir);
        std::fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if !path.is_dir() {
                continue;
            }
            match Session::open(&path) {
                Ok(s) => {
                    sessions.insert(s.id.clone(), Arc::new(s));
                }
                Err(e) => tracing::warn!(path = %path.display(), error = %e, "skipping unreadable session"),
            }
        }
        Ok(Self {
            data_dir: data_dir.to_path_buf(),
            sessions: RwLock::new(sessions),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn get(&self, id: &str) -> ApiResult<Arc<Session>> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session"))
    }

    pub fn list(&self) -> Vec<SessionSummary> {
        let sessions = self.sessions.read().unwrap_or_else(|p| p.into_inner());
        let mut out: Vec<_> = sessions.values().map(|s| s.summary()).collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    /// Blocking: may train a model.
    pub fn create(&self, req: CreateSession) -> ApiResult<Arc<Session>> {
        let session = Arc::new(Session::create(&store::sessions_dir(&self.data_dir), req)?);
        self.sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(session.id.clone(), session.clone());
        Ok(session)
    }
}

/// Starts a retraining job on the blocking pool.
pub fn start_retrain(session: Arc<Session>, req: RetrainRequest) -> ApiResult<RetrainAccepted> {
    let (accepted, job) = session.begin_retrain(req)?;
    tokio::task::spawn_blocking(move || session.run_job(job));
    Ok(accepted)
}

/// Runs a retraining job on the calling thread.
pub fn retrain_blocking(session: &Session, req: RetrainRequest) -> ApiResult<StatusReport> {
    let (_, job) = session.begin_retrain(req)?;
    session.run_job(job);
    Ok(session.status())
}
