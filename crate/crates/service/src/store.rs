//! Durable storage for stimuli, sessions and annotations.
//!
//! Layout under the data directory:
//!
//! ```text
//! index.json                      materialized summary, rebuilt on open
//! sessions.ndjson                 one line per created session
//! stimuli/<id>/image.png
//! stimuli/<id>/static.json        GridSpec
//! stimuli/<id>/adaptive.json      GridSpec
//! stimuli/<id>/meta.json          written last; its presence marks a complete stimulus
//! stimuli/<id>/annotations.ndjson append-only annotation log
//! ```
//!
//! Log lines are fsynced before a write is acknowledged. On open, a torn
//! final line (crash mid-append) is discarded and truncated away.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use gridlab_core::importance::recompute_telemetry;
use gridlab_core::{
    aggregate, build_grids, convergence_many, stimulus_id, Annotation, ConvergenceConfig, ConvergenceReport,
    GridMode, GridSpec, ImportanceMap, Metric, PipelineParams, Raster, RegionReport, TextBox,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io, Result, ServiceError};

/// Mouse travel may differ from the value recomputed from events by this many
/// pixels per 1000 events (client-side rounding).
const TRAVEL_TOLERANCE_PER_1000: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct StoreConfig {
    pub data_dir: PathBuf,
    pub pipeline: PipelineParams,
}

impl StoreConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            pipeline: PipelineParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StimulusMeta {
    pub id: String,
    pub task_prompt: String,
    pub question: String,
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    pub static_n: u32,
    /// Text boxes used for labelling, and whether they came from the upload.
    pub text_boxes: Vec<TextBox>,
    pub text_boxes_supplied: bool,
    pub created_at_ms: u64,
    /// Per-region solver outcome for the adaptive grid.
    pub solve: Vec<RegionReport>,
    pub solver_timed_out: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    #[serde(flatten)]
    pub meta: StimulusMeta,
    pub grid_specs: GridSpecs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpecs {
    #[serde(rename = "static")]
    pub static_spec: GridSpec,
    #[serde(rename = "adaptive")]
    pub adaptive_spec: GridSpec,
}

impl Stimulus {
    pub fn spec(&self, mode: GridMode) -> &GridSpec {
        match mode {
            GridMode::Static => &self.grid_specs.static_spec,
            GridMode::Adaptive => &self.grid_specs.adaptive_spec,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct NewStimulus {
    pub image_png: Vec<u8>,
    pub task_prompt: String,
    pub question: String,
    pub tile_size: Option<u32>,
    pub static_n: Option<u32>,
    pub text_boxes: Option<Vec<TextBox>>,
    pub budget_ms: Option<u64>,
    pub max_block_w: Option<u32>,
    pub max_block_h: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredAnnotation {
    pub annotation_id: String,
    pub session_id: String,
    pub received_at_ms: u64,
    pub resubmitted: bool,
    pub annotation: Annotation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Receipt {
    pub annotation_id: String,
    pub stimulus_id: String,
    pub participant_id: String,
    pub resubmitted: bool,
    /// True when this request repeated an already stored submission.
    pub duplicate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub participant_id: String,
    pub token: String,
    pub assigned_mode: GridMode,
    pub seed: u64,
    pub stimulus_order: Vec<String>,
    pub created_at_ms: u64,
}

#[derive(Clone, Debug, Default)]
pub struct NewSession {
    pub participant_id: Option<String>,
    pub mode: Option<GridMode>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub participant_id: String,
    pub assigned_mode: GridMode,
    pub seed: u64,
    pub stimulus_order: Vec<String>,
    pub progress: usize,
    pub completed: bool,
}

struct StimulusEntry {
    stimulus: Arc<Stimulus>,
    dir: PathBuf,
    /// Serializes appends to this stimulus' log.
    log: Mutex<File>,
    /// Current record per participant; replaced wholesale on every write so
    /// readers holding the old `Arc` see a consistent snapshot.
    records: RwLock<Arc<Vec<StoredAnnotation>>>,
}

impl StimulusEntry {
    fn snapshot(&self) -> Arc<Vec<StoredAnnotation>> {
        self.records.read().expect("records lock").clone()
    }
}

struct Sessions {
    log: File,
    by_id: HashMap<String, Arc<SessionRecord>>,
    by_token: HashMap<String, String>,
    created: u64,
}

pub struct Store {
    dir: PathBuf,
    pipeline: PipelineParams,
    stimuli: RwLock<HashMap<String, Arc<StimulusEntry>>>,
    /// Stimulus ids in creation order.
    order: RwLock<Vec<String>>,
    /// Held while a stimulus directory is being materialized.
    creating: Mutex<()>,
    sessions: Mutex<Sessions>,
    annotation_index: RwLock<HashMap<String, String>>,
    index_lock: Mutex<()>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn random_hex(bytes: usize) -> String {
    let mut rng = rand::rng();
    (0..bytes).map(|_| format!("{:02x}", rng.random::<u8>())).collect()
}

fn fsync_dir(dir: &Path) -> Result<()> {
    File::open(dir).and_then(|d| d.sync_all()).map_err(|e| io(dir, e))
}

/// Writes `bytes` to `path` via a synced temporary file and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("file"),
        random_hex(4)
    ));
    let write = || -> std::io::Result<()> {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(io(path, e));
    }
    fsync_dir(dir)
}

fn append_line<T: Serialize>(file: &mut File, path: &Path, value: &T) -> Result<()> {
    let mut line = serde_json::to_vec(value).map_err(|e| ServiceError::Internal(e.to_string()))?;
    line.push(b'\n');
    file.write_all(&line)
        .and_then(|_| file.sync_data())
        .map_err(|e| io(path, e))
}

/// Reads every complete line of an NDJSON log. A torn final line is cut off
/// the file; a malformed line anywhere else is corruption.
fn recover_log<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io(path, e)),
    };
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut good_len = 0u64;
    let mut buf = Vec::new();
    let mut torn = false;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(|e| io(path, e))?;
        if n == 0 {
            break;
        }
        let complete = buf.last() == Some(&b'\n');
        match serde_json::from_slice::<T>(&buf) {
            Ok(v) if complete => {
                out.push(v);
                good_len += n as u64;
            }
            _ => {
                // Only the final line may be torn.
                let mut rest = Vec::new();
                std::io::Read::read_to_end(&mut reader, &mut rest).map_err(|e| io(path, e))?;
                if !rest.is_empty() {
                    return Err(ServiceError::Integrity(format!(
                        "{}: malformed record at byte {good_len}",
                        path.display()
                    )));
                }
                torn = true;
                break;
            }
        }
    }
    if torn {
        tracing::warn!(path = %path.display(), offset = good_len, "discarding torn trailing log record");
        let f = OpenOptions::new().write(true).open(path).map_err(|e| io(path, e))?;
        f.set_len(good_len).and_then(|_| f.sync_all()).map_err(|e| io(path, e))?;
    }
    Ok(out)
}

fn open_append(path: &Path) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| ServiceError::Integrity(format!("{}: {e}", path.display())))
}

/// Keeps the latest record per participant, flagging replacements.
fn fold_records(records: Vec<StoredAnnotation>) -> Vec<StoredAnnotation> {
    let mut current: Vec<StoredAnnotation> = Vec::new();
    for rec in records {
        match current
            .iter_mut()
            .find(|r| r.annotation.participant_id == rec.annotation.participant_id)
        {
            Some(slot) => *slot = rec,
            None => current.push(rec),
        }
    }
    current
}

impl Store {
    pub fn open(config: StoreConfig) -> Result<Self> {
        let dir = config.data_dir;
        let stimuli_dir = dir.join("stimuli");
        fs::create_dir_all(&stimuli_dir).map_err(|e| io(&stimuli_dir, e))?;

        let mut stimuli = HashMap::new();
        let mut annotation_index = HashMap::new();
        let mut created: Vec<(u64, String)> = Vec::new();
        let entries = fs::read_dir(&stimuli_dir).map_err(|e| io(&stimuli_dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| io(&stimuli_dir, e))?;
            let sdir = entry.path();
            if !sdir.is_dir() {
                continue;
            }
            if !sdir.join("meta.json").exists() {
                tracing::warn!(dir = %sdir.display(), "skipping incomplete stimulus directory");
                continue;
            }
            let meta: StimulusMeta = read_json(&sdir.join("meta.json"))?;
            let static_spec: GridSpec = read_json(&sdir.join("static.json"))?;
            let adaptive_spec: GridSpec = read_json(&sdir.join("adaptive.json"))?;
            for spec in [&static_spec, &adaptive_spec] {
                spec.validate_cover(meta.width, meta.height).map_err(|e| {
                    ServiceError::Integrity(format!("stimulus {} {} grid: {e}", meta.id, spec.mode))
                })?;
            }
            let log_path = sdir.join("annotations.ndjson");
            let records = fold_records(recover_log(&log_path)?);
            for r in &records {
                annotation_index.insert(r.annotation_id.clone(), meta.id.clone());
            }
            created.push((meta.created_at_ms, meta.id.clone()));
            let id = meta.id.clone();
            stimuli.insert(
                id,
                Arc::new(StimulusEntry {
                    stimulus: Arc::new(Stimulus {
                        meta,
                        grid_specs: GridSpecs {
                            static_spec,
                            adaptive_spec,
                        },
                    }),
                    log: Mutex::new(open_append(&log_path)?),
                    dir: sdir,
                    records: RwLock::new(Arc::new(records)),
                }),
            );
        }
        created.sort();

        let sessions_path = dir.join("sessions.ndjson");
        let records: Vec<SessionRecord> = recover_log(&sessions_path)?;
        let mut sessions = Sessions {
            log: open_append(&sessions_path)?,
            by_id: HashMap::new(),
            by_token: HashMap::new(),
            created: records.len() as u64,
        };
        for s in records {
            sessions.by_token.insert(s.token.clone(), s.session_id.clone());
            sessions.by_id.insert(s.session_id.clone(), Arc::new(s));
        }

        let store = Self {
            dir,
            pipeline: config.pipeline,
            stimuli: RwLock::new(stimuli),
            order: RwLock::new(created.into_iter().map(|(_, id)| id).collect()),
            creating: Mutex::new(()),
            sessions: Mutex::new(sessions),
            annotation_index: RwLock::new(annotation_index),
            index_lock: Mutex::new(()),
        };
        store.write_index()?;
        Ok(store)
    }

    pub fn data_dir(&self) -> &Path {
        &self.dir
    }

    fn entry(&self, id: &str) -> Result<Arc<StimulusEntry>> {
        self.stimuli
            .read()
            .expect("stimuli lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("stimulus `{id}`")))
    }

    /// Materialized summary; advisory only, the logs are authoritative.
    fn write_index(&self) -> Result<()> {
        let _guard = self.index_lock.lock().expect("index lock");
        let stimuli: Vec<serde_json::Value> = self
            .stimulus_ids()
            .iter()
            .filter_map(|id| self.entry(id).ok())
            .map(|e| {
                let snap = e.snapshot();
                let count = |m: GridMode| snap.iter().filter(|r| r.annotation.grid_mode == m).count();
                serde_json::json!({
                    "id": e.stimulus.meta.id,
                    "created_at_ms": e.stimulus.meta.created_at_ms,
                    "annotations": {
                        "static": count(GridMode::Static),
                        "adaptive": count(GridMode::Adaptive),
                    },
                })
            })
            .collect();
        let sessions = self.sessions.lock().expect("sessions lock").by_id.len();
        let body = serde_json::json!({ "stimuli": stimuli, "sessions": sessions });
        write_atomic(&self.dir.join("index.json"), body.to_string().as_bytes())
    }

    pub fn stimulus_ids(&self) -> Vec<String> {
        self.order.read().expect("order lock").clone()
    }

    pub fn stimulus(&self, id: &str) -> Result<Arc<Stimulus>> {
        Ok(self.entry(id)?.stimulus.clone())
    }

    pub fn image_png(&self, id: &str) -> Result<Vec<u8>> {
        let path = self.entry(id)?.dir.join("image.png");
        fs::read(&path).map_err(|e| io(path, e))
    }

    /// Runs the grid pipeline and stores the result. Returns the stored
    /// stimulus and whether it was newly created (identical content maps to
    /// the existing record).
    pub fn create_stimulus(&self, req: NewStimulus) -> Result<(Arc<Stimulus>, bool)> {
        if req.task_prompt.trim().is_empty() {
            return Err(ServiceError::BadRequest("task_prompt must not be empty".into()));
        }
        let mut params = self.pipeline;
        if let Some(t) = req.tile_size {
            params.tile_size = t;
        }
        if let Some(n) = req.static_n {
            params.static_n = n;
        }
        if let Some(ms) = req.budget_ms {
            params.solver.budget = Some(Duration::from_millis(ms));
        }
        for (name, cap) in [("max_block_w", req.max_block_w), ("max_block_h", req.max_block_h)] {
            if cap == Some(0) {
                return Err(ServiceError::BadRequest(format!("{name} must be at least 1")));
            }
        }
        if let Some(b) = req.text_boxes.iter().flatten().find(|b| b.w < 1 || b.h < 1) {
            return Err(ServiceError::BadRequest(format!(
                "text box at ({}, {}) has non-positive size {}x{}",
                b.x, b.y, b.w, b.h
            )));
        }
        params.solver.max_block_w = req.max_block_w;
        params.solver.max_block_h = req.max_block_h;

        let id = stimulus_id(&req.image_png, &params, req.text_boxes.as_deref());
        if let Ok(existing) = self.stimulus(&id) {
            return Ok((existing, false));
        }
        let image = Raster::decode_png(&req.image_png)?;
        let supplied = req.text_boxes.is_some();
        let build = build_grids(&id, &image, req.text_boxes, &params)?;

        let _guard = self.creating.lock().expect("create lock");
        if let Ok(existing) = self.stimulus(&id) {
            return Ok((existing, false));
        }
        let meta = StimulusMeta {
            id: id.clone(),
            task_prompt: req.task_prompt,
            question: req.question,
            width: image.width(),
            height: image.height(),
            tile_size: params.tile_size,
            static_n: params.static_n,
            text_boxes: build.text_boxes,
            text_boxes_supplied: supplied,
            created_at_ms: now_ms(),
            solver_timed_out: build.adaptive.timed_out(),
            solve: build.adaptive.regions,
        };
        // Hold exactly what is persisted, so specs served before and after a
        // restart compare equal (tile footprints are not on the wire).
        let wire = |mut spec: GridSpec| {
            spec.blocks.iter_mut().for_each(|b| b.tiles = None);
            spec
        };
        let stimulus = Stimulus {
            meta,
            grid_specs: GridSpecs {
                static_spec: wire(build.static_spec),
                adaptive_spec: wire(build.adaptive.spec),
            },
        };

        let sdir = self.dir.join("stimuli").join(&id);
        fs::create_dir_all(&sdir).map_err(|e| io(&sdir, e))?;
        write_atomic(&sdir.join("image.png"), &req.image_png)?;
        write_atomic(&sdir.join("static.json"), pretty(&stimulus.grid_specs.static_spec).as_bytes())?;
        write_atomic(&sdir.join("adaptive.json"), pretty(&stimulus.grid_specs.adaptive_spec).as_bytes())?;
        write_atomic(&sdir.join("meta.json"), pretty(&stimulus.meta).as_bytes())?;
        fsync_dir(&self.dir.join("stimuli"))?;

        let log_path = sdir.join("annotations.ndjson");
        let stimulus = Arc::new(stimulus);
        let entry = Arc::new(StimulusEntry {
            stimulus: stimulus.clone(),
            log: Mutex::new(open_append(&log_path)?),
            dir: sdir,
            records: RwLock::new(Arc::new(Vec::new())),
        });
        self.stimuli.write().expect("stimuli lock").insert(id.clone(), entry);
        self.order.write().expect("order lock").push(id);
        self.write_index()?;
        Ok((stimulus, true))
    }

    pub fn create_session(&self, req: NewSession) -> Result<SessionView> {
        if let Some(p) = &req.participant_id {
            if p.trim().is_empty() {
                return Err(ServiceError::BadRequest("participant_id must not be empty".into()));
            }
        }
        let record = {
            let mut sessions = self.sessions.lock().expect("sessions lock");
            let mode = req.mode.unwrap_or(if sessions.created % 2 == 0 {
                GridMode::Static
            } else {
                GridMode::Adaptive
            });
            let seed = req.seed.unwrap_or_else(|| rand::rng().random());
            let record = SessionRecord {
                session_id: format!("sess-{}", random_hex(8)),
                participant_id: req
                    .participant_id
                    .unwrap_or_else(|| format!("p-{}", random_hex(6))),
                token: random_hex(16),
                assigned_mode: mode,
                seed,
                stimulus_order: session_order(self.stimulus_ids(), seed),
                created_at_ms: now_ms(),
            };
            let path = self.dir.join("sessions.ndjson");
            append_line(&mut sessions.log, &path, &record)?;
            sessions.created += 1;
            sessions
                .by_token
                .insert(record.token.clone(), record.session_id.clone());
            let record = Arc::new(record);
            sessions.by_id.insert(record.session_id.clone(), record.clone());
            record
        };
        self.write_index()?;
        Ok(self.session_view(&record))
    }

    /// The session record and its token, for the session's creator.
    pub fn session_token(&self, session_id: &str) -> Option<String> {
        let sessions = self.sessions.lock().expect("sessions lock");
        sessions.by_id.get(session_id).map(|s| s.token.clone())
    }

    fn session_by_token(&self, token: Option<&str>) -> Result<Arc<SessionRecord>> {
        let token = token.ok_or(ServiceError::Unauthorized)?;
        let sessions = self.sessions.lock().expect("sessions lock");
        sessions
            .by_token
            .get(token)
            .and_then(|id| sessions.by_id.get(id))
            .cloned()
            .ok_or(ServiceError::Unauthorized)
    }

    /// Stimuli in the session's order that already hold a record by its participant.
    fn submitted(&self, session: &SessionRecord) -> Vec<bool> {
        session
            .stimulus_order
            .iter()
            .map(|id| {
                self.entry(id).is_ok_and(|e| {
                    e.snapshot().iter().any(|r| {
                        r.annotation.participant_id == session.participant_id
                            && r.annotation.grid_mode == session.assigned_mode
                    })
                })
            })
            .collect()
    }

    fn session_view(&self, s: &SessionRecord) -> SessionView {
        let done = self.submitted(s);
        let progress = done.iter().filter(|&&d| d).count();
        SessionView {
            session_id: s.session_id.clone(),
            participant_id: s.participant_id.clone(),
            assigned_mode: s.assigned_mode,
            seed: s.seed,
            stimulus_order: s.stimulus_order.clone(),
            progress,
            completed: progress == s.stimulus_order.len(),
        }
    }

    /// Session state plus the next stimulus still awaiting a submission.
    pub fn session_next(&self, session_id: &str, token: Option<&str>) -> Result<(SessionView, Option<Arc<Stimulus>>)> {
        let session = self.session_by_token(token)?;
        if session.session_id != session_id {
            return Err(ServiceError::Unauthorized);
        }
        let done = self.submitted(&session);
        let next = session
            .stimulus_order
            .iter()
            .zip(&done)
            .find(|(_, &d)| !d)
            .map(|(id, _)| self.stimulus(id))
            .transpose()?;
        Ok((self.session_view(&session), next))
    }

    pub fn submit(&self, token: Option<&str>, ann: Annotation) -> Result<Receipt> {
        let session = self.session_by_token(token)?;
        if ann.participant_id != session.participant_id {
            return Err(ServiceError::validation(
                "participant_id does not match the session",
                vec![format!("participant_id: {}", ann.participant_id)],
            ));
        }
        let entry = self.entry(&ann.stimulus_id).map_err(|_| {
            ServiceError::validation(
                "unknown stimulus",
                vec![format!("stimulus_id: {}", ann.stimulus_id)],
            )
        })?;
        if !session.stimulus_order.contains(&ann.stimulus_id) {
            return Err(ServiceError::validation(
                "stimulus is not part of this session",
                vec![format!("stimulus_id: {}", ann.stimulus_id)],
            ));
        }
        if ann.grid_mode != session.assigned_mode {
            return Err(ServiceError::validation(
                format!(
                    "grid_mode {} does not match the session's assigned mode {}",
                    ann.grid_mode, session.assigned_mode
                ),
                vec![format!("grid_mode: {}", ann.grid_mode)],
            ));
        }
        validate_annotation(&ann, entry.stimulus.spec(ann.grid_mode))?;

        // Writers to one stimulus are serialized from here on.
        let mut log = entry.log.lock().expect("log lock");
        let snapshot = entry.snapshot();
        let prior = snapshot
            .iter()
            .find(|r| r.annotation.participant_id == ann.participant_id);
        if let Some(prior) = prior {
            if prior.annotation == ann {
                return Ok(Receipt {
                    annotation_id: prior.annotation_id.clone(),
                    stimulus_id: ann.stimulus_id,
                    participant_id: ann.participant_id,
                    resubmitted: prior.resubmitted,
                    duplicate: true,
                });
            }
        }
        if self.submitted(&session).iter().all(|&d| d) {
            return Err(ServiceError::Conflict(format!(
                "session {} is closed",
                session.session_id
            )));
        }
        let record = StoredAnnotation {
            annotation_id: format!("ann-{}", random_hex(8)),
            session_id: session.session_id.clone(),
            received_at_ms: now_ms(),
            resubmitted: prior.is_some(),
            annotation: ann,
        };
        append_line(&mut log, &entry.dir.join("annotations.ndjson"), &record)?;

        let mut next: Vec<StoredAnnotation> = snapshot
            .iter()
            .filter(|r| r.annotation.participant_id != record.annotation.participant_id)
            .cloned()
            .collect();
        next.push(record.clone());
        {
            let mut index = self.annotation_index.write().expect("annotation index lock");
            if let Some(p) = prior {
                index.remove(&p.annotation_id);
            }
            index.insert(record.annotation_id.clone(), record.annotation.stimulus_id.clone());
        }
        *entry.records.write().expect("records lock") = Arc::new(next);
        drop(log);

        if let Err(e) = self.write_index() {
            // The log already holds the record; the index is rebuilt on open.
            tracing::warn!(error = %e, "index refresh failed");
        }
        Ok(Receipt {
            annotation_id: record.annotation_id,
            stimulus_id: record.annotation.stimulus_id,
            participant_id: record.annotation.participant_id,
            resubmitted: record.resubmitted,
            duplicate: false,
        })
    }

    pub fn annotation(&self, annotation_id: &str) -> Result<StoredAnnotation> {
        let not_found = || ServiceError::NotFound(format!("annotation `{annotation_id}`"));
        let stimulus = self
            .annotation_index
            .read()
            .expect("annotation index lock")
            .get(annotation_id)
            .cloned()
            .ok_or_else(not_found)?;
        self.entry(&stimulus)?
            .snapshot()
            .iter()
            .find(|r| r.annotation_id == annotation_id)
            .cloned()
            .ok_or_else(not_found)
    }

    /// Current annotations for one stimulus and grid mode, from one snapshot.
    pub fn annotations(&self, stimulus_id: &str, mode: GridMode) -> Result<Vec<Annotation>> {
        Ok(self
            .entry(stimulus_id)?
            .snapshot()
            .iter()
            .filter(|r| r.annotation.grid_mode == mode)
            .map(|r| r.annotation.clone())
            .collect())
    }

    pub fn importance(&self, stimulus_id: &str, mode: GridMode) -> Result<(ImportanceMap, usize)> {
        let stimulus = self.stimulus(stimulus_id)?;
        let anns = self.annotations(stimulus_id, mode)?;
        if anns.is_empty() {
            return Err(ServiceError::NotEnoughAnnotations { count: 0, required: 1 });
        }
        Ok((aggregate(&anns, stimulus.spec(mode))?, anns.len()))
    }

    pub fn convergence(
        &self,
        stimulus_id: &str,
        mode: GridMode,
        metrics: &[Metric],
        config: &ConvergenceConfig,
    ) -> Result<Vec<ConvergenceReport>> {
        let stimulus = self.stimulus(stimulus_id)?;
        let anns = self.annotations(stimulus_id, mode)?;
        if anns.len() < 2 {
            return Err(ServiceError::NotEnoughAnnotations {
                count: anns.len(),
                required: 2,
            });
        }
        Ok(convergence_many(&anns, stimulus.spec(mode), metrics, config)?)
    }
}

/// Seeded shuffle of the stimulus ids (given in creation order).
pub fn session_order(mut ids: Vec<String>, seed: u64) -> Vec<String> {
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids
}

fn validate_annotation(ann: &Annotation, spec: &GridSpec) -> Result<()> {
    let unknown = ann.unknown_blocks(spec);
    if !unknown.is_empty() {
        return Err(ServiceError::validation(
            format!("block ids not in the {} grid", spec.mode),
            unknown,
        ));
    }
    let mut seen = HashSet::new();
    let dupes: Vec<String> = ann
        .selected_block_ids
        .iter()
        .filter(|id| !seen.insert(id.as_str()))
        .cloned()
        .collect();
    if !dupes.is_empty() {
        return Err(ServiceError::validation("duplicate block ids", dupes));
    }
    let mut bad = Vec::new();
    if ann.duration_ms < 0 {
        bad.push(format!("duration_ms: {}", ann.duration_ms));
    }
    if ann.click_count < 0 {
        bad.push(format!("click_count: {}", ann.click_count));
    }
    if !(ann.mouse_travel_px.is_finite() && ann.mouse_travel_px >= 0.0) {
        bad.push(format!("mouse_travel_px: {}", ann.mouse_travel_px));
    }
    if !ann.events.is_empty() {
        let (clicks, travel) = recompute_telemetry(&ann.events);
        if clicks as i64 != ann.click_count {
            bad.push(format!("click_count: {} but events hold {clicks}", ann.click_count));
        }
        let tol = TRAVEL_TOLERANCE_PER_1000 * (ann.events.len() as f64 / 1000.0).max(1.0);
        if (travel - ann.mouse_travel_px).abs() > tol {
            bad.push(format!(
                "mouse_travel_px: {} but events give {travel:.3}",
                ann.mouse_travel_px
            ));
        }
        if ann.events.windows(2).any(|w| w[1].t_ms < w[0].t_ms) {
            bad.push("events: timestamps decrease".into());
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(ServiceError::validation("inconsistent telemetry", bad))
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}
