//! Evaluation grids over (detector × manifest × chain) with a
//! content-addressed score cache.
//!
//! Run directory layout:
//!
//! ```text
//! plan.json                    expanded, canonical plan
//! cache/<detector>/<sha256>/<chain>.json
//! scratch/<sha256>/<chain>.png perturbed inputs for external detectors
//! scores/<detector>__<manifest>__<chain>.jsonl
//! cells.json                   per-cell status, counts and timings
//! run.log
//! ```

mod cache;
mod perturb;
mod plan;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{fs_component, sha256_file, sha256_hex, write_atomic, CacheKey, ScoreCache};
pub use perturb::{perturb_corpus, PerturbOutcome};
pub use plan::{
    default_transform_grid, expand_plan, sweep_chains, Cell, EvaluationPlan, PlanError, PreprocessKind,
    PreprocessOverride, DEFAULT_BLUR_SIGMAS, DEFAULT_JPEG_QUALITIES,
};

use crate::builtin::{BuiltinDetector, BuiltinSpec};
use crate::imaging::{apply_chain, Image, TransformChain};
use crate::manifest::{load_manifest, DatasetManifest, ManifestError};
use crate::metrics::{ScoreSet, ScoredEntry};
use crate::protocol::{DetectorSession, SessionConfig, WireItem};

pub const CACHE_DIR_ENV: &str = "SIDBENCH_CACHE_DIR";
pub const PLAN_FILE: &str = "plan.json";
pub const CELLS_FILE: &str = "cells.json";
pub const LOG_FILE: &str = "run.log";
pub const SCORES_DIR: &str = "scores";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: ManifestError,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid run directory {0}: {1}")]
    InvalidRunDir(PathBuf, String),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

/// Hooks and knobs that do not affect results.
#[derive(Clone, Default)]
pub struct RunOptions {
    /// Detector-level parallelism; defaults to the number of detectors.
    pub jobs: Option<usize>,
    pub session: SessionConfig,
    /// Overrides `<run_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    /// Checked before each cell and each batch; cells not finished when it
    /// is raised are recorded as failed with reason `interrupted`.
    pub cancel: Option<Arc<AtomicBool>>,
    pub on_cell_done: Option<CellCallback>,
}

/// Called after each cell finishes, in completion order.
pub type CellCallback = Arc<dyn Fn(&CellRecord) + Send + Sync>;

impl RunOptions {
    /// Applies `SIDBENCH_CACHE_DIR` when set and non-empty.
    pub fn with_env_cache_dir(mut self) -> Self {
        if let Some(dir) = std::env::var_os(CACHE_DIR_ENV).filter(|v| !v.is_empty()) {
            self.cache_dir = Some(PathBuf::from(dir));
        }
        self
    }

    fn cancelled(&self) -> bool {
        self.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub detector: String,
    pub command: String,
    pub manifest: String,
    pub family: String,
    pub chain_id: String,
    pub preprocess: String,
    /// Relative to the run directory.
    pub scores_file: String,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub n_real: usize,
    pub n_fake: usize,
    pub cache_hits: usize,
    pub scored: usize,
    pub wall_ms: u64,
}

impl CellRecord {
    pub fn is_completed(&self) -> bool {
        self.status == CellStatus::Completed
    }

    pub fn label(&self) -> String {
        format!("{} / {} / {}", self.detector, self.manifest, self.chain_id)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_dir: PathBuf,
    /// Chain ids in plan order; the transform groups for reporting.
    pub chains: Vec<String>,
    pub preprocess: String,
    pub cells: Vec<CellRecord>,
    /// Aligned with `cells`; `None` for failed cells.
    pub scores: Vec<Option<ScoreSet>>,
    /// Loaded manifests by name, for per-record family lookups.
    pub manifests: BTreeMap<String, DatasetManifest>,
}

impl RunResult {
    pub fn n_failed(&self) -> usize {
        self.cells.iter().filter(|c| !c.is_completed()).count()
    }

    pub fn completed(&self) -> impl Iterator<Item = (&CellRecord, &ScoreSet)> {
        self.cells
            .iter()
            .zip(&self.scores)
            .filter_map(|(c, s)| s.as_ref().map(|s| (c, s)))
    }

    pub fn cache_hits(&self) -> usize {
        self.cells.iter().map(|c| c.cache_hits).sum()
    }

    pub fn scored(&self) -> usize {
        self.cells.iter().map(|c| c.scored).sum()
    }

    /// Reloads a run from its directory: plan, cell statuses, persisted
    /// score sets and (when still readable) the manifests.
    pub fn load(run_dir: &Path) -> Result<Self, RunError> {
        let plan_path = run_dir.join(PLAN_FILE);
        let bytes = fs::read(&plan_path).map_err(io_err(format!("reading {}", plan_path.display())))?;
        let plan: PlanFile = serde_json::from_slice(&bytes)
            .map_err(|e| RunError::InvalidRunDir(run_dir.to_path_buf(), format!("{PLAN_FILE}: {e}")))?;
        let statuses: BTreeMap<String, CellRecord> = fs::read(run_dir.join(CELLS_FILE))
            .ok()
            .and_then(|b| serde_json::from_slice::<Vec<CellRecord>>(&b).ok())
            .map(|v| v.into_iter().map(|c| (c.scores_file.clone(), c)).collect())
            .unwrap_or_default();
        let mut manifests = BTreeMap::new();
        for m in &plan.manifests {
            if let Ok(loaded) = load_manifest(Path::new(&m.path)) {
                manifests.insert(m.name.clone(), loaded);
            }
        }
        let mut cells = Vec::with_capacity(plan.cells.len());
        let mut scores = Vec::with_capacity(plan.cells.len());
        for pc in &plan.cells {
            let det = &plan.detectors[pc.detector];
            let man = &plan.manifests[pc.manifest];
            let prior = statuses.get(&pc.scores);
            let loaded = read_scores(&run_dir.join(&pc.scores));
            let (status, error, set) = match loaded {
                Ok(set) => (CellStatus::Completed, None, Some(set)),
                Err(e) => {
                    let reason = prior.and_then(|p| p.error.clone()).unwrap_or(e);
                    (CellStatus::Failed, Some(reason), None)
                }
            };
            cells.push(CellRecord {
                detector: det.id.clone(),
                command: det.command.clone(),
                manifest: man.name.clone(),
                family: man.family.clone(),
                chain_id: plan.chains[pc.chain].clone(),
                preprocess: plan.preprocess.clone(),
                scores_file: pc.scores.clone(),
                status,
                error,
                n_real: set.as_ref().map_or(man.n_real, ScoreSet::n_real),
                n_fake: set.as_ref().map_or(man.n_fake, ScoreSet::n_fake),
                cache_hits: prior.map_or(0, |p| p.cache_hits),
                scored: prior.map_or(0, |p| p.scored),
                wall_ms: prior.map_or(0, |p| p.wall_ms),
            });
            scores.push(set);
        }
        Ok(Self {
            run_dir: run_dir.to_path_buf(),
            chains: plan.chains,
            preprocess: plan.preprocess,
            cells,
            scores,
            manifests,
        })
    }
}

/// Reads a persisted score set (`{"id","score","label"}` per line).
pub fn read_scores(path: &Path) -> Result<ScoreSet, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    let entries = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str::<ScoredEntry>(l).map_err(|e| format!("{} line {}: {e}", path.display(), i + 1)))
        .collect::<Result<Vec<_>, _>>()?;
    ScoreSet::new(entries).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn scores_to_jsonl(set: &ScoreSet) -> String {
    let mut out = String::new();
    for e in set.entries() {
        out.push_str(&serde_json::to_string(e).expect("score entries serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanFile {
    schema_version: u32,
    detectors: Vec<PlanDetector>,
    manifests: Vec<PlanManifest>,
    chains: Vec<String>,
    preprocess: String,
    batch_size: usize,
    seed: u64,
    cells: Vec<PlanCell>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanDetector {
    command: String,
    id: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanManifest {
    path: String,
    name: String,
    family: String,
    n_real: usize,
    n_fake: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanCell {
    detector: usize,
    manifest: usize,
    chain: usize,
    scores: String,
}

// One per detector, so the size difference does not matter.
#[allow(clippy::large_enum_variant)]
enum Backend {
    Builtin(BuiltinSpec),
    External {
        session: Option<DetectorSession>,
        startup_error: Option<String>,
    },
}

struct Detector {
    command: String,
    id: String,
    backend: Backend,
}

fn resolve_detector(command: &str, config: &SessionConfig) -> Result<Detector, PlanError> {
    let command = command.trim().to_string();
    if BuiltinSpec::is_builtin_command(&command) {
        let spec: BuiltinSpec = command
            .parse()
            .map_err(|e: crate::builtin::BuiltinError| PlanError::InvalidDetector(command.clone(), e.to_string()))?;
        let id = crate::protocol::DetectorDescriptor::new(spec.name(), crate::builtin::BUILTIN_VERSION).detector_id();
        return Ok(Detector {
            command,
            id,
            backend: Backend::Builtin(spec),
        });
    }
    let started = DetectorSession::spawn(&command, config.clone()).and_then(|mut s| {
        let descriptor = s.handshake()?;
        Ok((s, descriptor))
    });
    Ok(match started {
        Ok((session, descriptor)) => Detector {
            id: descriptor.detector_id(),
            command,
            backend: Backend::External {
                session: Some(session),
                startup_error: None,
            },
        },
        Err(e) => {
            log::warn!("detector `{command}` failed to start: {e}");
            Detector {
                id: format!("external-{}", &sha256_hex(command.as_bytes())[..12]),
                command,
                backend: Backend::External {
                    session: None,
                    startup_error: Some(format!("detector failed to start: {e}")),
                },
            }
        }
    })
}

/// Runs every cell of `plan`, reusing cached scores. Per-cell failures are
/// recorded in the result; only invalid plans, unreadable manifests and
/// run-directory I/O errors are fatal. Manifests are loaded before the run
/// directory is created.
pub fn run(plan: &EvaluationPlan, options: &RunOptions) -> Result<RunResult, RunError> {
    let cells = expand_plan(plan)?;
    let chains = plan.effective_chains();

    let mut manifests = Vec::with_capacity(plan.manifests.len());
    for path in &plan.manifests {
        let m = load_manifest(path).map_err(|source| RunError::Manifest {
            path: path.clone(),
            source,
        })?;
        if manifests.iter().any(|o: &DatasetManifest| o.name == m.name) {
            return Err(PlanError::DuplicateManifestName(m.name).into());
        }
        manifests.push(m);
    }
    let mut detectors = plan
        .detectors
        .iter()
        .map(|c| resolve_detector(c, &options.session))
        .collect::<Result<Vec<_>, _>>()?;
    for (i, d) in detectors.iter().enumerate() {
        if detectors[..i].iter().any(|o| o.id == d.id) {
            return Err(PlanError::DuplicateDetector(d.id.clone()).into());
        }
    }

    let run_dir = &plan.output_dir;
    fs::create_dir_all(run_dir.join(SCORES_DIR)).map_err(io_err(format!("creating {}", run_dir.display())))?;
    let run_dir = fs::canonicalize(run_dir).map_err(io_err(format!("resolving {}", run_dir.display())))?;
    let cache = ScoreCache::new(options.cache_dir.clone().unwrap_or_else(|| run_dir.join("cache")));
    let preprocess = PreprocessOverride::tag(plan.preprocessing_override.as_ref());

    let plan_file = PlanFile {
        schema_version: 1,
        detectors: detectors
            .iter()
            .map(|d| PlanDetector {
                command: d.command.clone(),
                id: d.id.clone(),
            })
            .collect(),
        manifests: plan
            .manifests
            .iter()
            .zip(&manifests)
            .map(|(p, m)| PlanManifest {
                path: p.to_string_lossy().into_owned(),
                name: m.name.clone(),
                family: m.dominant_family(),
                n_real: m.n_real(),
                n_fake: m.n_fake(),
            })
            .collect(),
        chains: chains.iter().map(TransformChain::id).collect(),
        preprocess: preprocess.clone(),
        batch_size: plan.batch_size,
        seed: plan.seed,
        cells: cells
            .iter()
            .map(|c| PlanCell {
                detector: c.detector,
                manifest: c.manifest,
                chain: c.chain,
                scores: scores_file_name(&detectors[c.detector].id, &manifests[c.manifest].name, &chains[c.chain].id(), &preprocess),
            })
            .collect(),
    };
    let plan_json = serde_json::to_string_pretty(&plan_file).expect("plan serializes") + "\n";
    write_atomic(&run_dir.join(PLAN_FILE), plan_json.as_bytes()).map_err(io_err("writing plan.json"))?;

    let log_file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(run_dir.join(LOG_FILE))
        .map_err(io_err("opening run.log"))?;
    let log = Mutex::new(log_file);
    let log_line = |line: String| {
        log::info!("{line}");
        if let Ok(mut f) = log.lock() {
            let _ = writeln!(f, "{line}");
        }
    };
    log_line(format!(
        "run start: {} detectors, {} manifests, {} chains, preprocess {preprocess}",
        detectors.len(),
        manifests.len(),
        chains.len()
    ));

    // Image digests are shared by every detector and chain.
    let digests: Vec<Vec<Result<String, String>>> = manifests
        .iter()
        .map(|m| {
            m.records
                .par_iter()
                .map(|r| {
                    sha256_file(&m.resolve(r)).map_err(|e| format!("image {}: {e}", r.path))
                })
                .collect()
        })
        .collect();

    let ctx = RunContext {
        plan,
        chains: &chains,
        manifests: &manifests,
        digests: &digests,
        cache: &cache,
        run_dir: &run_dir,
        preprocess: &preprocess,
        options,
        log: &log_line,
    };

    let n_workers = options.jobs.unwrap_or(detectors.len()).clamp(1, detectors.len());
    type Slot = Option<(CellRecord, Option<ScoreSet>)>;
    let slots: Mutex<Vec<Slot>> = Mutex::new(vec![None; cells.len()]);
    let queue: Mutex<Vec<(usize, &mut Detector)>> = Mutex::new(detectors.iter_mut().enumerate().rev().collect());
    std::thread::scope(|scope| {
        for _ in 0..n_workers {
            scope.spawn(|| loop {
                let next = queue.lock().unwrap_or_else(|e| e.into_inner()).pop();
                let Some((di, detector)) = next else { break };
                for (ci, cell) in cells.iter().enumerate().filter(|(_, c)| c.detector == di) {
                    let outcome = ctx.run_cell(detector, cell);
                    if let Some(cb) = &options.on_cell_done {
                        cb(&outcome.0);
                    }
                    slots.lock().unwrap_or_else(|e| e.into_inner())[ci] = Some(outcome);
                }
                if let Backend::External { session: Some(s), .. } = &mut detector.backend {
                    s.shutdown();
                }
            });
        }
    });

    let (records, scores): (Vec<CellRecord>, Vec<Option<ScoreSet>>) = slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|s| s.expect("every cell is visited"))
        .unzip();
    let cells_json = serde_json::to_string_pretty(&records).expect("cells serialize") + "\n";
    write_atomic(&run_dir.join(CELLS_FILE), cells_json.as_bytes()).map_err(io_err("writing cells.json"))?;
    let failed = records.iter().filter(|c| !c.is_completed()).count();
    log_line(format!("run end: {} cells, {failed} failed", records.len()));

    Ok(RunResult {
        chains: plan_file.chains,
        preprocess,
        cells: records,
        scores,
        manifests: manifests.into_iter().map(|m| (m.name.clone(), m)).collect(),
        run_dir,
    })
}

/// [`run`] over identity followed by `base_chain_grid`; the plan's own
/// chains are replaced.
pub fn sweep_transforms(
    plan: &EvaluationPlan,
    base_chain_grid: &[TransformChain],
    options: &RunOptions,
) -> Result<RunResult, RunError> {
    let mut plan = plan.clone();
    plan.chains = sweep_chains(base_chain_grid);
    run(&plan, options)
}

fn scores_file_name(detector_id: &str, manifest: &str, chain_id: &str, preprocess: &str) -> String {
    format!(
        "{SCORES_DIR}/{}__{}__{}.jsonl",
        fs_component(detector_id),
        fs_component(manifest),
        fs_component(&CacheKey::variant_stem(chain_id, preprocess))
    )
}

struct RunContext<'a> {
    plan: &'a EvaluationPlan,
    chains: &'a [TransformChain],
    manifests: &'a [DatasetManifest],
    digests: &'a [Vec<Result<String, String>>],
    cache: &'a ScoreCache,
    run_dir: &'a Path,
    preprocess: &'a str,
    options: &'a RunOptions,
    log: &'a (dyn Fn(String) + Sync),
}

struct CellWork {
    hits: usize,
    scored: usize,
}

impl RunContext<'_> {
    fn run_cell(&self, detector: &mut Detector, cell: &Cell) -> (CellRecord, Option<ScoreSet>) {
        let start = Instant::now();
        let manifest = &self.manifests[cell.manifest];
        let chain = &self.chains[cell.chain];
        let mut record = CellRecord {
            detector: detector.id.clone(),
            command: detector.command.clone(),
            manifest: manifest.name.clone(),
            family: manifest.dominant_family(),
            chain_id: chain.id(),
            preprocess: self.preprocess.to_string(),
            scores_file: scores_file_name(&detector.id, &manifest.name, &chain.id(), self.preprocess),
            status: CellStatus::Failed,
            error: None,
            n_real: manifest.n_real(),
            n_fake: manifest.n_fake(),
            cache_hits: 0,
            scored: 0,
            wall_ms: 0,
        };
        let mut work = CellWork { hits: 0, scored: 0 };
        let outcome = self.score_cell(detector, cell, &mut work);
        record.cache_hits = work.hits;
        record.scored = work.scored;
        record.wall_ms = start.elapsed().as_millis() as u64;
        let set = match outcome {
            Ok(set) => {
                record.status = CellStatus::Completed;
                (self.log)(format!(
                    "cell {} completed: {} scores ({} cached, {} scored) in {} ms",
                    record.label(),
                    set.len(),
                    work.hits,
                    work.scored,
                    record.wall_ms
                ));
                Some(set)
            }
            Err(e) => {
                // A stale file from an earlier run must not read back as completed.
                let _ = fs::remove_file(self.run_dir.join(&record.scores_file));
                (self.log)(format!("cell {} failed: {e}", record.label()));
                record.error = Some(e);
                None
            }
        };
        (record, set)
    }

    fn score_cell(&self, detector: &mut Detector, cell: &Cell, work: &mut CellWork) -> Result<ScoreSet, String> {
        if self.options.cancelled() {
            return Err("interrupted".into());
        }
        let manifest = &self.manifests[cell.manifest];
        let chain = &self.chains[cell.chain];
        let chain_id = chain.id();
        let digests = self.digests[cell.manifest]
            .iter()
            .map(|d| d.as_deref().map_err(Clone::clone))
            .collect::<Result<Vec<&str>, String>>()?;
        let detector_id = detector.id.clone();
        let key = |i: usize| CacheKey {
            detector_id: detector_id.clone(),
            image_digest: digests[i].to_string(),
            chain_id: chain_id.clone(),
            preprocess_tag: self.preprocess.to_string(),
        };

        if let Backend::External {
            startup_error: Some(e), ..
        } = &detector.backend
        {
            return Err(e.clone());
        }
        let builtin = match detector.backend {
            Backend::Builtin(spec) => Some(BuiltinDetector::new(spec, Some(manifest)).map_err(|e| e.to_string())?),
            Backend::External { .. } => None,
        };

        let mut scores: Vec<Option<f64>> = (0..manifest.len()).into_par_iter().map(|i| self.cache.get(&key(i))).collect();
        work.hits = scores.iter().filter(|s| s.is_some()).count();
        let misses: Vec<usize> = (0..scores.len()).filter(|&i| scores[i].is_none()).collect();

        for batch in misses.chunks(self.plan.batch_size) {
            if self.options.cancelled() {
                return Err("interrupted".into());
            }
            let prepared = batch
                .par_iter()
                .map(|&i| self.prepare(manifest, i, chain))
                .collect::<Result<Vec<Image>, String>>()?;
            let batch_scores = match &builtin {
                Some(det) => batch
                    .par_iter()
                    .zip(&prepared)
                    .map(|(&i, img)| det.score(&manifest.records[i].path, Some(img)).map_err(|e| e.to_string()))
                    .collect::<Result<Vec<f64>, String>>()?,
                None => self.score_external(detector, manifest, batch, &prepared, &digests, &chain_id)?,
            };
            for (&i, &s) in batch.iter().zip(&batch_scores) {
                if !s.is_finite() {
                    return Err(format!("non-finite score for id {}", manifest.records[i].path));
                }
                scores[i] = Some(s);
            }
            batch
                .par_iter()
                .zip(&batch_scores)
                .try_for_each(|(&i, &s)| self.cache.put(&key(i), s))
                .map_err(|e| format!("writing cache: {e}"))?;
            work.scored += batch.len();
        }

        let entries = manifest
            .records
            .iter()
            .zip(scores)
            .map(|(r, s)| ScoredEntry {
                id: r.path.clone(),
                score: s.expect("all misses were scored"),
                label: r.label,
            })
            .collect();
        let set = ScoreSet::new(entries).map_err(|e| e.to_string())?;
        let path = self.run_dir.join(scores_file_name(&detector.id, &manifest.name, &chain_id, self.preprocess));
        let text = scores_to_jsonl(&set);
        if fs::read(&path).ok().as_deref() != Some(text.as_bytes()) {
            write_atomic(&path, text.as_bytes()).map_err(|e| format!("writing {}: {e}", path.display()))?;
        }
        Ok(set)
    }

    /// Load, perturb and (optionally) preprocess one record.
    fn prepare(&self, manifest: &DatasetManifest, i: usize, chain: &TransformChain) -> Result<Image, String> {
        let record = &manifest.records[i];
        let fail = |e: crate::imaging::ImagingError| format!("image {}: {e}", record.path);
        let img = Image::load(&manifest.resolve(record)).map_err(fail)?;
        let img = apply_chain(&img, chain).map_err(fail)?;
        match &self.plan.preprocessing_override {
            Some(p) => p.apply(&img).map_err(fail),
            None => Ok(img),
        }
    }

    fn score_external(
        &self,
        detector: &mut Detector,
        manifest: &DatasetManifest,
        batch: &[usize],
        prepared: &[Image],
        digests: &[&str],
        chain_id: &str,
    ) -> Result<Vec<f64>, String> {
        let stem = CacheKey::variant_stem(chain_id, self.preprocess);
        let items = batch
            .par_iter()
            .zip(prepared)
            .map(|(&i, img)| {
                let path = self.run_dir.join("scratch").join(digests[i]).join(format!("{}.png", fs_component(&stem)));
                if !path.exists() {
                    let png = img.encode_png().map_err(|e| e.to_string())?;
                    write_atomic(&path, &png).map_err(|e| format!("writing {}: {e}", path.display()))?;
                }
                Ok(WireItem {
                    id: manifest.records[i].path.clone(),
                    path: path.to_string_lossy().into_owned(),
                })
            })
            .collect::<Result<Vec<WireItem>, String>>()?;

        let Backend::External { session, .. } = &mut detector.backend else {
            unreachable!("external scoring on a built-in detector")
        };
        if !session.as_ref().is_some_and(|s| s.is_open()) {
            // A previous cell lost the process; start a fresh one.
            let mut fresh = DetectorSession::spawn(&detector.command, self.options.session.clone())
                .map_err(|e| format!("detector restart failed: {e}"))?;
            let descriptor = fresh.handshake().map_err(|e| format!("detector restart failed: {e}"))?;
            if descriptor.detector_id() != detector.id {
                return Err(format!(
                    "detector identity changed on restart: {} != {}",
                    descriptor.detector_id(),
                    detector.id
                ));
            }
            *session = Some(fresh);
        }
        let session = session.as_mut().expect("session is open");
        session
            .score_batch(&items, self.plan.preprocessing_override.is_some())
            .map_err(|e| e.to_string())
    }
}
