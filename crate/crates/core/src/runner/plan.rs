use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::imaging::{center_crop, resize, Image, ImagingError, TransformChain, TransformSpec};
use crate::protocol::DEFAULT_BATCH_SIZE;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("plan has no detectors")]
    NoDetectors,
    #[error("plan has no manifests")]
    NoManifests,
    #[error("duplicate chain id `{0}` in plan")]
    DuplicateChain(String),
    #[error("duplicate detector `{0}` in plan")]
    DuplicateDetector(String),
    #[error("duplicate manifest name `{0}` in plan")]
    DuplicateManifestName(String),
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("invalid detector `{0}`: {1}")]
    InvalidDetector(String, String),
    #[error("invalid preprocessing override `{0}` (expected crop:N or resize:N)")]
    InvalidPreprocess(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreprocessKind {
    Crop,
    Resize,
}

/// Harness-side preprocessing for the crop-vs-resize study. When set, the
/// harness crops or resizes every image to `size`×`size` after the
/// perturbation chain and tells the detector to skip its own policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessOverride {
    pub kind: PreprocessKind,
    pub size: u32,
}

impl PreprocessOverride {
    pub fn apply(&self, img: &Image) -> Result<Image, ImagingError> {
        match self.kind {
            PreprocessKind::Crop => center_crop(img, self.size, self.size),
            PreprocessKind::Resize => resize(img, self.size, self.size),
        }
    }

    pub fn tag(over: Option<&PreprocessOverride>) -> String {
        over.map_or_else(|| "none".to_string(), ToString::to_string)
    }
}

impl fmt::Display for PreprocessOverride {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            PreprocessKind::Crop => "crop",
            PreprocessKind::Resize => "resize",
        };
        write!(f, "{kind}:{}", self.size)
    }
}

impl FromStr for PreprocessOverride {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = || PlanError::InvalidPreprocess(s.to_string());
        let (kind, size) = s.split_once(':').ok_or_else(invalid)?;
        let kind = match kind {
            "crop" => PreprocessKind::Crop,
            "resize" => PreprocessKind::Resize,
            _ => return Err(invalid()),
        };
        let size: u32 = size.parse().map_err(|_| invalid())?;
        if size == 0 {
            return Err(invalid());
        }
        Ok(Self { kind, size })
    }
}

impl Serialize for PreprocessOverride {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PreprocessOverride {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// The (detector × manifest × chain) grid to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationPlan {
    /// `builtin:…` pseudo-commands or external command lines.
    pub detectors: Vec<String>,
    pub manifests: Vec<PathBuf>,
    /// Empty means the identity chain only.
    pub chains: Vec<TransformChain>,
    pub preprocessing_override: Option<PreprocessOverride>,
    pub batch_size: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl EvaluationPlan {
    pub fn new(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            detectors: Vec::new(),
            manifests: Vec::new(),
            chains: Vec::new(),
            preprocessing_override: None,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            output_dir: output_dir.into(),
        }
    }

    pub fn effective_chains(&self) -> Vec<TransformChain> {
        if self.chains.is_empty() {
            vec![TransformChain::identity()]
        } else {
            self.chains.clone()
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.detectors.is_empty() {
            return Err(PlanError::NoDetectors);
        }
        if self.manifests.is_empty() {
            return Err(PlanError::NoManifests);
        }
        if self.batch_size == 0 {
            return Err(PlanError::ZeroBatchSize);
        }
        let mut seen = HashSet::new();
        for d in &self.detectors {
            if !seen.insert(d.trim()) {
                return Err(PlanError::DuplicateDetector(d.clone()));
            }
        }
        let mut seen = HashSet::new();
        for c in &self.chains {
            let id = c.id();
            if !seen.insert(id.clone()) {
                return Err(PlanError::DuplicateChain(id));
            }
        }
        Ok(())
    }
}

/// Indices into the plan's detector, manifest and chain lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub detector: usize,
    pub manifest: usize,
    pub chain: usize,
}

/// Cross product in deterministic order: detectors outer, manifests middle,
/// chains inner.
pub fn expand_plan(plan: &EvaluationPlan) -> Result<Vec<Cell>, PlanError> {
    plan.validate()?;
    let n_chains = plan.effective_chains().len();
    let mut cells = Vec::with_capacity(plan.detectors.len() * plan.manifests.len() * n_chains);
    for detector in 0..plan.detectors.len() {
        for manifest in 0..plan.manifests.len() {
            for chain in 0..n_chains {
                cells.push(Cell {
                    detector,
                    manifest,
                    chain,
                });
            }
        }
    }
    Ok(cells)
}

pub const DEFAULT_BLUR_SIGMAS: [f64; 2] = [2.0, 4.0];
pub const DEFAULT_JPEG_QUALITIES: [u8; 4] = [95, 90, 50, 30];

/// The robustness grid without the identity baseline: blur σ ∈ {2, 4} and
/// JPEG quality ∈ {95, 90, 50, 30}.
pub fn default_transform_grid() -> Vec<TransformChain> {
    let blurs = DEFAULT_BLUR_SIGMAS.iter().map(|&sigma| TransformSpec::Blur { sigma });
    let jpegs = DEFAULT_JPEG_QUALITIES.iter().map(|&quality| TransformSpec::Jpeg { quality });
    blurs
        .chain(jpegs)
        .map(|spec| TransformChain::new(vec![spec]).expect("default grid parameters are valid"))
        .collect()
}

/// Identity followed by `grid`, with duplicates (including a redundant
/// identity) dropped.
pub fn sweep_chains(grid: &[TransformChain]) -> Vec<TransformChain> {
    let mut chains = vec![TransformChain::identity()];
    let mut seen: HashSet<String> = chains.iter().map(TransformChain::id).collect();
    for chain in grid {
        if seen.insert(chain.id()) {
            chains.push(chain.clone());
        }
    }
    chains
}
