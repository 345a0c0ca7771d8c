//! In-process reference detectors. They carry no model; they exist so the
//! whole harness can run and be checked without any external adapter.
//!
//! Pseudo-commands: `builtin:constant:v=0.5`, `builtin:random:seed=42`,
//! `builtin:label_leak`, `builtin:highfreq:cutoff=0.5,scale=8`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imaging::Image;
use crate::manifest::{DatasetManifest, Label};
use crate::protocol::{BatchScorer, DetectorDescriptor, WireItem};

pub const BUILTIN_PREFIX: &str = "builtin:";
pub const BUILTIN_VERSION: &str = "1";

/// Fixed reference energy fraction subtracted before the logistic in the
/// highfreq detector. Not fitted to any data.
pub const HIGHFREQ_REFERENCE_MEDIAN: f64 = 0.15;

pub const HIGHFREQ_MIN_SIDE: u32 = 8;

#[derive(Debug, Error, PartialEq)]
pub enum BuiltinError {
    #[error("unknown builtin detector `{0}`")]
    Unknown(String),
    #[error("invalid builtin parameters in `{spec}`: {reason}")]
    InvalidParams { spec: String, reason: String },
    #[error("label_leak needs a manifest")]
    ManifestRequired,
    #[error("unknown record {0}")]
    UnknownRecord(String),
    #[error("image too small for highfreq: {width}x{height} (minimum 8x8)")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("{0} needs image content")]
    ImageRequired(&'static str),
    #[error("cannot load {path}: {reason}")]
    Load { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinSpec {
    Constant { value: f64 },
    Random { seed: u64 },
    LabelLeak,
    HighFreq { cutoff: f64, scale: f64 },
}

impl BuiltinSpec {
    /// Name without the `builtin:` prefix, also used as the descriptor name.
    pub fn name(&self) -> String {
        let full = self.to_string();
        full[BUILTIN_PREFIX.len()..].to_string()
    }

    pub fn is_builtin_command(command: &str) -> bool {
        command.trim_start().starts_with(BUILTIN_PREFIX)
    }
}

impl fmt::Display for BuiltinSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuiltinSpec::Constant { value } => write!(f, "{BUILTIN_PREFIX}constant:v={value}"),
            BuiltinSpec::Random { seed } => write!(f, "{BUILTIN_PREFIX}random:seed={seed}"),
            BuiltinSpec::LabelLeak => write!(f, "{BUILTIN_PREFIX}label_leak"),
            BuiltinSpec::HighFreq { cutoff, scale } => {
                write!(f, "{BUILTIN_PREFIX}highfreq:cutoff={cutoff},scale={scale}")
            }
        }
    }
}

impl FromStr for BuiltinSpec {
    type Err = BuiltinError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let body = s
            .strip_prefix(BUILTIN_PREFIX)
            .ok_or_else(|| BuiltinError::Unknown(s.to_string()))?;
        let (kind, rest) = body.split_once(':').unwrap_or((body, ""));
        let invalid = |reason: &str| BuiltinError::InvalidParams {
            spec: s.to_string(),
            reason: reason.to_string(),
        };
        let mut params = HashMap::new();
        for pair in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = pair.split_once('=').ok_or_else(|| invalid("expected key=value"))?;
            params.insert(k.trim(), v.trim());
        }
        let mut float = |key: &str| -> Result<f64, BuiltinError> {
            let v: f64 = params
                .remove(key)
                .ok_or_else(|| invalid(&format!("missing `{key}`")))?
                .parse()
                .map_err(|_| invalid(&format!("`{key}` must be a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(invalid(&format!("`{key}` must be finite")))
            }
        };
        let spec = match kind {
            "constant" => BuiltinSpec::Constant { value: float("v")? },
            "random" => BuiltinSpec::Random {
                seed: params
                    .remove("seed")
                    .ok_or_else(|| invalid("missing `seed`"))?
                    .parse()
                    .map_err(|_| invalid("`seed` must be a u64"))?,
            },
            "label_leak" => BuiltinSpec::LabelLeak,
            "highfreq" => {
                let cutoff = float("cutoff")?;
                let scale = float("scale")?;
                if !(0.0..=1.0).contains(&cutoff) {
                    return Err(invalid("`cutoff` must be within [0, 1]"));
                }
                BuiltinSpec::HighFreq { cutoff, scale }
            }
            _ => return Err(BuiltinError::Unknown(s.to_string())),
        };
        if let Some(extra) = params.keys().next() {
            return Err(invalid(&format!("unknown key `{extra}`")));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
pub struct BuiltinDetector {
    spec: BuiltinSpec,
    labels: HashMap<String, Label>,
}

impl BuiltinDetector {
    /// `label_leak` needs the manifest whose record paths it will be asked
    /// about; the others ignore it.
    pub fn new(spec: BuiltinSpec, manifest: Option<&DatasetManifest>) -> Result<Self, BuiltinError> {
        let labels = match (spec, manifest) {
            (BuiltinSpec::LabelLeak, None) => return Err(BuiltinError::ManifestRequired),
            (BuiltinSpec::LabelLeak, Some(m)) => m.records.iter().map(|r| (r.path.clone(), r.label)).collect(),
            _ => HashMap::new(),
        };
        Ok(Self { spec, labels })
    }

    pub fn spec(&self) -> BuiltinSpec {
        self.spec
    }

    pub fn descriptor(&self) -> DetectorDescriptor {
        DetectorDescriptor::new(self.spec.name(), BUILTIN_VERSION)
    }

    pub fn needs_image(&self) -> bool {
        matches!(self.spec, BuiltinSpec::Random { .. } | BuiltinSpec::HighFreq { .. })
    }

    /// Scores one sample. `id` is the manifest record path.
    pub fn score(&self, id: &str, image: Option<&Image>) -> Result<f64, BuiltinError> {
        match self.spec {
            BuiltinSpec::Constant { value } => Ok(value),
            BuiltinSpec::LabelLeak => match self.labels.get(id) {
                Some(Label::Fake) => Ok(1.0),
                Some(Label::Real) => Ok(0.0),
                None => Err(BuiltinError::UnknownRecord(id.to_string())),
            },
            BuiltinSpec::Random { seed } => {
                let img = image.ok_or(BuiltinError::ImageRequired("random"))?;
                Ok(random_score(seed, img))
            }
            BuiltinSpec::HighFreq { cutoff, scale } => {
                let img = image.ok_or(BuiltinError::ImageRequired("highfreq"))?;
                let fraction = highfreq_energy_fraction(img, cutoff)?;
                Ok(logistic(scale * (fraction - HIGHFREQ_REFERENCE_MEDIAN)))
            }
        }
    }
}

/// Uniform draw in `[0, 1)` keyed by `(seed, image content)`.
///
/// Key: SHA-256 of the little-endian seed followed by
/// [`Image::content_digest`]. The key seeds ChaCha8; its first 64-bit output,
/// shifted right by 11 and scaled by 2⁻⁵³, is the score.
pub fn random_score(seed: u64, img: &Image) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(img.content_digest());
    let key: [u8; 32] = hasher.finalize().into();
    let draw = ChaCha8Rng::from_seed(key).next_u64();
    (draw >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Normalized radial frequency of DFT bin `k` on an axis of length `n`:
/// `min(k, n-k) / (n/2)`, in `[0, 1]`.
fn axis_frequency(k: usize, n: usize) -> f64 {
    let folded = k.min(n - k) as f64;
    folded / (n as f64 / 2.0)
}

/// Share of 2-D spectral energy above `cutoff`.
///
/// Energy at bin `(u, v)` is `|F(u, v)|²` averaged over the three channels
/// (raw 0–255 samples, DC included). A bin counts as high-frequency when
/// `sqrt((fu² + fv²) / 2) > cutoff`, with `fu`, `fv` the per-axis normalized
/// frequencies, so the corner (Nyquist, Nyquist) sits at radius 1. An
/// all-zero image has fraction 0.
pub fn highfreq_energy_fraction(img: &Image, cutoff: f64) -> Result<f64, BuiltinError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.width() < HIGHFREQ_MIN_SIDE || img.height() < HIGHFREQ_MIN_SIDE {
        return Err(BuiltinError::ImageTooSmall {
            width: img.width(),
            height: img.height(),
        });
    }
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    let col_fft = planner.plan_fft_forward(h);

    let mut energy = vec![0.0f64; w * h];
    let mut buf = vec![Complex::new(0.0, 0.0); w * h];
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for c in 0..3 {
        for (i, px) in img.data().chunks_exact(3).enumerate() {
            buf[i] = Complex::new(f64::from(px[c]), 0.0);
        }
        for row in buf.chunks_exact_mut(w) {
            row_fft.process(row);
        }
        for x in 0..w {
            for y in 0..h {
                column[y] = buf[y * w + x];
            }
            col_fft.process(&mut column);
            for y in 0..h {
                energy[y * w + x] += column[y].norm_sqr() / 3.0;
            }
        }
    }

    let mut total = 0.0;
    let mut high = 0.0;
    for v in 0..h {
        let fv = axis_frequency(v, h);
        for u in 0..w {
            let fu = axis_frequency(u, w);
            let e = energy[v * w + u];
            total += e;
            if ((fu * fu + fv * fv) / 2.0).sqrt() > cutoff {
                high += e;
            }
        }
    }
    Ok(if total > 0.0 { high / total } else { 0.0 })
}

/// Adapter serving a built-in over the wire protocol: loads each item's
/// image from its path when the detector needs pixels.
pub struct BuiltinScorer {
    detector: BuiltinDetector,
}

impl BuiltinScorer {
    pub fn new(detector: BuiltinDetector) -> Self {
        Self { detector }
    }

    pub fn descriptor(&self) -> DetectorDescriptor {
        self.detector.descriptor()
    }
}

impl BatchScorer for BuiltinScorer {
    fn score(&mut self, items: &[WireItem], _preprocessed: bool) -> Result<Vec<f64>, String> {
        items
            .iter()
            .map(|item| {
                let image = if self.detector.needs_image() {
                    Some(Image::load(Path::new(&item.path)).map_err(|e| {
                        BuiltinError::Load {
                            path: item.path.clone(),
                            reason: e.to_string(),
                        }
                        .to_string()
                    })?)
                } else {
                    None
                };
                self.detector.score(&item.id, image.as_ref()).map_err(|e| e.to_string())
            })
            .collect()
    }
}
