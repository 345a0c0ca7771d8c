//! Procedural labeled corpus for end-to-end runs without external data.
//!
//! Real images are smooth two-color gradients with mild seeded noise. Fake
//! images are generated the same way and then carry a faint periodic
//! watermark at the Nyquist frequency: a checkerboard for family `gan`,
//! vertical stripes for family `diffusion`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::imaging::{Image, ImagingError};
use crate::manifest::{DatasetManifest, ImageRecord, Label, SCHEMA_VERSION};
use crate::runner::{default_transform_grid, sweep_chains, write_atomic, EvaluationPlan};

pub const DEMO_MANIFEST_NAME: &str = "demo";

/// The built-ins every demo run evaluates.
pub const DEMO_DETECTORS: [&str; 4] = [
    "builtin:constant:v=0.5",
    "builtin:random:seed=42",
    "builtin:label_leak",
    "builtin:highfreq:cutoff=0.5,scale=8",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DemoConfig {
    pub seed: u64,
    pub n_real: usize,
    pub n_fake: usize,
    pub size: u32,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_real: 1000,
            n_fake: 1000,
            size: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Real,
    Gan,
    Diffusion,
}

const WATERMARK_AMPLITUDE: f64 = 6.0;
const NOISE_AMPLITUDE: f64 = 4.0;

fn generate(kind: Kind, size: u32, rng: &mut ChaCha8Rng) -> Image {
    let a: [f64; 3] = std::array::from_fn(|_| rng.gen_range(30.0..225.0));
    let b: [f64; 3] = std::array::from_fn(|_| rng.gen_range(30.0..225.0));
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let span = f64::from(size.max(2) - 1);
    let mut data = Vec::with_capacity(size as usize * size as usize * 3);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (f64::from(x) / span - 0.5, f64::from(y) / span - 0.5);
            let t = ((u * dx + v * dy) / std::f64::consts::SQRT_2 + 0.5).clamp(0.0, 1.0);
            let mark = match kind {
                Kind::Real => 0.0,
                Kind::Gan if (x + y) % 2 == 0 => WATERMARK_AMPLITUDE,
                Kind::Diffusion if x % 2 == 0 => WATERMARK_AMPLITUDE,
                _ => -WATERMARK_AMPLITUDE,
            };
            for c in 0..3 {
                let noise = rng.gen_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE);
                let value = a[c] + (b[c] - a[c]) * t + mark + noise;
                data.push(value.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::new(size, size, data).expect("size is positive")
}

fn record_for(index: usize, n_real: usize, n_fake: usize) -> (Kind, ImageRecord) {
    if index < n_real {
        let record = ImageRecord {
            path: format!("real/{index:05}.png"),
            label: Label::Real,
            generator: "none".into(),
            family: "real".into(),
            source: Some("procedural".into()),
        };
        return (Kind::Real, record);
    }
    let j = index - n_real;
    let (kind, family, generator) = if j < n_fake / 2 {
        (Kind::Gan, "gan", "checkerboard")
    } else {
        (Kind::Diffusion, "diffusion", "stripes")
    };
    let record = ImageRecord {
        path: format!("fake/{family}/{j:05}.png"),
        label: Label::Fake,
        generator: generator.into(),
        family: family.into(),
        source: Some("procedural".into()),
    };
    (kind, record)
}

fn io_error(path: &Path, source: std::io::Error) -> ImagingError {
    ImagingError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes the corpus and its manifest under `dir`; returns the manifest
/// path. Image bytes are a function of `config` alone.
pub fn generate_corpus(dir: &Path, config: &DemoConfig) -> Result<PathBuf, ImagingError> {
    let total = config.n_real + config.n_fake;
    let records = (0..total)
        .into_par_iter()
        .map(|i| {
            let (kind, record) = record_for(i, config.n_real, config.n_fake);
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let png = generate(kind, config.size, &mut rng).encode_png()?;
            let path = dir.join(&record.path);
            write_atomic(&path, &png).map_err(|source| io_error(&path, source))?;
            Ok(record)
        })
        .collect::<Result<Vec<_>, ImagingError>>()?;
    let manifest = DatasetManifest {
        name: DEMO_MANIFEST_NAME.into(),
        root: dir.to_path_buf(),
        records,
        schema_version: SCHEMA_VERSION,
    };
    let path = dir.join("manifest.jsonl");
    write_atomic(&path, manifest.to_jsonl().as_bytes()).map_err(|source| io_error(&path, source))?;
    Ok(path)
}

/// The demo sweep: every demo built-in over the default robustness grid,
/// writing into `run_dir`.
pub fn demo_plan(run_dir: &Path, manifest: PathBuf, seed: u64) -> EvaluationPlan {
    let mut plan = EvaluationPlan::new(run_dir);
    plan.detectors = DEMO_DETECTORS.iter().map(|d| d.to_string()).collect();
    plan.manifests = vec![manifest];
    plan.chains = sweep_chains(&default_transform_grid());
    plan.seed = seed;
    plan
}
