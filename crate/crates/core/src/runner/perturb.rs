use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::cache::write_atomic;
use crate::imaging::{apply_chain, Image, TransformChain};
use crate::manifest::{DatasetManifest, ImageRecord};

#[derive(Debug)]
pub struct PerturbOutcome {
    pub manifest_path: PathBuf,
    pub written: usize,
    /// Records left out of the new manifest, with the reason.
    pub failures: Vec<(String, String)>,
}

fn png_path(record: &str) -> String {
    match Path::new(record).extension() {
        Some(_) => Path::new(record).with_extension("png").to_string_lossy().into_owned(),
        None => format!("{record}.png"),
    }
}

/// Writes `chain` applied to every record of `manifest` as lossless PNG under
/// `out_dir`, mirroring the relative layout, plus a `manifest.jsonl`
/// describing the result.
pub fn perturb_corpus(manifest: &DatasetManifest, chain: &TransformChain, out_dir: &Path) -> Result<PerturbOutcome, String> {
    let mut seen = HashSet::new();
    for r in &manifest.records {
        let target = png_path(&r.path);
        if !seen.insert(target.clone()) {
            return Err(format!("two records map to output path {target}"));
        }
    }
    let results: Vec<Result<ImageRecord, (String, String)>> = manifest
        .records
        .par_iter()
        .map(|r| {
            let fail = |e: String| (r.path.clone(), e);
            let img = Image::load(&manifest.resolve(r)).map_err(|e| fail(e.to_string()))?;
            let out = apply_chain(&img, chain).map_err(|e| fail(e.to_string()))?;
            let png = out.encode_png().map_err(|e| fail(e.to_string()))?;
            let path = png_path(&r.path);
            write_atomic(&out_dir.join(&path), &png).map_err(|e| fail(e.to_string()))?;
            Ok(ImageRecord { path, ..r.clone() })
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }
    let written = records.len();
    let perturbed = DatasetManifest {
        name: manifest.name.clone(),
        root: out_dir.to_path_buf(),
        records,
        schema_version: manifest.schema_version,
    };
    let manifest_path = out_dir.join("manifest.jsonl");
    write_atomic(&manifest_path, perturbed.to_jsonl().as_bytes()).map_err(|e| format!("writing {}: {e}", manifest_path.display()))?;
    Ok(PerturbOutcome {
        manifest_path,
        written,
        failures,
    })
}
