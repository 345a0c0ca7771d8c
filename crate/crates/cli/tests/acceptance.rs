//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

// `ensure!(a <= b)` must fail when either side is NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sidbench_core::demo::{generate_corpus, DemoConfig};
use sidbench_core::imaging::{
    apply_chain, center_crop, center_crop_origin, encode_jpeg, gaussian_blur, kernel_radius, Image, TransformChain,
    BASE_CHROMA_TABLE, BASE_LUMA_TABLE,
};
use sidbench_core::manifest::Label;
use sidbench_core::metrics::{average_precision, confusion_at, oracle_threshold, roc_auc, ScoreSet};
use sidbench_core::report::{metric_table, transform_report, GroupBy, ThresholdMode};
use sidbench_core::runner::{run, CellStatus, EvaluationPlan, RunOptions, RunResult};

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !($cond) {
            return Err(format!($($fmt)+));
        }
    };
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_sidbench")
}

fn sidbench(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("SIDBENCH_CACHE_DIR")
        .output()
        .expect("spawn sidbench")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

// Brute-force references, written from the definitions and sharing no code
// with the library.

type Pairs = Vec<(f64, bool)>; // (score, is_fake)

fn brute_counts(pairs: &Pairs, t: f64) -> (f64, f64, f64, f64) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0.0, 0.0, 0.0, 0.0);
    for &(s, fake) in pairs {
        match (s >= t, fake) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, false) => tn += 1.0,
            (false, true) => fn_ += 1.0,
        }
    }
    (tp, fp, tn, fn_)
}

fn brute_acc(pairs: &Pairs, t: f64) -> f64 {
    let (tp, _, tn, _) = brute_counts(pairs, t);
    (tp + tn) / pairs.len() as f64
}

fn brute_tpr(pairs: &Pairs, t: f64) -> Option<f64> {
    let (tp, _, _, fn_) = brute_counts(pairs, t);
    (tp + fn_ > 0.0).then(|| tp / (tp + fn_))
}

fn brute_tnr(pairs: &Pairs, t: f64) -> Option<f64> {
    let (_, fp, tn, _) = brute_counts(pairs, t);
    (tn + fp > 0.0).then(|| tn / (tn + fp))
}

/// Mean over fake entries of the precision at that entry's own score.
fn brute_ap(pairs: &Pairs) -> Option<f64> {
    let fakes: Vec<f64> = pairs.iter().filter(|p| p.1).map(|p| p.0).collect();
    if fakes.is_empty() {
        return None;
    }
    let total: f64 = fakes
        .iter()
        .map(|&s| {
            let (tp, fp, _, _) = brute_counts(pairs, s);
            tp / (tp + fp)
        })
        .sum();
    Some(total / fakes.len() as f64)
}

/// Fraction of (fake, real) pairs ranked correctly, ties counting half.
fn brute_auc(pairs: &Pairs) -> Option<f64> {
    let mut wins = 0.0;
    let mut n = 0.0;
    for &(f, _) in pairs.iter().filter(|p| p.1) {
        for &(r, _) in pairs.iter().filter(|p| !p.1) {
            n += 1.0;
            if f > r {
                wins += 1.0;
            } else if f == r {
                wins += 0.5;
            }
        }
    }
    (n > 0.0).then(|| wins / n)
}

fn to_set(pairs: &Pairs) -> ScoreSet {
    ScoreSet::from_pairs(pairs.iter().map(|&(s, f)| (s, if f { Label::Fake } else { Label::Real }))).unwrap()
}

fn random_sets() -> Vec<Pairs> {
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    (0..1000)
        .map(|i| {
            let n = rng.gen_range(1..=64);
            // Coarse grids force ties; some sets use continuous scores.
            let levels = [2u32, 5, 9, 17, 0][i % 5];
            (0..n)
                .map(|_| {
                    let s = if levels == 0 {
                        rng.gen::<f64>()
                    } else {
                        f64::from(rng.gen_range(0..levels)) / f64::from(levels - 1)
                    };
                    (s, rng.gen_bool(0.5))
                })
                .collect()
        })
        .collect()
}

fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}

fn metric_oracle() -> Check {
    let start = Instant::now();
    for (i, pairs) in random_sets().iter().enumerate() {
        let set = to_set(pairs);
        let ap = average_precision(&set).ok();
        ensure!(close(ap, brute_ap(pairs), 1e-9), "set {i}: AP {ap:?} vs {:?}", brute_ap(pairs));
        let auc = roc_auc(&set).ok();
        ensure!(close(auc, brute_auc(pairs), 1e-9), "set {i}: AUC {auc:?} vs {:?}", brute_auc(pairs));
        let mut thresholds = vec![0.5, -1.0, 2.0];
        thresholds.extend(pairs.iter().map(|p| p.0));
        for t in thresholds {
            let c = confusion_at(&set, t).map_err(|e| e.to_string())?;
            let acc = c.accuracy().map_err(|e| e.to_string())?;
            ensure!((acc - brute_acc(pairs, t)).abs() <= 1e-9, "set {i} t={t}: ACC {acc}");
            ensure!(close(c.tpr(), brute_tpr(pairs, t), 1e-9), "set {i} t={t}: TPR {:?}", c.tpr());
            ensure!(close(c.tnr(), brute_tnr(pairs, t), 1e-9), "set {i} t={t}: TNR {:?}", c.tnr());
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(())
}

fn named_values() -> Check {
    let worked: Pairs = vec![(0.9, true), (0.8, false), (0.7, true), (0.6, true)];
    ensure!((brute_ap(&worked).unwrap() - 29.0 / 36.0).abs() <= 1e-12, "oracle AP");
    let set = to_set(&worked);
    let ap = average_precision(&set).map_err(|e| e.to_string())?;
    ensure!((ap - 29.0 / 36.0).abs() <= 1e-12, "AP {ap}");
    let auc = roc_auc(&set).map_err(|e| e.to_string())?;
    ensure!((auc - 1.0 / 3.0).abs() <= 1e-12, "AUC {auc}");
    ensure!((brute_auc(&worked).unwrap() - 1.0 / 3.0).abs() <= 1e-12, "oracle AUC");

    let separated = to_set(&vec![(0.1, false), (0.2, false), (0.3, false), (0.7, true), (0.9, true)]);
    let ap = average_precision(&separated).map_err(|e| e.to_string())?;
    let auc = roc_auc(&separated).map_err(|e| e.to_string())?;
    let oracle = oracle_threshold(&separated).map_err(|e| e.to_string())?;
    ensure!(ap == 1.0 && auc == 1.0 && oracle.accuracy == 1.0, "AP {ap} AUC {auc} ACC@oracle {}", oracle.accuracy);
    Ok(())
}

fn calibration_dominance() -> Check {
    for (i, pairs) in random_sets().iter().enumerate() {
        let set = to_set(pairs);
        let oracle = oracle_threshold(&set).map_err(|e| e.to_string())?;
        let at_oracle = brute_acc(pairs, oracle.threshold);
        let at_default = brute_acc(pairs, 0.5);
        ensure!(at_oracle >= at_default, "set {i}: {at_oracle} < {at_default}");
        ensure!((oracle.accuracy - at_oracle).abs() <= 1e-12, "set {i}: reported {} vs {at_oracle}", oracle.accuracy);
        // No threshold at any score value does better.
        let best = pairs.iter().map(|p| brute_acc(pairs, p.0)).fold(brute_acc(pairs, f64::INFINITY), f64::max);
        ensure!((best - at_oracle).abs() <= 1e-12, "set {i}: best {best} vs oracle {at_oracle}");
    }
    Ok(())
}

fn end_to_end_demo(tmp: &Path) -> Check {
    let out = tmp.join("demo");
    let start = Instant::now();
    let o = sidbench(&["demo", "--seed", "7", "--out", path_str(&out)]);
    let elapsed = start.elapsed();
    ensure!(o.status.success(), "demo exited {:?}: {}", o.status, String::from_utf8_lossy(&o.stderr));
    ensure!(elapsed < Duration::from_secs(120), "demo took {elapsed:?}");
    let result = RunResult::load(&out).map_err(|e| e.to_string())?;
    let rows = metric_table(&result, ThresholdMode::Fixed(0.5), GroupBy::None).map_err(|e| e.to_string())?;
    let leak: Vec<_> = rows.iter().filter(|r| r.detector.starts_with("label_leak")).collect();
    let random: Vec<_> = rows.iter().filter(|r| r.detector.starts_with("random:seed=42")).collect();
    ensure!(!leak.is_empty() && !random.is_empty(), "missing demo rows");
    for r in &leak {
        ensure!(r.n_real == 1000 && r.n_fake == 1000, "corpus size {} + {}", r.n_real, r.n_fake);
        for (name, v) in [("ACC", r.acc), ("AP", r.ap), ("TPR", r.tpr), ("TNR", r.tnr)] {
            ensure!(v == Some(1.0), "label_leak {} {name} = {v:?}", r.chain_id);
        }
    }
    for r in &random {
        for (name, v) in [("ACC", r.acc), ("AP", r.ap)] {
            let v = v.ok_or(format!("random {name} undefined"))?;
            ensure!((0.45..=0.55).contains(&v), "random {} {name} = {v}", r.chain_id);
        }
    }
    for f in ["report_metrics.csv", "report_calibration.csv", "report_transforms.csv"] {
        ensure!(out.join(f).is_file(), "missing {f}");
    }
    println!("      demo wall time {:.1}s", elapsed.as_secs_f64());
    Ok(())
}

/// Reads the quantization tables (destination 0 and 1) from a baseline JPEG,
/// undoing the zigzag order.
fn dqt_tables(bytes: &[u8]) -> Result<[[u16; 64]; 2], String> {
    const ZIGZAG: [usize; 64] = [
        0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14,
        21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53,
        60, 61, 54, 47, 55, 62, 63,
    ];
    let mut tables = [[0u16; 64]; 2];
    let mut found = [false; 2];
    let mut i = 2;
    while i + 4 <= bytes.len() && bytes[i] == 0xFF {
        let marker = bytes[i + 1];
        let len = usize::from(bytes[i + 2]) << 8 | usize::from(bytes[i + 3]);
        if marker == 0xDA {
            break;
        }
        if marker == 0xDB {
            let mut j = i + 4;
            while j < i + 2 + len {
                let precision = bytes[j] >> 4;
                let dest = usize::from(bytes[j] & 0x0F);
                j += 1;
                for &pos in &ZIGZAG {
                    let v = if precision == 0 {
                        let v = u16::from(bytes[j]);
                        j += 1;
                        v
                    } else {
                        let v = u16::from(bytes[j]) << 8 | u16::from(bytes[j + 1]);
                        j += 2;
                        v
                    };
                    if dest < 2 {
                        tables[dest][pos] = v;
                    }
                }
                if dest < 2 {
                    found[dest] = true;
                }
            }
        }
        i += 2 + len;
    }
    ensure!(found == [true, true], "DQT tables not found");
    Ok(tables)
}

fn transform_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noisy = Image::from_fn(97, 61, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
    ensure!(gaussian_blur(&noisy, 0.0) == noisy, "sigma 0 changed pixels");
    let empty: TransformChain = "".parse().unwrap_or_else(|_| TransformChain::identity());
    ensure!(apply_chain(&noisy, &empty).map_err(|e| e.to_string())? == noisy, "empty chain changed pixels");
    ensure!(apply_chain(&noisy, &TransformChain::identity()).map_err(|e| e.to_string())? == noisy, "identity changed pixels");

    for sigma in [0.5, 1.0, 2.0, 4.0, 7.3] {
        let flat = Image::filled(40, 23, [13, 128, 250]);
        ensure!(gaussian_blur(&flat, sigma) == flat, "constant image changed at sigma {sigma}");
    }

    ensure!(center_crop_origin(256, 256, 224, 224) == (16, 16), "crop origin");
    let gradient = Image::from_fn(256, 256, |x, y| [x as u8, y as u8, (x ^ y) as u8]);
    let crop = center_crop(&gradient, 224, 224).map_err(|e| e.to_string())?;
    ensure!(crop.pixel(0, 0) == [16, 16, 0], "crop starts at {:?}", crop.pixel(0, 0));

    let tables = dqt_tables(&encode_jpeg(&noisy, 50).map_err(|e| e.to_string())?)?;
    ensure!(tables[0] == BASE_LUMA_TABLE && tables[1] == BASE_CHROMA_TABLE, "Q50 tables differ from base");
    let tables = dqt_tables(&encode_jpeg(&noisy, 100).map_err(|e| e.to_string())?)?;
    ensure!(tables.iter().all(|t| t.iter().all(|&v| v == 1)), "Q100 tables not all ones");

    // Impulse response against a direct 2-D Gaussian convolution.
    for sigma in [1.0, 2.0, 3.5] {
        let r = kernel_radius(sigma) as i64;
        let size = (4 * r + 9) as u32;
        let c = i64::from(size / 2);
        let impulse = Image::from_fn(size, size, |x, y| if i64::from(x) == c && i64::from(y) == c { [255, 255, 255] } else { [0, 0, 0] });
        let blurred = gaussian_blur(&impulse, sigma);
        let weight = |dx: i64, dy: i64| (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
        let mut norm = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                norm += weight(dx, dy);
            }
        }
        for y in 0..i64::from(size) {
            for x in 0..i64::from(size) {
                let (dx, dy) = (x - c, y - c);
                let expected = if dx.abs() <= r && dy.abs() <= r { 255.0 * weight(dx, dy) / norm } else { 0.0 };
                let got = blurred.pixel(x as u32, y as u32);
                for v in got {
                    ensure!((f64::from(v) - expected).abs() <= 1.0, "sigma {sigma} at ({x},{y}): {v} vs {expected:.3}");
                }
            }
        }
    }
    Ok(())
}

fn renamed_corpus(dir: &Path, seed: u64, name: &str) -> PathBuf {
    let config = DemoConfig {
        seed,
        n_real: 12,
        n_fake: 12,
        size: 32,
    };
    let manifest = generate_corpus(dir, &config).unwrap();
    let text = fs::read_to_string(&manifest).unwrap().replacen("\"demo\"", &format!("\"{name}\""), 1);
    fs::write(&manifest, text).unwrap();
    manifest
}

fn sweep_structure(tmp: &Path) -> Check {
    let a = renamed_corpus(&tmp.join("sweep-a"), 1, "alpha");
    let b = renamed_corpus(&tmp.join("sweep-b"), 2, "beta");
    let out = tmp.join("sweep-run");
    let o = sidbench(&[
        "sweep",
        "--out",
        path_str(&out),
        "--manifest",
        path_str(&a),
        "--manifest",
        path_str(&b),
        "--detector",
        "builtin:highfreq:cutoff=0.5,scale=8",
        "--detector",
        "builtin:random:seed=42",
    ]);
    ensure!(o.status.success(), "sweep exited {:?}: {}", o.status, String::from_utf8_lossy(&o.stderr));
    let result = RunResult::load(&out).map_err(|e| e.to_string())?;
    let grid = ["identity", "blur:sigma=2", "blur:sigma=4", "jpeg:q=95", "jpeg:q=90", "jpeg:q=50", "jpeg:q=30"];
    ensure!(result.chains == grid, "chains {:?}", result.chains);
    for detector in ["highfreq:cutoff=0.5,scale=8@1", "random:seed=42@1"] {
        for dataset in ["alpha", "beta"] {
            let groups: Vec<&str> = result
                .cells
                .iter()
                .filter(|c| c.detector == detector && c.manifest == dataset && c.status == CellStatus::Completed)
                .map(|c| c.chain_id.as_str())
                .collect();
            ensure!(groups == grid, "{detector} on {dataset}: groups {groups:?}");
        }
    }
    let rows = metric_table(&result, ThresholdMode::Fixed(0.5), GroupBy::None).map_err(|e| e.to_string())?;
    let (transforms, warnings) = transform_report(&result).map_err(|e| e.to_string())?;
    ensure!(warnings.is_empty(), "warnings {warnings:?}");
    ensure!(transforms.len() == 14, "{} transform rows", transforms.len());
    for t in &transforms {
        ensure!(t.n_datasets == 2, "{} {} over {} datasets", t.detector, t.key, t.n_datasets);
        let members: Vec<f64> = rows
            .iter()
            .filter(|r| r.detector == t.detector && r.chain_id == t.key)
            .map(|r| r.auc.unwrap())
            .collect();
        let mean = members.iter().sum::<f64>() / members.len() as f64;
        ensure!(members.len() == 2 && t.auc.value == Some(mean), "{} {}: {:?} vs {mean}", t.detector, t.key, t.auc);
    }
    let csv = fs::read_to_string(out.join("report_transforms.csv")).map_err(|e| e.to_string())?;
    ensure!(csv.lines().count() == 15, "report_transforms.csv has {} lines", csv.lines().count());
    Ok(())
}

/// scores/ plus report files, by relative name.
fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir.join("scores")).unwrap() {
        let p = entry.unwrap().path();
        out.push((format!("scores/{}", p.file_name().unwrap().to_string_lossy()), fs::read(&p).unwrap()));
    }
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        if name.starts_with("report_") || name == "figure_data.csv" {
            out.push((name, fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

fn compare(label: &str, a: &[(String, Vec<u8>)], b: &[(String, Vec<u8>)]) -> Check {
    let names = |v: &[(String, Vec<u8>)]| v.iter().map(|x| x.0.clone()).collect::<Vec<_>>();
    ensure!(names(a) == names(b), "{label}: file sets differ {:?} vs {:?}", names(a), names(b));
    for ((name, x), (_, y)) in a.iter().zip(b) {
        ensure!(x == y, "{label}: {name} differs");
    }
    Ok(())
}

fn determinism(tmp: &Path) -> Check {
    let corpus = renamed_corpus(&tmp.join("det-corpus"), 11, "det");
    let detectors = ["builtin:random:seed=42", "builtin:highfreq:cutoff=0.5,scale=8", "builtin:label_leak"];
    let chains = ["identity", "blur:sigma=2", "jpeg:q=50"];
    let cli_run = |out: &Path| {
        let mut args = vec!["run", "--batch-size", "5", "--out", path_str(out), "--manifest", path_str(&corpus)];
        for d in &detectors {
            args.extend(["--detector", d]);
        }
        for c in &chains {
            args.extend(["--chain", c]);
        }
        sidbench(&args)
    };

    let cold_dir = tmp.join("det-cold");
    let o = cli_run(&cold_dir);
    ensure!(o.status.success(), "cold run: {}", String::from_utf8_lossy(&o.stderr));
    let cold = artifacts(&cold_dir);
    ensure!(cold.iter().filter(|a| a.0.starts_with("scores/")).count() == 9, "expected 9 score files");

    let o = cli_run(&cold_dir);
    ensure!(o.status.success(), "warm run: {}", String::from_utf8_lossy(&o.stderr));
    let warm = RunResult::load(&cold_dir).map_err(|e| e.to_string())?;
    ensure!(warm.cells.iter().all(|c| c.scored == 0), "warm run scored images");
    compare("warm", &cold, &artifacts(&cold_dir))?;

    // Interrupt after three cells, then resume with the CLI.
    let resumed_dir = tmp.join("det-resumed");
    let mut plan = EvaluationPlan::new(&resumed_dir);
    plan.detectors = detectors.iter().map(|d| d.to_string()).collect();
    plan.manifests = vec![corpus.clone()];
    plan.chains = chains.iter().map(|c| c.parse().unwrap()).collect();
    plan.batch_size = 5;
    let cancel = Arc::new(AtomicBool::new(false));
    let done = Arc::new(AtomicUsize::new(0));
    let options = RunOptions {
        jobs: Some(1),
        cancel: Some(cancel.clone()),
        on_cell_done: Some({
            let cancel = cancel.clone();
            let done = done.clone();
            Arc::new(move |_| {
                if done.fetch_add(1, Ordering::SeqCst) + 1 == 3 {
                    cancel.store(true, Ordering::SeqCst);
                }
            })
        }),
        ..RunOptions::default()
    };
    let partial = run(&plan, &options).map_err(|e| e.to_string())?;
    let finished = partial.cells.iter().filter(|c| c.status == CellStatus::Completed).count();
    ensure!(finished == 3, "{finished} cells finished before interruption");
    let o = cli_run(&resumed_dir);
    ensure!(o.status.success(), "resume: {}", String::from_utf8_lossy(&o.stderr));
    let resumed = RunResult::load(&resumed_dir).map_err(|e| e.to_string())?;
    let hits: usize = resumed.cells.iter().map(|c| c.cache_hits).sum();
    ensure!(hits == 3 * 24, "resume reused {hits} cached scores");
    compare("resumed", &cold, &artifacts(&resumed_dir))
}

fn golden_transcripts() -> Check {
    let cli_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let golden = cli_dir.join("tests/golden");
    let specs = fs::read_to_string(golden.join("specs.txt")).map_err(|e| e.to_string())?;
    for line in specs.lines().filter(|l| !l.trim().is_empty()) {
        let (name, spec) = line.split_once(' ').ok_or("bad specs line")?;
        let input = fs::File::open(golden.join(format!("{name}.in.jsonl"))).map_err(|e| e.to_string())?;
        let expected = fs::read_to_string(golden.join(format!("{name}.out.jsonl"))).map_err(|e| e.to_string())?;
        let o = Command::new(bin())
            .args(["detector-serve", spec])
            .current_dir(cli_dir)
            .stdin(input)
            .stderr(Stdio::null())
            .output()
            .map_err(|e| e.to_string())?;
        let got = String::from_utf8_lossy(&o.stdout);
        ensure!(got == expected, "transcript {name}:\n{got}\nexpected:\n{expected}");
    }
    Ok(())
}

fn injected_faults(tmp: &Path) -> Check {
    let corpus = renamed_corpus(&tmp.join("fault-corpus"), 3, "faults");
    let cases = [
        ("missing-id", "reply is missing id"),
        ("nan", "non-finite score for id"),
        ("exit", "detector exited mid-batch"),
        ("stall", "score timeout after"),
    ];
    let mut messages = Vec::new();
    for (fault, expected) in cases {
        let out = tmp.join(format!("fault-{fault}"));
        let detector = format!("{} detector-serve builtin:constant:v=0.5 --fault {fault}", bin());
        let start = Instant::now();
        let o = sidbench(&[
            "run",
            "--timeout-secs",
            "2",
            "--batch-size",
            "8",
            "--out",
            path_str(&out),
            "--manifest",
            path_str(&corpus),
            "--detector",
            &detector,
        ]);
        let elapsed = start.elapsed();
        ensure!(elapsed < Duration::from_secs(30), "{fault}: run took {elapsed:?}");
        ensure!(o.status.code() == Some(2), "{fault}: exit {:?}", o.status);
        let result = RunResult::load(&out).map_err(|e| e.to_string())?;
        let err = result.cells[0].error.clone().ok_or(format!("{fault}: cell did not fail"))?;
        ensure!(err.contains(expected), "{fault}: error {err:?}");
        messages.push(err.lines().next().unwrap_or_default().to_string());
    }
    let mut distinct = messages.clone();
    distinct.sort();
    distinct.dedup();
    ensure!(distinct.len() == cases.len(), "fault errors not distinct: {messages:?}");

    // A fault on a later batch still fails the cell, not the run.
    let out = tmp.join("fault-late");
    let detector = format!("{} detector-serve builtin:constant:v=0.5 --fault nan --fault-batch 2", bin());
    let o = sidbench(&["run", "--batch-size", "8", "--out", path_str(&out), "--manifest", path_str(&corpus), "--detector", &detector]);
    ensure!(o.status.code() == Some(2), "late fault: exit {:?}", o.status);
    Ok(())
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let t = tmp.path();
    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("metric oracle equivalence (1000 sets, 1e-9, <10s)", Box::new(metric_oracle)),
        ("named values (AP 29/36, AUC 1/3, perfect separation)", Box::new(named_values)),
        ("calibration dominance", Box::new(calibration_dominance)),
        ("end-to-end demo (seed 7, <2 min)", Box::new(|| end_to_end_demo(t))),
        ("transform correctness", Box::new(transform_correctness)),
        ("sweep structure (7 chain groups, cross-dataset transform report)", Box::new(|| sweep_structure(t))),
        ("determinism and resumability", Box::new(|| determinism(t))),
        ("protocol golden transcripts", Box::new(golden_transcripts)),
        ("protocol injected faults", Box::new(|| injected_faults(t))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let start = Instant::now();
        match check() {
            Ok(()) => println!("PASS  {name} ({:.2}s)", start.elapsed().as_secs_f64()),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name}: {e}");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
