//! One PASS/FAIL line per acceptance criterion. Exits nonzero on any failure.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use hyperseg_core::config::RunConfig;
use hyperseg_core::data::synth_scene;
use hyperseg_core::eval::compute_metrics;
use hyperseg_core::pipeline::{
    assemble, heldout_labels, segment_dense, train_cnn_stage, train_crf_stage, HELDOUT_FILE,
};
use hyperseg_core::refiner::Placement;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, pass: bool, what: &str, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("{} {id:>2} {what}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed())
}

fn desk_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")
}

fn hyperseg(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hyperseg"))
        .arg("--quiet")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn report_value(report: &str, key: &str) -> Option<f64> {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .and_then(|v| v.parse().ok())
}

struct PipelineRun {
    cnn_oa: f64,
    seg_oa: f64,
    files: BTreeMap<String, Vec<u8>>,
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            let key = path.strip_prefix(root).unwrap().display().to_string();
            out.insert(key, std::fs::read(&path).unwrap());
        }
    }
}

/// synth, train, infer and two evals through the binary; the eval reports
/// are kept alongside the other artifacts.
fn cli_pipeline(work: &Path, seed: u64) -> Result<PipelineRun, String> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let cfg = s(&desk_config_path());
    let seed = seed.to_string();
    let (data, model, pred) = (work.join("data"), work.join("model"), work.join("pred"));
    hyperseg(&["--seed", &seed, "synth", "--out", &s(&data), "--config", &cfg])?;
    hyperseg(&[
        "--seed",
        &seed,
        "train",
        "--cube",
        &s(&data.join("cube.hsc")),
        "--labels",
        &s(&data.join("truth.lbl")),
        "--config",
        &cfg,
        "--out",
        &s(&model),
    ])?;
    hyperseg(&[
        "infer",
        "--cube",
        &s(&data.join("cube.hsc")),
        "--model",
        &s(&model),
        "--out",
        &s(&pred),
    ])?;
    let heldout = s(&model.join(HELDOUT_FILE));
    let cls = hyperseg(&[
        "eval",
        "--pred",
        &s(&pred.join("classification.lbl")),
        "--truth",
        &heldout,
    ])?;
    let seg = hyperseg(&[
        "eval",
        "--pred",
        &s(&pred.join("segmentation.lbl")),
        "--truth",
        &heldout,
    ])?;
    std::fs::write(work.join("classification-report.txt"), &cls).unwrap();
    std::fs::write(work.join("segmentation-report.txt"), &seg).unwrap();
    let mut files = BTreeMap::new();
    collect_files(work, work, &mut files);
    Ok(PipelineRun {
        cnn_oa: report_value(&cls, "OA").ok_or("no OA in report")?,
        seg_oa: report_value(&seg, "OA").ok_or("no OA in report")?,
        files,
    })
}

struct Ablation {
    oa: [Vec<f64>; 3],
    losses: [Vec<f64>; 3],
}

/// Segmentation OA on held-out pixels for each refiner placement, sharing
/// one CNN stage per seed.
fn ablation(seeds: std::ops::Range<u64>) -> Ablation {
    let base = RunConfig::load(desk_config_path()).unwrap();
    let mut a = Ablation {
        oa: Default::default(),
        losses: Default::default(),
    };
    for seed in seeds {
        let mut spec = base.synth.clone();
        spec.seed = seed;
        let (cube, truth) = synth_scene(&spec).unwrap();
        let cnn = train_cnn_stage(&cube, &truth, &base, seed).unwrap();
        for (i, placement) in [Placement::None, Placement::Unary, Placement::Pairwise]
            .into_iter()
            .enumerate()
        {
            let mut cfg = base.clone();
            cfg.refiner.placement = placement;
            let crf = train_crf_stage(&cube, &truth, &cnn, &cfg, seed).unwrap();
            let heldout = heldout_labels(&cnn, &crf);
            let out = assemble(cnn.clone(), crf, &cfg);
            let inf = segment_dense(&cube, &cnn.dense, &out.model).unwrap();
            let oa = compute_metrics(&inf.segmentation, &heldout).unwrap().oa;
            println!("     seed {seed} {placement:?}: segmentation OA {oa:.2}");
            a.oa[i].push(oa);
            a.losses[i].push(*out.crf_curve.train.last().unwrap());
        }
    }
    a
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn main() {
    let mut r = Report { failures: 0 };

    let (diff, t) = timed(|| common::conv_oracle_max_diff(200, 1));
    r.line(
        1,
        diff <= 1e-5 && t < Duration::from_secs(10),
        "conv3d vs direct summation, 200 instances",
        format!("max abs diff {diff:.2e}, {:.2}s", t.as_secs_f64()),
    );

    let (suite, t) = timed(|| common::gradient_suite(20, 2));
    let worst = suite.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    let enough = suite.iter().all(|g| g.instances >= 20);
    r.line(
        2,
        worst <= 1e-3 && enough && suite.len() == 7 && t < Duration::from_secs(60),
        "finite-difference gradients, 7 ops",
        format!(
            "worst rel error {worst:.2e}, min instances {}, {:.2}s",
            suite.iter().map(|g| g.instances).min().unwrap_or(0),
            t.as_secs_f64()
        ),
    );
    for g in &suite {
        println!(
            "     {}: {} instances, max rel error {:.2e}",
            g.op, g.instances, g.max_rel_error
        );
    }

    let adj = common::adjoint_max_diff(100, 3);
    r.line(
        3,
        adj <= 1e-4,
        "conv/deconv adjointness, 100 instances",
        format!("max diff {adj:.2e}"),
    );

    let mf = common::mean_field_vs_exact(50, 4);
    r.line(
        4,
        mf.max_tv <= 5e-2 && mf.max_independent_diff <= 1e-6,
        "mean field vs enumeration, 50 graphs",
        format!("max TV {:.2e}, psi=0 diff {:.2e}", mf.max_tv, mf.max_independent_diff),
    );

    let pw = common::piecewise_sanity(5);
    r.line(
        5,
        pw.init_diff <= 1e-6 && pw.curve.len() == 10 && pw.monotone(),
        "piecewise loss at uniform init and first 10 epochs",
        format!(
            "init diff {:.2e}, loss {:.3} -> {:.3}, monotone {}",
            pw.init_diff,
            pw.curve.first().copied().unwrap_or(f64::NAN),
            pw.curve.last().copied().unwrap_or(f64::NAN),
            pw.monotone()
        ),
    );

    let aug = common::augmentation_check(6);
    r.line(
        6,
        aug.variants == 7 && aug.pairwise_distinct && aug.fusion_identity,
        "geometric variants and identity fusion",
        format!(
            "{} variants, distinct {}, alpha=1 beta=0 exact {}",
            aug.variants, aug.pairwise_distinct, aug.fusion_identity
        ),
    );

    let work = tempfile::tempdir().unwrap();
    let (first, t) = timed(|| cli_pipeline(&work.path().join("a"), 42));
    match &first {
        Ok(run) => r.line(
            7,
            run.cnn_oa >= 95.0 && run.seg_oa >= run.cnn_oa && t <= Duration::from_secs(600),
            "CLI synth/train/infer/eval on the desk config",
            format!(
                "CNN OA {:.2}, segmentation OA {:.2}, {:.0}s",
                run.cnn_oa,
                run.seg_oa,
                t.as_secs_f64()
            ),
        ),
        Err(e) => r.line(7, false, "CLI synth/train/infer/eval on the desk config", e.clone()),
    }

    let ab = ablation(42..47);
    let m: Vec<f64> = ab.oa.iter().map(|v| mean(v)).collect();
    r.line(
        8,
        m[0] <= m[1] + 0.5 && m[1] <= m[2] + 0.5,
        "placement ordering over 5 seeds",
        format!("mean OA none {:.2}, unary {:.2}, pairwise {:.2}", m[0], m[1], m[2]),
    );
    let refined_lower = ab.losses[2].iter().zip(&ab.losses[0]).filter(|(p, n)| p <= n).count();
    println!(
        "     final piecewise loss with pairwise refinement <= without on {refined_lower}/{} seeds",
        ab.losses[0].len()
    );

    let second = cli_pipeline(&work.path().join("b"), 42);
    match (&first, &second) {
        (Ok(a), Ok(b)) => {
            let differing: Vec<&String> = a.files.keys().filter(|k| b.files.get(*k) != a.files.get(*k)).collect();
            let same_set = a.files.len() == b.files.len();
            r.line(
                9,
                differing.is_empty() && same_set,
                "two same-seed pipeline runs",
                format!("{} files compared, {} differ", a.files.len(), differing.len()),
            );
        }
        (_, Err(e)) | (Err(e), _) => r.line(9, false, "two same-seed pipeline runs", e.clone()),
    }

    let tt = common::t_test_check(20, 7);
    r.line(
        10,
        tt.max_p_diff <= 1e-6 && tt.identical_p == 1.0,
        "paired t-test vs quadrature oracle, 20 samples",
        format!("max p diff {:.2e}, identical-input p {}", tt.max_p_diff, tt.identical_p),
    );

    println!("{} of 10 criteria failed", r.failures);
    if r.failures > 0 {
        std::process::exit(1);
    }
}
