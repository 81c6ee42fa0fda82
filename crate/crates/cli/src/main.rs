use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use hyperseg_core::config::RunConfig;
use hyperseg_core::data::{read_cube, read_labels, synth_scene, write_cube, write_labels};
use hyperseg_core::error::{create_dir, read_file, write_file};
use hyperseg_core::eval::{aggregate_reports, compute_metrics, paired_t_test, render_error_map, render_label_map};
use hyperseg_core::pipeline::{self, load_model, write_train_output};
use hyperseg_core::{Error, LabelMap};

const RUNS_FILE: &str = "runs.txt";

#[derive(Parser)]
#[command(
    name = "hyperseg",
    version,
    about = "Hyperspectral classification and CRF segmentation"
)]
struct Cli {
    /// Seed for every random stage.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cube and its ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train band-group CNNs and the CRF potentials.
    Train {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Independent runs with seeds `seed, seed + 1, ...`.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
    },
    /// Classify and segment a cube with a trained model.
    Infer {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy of a label map or a run manifest against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Second prediction set for a paired t-test.
        #[arg(long)]
        pred_b: Option<PathBuf>,
        /// Render the difference map of the first prediction.
        #[arg(long)]
        error_map: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: kind={} message={msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: Option<&Path>) -> hyperseg_core::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> hyperseg_core::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Synth { out, config } => {
            let mut spec = load_config(config.as_deref())?.synth;
            spec.seed = cli.seed;
            let (cube, truth) = synth_scene(&spec)?;
            create_dir(&out)?;
            write_cube(&cube, out.join("cube.hsc"))?;
            write_labels(&truth, out.join("truth.lbl"))?;
            info!(
                "wrote {}x{}x{} cube to {}",
                cube.height(),
                cube.width(),
                cube.bands(),
                out.display()
            );
        }
        Command::Train {
            cube,
            labels,
            config,
            out,
            repeat,
        } => {
            if repeat == 0 {
                return Err(Error::Config("--repeat must be at least 1".into()));
            }
            let cfg = load_config(config.as_deref())?;
            let cube = read_cube(cube)?;
            let truth = read_labels(labels)?;
            create_dir(&out)?;
            write_file(out.join("config.toml"), cfg.to_toml()?)?;
            if repeat == 1 {
                write_train_output(&pipeline::train(&cube, &truth, &cfg, cli.seed)?, &out)?;
            } else {
                let mut runs = String::new();
                for r in 0..repeat {
                    let name = run_name(r);
                    info!("run {} of {repeat}", r + 1);
                    let trained = pipeline::train(&cube, &truth, &cfg, cli.seed + r as u64)?;
                    write_train_output(&trained, out.join(&name))?;
                    runs.push_str(&name);
                    runs.push('\n');
                }
                write_file(out.join(RUNS_FILE), runs)?;
            }
            info!("model written to {}", out.display());
        }
        Command::Infer { cube, model, out } => {
            let cube = read_cube(cube)?;
            create_dir(&out)?;
            let runs = model.join(RUNS_FILE);
            if runs.exists() {
                let (mut cls, mut seg) = (String::new(), String::new());
                for name in manifest_entries(&runs)? {
                    infer_one(&cube, &model.join(&name), &out.join(&name))?;
                    cls.push_str(&format!("{name}/classification.lbl\n"));
                    seg.push_str(&format!("{name}/segmentation.lbl\n"));
                }
                write_file(out.join("classification.runs"), cls)?;
                write_file(out.join("segmentation.runs"), seg)?;
            } else {
                infer_one(&cube, &model, &out)?;
            }
        }
        Command::Eval {
            pred,
            truth,
            pred_b,
            error_map,
        } => {
            let truth = read_labels(truth)?;
            let preds = load_predictions(&pred)?;
            if let Some(path) = error_map {
                render_error_map(&preds[0], &truth, path)?;
            }
            let a = preds
                .iter()
                .map(|p| compute_metrics(p, &truth))
                .collect::<Result<Vec<_>, _>>()?;
            print!("{}", aggregate_reports(&a)?.to_text());
            if let Some(pb) = pred_b {
                let b = load_predictions(&pb)?
                    .iter()
                    .map(|p| compute_metrics(p, &truth))
                    .collect::<Result<Vec<_>, _>>()?;
                for line in aggregate_reports(&b)?.to_text().lines() {
                    println!("b.{line}");
                }
                let oa = |r: &[hyperseg_core::eval::MetricsReport]| r.iter().map(|m| m.oa).collect::<Vec<_>>();
                let t = paired_t_test(&oa(&a), &oa(&b))?;
                println!("t = {:.6}", t.t);
                println!("p = {:.6}", t.p);
                println!("significant = {}", t.significant);
            }
        }
    }
    Ok(())
}

fn run_name(r: usize) -> String {
    format!("run-{:02}", r + 1)
}

fn infer_one(cube: &hyperseg_core::HyperCube, model: &Path, out: &Path) -> hyperseg_core::Result<()> {
    let model = load_model(model)?;
    let result = pipeline::infer(cube, &model)?;
    create_dir(out)?;
    write_labels(&result.classification, out.join("classification.lbl"))?;
    write_labels(&result.segmentation, out.join("segmentation.lbl"))?;
    render_label_map(&result.classification, out.join("classification.ppm"))?;
    render_label_map(&result.segmentation, out.join("segmentation.ppm"))?;
    info!("mean field stopped after {} iterations", result.iterations);
    Ok(())
}

fn manifest_entries(path: &Path) -> hyperseg_core::Result<Vec<String>> {
    let text = String::from_utf8(read_file(path)?).map_err(|e| Error::Config(e.to_string()))?;
    let entries: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if entries.is_empty() {
        return Err(Error::Config(format!("{} lists no entries", path.display())));
    }
    Ok(entries)
}

/// One label map, or every map listed in a manifest (paths relative to it).
fn load_predictions(path: &Path) -> hyperseg_core::Result<Vec<LabelMap>> {
    let bytes = read_file(path)?;
    if bytes.starts_with(b"LBL1") {
        return Ok(vec![hyperseg_core::data::decode_labels(&bytes)?]);
    }
    let base = path.parent().unwrap_or(Path::new("."));
    manifest_entries(path)?
        .iter()
        .map(|e| read_labels(base.join(e)))
        .collect()
}
