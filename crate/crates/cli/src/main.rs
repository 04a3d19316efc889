mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use scenechange::changedetect::run_pipeline_with_models;
use scenechange::eval::{
    classify_components_with, format_table, regions_for_mode, ChangeKind, DEFAULT_INFLATION,
};
use scenechange::gmm::{load_model, save_model};
use scenechange::pointcloud::{
    crop_aabb, load_ply, save_ply, statistical_outlier_removal, voxel_downsample, PlyEncoding,
};
use scenechange::synth::{generate_pair, SceneSpec};
use scenechange::transport::{ground_distances, solve_transport};
use scenechange::{
    compute_metrics, fit, DetectionConfig, DetectionReport, GroundTruthRegion, PointCloud, Signature,
    StageTimings,
};
use serde::Serialize;

use config::{ModeArg, Settings, TuningArgs};

/// Exit status when changes were found.
const EXIT_CHANGED: u8 = 0;
const EXIT_UNCHANGED: u8 = 1;
const EXIT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(
    name = "scenechange",
    version,
    about = "Detect scene changes between two point-cloud scans"
)]
struct Cli {
    /// Cap on worker threads [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find the mixture components that differ between two scans.
    ///
    /// Writes report.json and labeled.ply to the output directory. Exits 0
    /// when changes were found, 1 when none were, 2 on error.
    Detect {
        t0: PathBuf,
        t: PathBuf,
        /// Pre-fitted model of the first scan (skips EM; needs --model-t)
        #[arg(long, requires = "model_t")]
        model_t0: Option<PathBuf>,
        /// Pre-fitted model of the second scan
        #[arg(long, requires = "model_t0")]
        model_t: Option<PathBuf>,
        #[command(flatten)]
        tuning: TuningArgs,
    },
    /// Fit a mixture to one filtered cloud and write model.json.
    Cluster {
        input: PathBuf,
        #[command(flatten)]
        tuning: TuningArgs,
    },
    /// Earth Mover's Distance between two model.json files.
    Emd {
        model_a: PathBuf,
        model_b: PathBuf,
        /// Also write the optimal flow matrix as JSON
        #[arg(long)]
        flow_out: Option<PathBuf>,
    },
    /// Score a detection report against ground-truth boxes; writes metrics.json.
    Eval {
        report: PathBuf,
        truth: PathBuf,
        /// Component-extent multiplier for the overlap test
        #[arg(long, default_value_t = DEFAULT_INFLATION)]
        inflation: f64,
        #[arg(long, default_value = ".")]
        output_dir: PathBuf,
    },
    /// Generate a synthetic scan pair: t0.ply, t.ply, truth.json and spec.json.
    Synth {
        /// Scene description (JSON); otherwise a random scene is built
        #[arg(long, conflicts_with_all = ["objects", "kind"])]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of changed boxes in a random scene
        #[arg(long, default_value_t = 1)]
        objects: usize,
        /// Whether the random boxes appear or disappear
        #[arg(long, value_enum, default_value = "appear")]
        kind: ModeArg,
        #[arg(long, default_value = ".")]
        output_dir: PathBuf,
    },
    /// Run detection once per initial component count and write sweep.csv.
    ///
    /// Columns: k, k_star_t0, k_star_t, data_loading_ms, pca_ms,
    /// gmm_clustering_ms, change_detection_ms, extracted.
    Sweep {
        t0: PathBuf,
        t: PathBuf,
        /// Comma-separated initial component counts
        #[arg(long = "k", value_delimiter = ',', required = true)]
        k_list: Vec<usize>,
        #[command(flatten)]
        tuning: TuningArgs,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(EXIT_ERROR)
        }
    }
}

/// The error chain joined by `: `, skipping causes whose text the previous
/// message already ends with.
fn describe(e: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !text.ends_with(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
    }
    text
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Detect {
            t0,
            t,
            model_t0,
            model_t,
            tuning,
        } => cmd_detect(&t0, &t, model_t0.zip(model_t), &tuning.resolve()?),
        Command::Cluster { input, tuning } => cmd_cluster(&input, &tuning.resolve()?),
        Command::Emd {
            model_a,
            model_b,
            flow_out,
        } => cmd_emd(&model_a, &model_b, flow_out.as_deref()),
        Command::Eval {
            report,
            truth,
            inflation,
            output_dir,
        } => cmd_eval(&report, &truth, inflation, &output_dir),
        Command::Synth {
            spec,
            seed,
            objects,
            kind,
            output_dir,
        } => cmd_synth(spec.as_deref(), seed, objects, kind, &output_dir),
        Command::Sweep {
            t0,
            t,
            k_list,
            tuning,
        } => cmd_sweep(&t0, &t, &k_list, &tuning.resolve()?),
    }
}

fn millis(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn read_cloud(path: &Path, settings: &Settings) -> Result<PointCloud> {
    let cloud = load_ply(path).with_context(|| format!("loading {}", path.display()))?;
    match &settings.crop {
        Some(c) => {
            Ok(crop_aabb(&cloud, &c.min, &c.max).with_context(|| format!("cropping {}", path.display()))?)
        }
        None => Ok(cloud),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn print_timings(t: &StageTimings) {
    println!("stage timings (ms):");
    for (label, ms) in [
        ("Data Loading", t.data_loading),
        ("PCA", t.pca),
        ("GMM Clustering (EM)", t.gmm_clustering),
        ("Change Detection (EMD)", t.change_detection),
    ] {
        println!("  {label:<24}{ms:>12.3}");
    }
}

fn detect_once(
    t0: &PointCloud,
    t: &PointCloud,
    prefit: Option<(PathBuf, PathBuf)>,
    settings: &Settings,
    loading_ms: f64,
) -> Result<scenechange::changedetect::PipelineOutput> {
    let start = Instant::now();
    let models = prefit
        .map(|(a, b)| -> Result<_> {
            Ok((
                load_model(&a).with_context(|| format!("loading {}", a.display()))?,
                load_model(&b).with_context(|| format!("loading {}", b.display()))?,
            ))
        })
        .transpose()?;
    let extra_loading = loading_ms + millis(start);
    let detection = DetectionConfig::with_mode(settings.require_mode()?);
    let mut out = run_pipeline_with_models(
        t0,
        t,
        models,
        &settings.em,
        &detection,
        &settings.filters,
        settings.pca,
    )?;
    out.report.stage_timings_ms.data_loading += extra_loading;
    Ok(out)
}

fn cmd_detect(t0: &Path, t: &Path, prefit: Option<(PathBuf, PathBuf)>, settings: &Settings) -> Result<u8> {
    settings.require_mode()?;
    let start = Instant::now();
    let (c0, c1) = (read_cloud(t0, settings)?, read_cloud(t, settings)?);
    let out = detect_once(&c0, &c1, prefit, settings, millis(start))?;
    let report = &out.report;

    ensure_dir(&settings.output_dir)?;
    write_json(&settings.output_dir.join("report.json"), report)?;
    let labeled = settings.output_dir.join("labeled.ply");
    save_ply(
        &out.cloud,
        Some(&out.labels),
        &labeled,
        PlyEncoding::BinaryLittleEndian,
    )
    .with_context(|| format!("writing {}", labeled.display()))?;

    println!(
        "K*_t0 = {}, K*_t = {}, EMD {:.6} -> {:.6}",
        report.k_star_t0,
        report.k_star_t,
        report.initial_emd,
        report.emd_trace.last().copied().unwrap_or(report.initial_emd)
    );
    println!(
        "{} changed component(s), {} of {} point(s) labeled changed",
        report.extracted.len(),
        report.changed_points,
        out.cloud.len()
    );
    print_timings(&report.stage_timings_ms);
    Ok(if report.extracted.is_empty() {
        EXIT_UNCHANGED
    } else {
        EXIT_CHANGED
    })
}

fn cmd_cluster(input: &Path, settings: &Settings) -> Result<u8> {
    if settings.pca {
        bail!("cluster does not support --pca");
    }
    let cloud = read_cloud(input, settings)?;
    let f = &settings.filters;
    let cloud = statistical_outlier_removal(&cloud, f.sor_neighbors, f.sor_stddev_mult)?.cloud;
    let cloud = voxel_downsample(&cloud, f.voxel_size)?;
    if cloud.is_empty() {
        bail!("{} has no points after filtering", input.display());
    }
    let (model, trace) = fit(&cloud, &settings.em)?;
    ensure_dir(&settings.output_dir)?;
    let path = settings.output_dir.join("model.json");
    save_model(&model, &path).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "{} points, K* = {} (description length {:.3})",
        cloud.len(),
        trace.k_star,
        trace.selected_cost
    );
    Ok(0)
}

fn cmd_emd(a: &Path, b: &Path, flow_out: Option<&Path>) -> Result<u8> {
    let load = |p: &Path| load_model(p).with_context(|| format!("loading {}", p.display()));
    let (ma, mb) = (load(a)?, load(b)?);
    if ma.dim != mb.dim {
        bail!("models have dimensions {} and {}", ma.dim, mb.dim);
    }
    let (sa, sb) = (Signature::from_model(&ma)?, Signature::from_model(&mb)?);
    let dist = ground_distances(&sa, &sb)?;
    let flow = solve_transport(&sa, &sb, &dist)?;
    let value = flow.work(&dist) / flow.total_flow;
    println!("{value:.12}");
    if let Some(path) = flow_out {
        write_json(path, &flow)?;
    }
    Ok(0)
}

#[derive(Serialize)]
struct EvalOutput {
    mode: scenechange::DetectionMode,
    counts: scenechange::ConfusionCounts,
    metrics: scenechange::Metrics,
}

fn cmd_eval(report: &Path, truth: &Path, inflation: f64, output_dir: &Path) -> Result<u8> {
    if !(inflation >= 0.0) {
        bail!("--inflation must be non-negative");
    }
    let report: DetectionReport = read_json(report)?;
    let truth: Vec<GroundTruthRegion> = read_json(truth)?;
    let relevant = regions_for_mode(&truth, report.mode);
    let change = report.change_model()?;
    let counts = classify_components_with(report.searched_model(), &change, &relevant, inflation)?;
    let metrics = compute_metrics(&counts);
    ensure_dir(output_dir)?;
    write_json(
        &output_dir.join("metrics.json"),
        &EvalOutput {
            mode: report.mode,
            counts,
            metrics,
        },
    )?;
    println!(
        "TP {}  FP {}  FN {}  TN {}",
        counts.tp, counts.fp, counts.fn_, counts.tn
    );
    print!(
        "{}",
        format_table(&[(format!("{:?}", report.mode).to_lowercase(), metrics)])
    );
    Ok(0)
}

fn cmd_synth(spec: Option<&Path>, seed: u64, objects: usize, kind: ModeArg, output_dir: &Path) -> Result<u8> {
    let spec: SceneSpec = match spec {
        Some(path) => read_json(path)?,
        None => {
            let kind = match kind {
                ModeArg::Appear => ChangeKind::Appearance,
                ModeArg::Disappear => ChangeKind::Disappearance,
            };
            SceneSpec::random_objects(seed, objects, kind)
        }
    };
    let pair = generate_pair(&spec)?;
    ensure_dir(output_dir)?;
    for (name, cloud) in [("t0.ply", &pair.cloud_t0), ("t.ply", &pair.cloud_t)] {
        let path = output_dir.join(name);
        save_ply(cloud, None, &path, PlyEncoding::BinaryLittleEndian)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    write_json(&output_dir.join("truth.json"), &pair.truth)?;
    write_json(&output_dir.join("spec.json"), &spec)?;
    println!(
        "t0: {} points, t: {} points, {} changed region(s)",
        pair.cloud_t0.len(),
        pair.cloud_t.len(),
        pair.truth.len()
    );
    Ok(0)
}

const SWEEP_HEADER: &str =
    "k,k_star_t0,k_star_t,data_loading_ms,pca_ms,gmm_clustering_ms,change_detection_ms,extracted";

fn cmd_sweep(t0: &Path, t: &Path, k_list: &[usize], settings: &Settings) -> Result<u8> {
    if k_list.is_empty() {
        bail!("--k needs at least one value");
    }
    settings.require_mode()?;
    let start = Instant::now();
    let (c0, c1) = (read_cloud(t0, settings)?, read_cloud(t, settings)?);
    let loading = millis(start);

    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    println!("{SWEEP_HEADER}");
    for &k in k_list {
        let mut run = settings.clone();
        run.em.k_init = k;
        run.em.k_min = run.em.k_min.min(k);
        let out = detect_once(&c0, &c1, None, &run, loading)?;
        let r = &out.report;
        let s = &r.stage_timings_ms;
        let row = format!(
            "{k},{},{},{:.3},{:.3},{:.3},{:.3},{}",
            r.k_star_t0,
            r.k_star_t,
            s.data_loading,
            s.pca,
            s.gmm_clustering,
            s.change_detection,
            r.extracted.len()
        );
        println!("{row}");
        csv.push_str(&row);
        csv.push('\n');
    }
    ensure_dir(&settings.output_dir)?;
    let path = settings.output_dir.join("sweep.csv");
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    Ok(0)
}
