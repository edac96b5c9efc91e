use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use packsim_core::executive::{run_disassembly, write_metrics_csv, ExecutiveConfig, RunReport, RunSummary};
use packsim_core::imaging::{
    apply_condition, augment, expand_many, load_dataset, save_dataset, AugmentSpec, Condition, RasterImage,
    DEFAULT_VARIANTS,
};
use packsim_core::perception::{
    render_color, render_depth, write_detections_csv, Detector, OracleDetector, ScoreModel, ScoreParams,
};
use packsim_core::planner::PlannerParams;
use packsim_core::scene::{benchmark_document, benchmark_json, load_scene_document, ComponentCategory, SceneDocument};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Headless battery-pack disassembly simulator and imaging toolkit.
#[derive(Debug, Parser)]
#[command(name = "packsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the disassembly loop on a scene and write metrics.
    Run(RunArgs),
    /// Expand a labeled image dataset with random augmentations.
    Augment(AugmentArgs),
    /// Apply a pack-aging condition filter to one image.
    Condition(ConditionArgs),
    /// Write the built-in benchmark scene as JSON.
    Scene(SceneArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// `benchmark` or a scene JSON path.
    #[arg(long, default_value = "benchmark")]
    scene: String,
    /// Master seed; falls back to the scene file seed.
    #[arg(long, env = "ABATRE_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    planner: PlannerFlags,
    #[command(flatten)]
    detector: DetectorFlags,
    /// Extra planning attempts per move before a task fails.
    #[arg(long, default_value_t = 5)]
    max_replans: usize,
    /// Write before/after color snapshots, the initial depth map and
    /// detections.
    #[arg(long)]
    snapshots: bool,
    /// Condition filter applied to the color snapshots.
    #[arg(long, value_parser = parse_condition, requires = "snapshots")]
    condition: Option<Condition>,
    /// Filter strength in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    condition_strength: f64,
    /// Write every executed trajectory as CSV under `trajectories/`.
    #[arg(long)]
    trajectories: bool,
}

#[derive(Debug, Args)]
struct PlannerFlags {
    #[arg(long = "planner.i-max")]
    i_max: Option<usize>,
    #[arg(long = "planner.goal-bias")]
    goal_bias: Option<f64>,
    #[arg(long = "planner.steer-min")]
    steer_min: Option<f64>,
    #[arg(long = "planner.steer-max")]
    steer_max: Option<f64>,
    #[arg(long = "planner.neighbor-radius")]
    neighbor_radius: Option<f64>,
    #[arg(long = "planner.edge-resolution")]
    edge_resolution: Option<f64>,
    /// Base planner seed, mixed with the master seed.
    #[arg(long = "planner.seed")]
    planner_seed: Option<u64>,
}

impl PlannerFlags {
    fn apply(&self, p: &mut PlannerParams) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { p.$f = v; })* };
        }
        set!(i_max, goal_bias, steer_min, steer_max, neighbor_radius, edge_resolution);
        if let Some(s) = self.planner_seed {
            p.rng_seed = s;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DetectorKind {
    /// Ground-truth boxes with sampled confidence scores.
    Oracle,
}

#[derive(Debug, Args)]
struct DetectorFlags {
    #[arg(long = "detector", value_enum, default_value_t = DetectorKind::Oracle)]
    kind: DetectorKind,
    #[arg(long = "detector.bolt-mean")]
    bolt_mean: Option<f64>,
    #[arg(long = "detector.bolt-sigma")]
    bolt_sigma: Option<f64>,
    #[arg(long = "detector.cable-mean")]
    cable_mean: Option<f64>,
    #[arg(long = "detector.cable-sigma")]
    cable_sigma: Option<f64>,
    #[arg(long = "detector.module-mean")]
    module_mean: Option<f64>,
    #[arg(long = "detector.module-sigma")]
    module_sigma: Option<f64>,
}

impl DetectorFlags {
    fn score_model(&self) -> Result<ScoreModel> {
        let mut model = ScoreModel::default();
        let overrides = [
            (ComponentCategory::Bolt, self.bolt_mean, self.bolt_sigma),
            (ComponentCategory::Cable, self.cable_mean, self.cable_sigma),
            (ComponentCategory::Module, self.module_mean, self.module_sigma),
        ];
        for (cat, mean, sigma) in overrides {
            let p = model.params.entry(cat).or_insert(ScoreParams { mean: 1.0, sigma: 0.0 });
            if let Some(m) = mean {
                if !(0.0..=1.0).contains(&m) {
                    bail!("{cat} score mean {m} outside [0, 1]");
                }
                p.mean = m;
            }
            if let Some(s) = sigma {
                if !(s >= 0.0 && s.is_finite()) {
                    bail!("{cat} score sigma {s} must be non-negative");
                }
                p.sigma = s;
            }
        }
        Ok(model)
    }
}

#[derive(Debug, Args)]
struct AugmentArgs {
    /// Directory with `manifest.json` and its image/label pairs.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "augmented")]
    out: PathBuf,
    /// Variants per input image.
    #[arg(long, default_value_t = DEFAULT_VARIANTS, value_parser = parse_variants)]
    variants: usize,
    #[arg(long, env = "ABATRE_SEED", default_value_t = 0)]
    seed: u64,
    /// JSON augmentation spec applied to every variant instead of random
    /// ones; only the noise seed changes between variants.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConditionArgs {
    image: PathBuf,
    #[arg(value_parser = parse_condition)]
    condition: Condition,
    #[arg(long, env = "ABATRE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    strength: f64,
    /// Output image; defaults to `<stem>_<condition>.png` next to the input.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SceneArgs {
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_condition(s: &str) -> Result<Condition, String> {
    s.parse()
}

fn parse_variants(s: &str) -> Result<usize, String> {
    let n: usize = s.parse().map_err(|e| format!("{e}"))?;
    if n == 0 {
        return Err("must be at least 1".into());
    }
    Ok(n)
}

fn load_document(scene: &str) -> Result<SceneDocument> {
    if scene == "benchmark" {
        return Ok(benchmark_document());
    }
    load_scene_document(scene).with_context(|| format!("loading scene `{scene}`"))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn snapshot(doc: &SceneDocument, args: &RunArgs, seed: u64, name: &str) -> Result<()> {
    let world = &doc.world;
    let mut image = render_color(world, &world.camera);
    if let Some(condition) = args.condition {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        image = apply_condition(&image, condition, args.condition_strength, &mut rng);
    }
    let path = args.out.join(format!("{name}.png"));
    image.save(&path).with_context(|| format!("writing {}", path.display()))
}

fn write_trajectories(dir: &Path, report: &RunReport) -> Result<()> {
    let dir = dir.join("trajectories");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for (i, t) in report.trajectories.iter().enumerate() {
        let path = dir.join(format!("{i:03}_{}_{}.csv", t.target, t.segment));
        t.trajectory.write_csv(create_file(&path)?)?;
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let mut doc = load_document(&args.scene)?;
    args.planner.apply(&mut doc.planner);
    doc.planner.validate().map_err(anyhow::Error::msg).context("planner parameters")?;
    if !(0.0..=1.0).contains(&args.condition_strength) {
        bail!("condition strength {} outside [0, 1]", args.condition_strength);
    }
    let seed = args.seed.unwrap_or(doc.world.rng_seed);
    let model = args.detector.score_model()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    if args.snapshots {
        snapshot(&doc, args, seed, "before")?;
        render_depth(&doc.world, &doc.world.camera).save_pgm(args.out.join("depth.pgm"))?;
        let mut preview = OracleDetector::new(model.clone(), seed);
        let detections = preview.detect(&doc.world, &doc.world.camera);
        write_detections_csv(create_file(&args.out.join("detections.csv"))?, &detections)?;
    }

    let config = ExecutiveConfig {
        max_replans: args.max_replans,
        master_seed: seed,
        ..ExecutiveConfig::default()
    };
    let mut detector = match args.detector.kind {
        DetectorKind::Oracle => OracleDetector::new(model, seed),
    };
    let report = run_disassembly(&mut doc.world, &doc.arm, &doc.planner, &mut detector, &config);

    write_metrics_csv(create_file(&args.out.join("metrics.csv"))?, &report.records)?;
    let summary = serde_json::json!({
        "scene": args.scene,
        "seed": seed,
        "all_succeeded": report.all_succeeded(),
        "run": RunSummary::from_report(&report),
    });
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(args.out.join("summary.json"), text)?;
    if args.trajectories {
        write_trajectories(&args.out, &report)?;
    }
    if args.snapshots {
        snapshot(&doc, args, seed, "after")?;
    }

    for r in &report.records {
        let status = if r.success { "ok" } else { "FAILED" };
        let reason = r.failure_reason.as_deref().unwrap_or("");
        eprintln!("{:<12} {:<7} {:>8.3}s {status} {reason}", r.target, r.category, r.execution_time_s);
    }
    eprintln!(
        "{}/{} tasks succeeded, {} untouched, simulated time {:.3}s",
        report.successes(),
        report.records.len(),
        report.untouched.len(),
        report.total_time_s
    );
    Ok(if report.all_succeeded() && report.untouched.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_augment(args: &AugmentArgs) -> Result<ExitCode> {
    let inputs = load_dataset(&args.input).with_context(|| format!("reading dataset {}", args.input.display()))?;
    let images: Vec<_> = inputs.iter().map(|(_, l)| l.clone()).collect();
    let variants: Vec<Vec<_>> = match &args.spec {
        None => expand_many(&images, args.variants, args.seed),
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let spec: AugmentSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            spec.validate().map_err(anyhow::Error::msg)?;
            images
                .iter()
                .enumerate()
                .map(|(i, img)| {
                    (0..args.variants)
                        .map(|k| {
                            let s = AugmentSpec {
                                rng_seed: args.seed ^ ((i as u64) << 32) ^ k as u64,
                                ..spec.clone()
                            };
                            augment(img, &s).labeled
                        })
                        .collect()
                })
                .collect()
        }
    };
    let mut items = Vec::with_capacity(inputs.len() * args.variants);
    for ((stem, _), vs) in inputs.iter().zip(variants) {
        for (k, v) in vs.into_iter().enumerate() {
            items.push((format!("{stem}_aug{k}"), v));
        }
    }
    let manifest = save_dataset(&args.out, &items)?;
    eprintln!(
        "wrote {} images from {} inputs to {}",
        manifest.entries.len(),
        inputs.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_condition(args: &ConditionArgs) -> Result<ExitCode> {
    if !(0.0..=1.0).contains(&args.strength) {
        bail!("strength {} outside [0, 1]", args.strength);
    }
    let image = RasterImage::load(&args.image)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let out = apply_condition(&image, args.condition, args.strength, &mut rng);
    let path = args.out.clone().unwrap_or_else(|| {
        let stem = args.image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        args.image.with_file_name(format!("{stem}_{}.png", args.condition))
    });
    out.save(&path)?;
    eprintln!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_scene(args: &SceneArgs) -> Result<ExitCode> {
    let json = benchmark_json();
    match &args.out {
        Some(path) => fs::write(path, json).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Condition(a) => cmd_condition(a),
        Command::Scene(a) => cmd_scene(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
