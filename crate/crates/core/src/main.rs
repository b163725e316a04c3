use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use cotrain_core::checkpoint::RunDir;
use cotrain_core::config::CoTrainConfig;
use cotrain_core::cotrain::{self, ExchangeLabels, RunOptions};
use cotrain_core::dataset::{load_dataset, save_dataset};
use cotrain_core::detector::{DetectorBackend, ExternalWorker};
use cotrain_core::eval::{audit_pseudo_labels, evaluate, EvalProtocol};
use cotrain_core::experiment::{
    cycle_curve, evaluate_final, results_csv, run_cell, write_report,
    ExperimentManifest, RunSetup,
};
use cotrain_core::files::{load_ground_truth, load_labels, save_json, save_labels};
use cotrain_core::simdet::{generate_world, split_labeled, SimBackend, SimParams, WorldConfig, WorldTruth};
use cotrain_core::{Error, Result};

/// Co-training for self-labeling 2D object boxes, with evaluation and simulation tools.
#[derive(Parser)]
#[command(name = "cotrain", version)]
struct Cli {
    /// Random seed; overrides the seed of the world and of the co-training configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output location (directory or file, depending on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Co-training configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run co-training: every cell of an experiment manifest, or one dataset.
    Run(RunArgs),
    /// Evaluate detections against ground truth.
    Eval(EvalArgs),
    /// Count false positives of a pseudo-label set and write corrected variants.
    Audit(AuditArgs),
    /// Final-detector mAP as a function of the stopping cycle of a finished run.
    CycleCurve(CurveArgs),
    /// Generate a simulated world: dataset manifest plus hidden truth.
    GenWorld(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Exchange {
    Sender,
    Receiver,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment manifest (JSON) describing simulated cells.
    manifest: Option<PathBuf>,
    /// Dataset manifest to co-train on instead of an experiment manifest.
    #[arg(long, conflicts_with = "manifest")]
    dataset: Option<PathBuf>,
    /// Hidden truth of a simulated world; selects the simulated backend.
    #[arg(long, requires = "dataset")]
    truth: Option<PathBuf>,
    /// External detector worker executable (also COTRAIN_WORKER).
    #[arg(long, requires = "dataset")]
    worker: Option<PathBuf>,
    /// Simulator parameters (JSON) for the simulated backend.
    #[arg(long)]
    simulator: Option<PathBuf>,
    /// Whose boxes a receiver keeps for the images it accepts.
    #[arg(long, value_enum, default_value = "sender")]
    exchange: Exchange,
    /// Stop after this many cycles in this invocation; rerun to resume.
    #[arg(long)]
    max_cycles: Option<u32>,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Ground truth: JSON map, simulator truth.json, or KITTI label directory.
    #[arg(long)]
    gt: PathBuf,
    /// Detections JSON.
    #[arg(long)]
    dets: PathBuf,
    /// Ground-truth boxes lower than this many pixels are don't-care.
    #[arg(long, default_value_t = 25.0)]
    min_height: f64,
    #[arg(long, default_value_t = 11)]
    recall_points: usize,
}

#[derive(clap::Args)]
struct AuditArgs {
    /// Pseudo-label set to audit.
    #[arg(long)]
    dpl: PathBuf,
    /// Ground truth: JSON map, simulator truth.json, or KITTI label directory.
    #[arg(long)]
    gt: PathBuf,
    /// Dataset manifest whose labeled boxes form the labeled pool.
    #[arg(long, conflicts_with = "labeled_boxes")]
    dataset: Option<PathBuf>,
    /// Size of the labeled pool, when no dataset is given.
    #[arg(long, default_value_t = 0)]
    labeled_boxes: usize,
}

#[derive(clap::Args)]
struct CurveArgs {
    /// Run directory with checkpoints and setup.json.
    run_dir: PathBuf,
}

#[derive(clap::Args)]
struct GenArgs {
    /// World configuration (JSON); defaults otherwise.
    #[arg(long)]
    world: Option<PathBuf>,
    /// Percentage of images that keep their labels.
    #[arg(long, default_value_t = 100.0)]
    p: f64,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: format!("at `{}`: {}", e.path(), e.inner()),
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn load_config(cli: &Cli, fallback: Option<&Path>) -> Result<CoTrainConfig> {
    let mut cfg = match cli.config.as_deref().or(fallback) {
        Some(p) => CoTrainConfig::load(p)?,
        None => CoTrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.rng_seed = s;
    }
    Ok(cfg)
}

fn usage_error(msg: &str) -> ! {
    Cli::command().error(clap::error::ErrorKind::MissingRequiredArgument, msg).exit()
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> Result<()> {
    let params: SimParams = match &args.simulator {
        Some(p) => read_json(p)?,
        None => SimParams::default(),
    };
    if let Some(manifest_path) = &args.manifest {
        let manifest = ExperimentManifest::load(manifest_path)?;
        let params = if args.simulator.is_some() { params } else { manifest.simulator.clone() };
        let cfg = load_config(cli, manifest.config.as_deref())?;
        let mut world = manifest.world.clone();
        if let Some(s) = cli.seed {
            world.seed = s;
        }
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
        create_dir(&out)?;
        let mut names = std::collections::BTreeSet::new();
        let mut results = Vec::new();
        for cell in &manifest.cells {
            if !names.insert(cell.name.as_str()) {
                return Err(Error::Config(format!("cell name `{}` used twice", cell.name)));
            }
            let dir = out.join(&cell.name);
            create_dir(&dir)?;
            info!("cell {}", cell.name);
            let r = run_cell(&world, &params, &cfg, cell, Some(&dir), true).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("cell `{}`: {m}", cell.name)),
                Error::Backend { view, message } => Error::Backend { view, message: format!("cell `{}`: {message}", cell.name) },
                other => other,
            })?;
            save_json(&dir.join("result.json"), &r)?;
            results.push(r);
        }
        save_json(&out.join("results.json"), &results)?;
        let csv = results_csv(&results);
        std::fs::write(out.join("results.csv"), &csv).map_err(|e| Error::Io { path: out.join("results.csv"), source: e })?;
        print!("{csv}");
        return Ok(());
    }
    let Some(dataset_path) = &args.dataset else {
        usage_error("`run` needs an experiment manifest or --dataset");
    };
    let data = load_dataset(dataset_path)?;
    let mut cfg = load_config(cli, None)?;
    cfg.view2_transform = *data.view2_transform();
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    create_dir(&out)?;
    let opts = RunOptions {
        exchange: match args.exchange {
            Exchange::Sender => ExchangeLabels::Sender,
            Exchange::Receiver => ExchangeLabels::Receiver,
        },
        protocol: EvalProtocol::default(),
        run_dir: Some(out.clone()),
        resume: true,
        max_cycles: args.max_cycles,
    };
    let worker = args.worker.clone().or_else(|| std::env::var_os("COTRAIN_WORKER").map(PathBuf::from));
    let (backend, truth): (Box<dyn DetectorBackend>, Option<Arc<WorldTruth>>) = match (&args.truth, worker) {
        (Some(truth_path), _) => {
            let truth = Arc::new(WorldTruth::load(truth_path)?);
            RunSetup::Files {
                dataset: dataset_path.clone(),
                truth: truth_path.clone(),
                simulator: params.clone(),
                seed: cfg.rng_seed,
            }
            .save(&out)?;
            (Box::new(SimBackend::new(params, truth.clone(), cfg.rng_seed)?), Some(truth))
        }
        (None, Some(exe)) => (Box::new(ExternalWorker::new(exe, out.join("scratch"))), None),
        (None, None) => usage_error("--dataset needs --truth (simulated backend) or a worker (--worker or COTRAIN_WORKER)"),
    };
    let outcome = cotrain::run(&*backend, &data, &cfg, &opts)?;
    if !outcome.stopped() {
        println!("paused after cycle {}; rerun to resume", outcome.state.k);
        return Ok(());
    }
    println!(
        "stopped after cycle {}: {} images, {} boxes in {}",
        outcome.state.k,
        outcome.pseudo_labels.len(),
        outcome.pseudo_labels.num_boxes(),
        RunDir::new(&out).final_labels_path().display()
    );
    if let Some(truth) = truth {
        let report = evaluate_final(&*backend, &data, Some(&outcome.pseudo_labels), &truth, &EvalProtocol::default())?;
        write_report(&out, "final_eval", &report)?;
        println!("final detector mAP {:.2}", report.map);
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let protocol = EvalProtocol { recall_points: args.recall_points, ..EvalProtocol::kitti(args.min_height) };
    protocol.validate()?;
    let gt = load_ground_truth(&args.gt)?;
    let dets = load_labels(&args.dets)?.entries;
    let report = evaluate(&dets, &gt, &protocol);
    if let Some(out) = &cli.out {
        write_report(out, "eval", &report)?;
    }
    print!("{}", report.to_json());
    Ok(())
}

fn cmd_audit(cli: &Cli, args: &AuditArgs) -> Result<()> {
    let pl = load_labels(&args.dpl)?;
    let gt = load_ground_truth(&args.gt)?;
    let pool = match &args.dataset {
        Some(p) => load_dataset(p)?.num_labeled_boxes(),
        None => args.labeled_boxes,
    };
    let report = audit_pseudo_labels(&pl, &gt, pool, &EvalProtocol::default())?;
    let out = match &cli.out {
        Some(o) => o.clone(),
        None => args.dpl.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    create_dir(&out)?;
    save_labels(&out.join("dpl_fp.json"), &report.fp_removed)?;
    save_labels(&out.join("dpl_bb.json"), &report.bb_replaced)?;
    save_labels(&out.join("dpl_fpbb.json"), &report.fp_removed_bb_replaced)?;
    save_json(&out.join("audit.json"), &report)?;
    println!(
        "{} false positives among {} pseudo boxes ({:.2}% of a pool of {})",
        report.num_fp,
        report.num_pseudo_boxes,
        report.fp_percent,
        report.labeled_pool_size + report.num_pseudo_boxes
    );
    Ok(())
}

fn cmd_cycle_curve(cli: &Cli, args: &CurveArgs) -> Result<()> {
    let setup = RunSetup::load(&args.run_dir)?;
    let (data, backend) = setup.materialize()?;
    let rd = RunDir::new(&args.run_dir);
    let mut history = Vec::new();
    for k in rd.checkpoints()? {
        match rd.load(k) {
            Ok(s) => history.push((k, s.fresh[0].clone())),
            Err(e) => warn!("skipping cycle {k}: {e}"),
        }
    }
    let curve = cycle_curve(&backend, &data, &backend.truth, &history, &EvalProtocol::default())?;
    let mut csv = String::from("k,map\n");
    for (k, m) in &curve {
        csv.push_str(&format!("{k},{m:.6}\n"));
    }
    let out = cli.out.clone().unwrap_or_else(|| args.run_dir.join("cycle_curve.csv"));
    std::fs::write(&out, &csv).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    print!("{csv}");
    Ok(())
}

fn cmd_gen_world(cli: &Cli, args: &GenArgs) -> Result<()> {
    let mut cfg: WorldConfig = match &args.world {
        Some(p) => read_json(p)?,
        None => WorldConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let world = generate_world(&cfg)?;
    let data = split_labeled(&world.dataset, args.p, cfg.seed)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("world"));
    create_dir(&out)?;
    save_dataset(&data, &out.join("dataset.json"))?;
    world.truth.save(&out.join("truth.json"))?;
    save_json(&out.join("world.json"), &cfg)?;
    println!(
        "{} images ({} labeled), {} test images in {}",
        data.images().len(),
        data.labeled_ids().len(),
        world.truth.test_images.len(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(&cli, a),
        Command::Eval(a) => cmd_eval(&cli, a),
        Command::Audit(a) => cmd_audit(&cli, a),
        Command::CycleCurve(a) => cmd_cycle_curve(&cli, a),
        Command::GenWorld(a) => cmd_gen_world(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
