//! `uvcloth` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use uvcloth_core::body::{save_motion, Pose};
use uvcloth_core::clothsim::save_sequence;
use uvcloth_core::dataset::{generate_dataset, motion_of_kind, Dataset, DatasetConfig, Rig, Split};
use uvcloth_core::garment::Template;
use uvcloth_core::obj::{load_mesh, save_mesh};
use uvcloth_core::transfer::{bake_offsets, bind_garment, reconstruct_garment};
use uvcloth_core::uvbake::{bake_positions, Semantic, UVMap};
use uvcloth_net::checkpoint::load_checkpoint;
use uvcloth_net::infer::infer_sample;
use uvcloth_net::train::{load_split, save_log, train, EpochLog, Model, TrainConfig, TrainHooks};

use crate::error::{EvalError, Result};
use crate::evaluate::run_eval;
use crate::report::EvalReport;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "uvcloth", version, about = "Garment dynamics from body motion via UV offset maps")]
pub struct Cli {
    /// TOML config: dataset settings for bake, simulate and make-dataset,
    /// training settings for train.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the UV map resolution of the config.
    #[arg(long, global = true)]
    pub resolution: Option<usize>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bake rest-pose body position maps, rest garment offsets and bindings.
    Bake,
    /// Simulate the three garments through one action of the config.
    Simulate {
        /// Action name from the config or dataset manifest.
        #[arg(long)]
        action: String,
    },
    /// Generate a dataset: motions, cloth, maps, manifest and stats.
    MakeDataset,
    /// Train on the train split of a dataset.
    Train {
        /// Dataset directory written by make-dataset.
        #[arg(long)]
        data: PathBuf,
        /// Overrides the epoch count of the training config.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict offset maps (meters) for one frame of a dataset action.
    Infer {
        /// Model file written by train.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory written by make-dataset.
        #[arg(long)]
        data: PathBuf,
        /// Action name from the config or dataset manifest.
        #[arg(long)]
        action: String,
        /// Frame index; the first four frames of an action have no sample.
        #[arg(long)]
        frame: usize,
    },
    /// Rebuild a garment from offset maps on the posed body of one frame.
    Reconstruct {
        /// Dataset directory written by make-dataset.
        #[arg(long)]
        data: PathBuf,
        /// Directory with offset_<template>.uvm maps in meters.
        #[arg(long)]
        offsets: PathBuf,
        /// Action name from the config or dataset manifest.
        #[arg(long)]
        action: String,
        /// Frame index; the first four frames of an action have no sample.
        #[arg(long)]
        frame: usize,
        /// tops, bottoms or dress.
        #[arg(long)]
        template: String,
        /// Garment mesh to bind (OBJ, rest pose); the template garment if absent.
        #[arg(long)]
        garment: Option<PathBuf>,
    },
    /// Score a checkpoint against simulated cloth and the LBS baseline.
    Eval {
        /// Model file written by train.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory written by make-dataset.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Summarize a report CSV written by eval.
    Report {
        /// Report CSV; its hem table is read from beside it if present.
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn out_or(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| EvalError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| EvalError::io(path, e))
}

fn dataset_config(cli: &Cli) -> Result<DatasetConfig> {
    let mut config = match &cli.config {
        Some(path) => DatasetConfig::load(path)?,
        None => DatasetConfig::desk(cli.seed.unwrap_or(0)),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(r) = cli.resolution {
        config.resolution = r;
    }
    config.validate()?;
    Ok(config)
}

fn train_config(cli: &Cli, epochs: Option<usize>) -> Result<TrainConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
            TrainConfig::from_toml(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(e) = epochs {
        config.epochs = e;
    }
    config.validate()?;
    Ok(config)
}

fn check_resolution(cli: &Cli, actual: usize) -> Result<()> {
    match cli.resolution {
        Some(r) if r != actual => Err(EvalError::Mismatch(format!("--resolution {r} but the data is {actual}²"))),
        _ => Ok(()),
    }
}

fn template_file(dir: &Path, template: Template) -> PathBuf {
    dir.join(format!("offset_{}.uvm", template.name()))
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Bake => bake(cli),
        Command::Simulate { action } => simulate(cli, action),
        Command::MakeDataset => {
            let config = dataset_config(cli)?;
            let out = out_or(cli, "dataset");
            let manifest = generate_dataset(&config, &out)?;
            println!(
                "{} actions ({} skipped) written to {}",
                manifest.actions.len(),
                manifest.skipped.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train { data, epochs } => train_command(cli, data, *epochs),
        Command::Infer {
            checkpoint,
            data,
            action,
            frame,
        } => {
            let ds = Dataset::open(data)?;
            check_resolution(cli, ds.manifest.resolution)?;
            let (mut model, _) = load_checkpoint(checkpoint)?;
            let sample = ds.load_sample(action, *frame)?;
            let maps = infer_sample(&mut model, &sample, &ds.stats)?;
            let out = out_or(cli, "offsets");
            create_dir(&out)?;
            for (t, m) in Template::ALL.iter().zip(&maps) {
                m.save(template_file(&out, *t))?;
            }
            println!("offset maps for {action} frame {frame} written to {}", out.display());
            Ok(())
        }
        Command::Reconstruct {
            data,
            offsets,
            action,
            frame,
            template,
            garment,
        } => reconstruct(cli, data, offsets, action, *frame, template, garment.as_deref()),
        Command::Eval { checkpoint, data, split } => {
            let ds = Dataset::open(data)?;
            check_resolution(cli, ds.manifest.resolution)?;
            let (mut model, _) = load_checkpoint(checkpoint)?;
            let report = run_eval(&ds, &mut model, (*split).into())?;
            let out = out_or(cli, "report.csv");
            report.save(&out)?;
            print!("{}", report.summary());
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::Report { input } => {
            let report = EvalReport::load(input, Split::Test)?;
            let text = report.summary();
            match &cli.out {
                Some(path) => write_text(path, &text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
    }
}

fn bake(cli: &Cli) -> Result<()> {
    let config = dataset_config(cli)?;
    let rig = Rig::new(config.shape, &config.sim, config.resolution)?;
    let out = out_or(cli, "bake");
    create_dir(&out)?;
    let rest = Pose::identity(rig.body.skeleton().len());
    bake_positions(&rig.body_uv, &rig.body.pose(&rest)?)?.save(out.join("body_position.uvm"))?;
    bake_positions(&rig.proxy_uv, &rig.proxy.pose(&rest)?)?.save(out.join("proxy_position.uvm"))?;
    for t in Template::ALL {
        let i = t.index();
        let (body, uv) = rig.reference(t);
        let garment = &rig.garments[i].mesh;
        bake_offsets(&rig.transfers[i], body.template(), garment, uv)?.save(template_file(&out, t))?;
        let binding = bind_garment(garment, body.template(), uv)?;
        binding.save(out.join(format!("binding_{}.gbd", t.name())))?;
        save_mesh(garment, out.join(format!("garment_{}.obj", t.name())))?;
        println!(
            "{}: {} offset pixels, {:.1}% of vertices bound",
            t.name(),
            rig.transfers[i].hit_count(),
            100.0 * binding.bound_fraction()
        );
    }
    Ok(())
}

fn simulate(cli: &Cli, action: &str) -> Result<()> {
    let config = dataset_config(cli)?;
    let spec = config
        .actions
        .iter()
        .find(|a| a.name == action)
        .ok_or_else(|| EvalError::Invalid(format!("config has no action '{action}'")))?;
    let rig = Rig::new(config.shape, &config.sim, config.resolution)?;
    let motion = motion_of_kind(&spec.kind, spec.frames, config.fps, spec.intensity)?;
    let out = out_or(cli, "simulation");
    create_dir(&out)?;
    save_motion(&motion, out.join("motion.txt"))?;
    for t in Template::ALL {
        let i = t.index();
        let frames = uvcloth_core::clothsim::simulate_sequence(&rig.garments[i], &rig.body, &motion, &rig.params[i])?;
        save_sequence(&frames, out.join(format!("cloth_{}.csq", t.name())))?;
        if let Some(last) = frames.last() {
            save_mesh(last, out.join(format!("cloth_{}_last.obj", t.name())))?;
        }
    }
    println!("{} frames of {action} written to {}", motion.len(), out.display());
    Ok(())
}

fn train_command(cli: &Cli, data: &Path, epochs: Option<usize>) -> Result<()> {
    let config = train_config(cli, epochs)?;
    let ds = Dataset::open(data)?;
    check_resolution(cli, ds.manifest.resolution)?;
    let samples = load_split(&ds, Split::Train)?;
    let out = out_or(cli, "run");
    create_dir(&out)?;
    write_text(&out.join("train.toml"), &config.to_toml())?;
    let mut model = Model::new(&config, ds.manifest.resolution, &ds.manifest.stats_hash)?;
    let checkpoint = out.join("model.pxn");
    let log_path = out.join("train_log.csv");
    let mut report = |e: &EpochLog| log::info!("epoch {} D {:.4} G {:.4} L1 {:.5}", e.epoch, e.loss_d, e.loss_g, e.l1_all);
    let log = train(
        &mut model,
        &samples,
        TrainHooks {
            checkpoint: Some(&checkpoint),
            on_epoch: Some(&mut report),
        },
    )?;
    save_log(&log, &log_path)?;
    if let Some(last) = log.last() {
        println!("trained {} epochs on {} samples, final L1 {:.5}", last.epoch, samples.len(), last.l1_all);
    }
    println!("checkpoint {} and log {}", checkpoint.display(), log_path.display());
    Ok(())
}

fn reconstruct(cli: &Cli, data: &Path, offsets: &Path, action: &str, frame: usize, template: &str, garment: Option<&Path>) -> Result<()> {
    let t = Template::from_name(template)?;
    let ds = Dataset::open(data)?;
    check_resolution(cli, ds.manifest.resolution)?;
    let motion = ds.load_motion(action)?;
    let pose = motion
        .frames
        .get(frame)
        .ok_or_else(|| EvalError::Invalid(format!("{action} has {} frames, asked for {frame}", motion.len())))?;
    let rig = Rig::from_manifest(&ds.manifest, &Default::default())?;
    let mesh = match garment {
        Some(path) => load_mesh(path)?,
        None => rig.garments[t.index()].mesh.clone(),
    };
    let (body, uv) = rig.reference(t);
    let binding = bind_garment(&mesh, body.template(), uv)?;
    let map = UVMap::load(template_file(offsets, t))?;
    if map.semantic() != Semantic::Offset {
        return Err(EvalError::Invalid(format!("{} does not hold offsets in meters", template_file(offsets, t).display())));
    }
    let r = reconstruct_garment(&binding, &mesh, &body.pose(pose)?, &map)?;
    let out = out_or(cli, "garment.obj");
    save_mesh(&r.mesh, &out)?;
    println!(
        "{:.1}% of vertices bound, {} unresolved; written to {}",
        100.0 * binding.bound_fraction(),
        r.unresolved.len(),
        out.display()
    );
    Ok(())
}
