//! The `pvreg` command line.
//!
//! Exit codes: 0 success, 1 a `check` row failed, 2 usage error, 3 file
//! I/O error, 4 malformed shape or JSON file, 5 invalid configuration or
//! spec, 6 numerical failure (non-finite state, degenerate shape).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::check::run_checks;
use crate::config::RegistrationConfig;
use crate::dissimilarity::{dissimilarity, Variant};
use crate::error::{Error, Result};
use crate::geometry::DiscreteShape;
use crate::io::{read_json, read_shape, write_atomic, write_json, write_shape, ShapeFormat};
use crate::registration::register;
use crate::synthetic::{generate, SynthSpec};

#[derive(Debug, Parser)]
#[command(name = "pvreg", version, about = "Partial-matching varifold registration of curves and meshes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a source shape onto a target shape.
    Register(RegisterArgs),
    /// Print the four dissimilarities between two shapes.
    Distance(DistanceArgs),
    /// Generate a full tree, a trimmed tree and a deformed trimmed tree.
    Synth(SynthArgs),
    /// Run the built-in verification suite.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Registration configuration (JSON); defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured variant.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Source shape (.vtk curves or .obj mesh).
    #[arg(long)]
    pub source: PathBuf,
    /// Target shape, same kind as the source.
    #[arg(long)]
    pub target: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct DistanceArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Print only this variant.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic spec (JSON); defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    /// Overrides both the tree seed and the deformation seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => 3,
        Error::Parse { .. } | Error::Json { .. } | Error::UnsupportedExtension(_) => 4,
        Error::InvalidConfig(_) | Error::InvalidSpec(_) | Error::SizeMismatch { .. } => 5,
        _ => 6,
    }
}

fn load_config(args: &ConfigArgs) -> Result<RegistrationConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            RegistrationConfig::from_json(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        }
        None => RegistrationConfig::default(),
    };
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_pair(source: &Path, target: &Path) -> Result<(DiscreteShape, DiscreteShape)> {
    let s = read_shape(source)?;
    let t = read_shape(target)?;
    if ShapeFormat::of(&s) != ShapeFormat::of(&t) {
        return Err(Error::InvalidConfig("source and target must both be curves or both be meshes".into()));
    }
    Ok((s, t))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn cmd_register(args: &RegisterArgs) -> Result<String> {
    let cfg = load_config(&args.config)?;
    let (source, target) = load_pair(&args.source, &args.target)?;
    let reg = register(&source, &target, &cfg)?;
    let r = &reg.result;

    create_dir(&args.output)?;
    let ext = ShapeFormat::of(&reg.deformed).extension();
    write_shape(&reg.deformed, &args.output.join(format!("deformed.{ext}")))?;
    let frames = args.output.join("frames");
    create_dir(&frames)?;
    for (k, frame) in reg.frames.iter().enumerate() {
        write_shape(frame, &frames.join(format!("frame_{k:03}.{ext}")))?;
    }
    write_json(r, &args.output.join("result.json"))?;

    let mut log = String::new();
    let _ = writeln!(log, "source {}", args.source.display());
    let _ = writeln!(log, "target {}", args.target.display());
    let _ = writeln!(
        log,
        "variant {} sigma_w {} sigma0 {} lambda {} epsilon {} time_steps {}",
        r.config.variant, r.config.sigma_w, r.config.sigma0, r.config.lambda, r.config.epsilon, r.config.time_steps
    );
    for (k, ((f, d), g)) in r.objective_history.iter().zip(&r.data_history).zip(&r.regularization_history).enumerate() {
        let _ = writeln!(log, "iter {k:4} objective {f:.9e} data {d:.9e} regularization {g:.9e}");
    }
    let _ = writeln!(
        log,
        "termination {:?} iterations {} grad_norm {:.3e} hamiltonian_drift {:.3e} wall_time {:.3}s",
        r.termination, r.iterations, r.final_grad_norm, r.hamiltonian_drift, r.wall_time_seconds
    );
    write_atomic(&args.output.join("register.log"), log.as_bytes())?;

    Ok(format!(
        "{}: objective {:.6e} -> {:.6e} in {} iterations ({:?})\n",
        r.config.variant,
        r.initial_objective(),
        r.final_objective(),
        r.iterations,
        r.termination
    ))
}

pub fn cmd_distance(args: &DistanceArgs) -> Result<String> {
    let cfg = load_config(&ConfigArgs {
        config: args.config.clone(),
        variant: None,
        seed: None,
    })?;
    let (source, target) = load_pair(&args.source, &args.target)?;
    let resolved = cfg.resolve(&target)?;
    let kernel = resolved.varifold_kernel()?;
    let variants: Vec<Variant> = match args.variant {
        Some(v) => vec![v],
        None => Variant::ALL.to_vec(),
    };
    let mut out = String::new();
    for v in variants {
        let value = dissimilarity(v, source.atoms(), target.atoms(), &kernel, resolved.epsilon)?;
        let _ = writeln!(out, "{:<18} {value:.17e}", v.name());
    }
    Ok(out)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<String> {
    let mut spec: SynthSpec = match &args.config {
        Some(path) => read_json(path)?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.tree.seed = seed;
        spec.deformation_seed = seed;
    }
    let case = generate(&spec)?;
    create_dir(&args.output)?;
    let files = [
        ("full.vtk", case.full),
        ("trimmed.vtk", case.trimmed),
        ("deformed.vtk", case.deformed),
    ];
    let mut out = String::new();
    for (name, curves) in files {
        let path = args.output.join(name);
        write_shape(&DiscreteShape::from_curves(curves)?, &path)?;
        let _ = writeln!(out, "wrote {}", path.display());
    }
    let path = args.output.join("ground_truth.json");
    write_json(&case.truth, &path)?;
    let _ = writeln!(out, "wrote {}", path.display());
    Ok(out)
}

/// Returns the table and whether every check passed.
pub fn cmd_check(args: &CheckArgs) -> Result<(String, bool)> {
    let cfg = load_config(&args.config)?;
    let report = run_checks(&cfg)?;
    Ok((report.table(), report.all_passed()))
}

pub fn run(cli: Cli) -> ExitCode {
    let outcome = match &cli.command {
        Command::Register(a) => cmd_register(a).map(|s| (s, true)),
        Command::Distance(a) => cmd_distance(a).map(|s| (s, true)),
        Command::Synth(a) => cmd_synth(a).map(|s| (s, true)),
        Command::Check(a) => cmd_check(a),
    };
    match outcome {
        Ok((text, ok)) => {
            print!("{text}");
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
