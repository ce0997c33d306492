use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;
use serde::Serialize;

use dpsynth::calib::{
    estimate_psf, fit_distortion_coeffs, fit_psf_params, make_disk_pattern, make_square_pattern, DistortionGrids,
    GridSpec, PsfComponent, PsfFitGrids, DEFAULT_L1_WEIGHT,
};
use dpsynth::imgcore::io::{load_kernel_pfm, save_kernel_pfm};
use dpsynth::imgcore::{load_image, save_image, BitDepth};
use dpsynth::lensfx::{add_signal_noise, distort, undistort, NoiseConfig, NoiseKey, PRESET_COEFFS};
use dpsynth::metrics::EdgeLossConfig;
use dpsynth::pipeline::{self, GenerationConfig};
use dpsynth::psfbank::{build_bank, BankGrids};
use dpsynth::{Error, Result};

#[derive(Parser)]
#[command(name = "dpsynth", version, about = "Synthetic dual-pixel defocus data generator")]
struct Cli {
    /// TOML generation config; unset keys use the paper-synthia preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output path (file or directory, depending on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// 8 or 16.
    #[arg(long, global = true)]
    bit_depth: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the configured dataset.
    Generate,
    /// Score predictions against ground truth and write a CSV report.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    #[command(subcommand)]
    Psf(PsfCommand),
    #[command(subcommand)]
    Calib(CalibCommand),
    /// Apply (or invert) radial distortion to an image.
    Distort {
        #[arg(long)]
        input: PathBuf,
        /// Coefficients c1,c2,c3.
        #[arg(long, value_delimiter = ',', num_args = 3, allow_negative_numbers = true, conflicts_with = "preset")]
        coeffs: Option<Vec<f64>>,
        /// Preset camera number, 1 to 5.
        #[arg(long)]
        preset: Option<usize>,
        #[arg(long)]
        inverse: bool,
    },
    /// Add signal-dependent Gaussian noise to an image.
    Noise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        frame: u64,
        #[arg(long, default_value_t = 0)]
        view: u64,
    },
}

#[derive(Args)]
struct RadiusArg {
    /// Radii in pixels (overrides the config).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    radius: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum PsfCommand {
    /// Write every bank PSF as PFM kernels.
    Export(RadiusArg),
    /// Like export, plus an 8-bit mosaic.
    Gallery(RadiusArg),
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternKind {
    Disk,
    Square,
}

#[derive(Subcommand)]
enum CalibCommand {
    /// Render a disk or square calibration pattern.
    Pattern {
        #[arg(long, value_enum, default_value = "disk")]
        kind: PatternKind,
        #[arg(long, default_value_t = 4)]
        rows: usize,
        #[arg(long, default_value_t = 4)]
        cols: usize,
        #[arg(long, default_value_t = 31.0)]
        spacing: f64,
        /// Disk radius or square side, in pixels.
        #[arg(long, default_value_t = 0.5)]
        size: f64,
        #[arg(long, default_value_t = 160)]
        width: usize,
        #[arg(long, default_value_t = 160)]
        height: usize,
    },
    /// Estimate a PSF from a sharp/blurred pattern pair; writes a PFM kernel.
    EstimatePsf {
        #[arg(long)]
        sharp: PathBuf,
        #[arg(long)]
        blurred: PathBuf,
        #[arg(long, default_value_t = 31)]
        kernel_size: usize,
        #[arg(long, default_value_t = DEFAULT_L1_WEIGHT)]
        l1_weight: f64,
        #[arg(long, default_value_t = 5000)]
        max_iters: usize,
    },
    /// Find the model parameters closest to a measured PFM kernel.
    FitPsf {
        #[arg(long)]
        kernel: PathBuf,
        #[command(flatten)]
        radius: RadiusArg,
        #[arg(long, value_enum, default_value = "combined")]
        component: ComponentArg,
    },
    /// Find distortion coefficients mapping a pattern onto a capture.
    FitDistortion {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        pattern: PathBuf,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        c1: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        c2: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        c3: Option<Vec<f64>>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ComponentArg {
    Combined,
    Left,
    Right,
}

impl From<ComponentArg> for PsfComponent {
    fn from(c: ComponentArg) -> Self {
        match c {
            ComponentArg::Combined => PsfComponent::Combined,
            ComponentArg::Left => PsfComponent::Left,
            ComponentArg::Right => PsfComponent::Right,
        }
    }
}

/// Command outcome: success, or completed with some failed items.
enum Outcome {
    Done,
    Partial,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            error!("cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(pipeline::exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<GenerationConfig> {
    let mut cfg = match &cli.config {
        Some(p) => GenerationConfig::load(p)?,
        None => GenerationConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(b) = cli.bit_depth {
        cfg.bit_depth = BitDepth::from_bits(b).map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(cfg)
}

fn bit_depth(cli: &Cli, default: BitDepth) -> Result<BitDepth> {
    cli.bit_depth.map_or(Ok(default), BitDepth::from_bits)
}

fn out_path(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::InvalidParameter("--out is required for this command".into()))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Encode {
        path: "stdout".into(),
        message: e.to_string(),
    })?;
    println!("{text}");
    Ok(())
}

fn bank_grids(cli: &Cli, radius: &RadiusArg) -> Result<BankGrids> {
    let p = load_config(cli)?.psf;
    Ok(BankGrids {
        n: p.n,
        alpha: p.alpha,
        beta: p.beta,
        kappa: p.kappa,
        radius: radius.radius.clone().unwrap_or(p.radius),
    })
}

fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Generate => {
            let manifest = pipeline::generate(&load_config(cli)?)?;
            eprintln!("wrote {} quintets, {} failed", manifest.frames.len(), manifest.failed.len());
            Ok(if manifest.failed.is_empty() { Outcome::Done } else { Outcome::Partial })
        }
        Command::Evaluate { pred, gt } => {
            let report = pipeline::evaluate(pred, gt, &EdgeLossConfig::default())?;
            match &cli.out {
                Some(p) => {
                    let f = std::fs::File::create(p).map_err(|e| Error::io(p, e))?;
                    pipeline::write_report_csv(&report, f)?;
                }
                None => pipeline::write_report_csv(&report, std::io::stdout().lock())?,
            }
            Ok(Outcome::Done)
        }
        Command::Psf(PsfCommand::Export(r)) => {
            let bank = build_bank(&bank_grids(cli, r)?)?;
            let m = pipeline::export_bank(&bank, out_path(cli)?)?;
            eprintln!("exported {} PSFs", m.kernels.len());
            Ok(Outcome::Done)
        }
        Command::Psf(PsfCommand::Gallery(r)) => {
            let m = pipeline::psf_gallery(&bank_grids(cli, r)?, out_path(cli)?)?;
            eprintln!("exported {} PSFs", m.kernels.len());
            Ok(Outcome::Done)
        }
        Command::Calib(c) => run_calib(cli, c),
        Command::Distort { input, coeffs, preset, inverse } => {
            let c: [f64; 3] = match (coeffs, preset) {
                (Some(v), _) => [v[0], v[1], v[2]],
                (None, Some(i)) if (1..=PRESET_COEFFS.len()).contains(i) => PRESET_COEFFS[i - 1],
                (None, Some(i)) => return Err(Error::InvalidParameter(format!("preset {i} must be 1 to 5"))),
                (None, None) => return Err(Error::InvalidParameter("give --coeffs or --preset".into())),
            };
            let img = load_image(input, None)?;
            let warped = if *inverse { undistort(&img, &c)? } else { distort(&img, &c)? };
            if warped.fallback_pixels > 0 {
                log::warn!("{} pixels fell back to identity", warped.fallback_pixels);
            }
            save_image(&warped.image, out_path(cli)?, bit_depth(cli, BitDepth::Sixteen)?)?;
            Ok(Outcome::Done)
        }
        Command::Noise { input, sigma, frame, view } => {
            let img = load_image(input, None)?;
            let cfg = NoiseConfig { sigma: *sigma, seed: cli.seed.unwrap_or(0) };
            let noisy = add_signal_noise(&img, &cfg, NoiseKey { frame: *frame, view: *view })?;
            save_image(&noisy, out_path(cli)?, bit_depth(cli, BitDepth::Sixteen)?)?;
            Ok(Outcome::Done)
        }
    }
}

/// Preset values of one coefficient plus zero, ascending.
fn preset_axis(i: usize) -> Vec<f64> {
    let mut v: Vec<f64> = PRESET_COEFFS.iter().map(|c| c[i]).chain([0.0]).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn run_calib(cli: &Cli, cmd: &CalibCommand) -> Result<Outcome> {
    match cmd {
        CalibCommand::Pattern { kind, rows, cols, spacing, size, width, height } => {
            let grid = GridSpec { rows: *rows, cols: *cols, spacing: *spacing, width: *width, height: *height };
            let img = match kind {
                PatternKind::Disk => make_disk_pattern(&grid, *size)?,
                PatternKind::Square => make_square_pattern(&grid, *size)?,
            };
            save_image(&img, out_path(cli)?, bit_depth(cli, BitDepth::Sixteen)?)?;
        }
        CalibCommand::EstimatePsf { sharp, blurred, kernel_size, l1_weight, max_iters } => {
            let s = load_image(sharp, None)?.to_gray();
            let b = load_image(blurred, None)?.to_gray();
            let est = estimate_psf(&s, &b, *kernel_size, *l1_weight, *max_iters)?;
            save_kernel_pfm(&est.kernel, out_path(cli)?)?;
            #[derive(Serialize)]
            struct Summary {
                objective: f64,
                iterations: usize,
                converged: bool,
                mass: f64,
            }
            print_json(&Summary {
                objective: est.residual,
                iterations: est.iterations,
                converged: est.converged,
                mass: est.kernel.sum(),
            })?;
            if !est.converged {
                return Ok(Outcome::Partial);
            }
        }
        CalibCommand::FitPsf { kernel, radius, component } => {
            let k = load_kernel_pfm(kernel)?;
            let g = bank_grids(cli, radius)?;
            let grids = PsfFitGrids {
                n: g.n,
                alpha: g.alpha,
                beta: g.beta,
                kappa: vec![g.kappa],
                radius: g.radius,
                component: (*component).into(),
            };
            print_json(&fit_psf_params(&k, &grids)?)?;
        }
        CalibCommand::FitDistortion { reference, pattern, c1, c2, c3 } => {
            let r = load_image(reference, None)?.to_gray();
            let p = load_image(pattern, None)?.to_gray();
            let grids = DistortionGrids {
                c1: c1.clone().unwrap_or_else(|| preset_axis(0)),
                c2: c2.clone().unwrap_or_else(|| preset_axis(1)),
                c3: c3.clone().unwrap_or_else(|| preset_axis(2)),
            };
            print_json(&fit_distortion_coeffs(&r, &p, &grids)?)?;
        }
    }
    Ok(Outcome::Done)
}
