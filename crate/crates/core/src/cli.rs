//! The `ssi` command-line tool. Every command resolves its options into a
//! [`Settings`] map (config file first, flags override), so any run can be
//! recorded as a [`RunManifest`] and replayed.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::benchmark::{run_benchmark, thread_budget, BenchmarkConfig};
use crate::classical::{cg_tv, chambolle_pock_tv, lucy_richardson, TvConfig};
use crate::config::Settings;
use crate::degrade::apply_noise;
use crate::error::{Result, SsiError};
use crate::io::{read_image, write_image};
use crate::manifest::{
    noise_from_settings, noise_to_settings, psf_from_settings, psf_to_settings, train_from_settings,
    train_to_settings, RunManifest,
};
use crate::metrics::{mutual_information, psnr, smi, ssim, DEFAULT_BINS};
use crate::neural::{load_checkpoint, save_checkpoint};
use crate::tensor::{convolve, log_spectrum, Boundary, ForwardModel};
use crate::trainer::{infer, train};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub const METRICS_HEADER: &str = "PSNR,SSIM,MI,SMI";

pub fn exit_code(err: &SsiError) -> i32 {
    match err {
        SsiError::Parameter(_) => EXIT_USAGE,
        SsiError::Io { .. } | SsiError::Format { .. } => EXIT_IO,
        SsiError::NonFiniteLoss { .. } | SsiError::State(_) => EXIT_NUMERIC,
    }
}

#[derive(Parser, Debug)]
#[command(name = "ssi", version, about = "Single-image self-supervised deconvolution and baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// key=value settings file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the resolved run manifest here
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct PsfArgs {
    #[arg(long)]
    psf_sigma: Option<f64>,
    #[arg(long)]
    psf_radius: Option<usize>,
}

impl PsfArgs {
    fn apply(&self, s: &mut Settings) {
        s.set_opt("psf_sigma", self.psf_sigma);
        s.set_opt("psf_radius", self.psf_radius);
    }
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    l1: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    /// zero, random or interpolate
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    density_start: Option<f64>,
    #[arg(long)]
    density_end: Option<f64>,
    #[arg(long)]
    noise_std0: Option<f64>,
    #[arg(long)]
    noise_decay: Option<f64>,
    /// Forward-model boundary during training: circular or reflect
    #[arg(long)]
    train_boundary: Option<String>,
}

impl TrainArgs {
    fn apply(&self, s: &mut Settings) {
        s.set_opt("epochs", self.epochs);
        s.set_opt("batches", self.batches);
        s.set_opt("depth", self.depth);
        s.set_opt("base_channels", self.base_channels);
        s.set_opt("lr", self.lr);
        s.set_opt("l1", self.l1);
        s.set_opt("l2", self.l2);
        s.set_opt("strategy", self.strategy.as_ref());
        s.set_opt("density_start", self.density_start);
        s.set_opt("density_end", self.density_end);
        s.set_opt("noise_std0", self.noise_std0);
        s.set_opt("noise_decay", self.noise_decay);
        s.set_opt("train_boundary", self.train_boundary.as_ref());
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Blur, add noise and quantize a clean image
    Degrade {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        pepper: Option<f64>,
        #[arg(long)]
        bits: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// reflect or circular
        #[arg(long)]
        boundary: Option<String>,
        /// Bit depth of PNG/PGM output
        #[arg(long)]
        out_bits: Option<u8>,
        #[command(flatten)]
        psf: PsfArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Train a deconvolution network on a single observation
    Train {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Loss log; defaults to <checkpoint>.loss.csv
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Train on the unmasked self-consistency loss instead
        #[arg(long)]
        no_mask: bool,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        psf: PsfArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Apply a trained network
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        out_bits: Option<u8>,
        #[command(flatten)]
        common: Common,
    },
    /// Classical deconvolution: lr, cp or cg
    Deconv {
        method: Option<String>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        eps_tv: Option<f64>,
        #[arg(long)]
        boundary: Option<String>,
        #[arg(long)]
        out_bits: Option<u8>,
        #[command(flatten)]
        psf: PsfArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Score an image against a reference
    Metrics {
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
        /// Write the CSV here instead of stdout
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the centered log-magnitude spectrum
    Spectrum {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        out_bits: Option<u8>,
        #[command(flatten)]
        common: Common,
    },
    /// Run every method on a corpus of clean images
    Benchmark {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Comma-separated training seeds; the best by SSIM is reported
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        noise_seed: Option<u64>,
        /// Comma-separated TV weights
        #[arg(long)]
        lambdas: Option<String>,
        #[arg(long)]
        cp_iters: Option<usize>,
        #[arg(long)]
        cg_iters: Option<usize>,
        /// Skip the TV baselines
        #[arg(long)]
        no_tv: bool,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        psf: PsfArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Re-run a recorded manifest
    Replay { manifest: PathBuf },
}

fn base_settings(common: &Common) -> Result<Settings> {
    match &common.config {
        Some(p) => Settings::load(p),
        None => Ok(Settings::new()),
    }
}

fn set_path(s: &mut Settings, key: &str, p: &Option<PathBuf>) {
    s.set_opt(key, p.as_ref().map(|p| p.display()));
}

fn to_settings(cmd: &Command) -> Result<(String, Settings, Option<PathBuf>)> {
    let (name, common, mut s) = match cmd {
        Command::Degrade { common, .. } => ("degrade", common, base_settings(common)?),
        Command::Train { common, .. } => ("train", common, base_settings(common)?),
        Command::Infer { common, .. } => ("infer", common, base_settings(common)?),
        Command::Deconv { common, .. } => ("deconv", common, base_settings(common)?),
        Command::Metrics { common, .. } => ("metrics", common, base_settings(common)?),
        Command::Spectrum { common, .. } => ("spectrum", common, base_settings(common)?),
        Command::Benchmark { common, .. } => ("benchmark", common, base_settings(common)?),
        Command::Replay { .. } => unreachable!("replay carries its own settings"),
    };
    match cmd {
        Command::Degrade { input, output, alpha, sigma, pepper, bits, seed, boundary, out_bits, psf, .. } => {
            set_path(&mut s, "input", input);
            set_path(&mut s, "output", output);
            s.set_opt("alpha", *alpha);
            s.set_opt("sigma", *sigma);
            s.set_opt("pepper", *pepper);
            s.set_opt("bits", *bits);
            s.set_opt("seed", *seed);
            s.set_opt("boundary", boundary.as_ref());
            s.set_opt("out_bits", *out_bits);
            psf.apply(&mut s);
        }
        Command::Train { input, checkpoint, loss_csv, seed, no_mask, train, psf, .. } => {
            set_path(&mut s, "input", input);
            set_path(&mut s, "checkpoint", checkpoint);
            set_path(&mut s, "loss_csv", loss_csv);
            s.set_opt("seed", *seed);
            if *no_mask {
                s.set("no_mask", true);
            }
            train.apply(&mut s);
            psf.apply(&mut s);
        }
        Command::Infer { checkpoint, input, output, out_bits, .. } => {
            set_path(&mut s, "checkpoint", checkpoint);
            set_path(&mut s, "input", input);
            set_path(&mut s, "output", output);
            s.set_opt("out_bits", *out_bits);
        }
        Command::Deconv { method, input, output, iters, lambda, eps_tv, boundary, out_bits, psf, .. } => {
            s.set_opt("method", method.as_ref());
            set_path(&mut s, "input", input);
            set_path(&mut s, "output", output);
            s.set_opt("iters", *iters);
            s.set_opt("lambda", *lambda);
            s.set_opt("eps_tv", *eps_tv);
            s.set_opt("boundary", boundary.as_ref());
            s.set_opt("out_bits", *out_bits);
            psf.apply(&mut s);
        }
        Command::Metrics { reference, input, bins, output, .. } => {
            set_path(&mut s, "reference", reference);
            set_path(&mut s, "input", input);
            s.set_opt("bins", *bins);
            set_path(&mut s, "output", output);
        }
        Command::Spectrum { input, output, out_bits, .. } => {
            set_path(&mut s, "input", input);
            set_path(&mut s, "output", output);
            s.set_opt("out_bits", *out_bits);
        }
        Command::Benchmark {
            corpus, out_dir, seeds, noise_seed, lambdas, cp_iters, cg_iters, no_tv, train, psf, ..
        } => {
            set_path(&mut s, "corpus", corpus);
            set_path(&mut s, "out_dir", out_dir);
            s.set_opt("seeds", seeds.as_ref());
            s.set_opt("noise_seed", *noise_seed);
            s.set_opt("lambdas", lambdas.as_ref());
            s.set_opt("cp_iters", *cp_iters);
            s.set_opt("cg_iters", *cg_iters);
            if *no_tv {
                s.set("tv", false);
            }
            train.apply(&mut s);
            psf.apply(&mut s);
        }
        Command::Replay { .. } => unreachable!(),
    }
    Ok((name.to_string(), s, common.manifest.clone()))
}

fn path(s: &Settings, key: &str) -> Result<PathBuf> {
    s.require::<PathBuf>(key).map_err(|_| SsiError::param(format!("--{} is required", key.replace('_', "-"))))
}

fn out_bits(s: &Settings) -> Result<u8> {
    s.get_or("out_bits", 16u8)
}

fn check_known(s: &Settings, known: &[&[&str]]) -> Result<()> {
    for k in s.keys() {
        if !known.iter().any(|g| g.contains(&k)) {
            return Err(SsiError::param(format!("unknown setting {k:?}")));
        }
    }
    Ok(())
}

const PSF_KEYS: [&str; 2] = ["psf_sigma", "psf_radius"];
const NOISE_KEYS: [&str; 4] = ["alpha", "sigma", "pepper", "bits"];
const TRAIN_KEYS: [&str; 15] = [
    "epochs",
    "batches",
    "depth",
    "base_channels",
    "lr",
    "l1",
    "l2",
    "strategy",
    "density_start",
    "density_end",
    "noise_std0",
    "noise_decay",
    "lr_step_factor",
    "train_boundary",
    "no_mask",
];

/// Run `command` with fully merged settings; returns the resolved settings to record.
pub fn execute(command: &str, s: &Settings) -> Result<Settings> {
    let mut r = Settings::new();
    match command {
        "degrade" => {
            check_known(s, &[&["input", "output", "seed", "boundary", "out_bits"], &NOISE_KEYS, &PSF_KEYS])?;
            let (input, output) = (path(s, "input")?, path(s, "output")?);
            let noise = noise_from_settings(s, "seed")?;
            let psf = psf_from_settings(s)?;
            let boundary: Boundary = s.get_or("boundary", Boundary::Reflect)?;
            let bits = out_bits(s)?;
            let x = read_image(&input)?;
            let y = apply_noise(&convolve(&x, &psf.kernel()?, boundary)?, &noise)?;
            write_image(&output, &y, bits)?;
            r.set("input", input.display());
            r.set("output", output.display());
            noise_to_settings(&noise, "seed", &mut r);
            psf_to_settings(&psf, &mut r);
            r.set("boundary", boundary);
            r.set("out_bits", bits);
        }
        "train" => {
            check_known(s, &[&["input", "checkpoint", "loss_csv", "seed"], &TRAIN_KEYS, &PSF_KEYS])?;
            let (input, ckpt) = (path(s, "input")?, path(s, "checkpoint")?);
            let loss_csv = s.get::<PathBuf>("loss_csv")?.unwrap_or_else(|| suffixed(&ckpt, ".loss.csv"));
            let seed: u64 = s.get_or("seed", 0)?;
            let cfg = train_from_settings(s)?.with_seed(seed);
            let psf = psf_from_settings(s)?;
            let y = read_image(&input)?;
            let out = train(&y, &psf.kernel()?, &cfg)?;
            save_checkpoint(&out.params, &ckpt)?;
            let mut buf = Vec::new();
            out.log.write_csv(&mut buf).map_err(|e| SsiError::io(&loss_csv, e))?;
            std::fs::write(&loss_csv, buf).map_err(|e| SsiError::io(&loss_csv, e))?;
            info!("wrote {} and {}", ckpt.display(), loss_csv.display());
            r.set("input", input.display());
            r.set("checkpoint", ckpt.display());
            r.set("loss_csv", loss_csv.display());
            r.set("seed", seed);
            train_to_settings(&cfg, &mut r);
            psf_to_settings(&psf, &mut r);
        }
        "infer" => {
            check_known(s, &[&["checkpoint", "input", "output", "out_bits"]])?;
            let (ckpt, input, output) = (path(s, "checkpoint")?, path(s, "input")?, path(s, "output")?);
            if !ckpt.exists() {
                return Err(SsiError::param(format!("checkpoint {} does not exist", ckpt.display())));
            }
            let bits = out_bits(s)?;
            let params = load_checkpoint(&ckpt)?;
            write_image(&output, &infer(&params, &read_image(&input)?)?, bits)?;
            r.set("checkpoint", ckpt.display());
            r.set("input", input.display());
            r.set("output", output.display());
            r.set("out_bits", bits);
        }
        "deconv" => {
            check_known(
                s,
                &[&["method", "input", "output", "iters", "lambda", "eps_tv", "boundary", "out_bits"], &PSF_KEYS],
            )?;
            let method: String = s.require("method").map_err(|_| SsiError::param("deconv needs a method: lr, cp or cg"))?;
            let (input, output) = (path(s, "input")?, path(s, "output")?);
            let psf = psf_from_settings(s)?;
            let boundary: Boundary = s.get_or("boundary", Boundary::Reflect)?;
            let model = ForwardModel::new(psf.kernel()?, boundary);
            let d = TvConfig::default();
            let lambda: f64 = s.get_or("lambda", d.lambda())?;
            let eps_tv: f64 = s.get_or("eps_tv", d.eps_tv())?;
            let bits = out_bits(s)?;
            let y = read_image(&input)?;
            let (x, iters) = match method.as_str() {
                "lr" => {
                    let iters = s.get_or("iters", 10usize)?;
                    (lucy_richardson(&y, &model, iters)?, iters)
                }
                "cp" => {
                    let iters = s.get_or("iters", d.iters())?;
                    (chambolle_pock_tv(&y, &model, &TvConfig::new(lambda, iters, eps_tv)?)?, iters)
                }
                "cg" => {
                    let iters = s.get_or("iters", 200usize)?;
                    let out = cg_tv(&y, &model, &TvConfig::new(lambda, iters, eps_tv)?)?;
                    if out.line_search_failed {
                        eprintln!("warning: line search failed after {} iterations", out.iterations);
                    }
                    (out.image, iters)
                }
                other => return Err(SsiError::param(format!("unknown method {other:?}; expected lr, cp or cg"))),
            };
            write_image(&output, &x, bits)?;
            r.set("method", &method);
            r.set("input", input.display());
            r.set("output", output.display());
            r.set("iters", iters);
            if method != "lr" {
                r.set("lambda", lambda);
                r.set("eps_tv", eps_tv);
            }
            r.set("boundary", boundary);
            r.set("out_bits", bits);
            psf_to_settings(&psf, &mut r);
        }
        "metrics" => {
            check_known(s, &[&["reference", "input", "bins", "output"]])?;
            let (reference, input) = (path(s, "reference")?, path(s, "input")?);
            let bins: usize = s.get_or("bins", DEFAULT_BINS)?;
            let (a, b) = (read_image(&reference)?, read_image(&input)?);
            let b = b.clamp(0.0, 1.0);
            let line = format!(
                "{METRICS_HEADER}\n{},{},{},{}\n",
                psnr(&a, &b, 1.0)?,
                ssim(&a, &b)?,
                mutual_information(&a, &b, bins)?,
                smi(&a, &b, bins)?
            );
            r.set("reference", reference.display());
            r.set("input", input.display());
            r.set("bins", bins);
            match s.get::<PathBuf>("output")? {
                Some(p) => {
                    std::fs::write(&p, line).map_err(|e| SsiError::io(&p, e))?;
                    r.set("output", p.display());
                }
                None => print!("{line}"),
            }
        }
        "spectrum" => {
            check_known(s, &[&["input", "output", "out_bits"]])?;
            let (input, output) = (path(s, "input")?, path(s, "output")?);
            let bits = out_bits(s)?;
            write_image(&output, &log_spectrum(&read_image(&input)?), bits)?;
            r.set("input", input.display());
            r.set("output", output.display());
            r.set("out_bits", bits);
        }
        "benchmark" => {
            let cfg = BenchmarkConfig::from_settings(s)?;
            let all = cfg.to_settings();
            check_known(s, &[&all.keys().collect::<Vec<_>>()])?;
            let report = run_benchmark(&cfg, thread_budget())?;
            let mut out = Vec::new();
            report.write_summary(&mut out).map_err(|e| SsiError::io(&cfg.out_dir, e))?;
            print!("{}", String::from_utf8_lossy(&out));
            r = cfg.to_settings();
        }
        other => return Err(SsiError::param(format!("unknown command {other:?}"))),
    }
    Ok(r)
}

fn suffixed(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn default_manifest(command: &str, resolved: &Settings) -> Option<PathBuf> {
    match command {
        "degrade" => resolved.raw("output").map(|o| suffixed(Path::new(o), ".manifest")),
        "train" => resolved.raw("checkpoint").map(|o| suffixed(Path::new(o), ".manifest")),
        _ => None,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let (command, settings, manifest) = match &cli.command {
        Command::Replay { manifest } => {
            let m = RunManifest::load(manifest)?;
            (m.command, m.settings, None)
        }
        cmd => to_settings(cmd)?,
    };
    let resolved = execute(&command, &settings)?;
    // Benchmark writes its own manifest into the output directory.
    if let Some(p) = manifest.or_else(|| default_manifest(&command, &resolved)) {
        RunManifest::new(&command, resolved).save(p)?;
    }
    Ok(())
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
