//! Corpus benchmark: degrade each clean image, restore it with every method,
//! score against the clean image and write per-image, summary and timing CSVs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;

use crate::classical::{cg_tv, chambolle_pock_tv, lucy_richardson, TvConfig};
use crate::config::{join_list, Settings};
use crate::degrade::{apply_noise, NoiseSpec};
use crate::error::{Result, SsiError};
use crate::io::{read_image, write_image};
use crate::manifest::{
    noise_from_settings, noise_to_settings, psf_from_settings, psf_to_settings, train_from_settings,
    train_to_settings, PsfSpec, RunManifest,
};
use crate::metrics::MetricReport;
use crate::tensor::{convolve, Boundary, ForwardModel, Image2D};
use crate::trainer::{infer, train, TrainConfig};

pub const PER_IMAGE_HEADER: &str = "image,method,setting,PSNR,SSIM,MI,SMI";
pub const SUMMARY_HEADER: &str = "method,PSNR,SSIM,MI,SMI";
pub const TIMING_HEADER: &str = "method,training time (s),inference time (s)";

pub const BLURRY: &str = "blurry";
pub const BLURRY_NOISY: &str = "blurry&noisy";
pub const CP_TV: &str = "CP-TV";
pub const CG_TV: &str = "CG-TV";
pub const SSI: &str = "SSI";
pub const SSI_NO_MASK: &str = "SSI-no-mask";

pub fn lr_method(iters: usize) -> String {
    format!("LR{iters}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub corpus: PathBuf,
    pub out_dir: PathBuf,
    /// Noise for image `i` (in sorted file order) uses seed `noise.seed + i`.
    pub noise: NoiseSpec,
    pub psf: PsfSpec,
    pub degrade_boundary: Boundary,
    pub lr_iters: Vec<usize>,
    pub tv: bool,
    pub lambdas: Vec<f64>,
    pub cp_iters: usize,
    pub cg_iters: usize,
    pub eps_tv: f64,
    pub classical_boundary: Boundary,
    /// Template; `seed` and `no_mask` are set per run.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub no_mask_ablation: bool,
    pub write_images: bool,
}

impl BenchmarkConfig {
    pub fn new(corpus: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        BenchmarkConfig {
            corpus: corpus.into(),
            out_dir: out_dir.into(),
            noise: NoiseSpec::default(),
            psf: PsfSpec::default(),
            degrade_boundary: Boundary::Reflect,
            lr_iters: vec![5, 10, 20],
            tv: true,
            lambdas: vec![0.003, 0.01, 0.03],
            cp_iters: 300,
            cg_iters: 200,
            eps_tv: 1e-3,
            classical_boundary: Boundary::Reflect,
            train: TrainConfig::default(),
            seeds: vec![0],
            no_mask_ablation: true,
            write_images: true,
        }
    }

    pub fn from_settings(s: &Settings) -> Result<Self> {
        let d = BenchmarkConfig::new(s.require::<PathBuf>("corpus")?, s.require::<PathBuf>("out_dir")?);
        let cfg = BenchmarkConfig {
            noise: noise_from_settings(s, "noise_seed")?,
            psf: psf_from_settings(s)?,
            degrade_boundary: s.get_or("degrade_boundary", d.degrade_boundary)?,
            lr_iters: s.get_list_or("lr_iters", d.lr_iters.clone())?,
            tv: s.get_or("tv", d.tv)?,
            lambdas: s.get_list_or("lambdas", d.lambdas.clone())?,
            cp_iters: s.get_or("cp_iters", d.cp_iters)?,
            cg_iters: s.get_or("cg_iters", d.cg_iters)?,
            eps_tv: s.get_or("eps_tv", d.eps_tv)?,
            classical_boundary: s.get_or("classical_boundary", d.classical_boundary)?,
            train: train_from_settings(s)?,
            seeds: s.get_list_or("seeds", d.seeds.clone())?,
            no_mask_ablation: s.get_or("no_mask_ablation", d.no_mask_ablation)?,
            write_images: s.get_or("write_images", d.write_images)?,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::new();
        s.set("corpus", self.corpus.display());
        s.set("out_dir", self.out_dir.display());
        noise_to_settings(&self.noise, "noise_seed", &mut s);
        psf_to_settings(&self.psf, &mut s);
        s.set("degrade_boundary", self.degrade_boundary);
        s.set("lr_iters", join_list(&self.lr_iters));
        s.set("tv", self.tv);
        s.set("lambdas", join_list(&self.lambdas));
        s.set("cp_iters", self.cp_iters);
        s.set("cg_iters", self.cg_iters);
        s.set("eps_tv", self.eps_tv);
        s.set("classical_boundary", self.classical_boundary);
        train_to_settings(&self.train, &mut s);
        s.set("seeds", join_list(&self.seeds));
        s.set("no_mask_ablation", self.no_mask_ablation);
        s.set("write_images", self.write_images);
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.psf.kernel()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(SsiError::param("at least one training seed is required"));
        }
        if self.tv {
            if self.lambdas.is_empty() {
                return Err(SsiError::param("at least one TV lambda is required"));
            }
            for &l in &self.lambdas {
                TvConfig::new(l, self.cp_iters, self.eps_tv)?;
                TvConfig::new(l, self.cg_iters, self.eps_tv)?;
            }
        }
        Ok(())
    }
}

/// One restoration attempt.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub method: String,
    pub setting: String,
    pub report: MetricReport,
    pub train_seconds: f64,
    pub infer_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct ImageResult {
    pub image: String,
    /// Every attempt, including all seeds and lambdas.
    pub candidates: Vec<Candidate>,
    /// Per method, the candidate with the highest SSIM (first one on ties).
    pub chosen: Vec<Candidate>,
}

impl ImageResult {
    pub fn chosen(&self, method: &str) -> Option<&Candidate> {
        self.chosen.iter().find(|c| c.method == method)
    }

    /// Best value of `metric` over all candidates of `method`.
    pub fn best_of(&self, method: &str, metric: impl Fn(&MetricReport) -> f64) -> Option<f64> {
        self.candidates.iter().filter(|c| c.method == method).map(|c| metric(&c.report)).reduce(f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkReport {
    pub images: Vec<ImageResult>,
    /// Method order as first encountered.
    pub methods: Vec<String>,
}

impl BenchmarkReport {
    pub fn average(&self, method: &str) -> Option<MetricReport> {
        let rows: Vec<&MetricReport> =
            self.images.iter().filter_map(|r| r.chosen(method)).map(|c| &c.report).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let sum = |f: fn(&MetricReport) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        Some(MetricReport { psnr: sum(|r| r.psnr), ssim: sum(|r| r.ssim), mi: sum(|r| r.mi), smi: sum(|r| r.smi) })
    }

    pub fn average_times(&self, method: &str) -> Option<(f64, f64)> {
        let rows: Vec<&Candidate> = self.images.iter().filter_map(|r| r.chosen(method)).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some((
            rows.iter().map(|c| c.train_seconds).sum::<f64>() / n,
            rows.iter().map(|c| c.infer_seconds).sum::<f64>() / n,
        ))
    }

    pub fn write_per_image(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{PER_IMAGE_HEADER}")?;
        for img in &self.images {
            for c in &img.chosen {
                let r = &c.report;
                writeln!(out, "{},{},{},{},{},{},{}", img.image, c.method, c.setting, r.psnr, r.ssim, r.mi, r.smi)?;
            }
        }
        Ok(())
    }

    pub fn write_summary(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{SUMMARY_HEADER}")?;
        for m in &self.methods {
            if let Some(r) = self.average(m) {
                writeln!(out, "{},{},{},{},{}", m, r.psnr, r.ssim, r.mi, r.smi)?;
            }
        }
        Ok(())
    }

    pub fn write_timing(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{TIMING_HEADER}")?;
        for m in &self.methods {
            if let Some((t, i)) = self.average_times(m) {
                writeln!(out, "{m},{t:.3},{i:.3}")?;
            }
        }
        Ok(())
    }
}

/// Clean images in `dir` (png, pgm, ssif), sorted by file name.
pub fn list_corpus(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| SsiError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm" | "ssif"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(SsiError::param(format!("no images found in corpus {}", dir.display())));
    }
    Ok(files)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn sanitize(method: &str) -> String {
    method.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

struct Scorer<'a> {
    clean: &'a Image2D,
    name: String,
    out: Option<PathBuf>,
    candidates: Vec<Candidate>,
}

impl Scorer<'_> {
    fn add(&mut self, method: &str, setting: String, img: &Image2D, train_s: f64, infer_s: f64) -> Result<()> {
        let img = img.clamp(0.0, 1.0);
        let report = MetricReport::compute(self.clean, &img)?;
        if let Some(dir) = &self.out {
            let tag = if setting.is_empty() { String::new() } else { format!("_{}", sanitize(&setting)) };
            write_image(dir.join(format!("{}_{}{}.png", self.name, sanitize(method), tag)), &img, 16)?;
        }
        self.candidates.push(Candidate {
            method: method.to_string(),
            setting,
            report,
            train_seconds: train_s,
            infer_seconds: infer_s,
        });
        Ok(())
    }
}

fn choose(candidates: &[Candidate]) -> Vec<Candidate> {
    let mut chosen: Vec<Candidate> = Vec::new();
    for c in candidates {
        match chosen.iter_mut().find(|b| b.method == c.method) {
            Some(b) if c.report.ssim > b.report.ssim => *b = c.clone(),
            Some(_) => {}
            None => chosen.push(c.clone()),
        }
    }
    chosen
}

/// Degrade and restore one clean image with every configured method.
pub fn evaluate_image(name: &str, clean: &Image2D, index: usize, cfg: &BenchmarkConfig) -> Result<ImageResult> {
    let k = cfg.psf.kernel()?;
    let blurred = convolve(clean, &k, cfg.degrade_boundary)?;
    let noise = NoiseSpec { seed: cfg.noise.seed.wrapping_add(index as u64), ..cfg.noise };
    let y = apply_noise(&blurred, &noise)?;
    let image_dir = cfg.write_images.then(|| cfg.out_dir.join("images"));
    let log_dir = cfg.write_images.then(|| cfg.out_dir.join("logs"));
    for d in image_dir.iter().chain(log_dir.iter()) {
        fs::create_dir_all(d).map_err(|e| SsiError::io(d, e))?;
    }
    let mut sc = Scorer { clean, name: name.to_string(), out: image_dir, candidates: Vec::new() };
    sc.add(BLURRY, String::new(), &blurred, 0.0, 0.0)?;
    sc.add(BLURRY_NOISY, String::new(), &y, 0.0, 0.0)?;

    let model = ForwardModel::new(k.clone(), cfg.classical_boundary);
    for &it in &cfg.lr_iters {
        let t = Instant::now();
        let x = lucy_richardson(&y, &model, it)?;
        sc.add(&lr_method(it), String::new(), &x, 0.0, t.elapsed().as_secs_f64())?;
    }
    if cfg.tv {
        for &lambda in &cfg.lambdas {
            let t = Instant::now();
            let x = chambolle_pock_tv(&y, &model, &TvConfig::new(lambda, cfg.cp_iters, cfg.eps_tv)?)?;
            sc.add(CP_TV, format!("lambda={lambda}"), &x, 0.0, t.elapsed().as_secs_f64())?;
            let t = Instant::now();
            let out = cg_tv(&y, &model, &TvConfig::new(lambda, cfg.cg_iters, cfg.eps_tv)?)?;
            sc.add(CG_TV, format!("lambda={lambda}"), &out.image, 0.0, t.elapsed().as_secs_f64())?;
        }
    }
    let mut runs = vec![(SSI, false)];
    if cfg.no_mask_ablation {
        runs.push((SSI_NO_MASK, true));
    }
    for (method, no_mask) in runs {
        for &seed in &cfg.seeds {
            let tc = TrainConfig { no_mask, ..cfg.train.clone() }.with_seed(seed);
            let t = Instant::now();
            let trained = train(&y, &k, &tc)?;
            let train_s = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let x = infer(&trained.params, &y)?;
            let infer_s = t.elapsed().as_secs_f64();
            if let Some(dir) = &log_dir {
                let p = dir.join(format!("{name}_{}_seed{seed}.csv", sanitize(method)));
                let mut f = fs::File::create(&p).map_err(|e| SsiError::io(&p, e))?;
                trained.log.write_csv(&mut f).map_err(|e| SsiError::io(&p, e))?;
            }
            info!("{name}: {method} seed {seed} trained in {train_s:.1}s");
            sc.add(method, format!("seed={seed}"), &x, train_s, infer_s)?;
        }
    }
    let chosen = choose(&sc.candidates);
    Ok(ImageResult { image: name.to_string(), candidates: sc.candidates, chosen })
}

/// Number of worker threads: `SSI_THREADS` if set, else the available parallelism.
pub fn thread_budget() -> usize {
    std::env::var("SSI_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

pub fn run_benchmark(cfg: &BenchmarkConfig, threads: usize) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let files = list_corpus(&cfg.corpus)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| SsiError::io(&cfg.out_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.clamp(1, files.len()))
        .build()
        .map_err(|e| SsiError::State(format!("thread pool: {e}")))?;
    let images: Vec<ImageResult> = pool.install(|| {
        files
            .par_iter()
            .enumerate()
            .map(|(i, path)| evaluate_image(&file_stem(path), &read_image(path)?, i, cfg))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut methods: Vec<String> = Vec::new();
    for c in images.iter().flat_map(|r| &r.chosen) {
        if !methods.contains(&c.method) {
            methods.push(c.method.clone());
        }
    }
    let report = BenchmarkReport { images, methods };
    let write = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| -> Result<()> {
        let p = cfg.out_dir.join(name);
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| SsiError::io(&p, e))?;
        fs::write(&p, buf).map_err(|e| SsiError::io(&p, e))
    };
    write("per_image.csv", &|b| report.write_per_image(b))?;
    write("summary.csv", &|b| report.write_summary(b))?;
    write("timing.csv", &|b| report.write_timing(b))?;
    RunManifest::new("benchmark", cfg.to_settings()).save(cfg.out_dir.join("manifest.txt"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::UNetConfig;

    fn tiny_config(corpus: &Path, out: &Path) -> BenchmarkConfig {
        let mut cfg = BenchmarkConfig::new(corpus, out);
        cfg.train = TrainConfig {
            epochs: 2,
            batches_per_epoch: 1,
            unet: UNetConfig { depth: 1, base_channels: 4, seed: 0 },
            ..Default::default()
        };
        cfg.psf = PsfSpec { sigma: 1.0, radius: 3 };
        cfg.cp_iters = 5;
        cfg.cg_iters = 5;
        cfg.lambdas = vec![0.01];
        cfg
    }

    fn write_corpus(dir: &Path) {
        for (i, name) in ["b.png", "a.png"].iter().enumerate() {
            let img = Image2D::from_fn(24, 16, |x, y| ((x * (i + 2) + y) % 11) as f64 / 10.0);
            write_image(dir.join(name), &img, 8).unwrap();
        }
    }

    #[test]
    fn settings_round_trip() {
        let cfg = BenchmarkConfig::new("c", "o");
        let s = Settings::parse(&cfg.to_settings().to_text()).unwrap();
        assert_eq!(BenchmarkConfig::from_settings(&s).unwrap(), cfg);
    }

    #[test]
    fn empty_corpus_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path(), &dir.path().join("out"));
        assert!(run_benchmark(&cfg, 1).is_err());
    }

    #[test]
    fn csv_schemas_and_averages() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path());
        let out = dir.path().join("out");
        let report = run_benchmark(&tiny_config(dir.path(), &out), 2).unwrap();
        assert_eq!(report.images.iter().map(|r| r.image.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
        let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
        let mut lines = summary.lines();
        assert_eq!(lines.next(), Some(SUMMARY_HEADER));
        let methods: Vec<&str> = lines.clone().map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(methods, vec!["blurry", "blurry&noisy", "LR5", "LR10", "LR20", "CP-TV", "CG-TV", "SSI", "SSI-no-mask"]);
        let per = fs::read_to_string(out.join("per_image.csv")).unwrap();
        assert_eq!(per.lines().next(), Some(PER_IMAGE_HEADER));
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            let psnrs: Vec<f64> = per
                .lines()
                .skip(1)
                .map(|l| l.split(',').collect::<Vec<_>>())
                .filter(|r| r[1] == f[0])
                .map(|r| r[3].parse().unwrap())
                .collect();
            let mean = psnrs.iter().sum::<f64>() / psnrs.len() as f64;
            assert!((mean - f[1].parse::<f64>().unwrap()).abs() < 1e-9);
        }
        let timing = fs::read_to_string(out.join("timing.csv")).unwrap();
        assert_eq!(timing.lines().next(), Some(TIMING_HEADER));
        assert!(out.join("manifest.txt").exists());
        assert!(out.join("images").join("a_SSI_seed_0.png").exists());
    }
}
