use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use dtnfm::config::{preset, RunManifest};
use dtnfm::metrics::{assess, format_db, QualityReport};
use dtnfm::noise_model::AblationMode;
use dtnfm::patch::{denoise_timed, DtnfmDenoiser, PipelineConfig};
use dtnfm::synth::{add_gaussian, equivalent_sigma, map_mean_sigma, peaks_map, NoiseMap, NoiseSpec, RNG_ALGORITHM};
use dtnfm::{ColorImage, Error};

const BENCH_SCHEMA: &str = "dtnfm-bench-v1";

#[derive(Parser)]
#[command(name = "dtnfm", version, about = "Color image denoising with a truncated nuclear-minus-Frobenius low-rank prior")]
struct Cli {
    /// Worker threads for patch-group solving (default: all cores).
    #[arg(long, global = true, env = "DTNFM_THREADS")]
    threads: Option<usize>,
    /// Increase log verbosity (-v, -vv).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Denoise an image with known per-channel noise levels.
    Denoise(DenoiseArgs),
    /// Add synthetic Gaussian noise to a clean image.
    Synth(SynthArgs),
    /// Add noise to every image in a directory, denoise, and report metrics.
    Bench(BenchArgs),
}

#[derive(Args)]
struct PipelineArgs {
    /// Parameter preset: table5a, table5b, table5c or table5d.
    #[arg(long, default_value = "table5b")]
    preset: String,
    /// `key = value` file (for example a previous run manifest) applied after the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// full, drop_C or drop_S.
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    theta: Option<usize>,
    /// Patches per group (N).
    #[arg(long)]
    group_size: Option<usize>,
    /// Patch side (d).
    #[arg(long)]
    patch: Option<usize>,
    /// Key-patch stride (s).
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    /// ADMM passes per group (K).
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    /// exact or closed_form.
    #[arg(long)]
    shrink_rule: Option<String>,
    #[arg(long)]
    weight_ref: Option<f64>,
    #[arg(long)]
    value_scale: Option<f64>,
}

#[derive(Args)]
struct DenoiseArgs {
    /// Noisy input, PNG or FIMG.
    #[arg(long = "in")]
    input: PathBuf,
    /// Per-channel noise standard deviations `r,g,b` (or one value for all).
    #[arg(long)]
    sigma: String,
    /// Output path; the PNG, FIMG and manifest share its stem.
    #[arg(long)]
    out: PathBuf,
    /// Clean reference for PSNR/SSIM in the manifest.
    #[arg(long)]
    clean: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    sigma: String,
    /// Spatial modulation: none or peaks.
    #[arg(long, default_value = "none")]
    map: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; the FIMG, preview PNG and manifest share its stem.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of clean PNG or FIMG images.
    #[arg(long)]
    clean_dir: PathBuf,
    #[arg(long)]
    sigma: String,
    #[arg(long, default_value = "none")]
    map: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the central `N × N` crop of every image.
    #[arg(long)]
    crop: Option<usize>,
    /// Run full, drop_C and drop_S for every image.
    #[arg(long)]
    ablation_sweep: bool,
    #[arg(long)]
    report: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_) | Error::DimensionMismatch(_) => 3,
            Error::SolverDivergence { .. } => 4,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

fn unreadable(path: &Path, e: Error) -> Failure {
    Failure { code: 2, message: format!("cannot read {}: {e}", path.display()) }
}

fn invalid(message: String) -> Failure {
    Failure { code: 3, message }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = configure_threads(cli.threads).and_then(|()| match cli.command {
        Command::Denoise(a) => cmd_denoise(a, cli.threads),
        Command::Synth(a) => cmd_synth(a),
        Command::Bench(a) => cmd_bench(a, cli.threads),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(invalid("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure { code: 1, message: e.to_string() })?;
    }
    Ok(())
}

fn parse_sigma(s: &str) -> CliResult<[f64; 3]> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| invalid(format!("--sigma '{s}': {e}")))?;
    let sigma = match vals[..] {
        [v] => [v; 3],
        [r, g, b] => [r, g, b],
        _ => return Err(invalid(format!("--sigma expects 1 or 3 values, got {}", vals.len()))),
    };
    if sigma.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid(format!("--sigma values must be finite and >= 0, got {s}")));
    }
    Ok(sigma)
}

fn fmt_sigma(s: [f64; 3]) -> String {
    format!("{},{},{}", s[0], s[1], s[2])
}

fn build_pipeline(a: &PipelineArgs) -> CliResult<PipelineConfig> {
    let mut cfg = preset(&a.preset)?;
    if let Some(path) = &a.config {
        RunManifest::load(path).map_err(|e| unreadable(path, e))?.apply_to(&mut cfg)?;
    }
    macro_rules! over {
        ($field:ident, $slot:expr) => {
            if let Some(v) = a.$field {
                $slot = v;
            }
        };
    }
    over!(theta, cfg.theta);
    over!(group_size, cfg.group_size);
    over!(patch, cfg.patch);
    over!(stride, cfg.stride);
    over!(window, cfg.window);
    over!(delta, cfg.delta);
    over!(lambda, cfg.solver.lambda);
    over!(t, cfg.solver.t);
    over!(alpha, cfg.solver.alpha);
    over!(rho0, cfg.solver.rho0);
    over!(mu, cfg.solver.mu);
    over!(max_iters, cfg.solver.max_iters);
    over!(weight_ref, cfg.weight_ref);
    over!(value_scale, cfg.value_scale);
    if let Some(eps) = a.eps {
        cfg.solver.eps = Some(eps);
    }
    if let Some(m) = &a.ablation {
        cfg.ablation = m.parse()?;
    }
    if let Some(r) = &a.shrink_rule {
        cfg.solver.rule = r.parse()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn noise_map(kind: &str, height: usize, width: usize) -> CliResult<Option<NoiseMap>> {
    match kind {
        "none" => Ok(None),
        "peaks" => Ok(Some(peaks_map(height.max(width).max(2))?.crop(height, width)?)),
        other => Err(invalid(format!("unknown --map '{other}' (expected none or peaks)"))),
    }
}

fn load_input(path: &Path) -> CliResult<ColorImage> {
    ColorImage::load(path).map_err(|e| unreadable(path, e))
}

fn record_quality(m: &mut RunManifest, prefix: &str, q: &QualityReport) {
    m.set(format!("{prefix}_psnr"), format_db(q.psnr));
    m.set(format!("{prefix}_ssim"), format!("{:.6}", q.ssim));
    let ch = q.per_channel_psnr.map(format_db);
    m.set(format!("{prefix}_psnr_rgb"), ch.join(","));
}

fn cmd_denoise(a: DenoiseArgs, threads: Option<usize>) -> CliResult<()> {
    let sigma = parse_sigma(&a.sigma)?;
    let cfg = build_pipeline(&a.pipeline)?;
    let noisy = load_input(&a.input)?;
    let clean = a.clean.as_deref().map(load_input).transpose()?;
    cfg.validate_for(noisy.height(), noisy.width())?;

    let start = Instant::now();
    let (out, timings) = denoise_timed(&noisy, sigma, &cfg, &DtnfmDenoiser::from_config(&cfg))?;
    let total = start.elapsed().as_secs_f64();

    let png = a.out.with_extension("png");
    let fimg = a.out.with_extension("fimg");
    let manifest_path = a.out.with_extension("manifest");
    out.save_png(&png)?;
    out.save_fimg(&fimg)?;

    let mut m = RunManifest::new();
    m.set("command", "denoise");
    m.set("version", env!("CARGO_PKG_VERSION"));
    m.set("input", a.input.display());
    m.set("sigma", fmt_sigma(sigma));
    m.set("preset", &a.pipeline.preset);
    m.record_pipeline(&cfg);
    m.set("threads", threads.map_or_else(|| "auto".to_string(), |t| t.to_string()));
    m.set("output_png", png.display());
    m.set("output_fimg", fimg.display());
    m.set("time_grouping_s", format!("{:.4}", timings.grouping));
    m.set("time_solving_s", format!("{:.4}", timings.solving));
    m.set("time_aggregation_s", format!("{:.4}", timings.aggregation));
    m.set("time_total_s", format!("{total:.4}"));
    if let (Some(clean), Some(path)) = (&clean, &a.clean) {
        m.set("clean", path.display());
        record_quality(&mut m, "noisy", &assess(clean, &noisy)?);
        record_quality(&mut m, "denoised", &assess(clean, &out)?);
        record_quality(&mut m, "denoised_u8", &assess(clean, &out.quantize_u8())?);
    }
    m.save(&manifest_path)?;
    log::info!("wrote {} ({total:.1}s)", png.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let sigma = parse_sigma(&a.sigma)?;
    let clean = load_input(&a.input)?;
    let (h, w) = clean.dims();
    let map = noise_map(&a.map, h, w)?;
    let spec = NoiseSpec { sigma0: sigma, map, seed: a.seed };
    let noisy = add_gaussian(&clean, &spec)?.quantize_f32();

    let fimg = a.out.with_extension("fimg");
    let png = a.out.with_extension("png");
    noisy.save_fimg(&fimg)?;
    noisy.save_png(&png)?;

    let mut m = RunManifest::new();
    m.set("command", "synth");
    m.set("version", env!("CARGO_PKG_VERSION"));
    m.set("input", a.input.display());
    m.set("sigma", fmt_sigma(sigma));
    m.set("map", &a.map);
    m.set("seed", a.seed);
    m.set("rng", RNG_ALGORITHM);
    m.set("equivalent_sigma", format!("{:.6}", equivalent_sigma(sigma)));
    if let Some(map) = &spec.map {
        m.set("map_mean", format!("{:.6}", map.mean()));
        m.set("mean_sigma", fmt_sigma(sigma.map(|s| map_mean_sigma(s, map))));
    }
    m.set("output_fimg", fimg.display());
    m.set("output_png", png.display());
    if h >= 11 && w >= 11 {
        record_quality(&mut m, "noisy", &assess(&clean, &noisy)?);
    }
    m.save(a.out.with_extension("manifest"))?;
    Ok(())
}

fn list_images(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| unreadable(dir, e.into()))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "fimg"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure { code: 2, message: format!("no PNG or FIMG images in {}", dir.display()) });
    }
    Ok(files)
}

fn center_crop(img: &ColorImage, n: usize) -> CliResult<ColorImage> {
    let (h, w) = img.dims();
    if n == 0 || n > h.min(w) {
        return Err(invalid(format!("--crop {n} does not fit a {h}x{w} image")));
    }
    Ok(img.crop((h - n) / 2, (w - n) / 2, n, n)?)
}

struct BenchRow {
    image: String,
    mode: AblationMode,
    noisy: QualityReport,
    denoised: QualityReport,
    denoised_u8: QualityReport,
    runtime: f64,
}

fn cmd_bench(a: BenchArgs, threads: Option<usize>) -> CliResult<()> {
    let sigma = parse_sigma(&a.sigma)?;
    let base = build_pipeline(&a.pipeline)?;
    let files = list_images(&a.clean_dir)?;
    let modes: Vec<AblationMode> = if a.ablation_sweep { AblationMode::ALL.to_vec() } else { vec![base.ablation] };

    let mut rows = Vec::new();
    for path in &files {
        let mut clean = load_input(path)?;
        if let Some(n) = a.crop {
            clean = center_crop(&clean, n)?;
        }
        let (h, w) = clean.dims();
        let spec = NoiseSpec { sigma0: sigma, map: noise_map(&a.map, h, w)?, seed: a.seed };
        let noisy = add_gaussian(&clean, &spec)?.quantize_f32();
        let noisy_q = assess(&clean, &noisy)?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        for &mode in &modes {
            let cfg = PipelineConfig { ablation: mode, ..base.clone() };
            cfg.validate_for(h, w)?;
            let start = Instant::now();
            let (out, _) = denoise_timed(&noisy, sigma, &cfg, &DtnfmDenoiser::from_config(&cfg))?;
            let runtime = start.elapsed().as_secs_f64();
            let row = BenchRow {
                image: name.clone(),
                mode,
                noisy: noisy_q,
                denoised: assess(&clean, &out)?,
                denoised_u8: assess(&clean, &out.quantize_u8())?,
                runtime,
            };
            log::info!("{name} [{}]: {} dB", mode.name(), format_db(row.denoised.psnr));
            rows.push(row);
        }
    }
    write_report(&a, sigma, &rows)?;

    let mut m = RunManifest::new();
    m.set("command", "bench");
    m.set("version", env!("CARGO_PKG_VERSION"));
    m.set("clean_dir", a.clean_dir.display());
    m.set("sigma", fmt_sigma(sigma));
    m.set("map", &a.map);
    m.set("seed", a.seed);
    m.set("rng", RNG_ALGORITHM);
    m.set("crop", a.crop.map_or_else(|| "none".to_string(), |c| c.to_string()));
    m.set("ablation_sweep", a.ablation_sweep);
    m.set("preset", &a.pipeline.preset);
    m.record_pipeline(&base);
    m.set("threads", threads.map_or_else(|| "auto".to_string(), |t| t.to_string()));
    m.set("report", a.report.display());
    m.save(a.report.with_extension("manifest"))?;
    Ok(())
}

fn write_report(a: &BenchArgs, sigma: [f64; 3], rows: &[BenchRow]) -> CliResult<()> {
    let mut file = File::create(&a.report).map_err(Error::from)?;
    writeln!(
        file,
        "# {BENCH_SCHEMA} sigma={} equivalent_sigma={:.4} map={} seed={} preset={}",
        fmt_sigma(sigma),
        equivalent_sigma(sigma),
        a.map,
        a.seed,
        a.pipeline.preset
    )
    .map_err(Error::from)?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Failure { code: 1, message: format!("writing report: {e}") };
    w.write_record([
        "image",
        "mode",
        "noisy_psnr",
        "noisy_ssim",
        "denoised_psnr",
        "denoised_ssim",
        "denoised_psnr_u8",
        "denoised_ssim_u8",
        "runtime_s",
    ])
    .map_err(csv_err)?;
    let record = |image: &str, mode: AblationMode, vals: [f64; 7]| -> Vec<String> {
        vec![
            image.to_string(),
            mode.name().to_string(),
            format_db(vals[0]),
            format!("{:.6}", vals[1]),
            format_db(vals[2]),
            format!("{:.6}", vals[3]),
            format_db(vals[4]),
            format!("{:.6}", vals[5]),
            format!("{:.3}", vals[6]),
        ]
    };
    let values = |r: &BenchRow| {
        [r.noisy.psnr, r.noisy.ssim, r.denoised.psnr, r.denoised.ssim, r.denoised_u8.psnr, r.denoised_u8.ssim, r.runtime]
    };
    for r in rows {
        w.write_record(record(&r.image, r.mode, values(r))).map_err(csv_err)?;
    }
    for mode in AblationMode::ALL.into_iter().filter(|m| rows.iter().any(|r| r.mode == *m)) {
        let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.mode == mode).collect();
        let mut avg = [0.0; 7];
        for r in &sel {
            for (acc, v) in avg.iter_mut().zip(values(r)) {
                *acc += v / sel.len() as f64;
            }
        }
        w.write_record(record("average", mode, avg)).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Failure { code: 1, message: e.to_string() })?;
    Ok(())
}
