//! Patch grouping, per-group dispatch, aggregation and the outer
//! iterative-regularization loop.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::admm::{solve, SolverConfig};
use crate::error::{Error, Result};
use crate::image::ColorImage;
use crate::noise_model::{ablation_weights, AblationMode, GroupNoiseStats, DEFAULT_EPS_P, SIGMA_FLOOR};
use crate::synth::equivalent_sigma;

/// Groups solved concurrently before their results are accumulated in order.
const BATCH: usize = 128;
/// Growth of the search half-width when a window holds fewer than `N` patches.
const WINDOW_GROWTH: usize = 10;

pub type Position = (usize, usize);

/// Which noisy observation the residual `y − x̂` is taken from when
/// estimating per-group noise levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StatsSource {
    /// The original observation `Y₀`.
    #[default]
    Original,
    /// The regularized image `Y_l` that the group was cut from.
    Regularized,
}

impl StatsSource {
    pub fn name(self) -> &'static str {
        match self {
            StatsSource::Original => "original",
            StatsSource::Regularized => "regularized",
        }
    }
}

impl std::str::FromStr for StatsSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(StatsSource::Original),
            "regularized" => Ok(StatsSource::Regularized),
            other => Err(Error::InvalidConfig(format!("unknown stats source '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub theta: usize,
    pub group_size: usize,
    pub patch: usize,
    pub stride: usize,
    /// Side of the search window, odd.
    pub window: usize,
    pub delta: f64,
    pub solver: SolverConfig,
    pub ablation: AblationMode,
    pub eps_p: f64,
    pub stats_source: StatsSource,
    /// Pixel values are multiplied by this before each group solve and divided
    /// afterwards; the solver hyperparameters are tuned for unit-range data.
    pub value_scale: f64,
    /// Data-term weights are multiplied by `weight_ref·σ̄`, where `σ̄` is the
    /// RMS of the three input noise levels, so that `C` and `S` are relative
    /// to the overall noise level instead of carrying its absolute scale.
    pub weight_ref: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            theta: 2,
            group_size: 60,
            patch: 6,
            stride: 5,
            window: 31,
            delta: 0.1,
            solver: SolverConfig::default(),
            ablation: AblationMode::Full,
            eps_p: DEFAULT_EPS_P,
            stats_source: StatsSource::Original,
            value_scale: 1.0 / 255.0,
            weight_ref: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.theta == 0 || self.group_size == 0 || self.patch == 0 || self.stride == 0 {
            return bad("theta, N, d and s must be positive".into());
        }
        if self.window % 2 == 0 {
            return bad(format!("search window must be odd, got {}", self.window));
        }
        if self.window < self.patch {
            return bad(format!("search window {} is smaller than the patch side {}", self.window, self.patch));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return bad(format!("delta must lie in [0, 1), got {}", self.delta));
        }
        if !(self.eps_p.is_finite() && self.eps_p >= 0.0) {
            return bad(format!("eps_p must be finite and >= 0, got {}", self.eps_p));
        }
        if !(self.value_scale.is_finite() && self.value_scale > 0.0) {
            return bad(format!("value scale must be positive, got {}", self.value_scale));
        }
        if !(self.weight_ref.is_finite() && self.weight_ref > 0.0) {
            return bad(format!("weight reference must be positive, got {}", self.weight_ref));
        }
        self.solver.validate()
    }

    /// Checks that also depend on the image size.
    pub fn validate_for(&self, height: usize, width: usize) -> Result<()> {
        self.validate()?;
        if self.patch > height.min(width) {
            return Err(Error::InvalidConfig(format!(
                "patch side {} exceeds image size {height}x{width}",
                self.patch
            )));
        }
        let candidates = (height - self.patch + 1) * (width - self.patch + 1);
        if self.group_size > candidates {
            return Err(Error::InvalidConfig(format!(
                "group size {} exceeds the {candidates} patches in a {height}x{width} image",
                self.group_size
            )));
        }
        Ok(())
    }
}

fn axis_positions(len: usize, d: usize, s: usize) -> Vec<usize> {
    let span = len - d;
    let count = span.div_ceil(s).max(1);
    let mut out: Vec<usize> = (0..count).map(|i| i * s).collect();
    *out.last_mut().expect("count >= 1") = span;
    out
}

/// Top-left corners of the key patches: `⌈(H−d)/s⌉·⌈(W−d)/s⌉` positions on a
/// stride-`s` lattice whose last row and column are moved to `H−d`, `W−d`.
/// A degenerate axis (`H = d`) contributes one position.
pub fn key_patch_grid(height: usize, width: usize, d: usize, s: usize) -> Result<Vec<Position>> {
    if d == 0 || s == 0 {
        return Err(Error::InvalidConfig("patch side and stride must be positive".into()));
    }
    if d > height.min(width) {
        return Err(Error::InvalidConfig(format!("patch side {d} exceeds image size {height}x{width}")));
    }
    let rows = axis_positions(height, d, s);
    let cols = axis_positions(width, d, s);
    Ok(rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGroup {
    pub key: Position,
    pub members: Vec<Position>,
    /// `3d² × N`, one vectorized patch per column, key first.
    pub y: DMatrix<f64>,
}

pub fn extract_group(image: &ColorImage, members: &[Position], d: usize) -> DMatrix<f64> {
    let rows = 3 * d * d;
    let mut m = DMatrix::zeros(rows, members.len());
    for (j, &(r, c)) in members.iter().enumerate() {
        image.extract_patch(r, c, d, m.column_mut(j).as_mut_slice());
    }
    m
}

fn patch_distance(image: &ColorImage, key: &[f64], row: usize, col: usize, d: usize) -> f64 {
    let (h, w) = image.dims();
    let n = h * w;
    let data = image.as_planar();
    let mut acc = 0.0;
    let mut k = 0;
    for c in 0..3 {
        for r in row..row + d {
            let start = c * n + r * w + col;
            for (a, b) in data[start..start + d].iter().zip(&key[k..k + d]) {
                acc += (a - b) * (a - b);
            }
            k += d;
        }
    }
    acc
}

fn window_range(center: usize, half: usize, max_start: usize) -> std::ops::RangeInclusive<usize> {
    center.saturating_sub(half)..=(center + half).min(max_start)
}

/// The key patch and its `N − 1` nearest neighbours (squared Euclidean
/// distance) among patches whose top-left corner lies in the search window
/// centred on the key. Ties go to the earlier position in row-major order.
pub fn group_similar(image: &ColorImage, key: Position, cfg: &PipelineConfig) -> Result<PatchGroup> {
    let (h, w) = image.dims();
    let d = cfg.patch;
    let n = cfg.group_size;
    if d == 0 || d > h.min(w) || key.0 + d > h || key.1 + d > w {
        return Err(Error::InvalidInput(format!("patch at {key:?} with side {d} does not fit {h}x{w}")));
    }
    let (max_r, max_c) = (h - d, w - d);
    let total = (max_r + 1) * (max_c + 1);
    if n == 0 || n > total {
        return Err(Error::InvalidConfig(format!("group size {n} with only {total} candidate patches")));
    }
    let mut key_vec = vec![0.0; 3 * d * d];
    image.extract_patch(key.0, key.1, d, &mut key_vec);

    let mut half = cfg.window / 2;
    let (rows, cols) = loop {
        let rows = window_range(key.0, half, max_r);
        let cols = window_range(key.1, half, max_c);
        if rows.clone().count() * cols.clone().count() >= n {
            break (rows, cols);
        }
        half += WINDOW_GROWTH;
    };

    let mut candidates: Vec<(f64, Position)> = Vec::with_capacity(rows.clone().count() * cols.clone().count());
    for r in rows {
        for c in cols.clone() {
            if (r, c) != key {
                candidates.push((patch_distance(image, &key_vec, r, c, d), (r, c)));
            }
        }
    }
    let order = |a: &(f64, Position), b: &(f64, Position)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let keep = n - 1;
    if keep > 0 && keep < candidates.len() {
        candidates.select_nth_unstable_by(keep - 1, order);
    }
    candidates.truncate(keep);
    candidates.sort_unstable_by(order);

    let mut members = Vec::with_capacity(n);
    members.push(key);
    members.extend(candidates.into_iter().map(|(_, p)| p));
    let y = extract_group(image, &members, d);
    Ok(PatchGroup { key, members, y })
}

/// Running per-pixel sums and counts.
#[derive(Debug, Clone)]
pub struct Aggregator {
    height: usize,
    width: usize,
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl Aggregator {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, sum: vec![0.0; 3 * height * width], count: vec![0; height * width] }
    }

    /// Add every column of `patches` back at its member position.
    pub fn add(&mut self, members: &[Position], patches: &DMatrix<f64>, d: usize) -> Result<()> {
        if patches.nrows() != 3 * d * d || patches.ncols() != members.len() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} patch matrix for {} members of side {d}",
                patches.nrows(),
                patches.ncols(),
                members.len()
            )));
        }
        let (w, n) = (self.width, self.height * self.width);
        for (j, &(row, col)) in members.iter().enumerate() {
            if row + d > self.height || col + d > w {
                return Err(Error::DimensionMismatch(format!("patch at ({row}, {col}) leaves the image")));
            }
            let column = patches.column(j);
            let v = column.as_slice();
            let mut k = 0;
            for c in 0..3 {
                for r in row..row + d {
                    let start = c * n + r * w + col;
                    for (dst, src) in self.sum[start..start + d].iter_mut().zip(&v[k..k + d]) {
                        *dst += src;
                    }
                    k += d;
                }
            }
            for r in row..row + d {
                for cnt in &mut self.count[r * w + col..r * w + col + d] {
                    *cnt += 1;
                }
            }
        }
        Ok(())
    }

    fn average(&self, mut fallback: impl FnMut(usize, usize) -> Result<[f64; 3]>) -> Result<ColorImage> {
        let n = self.height * self.width;
        let mut data = vec![0.0; 3 * n];
        for i in 0..n {
            let k = self.count[i];
            if k == 0 {
                let v = fallback(i / self.width, i % self.width)?;
                for c in 0..3 {
                    data[c * n + i] = v[c];
                }
            } else {
                for c in 0..3 {
                    data[c * n + i] = self.sum[c * n + i] / k as f64;
                }
            }
        }
        ColorImage::from_planar(self.height, self.width, data)
    }

    /// Mean of all contributions per pixel; errors on a pixel nobody covered.
    pub fn finish(&self) -> Result<ColorImage> {
        self.average(|row, col| Err(Error::UncoveredPixel { row, col }))
    }

    /// Like [`finish`](Self::finish), but uncovered pixels take their value
    /// from `fallback`.
    pub fn finish_or(&self, fallback: &ColorImage) -> Result<ColorImage> {
        if fallback.dims() != (self.height, self.width) {
            return Err(Error::DimensionMismatch("fallback image size differs".into()));
        }
        self.average(|r, c| Ok([fallback.get(r, c, 0), fallback.get(r, c, 1), fallback.get(r, c, 2)]))
    }

    pub fn uncovered(&self) -> usize {
        self.count.iter().filter(|&&k| k == 0).count()
    }
}

pub fn aggregate(groups: &[(PatchGroup, DMatrix<f64>)], height: usize, width: usize, d: usize) -> Result<ColorImage> {
    let mut agg = Aggregator::new(height, width);
    for (g, m) in groups {
        agg.add(&g.members, m, d)?;
    }
    agg.finish()
}

/// Everything a per-group solver may look at.
pub struct GroupInput<'a> {
    pub group: &'a PatchGroup,
    /// Patches of the original observation `Y₀` at the member positions.
    pub original: &'a DMatrix<f64>,
    /// Patches of the previous estimate `X_{l−1}` at the member positions.
    pub estimate: &'a DMatrix<f64>,
    pub sigma0: [f64; 3],
}

pub trait GroupDenoiser: Sync {
    fn denoise_group(&self, input: &GroupInput<'_>) -> Result<DMatrix<f64>>;
}

/// Returns every group unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl GroupDenoiser for IdentityDenoiser {
    fn denoise_group(&self, input: &GroupInput<'_>) -> Result<DMatrix<f64>> {
        Ok(input.group.y.clone())
    }
}

/// Weighted tNF low-rank solve with per-group noise statistics.
#[derive(Debug, Clone)]
pub struct DtnfmDenoiser {
    pub solver: SolverConfig,
    pub ablation: AblationMode,
    pub eps_p: f64,
    pub stats_source: StatsSource,
    pub value_scale: f64,
    pub weight_ref: f64,
}

impl DtnfmDenoiser {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            solver: cfg.solver.clone(),
            ablation: cfg.ablation,
            eps_p: cfg.eps_p,
            stats_source: cfg.stats_source,
            value_scale: cfg.value_scale,
            weight_ref: cfg.weight_ref,
        }
    }
}

impl GroupDenoiser for DtnfmDenoiser {
    fn denoise_group(&self, input: &GroupInput<'_>) -> Result<DMatrix<f64>> {
        let k = self.value_scale;
        let y = &input.group.y * k;
        let noisy = match self.stats_source {
            StatsSource::Original => input.original * k,
            StatsSource::Regularized => y.clone(),
        };
        let xhat = input.estimate * k;
        let sigma0 = input.sigma0.map(|s| s * k);
        let stats = GroupNoiseStats::estimate(&noisy, &xhat, sigma0, self.eps_p)?;
        let d2 = y.nrows() / 3;
        let mut w = ablation_weights(&stats, d2, self.ablation)?;
        let gain = self.weight_ref * equivalent_sigma(sigma0).max(SIGMA_FLOOR);
        w.c.iter_mut().for_each(|c| *c *= gain);
        let out = solve(&y, &w, &self.solver)?;
        Ok(out.x / k)
    }
}

/// Seconds per stage. Grouping and solving are summed over worker threads;
/// aggregation is wall-clock.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub grouping: f64,
    pub solving: f64,
    pub aggregation: f64,
}

fn tag_key(err: Error, key: Position) -> Error {
    match err {
        Error::SolverDivergence { iteration, key: None } => Error::SolverDivergence { iteration, key: Some(key) },
        other => other,
    }
}

/// One outer iteration: group on `current`, solve each group, aggregate.
/// Pixels no group reaches keep their value in `current`.
pub fn denoise_pass(
    current: &ColorImage,
    original: &ColorImage,
    estimate: &ColorImage,
    sigma0: [f64; 3],
    cfg: &PipelineConfig,
    denoiser: &dyn GroupDenoiser,
    timings: &mut StageTimings,
) -> Result<ColorImage> {
    let (h, w) = current.dims();
    let d = cfg.patch;
    let grid = key_patch_grid(h, w, d, cfg.stride)?;
    let mut agg = Aggregator::new(h, w);
    for batch in grid.chunks(BATCH) {
        type Solved = (Vec<Position>, DMatrix<f64>, Duration, Duration);
        let solved: Vec<Result<Solved>> = batch
            .par_iter()
            .map(|&key| {
                let start = Instant::now();
                let group = group_similar(current, key, cfg)?;
                let orig = extract_group(original, &group.members, d);
                let est = extract_group(estimate, &group.members, d);
                let grouped = start.elapsed();
                let input = GroupInput { group: &group, original: &orig, estimate: &est, sigma0 };
                let x = denoiser.denoise_group(&input).map_err(|e| tag_key(e, key))?;
                Ok((group.members, x, grouped, start.elapsed() - grouped))
            })
            .collect();
        let start = Instant::now();
        for item in solved {
            let (members, x, grouped, solving) = item?;
            timings.grouping += grouped.as_secs_f64();
            timings.solving += solving.as_secs_f64();
            agg.add(&members, &x, d)?;
        }
        timings.aggregation += start.elapsed().as_secs_f64();
    }
    let uncovered = agg.uncovered();
    if uncovered > 0 {
        log::debug!("{uncovered} pixels not covered by any group keep their input value");
    }
    let start = Instant::now();
    let out = agg.finish_or(current);
    timings.aggregation += start.elapsed().as_secs_f64();
    out
}

/// Full pipeline with a pluggable per-group solver. Output is clamped to
/// `[0, 255]`.
pub fn denoise_with(
    noisy: &ColorImage,
    sigma0: [f64; 3],
    cfg: &PipelineConfig,
    denoiser: &dyn GroupDenoiser,
) -> Result<ColorImage> {
    denoise_timed(noisy, sigma0, cfg, denoiser).map(|(img, _)| img)
}

pub fn denoise_timed(
    noisy: &ColorImage,
    sigma0: [f64; 3],
    cfg: &PipelineConfig,
    denoiser: &dyn GroupDenoiser,
) -> Result<(ColorImage, StageTimings)> {
    let (h, w) = noisy.dims();
    cfg.validate_for(h, w)?;
    if let Some(s) = sigma0.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::InvalidConfig(format!("noise level must be finite and >= 0, got {s}")));
    }
    let mut timings = StageTimings::default();
    let mut estimate = noisy.clone();
    for l in 1..=cfg.theta {
        let current = estimate.lerp(noisy, cfg.delta)?;
        log::debug!("outer iteration {l}/{}", cfg.theta);
        estimate = denoise_pass(&current, noisy, &estimate, sigma0, cfg, denoiser, &mut timings)?;
    }
    Ok((estimate.clamped(0.0, 255.0), timings))
}

pub fn denoise(noisy: &ColorImage, sigma0: [f64; 3], cfg: &PipelineConfig) -> Result<ColorImage> {
    denoise_with(noisy, sigma0, cfg, &DtnfmDenoiser::from_config(cfg))
}
