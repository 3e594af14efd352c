//! The denoising training loop and its instrumentation modes.
//!
//! [`denoise`] fits a SIREN to the noisy image with full-batch Adam and stops
//! the first time the per-sample mean squared error against the noisy image
//! reaches the estimated noise power `σ̂²`. The criterion is evaluated at
//! iteration 0 and every `check_every` iterations after that; the emitted image
//! is the render of the parameters that satisfied it.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::estimate::{criterion_threshold, estimate_sigma, NoiseEstimate};
use crate::grad::{self, Batch};
use crate::image::{make_grid, mse_slices, psnr_from_mse, CoordGrid, Image};
use crate::optim::{AdamState, DEFAULT_LAMBDA, DEFAULT_LR};
use crate::siren::{width_for, SirenConfig, SirenNetwork, DEFAULT_OMEGA};

/// Hidden width: a fixed neuron count or the resolution-proportional rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Width {
    #[default]
    Auto,
    Fixed(usize),
}

impl Width {
    pub fn resolve(self, height: usize, width: usize) -> usize {
        match self {
            Width::Auto => width_for(height, width, 256),
            Width::Fixed(n) => n,
        }
    }
}

impl fmt::Display for Width {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Width::Auto => f.write_str("auto"),
            Width::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for Width {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Width::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Width::Fixed(n)),
            _ => Err(Error::InvalidArgument(format!(
                "width must be a positive integer or 'auto', got '{s}'"
            ))),
        }
    }
}

impl Serialize for Width {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Width::Auto => s.serialize_str("auto"),
            Width::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Width {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(n) if n > 0 => Ok(Width::Fixed(n)),
            Raw::Number(_) => Err(serde::de::Error::custom("width must be positive")),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub hidden_layers: usize,
    pub width: Width,
    pub lr: f64,
    pub lambda: f64,
    pub max_iters: usize,
    pub check_every: usize,
    pub seed: u64,
    /// Noise standard deviation in `[0, 1]` units; skips blind estimation.
    pub sigma_override: Option<f64>,
    pub omega0: f64,
    pub omega_hidden: f64,
    /// Pixels per step; `None` trains on the full image every step.
    pub batch_size: Option<usize>,
    /// Clean reference for PSNR instrumentation. Never affects training.
    #[serde(skip)]
    pub record_psnr_vs: Option<Image>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 6,
            width: Width::Auto,
            lr: DEFAULT_LR,
            lambda: DEFAULT_LAMBDA,
            max_iters: 5000,
            check_every: 10,
            seed: 0,
            sigma_override: None,
            omega0: DEFAULT_OMEGA,
            omega_hidden: DEFAULT_OMEGA,
            batch_size: None,
            record_psnr_vs: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 || self.check_every < 1 {
            return Err(Error::InvalidArgument(
                "max_iters and check_every must be at least 1".into(),
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if let Some(s) = self.sigma_override {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "sigma override must be non-negative, got {s}"
                )));
            }
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(())
    }

    /// The network shape used for an image of this size.
    pub fn siren_config(&self, image: &Image) -> SirenConfig {
        SirenConfig {
            omega0: self.omega0,
            omega_hidden: self.omega_hidden,
            ..SirenConfig::new(
                self.hidden_layers,
                self.width.resolve(image.height(), image.width()),
                image.channels(),
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    CriterionMet,
    MaxIters,
}

/// One checkpoint of a denoising run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub iter: usize,
    pub train_mse: f64,
    pub threshold: f64,
    pub stopped: bool,
    pub psnr_clean: Option<f64>,
    pub psnr_noisy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrajectory {
    pub rows: Vec<TrajectoryRow>,
}

pub const TRAJECTORY_HEADER: [&str; 6] = [
    "iter",
    "train_mse",
    "threshold",
    "stopped",
    "psnr_clean",
    "psnr_noisy",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_f64(field: &str) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::Format(format!("bad number '{field}' in trajectory")))
}

fn parse_opt(field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field).map(Some)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("trajectory csv: {e}"))
}

impl RunTrajectory {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRAJECTORY_HEADER).map_err(csv_error)?;
        for r in &self.rows {
            w.write_record([
                r.iter.to_string(),
                r.train_mse.to_string(),
                r.threshold.to_string(),
                r.stopped.to_string(),
                fmt_opt(r.psnr_clean),
                fmt_opt(r.psnr_noisy),
            ])
            .map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }

    pub fn read_csv(input: impl Read) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(csv_error)?.clone();
        if header.iter().ne(TRAJECTORY_HEADER) {
            return Err(Error::Format(format!("unexpected trajectory header {header:?}")));
        }
        let mut rows = Vec::new();
        for record in r.records() {
            let rec = record.map_err(csv_error)?;
            rows.push(TrajectoryRow {
                iter: rec[0]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad iteration '{}'", &rec[0])))?,
                train_mse: parse_f64(&rec[1])?,
                threshold: parse_f64(&rec[2])?,
                stopped: rec[3]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad flag '{}'", &rec[3])))?,
                psnr_clean: parse_opt(&rec[4])?,
                psnr_noisy: parse_opt(&rec[5])?,
            });
        }
        Ok(Self { rows })
    }
}

/// Per-layer weight Frobenius norms at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormsRow {
    pub iter: usize,
    pub norms: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub denoised: Image,
    pub stop_iter: usize,
    pub stop_reason: StopReason,
    /// Iteration whose parameters produced `denoised`.
    pub output_iter: usize,
    pub estimate: NoiseEstimate,
    pub threshold: f64,
    pub trajectory: RunTrajectory,
    pub layer_norms: Vec<NormsRow>,
    /// Parameters that produced `denoised`.
    pub network: SirenNetwork,
    pub warnings: Vec<String>,
    pub elapsed: Duration,
}

/// Reproducible description of a finished run. Wall-clock time is excluded so
/// that identical runs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub network: SirenConfig,
    pub parameter_count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub estimate: NoiseEstimate,
    pub sigma_estimated: bool,
    pub threshold: f64,
    pub stop_iter: usize,
    pub stop_reason: StopReason,
    pub output_iter: usize,
    pub warnings: Vec<String>,
}

impl RunResult {
    pub fn manifest(&self, config: &RunConfig) -> RunManifest {
        RunManifest {
            config: config.clone(),
            network: *self.network.config(),
            parameter_count: self.network.parameter_count(),
            height: self.denoised.height(),
            width: self.denoised.width(),
            channels: self.denoised.channels(),
            estimate: self.estimate,
            sigma_estimated: config.sigma_override.is_none(),
            threshold: self.threshold,
            stop_iter: self.stop_iter,
            stop_reason: self.stop_reason,
            output_iter: self.output_iter,
            warnings: self.warnings.clone(),
        }
    }

    /// Weight norms recorded at checkpoint `iter`, if any.
    pub fn norms_at(&self, iter: usize) -> Option<&[f64]> {
        self.layer_norms
            .iter()
            .find(|r| r.iter == iter)
            .map(|r| r.norms.as_slice())
    }
}

fn at_iteration(iter: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFiniteOutput(msg) => {
            Error::NonFiniteOutput(format!("training diverged at iteration {iter}: {msg}"))
        }
        other => other,
    }
}

/// Shared optimization state for one training run.
struct Trainer {
    net: SirenNetwork,
    state: AdamState,
    grid: CoordGrid,
    full: Batch,
    target: Image,
    batch_size: Option<usize>,
    sampler: ChaCha8Rng,
}

/// Network outputs at one iteration and, unless it is the last, the step taken from them.
struct Evaluation {
    outputs: Option<Vec<f64>>,
    grads: Option<grad::GradientSet>,
}

impl Trainer {
    fn new(target: &Image, config: &RunConfig, lambda: f64) -> Result<Self> {
        config.validate()?;
        let net = SirenNetwork::init(config.siren_config(target), config.seed)?;
        let state = AdamState::new(&net, config.lr, lambda)?;
        let grid = make_grid(target.height(), target.width());
        let full = Batch::full(&grid, target)?;
        Ok(Self {
            net,
            state,
            grid,
            full,
            target: target.clone(),
            batch_size: config.batch_size.filter(|&b| b < target.pixel_count()),
            // separate stream from initialization
            sampler: ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15),
        })
    }

    /// Computes full-image outputs when `need_outputs` and gradients when `need_grads`.
    fn evaluate(&mut self, iter: usize, need_outputs: bool, need_grads: bool) -> Result<Evaluation> {
        match self.batch_size {
            None if need_grads => {
                let sweep = grad::sweep(&self.net, &self.full).map_err(at_iteration(iter))?;
                Ok(Evaluation {
                    outputs: Some(sweep.outputs),
                    grads: Some(sweep.grads),
                })
            }
            _ => {
                let outputs = if need_outputs {
                    Some(self.net.forward(&self.grid).map_err(at_iteration(iter))?)
                } else {
                    None
                };
                let grads = if need_grads {
                    let n = self.batch_size.expect("mini-batch mode");
                    let total = self.target.pixel_count();
                    let indices: Vec<usize> =
                        (0..n).map(|_| self.sampler.random_range(0..total)).collect();
                    let batch = Batch::select(&self.grid, &self.target, &indices)?;
                    Some(grad::sweep(&self.net, &batch).map_err(at_iteration(iter))?.grads)
                } else {
                    None
                };
                Ok(Evaluation { outputs, grads })
            }
        }
    }

    fn step(&mut self, iter: usize, grads: &grad::GradientSet) -> Result<()> {
        self.state
            .step(&mut self.net, grads)
            .map_err(at_iteration(iter))
    }

    fn render(&self, outputs: &[f64]) -> Image {
        Image::new(
            self.target.height(),
            self.target.width(),
            self.target.channels(),
            outputs.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
        .expect("outputs match target shape")
    }
}

fn check_reference(target: &Image, reference: &Image) -> Result<()> {
    if target.same_shape(reference) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "reference {}x{}x{} does not match target {}x{}x{}",
            reference.height(),
            reference.width(),
            reference.channels(),
            target.height(),
            target.width(),
            target.channels()
        )))
    }
}

/// Denoises `noisy` by fitting a SIREN and stopping at the estimated noise floor.
pub fn denoise(noisy: &Image, config: &RunConfig) -> Result<RunResult> {
    run(noisy, config, config.lambda)
}

fn run(noisy: &Image, config: &RunConfig, lambda: f64) -> Result<RunResult> {
    let started = Instant::now();
    config.validate()?;
    if let Some(clean) = &config.record_psnr_vs {
        check_reference(noisy, clean)?;
    }
    let estimate = match config.sigma_override {
        Some(sigma) => NoiseEstimate::fixed(sigma),
        None => estimate_sigma(noisy)?,
    };
    let threshold = criterion_threshold(&estimate);
    let mut trainer = Trainer::new(noisy, config, lambda)?;

    let mut rows = Vec::new();
    let mut layer_norms = Vec::new();
    let mut warnings = Vec::new();
    // lowest-error checkpoint so far: (mse, iter, render, parameters)
    let mut best: Option<(f64, usize, Image, SirenNetwork)> = None;

    for iter in 0..=config.max_iters {
        let is_check = iter % config.check_every == 0 || iter == config.max_iters;
        let last = iter == config.max_iters;
        let eval = trainer.evaluate(iter, is_check, !last)?;
        if is_check {
            let outputs = eval.outputs.as_deref().expect("outputs at checkpoints");
            let train_mse = mse_slices(outputs, noisy.data());
            let render = trainer.render(outputs);
            let psnr_noisy = psnr_from_mse(mse_slices(render.data(), noisy.data()));
            let psnr_clean = config
                .record_psnr_vs
                .as_ref()
                .map(|clean| psnr_from_mse(mse_slices(render.data(), clean.data())));
            let met = train_mse <= threshold;
            rows.push(TrajectoryRow {
                iter,
                train_mse,
                threshold,
                stopped: met || last,
                psnr_clean,
                psnr_noisy: Some(psnr_noisy),
            });
            layer_norms.push(NormsRow {
                iter,
                norms: trainer.net.weight_norms(),
            });
            if met {
                if iter == 0 {
                    warnings.push(
                        "criterion met before training; the noise level may be overestimated"
                            .to_string(),
                    );
                }
                return Ok(RunResult {
                    denoised: render,
                    stop_iter: iter,
                    stop_reason: StopReason::CriterionMet,
                    output_iter: iter,
                    estimate,
                    threshold,
                    trajectory: RunTrajectory { rows },
                    layer_norms,
                    network: trainer.net,
                    warnings,
                    elapsed: started.elapsed(),
                });
            }
            if best.as_ref().is_none_or(|b| train_mse < b.0) {
                best = Some((train_mse, iter, render, trainer.net.clone()));
            }
        }
        if let Some(grads) = &eval.grads {
            trainer.step(iter, grads)?;
        }
    }

    let (_, output_iter, denoised, network) = best.expect("the final iteration is a checkpoint");
    warnings.push(format!(
        "criterion not met within {} iterations; emitting the closest checkpoint",
        config.max_iters
    ));
    Ok(RunResult {
        denoised,
        stop_iter: config.max_iters,
        stop_reason: StopReason::MaxIters,
        output_iter,
        estimate,
        threshold,
        trajectory: RunTrajectory { rows },
        layer_norms,
        network,
        warnings,
        elapsed: started.elapsed(),
    })
}

/// A reference image compared against the render at every checkpoint.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub label: String,
    pub image: Image,
}

impl LabeledImage {
    pub fn new(label: impl Into<String>, image: Image) -> Self {
        Self {
            label: label.into(),
            image,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitRow {
    pub iter: usize,
    pub train_mse: f64,
    /// PSNR of the render against each reference, in label order.
    pub psnr: Vec<f64>,
}

/// Training curve of an unstopped fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrajectory {
    pub labels: Vec<String>,
    pub rows: Vec<FitRow>,
}

impl FitTrajectory {
    pub fn column(&self, label: &str) -> Option<Vec<f64>> {
        let k = self.labels.iter().position(|l| l == label)?;
        Some(self.rows.iter().map(|r| r.psnr[k]).collect())
    }

    pub fn row_at(&self, iter: usize) -> Option<&FitRow> {
        self.rows.iter().find(|r| r.iter == iter)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = ["iter".to_string(), "train_mse".to_string()]
            .into_iter()
            .chain(self.labels.iter().map(|l| format!("psnr_{l}")))
            .collect();
        w.write_record(&header).map_err(csv_error)?;
        for r in &self.rows {
            let record: Vec<String> = [r.iter.to_string(), r.train_mse.to_string()]
                .into_iter()
                .chain(r.psnr.iter().map(|p| p.to_string()))
                .collect();
            w.write_record(&record).map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }
}

/// Trains on `target` for `config.max_iters` iterations without stopping,
/// recording the training MSE and the PSNR against each reference every
/// `check_every` iterations.
pub fn fit_trajectory(
    target: &Image,
    config: &RunConfig,
    references: &[LabeledImage],
) -> Result<FitTrajectory> {
    for r in references {
        check_reference(target, &r.image)?;
    }
    let mut trainer = Trainer::new(target, config, config.lambda)?;
    let mut rows = Vec::new();
    for iter in 0..=config.max_iters {
        let is_check = iter % config.check_every == 0 || iter == config.max_iters;
        let last = iter == config.max_iters;
        let eval = trainer.evaluate(iter, is_check, !last)?;
        if is_check {
            let outputs = eval.outputs.as_deref().expect("outputs at checkpoints");
            let render = trainer.render(outputs);
            rows.push(FitRow {
                iter,
                train_mse: mse_slices(outputs, target.data()),
                psnr: references
                    .iter()
                    .map(|r| psnr_from_mse(mse_slices(render.data(), r.image.data())))
                    .collect(),
            });
        }
        if let Some(grads) = &eval.grads {
            trainer.step(iter, grads)?;
        }
    }
    Ok(FitTrajectory {
        labels: references.iter().map(|r| r.label.clone()).collect(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayArm {
    pub lambda: f64,
    pub stop_iter: usize,
    pub stop_reason: StopReason,
    pub psnr_clean: Option<f64>,
    pub layer_norms_at_stop: Vec<f64>,
}

/// Outcome of training the same image from the same initialization with and
/// without selective decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayComparison {
    pub with_decay: DecayArm,
    pub without_decay: DecayArm,
    /// Latest checkpoint reached by both arms.
    pub common_iter: usize,
    pub norms_with_decay: Vec<f64>,
    pub norms_without_decay: Vec<f64>,
    pub decayed_layers: Vec<usize>,
}

impl DecayComparison {
    /// `norm_without − norm_with` per layer at the common iteration.
    pub fn norm_reduction(&self) -> Vec<f64> {
        self.norms_without_decay
            .iter()
            .zip(&self.norms_with_decay)
            .map(|(a, b)| a - b)
            .collect()
    }
}

/// Runs [`denoise`] with `config.lambda` and with `λ = 0` from the same seed.
pub fn compare_decay(noisy: &Image, config: &RunConfig) -> Result<DecayComparison> {
    let (decayed, plain) = rayon::join(
        || run(noisy, config, config.lambda),
        || run(noisy, config, 0.0),
    );
    let (decayed, plain) = (decayed?, plain?);
    let arm = |r: &RunResult, lambda: f64| DecayArm {
        lambda,
        stop_iter: r.stop_iter,
        stop_reason: r.stop_reason,
        psnr_clean: config
            .record_psnr_vs
            .as_ref()
            .map(|clean| psnr_from_mse(mse_slices(r.denoised.data(), clean.data()))),
        layer_norms_at_stop: r.network.weight_norms(),
    };
    let common_iter = decayed.stop_iter.min(plain.stop_iter);
    let norms = |r: &RunResult| {
        r.norms_at(common_iter)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::InvalidArgument(format!("no checkpoint at iteration {common_iter}")))
    };
    let layers = decayed.network.layers().len();
    Ok(DecayComparison {
        with_decay: arm(&decayed, config.lambda),
        without_decay: arm(&plain, 0.0),
        common_iter,
        norms_with_decay: norms(&decayed)?,
        norms_without_decay: norms(&plain)?,
        decayed_layers: vec![layers.saturating_sub(2), layers - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{contaminate, Level, NoiseSpec};
    use crate::synthetic::textured;

    fn small_config() -> RunConfig {
        RunConfig {
            hidden_layers: 2,
            width: Width::Fixed(16),
            lr: 1e-3,
            max_iters: 60,
            check_every: 10,
            ..RunConfig::default()
        }
    }

    fn noisy_pair(size: usize, sigma255: f64) -> (Image, Image) {
        let clean = textured(size, size);
        let c = contaminate(&clean, &NoiseSpec::gaussian(Level::Fixed(sigma255), 3)).unwrap();
        (clean, c.clamped())
    }

    #[test]
    fn width_parsing_and_serde() {
        assert_eq!("auto".parse::<Width>().unwrap(), Width::Auto);
        assert_eq!("32".parse::<Width>().unwrap(), Width::Fixed(32));
        assert!("0".parse::<Width>().is_err());
        assert!("wide".parse::<Width>().is_err());
        assert_eq!(serde_json::to_string(&Width::Auto).unwrap(), "\"auto\"");
        assert_eq!(serde_json::from_str::<Width>("48").unwrap(), Width::Fixed(48));
        assert_eq!(Width::Auto.resolve(256, 256), 64);
    }

    #[test]
    fn zero_threshold_runs_to_max_iters() {
        let (_, noisy) = noisy_pair(16, 25.0);
        let config = RunConfig {
            sigma_override: Some(0.0),
            ..small_config()
        };
        let result = denoise(&noisy, &config).unwrap();
        assert_eq!(result.stop_reason, StopReason::MaxIters);
        assert_eq!(result.stop_iter, 60);
        let best = result
            .trajectory
            .rows
            .iter()
            .min_by(|a, b| a.train_mse.total_cmp(&b.train_mse))
            .unwrap();
        assert_eq!(result.output_iter, best.iter);
        assert_eq!(result.trajectory.rows.iter().filter(|r| r.stopped).count(), 1);
        assert!(result.trajectory.rows.last().unwrap().stopped);
    }

    #[test]
    fn criterion_stops_at_first_crossing() {
        let (clean, noisy) = noisy_pair(24, 25.0);
        let config = RunConfig {
            sigma_override: Some(0.25),
            record_psnr_vs: Some(clean),
            max_iters: 400,
            ..small_config()
        };
        let result = denoise(&noisy, &config).unwrap();
        assert_eq!(result.stop_reason, StopReason::CriterionMet);
        assert_eq!(result.stop_iter % config.check_every, 0);
        let rows = &result.trajectory.rows;
        let stop = rows.last().unwrap();
        assert!(stop.stopped && stop.train_mse <= 0.0625);
        assert!(rows[..rows.len() - 1].iter().all(|r| r.train_mse > 0.0625 && !r.stopped));
        assert!(stop.psnr_clean.is_some());
        assert_eq!(result.denoised, result.network.render(24, 24).unwrap());
    }

    #[test]
    fn criterion_at_iteration_zero_warns() {
        let (_, noisy) = noisy_pair(16, 5.0);
        let config = RunConfig {
            sigma_override: Some(1.0),
            ..small_config()
        };
        let result = denoise(&noisy, &config).unwrap();
        assert_eq!(result.stop_iter, 0);
        assert_eq!(result.stop_reason, StopReason::CriterionMet);
        assert_eq!(result.warnings.len(), 1);
    }

    #[test]
    fn runs_are_deterministic() {
        let (_, noisy) = noisy_pair(16, 15.0);
        let config = RunConfig {
            sigma_override: Some(0.0),
            max_iters: 25,
            ..small_config()
        };
        let a = denoise(&noisy, &config).unwrap();
        let b = denoise(&noisy, &config).unwrap();
        assert_eq!(a.denoised, b.denoised);
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.network, b.network);
        // the final iteration is a checkpoint even off the cadence
        assert_eq!(a.trajectory.rows.last().unwrap().iter, 25);
    }

    #[test]
    fn mini_batch_mode_trains() {
        let (_, noisy) = noisy_pair(16, 10.0);
        let config = RunConfig {
            sigma_override: Some(0.0),
            batch_size: Some(64),
            ..small_config()
        };
        let result = denoise(&noisy, &config).unwrap();
        let rows = &result.trajectory.rows;
        assert!(rows.last().unwrap().train_mse < rows[0].train_mse);
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let traj = RunTrajectory {
            rows: vec![
                TrajectoryRow {
                    iter: 0,
                    train_mse: 0.25,
                    threshold: 0.01,
                    stopped: false,
                    psnr_clean: None,
                    psnr_noisy: Some(f64::INFINITY),
                },
                TrajectoryRow {
                    iter: 10,
                    train_mse: 0.005,
                    threshold: 0.01,
                    stopped: true,
                    psnr_clean: Some(31.5),
                    psnr_noisy: Some(20.1),
                },
            ],
        };
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("iter,train_mse,threshold,stopped,psnr_clean,psnr_noisy\n"));
        assert!(text.contains("0,0.25,0.01,false,,inf\n"));
        assert_eq!(RunTrajectory::read_csv(buf.as_slice()).unwrap(), traj);
        assert!(RunTrajectory::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn fit_trajectory_records_references() {
        let (clean, noisy) = noisy_pair(16, 20.0);
        let config = RunConfig {
            max_iters: 40,
            ..small_config()
        };
        let refs = [
            LabeledImage::new("clean", clean.clone()),
            LabeledImage::new("noisy", noisy.clone()),
        ];
        let traj = fit_trajectory(&noisy, &config, &refs).unwrap();
        assert_eq!(traj.labels, ["clean", "noisy"]);
        assert_eq!(traj.rows.len(), 5);
        assert!(traj.rows.last().unwrap().train_mse < traj.rows[0].train_mse);
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("iter,train_mse,psnr_clean,psnr_noisy\n"));
        let bad = [LabeledImage::new("x", Image::filled(8, 8, 1, 0.0).unwrap())];
        assert!(fit_trajectory(&noisy, &config, &bad).is_err());
    }

    #[test]
    fn compare_decay_reports_every_layer() {
        let (_, noisy) = noisy_pair(16, 20.0);
        let config = RunConfig {
            hidden_layers: 6,
            sigma_override: Some(0.0),
            max_iters: 30,
            lambda: 0.5,
            ..small_config()
        };
        let report = compare_decay(&noisy, &config).unwrap();
        assert_eq!(report.norms_with_decay.len(), 7);
        assert_eq!(report.with_decay.layer_norms_at_stop.len(), 7);
        assert_eq!(report.decayed_layers, vec![5, 6]);
        assert_eq!(report.common_iter, 30);
        let reduction = report.norm_reduction();
        assert!(reduction[5] > 0.0 && reduction[6] > 0.0);
    }

    #[test]
    fn compare_decay_without_lambda_is_symmetric() {
        let (_, noisy) = noisy_pair(16, 20.0);
        let config = RunConfig {
            sigma_override: Some(0.0),
            max_iters: 20,
            lambda: 0.0,
            ..small_config()
        };
        let report = compare_decay(&noisy, &config).unwrap();
        assert_eq!(report.with_decay, report.without_decay);
        assert_eq!(report.norms_with_decay, report.norms_without_decay);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (_, noisy) = noisy_pair(16, 5.0);
        for config in [
            RunConfig { max_iters: 0, ..small_config() },
            RunConfig { check_every: 0, ..small_config() },
            RunConfig { lambda: -1.0, ..small_config() },
            RunConfig { sigma_override: Some(-0.1), ..small_config() },
        ] {
            assert!(matches!(denoise(&noisy, &config), Err(Error::InvalidArgument(_))));
        }
        let tiny = Image::filled(5, 5, 1, 0.5).unwrap();
        assert!(matches!(
            denoise(&tiny, &small_config()),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn divergence_names_the_iteration() {
        let (_, noisy) = noisy_pair(16, 5.0);
        let config = RunConfig {
            lr: 1e300,
            sigma_override: Some(0.0),
            ..small_config()
        };
        match denoise(&noisy, &config) {
            Err(Error::NonFiniteOutput(msg)) => assert!(msg.contains("iteration"), "{msg}"),
            other => panic!("expected divergence, got {:?}", other.map(|r| r.stop_iter)),
        }
    }
}
