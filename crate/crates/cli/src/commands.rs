use std::path::{Path, PathBuf};

use inr_denoise::denoise::{
    self as den, DecayComparison, LabeledImage, RunConfig, RunManifest, StopReason, Width,
};
use inr_denoise::noise::{contaminate, Level, NoiseKind, NoiseSpec};
use inr_denoise::siren::SirenConfig;
use inr_denoise::{checkpoint, estimate_sigma, load_png, mse, psnr, save_png, Image, SirenNetwork};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::CliError;
use crate::manifest::{read_json, sibling, write_file, write_json, FileRecord, Sigma, TOOL_VERSION};
use crate::{
    CompareDecayArgs, DenoiseArgs, EstimateArgs, EvalArgs, FeaturesArgs, KindArg, SynthArgs,
    TrainArgs, TrajectoryArgs,
};

impl TrainArgs {
    fn to_config(&self, seed: u64) -> Result<RunConfig, CliError> {
        let width: Width = self
            .width
            .parse()
            .map_err(|_| CliError::Usage(format!("--width: expected a positive integer or 'auto', got '{}'", self.width)))?;
        if self.layers == 0 {
            return Err(CliError::Usage("--layers must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CliError::Usage(format!("--lr must be positive, got {}", self.lr)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CliError::Usage(format!("--lambda must be non-negative, got {}", self.lambda)));
        }
        if self.max_iters == 0 {
            return Err(CliError::Usage("--max-iters must be at least 1".into()));
        }
        if self.check_every == 0 {
            return Err(CliError::Usage("--check-every must be at least 1".into()));
        }
        if let Some(s) = self.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(CliError::Usage(format!("--sigma must be non-negative, got {s}")));
            }
        }
        if self.batch_size == Some(0) {
            return Err(CliError::Usage("--batch-size must be at least 1".into()));
        }
        Ok(RunConfig {
            hidden_layers: self.layers,
            width,
            lr: self.lr,
            lambda: self.lambda,
            max_iters: self.max_iters,
            check_every: self.check_every,
            seed,
            sigma_override: self.sigma.map(|s| s / 255.0),
            omega0: self.omega0,
            omega_hidden: self.omega_hidden,
            batch_size: self.batch_size,
            record_psnr_vs: None,
        })
    }
}

fn load(path: &Path) -> Result<Image, CliError> {
    Ok(load_png(path)?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DenoiseManifest {
    pub command: String,
    pub tool_version: String,
    pub input: FileRecord,
    pub clean: Option<FileRecord>,
    pub output: PathBuf,
    pub trajectory: PathBuf,
    pub checkpoint: Option<PathBuf>,
    /// Noise level the stopping threshold was derived from.
    pub sigma: Sigma,
    pub psnr_clean: Option<f64>,
    pub run: RunManifest,
}

pub fn denoise(args: DenoiseArgs, seed: u64) -> Result<(), CliError> {
    let (input, clean_path, mut config) = match &args.replay {
        Some(path) => {
            let recorded: DenoiseManifest = read_json(path)?;
            let input = args.input.clone().unwrap_or_else(|| recorded.input.path.clone());
            recorded.input.verify(&input)?;
            if let Some(clean) = &recorded.clean {
                clean.verify(&clean.path)?;
            }
            (input, recorded.clean.map(|c| c.path), recorded.run.config)
        }
        None => (
            args.input.clone().expect("clap requires --in without --replay"),
            args.clean.clone(),
            args.train.to_config(seed)?,
        ),
    };
    let noisy = load(&input)?;
    let clean = clean_path.as_deref().map(load).transpose()?;
    config.record_psnr_vs = clean.clone();

    let result = den::denoise(&noisy, &config)?;
    let trajectory_path = sibling(&args.out, "trajectory.csv");
    let manifest_path = sibling(&args.out, "manifest.json");

    save_png(&result.denoised, &args.out)?;
    let mut csv = Vec::new();
    result.trajectory.write_csv(&mut csv)?;
    write_file(&trajectory_path, &csv)?;
    if let Some(path) = &args.checkpoint {
        checkpoint::save(&result.network, path)?;
    }
    let psnr_clean = clean.as_ref().map(|c| psnr(&result.denoised, c)).transpose()?;
    let manifest = DenoiseManifest {
        command: "denoise".into(),
        tool_version: TOOL_VERSION.into(),
        input: FileRecord::of(&input)?,
        clean: clean_path.as_deref().map(FileRecord::of).transpose()?,
        output: args.out.clone(),
        trajectory: trajectory_path,
        checkpoint: args.checkpoint.clone(),
        sigma: Sigma::from_unit(result.estimate.sigma),
        psnr_clean: psnr_clean.filter(|p| p.is_finite()),
        run: result.manifest(&config),
    };
    write_json(&manifest_path, &manifest)?;

    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let reason = match result.stop_reason {
        StopReason::CriterionMet => "criterion met",
        StopReason::MaxIters => "iteration cap reached",
    };
    print!(
        "stopped at iteration {} ({reason}); sigma {:.3}/255",
        result.stop_iter,
        result.estimate.sigma255()
    );
    match psnr_clean {
        Some(p) => println!("; psnr vs clean {p:.3} dB"),
        None => println!(),
    }
    Ok(())
}

fn level(fixed: Option<f64>, range: Option<&[f64]>) -> Option<Level> {
    match (fixed, range) {
        (Some(v), _) => Some(Level::Fixed(v)),
        (None, Some(r)) => Some(Level::Range(r[0], r[1])),
        (None, None) => None,
    }
}

pub fn synth(args: SynthArgs, seed: u64) -> Result<(), CliError> {
    let sigma = level(args.sigma, args.sigma_range.as_deref())
        .ok_or_else(|| CliError::Usage("synth needs --sigma or --sigma-range".into()))?;
    let alpha = level(args.alpha, args.alpha_range.as_deref());
    let spec = match args.kind {
        KindArg::Gaussian => {
            if alpha.is_some() {
                return Err(CliError::Usage(
                    "--alpha and --alpha-range apply only to --kind poisson-gaussian".into(),
                ));
            }
            NoiseSpec::gaussian(sigma, seed)
        }
        KindArg::PoissonGaussian => {
            NoiseSpec::poisson_gaussian(sigma, alpha.unwrap_or(Level::Range(50.0, 100.0)), seed)
        }
    };
    let clean = load(&args.input)?;
    let noisy = contaminate(&clean, &spec)?;
    save_png(&noisy.clamped(), &args.out)?;
    let kind = match spec.kind {
        NoiseKind::Gaussian => "gaussian",
        NoiseKind::PoissonGaussian => "poisson_gaussian",
    };
    let manifest = json!({
        "command": "synth",
        "tool_version": TOOL_VERSION,
        "kind": kind,
        "sigma255": noisy.sigma255,
        "sigma_unit_scale": noisy.sigma255 / 255.0,
        "alpha": noisy.alpha,
        "seed": seed,
        "spec": spec,
        "input": FileRecord::of(&args.input)?,
        "output": args.out,
    });
    write_json(&sibling(&args.out, "manifest.json"), &manifest)
}

/// Prints `value` and, if requested, writes it with a manifest next to it.
fn report(value: &serde_json::Value, out: Option<&Path>, manifest: serde_json::Value) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(value).expect("json serializes"));
    if let Some(out) = out {
        write_json(out, value)?;
        write_json(&sibling(out, "manifest.json"), &manifest)?;
    }
    Ok(())
}

pub fn estimate(args: EstimateArgs) -> Result<(), CliError> {
    let est = estimate_sigma(&load(&args.input)?)?;
    let value = json!({
        "sigma_unit_scale": est.sigma,
        "sigma_255_scale": est.sigma255(),
        "patch_size": est.patch_size,
    });
    let manifest = json!({
        "command": "estimate",
        "tool_version": TOOL_VERSION,
        "input": FileRecord::of(&args.input)?,
        "output": args.out,
        "iterations_used": est.iterations_used,
    });
    report(&value, args.out.as_deref(), manifest)
}

/// Infinite PSNR is written as the string `"inf"`.
pub fn psnr_json(p: f64) -> serde_json::Value {
    if p.is_infinite() {
        json!("inf")
    } else {
        json!(p)
    }
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let test = load(&args.test)?;
    let reference = load(&args.reference)?;
    let value = json!({
        "psnr_db": psnr_json(psnr(&test, &reference)?),
        "mse": mse(&test, &reference)?,
    });
    let manifest = json!({
        "command": "eval",
        "tool_version": TOOL_VERSION,
        "test": FileRecord::of(&args.test)?,
        "reference": FileRecord::of(&args.reference)?,
        "output": args.out,
    });
    report(&value, args.out.as_deref(), manifest)
}

fn parse_reference(spec: &str) -> Result<(String, PathBuf), CliError> {
    match spec.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => {
            Ok((label.to_string(), PathBuf::from(path)))
        }
        _ => Err(CliError::Usage(format!("--ref expects LABEL=PATH, got '{spec}'"))),
    }
}

pub fn trajectory(args: TrajectoryArgs, seed: u64) -> Result<(), CliError> {
    let config = args.train.to_config(seed)?;
    let refs = args
        .references
        .iter()
        .map(|s| parse_reference(s))
        .collect::<Result<Vec<_>, _>>()?;
    let target = load(&args.target)?;
    let labeled = refs
        .iter()
        .map(|(label, path)| Ok(LabeledImage::new(label.clone(), load(path)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let traj = den::fit_trajectory(&target, &config, &labeled)?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    write_file(&args.out, &csv)?;

    let references = refs
        .iter()
        .map(|(label, path)| Ok(json!({ "label": label, "file": FileRecord::of(path)? })))
        .collect::<Result<Vec<_>, CliError>>()?;
    let manifest = json!({
        "command": "trajectory",
        "tool_version": TOOL_VERSION,
        "target": FileRecord::of(&args.target)?,
        "references": references,
        "config": config,
        "network": config.siren_config(&target),
        "output": args.out,
    });
    write_json(&sibling(&args.out, "manifest.json"), &manifest)
}

/// Background value between tiles of the contact sheet.
const SHEET_GAP_VALUE: f64 = 1.0;
const SHEET_GAP: usize = 2;

pub fn features(args: FeaturesArgs, seed: u64) -> Result<(), CliError> {
    if args.neurons == 0 || args.size == 0 {
        return Err(CliError::Usage("--neurons and --size must be at least 1".into()));
    }
    let net = match &args.checkpoint {
        Some(path) => checkpoint::load(path)?,
        None => SirenNetwork::init(SirenConfig::new(args.layers, args.width, 1), seed)?,
    };
    let config = *net.config();
    let per_layer = args.neurons.min(config.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<Vec<usize>> = (0..config.hidden_layers)
        .map(|_| {
            let mut picks = rand::seq::index::sample(&mut rng, config.width, per_layer).into_vec();
            picks.sort_unstable();
            picks
        })
        .collect();

    let tile = args.size;
    let sheet_h = config.hidden_layers * tile + (config.hidden_layers - 1) * SHEET_GAP;
    let sheet_w = per_layer * tile + (per_layer - 1) * SHEET_GAP;
    let mut data = vec![SHEET_GAP_VALUE; sheet_h * sheet_w];
    for (layer, neurons) in chosen.iter().enumerate() {
        for (slot, &neuron) in neurons.iter().enumerate() {
            let map = net.neuron_feature(layer, neuron, tile, tile)?;
            let (top, left) = (layer * (tile + SHEET_GAP), slot * (tile + SHEET_GAP));
            for r in 0..tile {
                let row = &map.values.data()[r * tile..(r + 1) * tile];
                let start = (top + r) * sheet_w + left;
                data[start..start + tile].copy_from_slice(row);
            }
        }
    }
    save_png(&Image::new(sheet_h, sheet_w, 1, data)?, &args.out)?;

    let source = match &args.checkpoint {
        Some(path) => json!({ "checkpoint": FileRecord::of(path)? }),
        None => json!({ "fresh_init_seed": seed }),
    };
    let manifest = json!({
        "command": "features",
        "tool_version": TOOL_VERSION,
        "seed": seed,
        "source": source,
        "network": config,
        "tile_size": tile,
        "neurons": chosen,
        "output": args.out,
    });
    write_json(&sibling(&args.out, "manifest.json"), &manifest)
}

#[derive(Debug, Serialize)]
struct DecayReport<'a> {
    comparison: &'a DecayComparison,
    norm_reduction: Vec<f64>,
}

pub fn compare_decay(args: CompareDecayArgs, seed: u64) -> Result<(), CliError> {
    let mut config = args.train.to_config(seed)?;
    let noisy = load(&args.input)?;
    config.record_psnr_vs = args.clean.as_deref().map(load).transpose()?;
    let comparison = den::compare_decay(&noisy, &config)?;
    let report = DecayReport {
        comparison: &comparison,
        norm_reduction: comparison.norm_reduction(),
    };
    write_json(&args.out, &report)?;
    let manifest = json!({
        "command": "compare-decay",
        "tool_version": TOOL_VERSION,
        "input": FileRecord::of(&args.input)?,
        "clean": args.clean.as_deref().map(FileRecord::of).transpose()?,
        "config": config,
        "network": config.siren_config(&noisy),
        "output": args.out,
    });
    write_json(&sibling(&args.out, "manifest.json"), &manifest)?;
    println!(
        "common iteration {}; last-two-layer norm reduction {:?}",
        comparison.common_iter,
        &report.norm_reduction[report.norm_reduction.len().saturating_sub(2)..]
    );
    Ok(())
}
