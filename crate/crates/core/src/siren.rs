//! The sinusoidal coordinate network.
//!
//! Hidden layers compute `sin(ω · (W a + b))`; the output layer is linear and
//! unclamped. Grid coordinates in `[0, 1]²` are mapped to `[-1, 1]²` before the
//! first layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{make_grid, CoordGrid, Image};
use crate::kernel;

pub const DEFAULT_OMEGA: f64 = 30.0;
pub const MIN_WIDTH: usize = 16;

/// Rows processed together in one batched pass.
pub(crate) const CHUNK_ROWS: usize = 512;

/// Hidden width that grows with pixel count: `256 · H·W / 512²` for `base = 256`,
/// floored at [`MIN_WIDTH`].
pub fn width_for(height: usize, width: usize, base: usize) -> usize {
    let scaled = base as f64 * (height * width) as f64 / (512.0 * 512.0);
    (scaled.round() as usize).max(MIN_WIDTH)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirenConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    pub omega0: f64,
    pub omega_hidden: f64,
}

impl SirenConfig {
    pub fn new(hidden_layers: usize, width: usize, out_dim: usize) -> Self {
        Self {
            hidden_layers,
            width,
            in_dim: 2,
            out_dim,
            omega0: DEFAULT_OMEGA,
            omega_hidden: DEFAULT_OMEGA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.width == 0 {
            return Err(Error::InvalidArgument(
                "hidden_layers and width must be at least 1".into(),
            ));
        }
        if self.in_dim != 2 {
            return Err(Error::InvalidArgument(format!(
                "in_dim must be 2, got {}",
                self.in_dim
            )));
        }
        if self.out_dim != 1 && self.out_dim != 3 {
            return Err(Error::InvalidArgument(format!(
                "out_dim must be 1 or 3, got {}",
                self.out_dim
            )));
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite())
            || !(self.omega_hidden > 0.0 && self.omega_hidden.is_finite())
        {
            return Err(Error::InvalidArgument(
                "frequency scales must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    /// Number of weight layers (hidden layers plus the output layer).
    pub fn layer_count(&self) -> usize {
        self.hidden_layers + 1
    }

    /// `(outputs, inputs)` of layer `index`.
    pub fn layer_shape(&self, index: usize) -> (usize, usize) {
        let inputs = if index == 0 { self.in_dim } else { self.width };
        let outputs = if index == self.hidden_layers {
            self.out_dim
        } else {
            self.width
        };
        (outputs, inputs)
    }

    /// Frequency scale of the sine following layer `index`, `None` for the output layer.
    pub fn frequency(&self, index: usize) -> Option<f64> {
        match index {
            0 => Some(self.omega0),
            i if i < self.hidden_layers => Some(self.omega_hidden),
            _ => None,
        }
    }
}

/// One affine map: `weight` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub(crate) outputs: usize,
    pub(crate) inputs: usize,
    pub(crate) weight: Vec<f64>,
    pub(crate) bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self {
            outputs,
            inputs,
            weight: vec![0.0; outputs * inputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn new(outputs: usize, inputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != outputs * inputs || bias.len() != outputs {
            return Err(Error::ShapeMismatch(format!(
                "layer {outputs}x{inputs} given {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            outputs,
            inputs,
            weight,
            bias,
        })
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn same_shape(&self, other: &Layer) -> bool {
        self.outputs == other.outputs && self.inputs == other.inputs
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.weight.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SirenNetwork {
    config: SirenConfig,
    layers: Vec<Layer>,
}

/// Post-sine activation of one hidden neuron over an image grid, min-max
/// normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub layer_index: usize,
    pub neuron_index: usize,
    pub values: Image,
}

impl SirenNetwork {
    /// Random initialization: first-layer weights on `±1/in_dim`, later weights on
    /// `±sqrt(6/fan_in)/omega_hidden`, zero biases.
    pub fn init(config: SirenConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..config.layer_count())
            .map(|index| {
                let (outputs, inputs) = config.layer_shape(index);
                let bound = if index == 0 {
                    1.0 / inputs as f64
                } else {
                    (6.0 / inputs as f64).sqrt() / config.omega_hidden
                };
                let weight = (0..outputs * inputs)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect();
                Layer {
                    outputs,
                    inputs,
                    weight,
                    bias: vec![0.0; outputs],
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// Assembles a network from explicit parameters, checking shapes and finiteness.
    pub fn from_layers(config: SirenConfig, layers: Vec<Layer>) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.layer_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} layers, got {}",
                config.layer_count(),
                layers.len()
            )));
        }
        for (index, layer) in layers.iter().enumerate() {
            let (outputs, inputs) = config.layer_shape(index);
            if layer.outputs != outputs || layer.inputs != inputs {
                return Err(Error::ShapeMismatch(format!(
                    "layer {index} is {}x{}, expected {outputs}x{inputs}",
                    layer.outputs, layer.inputs
                )));
            }
            if !layer.is_finite() {
                return Err(Error::NonFiniteOutput(format!(
                    "layer {index} has non-finite parameters"
                )));
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &SirenConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Frobenius norm of each layer's weight matrix.
    pub fn weight_norms(&self) -> Vec<f64> {
        self.layers.iter().map(Layer::frobenius_norm).collect()
    }

    /// Evaluates the network on every grid point; returns `|grid| × out_dim` values.
    pub fn forward(&self, grid: &CoordGrid) -> Result<Vec<f64>> {
        self.forward_points(grid.coords())
    }

    pub fn forward_points(&self, points: &[[f64; 2]]) -> Result<Vec<f64>> {
        let out_dim = self.config.out_dim;
        let mut out = vec![0.0; points.len() * out_dim];
        for (chunk, dst) in points
            .chunks(CHUNK_ROWS)
            .zip(out.chunks_mut(CHUNK_ROWS * out_dim))
        {
            let acts = self.activations(chunk, self.layers.len());
            dst.copy_from_slice(acts.last().expect("at least one layer"));
        }
        if let Some(pos) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOutput(format!(
                "network output at sample {} is {}",
                pos / out_dim,
                out[pos]
            )));
        }
        Ok(out)
    }

    /// Outputs of the first `depth` layers for a chunk of points, post-activation
    /// for hidden layers.
    fn activations(&self, points: &[[f64; 2]], depth: usize) -> Vec<Vec<f64>> {
        let n = points.len();
        let mut current = input_map(points);
        let mut all = Vec::with_capacity(depth);
        for (index, layer) in self.layers.iter().enumerate().take(depth) {
            let mut z = vec![0.0; n * layer.outputs];
            kernel::affine(
                &current,
                n,
                layer.inputs,
                &layer.weight,
                &layer.bias,
                &mut z,
            );
            if let Some(omega) = self.config.frequency(index) {
                kernel::sine_in_place(&mut z, omega);
            }
            current = z.clone();
            all.push(z);
        }
        all
    }

    /// Evaluates on the `height`×`width` grid and clamps to `[0, 1]`.
    pub fn render(&self, height: usize, width: usize) -> Result<Image> {
        let grid = make_grid(height, width);
        let out = self.forward(&grid)?;
        Image::new(
            height,
            width,
            self.config.out_dim,
            out.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
    }

    /// Activation of hidden neuron `neuron_index` in layer `layer_index` over the
    /// image grid. A constant activation maps to 0.5 everywhere.
    pub fn neuron_feature(
        &self,
        layer_index: usize,
        neuron_index: usize,
        height: usize,
        width: usize,
    ) -> Result<FeatureMap> {
        if layer_index >= self.config.hidden_layers {
            return Err(Error::IndexOutOfRange(format!(
                "layer {layer_index} is not a hidden layer (have {})",
                self.config.hidden_layers
            )));
        }
        if neuron_index >= self.config.width {
            return Err(Error::IndexOutOfRange(format!(
                "neuron {neuron_index} out of range for width {}",
                self.config.width
            )));
        }
        let grid = make_grid(height, width);
        let stride = self.config.width;
        let mut raw: Vec<f64> = Vec::with_capacity(grid.len());
        for chunk in grid.coords().chunks(CHUNK_ROWS) {
            let acts = self.activations(chunk, layer_index + 1);
            let layer = &acts[layer_index];
            raw.extend(layer.iter().skip(neuron_index).step_by(stride));
        }
        if let Some(v) = raw.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOutput(format!(
                "activation of layer {layer_index} neuron {neuron_index} is {v}"
            )));
        }
        let (lo, hi) = raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let values = if hi > lo {
            raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
        } else {
            vec![0.5; raw.len()]
        };
        Ok(FeatureMap {
            layer_index,
            neuron_index,
            values: Image::new(height, width, 1, values)?,
        })
    }
}

/// Affine map `u = 2c - 1` from the `[0, 1]²` grid to `[-1, 1]²`, flattened.
pub(crate) fn input_map(points: &[[f64; 2]]) -> Vec<f64> {
    points
        .iter()
        .flat_map(|&[x, y]| [2.0 * x - 1.0, 2.0 * y - 1.0])
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// 2 → 1 hidden neuron → 1 with `w0 = (1, 0)`, `ω0 = 1`, output `2 h + 0.5`.
    pub(crate) fn single_neuron_net() -> SirenNetwork {
        let mut config = SirenConfig::new(1, 1, 1);
        config.omega0 = 1.0;
        SirenNetwork::from_layers(
            config,
            vec![
                Layer::new(1, 2, vec![1.0, 0.0], vec![0.0]).unwrap(),
                Layer::new(1, 1, vec![2.0], vec![0.5]).unwrap(),
            ],
        )
        .unwrap()
    }

    fn zero_net(hidden: usize, width: usize, out: usize) -> SirenNetwork {
        let config = SirenConfig::new(hidden, width, out);
        let layers = (0..config.layer_count())
            .map(|i| {
                let (o, n) = config.layer_shape(i);
                Layer::zeros(o, n)
            })
            .collect();
        SirenNetwork::from_layers(config, layers).unwrap()
    }

    #[test]
    fn width_rule() {
        assert_eq!(width_for(512, 512, 256), 256);
        assert_eq!(width_for(256, 256, 256), 64);
        assert_eq!(width_for(16, 16, 256), 16);
        assert_eq!(width_for(128, 128, 256), 16);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let config = SirenConfig::new(3, 64, 1);
        let a = SirenNetwork::init(config, 9).unwrap();
        let b = SirenNetwork::init(config, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, SirenNetwork::init(config, 10).unwrap());
        assert!(a.layers()[0].weight().iter().all(|w| w.abs() <= 0.5));
        let bound = (6.0f64 / 64.0).sqrt() / 30.0;
        assert!((bound - 0.010206).abs() < 1e-6);
        for layer in &a.layers()[1..] {
            assert!(layer.weight().iter().all(|w| w.abs() <= bound));
            assert!(layer.bias().iter().all(|&b| b == 0.0));
        }
        // samples should actually spread across the interval
        let max = a.layers()[1]
            .weight()
            .iter()
            .fold(0.0f64, |m, w| m.max(w.abs()));
        assert!(max > 0.9 * bound);
    }

    #[test]
    fn init_respects_bounds_width_16() {
        let net = SirenNetwork::init(SirenConfig::new(2, 16, 3), 0).unwrap();
        assert!(net.layers()[0].weight().iter().all(|w| (-0.5..=0.5).contains(w)));
        assert_eq!(net.layers().len(), 3);
        assert_eq!(net.layers()[2].outputs(), 3);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = zero_net(3, 8, 1);
        let out = net.forward(&make_grid(4, 5)).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        let img = net.render(4, 5).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_bias_renders_constant() {
        let mut net = zero_net(2, 4, 3);
        let last = net.layers_mut().last_mut().unwrap();
        last.bias_mut().fill(0.5);
        let img = net.render(3, 3).unwrap();
        assert_eq!(img.channels(), 3);
        assert!(img.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn single_neuron_forward() {
        let net = single_neuron_net();
        let out = net.forward_points(&[[0.5, 0.5], [1.0, 0.5]]).unwrap();
        assert_eq!(out[0], 0.5);
        assert!((out[1] - (2.0 * 1f64.sin() + 0.5)).abs() < 1e-12);
        assert!((out[1] - 2.18294).abs() < 1e-5);
    }

    #[test]
    fn render_is_clamped_forward() {
        let net = SirenNetwork::init(SirenConfig::new(2, 16, 1), 3).unwrap();
        let raw = net.forward(&make_grid(7, 9)).unwrap();
        let img = net.render(7, 9).unwrap();
        for (r, v) in raw.iter().zip(img.data()) {
            assert_eq!(r.clamp(0.0, 1.0), *v);
        }
    }

    #[test]
    fn forward_is_bounded_by_output_layer() {
        let net = SirenNetwork::init(SirenConfig::new(3, 12, 1), 5).unwrap();
        let last = net.layers().last().unwrap();
        let bound = last.bias()[0].abs() + last.weight().iter().map(|w| w.abs()).sum::<f64>();
        let out = net.forward(&make_grid(20, 20)).unwrap();
        assert!(out.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn forward_flags_non_finite() {
        let mut net = single_neuron_net();
        net.layers_mut()[1].weight_mut()[0] = f64::NAN;
        assert!(matches!(
            net.forward_points(&[[0.2, 0.2]]),
            Err(Error::NonFiniteOutput(_))
        ));
        assert!(SirenNetwork::from_layers(*net.config(), net.layers().to_vec()).is_err());
    }

    #[test]
    fn feature_of_zero_network_is_flat() {
        let net = zero_net(2, 4, 1);
        let map = net.neuron_feature(1, 3, 5, 6).unwrap();
        assert!(map.values.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn feature_matches_closed_form() {
        let net = single_neuron_net();
        let (h, w) = (3, 11);
        let map = net.neuron_feature(0, 0, h, w).unwrap();
        // sin(u) with u = 2x - 1 is increasing on [-1, 1]: min at x=0, max at x=1
        let lo = (-1f64).sin();
        let hi = 1f64.sin();
        for r in 0..h {
            for c in 0..w {
                let u = 2.0 * c as f64 / (w - 1) as f64 - 1.0;
                let want = (u.sin() - lo) / (hi - lo);
                assert!((map.values.get(r, c, 0) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn feature_index_errors() {
        let net = SirenNetwork::init(SirenConfig::new(2, 8, 1), 0).unwrap();
        assert!(matches!(
            net.neuron_feature(2, 0, 4, 4),
            Err(Error::IndexOutOfRange(_))
        ));
        assert!(matches!(
            net.neuron_feature(0, 8, 4, 4),
            Err(Error::IndexOutOfRange(_))
        ));
        let map = net.neuron_feature(1, 7, 9, 9).unwrap();
        assert!(map.values.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn chunking_does_not_change_forward() {
        let net = SirenNetwork::init(SirenConfig::new(2, 8, 1), 1).unwrap();
        let grid = make_grid(40, 30);
        let all = net.forward(&grid).unwrap();
        let single: Vec<f64> = grid
            .coords()
            .iter()
            .flat_map(|p| net.forward_points(std::slice::from_ref(p)).unwrap())
            .collect();
        for (a, b) in all.iter().zip(&single) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
