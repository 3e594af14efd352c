//! Exact reverse-mode gradients of the mean squared loss for the fixed SIREN
//! topology, plus a central-difference oracle.
//!
//! The loss is `mean over samples of ‖f(c) − g(c)‖²`: squared error summed over
//! output channels, averaged over the batch. A plain sum over all
//! pixels equals this loss times the batch size.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{CoordGrid, Image};
use crate::kernel;
use crate::siren::{input_map, Layer, SirenNetwork, CHUNK_ROWS};

/// Coordinates paired with their target values.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    points: Vec<[f64; 2]>,
    targets: Vec<f64>,
    out_dim: usize,
}

impl Batch {
    pub fn new(points: Vec<[f64; 2]>, targets: Vec<f64>, out_dim: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("batch must be nonempty".into()));
        }
        if targets.len() != points.len() * out_dim {
            return Err(Error::ShapeMismatch(format!(
                "{} points need {} targets, got {}",
                points.len(),
                points.len() * out_dim,
                targets.len()
            )));
        }
        Ok(Self {
            points,
            targets,
            out_dim,
        })
    }

    /// Every pixel of `image` at its grid coordinate.
    pub fn full(grid: &CoordGrid, image: &Image) -> Result<Self> {
        check_grid(grid, image)?;
        Self::new(grid.coords().to_vec(), image.data().to_vec(), image.channels())
    }

    /// The pixels at `indices` (row-major pixel indices).
    pub fn select(grid: &CoordGrid, image: &Image, indices: &[usize]) -> Result<Self> {
        check_grid(grid, image)?;
        let c = image.channels();
        let mut points = Vec::with_capacity(indices.len());
        let mut targets = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= grid.len() {
                return Err(Error::IndexOutOfRange(format!(
                    "pixel index {i} beyond {} pixels",
                    grid.len()
                )));
            }
            points.push(grid.coords()[i]);
            targets.extend_from_slice(&image.data()[i * c..(i + 1) * c]);
        }
        Self::new(points, targets, c)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
}

fn check_grid(grid: &CoordGrid, image: &Image) -> Result<()> {
    if grid.height() != image.height() || grid.width() != image.width() {
        return Err(Error::ShapeMismatch(format!(
            "grid {}x{} vs image {}x{}",
            grid.height(),
            grid.width(),
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

/// Partial derivatives shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    layers: Vec<Layer>,
}

impl GradientSet {
    pub fn zeros_like(net: &SirenNetwork) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| Layer::zeros(l.outputs(), l.inputs()))
                .collect(),
        }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn matches(&self, net: &SirenNetwork) -> bool {
        self.layers.len() == net.layers().len()
            && self
                .layers
                .iter()
                .zip(net.layers())
                .all(|(g, l)| g.same_shape(l))
    }

    /// All gradient entries, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight().iter().chain(l.bias()).copied())
            .collect()
    }

    fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }
}

/// Result of one forward/backward sweep over a batch.
#[derive(Debug, Clone)]
pub(crate) struct Sweep {
    pub loss: f64,
    pub grads: GradientSet,
    /// Network outputs, `|batch| × out_dim`.
    pub outputs: Vec<f64>,
}

/// Loss and its exact gradient with respect to every parameter.
pub fn loss_and_grad(net: &SirenNetwork, batch: &Batch) -> Result<(f64, GradientSet)> {
    let sweep = sweep(net, batch)?;
    Ok((sweep.loss, sweep.grads))
}

pub(crate) fn sweep(net: &SirenNetwork, batch: &Batch) -> Result<Sweep> {
    check_batch(net, batch)?;
    let out_dim = batch.out_dim;
    let scale = 2.0 / batch.len() as f64;
    // fixed chunk boundaries and in-order reduction keep the result independent
    // of the number of worker threads
    let parts: Vec<(f64, GradientSet, Vec<f64>)> = batch
        .points
        .par_chunks(CHUNK_ROWS)
        .zip(batch.targets.par_chunks(CHUNK_ROWS * out_dim))
        .map(|(points, targets)| chunk_backward(net, points, targets, scale))
        .collect();

    let mut loss_sum = 0.0;
    let mut grads = GradientSet::zeros_like(net);
    let mut outputs = Vec::with_capacity(batch.targets.len());
    for (sq, g, out) in parts {
        loss_sum += sq;
        grads.add_assign(&g);
        outputs.extend(out);
    }
    let loss = loss_sum / batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteOutput(format!("loss is {loss}")));
    }
    if grads.layers.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFiniteOutput("gradient has non-finite entries".into()));
    }
    Ok(Sweep {
        loss,
        grads,
        outputs,
    })
}

fn check_batch(net: &SirenNetwork, batch: &Batch) -> Result<()> {
    if batch.out_dim != net.config().out_dim {
        return Err(Error::ShapeMismatch(format!(
            "batch has {} channels, network outputs {}",
            batch.out_dim,
            net.config().out_dim
        )));
    }
    Ok(())
}

/// Forward and backward pass over one chunk. Returns the summed squared error,
/// the chunk's gradient contribution (already scaled by `scale`) and the outputs.
fn chunk_backward(
    net: &SirenNetwork,
    points: &[[f64; 2]],
    targets: &[f64],
    scale: f64,
) -> (f64, GradientSet, Vec<f64>) {
    let n = points.len();
    let config = net.config();
    let layers = net.layers();

    // inputs[i] feeds layer i; derivs[i] holds ω cos(ω z) for hidden layer i
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut derivs: Vec<Vec<f64>> = Vec::with_capacity(layers.len() - 1);
    let mut current = input_map(points);
    for (index, layer) in layers.iter().enumerate() {
        let mut z = vec![0.0; n * layer.outputs()];
        kernel::affine(&current, n, layer.inputs(), layer.weight(), layer.bias(), &mut z);
        if let Some(omega) = config.frequency(index) {
            let mut d = vec![0.0; z.len()];
            kernel::sine_activation(&mut z, &mut d, omega);
            derivs.push(d);
        }
        inputs.push(std::mem::replace(&mut current, z));
    }
    let outputs = current;

    let mut sq = 0.0;
    let mut delta: Vec<f64> = outputs
        .iter()
        .zip(targets)
        .map(|(y, t)| {
            let r = y - t;
            sq += r * r;
            scale * r
        })
        .collect();

    let mut grads = GradientSet::zeros_like(net);
    for index in (0..layers.len()).rev() {
        let layer = &layers[index];
        let g = &mut grads.layers[index];
        let m = layer.outputs();
        kernel::accumulate_weight_grad(&delta, &inputs[index], n, m, &mut g.weight);
        for row in delta.chunks_exact(m) {
            for (b, d) in g.bias.iter_mut().zip(row) {
                *b += d;
            }
        }
        if index > 0 {
            let mut upstream = vec![0.0; n * layer.inputs()];
            kernel::backprop_input(&delta, n, m, layer.weight(), &mut upstream);
            for (u, d) in upstream.iter_mut().zip(&derivs[index - 1]) {
                *u *= d;
            }
            delta = upstream;
        }
    }
    (sq, grads, outputs)
}

/// Loss only, without gradients.
pub fn batch_loss(net: &SirenNetwork, batch: &Batch) -> Result<f64> {
    check_batch(net, batch)?;
    let outputs = net.forward_points(&batch.points)?;
    let sum: f64 = outputs
        .iter()
        .zip(&batch.targets)
        .map(|(y, t)| (y - t) * (y - t))
        .sum();
    Ok(sum / batch.len() as f64)
}

/// Central differences `(L(θ + h e) − L(θ − h e)) / 2h` for every scalar parameter.
pub fn finite_diff_grad(net: &SirenNetwork, batch: &Batch, step: f64) -> Result<GradientSet> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let mut probe = net.clone();
    let mut grads = GradientSet::zeros_like(net);
    for index in 0..net.layers().len() {
        let weights = net.layers()[index].weight().len();
        let biases = net.layers()[index].bias().len();
        for k in 0..weights + biases {
            let mut eval = |delta: f64| -> Result<f64> {
                let layer = &mut probe.layers_mut()[index];
                let slot = if k < weights {
                    &mut layer.weight_mut()[k]
                } else {
                    &mut layer.bias_mut()[k - weights]
                };
                let original = *slot;
                *slot = original + delta;
                let loss = batch_loss(&probe, batch);
                let layer = &mut probe.layers_mut()[index];
                if k < weights {
                    layer.weight_mut()[k] = original;
                } else {
                    layer.bias_mut()[k - weights] = original;
                }
                loss
            };
            let d = (eval(step)? - eval(-step)?) / (2.0 * step);
            let g = &mut grads.layers[index];
            if k < weights {
                g.weight[k] = d;
            } else {
                g.bias[k - weights] = d;
            }
        }
    }
    Ok(grads)
}
