//! Adam with decoupled weight decay restricted to a chosen set of layers.
//!
//! After the bias-corrected Adam update, weights (never biases) of every layer
//! in `decayed_layers` are multiplied by `1 − lr·λ`. By default the decayed
//! layers are the output layer and the last hidden layer.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::grad::GradientSet;
use crate::siren::{Layer, SirenNetwork};

pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_LAMBDA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u32,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lambda: f64,
    pub decayed_layers: BTreeSet<usize>,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

fn zeros_like(net: &SirenNetwork) -> Vec<Layer> {
    net.layers()
        .iter()
        .map(|l| Layer::zeros(l.outputs(), l.inputs()))
        .collect()
}

impl AdamState {
    pub fn new(net: &SirenNetwork, lr: f64, lambda: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {lambda}")));
        }
        let last = net.layers().len() - 1;
        let decayed_layers = [last.saturating_sub(1), last].into_iter().collect();
        Ok(Self {
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lambda,
            decayed_layers,
            m: zeros_like(net),
            v: zeros_like(net),
        })
    }

    /// Replaces the set of layers whose weights are decayed.
    pub fn with_decayed_layers(mut self, layers: impl IntoIterator<Item = usize>) -> Result<Self> {
        let set: BTreeSet<usize> = layers.into_iter().collect();
        if let Some(&bad) = set.iter().find(|&&i| i >= self.m.len()) {
            return Err(Error::IndexOutOfRange(format!(
                "layer {bad} cannot be decayed, network has {} layers",
                self.m.len()
            )));
        }
        self.decayed_layers = set;
        Ok(self)
    }

    pub fn first_moments(&self) -> &[Layer] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Layer] {
        &self.v
    }

    /// Applies one update to `net` in place.
    pub fn step(&mut self, net: &mut SirenNetwork, grads: &GradientSet) -> Result<()> {
        if !grads.matches(net) || self.m.len() != net.layers().len() {
            return Err(Error::ShapeMismatch(
                "gradient or optimizer state does not match the network".into(),
            ));
        }
        if self.step_count == i32::MAX as u32 {
            return Err(Error::InvalidArgument("step counter exhausted".into()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.lr * self.lambda;

        for (index, layer) in net.layers_mut().iter_mut().enumerate() {
            let g = &grads.layers()[index];
            let (m, v) = (&mut self.m[index], &mut self.v[index]);
            let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / correction1;
                    let v_hat = *v / correction2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            };
            update(&mut layer.weight, g.weight(), &mut m.weight, &mut v.weight);
            update(&mut layer.bias, g.bias(), &mut m.bias, &mut v.bias);
            if self.lambda > 0.0 && self.decayed_layers.contains(&index) {
                for w in &mut layer.weight {
                    *w *= decay;
                }
            }
            if !layer.is_finite() {
                return Err(Error::NonFiniteOutput(format!(
                    "layer {index} diverged at optimizer step {}",
                    self.step_count
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siren::SirenConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net() -> SirenNetwork {
        SirenNetwork::init(SirenConfig::new(6, 8, 1), 11).unwrap()
    }

    #[test]
    fn new_state_defaults() {
        let n = net();
        let s = AdamState::new(&n, 1e-4, 0.001).unwrap();
        assert_eq!(s.lambda, 0.001);
        assert_eq!(s.decayed_layers, [5, 6].into_iter().collect());
        assert_eq!((s.beta1, s.beta2, s.eps, s.step_count), (0.9, 0.999, 1e-8, 0));
        assert!(s.first_moments().iter().chain(s.second_moments()).all(|l| {
            l.weight().iter().chain(l.bias()).all(|&x| x == 0.0)
        }));
        assert!(AdamState::new(&n, 0.0, 0.0).is_err());
        assert!(AdamState::new(&n, 1e-4, -1.0).is_err());
        assert!(s.clone().with_decayed_layers([7]).is_err());
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut n = net();
        let before = n.clone();
        let mut s = AdamState::new(&n, 1e-4, 0.0).unwrap();
        s.step(&mut n, &GradientSet::zeros_like(&before)).unwrap();
        assert_eq!(n, before);
    }

    #[test]
    fn zero_gradient_decay_touches_only_last_two_weights() {
        let mut n = net();
        let before = n.clone();
        let mut s = AdamState::new(&n, 1e-4, 0.001).unwrap();
        s.step(&mut n, &GradientSet::zeros_like(&before)).unwrap();
        for (i, (a, b)) in n.layers().iter().zip(before.layers()).enumerate() {
            assert_eq!(a.bias(), b.bias());
            for (x, y) in a.weight().iter().zip(b.weight()) {
                if i >= 5 {
                    assert_eq!(*x, y * (1.0 - 1e-4 * 0.001));
                } else {
                    assert_eq!(x, y);
                }
            }
        }
    }

    #[test]
    fn repeated_decay_follows_geometric_law() {
        let mut n = net();
        let before = n.weight_norms();
        let mut s = AdamState::new(&n, 1e-3, 0.01).unwrap();
        let zero = GradientSet::zeros_like(&n);
        let steps = 250;
        for _ in 0..steps {
            s.step(&mut n, &zero).unwrap();
        }
        let factor = (1.0f64 - 1e-3 * 0.01).powi(steps);
        for (i, (now, was)) in n.weight_norms().iter().zip(&before).enumerate() {
            if i >= 5 {
                assert!((now - was * factor).abs() < 1e-12);
            } else {
                assert_eq!(now, was);
            }
        }
    }

    #[test]
    fn first_step_closed_form() {
        let config = SirenConfig::new(1, 1, 1);
        let layers = vec![
            Layer::new(1, 2, vec![0.0, 0.0], vec![0.0]).unwrap(),
            Layer::new(1, 1, vec![0.3], vec![0.0]).unwrap(),
        ];
        let mut n = SirenNetwork::from_layers(config, layers).unwrap();
        let mut g = GradientSet::zeros_like(&n);
        g.layers_mut()[1].weight_mut()[0] = 1.0;
        let mut s = AdamState::new(&n, 0.01, 0.0).unwrap();
        s.step(&mut n, &g).unwrap();
        let delta = n.layers()[1].weight()[0] - 0.3;
        assert!((delta + 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    /// Independent scalar Adam, written out per parameter.
    fn scalar_adam(p: f64, grads: &[f64], lr: f64) -> f64 {
        let (mut p, mut m, mut v) = (p, 0.0, 0.0);
        for (t, &g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = 0.9 * m + (1.0 - 0.9) * g;
            v = 0.999 * v + (1.0 - 0.999) * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            p -= lr * mh / (vh.sqrt() + 1e-8);
        }
        p
    }

    #[test]
    fn matches_scalar_reference_without_decay() {
        let mut n = SirenNetwork::init(SirenConfig::new(2, 3, 1), 5).unwrap();
        let start = n.clone();
        let mut s = AdamState::new(&n, 3e-3, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let count = start.parameter_count();
        let sequence: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..count).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        for flat in &sequence {
            let mut g = GradientSet::zeros_like(&n);
            let mut it = flat.iter();
            for layer in g.layers_mut() {
                for w in layer.weight_mut() {
                    *w = *it.next().unwrap();
                }
                for b in layer.bias_mut() {
                    *b = *it.next().unwrap();
                }
            }
            s.step(&mut n, &g).unwrap();
        }
        let start_flat: Vec<f64> = GradientSet::from_layers(start.layers().to_vec()).flatten();
        let end_flat: Vec<f64> = GradientSet::from_layers(n.layers().to_vec()).flatten();
        for k in 0..count {
            let history: Vec<f64> = sequence.iter().map(|g| g[k]).collect();
            assert_eq!(end_flat[k], scalar_adam(start_flat[k], &history, 3e-3));
        }
    }

    #[test]
    fn non_finite_update_is_reported() {
        let mut n = net();
        let mut g = GradientSet::zeros_like(&n);
        g.layers_mut()[2].weight_mut()[0] = f64::NAN;
        let mut s = AdamState::new(&n, 1e-4, 0.0).unwrap();
        assert!(matches!(s.step(&mut n, &g), Err(Error::NonFiniteOutput(_))));
    }
}
