use inr_denoise::noise::{contaminate, Level, NoiseSpec};
use inr_denoise::synthetic::textured;
use inr_denoise::{
    checkpoint, loss_and_grad, make_grid, width_for, AdamState, Batch, GradientSet, Image,
    SirenConfig, SirenNetwork,
};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 24,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn siren_config() -> impl Strategy<Value = SirenConfig> {
    (1usize..4, 1usize..12, prop_oneof![Just(1usize), Just(3usize)], 0.5f64..40.0, 0.5f64..40.0)
        .prop_map(|(layers, width, out, w0, wh)| SirenConfig {
            omega0: w0,
            omega_hidden: wh,
            ..SirenConfig::new(layers, width, out)
        })
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn width_rule_has_floor_and_scales(h in 1usize..2048, w in 1usize..2048) {
        let n = width_for(h, w, 256);
        let exact = 256.0 * (h * w) as f64 / (512.0 * 512.0);
        prop_assert!(n >= 16);
        prop_assert_eq!(n, (exact.round() as usize).max(16));
    }

    #[test]
    fn init_respects_bounds(cfg in siren_config(), seed in any::<u64>()) {
        let net = SirenNetwork::init(cfg, seed).unwrap();
        prop_assert_eq!(&net, &SirenNetwork::init(cfg, seed).unwrap());
        for (i, layer) in net.layers().iter().enumerate() {
            let bound = if i == 0 {
                1.0 / cfg.in_dim as f64
            } else {
                (6.0 / layer.inputs() as f64).sqrt() / cfg.omega_hidden
            };
            prop_assert_eq!(
                (layer.outputs(), layer.inputs()),
                cfg.layer_shape(i)
            );
            prop_assert!(layer.weight().iter().all(|w| w.abs() <= bound));
            prop_assert!(layer.bias().iter().all(|b| *b == 0.0));
        }
    }

    #[test]
    fn forward_is_bounded_by_output_layer(cfg in siren_config(), seed in any::<u64>(), h in 1usize..9, w in 1usize..9) {
        let net = SirenNetwork::init(cfg, seed).unwrap();
        let grid = make_grid(h, w);
        let out = net.forward(&grid).unwrap();
        prop_assert_eq!(&out, &net.forward(&grid).unwrap());
        let head = net.layers().last().unwrap();
        for (k, v) in out.iter().enumerate() {
            let o = k % cfg.out_dim;
            let row = &head.weight()[o * head.inputs()..(o + 1) * head.inputs()];
            let bound = head.bias()[o].abs() + row.iter().map(|x| x.abs()).sum::<f64>();
            prop_assert!(v.abs() <= bound + 1e-12);
        }
        let img = net.render(h, w).unwrap();
        let clamped: Vec<f64> = out.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        prop_assert_eq!(img.data(), clamped.as_slice());
    }

    #[test]
    fn neuron_features_lie_in_unit_interval(cfg in siren_config(), seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let net = SirenNetwork::init(cfg, seed).unwrap();
        let layer = pick.index(cfg.hidden_layers);
        let neuron = pick.index(cfg.width);
        let map = net.neuron_feature(layer, neuron, 7, 5).unwrap();
        prop_assert_eq!((map.values.height(), map.values.width()), (7, 5));
        prop_assert!(map.values.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn loss_is_nonnegative_and_zero_at_interpolation(cfg in siren_config(), seed in any::<u64>(), shift in -0.5f64..0.5) {
        let net = SirenNetwork::init(cfg, seed).unwrap();
        let grid = make_grid(3, 4);
        let out = net.forward(&grid).unwrap();
        let exact = Batch::new(grid.coords().to_vec(), out.clone(), cfg.out_dim).unwrap();
        let (loss, grads) = loss_and_grad(&net, &exact).unwrap();
        prop_assert_eq!(loss, 0.0);
        prop_assert!(grads.flatten().iter().all(|g| *g == 0.0));

        prop_assume!(shift != 0.0);
        let moved: Vec<f64> = out.iter().map(|v| v + shift).collect();
        let batch = Batch::new(grid.coords().to_vec(), moved, cfg.out_dim).unwrap();
        let (loss, _) = loss_and_grad(&net, &batch).unwrap();
        prop_assert!(loss > 0.0);
        prop_assert!((loss - cfg.out_dim as f64 * shift * shift).abs() < 1e-12);
    }

    #[test]
    fn adam_second_moments_stay_nonnegative(seed in any::<u64>(), steps in 1usize..6, scale in 1e-3f64..10.0) {
        let mut net = SirenNetwork::init(SirenConfig::new(2, 4, 1), seed).unwrap();
        let mut state = AdamState::new(&net, 1e-3, 1e-3).unwrap();
        for k in 0..steps {
            let mut g = GradientSet::zeros_like(&net);
            for (i, layer) in g.layers_mut().iter_mut().enumerate() {
                for (j, w) in layer.weight_mut().iter_mut().enumerate() {
                    *w = scale * (((seed as usize + i * 31 + j * 7 + k) % 13) as f64 - 6.0);
                }
            }
            state.step(&mut net, &g).unwrap();
        }
        prop_assert!(state.second_moments().iter().all(|l| l.weight().iter().chain(l.bias()).all(|v| *v >= 0.0)));
        prop_assert_eq!(state.step_count as usize, steps);
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(cfg in siren_config(), seed in any::<u64>()) {
        let net = SirenNetwork::init(cfg, seed).unwrap();
        prop_assert_eq!(checkpoint::from_json(&checkpoint::to_json(&net)).unwrap(), net);
    }

    #[test]
    fn contamination_is_deterministic_with_constant_sigma(seed in any::<u64>(), lo in 0.0f64..20.0, span in 0.0f64..20.0) {
        let clean = textured(6, 5);
        let spec = NoiseSpec::poisson_gaussian(Level::Range(lo, lo + span), Level::Range(50.0, 100.0), seed);
        let a = contaminate(&clean, &spec).unwrap();
        let b = contaminate(&clean, &spec).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.sigma255 >= lo && a.sigma255 <= lo + span);
        let alpha = a.alpha.unwrap();
        prop_assert!((50.0..=100.0).contains(&alpha));
        let clamped: Image = a.clamped();
        prop_assert!(clamped.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
