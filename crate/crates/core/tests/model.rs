//! Model wiring: lengths, parameter counts and the residual output.
#![allow(clippy::needless_range_loop)]

mod common;

use dwtsep::model::{self, Model, ModelConfig};
use dwtsep::resampling::ResamplerKind;
use dwtsep::tensor;
use dwtsep::FeatureMap;
use rand::Rng;

#[test]
fn tiny_config_layer_shapes() {
    let cfg = ModelConfig::tiny(ResamplerKind::DwtHaar);
    assert_eq!(
        cfg.layer_shapes(),
        vec![(2, 1, 3), (4, 4, 3), (2, 4, 3), (1, 3, 1)]
    );
    assert_eq!(model::count_params(&cfg), 90);
}

#[test]
fn tiny_output_lengths_by_hand() {
    // 64 -conv3-> 62 -down-> 31 -conv3-> 29 -up-> 58 (dwt) or 57 (linear)
    // then concat with the cropped skip and -conv3-> 56 or 55.
    for (kind, out) in [
        (ResamplerKind::DwtHaar, 56),
        (ResamplerKind::DwtLazy, 56),
        (ResamplerKind::DecimateLinear, 55),
        (ResamplerKind::AvgPoolLinear, 55),
    ] {
        let m = Model::build(&ModelConfig::tiny(kind), 0).unwrap();
        let est = m.separate(&FeatureMap::zeros(64, 1).unwrap()).unwrap();
        assert_eq!(est.len(), 2);
        assert!(est.iter().all(|e| e.shape() == (out, 1)), "{kind}");
        assert_eq!(model::plan_lengths(m.config(), 64).unwrap().output_len, out);
    }
}

#[test]
fn odd_skip_is_padded_and_trimmed() {
    // 65 -conv3-> 63 (odd, padded to 64) -down-> 32 -conv3-> 30 -up-> 60;
    // the dwt drop leaves 59, then -conv3-> 57.
    let m = Model::build(&ModelConfig::tiny(ResamplerKind::DwtHaar), 0).unwrap();
    let (est, cache) = m.forward(&FeatureMap::zeros(65, 1).unwrap()).unwrap();
    assert_eq!(est[0].time_len(), 57);
    assert_eq!(cache.output_len(), 57);
}

#[test]
fn fit_lengths_agrees_with_forward_search() {
    for kind in ResamplerKind::ALL {
        let cfg = ModelConfig::tiny(kind);
        let m = Model::build(&cfg, 0).unwrap();
        let outputs: Vec<Option<usize>> = (0..200)
            .map(|n| {
                FeatureMap::zeros(n.max(1), 1)
                    .ok()
                    .filter(|_| n > 0)
                    .and_then(|x| m.separate(&x).ok())
                    .map(|e| e[0].time_len())
            })
            .collect();
        for desired in 1..120 {
            let brute = (0..200)
                .find(|&n| outputs[n].is_some_and(|o| o >= desired))
                .unwrap();
            let (input, output) = model::fit_lengths(&cfg, desired).unwrap();
            assert_eq!(input, brute, "{kind} desired {desired}");
            assert_eq!(Some(output), outputs[input]);
        }
        let mut last = 0;
        for n in 1..200 {
            if let Some(o) = outputs[n] {
                assert!(o >= last, "{kind} output shrank at {n}");
                last = o;
            }
        }
    }
}

#[test]
fn minimum_input_for_tiny_config() {
    // 9 -conv3-> 7 (pad) -> 8 -down-> 4 -conv3-> 2 -up-> 4 - 1 = 3 -conv3-> 1.
    assert_eq!(
        model::fit_lengths(&ModelConfig::tiny(ResamplerKind::DwtHaar), 1).unwrap(),
        (9, 1)
    );
    let m = Model::build(&ModelConfig::tiny(ResamplerKind::DwtHaar), 0).unwrap();
    let err = m.separate(&FeatureMap::zeros(8, 1).unwrap()).unwrap_err();
    assert!(
        err.to_string().contains("minimum input length is 9"),
        "{err}"
    );
}

#[test]
fn full_size_parameter_counts() {
    // Only the encoder is widened; the decoder growth stays at 24.
    let count = |kind, growth| {
        let mut cfg = ModelConfig::full(kind);
        cfg.encoder_growth = growth;
        model::count_params(&cfg)
    };
    assert_eq!(count(ResamplerKind::DwtHaar, 24), 15_505_098);
    assert_eq!(count(ResamplerKind::DwtLazy, 24), 15_505_098);
    assert_eq!(count(ResamplerKind::DecimateLinear, 24), 10_263_498);
    assert_eq!(count(ResamplerKind::DecimateLinear, 48), 28_312_170);
    assert_eq!(count(ResamplerKind::AvgPoolLinear, 48), 28_312_170);
}

#[test]
fn count_params_matches_built_model() {
    for kind in ResamplerKind::ALL {
        let cfg = ModelConfig::tiny(kind);
        let m = Model::build(&cfg, 3).unwrap();
        assert_eq!(m.params().num_scalars(), model::count_params(&cfg));
    }
}

fn random_config(rng: &mut rand_chacha::ChaCha8Rng) -> ModelConfig {
    let kind = ResamplerKind::ALL[rng.gen_range(0..4)];
    let factor = kind.channel_factor();
    ModelConfig {
        levels: rng.gen_range(1..=4),
        num_sources: rng.gen_range(2..=4),
        input_channels: rng.gen_range(1..=2),
        encoder_growth: rng.gen_range(1..=3),
        mid_channels: factor * rng.gen_range(1..=3),
        decoder_growth: factor * rng.gen_range(1..=2),
        encoder_kernel: 1 + 2 * rng.gen_range(0..=3),
        decoder_kernel: 1 + 2 * rng.gen_range(0..=2),
        resampler: kind,
        leaky_slope: 0.2,
    }
}

#[test]
fn estimates_sum_to_cropped_input() {
    let mut rng = common::rng(77);
    for case in 0..20 {
        let cfg = random_config(&mut rng);
        let m = Model::build(&cfg, case).unwrap();
        let (min_in, _) = model::fit_lengths(&cfg, 1).unwrap();
        let len = min_in + rng.gen_range(0..40);
        let x = common::random_map(&mut rng, len, cfg.input_channels);
        let est = m.separate(&x).unwrap();
        assert_eq!(est.len(), cfg.num_sources);
        let mut sum = FeatureMap::zeros(est[0].time_len(), cfg.input_channels).unwrap();
        for e in &est {
            sum.add_assign(e).unwrap();
        }
        let cropped = tensor::center_crop(&x, sum.time_len()).unwrap();
        let err = sum.max_abs_diff(&cropped).unwrap();
        assert!(err < 1e-6, "case {case} {cfg:?}: {err}");
    }
}

#[test]
fn zero_output_layer_returns_input_as_last_source() {
    let cfg = ModelConfig::tiny(ResamplerKind::DwtHaar);
    let mut m = Model::build(&cfg, 4).unwrap();
    let last = m.params().layers().len() - 1;
    let flat_len = m.params().num_scalars();
    let tail = m.params().layers()[last].len();
    let mut flat = m.params().to_flat();
    for v in &mut flat[flat_len - tail..] {
        *v = 0.0;
    }
    m.params_mut().assign_flat(&flat).unwrap();
    let x = common::random_map(&mut common::rng(4), 64, 1);
    let est = m.separate(&x).unwrap();
    assert!(est[0].data().iter().all(|&v| v == 0.0));
    let cropped = tensor::center_crop(&x, est[1].time_len()).unwrap();
    assert_eq!(est[1].data(), cropped.data());
}

#[test]
fn build_is_deterministic() {
    let cfg = ModelConfig::tiny(ResamplerKind::DecimateLinear);
    let a = Model::build(&cfg, 21).unwrap().params().to_flat();
    let b = Model::build(&cfg, 21).unwrap().params().to_flat();
    let c = Model::build(&cfg, 22).unwrap().params().to_flat();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn config_round_trips_through_kv() {
    let mut cfg = ModelConfig::full(ResamplerKind::AvgPoolLinear);
    cfg.leaky_slope = 0.137;
    let mut kv = dwtsep::kv::KvMap::default();
    cfg.to_kv(&mut kv);
    assert_eq!(ModelConfig::from_kv(&kv).unwrap(), cfg);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = ModelConfig::tiny(ResamplerKind::DwtHaar);
    cfg.mid_channels = 3;
    assert!(cfg.validate().is_err());
    let mut cfg = ModelConfig::tiny(ResamplerKind::DwtHaar);
    cfg.encoder_kernel = 0;
    assert!(cfg.validate().is_err());
    let mut cfg = ModelConfig::tiny(ResamplerKind::DwtHaar);
    cfg.num_sources = 1;
    assert!(cfg.validate().is_err());
    assert!(Model::build(&cfg, 0).is_err());
}

#[test]
fn default_segment_is_admissible_and_tight() {
    for kind in ResamplerKind::ALL {
        let cfg = ModelConfig::full(kind);
        let plan = model::plan_lengths(&cfg, 147_443).unwrap();
        assert_eq!(plan.output_len, 16_389, "{kind}");
        assert_eq!(model::fit_lengths(&cfg, 16_389).unwrap(), (147_443, 16_389));
        assert_eq!(
            model::largest_input_within(&cfg, 147_443).unwrap().0,
            147_443
        );
    }
}
