use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sinkdem::diffnet::{LayerSpec, Tensor};
use sinkdem::losses::LossWeights;
use sinkdem::model::{
    build_siran, condition_prior, d_spatial_attention, generator_forward, minmax_backward, minmax_normalize, psa,
    psa_backward, psa_forward, read_manifest, sa_backward, sa_forward, write_manifest, PsaParams, SiranConfig,
    SiranTrainer, TrainBatch, TrainConfig,
};
use sinkdem::Error;

fn random<T: sinkdem::diffnet::Real>(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    Tensor::<f64>::from_f64(shape, &data).unwrap().cast()
}

fn tiny(patch: usize) -> SiranConfig {
    SiranConfig {
        base_channels: 4,
        n_dmrb_g: 2,
        n_dmrb_d: 2,
        rcb_per_dmrb: 2,
        mlp_width: 8,
        patch_size: patch,
        ..SiranConfig::default()
    }
}

fn batch(cfg: &SiranConfig, n: usize, seed: u64) -> TrainBatch {
    let p = cfg.patch_size;
    let s = cfg.input_size();
    let y: Tensor<f32> = random(&[n, 1, p, p], seed, 0.0, 1.0);
    let x = if s == p {
        let mut x = y.clone();
        let noise: Tensor<f32> = random(&[n, 1, p, p], seed + 1, -0.1, 0.1);
        x.add_assign(&noise);
        x
    } else {
        random(&[n, 1, s, s], seed + 1, 0.0, 1.0)
    };
    TrainBatch {
        x,
        z: random(&[n, 3, p, p], seed + 2, 0.0, 1.0),
        y,
    }
}

fn dmrb_count(c: usize, r: usize) -> usize {
    let rcbs = r * 2 * (9 * c * c + c);
    let fuses: usize = (2..=r).map(|k| k * c * c + c).sum();
    rcbs + fuses + (r + 1) * c * c + c
}

#[test]
fn generator_parameter_count_matches_formula() {
    let cfg = SiranConfig {
        patch_size: 16,
        ..SiranConfig::toy()
    };
    let (g, _) = build_siran(&cfg, 0).unwrap();
    let c = cfg.base_channels;
    let h = c / 2;
    let heads = 9 * h + h + 9 * 3 * h + h;
    let expected = heads + cfg.n_dmrb_g * dmrb_count(c, cfg.rcb_per_dmrb) + 9 * c + 1 + 2;
    assert_eq!(g.net.parameter_count(), expected);
}

#[test]
fn discriminator_parameter_count_matches_formula() {
    let cfg = SiranConfig {
        patch_size: 16,
        ..SiranConfig::toy()
    };
    let (_, d) = build_siran(&cfg, 0).unwrap();
    let (c, m) = (cfg.base_channels, cfg.mlp_width);
    let enc = (9 * c + c) + (9 * c * c + c);
    let expected = enc + cfg.n_dmrb_d * dmrb_count(c, cfg.rcb_per_dmrb) + 9 * c * c + c + c * m + m + m + 1;
    assert_eq!(d.net.parameter_count(), expected);
    assert_eq!(d.block_taps.len(), cfg.n_dmrb_d);
}

#[test]
fn toy_generator_preserves_shape() {
    let cfg = SiranConfig::toy();
    let (g, d) = build_siran(&cfg, 3).unwrap();
    let x: Tensor<f32> = random(&[1, 1, 64, 64], 1, 0.0, 1.0);
    let z: Tensor<f32> = random(&[1, 3, 64, 64], 2, 0.0, 1.0);
    let a = Tensor::full(&[1, 1, 64, 64], 1.0);
    let y = generator_forward(&g, &x, &z, &a).unwrap();
    assert_eq!(y.shape(), &[1, 1, 64, 64]);
    let acts = d.forward(&x).unwrap();
    assert_eq!(acts.get(d.net.output()).shape(), &[1, 1]);
    for &t in &d.block_taps {
        assert_eq!(acts.get(t).shape(), &[1, 32, 16, 16]);
    }
}

#[test]
fn upsampling_generator_maps_coarse_to_patch() {
    let cfg = SiranConfig {
        scale_factor: 2,
        ..tiny(16)
    };
    let (g, _) = build_siran(&cfg, 0).unwrap();
    let x: Tensor<f32> = random(&[2, 1, 8, 8], 1, 0.0, 1.0);
    let z: Tensor<f32> = random(&[2, 3, 16, 16], 2, 0.0, 1.0);
    let y = generator_forward(&g, &x, &z, &Tensor::full(&[2, 1, 16, 16], 0.5)).unwrap();
    assert_eq!(y.shape(), &[2, 1, 16, 16]);
}

#[test]
fn global_skip_passes_input_through() {
    let cfg = tiny(12);
    let (mut g, _) = build_siran(&cfg, 5).unwrap();
    for p in g.net.params_mut() {
        let v = if p.name == "g_skip.weight" { 1.0 } else { 0.0 };
        p.value = Tensor::full(p.value.shape(), v);
    }
    let x: Tensor<f32> = random(&[2, 1, 12, 12], 9, -1.0, 1.0);
    let z: Tensor<f32> = random(&[2, 3, 12, 12], 10, 0.0, 1.0);
    let y = generator_forward(&g, &x, &z, &Tensor::full(&[2, 1, 12, 12], 1.0)).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn untrained_generator_is_near_identity() {
    let cfg = SiranConfig {
        base_channels: 8,
        ..tiny(16)
    };
    let (g, _) = build_siran(&cfg, 2).unwrap();
    let x: Tensor<f32> = random(&[2, 1, 16, 16], 3, 0.0, 1.0);
    let z: Tensor<f32> = random(&[2, 3, 16, 16], 4, 0.0, 1.0);
    let y = generator_forward(&g, &x, &z, &Tensor::full(&[2, 1, 16, 16], 0.5)).unwrap();
    let worst = y.data().iter().zip(x.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(worst > 0.0 && worst < 0.05, "{worst}");
}

#[test]
fn no_batch_norm_layers() {
    let allowed = [
        "input", "conv3x3", "conv1x1", "dense", "leaky_relu", "upsample_bilinear", "concat", "add",
        "global_avg_pool",
    ];
    let (g, d) = build_siran(&SiranConfig { scale_factor: 2, ..tiny(16) }, 0).unwrap();
    for node in g.net.nodes().iter().chain(d.net.nodes()) {
        assert!(allowed.contains(&node.spec.kind_name()), "{}", node.spec.kind_name());
        assert!(!node.name.contains("norm"));
    }
    assert!(g.net.nodes().iter().any(|n| matches!(n.spec, LayerSpec::UpsampleBilinear(2))));
}

#[test]
fn invalid_config_rejected() {
    for cfg in [
        SiranConfig { n_dmrb_d: 0, ..tiny(8) },
        SiranConfig { base_channels: 5, ..tiny(8) },
        SiranConfig { scale_factor: 3, ..tiny(8) },
        SiranConfig { leaky_slope: f64::NAN, ..tiny(8) },
    ] {
        assert!(matches!(build_siran(&cfg, 0), Err(Error::Config(_))));
    }
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.txt");
    let cfg = SiranConfig { leaky_slope: 0.1, ..tiny(24) };
    write_manifest(&cfg, 77, &path).unwrap();
    assert_eq!(read_manifest(&path).unwrap(), (cfg, 77));
    assert!(SiranConfig::from_manifest("base_channels=4\n").is_err());
    assert!(SiranConfig::from_manifest("seed=1\nwidth=3\n").is_err());
}

#[test]
fn attention_hand_example() {
    let tap = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1.0, -2.0, 0.0, 3.0]).unwrap();
    let m = d_spatial_attention(&[tap.clone()], 2, 2).unwrap();
    let expect = [1.0 / 3.0, 2.0 / 3.0, 0.0, 1.0];
    for (a, e) in m.data().iter().zip(expect) {
        assert!((a - e).abs() < 1e-15);
    }
    let twice = d_spatial_attention(&[tap.clone(), tap], 2, 2).unwrap();
    for (a, b) in m.data().iter().zip(twice.data()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn attention_of_zeros_is_zero() {
    let tap = Tensor::<f64>::zeros(&[2, 3, 4, 4]);
    let m = d_spatial_attention(&[tap], 8, 8).unwrap();
    assert_eq!(m.shape(), &[2, 1, 8, 8]);
    assert!(m.data().iter().all(|&v| v == 0.0));
    assert!(matches!(d_spatial_attention(&[], 4, 4), Err(Error::Validation(_))));
}

#[test]
fn attention_resizes_taps_of_different_resolution() {
    let a: Tensor<f64> = random(&[2, 3, 4, 4], 1, -1.0, 1.0);
    let b: Tensor<f64> = random(&[2, 2, 8, 8], 2, -1.0, 1.0);
    let m = d_spatial_attention(&[a, b], 8, 8).unwrap();
    assert_eq!(m.shape(), &[2, 1, 8, 8]);
    for row in m.data().chunks(64) {
        let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }
}

fn fd<F: Fn(&Tensor<f64>) -> f64>(f: F, x: &Tensor<f64>, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol * (1.0 + y.abs()), "coord {i}: {x} vs {y}");
    }
}

#[test]
fn minmax_gradient_matches_finite_differences() {
    let raw: Tensor<f64> = random(&[2, 1, 3, 3], 4, 0.0, 5.0);
    let w: Tensor<f64> = random(&[2, 1, 3, 3], 5, -1.0, 1.0);
    let g = minmax_backward(&raw, &w);
    let num = fd(|r| dot(&minmax_normalize(r), &w), &raw, 1e-6);
    assert_close(g.data(), &num, 1e-7);
    let flat = Tensor::<f64>::full(&[1, 1, 2, 2], 3.0);
    assert!(minmax_backward(&flat, &Tensor::full(&[1, 1, 2, 2], 1.0)).data().iter().all(|&v| v == 0.0));
}

#[test]
fn attention_gradient_matches_finite_differences() {
    let a: Tensor<f64> = random(&[2, 2, 3, 3], 6, -1.0, 1.0);
    let b: Tensor<f64> = random(&[2, 1, 6, 6], 7, -1.0, 1.0);
    let w: Tensor<f64> = random(&[2, 1, 6, 6], 8, -1.0, 1.0);
    let (_, cache) = sa_forward(&[a.clone(), b.clone()], 6, 6).unwrap();
    let grads = sa_backward(&cache, &w);
    let fa = fd(|t| dot(&d_spatial_attention(&[t.clone(), b.clone()], 6, 6).unwrap(), &w), &a, 1e-7);
    let fb = fd(|t| dot(&d_spatial_attention(&[a.clone(), t.clone()], 6, 6).unwrap(), &w), &b, 1e-7);
    assert_close(grads[0].data(), &fa, 1e-6);
    assert_close(grads[1].data(), &fb, 1e-6);
}

#[test]
fn psa_gradient_matches_finite_differences() {
    let map: Tensor<f64> = random(&[2, 1, 4, 4], 9, 0.0, 1.0);
    let w: Tensor<f64> = random(&[2, 1, 4, 4], 10, -1.0, 1.0);
    let p = PsaParams { weight: 2.5, bias: 0.3, gate: -0.4 };
    let (_, cache) = psa_forward(&map, &p);
    let (gm, gp) = psa_backward(&cache, &w);
    let num = fd(|m| dot(&psa(m, &p), &w), &map, 1e-7);
    assert_close(gm.data(), &num, 1e-6);
    let pt = Tensor::<f64>::from_f64(&[3], &p.to_array()).unwrap();
    let num_p = fd(
        |t| {
            let d = t.data();
            dot(&psa(&map, &PsaParams::from_array([d[0], d[1], d[2]])), &w)
        },
        &pt,
        1e-7,
    );
    assert_close(&gp, &num_p, 1e-6);
}

#[test]
fn psa_uniform_in_uniform_out() {
    let map = Tensor::<f64>::full(&[1, 1, 5, 5], 0.4);
    let out = psa(&map, &PsaParams::default());
    assert!(out.data().iter().all(|&v| v == out.data()[0]));
}

#[test]
fn psa_keeps_hotspot_position() {
    let mut data = vec![0.2; 64];
    for (i, v) in data.iter_mut().enumerate() {
        *v += 0.01 * (i % 7) as f64;
    }
    data[37] = 0.95;
    let map = Tensor::<f64>::from_f64(&[1, 1, 8, 8], &data).unwrap();
    let out = psa(&map, &PsaParams::default());
    let argmax = out
        .data()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    assert_eq!(argmax, 37);
    assert_eq!(out.data()[37], 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn psa_output_in_unit_interval(seed in 0u64..10_000, w in 0.1f64..10.0, b in -2.0f64..2.0, gate in -3.0f64..3.0) {
        let map: Tensor<f64> = random(&[1, 1, 6, 6], seed, 0.0, 1.0);
        let out = psa(&map, &PsaParams { weight: w, bias: b, gate });
        prop_assert_eq!(out.shape(), map.shape());
        prop_assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn attention_in_unit_interval(seed in 0u64..10_000, scale in 0.01f64..100.0) {
        let tap: Tensor<f64> = random(&[2, 3, 5, 5], seed, -scale, scale);
        let m = d_spatial_attention(&[tap], 10, 10).unwrap();
        prop_assert!(m.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn conditioning_identities() {
    let cfg = tiny(8);
    let (g, _) = build_siran(&cfg, 2).unwrap();
    let x: Tensor<f32> = random(&[2, 1, 8, 8], 1, 0.0, 1.0);
    let z: Tensor<f32> = random(&[2, 3, 8, 8], 2, 0.0, 1.0);
    let out = |zc: &Tensor<f32>| g.forward(&x, zc).unwrap().get(g.net.output()).clone();
    let ones = generator_forward(&g, &x, &z, &Tensor::full(&[2, 1, 8, 8], 1.0)).unwrap();
    assert_eq!(ones, out(&z));
    let zeros = generator_forward(&g, &x, &z, &Tensor::zeros(&[2, 1, 8, 8])).unwrap();
    assert_eq!(zeros, out(&Tensor::zeros(&[2, 3, 8, 8])));
    let again = generator_forward(&g, &x, &z, &Tensor::full(&[2, 1, 8, 8], 1.0)).unwrap();
    assert_eq!(ones, again);
    assert!(matches!(
        generator_forward(&g, &x, &z, &Tensor::full(&[2, 1, 4, 4], 1.0)),
        Err(Error::Shape(_))
    ));
    assert!(matches!(condition_prior(&z, &Tensor::zeros(&[2, 8, 8])), Err(Error::Shape(_))));
}

#[test]
fn prior_head_receives_gradient() {
    let cfg = tiny(8);
    let (g, _) = build_siran(&cfg, 4).unwrap();
    let b = batch(&cfg, 2, 3);
    let a: Tensor<f64> = random(&[2, 1, 8, 8], 11, 0.1, 1.0);
    let zc = condition_prior(&b.z, &a).unwrap();
    let acts = g.forward(&b.x, &zc).unwrap();
    let mut seed = acts.get(g.net.output()).clone();
    for (s, y) in seed.data_mut().iter_mut().zip(b.y.data()) {
        *s = 2.0 * (*s - y) / 128.0;
    }
    let grads = g.net.backward(&acts, &seed).unwrap();
    let i = g.net.param_index("g_head_z.weight").unwrap();
    let norm: f64 = grads.params[i].to_f64_vec().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm > 0.0);
}

fn mse_only() -> TrainConfig {
    TrainConfig {
        weights: LossWeights {
            lambda_da: 0.0,
            lambda_p: 1.0,
            lambda_str: 0.0,
            lambda_adv: 0.0,
            lambda_ot: 0.0,
        },
        lr_g: 1e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn supervised_training_reduces_mse() {
    let cfg = tiny(8);
    let (g, d) = build_siran(&cfg, 1).unwrap();
    let mut t = SiranTrainer::new(g, d, mse_only()).unwrap();
    let b = batch(&cfg, 4, 20);
    let first = t.step(&b).unwrap().record.l_p.unwrap();
    let mut last = first;
    for _ in 0..49 {
        last = t.step(&b).unwrap().record.l_p.unwrap();
    }
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn discriminator_updates_before_generator_gradient() {
    let cfg = tiny(16);
    let (g, d) = build_siran(&cfg, 8).unwrap();
    let mut t = SiranTrainer::new(g, d, TrainConfig::default()).unwrap();
    let out = t.step(&batch(&cfg, 2, 30)).unwrap();
    assert_ne!(out.d_hash_before, out.d_hash_at_generator);
    assert_eq!(out.d_hash_at_generator, t.d.net.param_hash());
}

#[test]
fn attached_attention_moves_discriminator_again() {
    let cfg = tiny(16);
    let (g, d) = build_siran(&cfg, 8).unwrap();
    let tc = TrainConfig {
        detach_attention: false,
        ..TrainConfig::default()
    };
    let mut t = SiranTrainer::new(g, d, tc).unwrap();
    let out = t.step(&batch(&cfg, 2, 30)).unwrap();
    assert_ne!(out.d_hash_at_generator, t.d.net.param_hash());
}

#[test]
fn default_weights_give_finite_loss_components() {
    let cfg = tiny(16);
    let (g, d) = build_siran(&cfg, 12).unwrap();
    let mut t = SiranTrainer::new(g, d, TrainConfig::default()).unwrap();
    let psa_before = t.psa;
    let r = t.step(&batch(&cfg, 2, 40)).unwrap().record;
    for v in [r.l_p, r.l_str, r.l_adv, r.l_ot, r.l_da, r.g_first, r.g_hidden] {
        assert!(v.unwrap().is_finite());
    }
    assert!(r.g_first.unwrap() > 0.0);
    assert_ne!(t.psa, psa_before);
}

#[test]
fn ablations_run() {
    let cfg = tiny(16);
    for (prior, attention, psa) in [(false, true, true), (true, false, false), (true, true, false)] {
        let (g, d) = build_siran(&cfg, 12).unwrap();
        let tc = TrainConfig {
            use_prior: prior,
            use_attention: attention,
            use_psa: psa,
            ..TrainConfig::default()
        };
        let mut t = SiranTrainer::new(g, d, tc).unwrap();
        let r = t.step(&batch(&cfg, 2, 41)).unwrap().record;
        assert!(r.l_p.unwrap().is_finite());
        assert_eq!(r.l_da.is_some(), attention);
    }
}

#[test]
fn training_is_deterministic() {
    let cfg = tiny(16);
    let run = || {
        let (g, d) = build_siran(&cfg, 6).unwrap();
        let mut t = SiranTrainer::new(g, d, TrainConfig::default()).unwrap();
        let b = batch(&cfg, 2, 50);
        let recs: Vec<_> = (0..3).map(|_| t.step(&b).unwrap().record).collect();
        (t.g.net.param_hash(), t.d.net.param_hash(), recs)
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_loss_names_the_term() {
    let cfg = tiny(16);
    let (g, mut d) = build_siran(&cfg, 6).unwrap();
    let i = d.net.param_index("d_mlp2.bias").unwrap();
    d.net.params_mut()[i].value = Tensor::full(&[1], f32::NAN);
    let mut t = SiranTrainer::new(g, d, TrainConfig::default()).unwrap();
    match t.step(&batch(&cfg, 2, 60)) {
        Err(Error::NonFiniteLoss { term }) => assert_eq!(term, "L_ADV_D"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn bad_batch_shapes_rejected() {
    let cfg = tiny(8);
    let (g, d) = build_siran(&cfg, 6).unwrap();
    let mut t = SiranTrainer::new(g, d, mse_only()).unwrap();
    let mut b = batch(&cfg, 2, 1);
    b.z = Tensor::zeros(&[2, 2, 8, 8]);
    assert!(matches!(t.step(&b), Err(Error::Shape(_))));
}
