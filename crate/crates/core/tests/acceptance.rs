//! Acceptance criteria 1-9, run in order inside one test so timings are not
//! distorted by parallel tests. Each criterion prints one PASS/FAIL line.
//!
//! Criteria 5-7 are empirical training claims. They are always run and
//! reported; they only fail the test when `SINKDEM_STRICT_ACCEPTANCE` is set.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sinkdem::data::{
    parse_idx, read_metrics_csv, read_sdem, write_metrics_csv, write_sdem, IdxData, MetricsRecord, RasterF32,
    CSV_HEADER,
};
use sinkdem::diffnet::{grad_check, GradCheckConfig, Tensor};
use sinkdem::experiments::{
    near_optimal_mean, train_denoise, train_sr, DenoiseData, DenoiseOutcome, ExperimentConfig, ExperimentKind,
    Method, SrDataset,
};
use sinkdem::losses::{adv_d_loss, adv_g_loss, da_loss, pixel_loss, sinkhorn_loss, ssim_loss, OtMode, SsimConfig};
use sinkdem::model::{build_siran, generator_forward, SiranConfig, SiranTrainer, TrainBatch, TrainConfig};
use sinkdem::ot::{
    divergence_grad_x, energy_mmd, exact_ot_uniform, median, pairwise_cost, sinkhorn_divergence, sinkhorn_solve,
    DiscreteMeasure, SinkhornConfig,
};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Report {
    hard_failures: Vec<usize>,
    soft_failures: Vec<usize>,
}

impl Report {
    fn line(&mut self, n: usize, pass: bool, hard: bool, detail: String) {
        // straight to the handle so the line shows without --nocapture
        let line = format!("criterion {n}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
        let _ = std::io::stderr().write_all(line.as_bytes());
        if !pass {
            if hard { &mut self.hard_failures } else { &mut self.soft_failures }.push(n);
        }
    }
}

fn rand_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random::<f64>())
}

fn rand_measure(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DiscreteMeasure {
    let w: Array1<f64> = Array1::from_shape_fn(n, |_| 0.2 + rng.random::<f64>());
    let s = w.sum();
    DiscreteMeasure::new(rand_points(rng, n, d), w / s).unwrap()
}

fn uniform_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()).unwrap()
}

fn med(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

fn criterion_1(r: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let n = rng.random_range(2..=6);
        let x = DiscreteMeasure::uniform(rand_points(&mut rng, n, 2)).unwrap();
        let y = DiscreteMeasure::uniform(rand_points(&mut rng, n, 2)).unwrap();
        let c = pairwise_cost(x.points(), y.points(), 2.0).unwrap();
        let cfg = SinkhornConfig {
            epsilon: 1e-3 * median(&c.values),
            max_iters: 5000,
            marginal_tol: 1e-9,
            p: 2.0,
        };
        let sol = sinkhorn_solve(&x, &y, &c, &cfg).unwrap();
        let exact = exact_ot_uniform(&c).unwrap();
        worst = worst.max((sol.primal_cost - exact).abs() / exact.abs().max(1e-12));
    }
    let secs = t.elapsed().as_secs_f64();
    r.line(1, worst <= 0.02 && secs < 10.0, true, format!("max rel err {worst:.2e} (<= 2e-2), {secs:.2}s (< 10s)"));
}

fn criterion_2(r: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let cfg = SinkhornConfig {
        epsilon: 0.1,
        max_iters: 5000,
        marginal_tol: 1e-12,
        p: 2.0,
    };
    let (mut self_max, mut asym, mut min_s) = (0.0f64, 0.0f64, f64::INFINITY);
    for _ in 0..50 {
        let na = rng.random_range(2..=8);
        let a = rand_measure(&mut rng, na, 3);
        let nb = rng.random_range(2..=8);
        let b = rand_measure(&mut rng, nb, 3);
        self_max = self_max.max(sinkhorn_divergence(&a, &a, &cfg).unwrap().abs());
        let ab = sinkhorn_divergence(&a, &b, &cfg).unwrap();
        let ba = sinkhorn_divergence(&b, &a, &cfg).unwrap();
        asym = asym.max((ab - ba).abs());
        min_s = min_s.min(ab);
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = self_max <= 1e-9 && asym <= 1e-9 && min_s >= -1e-9 && secs < 10.0;
    r.line(
        2,
        pass,
        true,
        format!("max |S(a,a)| {self_max:.1e}, max asymmetry {asym:.1e}, min S {min_s:.3e}, {secs:.2}s"),
    );
}

fn criterion_3(r: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let cfg = SinkhornConfig {
        epsilon: 1e6,
        max_iters: 100,
        marginal_tol: 1e-12,
        p: 1.5,
    };
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let na = rng.random_range(3..=8);
        let a = rand_measure(&mut rng, na, 2);
        let nb = rng.random_range(3..=8);
        let b = rand_measure(&mut rng, nb, 2);
        let s = sinkhorn_divergence(&a, &b, &cfg).unwrap();
        let m = energy_mmd(&a, &b, 1.5).unwrap();
        worst = worst.max((s - m).abs() / m.abs());
    }
    let secs = t.elapsed().as_secs_f64();
    r.line(3, worst <= 1e-3 && secs < 5.0, true, format!("max rel gap {worst:.2e} (<= 1e-3), {secs:.2}s (< 5s)"));
}

/// Largest relative error of central differences against `grad` over `coords`.
fn fd_err(x: &Tensor<f64>, grad: &Tensor<f64>, coords: &[usize], h: f64, floor: f64, f: impl Fn(&Tensor<f64>) -> f64) -> f64 {
    coords
        .iter()
        .map(|&q| {
            let mut p = x.clone();
            p.data_mut()[q] += h;
            let mut m = x.clone();
            m.data_mut()[q] -= h;
            let num = (f(&p) - f(&m)) / (2.0 * h);
            let a = grad.data()[q];
            (a - num).abs() / a.abs().max(num.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}

fn criterion_4(r: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);

    let x = rand_measure(&mut rng, 5, 3);
    let y = rand_measure(&mut rng, 4, 3);
    let cfg = SinkhornConfig {
        epsilon: 0.5,
        max_iters: 100_000,
        marginal_tol: 1e-14,
        p: 2.0,
    };
    let g = divergence_grad_x(&x, &y, &cfg).unwrap();
    let h = 1e-6;
    let mut ot_err: f64 = 0.0;
    for i in 0..5 {
        for k in 0..3 {
            let shifted = |d: f64| {
                let mut pts = x.points().clone();
                pts[[i, k]] += d;
                let m = DiscreteMeasure::new(pts, x.weights().clone()).unwrap();
                sinkhorn_divergence(&m, &y, &cfg).unwrap()
            };
            let num = (shifted(h) - shifted(-h)) / (2.0 * h);
            ot_err = ot_err.max((g[[i, k]] - num).abs() / g[[i, k]].abs().max(num.abs()).max(1e-3));
        }
    }

    let pred = uniform_tensor(&[2, 1, 16, 16], 1, 0.0, 1.0);
    let mut near = pred.clone();
    near.add_assign(&uniform_tensor(&[2, 1, 16, 16], 2, -0.2, 0.2));
    let target = uniform_tensor(&[2, 1, 16, 16], 3, 0.0, 1.0);
    let coords: Vec<usize> = (0..pred.len()).step_by(11).collect();
    let ssim = SsimConfig::default();
    let ot_cfg = SinkhornConfig {
        epsilon: 0.1,
        max_iters: 100_000,
        marginal_tol: 1e-13,
        p: 2.0,
    };
    let logits = uniform_tensor(&[6, 1], 4, -4.0, 4.0);
    let other = uniform_tensor(&[5, 1], 5, -4.0, 4.0);
    let all6: Vec<usize> = (0..6).collect();
    let small_a = uniform_tensor(&[3, 1, 6, 6], 6, 0.0, 1.0);
    let small_b = uniform_tensor(&[3, 1, 6, 6], 7, 0.0, 1.0);
    let small_coords: Vec<usize> = (0..small_a.len()).step_by(5).collect();

    let mut losses: Vec<(&str, f64)> = Vec::new();
    let l = pixel_loss(&pred, &target).unwrap();
    losses.push(("L_P", fd_err(&pred, &l.grad, &coords, 1e-6, 1e-8, |p| pixel_loss(p, &target).unwrap().value)));
    let l = da_loss(&pred, &target).unwrap();
    losses.push(("L_DA", fd_err(&pred, &l.grad, &coords, 1e-6, 1e-8, |p| da_loss(p, &target).unwrap().value)));
    let l = ssim_loss(&near, &pred, &ssim).unwrap();
    losses.push(("L_str", fd_err(&near, &l.grad, &coords, 1e-6, 1e-6, |p| ssim_loss(p, &pred, &ssim).unwrap().value)));
    let l = adv_g_loss(&logits);
    losses.push(("L_ADV", fd_err(&logits, &l.grad, &all6, 1e-6, 1e-8, |p| adv_g_loss(p).value)));
    let (real, _) = adv_d_loss(&logits, &other);
    losses.push(("L_ADV_D real", fd_err(&logits, &real.grad, &all6, 1e-6, 1e-8, |p| adv_d_loss(p, &other).0.value)));
    let (_, fake) = adv_d_loss(&other, &logits);
    losses.push(("L_ADV_D fake", fd_err(&logits, &fake.grad, &all6, 1e-6, 1e-8, |p| adv_d_loss(&other, p).1.value)));
    for mode in [OtMode::Batch, OtMode::PixelCloud] {
        let l = sinkhorn_loss(&small_a, &small_b, &ot_cfg, mode).unwrap();
        let err = fd_err(&small_a, &l.grad, &small_coords, 1e-5, 1e-8, |p| {
            sinkhorn_loss(p, &small_b, &ot_cfg, mode).unwrap().value
        });
        losses.push((if mode == OtMode::Batch { "L_OT batch" } else { "L_OT pixel-cloud" }, err));
    }

    let scfg = SiranConfig {
        base_channels: 4,
        n_dmrb_g: 1,
        n_dmrb_d: 1,
        rcb_per_dmrb: 2,
        mlp_width: 4,
        patch_size: 8,
        ..SiranConfig::default()
    };
    let (mut gm, _) = build_siran(&scfg, 9).unwrap();
    // perturb away from the identity init so every layer carries gradient
    for (i, p) in gm.net.params_mut().iter_mut().enumerate() {
        let noise: Tensor<f32> = uniform_tensor(p.value.shape(), 50 + i as u64, -0.1, 0.1).cast();
        p.value.add_assign(&noise);
    }
    let xin: Tensor<f32> = uniform_tensor(&[2, 1, 8, 8], 10, 0.0, 1.0).cast();
    let zin: Tensor<f32> = uniform_tensor(&[2, 3, 8, 8], 11, 0.0, 1.0).cast();
    let tgt = uniform_tensor(&[2, 1, 8, 8], 12, 0.0, 1.0);
    let net_loss = |out: &Tensor<f64>| {
        let l = pixel_loss(out, &tgt).unwrap();
        (l.value, l.grad)
    };
    let report = grad_check(&gm.net, &[("x", &xin), ("z", &zin)], net_loss, &GradCheckConfig::for_precision::<f32>()).unwrap();
    losses.push(("generator f32", report.max_rel_err));

    let loss_worst = losses.iter().map(|l| l.1).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    let detail: Vec<String> = losses.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    r.line(
        4,
        ot_err <= 1e-6 && loss_worst <= 1e-3 && secs < 30.0,
        true,
        format!("OT grad {ot_err:.1e} (<= 1e-6); {} (<= 1e-3); {secs:.2}s", detail.join(", ")),
    );
}

fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist5k")
}

fn denoise_cfg(seed: u64, method: Method) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        method,
        data_dir: mnist_dir(),
        ..ExperimentConfig::for_kind(ExperimentKind::Denoise)
    }
}

fn epochs(o: &DenoiseOutcome, cap: usize) -> f64 {
    o.epochs_to_target.map_or(cap as f64 + 1.0, |e| e as f64)
}

fn show(v: &[f64]) -> String {
    let s: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", s.join(" "))
}

fn criteria_5_6(r: &mut Report) {
    let t = Instant::now();
    let mut gan = Vec::new();
    let mut sink: [Vec<DenoiseOutcome>; 3] = Default::default();
    let eps = [0.001, 0.1, 10.0];
    for seed in SEEDS {
        let data = DenoiseData::load(&denoise_cfg(seed, Method::Gan)).unwrap();
        gan.push(train_denoise(&denoise_cfg(seed, Method::Gan), 0.1, &data).unwrap().0);
        for (k, &e) in eps.iter().enumerate() {
            sink[k].push(train_denoise(&denoise_cfg(seed, Method::SinkhornGan), e, &data).unwrap().0);
        }
    }
    let cap = denoise_cfg(0, Method::Gan).max_epochs;
    let t5 = t.elapsed().as_secs_f64();

    let gan_e: Vec<f64> = gan.iter().map(|o| epochs(o, cap)).collect();
    let sink_e: Vec<f64> = sink[1].iter().map(|o| epochs(o, cap)).collect();
    let (mg, ms) = (med(gan_e.clone()), med(sink_e.clone()));
    r.line(
        5,
        ms <= mg / 1.5,
        false,
        format!(
            "median epochs to mse {} gan {mg} {} vs sinkhorn_gan {ms} {} (need <= {:.2}), ratio {:.2}x; {:.0}s for all denoising runs",
            denoise_cfg(0, Method::Gan).target_mse,
            show(&gan_e),
            show(&sink_e),
            mg / 1.5,
            mg / ms,
            t5
        ),
    );

    let hidden: Vec<Vec<f64>> = sink
        .iter()
        .map(|runs| {
            runs.iter()
                .map(|o| near_optimal_mean(&o.records, o.epochs_to_target, |m| m.g_hidden).unwrap_or(f64::NAN))
                .collect()
        })
        .collect();
    let first: Vec<f64> = sink
        .iter()
        .map(|runs| {
            med(runs
                .iter()
                .map(|o| near_optimal_mean(&o.records, o.epochs_to_target, |m| m.g_first).unwrap_or(f64::NAN))
                .collect())
        })
        .collect();
    let mh: Vec<f64> = hidden.iter().map(|h| med(h.clone())).collect();
    let ep: Vec<f64> = sink.iter().map(|runs| med(runs.iter().map(|o| epochs(o, cap)).collect())).collect();
    r.line(
        6,
        mh[1] > mh[0] && mh[1] > mh[2],
        false,
        format!(
            "median near-optimum hidden norm eps 0.001 {:.3} {}, eps 0.1 {:.3} {}, eps 10 {:.3} {}; first-layer medians {}; median epochs {}",
            mh[0],
            show(&hidden[0]),
            mh[1],
            show(&hidden[1]),
            mh[2],
            show(&hidden[2]),
            show(&first),
            show(&ep)
        ),
    );
    for o in gan.iter().chain(sink.iter().flatten()) {
        assert!(o.failure.is_none(), "{:?} eps {} failed: {:?}", o.method, o.epsilon, o.failure);
    }
}

fn sr_cfg(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        ..ExperimentConfig::for_kind(ExperimentKind::SrToy)
    }
}

fn criterion_7(r: &mut Report) {
    let t = Instant::now();
    let (mut full, mut no_prior, mut no_ot) = (Vec::new(), Vec::new(), Vec::new());
    for seed in SEEDS {
        let cfg = sr_cfg(seed);
        let data = SrDataset::generate(&cfg).unwrap();
        full.push(train_sr(&cfg, &data).unwrap().0);
        no_prior.push(train_sr(&ExperimentConfig { use_prior: false, ..cfg.clone() }, &data).unwrap().0);
        no_ot.push(train_sr(&ExperimentConfig { use_sinkhorn: false, ..cfg.clone() }, &data).unwrap().0);
    }
    for o in full.iter().chain(&no_prior).chain(&no_ot) {
        assert!(o.failure.is_none(), "{:?}", o.failure);
    }
    let cap = sr_cfg(0).max_epochs as f64;
    let ssim = |v: &[sinkdem::experiments::SrOutcome]| med(v.iter().map(|o| o.test.ssim.unwrap()).collect());
    let rmse = |v: &[sinkdem::experiments::SrOutcome]| med(v.iter().map(|o| o.test.rmse.unwrap()).collect());
    let ett = |v: &[sinkdem::experiments::SrOutcome]| -> Vec<f64> {
        v.iter().map(|o| o.epochs_to_threshold.map_or(cap + 1.0, |e| e as f64)).collect()
    };
    let (e_on, e_off) = (ett(&full), ett(&no_ot));
    let ratio = med(e_off.clone()) / med(e_on.clone());
    let bic = med(full.iter().map(|o| o.bicubic.ssim.unwrap()).collect());
    let better = ssim(&full) > ssim(&no_prior) && rmse(&full) < rmse(&no_prior);
    let secs = t.elapsed().as_secs_f64();
    r.line(
        7,
        better && ratio >= 1.2,
        false,
        format!(
            "median SSIM% full {:.2} vs no-prior {:.2} (bicubic {bic:.2}), RMSE full {:.5} vs no-prior {:.5}; epochs to L_P <= {} with sinkhorn {} vs without {} ratio {ratio:.2}x (need >= 1.2); {secs:.0}s",
            ssim(&full),
            ssim(&no_prior),
            rmse(&full),
            rmse(&no_prior),
            sr_cfg(0).pixel_threshold,
            show(&e_on),
            show(&e_off)
        ),
    );
}

fn criterion_8(r: &mut Report) {
    let t = Instant::now();
    let mut problems = Vec::new();
    let allowed = [
        "input", "conv3x3", "conv1x1", "dense", "leaky_relu", "upsample_bilinear", "concat", "add", "global_avg_pool",
    ];
    for scale in [1, 2] {
        let cfg = SiranConfig {
            base_channels: 8,
            n_dmrb_g: 2,
            n_dmrb_d: 2,
            rcb_per_dmrb: 2,
            mlp_width: 8,
            patch_size: 16,
            scale_factor: scale,
            ..SiranConfig::default()
        };
        let (g, d) = build_siran(&cfg, 3).unwrap();
        let (g2, d2) = build_siran(&cfg, 3).unwrap();
        if g.net.param_hash() != g2.net.param_hash() || d.net.param_hash() != d2.net.param_hash() {
            problems.push(format!("scale {scale}: build not deterministic"));
        }
        for node in g.net.nodes().iter().chain(d.net.nodes()) {
            if !allowed.contains(&node.spec.kind_name()) || node.name.contains("norm") {
                problems.push(format!("layer {} ({})", node.name, node.spec.kind_name()));
            }
        }
        let s = cfg.input_size();
        let x: Tensor<f32> = uniform_tensor(&[3, 1, s, s], 20, 0.0, 1.0).cast();
        let z: Tensor<f32> = uniform_tensor(&[3, 3, 16, 16], 21, 0.0, 1.0).cast();
        let a = Tensor::<f64>::full(&[3, 1, 16, 16], 0.5);
        let out = generator_forward(&g, &x, &z, &a).unwrap();
        if out.shape() != [3, 1, 16, 16] {
            problems.push(format!("scale {scale}: output shape {:?}", out.shape()));
        }
        let acts = d.forward(&out).unwrap();
        let logits = acts.get(d.net.output());
        if logits.shape() != [3, 1] {
            problems.push(format!("scale {scale}: logits shape {:?}", logits.shape()));
        }

        let mk = || SiranTrainer::new(g.clone(), d.clone(), TrainConfig::default()).unwrap();
        let batch = TrainBatch {
            x: x.clone(),
            z: z.clone(),
            y: uniform_tensor(&[3, 1, 16, 16], 22, 0.0, 1.0).cast(),
        };
        let (mut t1, mut t2) = (mk(), mk());
        for _ in 0..2 {
            t1.step(&batch).unwrap();
            t2.step(&batch).unwrap();
        }
        if (t1.g.net.param_hash(), t1.d.net.param_hash()) != (t2.g.net.param_hash(), t2.d.net.param_hash()) {
            problems.push(format!("scale {scale}: training not deterministic"));
        }
        let spiky: Tensor<f32> = uniform_tensor(&[3, 1, s, s], 23, -50.0, 50.0).cast();
        for img in [&x, &spiky] {
            let map = t1.attention_map(img).unwrap();
            if map.shape() != [3, 1, 16, 16] || !map.data().iter().all(|v| (0.0..=1.0).contains(v)) {
                problems.push(format!("scale {scale}: attention map shape {:?} or range", map.shape()));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let detail = if problems.is_empty() { "shapes, attention range, hashes, layer audit ok".into() } else { problems.join("; ") };
    r.line(8, problems.is_empty() && secs < 60.0, true, format!("{detail}; {secs:.2}s (< 60s)"));
}

fn criterion_9(r: &mut Report) {
    let t = Instant::now();
    let mut problems = Vec::new();
    let mut idx = vec![0, 0, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
    idx.extend([0u8, 51, 102, 153, 204, 255, 1, 2, 3, 4, 5, 6]);
    match parse_idx(&idx) {
        Ok(IdxData::Images { count: 2, rows: 2, cols: 3, pixels }) if pixels[5] == 1.0 && pixels.len() == 12 => {}
        other => problems.push(format!("idx fixture parsed as {other:?}")),
    }
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<f32> = vec![0.0, -1.5, f32::MIN_POSITIVE, 1e-30, 3.25, f32::MAX, 0.1, 7.0, -0.0, 2.5, 1.0 / 3.0, 9.75];
    let raster = RasterF32::new(3, 4, data).unwrap();
    let path = dir.path().join("r.sdem");
    write_sdem(&raster, &path).unwrap();
    let back = read_sdem(&path).unwrap();
    let bits = |r: &RasterF32| r.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    if (back.height, back.width, bits(&back)) != (3, 4, bits(&raster)) {
        problems.push("sdem round trip not bit-exact".into());
    }
    let recs = vec![MetricsRecord { epoch: 1, mse: Some(0.5), psnr: Some(f64::INFINITY), ..MetricsRecord::default() }];
    let csv = dir.path().join("m.csv");
    write_metrics_csv(&recs, &csv).unwrap();
    let header = std::fs::read_to_string(&csv).unwrap().lines().next().unwrap().to_string();
    if header != "epoch,wallclock_s,mse,rmse,mae,psnr,ssim,g_first,g_hidden,L_P,L_str,L_ADV,L_OT,L_DA" || header != CSV_HEADER {
        problems.push(format!("csv header {header}"));
    }
    if read_metrics_csv(&csv).unwrap() != recs {
        problems.push("csv round trip".into());
    }
    let secs = t.elapsed().as_secs_f64();
    let detail = if problems.is_empty() { "idx fixture, sdem bits, csv header ok".into() } else { problems.join("; ") };
    r.line(9, problems.is_empty() && secs < 5.0, true, format!("{detail}; {secs:.3}s (< 5s)"));
}

#[test]
fn acceptance() {
    let mut r = Report {
        hard_failures: Vec::new(),
        soft_failures: Vec::new(),
    };
    criterion_1(&mut r);
    criterion_2(&mut r);
    criterion_3(&mut r);
    criterion_4(&mut r);
    criteria_5_6(&mut r);
    criterion_7(&mut r);
    criterion_8(&mut r);
    criterion_9(&mut r);
    assert!(r.hard_failures.is_empty(), "failed criteria {:?}", r.hard_failures);
    if std::env::var_os("SINKDEM_STRICT_ACCEPTANCE").is_some() {
        assert!(r.soft_failures.is_empty(), "failed empirical criteria {:?}", r.soft_failures);
    }
}
