//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use valley_core::data::{Dataset, Splits};
use valley_core::fed::{dirichlet_partition, fed_compare, server_loop, CompareGrid, FedConfig, Reduction};
use valley_core::nn::{train, Architecture, BnInit, Layer, LrSchedule, Mode, Model, TrainConfig};
use valley_core::noise::{sample_common, CommonKind, NoiseKind, NoiseSpec, SpecialKind, Transform};
use valley_core::params::{filter_ns, ns_scale, ParamVector};
use valley_core::probes::{
    confusion_sweep, gradient_orthogonality, hessian_quadratic, hessian_trace, probe_ns, relu_sim, softmax_metrics,
    train_linear_probe, LinearProbeConfig, ReluSimConfig, SoftmaxProbe,
};
use valley_core::rng;
use valley_core::scan::{
    asymmetry_stats, bn_weights, positive_fraction, scan_1d, soup_experiment, Metric, Normalization, ScanConfig,
    ScanData, SoupConfig,
};
use valley_core::stats::{mean, spearman};
use valley_lab::checkpoint;
use valley_lab::datasets;
use valley_lab::exec::Parallel;
use valley_lab::manifest::sha256_hex;

struct Outcome {
    pass: bool,
    detail: String,
}

fn within(start: Instant, limit_s: u64) -> (bool, String) {
    let t = start.elapsed();
    (t <= Duration::from_secs(limit_s), format!("{:.1} s (limit {limit_s} s)", t.as_secs_f64()))
}

fn digits() -> Splits {
    datasets::digits().split(0.2, 0).unwrap()
}

fn digits_arch(init: BnInit) -> Architecture {
    Architecture::mlp(64, &[128, 128], 10, Some(init))
}

fn train_digits(d: &Splits, init: BnInit) -> Model {
    let mut m = Model::new(digits_arch(init), 0).unwrap();
    train(&mut m, &d.train, &TrainConfig::default()).unwrap();
    m.bn_recompute(&d.train).unwrap();
    m
}

fn gap(m: &Model, noise: NoiseSpec, norm: Normalization, d: &Splits) -> f64 {
    let v = noise.realize(Some(m.init_snapshot()), m.params()).unwrap();
    let cfg = ScanConfig { normalization: norm, ..Default::default() };
    let r = scan_1d(m, &v, &cfg, ScanData { eval: &d.test, calib: &d.train }, &Parallel).unwrap();
    asymmetry_stats(&r, Metric::Error).gap
}

fn rms(xs: &[f64]) -> f64 {
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let arch = Architecture::mlp(6, &[7, 5], 3, Some(BnInit::Uniform01));
        let mut m = Model::new(arch, seed).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(1000 + seed);
        for v in m.params_mut() {
            *v += r.random_range(-0.1..0.1);
        }
        let n = 10;
        let x: Vec<f64> = (0..n * 6).map(|_| r.random_range(-1.0..1.0)).collect();
        let x = valley_core::tensor::Tensor::new(vec![n, 6], x).unwrap();
        let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let (_, cache) = m.forward(&x, Mode::Train).unwrap();
        let g = m.backward(&cache, &y).unwrap();
        let step = 1e-5;
        for i in 0..m.params().len() {
            let mut p = m.clone();
            let orig = p.params().values()[i];
            p.params_mut()[i] = orig + step;
            let up = p.batch_loss(&x, &y, Mode::Train).unwrap();
            p.params_mut()[i] = orig - step;
            let down = p.batch_loss(&x, &y, Mode::Train).unwrap();
            worst = worst.max(rel_err(g.values()[i], (up - down) / (2.0 * step)));
        }
    }
    let (fast, t) = within(start, 5);
    Outcome { pass: worst < 1e-5 && fast, detail: format!("max rel err {worst:.2e} (< 1e-5), {t}") }
}

fn random_probe(r: &mut ChaCha8Rng, classes: usize, dim: usize) -> (SoftmaxProbe, Vec<f64>) {
    let w = (0..classes * dim).map(|_| r.random_range(-1.5..1.5)).collect();
    let h = (0..dim).map(|_| r.random_range(-2.0..2.0)).collect();
    (SoftmaxProbe::new(w, classes, dim).unwrap(), h)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let mut worst_trace: f64 = 0.0;
    for i in 0..40 {
        let (classes, dim) = (2 + i % 4, 1 + i % 8);
        let (probe, h) = random_probe(&mut r, classes, dim);
        let step = 1e-4;
        let f0 = probe.loss(&h, 0);
        let mut fd = 0.0;
        for j in 0..probe.w.len() {
            let mut up = probe.w.clone();
            up[j] += step;
            let mut down = probe.w.clone();
            down[j] -= step;
            fd += (probe.with_weights(up).loss(&h, 0) - 2.0 * f0 + probe.with_weights(down).loss(&h, 0)) / (step * step);
        }
        let t = hessian_trace(&probe, &h).tr_h;
        worst_trace = worst_trace.max((t - fd).abs() / t.abs().max(1e-8));
    }
    let mut worst_quad: f64 = 0.0;
    for i in 0..40 {
        let classes = 2 + i % 3;
        let dim = 1 + i % (32 / classes);
        let (probe, h) = random_probe(&mut r, classes, dim);
        let eta: Vec<f64> = (0..classes * dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let p = probe.probs(&h);
        let n = classes * dim;
        let mut oracle = 0.0;
        for a in 0..n {
            for b in 0..n {
                let (ca, ia, cb, ib) = (a / dim, a % dim, b / dim, b % dim);
                let pp = if ca == cb { p[ca] } else { 0.0 } - p[ca] * p[cb];
                oracle += eta[a] * pp * h[ia] * h[ib] * eta[b];
            }
        }
        worst_quad = worst_quad.max((hessian_quadratic(&p, &h, &eta) - oracle).abs());
    }
    let (fast, t) = within(start, 5);
    Outcome {
        pass: worst_trace <= 1e-4 && worst_quad <= 1e-10 && fast,
        detail: format!("trace rel err {worst_trace:.2e} (<= 1e-4), quadratic form abs err {worst_quad:.2e} (<= 1e-10), {t}"),
    }
}

fn conv_arch() -> Architecture {
    Architecture {
        input_shape: vec![2, 6, 6],
        layers: vec![
            Layer::Conv2d { in_channels: 2, out_channels: 4, kernel: 3, stride: 1, padding: 1 },
            Layer::BatchNorm { channels: 4, init: BnInit::Ones },
            Layer::Relu,
            Layer::Flatten,
            Layer::Dense { inputs: 144, outputs: 3, bias: true },
            Layer::SoftmaxCrossEntropy,
        ],
    }
}

fn norm2(xs: &[f64]) -> f64 {
    xs.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (norm2(a) * norm2(b))
}

fn criterion_3() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_norm, mut worst_cos): (f64, f64) = (0.0, 0.0);
    for i in 0..100 {
        let n = 1 + r.random_range(0..500);
        let scale = 10f64.powi(r.random_range(-3..4));
        let theta = ParamVector::flat((0..n).map(|_| scale * r.random_range(-1.0..1.0)).collect());
        let eps = ParamVector::flat((0..n).map(|_| r.random_range(-1.0..1.0) + if i % 2 == 0 { 0.0 } else { 3.0 }).collect());
        let out = ns_scale(&eps, &theta).unwrap();
        worst_norm = worst_norm.max((norm2(out.values()) - norm2(theta.values())).abs() / norm2(theta.values()));
        worst_cos = worst_cos.max((cos(out.values(), eps.values()) - 1.0).abs());
    }
    // filter-wise: recompute every unit's norm straight from the raw slices
    let mut worst_filter: f64 = 0.0;
    let mut units = 0;
    for (k, arch) in [Architecture::mlp(10, &[8, 6], 4, Some(BnInit::Uniform01)), conv_arch()].into_iter().enumerate() {
        let m = Model::new(arch, k as u64).unwrap();
        let theta = m.params();
        let eps = sample_common(CommonKind::Gauss01, theta.layout(), 30 + k as u64).values;
        let out = filter_ns(&eps, theta).unwrap();
        for g in theta.layout().groups() {
            let len = g.filter_len.unwrap_or(g.len());
            for start in (g.range.start..g.range.end).step_by(len) {
                let s = start..start + len;
                let want = norm2(&theta.values()[s.clone()]);
                let got = norm2(&out.values()[s.clone()]);
                worst_filter = worst_filter.max((got - want).abs() / want.max(1e-300));
                worst_filter = worst_filter.max((cos(&out.values()[s.clone()], &eps.values()[s]) - 1.0).abs());
                units += 1;
            }
        }
    }
    Outcome {
        pass: worst_norm <= 1e-12 && worst_cos <= 1e-12 && worst_filter <= 1e-12,
        detail: format!(
            "NS norm rel err {worst_norm:.1e}, |cos-1| {worst_cos:.1e} over 100 vectors; filter-NS worst {worst_filter:.1e} over {units} units (all <= 1e-12)"
        ),
    }
}

struct Criterion4 {
    outcome: Outcome,
    raw_gaps: Vec<f64>,
}

fn criterion_4(d: &Splits) -> (Criterion4, Model) {
    let start = Instant::now();
    let m = train_digits(d, BnInit::Ones);
    let train_err = m.evaluate(&d.train).unwrap().error;
    let g = NoiseKind::Common(CommonKind::Gauss01);
    let data = ScanData { eval: &d.test, calib: &d.train };
    let mut sc_gaps = Vec::new();
    let mut raw_gaps = Vec::new();
    let mut pos_lt_neg = true;
    for seed in 0..5 {
        let sc = NoiseSpec::new(g, seed).with_transform(Transform::SignReplace).realize(None, m.params()).unwrap();
        let r = scan_1d(&m, &sc, &ScanConfig::default(), data, &Parallel).unwrap();
        let a = asymmetry_stats(&r, Metric::Error);
        pos_lt_neg &= a.pos_mean < a.neg_mean;
        sc_gaps.push(a.gap);
        raw_gaps.push(gap(&m, NoiseSpec::new(g, seed), Normalization::Ns, d));
    }
    let (sc, raw) = (mean(&sc_gaps), mean(&raw_gaps));
    let (fast, t) = within(start, 120);
    let outcome = Outcome {
        pass: train_err < 0.05 && pos_lt_neg && sc.abs() >= 5.0 * raw.abs() && fast,
        detail: format!(
            "train error {train_err:.4} (< 0.05); pos < neg on all seeds: {pos_lt_neg}; mean gap sign-consistent {sc:.4} vs raw {raw:.4} (ratio {:.1}, >= 5); {t}",
            sc.abs() / raw.abs().max(1e-300)
        ),
    };
    (Criterion4 { outcome, raw_gaps }, m)
}

fn criterion_5(m: &Model, d: &Splits) -> Outcome {
    let start = Instant::now();
    let rs: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let data = ScanData { eval: &d.test, calib: &d.train };
    let mut pos = vec![0.0; rs.len()];
    let mut neg = vec![0.0; rs.len()];
    let mut per_seed = Vec::new();
    for seed in 0..3 {
        let (mut p, mut n) = (Vec::new(), Vec::new());
        for &r in &rs {
            let v = NoiseSpec::new(NoiseKind::Common(CommonKind::Gauss01), seed)
                .with_transform(Transform::SignRatio(r))
                .realize(None, m.params())
                .unwrap();
            let a = asymmetry_stats(&scan_1d(m, &v, &ScanConfig::default(), data, &Parallel).unwrap(), Metric::Error);
            p.push(a.pos_mean);
            n.push(a.neg_mean);
        }
        per_seed.push(format!("{:.2}/{:.2}", spearman(&rs, &p), spearman(&rs, &n)));
        for i in 0..rs.len() {
            pos[i] += p[i] / 3.0;
            neg[i] += n[i] / 3.0;
        }
    }
    let (rp, rn) = (spearman(&rs, &pos), spearman(&rs, &neg));
    let (fast, t) = within(start, 300);
    Outcome {
        pass: rp <= -0.9 && rn >= 0.9 && fast,
        detail: format!(
            "seed-averaged curves: Spearman(r, pos_mean) {rp:.3} (<= -0.9), Spearman(r, neg_mean) {rn:.3} (>= 0.9); per seed pos/neg [{}]; {t}",
            per_seed.join(", ")
        ),
    }
}

fn criterion_6(m: &Model, d: &Splits, raw_gaps: &[f64]) -> Outcome {
    let band = 3.0 * rms(raw_gaps);
    let g = |k| gap(m, NoiseSpec::new(NoiseKind::Special(k), 0), Normalization::Ns, d);
    let (theta, sign, sgp, sgpc) =
        (g(SpecialKind::Theta), g(SpecialKind::Sign), g(SpecialKind::Sgp), g(SpecialKind::SgpCentered));
    Outcome {
        pass: theta > 0.0 && sign > 0.0 && sgp.abs() <= band && sgpc.abs() <= band,
        detail: format!(
            "gap theta {theta:.4} (> 0), sign {sign:.4} (> 0); sgp {sgp:.4}, sgp-centered {sgpc:.4} (|gap| <= {band:.4} = 3 x RMS of raw Gaussian gaps)"
        ),
    }
}

fn criterion_7(d: &Splits, ones: &Model) -> Outcome {
    let binary = |m: &Model| -> Vec<f64> {
        (0..3).map(|s| gap(m, NoiseSpec::new(NoiseKind::Common(CommonKind::Binary), s), Normalization::FilterNs, d)).collect()
    };
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, init) in [("ones", BnInit::Ones), ("u01", BnInit::Uniform01)] {
        let m = if init == BnInit::Ones { ones.clone() } else { train_digits(d, init) };
        let pos = positive_fraction(&bn_weights(&m));
        let gap = mean(&binary(&m));
        pass &= pos > 0.9 && gap > 0.0;
        parts.push(format!("{name}: positive {pos:.3} (> 0.9), gap {gap:.4} (> 0)"));
    }
    let m = train_digits(d, BnInit::Gauss01);
    let pos = positive_fraction(&bn_weights(&m));
    let gap_b = mean(&binary(&m));
    let sym: Vec<f64> = (0..3)
        .map(|s| gap(&m, NoiseSpec::new(NoiseKind::Common(CommonKind::Gauss01), s), Normalization::FilterNs, d))
        .collect();
    let band = 3.0 * rms(&sym);
    pass &= (pos - 0.5).abs() <= 0.1 && gap_b.abs() <= band;
    parts.push(format!("g01: positive {pos:.3} (0.5 +- 0.1), gap {gap_b:.4} (|gap| <= {band:.4} = 3 x RMS of Gaussian gaps)"));
    Outcome { pass, detail: format!("{{0,1}} direction, filter-NS: {}", parts.join("; ")) }
}

/// Plain FedAvg written against the public training API only.
fn reference_fedavg(cfg: &FedConfig, arch: &Architecture, d: &Splits) -> Model {
    let shards = dirichlet_partition(d.train.labels(), 10, cfg.clients, cfg.alpha, cfg.seed).unwrap();
    let shards: Vec<Dataset> = shards.iter().map(|s| d.train.subset(&s.indices)).collect();
    let mut idx = index::sample(&mut rng::stream(cfg.seed, "calib", 0), d.train.len(), cfg.calib_size).into_vec();
    idx.sort_unstable();
    let calib = d.train.subset(&idx);
    let mut global = Model::new(arch.clone(), rng::derive_seed(cfg.seed, "model", 0)).unwrap();
    for t in 0..cfg.rounds {
        let mut sum = vec![0.0; global.params().len()];
        for (k, shard) in shards.iter().enumerate() {
            let mut local = global.clone();
            let tc = TrainConfig {
                lr: cfg.lr,
                momentum: cfg.momentum,
                weight_decay: cfg.weight_decay,
                batch_size: cfg.batch_size,
                epochs: cfg.local_epochs,
                schedule: LrSchedule::Constant,
                seed: rng::derive_seed(cfg.seed, "client", (t * cfg.clients + k) as u64),
            };
            train(&mut local, shard, &tc).unwrap();
            for (s, v) in sum.iter_mut().zip(local.params().values()) {
                *s += v;
            }
        }
        sum.iter_mut().for_each(|s| *s /= shards.len() as f64);
        global = global.with_params(global.params().with_values(sum).unwrap()).unwrap();
        global.bn_recompute(&calib).unwrap();
    }
    global
}

fn criterion_8(d: &Splits) -> Outcome {
    let arch = Architecture::mlp(64, &[32], 10, Some(BnInit::Ones));
    let cfg = FedConfig { clients: 5, rounds: 3, local_epochs: 1, seed: 8, ..Default::default() };
    let reference = reference_fedavg(&cfg, &arch, d);
    let hash = |m: &Model| sha256_hex(checkpoint::to_string(m).unwrap().as_bytes());
    let mut hashes = Vec::new();
    for reduction in [Reduction::Mean, Reduction::Sum] {
        let run = server_loop(&FedConfig { gamma: 0.0, reduction, ..cfg.clone() }, &arch, &d.train, &d.test, &Parallel).unwrap();
        hashes.push(hash(&run.model));
    }
    let want = hash(&reference);
    Outcome {
        pass: hashes.iter().all(|h| *h == want),
        detail: format!("reference FedAvg checkpoint {}, gamma=0 (mean, sum) {} / {}", &want[..16], &hashes[0][..16], &hashes[1][..16]),
    }
}

fn criterion_9(d: &Splits) -> Outcome {
    let labels = d.train.labels();
    let n = labels.len();
    let global: Vec<f64> = (0..10).map(|c| labels.iter().filter(|&&l| l == c).count() as f64 / n as f64).collect();
    let mut exact = true;
    for (alpha, seed) in [(0.1, 0), (0.5, 1), (1000.0, 2)] {
        let shards = dirichlet_partition(labels, 10, 10, alpha, seed).unwrap();
        let mut all: Vec<usize> = shards.iter().flat_map(|s| s.indices.iter().copied()).collect();
        all.sort_unstable();
        exact &= all == (0..n).collect::<Vec<_>>();
    }
    let mut worst: f64 = 0.0;
    for s in dirichlet_partition(labels, 10, 10, 1000.0, 9).unwrap() {
        for (c, g) in global.iter().enumerate() {
            let share = s.indices.iter().filter(|&&i| labels[i] == c).count() as f64 / s.indices.len() as f64;
            worst = worst.max((share - g).abs());
        }
    }
    let mut skewed = 0;
    for seed in 0..10 {
        let dominated = dirichlet_partition(labels, 10, 10, 0.1, seed).unwrap().iter().any(|s| {
            let top = (0..10).map(|c| s.indices.iter().filter(|&&i| labels[i] == c).count()).max().unwrap();
            top as f64 > 0.6 * s.indices.len() as f64
        });
        skewed += usize::from(dominated);
    }
    Outcome {
        pass: exact && worst <= 0.05 && skewed == 10,
        detail: format!(
            "exact partitions: {exact}; alpha=1000 worst class-share deviation {worst:.4} (<= 0.05); alpha=0.1 seeds with a >60% client {skewed}/10"
        ),
    }
}

fn criterion_10(d: &Splits) -> Outcome {
    let start = Instant::now();
    let base = FedConfig { clients: 10, rounds: 30, local_epochs: 2, alpha: 0.5, ..Default::default() };
    let grid = CompareGrid { alphas: vec![0.5], gammas: vec![0.001, 0.01, 0.1], prox_mu: None, seeds: vec![0, 1, 2] };
    let rows = fed_compare(&base, &grid, &digits_arch(BnInit::Ones), &d.train, &d.test, &Parallel).unwrap();
    let fedavg = rows.iter().find(|r| r.method == "fedavg").unwrap();
    let g01 = rows.iter().find(|r| r.method != "fedavg" && r.gamma == 0.1).unwrap();
    let higher = g01.ssr_by_round.iter().zip(&fedavg.ssr_by_round).filter(|(a, b)| a > b).count();
    let frac = higher as f64 / fedavg.ssr_by_round.len() as f64;
    let best = rows.iter().filter(|r| r.method != "fedavg").max_by(|a, b| a.mean.total_cmp(&b.mean)).unwrap();
    let (fast, t) = within(start, 600);
    Outcome {
        pass: frac >= 0.9 && best.mean >= fedavg.mean - 0.005 && fast,
        detail: format!(
            "rounds with SSR(gamma=0.1) > SSR(gamma=0): {higher}/{} ({:.0}%, >= 90%); final-round SSR {:.4} vs {:.4}; best {} acc {:.4} vs FedAvg {:.4} (>= -0.005); {t}",
            fedavg.ssr_by_round.len(),
            100.0 * frac,
            g01.ssr_by_round.last().unwrap(),
            fedavg.ssr_by_round.last().unwrap(),
            best.method,
            best.mean,
            fedavg.mean
        ),
    }
}

fn criterion_11() -> Outcome {
    let cfg = ReluSimConfig::default();
    let sim = relu_sim(&cfg, 11).unwrap();
    let means: Vec<f64> = sim.rows.iter().map(|r| r.mean).collect();
    let increasing = means.windows(2).all(|w| w[0] < w[1]);
    let zero = sim.rows.iter().find(|r| r.lambda == 0.0).unwrap();
    let expected = cfg.a * sim.h_norm_sq;
    let bound = 5.0 * zero.std / (cfg.trials as f64).sqrt();
    let dev = (zero.mean - expected).abs();
    Outcome {
        pass: increasing && dev <= bound,
        detail: format!(
            "means {:?} strictly increasing: {increasing}; lambda=0 mean {:.3} vs a*||h||^2 {expected:.3} (|diff| {dev:.3} <= 5 SE = {bound:.3})",
            means.iter().map(|m| (m * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            zero.mean
        ),
    }
}

fn criterion_12(m: &Model, d: &Splits) -> Outcome {
    let eps = NoiseSpec::new(NoiseKind::Common(CommonKind::Gauss01), 0).realize(None, m.params()).unwrap();
    let a = [0.2, 0.4, 0.6, 0.8, 1.0];
    let lambdas: Vec<f64> = a.iter().flat_map(|&x| [-x, x]).collect();
    let sweep = confusion_sweep(m, &eps.values, &lambdas, ScanData { eval: &d.test, calib: &d.train }, "relu2").unwrap();
    let pairs: Vec<(f64, f64)> = sweep.chunks(2).map(|p| (p[1].1.diag_sum(), p[0].1.diag_sum())).collect();
    Outcome {
        pass: pairs.iter().all(|(plus, minus)| plus >= minus),
        detail: format!(
            "diag_sum(+a) vs (-a) at relu2: {}",
            a.iter().zip(&pairs).map(|(a, (p, n))| format!("{a}: {p:.3}/{n:.3}")).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn criterion_13(m: &Model, d: &Splits) -> Outcome {
    let cfg = SoupConfig {
        epochs: vec![1, 2, 3, 5, 10, 20, 30, 50],
        split_seed: 0,
        train: TrainConfig { epochs: 50, ..Default::default() },
        curve_lambdas: Vec::new(),
    };
    let data = ScanData { eval: &d.test, calib: &d.train };
    let pre = soup_experiment(m, data, &cfg, &Parallel).unwrap();
    let ssr: Vec<f64> = pre.rows.iter().map(|r| r.ssr_ab).collect();
    let gaps: Vec<f64> = pre.rows.iter().map(|r| r.gap).collect();
    let rho = spearman(&ssr, &gaps);
    let scratch = soup_experiment(&Model::new(digits_arch(BnInit::Ones), 7).unwrap(), data, &cfg, &Parallel).unwrap();
    let s: Vec<f64> = scratch.rows.iter().map(|r| r.ssr_ab).collect();
    let e: Vec<f64> = scratch.rows.iter().map(|r| r.epoch as f64).collect();
    let rho_scratch = spearman(&e, &s);
    Outcome {
        pass: rho > 0.0 && rho_scratch <= -0.9 && s.last() < s.first(),
        detail: format!(
            "well-trained init Spearman(SSR_AB, gap) {rho:.3} (> 0); scratch SSR_AB {:.3} -> {:.3}, Spearman(epoch, SSR_AB) {rho_scratch:.3} (<= -0.9)",
            s[0],
            s[s.len() - 1]
        ),
    }
}

fn criterion_14(m: &Model, d: &Splits) -> Outcome {
    let o = gradient_orthogonality(m, &d.train).unwrap();
    Outcome {
        pass: o.cosine.abs() < 0.1,
        detail: format!("cos(sign(theta), grad) {:.4} (|cos| < 0.1), |grad| {:.3e}", o.cosine, o.gradient_norm),
    }
}

fn criterion_15(d: &Splits) -> Outcome {
    let probe = train_linear_probe(&d.train, &LinearProbeConfig::default()).unwrap();
    let flat = ParamVector::flat(probe.w.clone());
    let eps = sample_common(CommonKind::Gauss01, flat.layout(), 0).values.into_values();
    let eps = probe_ns(&probe, &eps).unwrap();
    let rows = softmax_metrics(&probe, &d.test, &eps, &[-0.5, 0.5], true).unwrap();
    let (neg, pos) = (&rows[0], &rows[1]);
    Outcome {
        pass: pos.tr_p < neg.tr_p && pos.tr_h < neg.tr_h,
        detail: format!(
            "E[tr P] {:.4} at +0.5 vs {:.4} at -0.5; tr H {:.3} vs {:.3} (both strictly smaller at +0.5)",
            pos.tr_p, neg.tr_p, pos.tr_h, neg.tr_h
        ),
    }
}

fn main() -> ExitCode {
    let started = Instant::now();
    let d = digits();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("{} {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "gradient oracle", criterion_1());
    report(2, "Hessian trace oracle", criterion_2());
    report(3, "NS exactness", criterion_3());
    let (c4, model) = criterion_4(&d);
    let raw_gaps = c4.raw_gaps;
    report(4, "asymmetric valley", c4.outcome);
    report(5, "sign-ratio monotonicity", criterion_5(&model, &d));
    report(6, "special directions", criterion_6(&model, &d, &raw_gaps));
    report(7, "BN initialization", criterion_7(&d, &model));
    report(8, "FedSign degeneracy", criterion_8(&d));
    report(9, "Dirichlet partition", criterion_9(&d));
    report(10, "FedSign effect", criterion_10(&d));
    report(11, "ReLU simulation", criterion_11());
    report(12, "activation confusion", criterion_12(&model, &d));
    report(13, "soup correlation", criterion_13(&model, &d));
    report(14, "gradient orthogonality", criterion_14(&model, &d));
    report(15, "softmax metrics", criterion_15(&d));
    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| r.0.to_string()).collect();
    println!(
        "acceptance: {}/{} passed in {:.0} s{}",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
