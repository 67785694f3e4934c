//! `valley` command line.
//!
//! Every subcommand accepts `--config FILE` (TOML with the same keys as the
//! long flags, underscores instead of dashes) and `--out DIR`. Values are
//! resolved as: command-line flag, else config file, else built-in default.
//! The resolved values are written to `DIR/config.toml` and echoed in
//! `DIR/manifest.json`, so `--config DIR/config.toml` repeats a run.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use valley_core::data::Splits;
use valley_core::fed::{fed_compare, server_loop, CompareGrid, FedConfig, Reduction};
use valley_core::nn::{train, LrSchedule, Model, TrainConfig};
use valley_core::noise::{parse_transform, NoiseKind, NoiseSpec};
use valley_core::params::ParamVector;
use valley_core::probes::{
    confusion_sweep, gradient_orthogonality, probe_evaluate, probe_ns, relu_sim, softmax_metrics, train_linear_probe,
    weight_pattern_sweep, LinearProbeConfig, ReluSimConfig,
};
use valley_core::scan::{
    asymmetry_stats, bn_init_study, interpolate_two, scan_1d, soup_experiment, uniform_grid, BnInitConfig, Metric,
    Normalization, ScanConfig, ScanData, ScanResult, SoupConfig,
};

use crate::checkpoint;
use crate::datasets::{self, Source};
use crate::error::{LabError, LabResult};
use crate::exec::Parallel;
use crate::manifest::OutputDir;
use crate::plot::{pgm_grid, render_svg, LinePlot, Series};
use crate::setup::{self, parse_bn, parse_f64_list, parse_u64_list, parse_usize_list};
use crate::tables;

/// Declares an options struct whose fields are all optional, so flags,
/// config file and defaults can be layered.
macro_rules! options {
    ($(#[$m:meta])* $name:ident { $( $(#[$fm:meta])* $field:ident : $ty:ty = $default:expr ),* $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $(
                $(#[$fm])*
                #[arg(long)]
                #[serde(default, skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }

        impl $name {
            /// Fields set in `self` win over those in `base`.
            pub fn overlay(self, base: Self) -> Self {
                Self { $( $field: self.$field.or(base.$field), )* }
            }

            pub fn defaults() -> Self {
                Self { $( $field: $default, )* }
            }
        }
    };
}

fn req<T: Clone>(v: &Option<T>, name: &str) -> LabResult<T> {
    v.clone().ok_or_else(|| LabError::Config(format!("missing required option --{}", name.replace('_', "-"))))
}

options! {
    TrainOpts {
        /// digits | blobs[:k=v,..] | cifar10:DIR[,subset=N]
        dataset: String = Some("digits".into()),
        split_seed: u64 = Some(0),
        /// mlp:H1,H2,.. | cnn:C1,C2,..
        arch: String = Some("mlp:128,128".into()),
        /// ones | u01 | g01 | none
        bn: String = Some("ones".into()),
        seed: u64 = Some(0),
        lr: f64 = Some(0.03),
        momentum: f64 = Some(0.9),
        weight_decay: f64 = Some(5e-4),
        batch_size: usize = Some(64),
        epochs: usize = Some(30),
        /// cosine | constant
        schedule: String = Some("cosine".into()),
    }
}

options! {
    ScanOpts {
        checkpoint: PathBuf = None,
        dataset: String = Some("digits".into()),
        split_seed: u64 = Some(0),
        /// g01 | u-11 | ternary | g11 | u01 | binary | ones | init | theta | sign | sign-centered | sgp | sgp-centered
        noise: String = Some("g01".into()),
        /// none | sign-replace | sign-ratio
        transform: String = Some("none".into()),
        ratio: f64 = None,
        noise_seed: u64 = Some(0),
        s: f64 = Some(1.0),
        /// ns | filter-ns | raw
        normalization: String = Some("ns".into()),
        points: usize = Some(41),
        range: f64 = Some(1.0),
        bn_recompute: bool = Some(true),
        /// Comma-separated BN inits (ones,u01,g01): train one model per init instead of loading a checkpoint.
        bn_init_study: String = None,
        arch: String = Some("mlp:128,128".into()),
        seed: u64 = Some(0),
        epochs: usize = Some(30),
        batch_size: usize = Some(64),
        lr: f64 = Some(0.03),
    }
}

options! {
    InterpolateOpts {
        a: PathBuf = None,
        b: PathBuf = None,
        dataset: String = Some("digits".into()),
        split_seed: u64 = Some(0),
        #[arg(allow_hyphen_values = true)]
        lo: f64 = Some(-1.0),
        hi: f64 = Some(2.0),
        points: usize = Some(31),
    }
}

options! {
    SoupOpts {
        /// Shared initialisation; a fresh model from --arch/--bn/--seed when absent.
        checkpoint: PathBuf = None,
        dataset: String = Some("digits".into()),
        split_seed: u64 = Some(0),
        arch: String = Some("mlp:128,128".into()),
        bn: String = Some("ones".into()),
        seed: u64 = Some(0),
        epochs: String = Some("1,2,3,5,10,20,30,50".into()),
        half_seed: u64 = Some(0),
        train_seed: u64 = Some(0),
        lr: f64 = Some(0.03),
        momentum: f64 = Some(0.9),
        weight_decay: f64 = Some(5e-4),
        batch_size: usize = Some(64),
        schedule: String = Some("cosine".into()),
        curve_points: usize = Some(31),
    }
}

options! {
    FedOpts {
        k: usize = Some(10),
        q: f64 = Some(1.0),
        t: usize = Some(30),
        e: usize = Some(2),
        b: usize = Some(32),
        gamma: f64 = Some(0.0),
        prox_mu: f64 = Some(0.0),
        alpha: f64 = Some(0.5),
        seed: u64 = Some(0),
        dataset: String = Some("digits".into()),
        arch: String = Some("mlp:128,128".into()),
        bn: String = Some("ones".into()),
        /// mean | sum
        reduction: String = Some("mean".into()),
        lr: f64 = Some(0.03),
        momentum: f64 = Some(0.9),
        weight_decay: f64 = Some(5e-4),
        calib_size: usize = Some(512),
        split_seed: u64 = Some(0),
        /// Run the FedAvg / FedSign / proximal comparison grid instead of one run.
        compare: bool = Some(false),
        gammas: String = Some("0.001,0.01,0.1".into()),
        alphas: String = None,
        seeds: String = Some("0,1,2".into()),
        compare_prox_mu: f64 = None,
    }
}

options! {
    ReluOpts {
        a: f64 = Some(0.1),
        n: usize = Some(10_000),
        d: usize = Some(100),
        #[arg(allow_hyphen_values = true)]
        lambdas: String = Some("-1,-0.5,0,0.5,1".into()),
        bins: usize = Some(50),
        seed: u64 = Some(0),
    }
}

options! {
    SoftmaxOpts {
        dataset: String = Some("digits".into()),
        split_seed: u64 = Some(0),
        lr: f64 = Some(0.5),
        l2: f64 = Some(1e-3),
        steps: usize = Some(500),
        /// Common noise kind for ε.
        noise: String = Some("g01".into()),
        noise_seed: u64 = Some(0),
        #[arg(allow_hyphen_values = true)]
        lambdas: String = Some("-1,-0.75,-0.5,-0.25,0,0.25,0.5,0.75,1".into()),
        sign_consistent: bool = Some(true),
    }
}

options! {
    ConfusionOpts {
        checkpoint: PathBuf = None,
        dataset: String = Some("digits".into()),
        split_seed: u64 = Some(0),
        tag: String = Some("relu2".into()),
        noise: String = Some("g01".into()),
        noise_seed: u64 = Some(0),
        #[arg(allow_hyphen_values = true)]
        lambdas: String = Some("-1,-0.8,-0.6,-0.4,-0.2,0,0.2,0.4,0.6,0.8,1".into()),
    }
}

options! {
    OrthogonalityOpts {
        checkpoint: PathBuf = None,
        dataset: String = Some("digits".into()),
        split_seed: u64 = Some(0),
    }
}

options! {
    PatternOpts {
        checkpoint: PathBuf = None,
        tensor: String = Some("fc0.weight".into()),
        rows: usize = Some(8),
        #[arg(allow_hyphen_values = true)]
        lambdas: String = Some("-1,-0.5,0,0.5,1".into()),
        /// Multiply λ by the tensor's mean |w|.
        relative: bool = Some(true),
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML file with option values; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Parser)]
#[command(name = "valley", version, about = "Asymmetric-valley loss-landscape lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and save a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// 1D scan around a checkpoint along a noise direction.
    Scan {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: ScanOpts,
    },
    /// Interpolate between two checkpoints.
    Interpolate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: InterpolateOpts,
    },
    /// Train two models on disjoint halves and track sign consistency.
    Soup {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: SoupOpts,
    },
    /// Federated simulation (FedAvg / FedSign / proximal).
    Fed {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: FedOpts,
    },
    /// Theory probes.
    Probe {
        #[command(subcommand)]
        probe: ProbeCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum ProbeCommand {
    /// Simulated ReLU pre-activations under sign-consistent shifts.
    Relu {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: ReluOpts,
    },
    /// Softmax trace metrics along a perturbation of a linear probe.
    Softmax {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: SoftmaxOpts,
    },
    /// Activation confusion between a model and its perturbations.
    Confusion {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: ConfusionOpts,
    },
    /// Cosine between sign(θ) and the full-batch gradient.
    Orthogonality {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: OrthogonalityOpts,
    },
    /// Weight patterns of w + λ·sign(w) as a PGM grid.
    Pattern {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: PatternOpts,
    },
}

/// Parse `argv` and run; returns the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve<O: DeserializeOwned>(common: &Common, flags: O, overlay: impl Fn(O, O) -> O, defaults: O) -> LabResult<O> {
    let file = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| LabError::io(p, e))?;
            toml::from_str(&text).map_err(|e| LabError::Config(format!("{}: {e}", p.display())))?
        }
        None => return Ok(overlay(flags, defaults)),
    };
    Ok(overlay(overlay(flags, file), defaults))
}

pub fn run(command: Command) -> LabResult<()> {
    match command {
        Command::Train { common, opts } => {
            let o = resolve(&common, opts, TrainOpts::overlay, TrainOpts::defaults())?;
            run_train(&common.out, &o)
        }
        Command::Scan { common, opts } => {
            let o = resolve(&common, opts, ScanOpts::overlay, ScanOpts::defaults())?;
            run_scan(&common.out, &o)
        }
        Command::Interpolate { common, opts } => {
            let o = resolve(&common, opts, InterpolateOpts::overlay, InterpolateOpts::defaults())?;
            run_interpolate(&common.out, &o)
        }
        Command::Soup { common, opts } => {
            let o = resolve(&common, opts, SoupOpts::overlay, SoupOpts::defaults())?;
            run_soup(&common.out, &o)
        }
        Command::Fed { common, opts } => {
            let o = resolve(&common, opts, FedOpts::overlay, FedOpts::defaults())?;
            run_fed(&common.out, &o)
        }
        Command::Probe { probe } => match probe {
            ProbeCommand::Relu { common, opts } => {
                let o = resolve(&common, opts, ReluOpts::overlay, ReluOpts::defaults())?;
                run_relu(&common.out, &o)
            }
            ProbeCommand::Softmax { common, opts } => {
                let o = resolve(&common, opts, SoftmaxOpts::overlay, SoftmaxOpts::defaults())?;
                run_softmax(&common.out, &o)
            }
            ProbeCommand::Confusion { common, opts } => {
                let o = resolve(&common, opts, ConfusionOpts::overlay, ConfusionOpts::defaults())?;
                run_confusion(&common.out, &o)
            }
            ProbeCommand::Orthogonality { common, opts } => {
                let o = resolve(&common, opts, OrthogonalityOpts::overlay, OrthogonalityOpts::defaults())?;
                run_orthogonality(&common.out, &o)
            }
            ProbeCommand::Pattern { common, opts } => {
                let o = resolve(&common, opts, PatternOpts::overlay, PatternOpts::defaults())?;
                run_pattern(&common.out, &o)
            }
        },
    }
}

fn load_splits(dataset: &str, split_seed: u64) -> LabResult<Splits> {
    let source: Source = dataset.parse()?;
    datasets::load(&source, split_seed)
}

fn parse_schedule(s: &str) -> LabResult<LrSchedule> {
    match s {
        "cosine" => Ok(LrSchedule::CosineAnneal),
        "constant" => Ok(LrSchedule::Constant),
        _ => Err(LabError::Config(format!("unknown schedule `{s}` (cosine, constant)"))),
    }
}

fn parse_normalization(s: &str) -> LabResult<Normalization> {
    match s {
        "ns" => Ok(Normalization::Ns),
        "filter-ns" => Ok(Normalization::FilterNs),
        "raw" => Ok(Normalization::Raw),
        _ => Err(LabError::Config(format!("unknown normalization `{s}` (ns, filter-ns, raw)"))),
    }
}

fn load_checkpoint(out: &mut OutputDir, path: &Path) -> LabResult<Model> {
    let m = checkpoint::load(path)?;
    out.input(path)?;
    Ok(m)
}

fn curve_plot(title: &str, x_label: &str, y_label: &str, series: Vec<Series>) -> LabResult<String> {
    render_svg(&LinePlot { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), series })
}

fn scan_series(label: &str, r: &ScanResult) -> Series {
    Series::new(label, r.points.iter().map(|p| (p.lambda, p.error)).collect())
}

fn run_train(out: &Path, o: &TrainOpts) -> LabResult<()> {
    let splits = load_splits(&req(&o.dataset, "dataset")?, req(&o.split_seed, "split_seed")?)?;
    let arch = setup::build_arch(
        &req(&o.arch, "arch")?,
        parse_bn(&req(&o.bn, "bn")?)?,
        splits.train.sample_shape(),
        splits.train.num_classes(),
    )?;
    let splits = setup::fit_splits(&splits, &arch)?;
    let cfg = TrainConfig {
        lr: req(&o.lr, "lr")?,
        momentum: req(&o.momentum, "momentum")?,
        weight_decay: req(&o.weight_decay, "weight_decay")?,
        batch_size: req(&o.batch_size, "batch_size")?,
        epochs: req(&o.epochs, "epochs")?,
        schedule: parse_schedule(&req(&o.schedule, "schedule")?)?,
        seed: req(&o.seed, "seed")?,
    };
    cfg.validate()?;
    let mut model = Model::new(arch, cfg.seed)?;
    let log = train(&mut model, &splits.train, &cfg)?;
    if model.arch().has_batchnorm() {
        model.bn_recompute(&splits.train)?;
    }
    let train_eval = model.evaluate(&splits.train)?;
    let test_eval = model.evaluate(&splits.test)?;

    let mut dir = OutputDir::create(out)?;
    dir.write("model.ckpt", checkpoint::to_string(&model)?)?;
    dir.write("train_log.csv", tables::train_log(&log).to_csv())?;
    if !log.is_empty() {
        let loss = Series::new("loss", log.iter().map(|l| ((l.epoch + 1) as f64, l.loss)).collect());
        let err = Series::new("error", log.iter().map(|l| ((l.epoch + 1) as f64, l.error)).collect());
        dir.write("train.svg", curve_plot("training", "epoch", "value", vec![loss, err])?)?;
    }
    dir.write_json(
        "summary.json",
        &serde_json::json!({
            "train": train_eval,
            "test": test_eval,
            "fingerprint": format!("{:016x}", model.fingerprint()),
        }),
    )?;
    dir.finish("train", o)?;
    Ok(())
}

fn run_scan(out: &Path, o: &ScanOpts) -> LabResult<()> {
    let range = req(&o.range, "range")?;
    let cfg = ScanConfig {
        lambdas: uniform_grid(-range, range, req(&o.points, "points")?),
        s: req(&o.s, "s")?,
        normalization: parse_normalization(&req(&o.normalization, "normalization")?)?,
        bn_recompute: req(&o.bn_recompute, "bn_recompute")?,
    };
    cfg.validate()?;
    let splits = load_splits(&req(&o.dataset, "dataset")?, req(&o.split_seed, "split_seed")?)?;
    let mut dir = OutputDir::create(out)?;

    if let Some(kinds) = &o.bn_init_study {
        let kinds = kinds
            .split(',')
            .map(|k| parse_bn(k.trim())?.ok_or_else(|| LabError::Config("`none` is not a BN init".into())))
            .collect::<LabResult<Vec<_>>>()?;
        let arch = setup::build_arch(
            &req(&o.arch, "arch")?,
            Some(valley_core::nn::BnInit::Ones),
            splits.train.sample_shape(),
            splits.train.num_classes(),
        )?;
        let splits = setup::fit_splits(&splits, &arch)?;
        let study_cfg = BnInitConfig {
            model_seed: req(&o.seed, "seed")?,
            train: TrainConfig {
                epochs: req(&o.epochs, "epochs")?,
                batch_size: req(&o.batch_size, "batch_size")?,
                lr: req(&o.lr, "lr")?,
                seed: req(&o.seed, "seed")?,
                ..Default::default()
            },
            scan: cfg,
            noise_seed: req(&o.noise_seed, "noise_seed")?,
            bins: 30,
        };
        let data = ScanData { eval: &splits.test, calib: &splits.train };
        let reports = bn_init_study(&arch, &splits.train, data, &kinds, &study_cfg, &Parallel)?;
        let mut summary = tables::Table::new(tables::BN_INIT_HEADER);
        let mut series = Vec::new();
        for r in &reports {
            let name = setup::bn_name(r.init);
            let gap_ns = asymmetry_stats(&r.scan_ns, Metric::Error).gap;
            let gap_fns = asymmetry_stats(&r.scan_filter_ns, Metric::Error).gap;
            summary.push(vec![
                name.into(),
                r.positive_init.to_string(),
                r.positive_trained.to_string(),
                r.train_error.to_string(),
                gap_ns.to_string(),
                gap_fns.to_string(),
            ]);
            dir.write(&format!("scan_{name}_ns.csv"), tables::scan(&r.scan_ns).to_csv())?;
            dir.write(&format!("scan_{name}_filter_ns.csv"), tables::scan(&r.scan_filter_ns).to_csv())?;
            dir.write(&format!("bn_hist_{name}_init.csv"), tables::histogram(&r.hist_init).to_csv())?;
            dir.write(&format!("bn_hist_{name}_trained.csv"), tables::histogram(&r.hist_trained).to_csv())?;
            series.push(scan_series(&format!("{name} ns"), &r.scan_ns));
            series.push(scan_series(&format!("{name} filter-ns"), &r.scan_filter_ns));
        }
        dir.write("bn_init.csv", summary.to_csv())?;
        dir.write("bn_init.svg", curve_plot("BN init study, {0,1} direction", "lambda", "test error", series)?)?;
        dir.finish("scan", o)?;
        return Ok(());
    }

    let ckpt = req(&o.checkpoint, "checkpoint")?;
    let model = load_checkpoint(&mut dir, &ckpt)?;
    let splits = setup::fit_splits(&splits, model.arch())?;
    let kind: NoiseKind = req(&o.noise, "noise")?.parse()?;
    let mut spec = NoiseSpec::new(kind, req(&o.noise_seed, "noise_seed")?);
    spec.transform = parse_transform(&req(&o.transform, "transform")?, o.ratio)?;
    let noise = spec.realize(Some(model.init_snapshot()), model.params())?;
    let data = ScanData { eval: &splits.test, calib: &splits.train };
    let result = scan_1d(&model, &noise, &cfg, data, &Parallel)?;

    dir.write("scan.csv", tables::scan(&result).to_csv())?;
    dir.write_json(
        "scan.json",
        &serde_json::json!({
            "noise": noise.spec,
            "noise_label": noise.spec.to_string(),
            "scan": cfg,
            "model_id": format!("{:016x}", result.model_id),
            "eval_set": "test",
            "calibration_set": "train",
            "asymmetry": {
                "error": asymmetry_stats(&result, Metric::Error),
                "ce": asymmetry_stats(&result, Metric::Ce),
                "lambda_zero_included": false,
                "note": "pos_mean averages lambda > 0, neg_mean averages lambda < 0; gap = neg_mean - pos_mean",
            },
            "non_finite_points": result.points.iter().filter(|p| !p.finite).map(|p| p.lambda).collect::<Vec<_>>(),
        }),
    )?;
    dir.write("scan.svg", curve_plot("1D scan", "lambda", "test error", vec![scan_series(&noise.spec.to_string(), &result)])?)?;
    dir.finish("scan", o)?;
    Ok(())
}

fn run_interpolate(out: &Path, o: &InterpolateOpts) -> LabResult<()> {
    let mut dir = OutputDir::create(out)?;
    let a = load_checkpoint(&mut dir, &req(&o.a, "a")?)?;
    let b = load_checkpoint(&mut dir, &req(&o.b, "b")?)?;
    let splits = load_splits(&req(&o.dataset, "dataset")?, req(&o.split_seed, "split_seed")?)?;
    let splits = setup::fit_splits(&splits, a.arch())?;
    let (lo, hi, points) = (req(&o.lo, "lo")?, req(&o.hi, "hi")?, req(&o.points, "points")?);
    if !(lo < hi) || points < 2 {
        return Err(LabError::Config("need lo < hi and at least 2 points".into()));
    }
    let lambdas = uniform_grid(lo, hi, points);
    let interp = interpolate_two(&a, &b, &lambdas, ScanData { eval: &splits.test, calib: &splits.train }, &Parallel)?;
    dir.write("interp.csv", tables::scan(&interp.curve).to_csv())?;
    dir.write_json("interp.json", &serde_json::json!({ "ssr_start": interp.ssr_start, "ssr_end": interp.ssr_end }))?;
    dir.write("interp.svg", curve_plot("interpolation", "lambda", "test error", vec![scan_series("(1-l) a + l b", &interp.curve)])?)?;
    dir.finish("interpolate", o)?;
    Ok(())
}

fn run_soup(out: &Path, o: &SoupOpts) -> LabResult<()> {
    let mut dir = OutputDir::create(out)?;
    let splits = load_splits(&req(&o.dataset, "dataset")?, req(&o.split_seed, "split_seed")?)?;
    let init = match &o.checkpoint {
        Some(p) => load_checkpoint(&mut dir, p)?,
        None => {
            let arch = setup::build_arch(
                &req(&o.arch, "arch")?,
                parse_bn(&req(&o.bn, "bn")?)?,
                splits.train.sample_shape(),
                splits.train.num_classes(),
            )?;
            Model::new(arch, req(&o.seed, "seed")?)?
        }
    };
    let splits = setup::fit_splits(&splits, init.arch())?;
    let cfg = SoupConfig {
        epochs: parse_usize_list(&req(&o.epochs, "epochs")?)?,
        split_seed: req(&o.half_seed, "half_seed")?,
        train: TrainConfig {
            lr: req(&o.lr, "lr")?,
            momentum: req(&o.momentum, "momentum")?,
            weight_decay: req(&o.weight_decay, "weight_decay")?,
            batch_size: req(&o.batch_size, "batch_size")?,
            epochs: 0,
            schedule: parse_schedule(&req(&o.schedule, "schedule")?)?,
            seed: req(&o.train_seed, "train_seed")?,
        },
        curve_lambdas: match req(&o.curve_points, "curve_points")? {
            0 => Vec::new(),
            n => uniform_grid(-1.0, 2.0, n),
        },
    };
    cfg.train.validate()?;
    let report = soup_experiment(&init, ScanData { eval: &splits.test, calib: &splits.train }, &cfg, &Parallel)?;
    dir.write("soup.csv", tables::soup(&report).to_csv())?;
    dir.write("soup_curves.csv", tables::soup_curves(&report).to_csv())?;
    let at = |f: fn(&valley_core::scan::SoupRow) -> f64| report.rows.iter().map(|r| (r.epoch as f64, f(r))).collect();
    dir.write(
        "soup.svg",
        curve_plot(
            "split-and-average",
            "epoch",
            "value",
            vec![Series::new("ssr_ab", at(|r| r.ssr_ab)), Series::new("gap", at(|r| r.gap))],
        )?,
    )?;
    dir.finish("soup", o)?;
    Ok(())
}

fn run_fed(out: &Path, o: &FedOpts) -> LabResult<()> {
    let splits = load_splits(&req(&o.dataset, "dataset")?, req(&o.split_seed, "split_seed")?)?;
    let arch = setup::build_arch(
        &req(&o.arch, "arch")?,
        parse_bn(&req(&o.bn, "bn")?)?,
        splits.train.sample_shape(),
        splits.train.num_classes(),
    )?;
    let splits = setup::fit_splits(&splits, &arch)?;
    let reduction = match req(&o.reduction, "reduction")?.as_str() {
        "mean" => Reduction::Mean,
        "sum" => Reduction::Sum,
        other => return Err(LabError::Config(format!("unknown reduction `{other}` (mean, sum)"))),
    };
    let cfg = FedConfig {
        clients: req(&o.k, "k")?,
        participation: req(&o.q, "q")?,
        rounds: req(&o.t, "t")?,
        local_epochs: req(&o.e, "e")?,
        batch_size: req(&o.b, "b")?,
        gamma: req(&o.gamma, "gamma")?,
        reduction,
        prox_mu: req(&o.prox_mu, "prox_mu")?,
        alpha: req(&o.alpha, "alpha")?,
        seed: req(&o.seed, "seed")?,
        lr: req(&o.lr, "lr")?,
        momentum: req(&o.momentum, "momentum")?,
        weight_decay: req(&o.weight_decay, "weight_decay")?,
        calib_size: req(&o.calib_size, "calib_size")?,
        common_client_seed: false,
    };
    cfg.validate()?;
    let mut dir = OutputDir::create(out)?;
    if req(&o.compare, "compare")? {
        let grid = CompareGrid {
            alphas: match &o.alphas {
                Some(a) => parse_f64_list(a)?,
                None => vec![cfg.alpha],
            },
            gammas: parse_f64_list(&req(&o.gammas, "gammas")?)?,
            prox_mu: o.compare_prox_mu,
            seeds: parse_u64_list(&req(&o.seeds, "seeds")?)?,
        };
        let rows = fed_compare(&cfg, &grid, &arch, &splits.train, &splits.test, &Parallel)?;
        dir.write("compare.csv", tables::compare(&rows).to_csv())?;
        dir.write("compare_ssr.csv", tables::compare_ssr(&rows).to_csv())?;
        let series = rows
            .iter()
            .map(|r| {
                let label = format!("{} a={}", r.method, r.alpha);
                Series::new(label, r.ssr_by_round.iter().enumerate().map(|(t, s)| (t as f64, *s)).collect())
            })
            .collect();
        if cfg.rounds > 0 {
            dir.write("compare_ssr.svg", curve_plot("client/global sign consistency", "round", "mean SSR", series)?)?;
        }
    } else {
        let run = server_loop(&cfg, &arch, &splits.train, &splits.test, &Parallel)?;
        dir.write("rounds.csv", tables::rounds(&run.rounds).to_csv())?;
        dir.write("model.ckpt", checkpoint::to_string(&run.model)?)?;
        dir.write_json("shards.json", &run.shards)?;
        if !run.rounds.is_empty() {
            let acc = Series::new("acc", run.rounds.iter().map(|r| (r.round as f64, r.acc)).collect());
            let ssr = Series::new("mean_ssr", run.rounds.iter().map(|r| (r.round as f64, r.mean_ssr)).collect());
            dir.write("rounds.svg", curve_plot("federated rounds", "round", "value", vec![acc, ssr])?)?;
        }
    }
    dir.finish("fed", o)?;
    Ok(())
}

fn lambda_name(l: f64) -> String {
    format!("{l}").replace('-', "m")
}

fn run_relu(out: &Path, o: &ReluOpts) -> LabResult<()> {
    let cfg = ReluSimConfig {
        dim: req(&o.d, "d")?,
        a: req(&o.a, "a")?,
        trials: req(&o.n, "n")?,
        lambdas: parse_f64_list(&req(&o.lambdas, "lambdas")?)?,
        bins: req(&o.bins, "bins")?,
    };
    if cfg.bins == 0 {
        return Err(LabError::Config("bins must be >= 1".into()));
    }
    let sim = relu_sim(&cfg, req(&o.seed, "seed")?)?;
    let mut dir = OutputDir::create(out)?;
    dir.write("relu_summary.csv", tables::relu_summary(&sim).to_csv())?;
    let mut series = Vec::new();
    for row in &sim.rows {
        dir.write(&format!("relu_hist_lambda_{}.csv", lambda_name(row.lambda)), tables::histogram(&row.hist).to_csv())?;
        let pts = (0..row.hist.counts.len())
            .map(|i| {
                let (lo, hi) = row.hist.bin_edges(i);
                (0.5 * (lo + hi), row.hist.counts[i] as f64)
            })
            .collect();
        series.push(Series::new(format!("lambda={}", row.lambda), pts));
    }
    dir.write("relu.svg", curve_plot("(w + l sign w)^T h", "value", "count", series)?)?;
    dir.write_json(
        "relu.json",
        &serde_json::json!({
            "h_norm_sq": sim.h_norm_sq,
            "a_h_norm_sq": cfg.a * sim.h_norm_sq,
            "sign_dot_mean": sim.sign_dot_mean,
        }),
    )?;
    dir.finish("probe relu", o)?;
    Ok(())
}

fn run_softmax(out: &Path, o: &SoftmaxOpts) -> LabResult<()> {
    let splits = load_splits(&req(&o.dataset, "dataset")?, req(&o.split_seed, "split_seed")?)?;
    let pcfg = LinearProbeConfig { lr: req(&o.lr, "lr")?, l2: req(&o.l2, "l2")?, steps: req(&o.steps, "steps")? };
    let probe = train_linear_probe(&splits.train, &pcfg)?;
    let kind: NoiseKind = req(&o.noise, "noise")?.parse()?;
    let NoiseKind::Common(common) = kind else {
        return Err(LabError::Config(format!("softmax probe needs a common noise kind, got `{kind}`")));
    };
    let flat = ParamVector::flat(probe.w.clone());
    let eps = valley_core::noise::sample_common(common, flat.layout(), req(&o.noise_seed, "noise_seed")?);
    let eps = probe_ns(&probe, eps.values.values())?;
    let lambdas = parse_f64_list(&req(&o.lambdas, "lambdas")?)?;
    let rows = softmax_metrics(&probe, &splits.test, &eps, &lambdas, req(&o.sign_consistent, "sign_consistent")?)?;
    let (train_err, train_ce) = probe_evaluate(&probe, &splits.train)?;
    let (test_err, test_ce) = probe_evaluate(&probe, &splits.test)?;

    let mut dir = OutputDir::create(out)?;
    dir.write("softmax.csv", tables::softmax(&rows).to_csv())?;
    let s = |name: &str, f: fn(&valley_core::probes::SoftmaxMetricsRow) -> f64| {
        Series::new(name, rows.iter().map(|r| (r.lambda, f(r))).collect())
    };
    dir.write(
        "softmax.svg",
        curve_plot("softmax probe metrics", "lambda", "value", vec![s("tr_p", |r| r.tr_p), s("ce", |r| r.ce), s("error", |r| r.error)])?,
    )?;
    dir.write_json(
        "probe.json",
        &serde_json::json!({
            "train": { "error": train_err, "ce": train_ce },
            "test": { "error": test_err, "ce": test_ce },
            "classes": probe.classes,
            "dim": probe.dim,
        }),
    )?;
    dir.finish("probe softmax", o)?;
    Ok(())
}

fn run_confusion(out: &Path, o: &ConfusionOpts) -> LabResult<()> {
    let mut dir = OutputDir::create(out)?;
    let model = load_checkpoint(&mut dir, &req(&o.checkpoint, "checkpoint")?)?;
    let splits = load_splits(&req(&o.dataset, "dataset")?, req(&o.split_seed, "split_seed")?)?;
    let splits = setup::fit_splits(&splits, model.arch())?;
    let kind: NoiseKind = req(&o.noise, "noise")?.parse()?;
    let eps = NoiseSpec::new(kind, req(&o.noise_seed, "noise_seed")?).realize(Some(model.init_snapshot()), model.params())?;
    let lambdas = parse_f64_list(&req(&o.lambdas, "lambdas")?)?;
    let tag = req(&o.tag, "tag")?;
    if model.arch().find_tag(&tag).is_none() {
        let arch = model.arch();
        let tags: Vec<String> = (0..arch.layers.len()).map(|i| arch.layer_tag(i)).collect();
        return Err(LabError::Config(format!("no layer tagged `{tag}` (available: {})", tags.join(", "))));
    }
    let sweep = confusion_sweep(&model, &eps.values, &lambdas, ScanData { eval: &splits.test, calib: &splits.train }, &tag)?;
    dir.write("confusion.csv", tables::confusion(&sweep).to_csv())?;
    let diag = Series::new("diag_sum", sweep.iter().map(|(l, c)| (*l, c.diag_sum())).collect());
    dir.write("confusion.svg", curve_plot(&format!("activation agreement at {tag}"), "lambda", "diag_sum", vec![diag])?)?;
    dir.finish("probe confusion", o)?;
    Ok(())
}

fn run_orthogonality(out: &Path, o: &OrthogonalityOpts) -> LabResult<()> {
    let mut dir = OutputDir::create(out)?;
    let model = load_checkpoint(&mut dir, &req(&o.checkpoint, "checkpoint")?)?;
    let splits = load_splits(&req(&o.dataset, "dataset")?, req(&o.split_seed, "split_seed")?)?;
    let splits = setup::fit_splits(&splits, model.arch())?;
    let orth = gradient_orthogonality(&model, &splits.train)?;
    dir.write_json("orthogonality.json", &orth)?;
    dir.finish("probe orthogonality", o)?;
    Ok(())
}

fn run_pattern(out: &Path, o: &PatternOpts) -> LabResult<()> {
    let mut dir = OutputDir::create(out)?;
    let model = load_checkpoint(&mut dir, &req(&o.checkpoint, "checkpoint")?)?;
    let name = req(&o.tensor, "tensor")?;
    let group = model
        .params()
        .layout()
        .group(&name)
        .ok_or_else(|| LabError::Config(format!("no tensor `{name}` in the checkpoint")))?
        .clone();
    let values = &model.params().values()[group.range.clone()];
    let filter = group.filter_len.unwrap_or(values.len());
    let rows = req(&o.rows, "rows")?.clamp(1, values.len() / filter);
    let mut lambdas = parse_f64_list(&req(&o.lambdas, "lambdas")?)?;
    if req(&o.relative, "relative")? {
        let scale = values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64;
        lambdas.iter_mut().for_each(|l| *l *= scale);
    }
    let side = (filter as f64).sqrt().round() as usize;
    let (th, tw) = if side * side == filter { (side, side) } else { (1, filter) };
    let tiles: Vec<Vec<Vec<f64>>> = (0..rows)
        .map(|r| weight_pattern_sweep(&values[r * filter..(r + 1) * filter], &lambdas))
        .collect();
    dir.write("pattern.pgm", pgm_grid(&tiles, th, tw)?)?;
    let mut t = tables::Table::new(&["row", "lambda", "mean", "positive_fraction"]);
    for (r, row) in tiles.iter().enumerate() {
        for (l, tile) in lambdas.iter().zip(row) {
            let mean = tile.iter().sum::<f64>() / tile.len() as f64;
            let pos = tile.iter().filter(|v| **v > 0.0).count() as f64 / tile.len() as f64;
            t.push(vec![r.to_string(), l.to_string(), mean.to_string(), pos.to_string()]);
        }
    }
    dir.write("pattern.csv", t.to_csv())?;
    dir.finish("probe pattern", o)?;
    Ok(())
}
