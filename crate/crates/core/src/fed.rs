//! In-process federated averaging with Dirichlet non-IID shards, the sign
//! anchor regulariser and an optional proximal term.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::nn::{train_with, Architecture, LrSchedule, Model, Regularizer, TrainConfig, TrainHooks};
use crate::params::sign_consistency_ratio;
use crate::rng;
use crate::stats;

/// How the sign-anchor reward is reduced over coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    /// Number of clients K.
    pub clients: usize,
    /// Participation fraction Q in (0, 1].
    pub participation: f64,
    /// Rounds T.
    pub rounds: usize,
    /// Local epochs E.
    pub local_epochs: usize,
    /// Local batch size B.
    pub batch_size: usize,
    /// Sign-anchor coefficient γ.
    pub gamma: f64,
    pub reduction: Reduction,
    /// Proximal coefficient μ for `μ/2 ||θ - θ_t||²`.
    pub prox_mu: f64,
    /// Dirichlet concentration α.
    pub alpha: f64,
    pub seed: u64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Size of the server-held subset of the training set used to recompute BN statistics.
    pub calib_size: usize,
    /// Give every client in a round the same shuffling seed.
    pub common_client_seed: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            clients: 10,
            participation: 1.0,
            rounds: 30,
            local_epochs: 2,
            batch_size: 32,
            gamma: 0.0,
            reduction: Reduction::Mean,
            prox_mu: 0.0,
            alpha: 0.5,
            seed: 0,
            lr: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            calib_size: 512,
            common_client_seed: false,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.clients == 0 {
            return fail("need at least one client".into());
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return fail(format!("participation must be in (0, 1], got {}", self.participation));
        }
        if !(self.alpha > 0.0) {
            return fail(format!("Dirichlet alpha must be > 0, got {}", self.alpha));
        }
        if !(self.gamma >= 0.0) || !(self.prox_mu >= 0.0) {
            return fail("gamma and prox_mu must be >= 0".into());
        }
        if self.gamma > 0.0 && self.prox_mu > 0.0 {
            return fail("gamma and prox_mu cannot both be nonzero".into());
        }
        self.local_train(0).validate()
    }

    /// Clients sampled per round: `max(floor(Q·K), 1)`.
    pub fn per_round(&self) -> usize {
        ((self.participation * self.clients as f64 + 1e-9) as usize).clamp(1, self.clients)
    }

    fn local_train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.local_epochs,
            schedule: LrSchedule::Constant,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client: usize,
    pub indices: Vec<usize>,
}

/// Per class, split its (shuffled) samples across `clients` by a
/// Dirichlet(α·1) draw. Empty shards are repaired by moving one sample from
/// the currently largest shard.
pub fn dirichlet_partition(
    labels: &[usize],
    num_classes: usize,
    clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if clients == 0 || !(alpha > 0.0) {
        return Err(Error::Config(format!("need clients >= 1 and alpha > 0 (got {clients}, {alpha})")));
    }
    if clients > labels.len() {
        return Err(Error::Config(format!("{clients} clients for {} samples", labels.len())));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Config(format!("{e}")))?;
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for c in 0..num_classes {
        let mut r = rng::stream(seed, "dirichlet", c as u64);
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut r);
        let mut props: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut r)).collect();
        let total: f64 = props.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            // Every draw underflowed: the whole class goes to one client.
            props.iter_mut().for_each(|p| *p = 0.0);
            props[r.random_range(0..clients)] = 1.0;
        } else {
            props.iter_mut().for_each(|p| *p /= total);
        }
        let n = members.len();
        let mut start = 0;
        let mut cum = 0.0;
        for (k, p) in props.iter().enumerate() {
            cum += p;
            let end = if k + 1 == clients { n } else { (libm::round(cum * n as f64) as usize).clamp(start, n) };
            shards[k].extend_from_slice(&members[start..end]);
            start = end;
        }
    }
    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let largest = (0..clients).max_by_key(|&k| (shards[k].len(), core::cmp::Reverse(k))).unwrap();
        let moved = shards[largest].pop().unwrap();
        shards[empty].push(moved);
    }
    Ok(shards
        .into_iter()
        .enumerate()
        .map(|(client, mut indices)| {
            indices.sort_unstable();
            ClientShard { client, indices }
        })
        .collect())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Loss term `-γ · R(θ)` with the sign-anchor reward
/// `R(θ) = red_i [sgp(a_i) σ(θ_i) + sgp(-a_i) σ(-θ_i)]` for anchor `a = θ_t`.
#[derive(Debug, Clone)]
pub struct SignAnchor {
    pub gamma: f64,
    pub reduction: Reduction,
    /// `+1` where the anchor is positive, `-1` where negative, `0` at zero.
    anchor: Vec<i8>,
}

impl SignAnchor {
    pub fn new(anchor: &[f64], gamma: f64, reduction: Reduction) -> Self {
        let anchor = anchor
            .iter()
            .map(|&a| if a > 0.0 { 1 } else if a < 0.0 { -1 } else { 0 })
            .collect();
        Self { gamma, reduction, anchor }
    }

    pub fn reward(&self, params: &[f64]) -> f64 {
        let s: f64 = params
            .iter()
            .zip(&self.anchor)
            .map(|(&t, &a)| match a {
                1 => sigmoid(t),
                -1 => sigmoid(-t),
                _ => 0.0,
            })
            .sum();
        s * self.scale()
    }

    fn scale(&self) -> f64 {
        match self.reduction {
            Reduction::Mean => 1.0 / self.anchor.len().max(1) as f64,
            Reduction::Sum => 1.0,
        }
    }
}

impl Regularizer for SignAnchor {
    fn apply(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let c = self.gamma * self.scale();
        for ((g, &t), &a) in grad.iter_mut().zip(params).zip(&self.anchor) {
            // d/dθ σ(±θ) = ±σ(θ)(1 - σ(θ)); the loss carries -γ·R.
            let s = sigmoid(t);
            *g -= c * f64::from(a) * s * (1.0 - s);
        }
        -self.gamma * self.reward(params)
    }
}

/// `μ/2 · ||θ - θ_t||²`.
#[derive(Debug, Clone)]
pub struct Proximal {
    pub mu: f64,
    pub anchor: Vec<f64>,
}

impl Regularizer for Proximal {
    fn apply(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let mut v = 0.0;
        for ((g, &t), &a) in grad.iter_mut().zip(params).zip(&self.anchor) {
            *g += self.mu * (t - a);
            v += (t - a) * (t - a);
        }
        0.5 * self.mu * v
    }
}

#[derive(Debug, Clone)]
pub struct ClientResult {
    pub client: usize,
    pub model: Model,
    /// Mean objective over the last local epoch.
    pub loss: f64,
}

/// Local training from the global model on one shard.
pub fn client_update(global: &Model, shard: &Dataset, cfg: &FedConfig, client: usize, seed: u64) -> Result<ClientResult> {
    let mut m = global.clone();
    let anchor = global.params().values();
    let sign_reg = SignAnchor::new(anchor, cfg.gamma, cfg.reduction);
    let prox = Proximal { mu: cfg.prox_mu, anchor: anchor.to_vec() };
    let regularizer: Option<&dyn Regularizer> = if cfg.gamma > 0.0 {
        Some(&sign_reg)
    } else if cfg.prox_mu > 0.0 {
        Some(&prox)
    } else {
        None
    };
    let log = train_with(&mut m, shard, &cfg.local_train(seed), TrainHooks { regularizer, on_epoch: None })?;
    Ok(ClientResult { client, model: m, loss: log.last().map_or(f64::NAN, |l| l.loss) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub selected: Vec<usize>,
    /// Final local objective per selected client (NaN for diverged clients).
    pub client_losses: Vec<f64>,
    pub diverged: Vec<usize>,
    /// Global test accuracy after aggregation.
    pub acc: f64,
    /// Mean `SSR(θ̂_k, θ_t)` over the clients that returned.
    pub mean_ssr: f64,
}

#[derive(Debug, Clone)]
pub struct FedRun {
    pub model: Model,
    pub rounds: Vec<RoundLog>,
    pub shards: Vec<ClientShard>,
}

/// Unweighted mean of parameter vectors, summed in the given order.
pub fn average_params(models: &[&Model]) -> Result<Vec<f64>> {
    let first = models.first().ok_or_else(|| Error::Config("nothing to average".into()))?;
    let mut sum = vec![0.0; first.params().len()];
    for m in models {
        first.params().check_layout(m.params())?;
        for (s, v) in sum.iter_mut().zip(m.params().values()) {
            *s += v;
        }
    }
    let n = models.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(sum)
}

/// One round: run the selected clients from `global`, average what comes back
/// in client-index order. Returns the new parameters and the per-client results.
pub fn run_round(
    global: &Model,
    shards: &[Dataset],
    selected: &[usize],
    cfg: &FedConfig,
    round: usize,
    exec: &impl Executor,
) -> Result<(Vec<f64>, Vec<(usize, Result<ClientResult>)>)> {
    let mut selected = selected.to_vec();
    selected.sort_unstable();
    let results = exec.map(selected.len(), |i| {
        let k = selected[i];
        let seed = if cfg.common_client_seed {
            rng::derive_seed(cfg.seed, "client", round as u64)
        } else {
            rng::derive_seed(cfg.seed, "client", (round * cfg.clients + k) as u64)
        };
        (k, client_update(global, &shards[k], cfg, k, seed))
    });
    let ok: Vec<&Model> = results.iter().filter_map(|(_, r)| r.as_ref().ok().map(|c| &c.model)).collect();
    if ok.is_empty() {
        return Err(Error::AllClientsDiverged(round));
    }
    Ok((average_params(&ok)?, results))
}

/// The server loop: `rounds` rounds of sampling, local training, averaging,
/// BN recalibration on a held subset of `train`, and evaluation on `test`.
pub fn server_loop(
    cfg: &FedConfig,
    arch: &Architecture,
    train: &Dataset,
    test: &Dataset,
    exec: &impl Executor,
) -> Result<FedRun> {
    cfg.validate()?;
    let shards = dirichlet_partition(train.labels(), train.num_classes(), cfg.clients, cfg.alpha, cfg.seed)?;
    let shard_data: Vec<Dataset> = shards.iter().map(|s| train.subset(&s.indices)).collect();
    let calib = {
        let n = cfg.calib_size.clamp(1, train.len());
        let mut idx = index::sample(&mut rng::stream(cfg.seed, "calib", 0), train.len(), n).into_vec();
        idx.sort_unstable();
        train.subset(&idx)
    };
    let mut global = Model::new(arch.clone(), rng::derive_seed(cfg.seed, "model", 0))?;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let mut selected =
            index::sample(&mut rng::stream(cfg.seed, "select", t as u64), cfg.clients, cfg.per_round()).into_vec();
        selected.sort_unstable();
        let (avg, results) = run_round(&global, &shard_data, &selected, cfg, t, exec)?;
        let mut client_losses = Vec::with_capacity(results.len());
        let mut diverged = Vec::new();
        let mut ssr = Vec::new();
        for (k, r) in &results {
            match r {
                Ok(c) => {
                    client_losses.push(c.loss);
                    ssr.push(sign_consistency_ratio(c.model.params(), global.params())?.overall);
                }
                Err(Error::Diverged { .. }) => {
                    client_losses.push(f64::NAN);
                    diverged.push(*k);
                }
                Err(e) => return Err(e.clone()),
            }
        }
        global = global.with_params(global.params().with_values(avg)?)?;
        global.bn_recompute(&calib)?;
        let acc = 1.0 - global.evaluate(test)?.error;
        rounds.push(RoundLog { round: t, selected, client_losses, diverged, acc, mean_ssr: stats::mean(&ssr) });
    }
    Ok(FedRun { model: global, rounds, shards })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub alpha: f64,
    pub gamma: f64,
    pub prox_mu: f64,
    pub seeds: Vec<u64>,
    pub accs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Per-round mean SSR averaged over seeds.
    pub ssr_by_round: Vec<f64>,
    /// Final-model fingerprints, one per seed.
    pub fingerprints: Vec<u64>,
    /// Per-round logs, one list per seed.
    pub logs: Vec<Vec<RoundLog>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareGrid {
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub prox_mu: Option<f64>,
    pub seeds: Vec<u64>,
}

/// FedAvg, FedSign at every γ, and optionally the proximal baseline, for
/// each α; every method sees the same seeds.
pub fn fed_compare(
    base: &FedConfig,
    grid: &CompareGrid,
    arch: &Architecture,
    train: &Dataset,
    test: &Dataset,
    exec: &impl Executor,
) -> Result<Vec<CompareRow>> {
    if grid.seeds.is_empty() {
        return Err(Error::Config("fed_compare needs at least one seed".into()));
    }
    let mut methods: Vec<(String, f64, f64)> = vec![("fedavg".into(), 0.0, 0.0)];
    methods.extend(grid.gammas.iter().map(|&g| (format!("fedsign(gamma={g})"), g, 0.0)));
    if let Some(mu) = grid.prox_mu {
        methods.push((format!("prox(mu={mu})"), 0.0, mu));
    }
    let mut rows = Vec::new();
    for &alpha in &grid.alphas {
        for (method, gamma, prox_mu) in &methods {
            let mut accs = Vec::new();
            let mut fingerprints = Vec::new();
            let mut logs = Vec::new();
            for &seed in &grid.seeds {
                let cfg = FedConfig { alpha, gamma: *gamma, prox_mu: *prox_mu, seed, ..base.clone() };
                let run = server_loop(&cfg, arch, train, test, exec)?;
                accs.push(run.rounds.last().map_or(f64::NAN, |r| r.acc));
                fingerprints.push(run.model.fingerprint());
                logs.push(run.rounds);
            }
            let ssr_by_round = (0..base.rounds)
                .map(|t| stats::mean(&logs.iter().map(|l| l[t].mean_ssr).collect::<Vec<_>>()))
                .collect();
            rows.push(CompareRow {
                method: method.clone(),
                alpha,
                gamma: *gamma,
                prox_mu: *prox_mu,
                seeds: grid.seeds.clone(),
                mean: stats::mean(&accs),
                std: stats::sample_std(&accs),
                accs,
                ssr_by_round,
                fingerprints,
                logs,
            });
        }
    }
    Ok(rows)
}
