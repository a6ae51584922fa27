//! Experiment configuration, fleet construction and the round loop.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    capped_selection, kmeans_defense, random_selection, speed_based_selection, weight_divergence,
    weight_divergence_selection,
};
use crate::channel::{ChannelParams, ComputeProfile, EnvConstants, UavGeometry};
use crate::clients::{simulate_client_round, BehaviorProfile, ClientRoundOutcome, RoundContext, RoundStatus, UavClient};
use crate::data::{
    generate_synthetic_dataset, load_idx_dataset, partition_distribution1, partition_distribution2, split_train_test,
    LabeledDataset, Partition,
};
use crate::defense::{
    aggregate, build_similarity_graph, compute_deadline, dbscan_cluster, iqr_filter, reliability_select,
    select_honest_cluster, SelectionState,
};
use crate::error::{ConfigError, Error, Result};
use crate::metrics::{
    asr_targeted, asr_targeted_class, asr_untargeted, average_round_time, detection_rates, dropout_ratio, mean,
    RoundMetrics,
};
use crate::model::{apply_update, evaluate, init_model, ModelParams, TrainConfig, WeightUpdate};
use crate::seed::{self, Purpose};
use crate::ClientId;

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub run: RunSpec,
    pub data: DataSpec,
    pub model: ModelSpec,
    pub channel: ChannelSpec,
    pub fleet: FleetSpec,
    pub selection: SelectionSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub rounds: u32,
    pub seed: u64,
    /// Free-form run name used in tables and plot legends; empty means the strategy name.
    pub label: String,
    pub out_dir: String,
    /// Evaluate each aggregated local model to log the per-round objective.
    pub log_objective: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self { rounds: 200, seed: 1, label: String::new(), out_dir: "runs".into(), log_objective: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Idx,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSpec {
    pub source: DataSource,
    pub images: String,
    pub labels: String,
    pub train_fraction: f64,
    /// 1: k% label-sorted shards; 2: N_c classes per client.
    pub distribution: u8,
    pub k_percent: f64,
    pub classes_per_client: usize,
    pub cap: usize,
    pub synthetic_classes: usize,
    pub synthetic_per_class: usize,
    pub synthetic_dim: usize,
    pub synthetic_separation: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            source: DataSource::Idx,
            images: "data/mnist5k-images-idx3-ubyte.gz".into(),
            labels: "data/mnist5k-labels-idx1-ubyte.gz".into(),
            train_fraction: 0.8,
            distribution: 1,
            k_percent: 80.0,
            classes_per_client: 2,
            cap: 1300,
            synthetic_classes: 10,
            synthetic_per_class: 200,
            synthetic_dim: 20,
            synthetic_separation: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub arch: String,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Bytes per transmitted parameter (affects upload latency only).
    pub param_bytes: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { arch: "mlp".into(), hidden: vec![128], epochs: 10, batch_size: 64, lr: 0.01, param_bytes: 4 }
    }
}

impl ModelSpec {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { epochs: self.epochs, batch_size: self.batch_size, lr: self.lr }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSpec {
    pub beta0: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub noise_psd: f64,
    pub bandwidth_hz: f64,
    pub uav_tx_power_w: f64,
    pub bs_tx_power_w: f64,
    pub t_ag_s: f64,
    /// CPU cycles per sample.
    pub kappa: f64,
    pub gamma_hz: [f64; 2],
    pub straggler_gamma_hz: [f64; 2],
    pub distance_m: [f64; 2],
    pub elevation_deg: [f64; 2],
}

impl Default for ChannelSpec {
    fn default() -> Self {
        let p = ChannelParams::default();
        Self {
            beta0: p.beta0,
            a1: p.env.a1,
            a2: p.env.a2,
            a3: p.env.a3,
            a4: p.env.a4,
            noise_psd: p.noise_psd,
            bandwidth_hz: p.total_bandwidth_hz,
            uav_tx_power_w: p.uav_tx_power_w,
            bs_tx_power_w: p.bs_tx_power_w,
            t_ag_s: p.t_ag_s,
            kappa: 7e4,
            gamma_hz: [1e6, 1e8],
            straggler_gamma_hz: [1e5, 1e6],
            distance_m: [100.0, 1500.0],
            elevation_deg: [10.0, 90.0],
        }
    }
}

impl ChannelSpec {
    pub fn params(&self) -> ChannelParams {
        ChannelParams {
            beta0: self.beta0,
            env: EnvConstants { a1: self.a1, a2: self.a2, a3: self.a3, a4: self.a4 },
            noise_psd: self.noise_psd,
            total_bandwidth_hz: self.bandwidth_hz,
            uav_tx_power_w: self.uav_tx_power_w,
            bs_tx_power_w: self.bs_tx_power_w,
            t_ag_s: self.t_ag_s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Untargeted,
    Targeted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackerPlacement {
    /// Uniformly among clients that are neither stragglers nor dropouts.
    Random,
    /// The clients holding the most `flip_src` samples.
    SourceClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetSpec {
    pub clients: usize,
    pub stragglers: usize,
    pub dropouts: usize,
    pub dropout_prob: f64,
    pub attacker_fraction: f64,
    pub attack: AttackKind,
    pub attacker_placement: AttackerPlacement,
    /// Noise standard deviation relative to the clean update's RMS.
    pub noise_sigma: f64,
    pub flip_src: usize,
    pub flip_dst: usize,
}

impl Default for FleetSpec {
    fn default() -> Self {
        Self {
            clients: 50,
            stragglers: 0,
            dropouts: 0,
            dropout_prob: 0.5,
            attacker_fraction: 0.0,
            attack: AttackKind::Untargeted,
            attacker_placement: AttackerPlacement::Random,
            noise_sigma: 1.0,
            flip_src: 5,
            flip_dst: 3,
        }
    }
}

impl FleetSpec {
    pub fn attacker_count(&self) -> usize {
        (self.attacker_fraction * self.clients as f64).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Proposed,
    Random,
    Speed,
    Divergence,
    Capped,
    Kmeans,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Proposed => "proposed",
            Self::Random => "random",
            Self::Speed => "speed",
            Self::Divergence => "divergence",
            Self::Capped => "capped",
            Self::Kmeans => "kmeans",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSpec {
    pub strategy: Strategy,
    pub min_participants: usize,
    pub rho: i64,
    pub rho_max: i64,
    pub nu: f64,
    pub eps: f64,
    pub min_pts: usize,
    pub penalize_dropouts: bool,
    pub participation_cap: u32,
    pub kmeans_clusters: usize,
    /// A round is canceled when fewer updates than this survive the filters.
    pub min_updates: usize,
}

impl Default for SelectionSpec {
    fn default() -> Self {
        Self {
            strategy: Strategy::Proposed,
            min_participants: 5,
            rho: -5,
            rho_max: 10,
            nu: 1.5,
            eps: 0.02,
            min_pts: 2,
            penalize_dropouts: false,
            participation_cap: 20,
            kmeans_clusters: 2,
            min_updates: 1,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), reason: reason.into() }
}

fn check_range(field: &str, r: [f64; 2]) -> Result<(), ConfigError> {
    if r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("expected 0 < lo <= hi, got {r:?}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative data paths resolve against the file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.images, &mut cfg.data.labels] {
            if !p.is_empty() && Path::new(p.as_str()).is_relative() {
                *p = base.join(p.as_str()).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Applies `section.field=value`. The value is read as a TOML literal and
    /// falls back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, raw) =
            assignment.split_once('=').ok_or_else(|| ConfigError::BadOverride(assignment.to_string()))?;
        let key = key.trim();
        let raw = raw.trim();
        let mut root = toml::Value::try_from(&*self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_table_mut()
                .and_then(|t| t.get_mut(part))
                .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        }
        if slot.is_table() {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        let parsed = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        *slot = match (&*slot, parsed) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        let next: Self = root.try_into().map_err(|e: toml::de::Error| invalid(key, e.message().to_string()))?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn apply_overrides<S: AsRef<str>>(&mut self, assignments: &[S]) -> Result<(), ConfigError> {
        assignments.iter().try_for_each(|a| self.apply_override(a.as_ref()))
    }

    pub fn label(&self) -> String {
        if self.run.label.is_empty() {
            self.selection.strategy.name().to_string()
        } else {
            self.run.label.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let (f, s, d) = (&self.fleet, &self.selection, &self.data);
        if self.run.rounds == 0 {
            return Err(invalid("run.rounds", "must be at least 1"));
        }
        if f.clients == 0 {
            return Err(invalid("fleet.clients", "must be at least 1"));
        }
        if !(0.0..0.5).contains(&f.attacker_fraction) {
            return Err(invalid("fleet.attacker_fraction", "must lie in [0, 0.5)"));
        }
        if f.stragglers + f.dropouts + f.attacker_count() > f.clients {
            return Err(invalid("fleet", "stragglers + dropouts + attackers exceed the fleet size"));
        }
        if !(0.0..=1.0).contains(&f.dropout_prob) {
            return Err(invalid("fleet.dropout_prob", "must lie in [0, 1]"));
        }
        if !(f.noise_sigma >= 0.0 && f.noise_sigma.is_finite()) {
            return Err(invalid("fleet.noise_sigma", "must be finite and non-negative"));
        }
        if f.flip_src == f.flip_dst {
            return Err(invalid("fleet.flip_dst", "must differ from flip_src"));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(invalid("data.train_fraction", "must lie in (0, 1)"));
        }
        if !matches!(d.distribution, 1 | 2) {
            return Err(invalid("data.distribution", "must be 1 or 2"));
        }
        if !(0.0..=100.0).contains(&d.k_percent) {
            return Err(invalid("data.k_percent", "must lie in [0, 100]"));
        }
        if d.cap == 0 {
            return Err(invalid("data.cap", "must be at least 1"));
        }
        if self.model.arch != "mlp" {
            return Err(invalid("model.arch", format!("unsupported architecture `{}`", self.model.arch)));
        }
        if self.model.epochs == 0 || self.model.batch_size == 0 || !(self.model.lr >= 0.0) {
            return Err(invalid("model", "epochs and batch_size must be positive, lr non-negative"));
        }
        if self.model.param_bytes == 0 {
            return Err(invalid("model.param_bytes", "must be at least 1"));
        }
        self.channel.params().validate().map_err(|e| invalid("channel", e.to_string()))?;
        if !(self.channel.kappa > 0.0) {
            return Err(invalid("channel.kappa", "must be positive"));
        }
        check_range("channel.gamma_hz", self.channel.gamma_hz)?;
        check_range("channel.straggler_gamma_hz", self.channel.straggler_gamma_hz)?;
        check_range("channel.distance_m", self.channel.distance_m)?;
        check_range("channel.elevation_deg", self.channel.elevation_deg)?;
        if s.rho >= s.rho_max {
            return Err(invalid("selection.rho", "must be below selection.rho_max"));
        }
        if !(s.nu > 0.0) {
            return Err(invalid("selection.nu", "must be positive"));
        }
        if !(s.eps > 0.0) {
            return Err(invalid("selection.eps", "must be positive"));
        }
        if s.min_pts == 0 || s.min_participants == 0 || s.min_updates == 0 {
            return Err(invalid("selection", "min_pts, min_participants and min_updates must be at least 1"));
        }
        if s.participation_cap == 0 {
            return Err(invalid("selection.participation_cap", "must be at least 1"));
        }
        if s.kmeans_clusters < 2 {
            return Err(invalid("selection.kmeans_clusters", "must be at least 2"));
        }
        Ok(())
    }

    /// The same scenario with every attacker replaced by an honest client.
    pub fn without_attack(&self) -> Self {
        let mut c = self.clone();
        c.fleet.attacker_fraction = 0.0;
        c
    }
}

// ---------------------------------------------------------------------------
// Data and fleet

#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

pub fn load_datasets(config: &ExperimentConfig) -> Result<Datasets> {
    let d = &config.data;
    let full = match d.source {
        DataSource::Idx => load_idx_dataset(&d.images, &d.labels)?,
        DataSource::Synthetic => generate_synthetic_dataset(
            d.synthetic_classes,
            d.synthetic_per_class,
            d.synthetic_dim,
            d.synthetic_separation,
            config.run.seed,
        )?,
    };
    let (train, test) = split_train_test(&full, d.train_fraction, config.run.seed)?;
    Ok(Datasets { train, test })
}

pub fn build_partition(config: &ExperimentConfig, train: &LabeledDataset) -> Result<Partition> {
    let d = &config.data;
    let n = config.fleet.clients;
    let mut p = match d.distribution {
        1 => partition_distribution1(train, n, d.k_percent, d.cap, config.run.seed)?,
        _ => partition_distribution2(train, n, d.classes_per_client, config.run.seed)?,
    };
    crate::data::enforce_cap(&mut p, d.cap, config.run.seed);
    Ok(p)
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Roles are drawn stragglers, dropouts, attackers; the no-attack twin of a
/// config yields the same fleet with attackers made honest.
pub fn build_fleet(config: &ExperimentConfig, train: &LabeledDataset) -> Result<Vec<UavClient>> {
    let f = &config.fleet;
    let ch = &config.channel;
    let partition = build_partition(config, train)?;
    let master = config.run.seed;

    let mut order: Vec<usize> = (0..f.clients).collect();
    order.shuffle(&mut seed::derive_rng(master, Purpose::Fleet, 0, 0));
    let mut profiles = vec![BehaviorProfile::Honest; f.clients];
    for &i in &order[..f.stragglers] {
        profiles[i] = BehaviorProfile::Straggler;
    }
    for &i in &order[f.stragglers..f.stragglers + f.dropouts] {
        profiles[i] = BehaviorProfile::Dropout { dropout_prob: f.dropout_prob };
    }
    let mut rest: Vec<usize> = order[f.stragglers + f.dropouts..].to_vec();
    if f.attacker_placement == AttackerPlacement::SourceClass {
        let held = |i: usize| partition.client_shards[i].iter().filter(|&&s| train.labels()[s] == f.flip_src).count();
        rest.sort_by(|&a, &b| held(b).cmp(&held(a)).then(a.cmp(&b)));
    }
    let attacker = match f.attack {
        AttackKind::Untargeted => BehaviorProfile::MaliciousUntargeted { noise_sigma: f.noise_sigma },
        AttackKind::Targeted => BehaviorProfile::MaliciousTargeted { flip_src: f.flip_src, flip_dst: f.flip_dst },
    };
    for &i in rest.iter().take(f.attacker_count()) {
        profiles[i] = attacker;
    }

    let mut draws = seed::derive_rng(master, Purpose::Fleet, 1, 0);
    let mut trust = seed::derive_rng(master, Purpose::Reliability, 0, 0);
    let clients = (0..f.clients)
        .map(|i| {
            let fast = uniform(&mut draws, ch.gamma_hz);
            let slow = uniform(&mut draws, ch.straggler_gamma_hz);
            let geometry = UavGeometry {
                distance_m: uniform(&mut draws, ch.distance_m),
                elevation_deg: uniform(&mut draws, ch.elevation_deg),
            };
            let gamma = if profiles[i] == BehaviorProfile::Straggler { slow } else { fast };
            UavClient {
                id: ClientId(i as u32),
                shard: partition.client_shards[i].clone(),
                compute: ComputeProfile { gamma, kappa: ch.kappa },
                geometry,
                profile: profiles[i],
                reliability: trust.random_range(0..=9),
                participation_count: 0,
            }
        })
        .collect();
    Ok(clients)
}

// ---------------------------------------------------------------------------
// Round logs and results

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: u32,
    pub strategy: String,
    /// Server-side latency estimates for every client.
    pub est_times: BTreeMap<ClientId, f64>,
    pub iqr_cutoff: Option<f64>,
    pub deadline_s: Option<f64>,
    /// Clients surviving the straggler filter (the whole eligible pool for baselines).
    pub candidates: Vec<ClientId>,
    pub selected: Vec<ClientId>,
    /// Owners of updates that reached the server in time.
    pub received: Vec<ClientId>,
    /// Owners of the aggregated updates.
    pub aggregated: Vec<ClientId>,
    pub flagged: Vec<ClientId>,
    pub cluster_sizes: Vec<usize>,
    pub noise: Vec<ClientId>,
    pub abstained: bool,
    pub outcomes: Vec<ClientRoundOutcome>,
    pub reliability: BTreeMap<ClientId, i64>,
    pub round_time_s: f64,
    pub canceled: bool,
    pub objective: Option<f64>,
    pub metrics: Option<RoundMetrics>,
    pub warnings: Vec<String>,
}

impl RoundLog {
    pub fn dropout_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.status == RoundStatus::DroppedOut).count()
    }

    fn is_subset(a: &[ClientId], b: &[ClientId]) -> bool {
        a.iter().all(|x| b.contains(x))
    }

    /// Checks the filter-cascade inclusion chain and that every aggregated
    /// update met the deadline.
    pub fn audit(&self, fleet_size: usize) -> std::result::Result<(), String> {
        if !self.candidates.iter().all(|c| (c.0 as usize) < fleet_size) {
            return Err(format!("round {}: candidate outside the fleet", self.round));
        }
        if !Self::is_subset(&self.selected, &self.candidates) {
            return Err(format!("round {}: selected set not within candidates", self.round));
        }
        if !Self::is_subset(&self.received, &self.selected) {
            return Err(format!("round {}: received set not within selected", self.round));
        }
        if !Self::is_subset(&self.aggregated, &self.received) {
            return Err(format!("round {}: aggregated set not within received", self.round));
        }
        for id in &self.aggregated {
            let o = self.outcomes.iter().find(|o| o.client == *id).ok_or("aggregated client without outcome")?;
            if o.status != RoundStatus::Completed {
                return Err(format!("round {}: aggregated client {id} did not complete", self.round));
            }
            if let Some(z) = self.deadline_s {
                if o.elapsed_s > z {
                    return Err(format!("round {}: client {id} exceeded the deadline", self.round));
                }
            }
        }
        if self.canceled != self.metrics.is_none() {
            return Err(format!("round {}: metrics must be present iff the round completed", self.round));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub label: String,
    pub strategy: String,
    pub rounds: u32,
    pub seed: u64,
    pub final_accuracy: Option<f64>,
    pub tau_a: Option<f64>,
    pub chi_d: f64,
    pub mean_fp: Option<f64>,
    pub mean_fn: Option<f64>,
    pub final_asr_targeted: Option<f64>,
    pub max_asr_targeted_last10: Option<f64>,
    pub attacked_class_accuracy_last10: Option<f64>,
    pub asr_untargeted_last10: Option<f64>,
    pub canceled_rounds: usize,
    pub mean_selected: f64,
    pub mean_aggregated: f64,
}

pub const SUMMARY_SCHEMA: &str = "uavfl-summary/v1";

impl ExperimentSummary {
    pub fn from_logs(config: &ExperimentConfig, logs: &[RoundLog]) -> Self {
        let done: Vec<&RoundMetrics> = logs.iter().filter_map(|l| l.metrics.as_ref()).collect();
        let tail = &done[done.len().saturating_sub(10)..];
        let src = config.fleet.flip_src;
        let per_round = |n: fn(&RoundLog) -> usize| {
            mean(logs.iter().map(|l| n(l) as f64)).unwrap_or(0.0)
        };
        Self {
            label: config.label(),
            strategy: config.selection.strategy.name().into(),
            rounds: config.run.rounds,
            seed: config.run.seed,
            final_accuracy: done.last().map(|m| m.global_accuracy),
            tau_a: average_round_time(logs).ok(),
            chi_d: dropout_ratio(logs).unwrap_or(0.0),
            mean_fp: mean(done.iter().filter_map(|m| m.fp)),
            mean_fn: mean(done.iter().filter_map(|m| m.fn_rate)),
            final_asr_targeted: done.last().map(|m| m.asr_targeted),
            max_asr_targeted_last10: tail.iter().map(|m| m.asr_targeted).reduce(f64::max),
            attacked_class_accuracy_last10: mean(tail.iter().filter_map(|m| m.class_accuracy.get(src).copied().flatten())),
            asr_untargeted_last10: mean(tail.iter().filter_map(|m| m.asr_untargeted)),
            canceled_rounds: logs.iter().filter(|l| l.canceled).count(),
            mean_selected: per_round(|l| l.selected.len()),
            mean_aggregated: per_round(|l| l.aggregated.len()),
        }
    }

    pub const HEADER: [&'static str; 17] = [
        SUMMARY_SCHEMA,
        "strategy",
        "rounds",
        "seed",
        "A_g",
        "tau_a",
        "chi_d",
        "mean_fp",
        "mean_fn",
        "final_asr_ta",
        "max_asr_ta_last10",
        "attacked_class_acc_last10",
        "asr_ua_last10",
        "canceled_rounds",
        "mean_selected",
        "mean_aggregated",
        "label",
    ];

    pub fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            "run".into(),
            self.strategy.clone(),
            self.rounds.to_string(),
            self.seed.to_string(),
            opt(self.final_accuracy),
            opt(self.tau_a),
            self.chi_d.to_string(),
            opt(self.mean_fp),
            opt(self.mean_fn),
            opt(self.final_asr_targeted),
            opt(self.max_asr_targeted_last10),
            opt(self.attacked_class_accuracy_last10),
            opt(self.asr_untargeted_last10),
            self.canceled_rounds.to_string(),
            self.mean_selected.to_string(),
            self.mean_aggregated.to_string(),
            self.label.clone(),
        ]
    }
}

pub fn summary_csv(rows: &[ExperimentSummary]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let io = |e: csv::Error| Error::Other(format!("csv: {e}"));
    w.write_record(ExperimentSummary::HEADER).map_err(io)?;
    for r in rows {
        w.write_record(r.record()).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Other(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub label: String,
    pub final_params: ModelParams,
    pub rounds: Vec<RoundLog>,
    pub summary: ExperimentSummary,
    /// Label of the no-attack run the untargeted ASR was computed against.
    pub paired_with: Option<String>,
    pub malicious: Vec<ClientId>,
}

impl ExperimentResult {
    /// Fills in the untargeted ASR of every round from a no-attack reference run.
    pub fn pair_with(&mut self, config: &ExperimentConfig, reference: &ExperimentResult) {
        let base: BTreeMap<u32, f64> = reference
            .rounds
            .iter()
            .filter_map(|l| l.metrics.as_ref().map(|m| (l.round, m.global_accuracy)))
            .collect();
        for log in &mut self.rounds {
            if let (Some(m), Some(&a1)) = (log.metrics.as_mut(), base.get(&log.round)) {
                m.asr_untargeted = asr_untargeted(a1, m.global_accuracy).ok();
            }
        }
        self.paired_with = Some(reference.label.clone());
        self.summary = ExperimentSummary::from_logs(config, &self.rounds);
    }

    pub fn rounds_jsonl(&self) -> String {
        self.rounds.iter().map(|l| serde_json::to_string(l).expect("round logs serialize") + "\n").collect()
    }
}

// ---------------------------------------------------------------------------
// The round loop

struct Simulation<'a> {
    config: &'a ExperimentConfig,
    data: &'a Datasets,
    clients: Vec<UavClient>,
    global: ModelParams,
    state: SelectionState,
    divergences: BTreeMap<ClientId, f64>,
    malicious: Vec<ClientId>,
    channel: ChannelParams,
    hyper: TrainConfig,
}

impl<'a> Simulation<'a> {
    fn new(config: &'a ExperimentConfig, data: &'a Datasets) -> Result<Self> {
        let clients = build_fleet(config, &data.train)?;
        let mut widths = vec![data.train.dim()];
        widths.extend(&config.model.hidden);
        widths.push(data.train.num_classes());
        let global = init_model(&widths, config.model.param_bytes, seed::derive(config.run.seed, Purpose::ModelInit, 0, 0))?;
        let s = &config.selection;
        let state = SelectionState::new(
            clients.iter().map(|c| (c.id, c.reliability)).collect(),
            s.rho,
            s.rho_max,
            s.nu,
            s.min_participants,
            s.penalize_dropouts,
        )?;
        let malicious = clients.iter().filter(|c| c.profile.is_malicious()).map(|c| c.id).collect();
        Ok(Self {
            config,
            data,
            clients,
            global,
            state,
            divergences: BTreeMap::new(),
            malicious,
            channel: config.channel.params(),
            hyper: config.model.train_config(),
        })
    }

    fn estimates(&self) -> Result<BTreeMap<ClientId, f64>> {
        let share = self.channel.total_bandwidth_hz / self.config.selection.min_participants as f64;
        self.clients
            .iter()
            .map(|c| {
                let l = c.latency(
                    &self.channel,
                    self.hyper.epochs,
                    self.global.param_count(),
                    self.global.param_bytes(),
                    share,
                )?;
                Ok((c.id, l.total()))
            })
            .collect()
    }

    fn step(&mut self, round: u32) -> Result<RoundLog> {
        let cfg = self.config;
        let s = &cfg.selection;
        let master = cfg.run.seed;
        let strategy = s.strategy;
        let mut log = RoundLog { round, strategy: strategy.name().into(), ..RoundLog::default() };
        let est = self.estimates()?;
        let pool: Vec<ClientId> = self.clients.iter().map(|c| c.id).collect();
        let pick_seed = seed::derive(master, Purpose::Selection, u64::from(round), 0);

        let (candidates, selected) = match strategy {
            Strategy::Proposed => {
                let iqr = iqr_filter(&est, s.nu)?;
                let kept: Vec<f64> = iqr.kept.iter().map(|id| est[id]).collect();
                log.iqr_cutoff = Some(iqr.cutoff);
                log.deadline_s = Some(compute_deadline(&kept)?);
                self.state.round_index = round;
                let rel = reliability_select(&iqr.kept, &mut self.state)?;
                if rel.shortfall > 0 {
                    log.warnings.push(format!("selection short of min_participants by {}", rel.shortfall));
                }
                (iqr.kept, rel.selected)
            }
            Strategy::Random | Strategy::Kmeans => {
                (pool.clone(), random_selection(&pool, s.min_participants, pick_seed))
            }
            Strategy::Speed => (pool.clone(), speed_based_selection(&est, s.min_participants)),
            Strategy::Divergence => {
                (pool.clone(), weight_divergence_selection(&pool, &self.divergences, s.min_participants))
            }
            Strategy::Capped => {
                let counts: BTreeMap<ClientId, u32> =
                    self.clients.iter().map(|c| (c.id, c.participation_count)).collect();
                let eligible = counts.iter().filter(|(_, &n)| n < s.participation_cap).map(|(&i, _)| i).collect();
                (eligible, capped_selection(&counts, s.min_participants, s.participation_cap, pick_seed))
            }
        };
        log.est_times = est;
        log.candidates = candidates;
        log.selected = selected;

        let bandwidth = self.channel.total_bandwidth_hz / log.selected.len().max(1) as f64;
        let ctx = RoundContext {
            train_set: &self.data.train,
            global: &self.global,
            deadline_s: log.deadline_s,
            hyper: &self.hyper,
            channel: &self.channel,
            bandwidth_hz: bandwidth,
            master_seed: master,
            round,
        };
        let mut outcomes: Vec<ClientRoundOutcome> =
            log.selected.iter().map(|id| simulate_client_round(&self.clients[id.0 as usize], &ctx)).collect();
        outcomes.sort_by_key(|o| o.client);
        for id in &log.selected {
            self.clients[id.0 as usize].participation_count += 1;
        }
        for o in &outcomes {
            if let Some(d) = &o.diagnostic {
                log.warnings.push(format!("client {}: {d}", o.client));
            }
        }

        let updates: Vec<WeightUpdate> = outcomes
            .iter()
            .filter(|o| o.status == RoundStatus::Completed)
            .filter_map(|o| o.update.clone())
            .collect();
        log.received = updates.iter().map(|u| u.owner_id).collect();

        let honest: Vec<ClientId> = match strategy {
            Strategy::Proposed if updates.len() >= 2 => {
                let graph = build_similarity_graph(&updates)?;
                if !graph.zero_norm.is_empty() {
                    log.warnings.push(format!("zero-norm updates from {:?}", graph.zero_norm));
                }
                let clusters = dbscan_cluster(&graph, s.eps, s.min_pts)?;
                log.cluster_sizes = clusters.clusters.iter().map(Vec::len).collect();
                log.noise = clusters.noise.clone();
                let pick = select_honest_cluster(&clusters);
                if pick.abstained {
                    log.warnings.push("every update is DBSCAN noise; aggregating all".into());
                }
                log.abstained = pick.abstained;
                pick.honest
            }
            Strategy::Kmeans if updates.len() >= s.kmeans_clusters => {
                kmeans_defense(&updates, s.kmeans_clusters, seed::derive(master, Purpose::Defense, u64::from(round), 0))?
                    .honest
            }
            _ => log.received.clone(),
        };
        log.flagged = log.received.iter().filter(|id| !honest.contains(id)).copied().collect();
        let chosen: Vec<WeightUpdate> = updates.iter().filter(|u| honest.contains(&u.owner_id)).cloned().collect();
        log.aggregated = chosen.iter().map(|u| u.owner_id).collect();

        let t_ag = self.channel.t_ag_s;
        log.round_time_s = match log.deadline_s {
            Some(z) if outcomes.iter().any(|o| o.status != RoundStatus::Completed) => z + t_ag,
            _ => outcomes.iter().map(|o| o.elapsed_s).fold(0.0, f64::max) + t_ag,
        };

        let prev = self.global.clone();
        log.canceled = chosen.len() < s.min_updates;
        if log.canceled {
            log.warnings.push(format!("round canceled: {} usable updates", chosen.len()));
        } else {
            self.global = aggregate(&prev, &chosen)?;
        }

        if strategy == Strategy::Divergence {
            for u in &updates {
                let local = apply_update(&prev, &u.delta)?;
                let (value, included) = weight_divergence(local.values(), prev.values())?;
                if included == 0 {
                    log.warnings.push(format!("client {}: no coordinate usable for divergence", u.owner_id));
                }
                self.divergences.insert(u.owner_id, value);
            }
        }

        if strategy == Strategy::Proposed {
            self.state.record(outcomes.iter().map(|o| (o.client, o.status)));
            for c in &mut self.clients {
                c.reliability = self.state.score(c.id);
            }
            log.reliability = self.state.reliability.clone();
        }

        if cfg.run.log_objective && !log.canceled {
            let mut total = 0.0;
            for u in &chosen {
                total += evaluate(&apply_update(&prev, &u.delta)?, &self.data.test)?.global_accuracy;
            }
            log.objective = Some(total);
        }

        if !log.canceled {
            let report = evaluate(&self.global, &self.data.test)?;
            let truth = self.data.test.labels();
            let src = cfg.fleet.flip_src;
            let rates = detection_rates(&log.flagged, &self.malicious, &log.received)?;
            log.metrics = Some(RoundMetrics {
                global_accuracy: report.global_accuracy,
                class_accuracy: report.per_class_accuracy.clone(),
                asr_targeted: asr_targeted(&report.predictions, truth, src)?,
                asr_targeted_class: asr_targeted_class(&report.predictions, truth, src)?,
                asr_untargeted: None,
                fp: rates.fp,
                fn_rate: rates.fn_rate,
                round_time_s: log.round_time_s,
                dropouts_this_round: log.dropout_count(),
            });
        }
        log.outcomes = outcomes;
        Ok(log)
    }
}

/// Runs every round of one configuration.
pub fn run_experiment_on(config: &ExperimentConfig, data: &Datasets) -> Result<ExperimentResult> {
    config.validate()?;
    let mut sim = Simulation::new(config, data)?;
    let rounds = (1..=config.run.rounds).map(|r| sim.step(r)).collect::<Result<Vec<_>>>()?;
    let summary = ExperimentSummary::from_logs(config, &rounds);
    Ok(ExperimentResult {
        label: config.label(),
        final_params: sim.global,
        rounds,
        summary,
        paired_with: None,
        malicious: sim.malicious,
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let data = load_datasets(config)?;
    run_experiment_on(config, &data)
}

/// Runs the configuration and, when it contains attackers, its no-attack
/// twin; the untargeted ASR is then filled in against that twin.
pub fn run_with_reference(config: &ExperimentConfig, data: &Datasets) -> Result<(ExperimentResult, Option<ExperimentResult>)> {
    let mut main = run_experiment_on(config, data)?;
    if config.fleet.attacker_count() == 0 {
        return Ok((main, None));
    }
    let mut twin_cfg = config.without_attack();
    twin_cfg.run.label = format!("{}-no-attack", config.label());
    let twin = run_experiment_on(&twin_cfg, data)?;
    main.pair_with(config, &twin);
    Ok((main, Some(twin)))
}

/// One run per value of `axis`, all sharing the base seed.
pub fn run_sweep<S: AsRef<str>>(
    base: &ExperimentConfig,
    axis: &str,
    values: &[S],
) -> Result<Vec<(String, ExperimentResult)>> {
    let configs = sweep_configs(base, axis, values)?;
    let data = load_datasets(base)?;
    configs
        .into_iter()
        .map(|(v, c)| Ok((v, run_experiment_on(&c, &data)?)))
        .collect()
}

pub fn sweep_configs<S: AsRef<str>>(
    base: &ExperimentConfig,
    axis: &str,
    values: &[S],
) -> Result<Vec<(String, ExperimentConfig)>> {
    values
        .iter()
        .map(|v| {
            let v = v.as_ref().to_string();
            let mut c = base.clone();
            c.apply_override(&format!("{axis}={v}"))?;
            if c.run.label.is_empty() || c.run.label == base.run.label {
                c.run.label = format!("{}@{axis}={v}", base.label());
            }
            Ok((v, c))
        })
        .collect()
}

/// Resolves `relative` against the manifest directory of a finished run.
pub fn resolve(base: &Path, relative: &str) -> PathBuf {
    let p = Path::new(relative);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.data.source = DataSource::Synthetic;
        c.data.synthetic_classes = 4;
        c.data.synthetic_per_class = 40;
        c.data.synthetic_dim = 6;
        c.data.k_percent = 50.0;
        c.model.hidden = vec![8];
        c.model.epochs = 5;
        c.model.batch_size = 8;
        c.model.lr = 0.2;
        c.fleet.clients = 8;
        c.run.rounds = 3;
        c.run.log_objective = false;
        c.selection.eps = 0.9;
        c
    }

    #[test]
    fn defaults_carry_reference_constants() {
        let c = ExperimentConfig::default();
        assert_eq!((c.fleet.clients, c.selection.min_participants, c.run.rounds), (50, 5, 200));
        assert_eq!((c.model.lr, c.model.batch_size, c.model.epochs), (0.01, 64, 10));
        assert_eq!((c.selection.nu, c.selection.rho, c.selection.rho_max), (1.5, -5, 10));
        assert_eq!((c.selection.eps, c.channel.kappa, c.channel.uav_tx_power_w), (0.02, 7e4, 0.28));
        assert_eq!((c.channel.bandwidth_hz, c.data.cap, c.data.train_fraction), (10e6, 1300, 0.8));
        assert_eq!(c.channel.gamma_hz, [1e6, 1e8]);
        assert_eq!((c.fleet.flip_src, c.fleet.flip_dst), (5, 3));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let c = tiny_config();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        assert!(matches!(
            ExperimentConfig::from_toml_str("[run]\nroundz = 3\n"),
            Err(ConfigError::Parse(_))
        ));
        let partial = ExperimentConfig::from_toml_str("[fleet]\nclients = 9\n").unwrap();
        assert_eq!(partial.fleet.clients, 9);
        assert_eq!(partial.selection, SelectionSpec::default());
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::default();
        c.apply_override("selection.strategy=random").unwrap();
        assert_eq!(c.selection.strategy, Strategy::Random);
        c.apply_override("selection.nu = 2").unwrap();
        assert_eq!(c.selection.nu, 2.0);
        c.apply_override("fleet.attack=targeted").unwrap();
        assert_eq!(c.fleet.attack, AttackKind::Targeted);
        c.apply_override("channel.gamma_hz=[2e6, 3e6]").unwrap();
        assert_eq!(c.channel.gamma_hz, [2e6, 3e6]);
        assert!(matches!(c.apply_override("selection.bogus=1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(c.apply_override("selection=1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(c.apply_override("nonsense"), Err(ConfigError::BadOverride(_))));
        assert!(matches!(c.apply_override("selection.rho=10"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(c.apply_override("selection.strategy=magic"), Err(ConfigError::Invalid { .. })));
        assert_eq!(c.selection.rho, -5);
    }

    #[test]
    fn validation_rejects_bad_fleets() {
        let mut c = ExperimentConfig::default();
        c.fleet.attacker_fraction = 0.5;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.fleet.stragglers = 30;
        c.fleet.dropouts = 30;
        assert!(c.validate().is_err());
    }

    #[test]
    fn fleet_composition() {
        let mut c = tiny_config();
        c.fleet.clients = 50;
        c.fleet.attacker_fraction = 0.2;
        c.fleet.stragglers = 5;
        c.fleet.dropouts = 7;
        let data = load_datasets(&c).unwrap();
        let fleet = build_fleet(&c, &data.train).unwrap();
        let count = |f: fn(&BehaviorProfile) -> bool| fleet.iter().filter(|u| f(&u.profile)).count();
        assert_eq!(count(BehaviorProfile::is_malicious), 10);
        assert_eq!(count(|p| *p == BehaviorProfile::Straggler), 5);
        assert_eq!(count(|p| matches!(p, BehaviorProfile::Dropout { .. })), 7);
        assert_eq!(count(|p| *p == BehaviorProfile::Honest), 28);
        assert!(fleet.iter().all(|u| (0..=9).contains(&u.reliability)));
        assert_eq!(fleet, build_fleet(&c, &data.train).unwrap());
        for u in &fleet {
            let range = if u.profile == BehaviorProfile::Straggler { c.channel.straggler_gamma_hz } else { c.channel.gamma_hz };
            assert!(u.compute.gamma >= range[0] && u.compute.gamma <= range[1]);
        }
        let twin = build_fleet(&c.without_attack(), &data.train).unwrap();
        for (a, b) in fleet.iter().zip(&twin) {
            assert_eq!((a.compute, a.geometry, &a.shard), (b.compute, b.geometry, &b.shard));
            if !a.profile.is_malicious() {
                assert_eq!(a.profile, b.profile);
            }
        }
    }

    #[test]
    fn source_class_placement_prefers_holders() {
        let mut c = tiny_config();
        c.data.synthetic_classes = 6;
        c.fleet.flip_src = 2;
        c.fleet.flip_dst = 1;
        c.data.k_percent = 100.0;
        c.fleet.attacker_fraction = 0.25;
        c.fleet.attack = AttackKind::Targeted;
        c.fleet.attacker_placement = AttackerPlacement::SourceClass;
        let data = load_datasets(&c).unwrap();
        let fleet = build_fleet(&c, &data.train).unwrap();
        let held = |u: &UavClient| u.shard.iter().filter(|&&s| data.train.labels()[s] == 2).count();
        let min_attacker = fleet.iter().filter(|u| u.profile.is_malicious()).map(held).min().unwrap();
        let max_other = fleet.iter().filter(|u| !u.profile.is_malicious()).map(held).max().unwrap();
        assert!(min_attacker >= max_other);
    }

    #[test]
    fn smoke_round_all_honest() {
        let mut c = tiny_config();
        c.run.rounds = 1;
        c.selection.min_participants = 8;
        c.selection.strategy = Strategy::Random;
        let r = run_experiment(&c).unwrap();
        let log = &r.rounds[0];
        assert_eq!(log.aggregated.len(), 8);
        let acc = log.metrics.as_ref().unwrap().global_accuracy;
        assert!(acc > 0.25, "accuracy {acc}");
        log.audit(8).unwrap();
    }

    #[test]
    fn total_dropout_cancels_every_round() {
        let mut c = tiny_config();
        c.fleet.dropouts = 8;
        c.fleet.dropout_prob = 1.0;
        for strategy in [Strategy::Proposed, Strategy::Random] {
            c.selection.strategy = strategy;
            let data = load_datasets(&c).unwrap();
            let r = run_experiment_on(&c, &data).unwrap();
            assert!(r.rounds.iter().all(|l| l.canceled && l.metrics.is_none()));
            let sim = Simulation::new(&c, &data).unwrap();
            assert_eq!(r.final_params, sim.global);
            assert_eq!(r.summary.chi_d, 1.0);
        }
    }

    #[test]
    fn every_strategy_runs_and_audits() {
        let mut c = tiny_config();
        c.fleet.stragglers = 1;
        c.fleet.dropouts = 1;
        c.fleet.attacker_fraction = 0.25;
        c.selection.min_participants = 3;
        c.selection.participation_cap = 2;
        let data = load_datasets(&c).unwrap();
        for strategy in [Strategy::Proposed, Strategy::Random, Strategy::Speed, Strategy::Divergence, Strategy::Capped, Strategy::Kmeans] {
            c.selection.strategy = strategy;
            let r = run_experiment_on(&c, &data).unwrap();
            assert_eq!(r.rounds.len(), 3);
            for log in &r.rounds {
                log.audit(c.fleet.clients).unwrap();
                if strategy != Strategy::Capped {
                    assert!(log.selected.len() >= c.selection.min_participants.min(log.candidates.len()));
                }
            }
            assert_eq!(r, run_experiment_on(&c, &data).unwrap());
        }
    }

    #[test]
    fn capped_counts_never_exceed_cap() {
        let mut c = tiny_config();
        c.selection.strategy = Strategy::Capped;
        c.selection.participation_cap = 1;
        c.selection.min_participants = 3;
        c.run.rounds = 5;
        let r = run_experiment(&c).unwrap();
        let total: usize = r.rounds.iter().map(|l| l.selected.len()).sum();
        assert!(total <= 8);
        assert!(r.rounds.last().unwrap().canceled);
    }

    #[test]
    fn sweep_fan_out() {
        let c = tiny_config();
        let out = run_sweep(&c, "selection.rho", &["-5", "0", "5"]).unwrap();
        assert_eq!(out.iter().map(|(v, _)| v.as_str()).collect::<Vec<_>>(), ["-5", "0", "5"]);
        let single = run_sweep(&c, "selection.rho", &["-5"]).unwrap();
        let direct = run_experiment(&c).unwrap();
        assert_eq!(single[0].1.rounds, direct.rounds);
        assert_eq!(single[0].1.final_params, direct.final_params);
        assert!(run_sweep(&c, "selection.nope", &["1"]).is_err());
    }

    #[test]
    fn summary_csv_has_schema_header() {
        let r = run_experiment(&tiny_config()).unwrap();
        let text = summary_csv(std::slice::from_ref(&r.summary)).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with(SUMMARY_SCHEMA));
        assert_eq!(lines.count(), 1);
        assert!(!text.contains('\r'));
    }
}
