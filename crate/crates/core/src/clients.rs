//! Simulated UAV participants and their per-round behavior.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::channel::{estimate_latency, ChannelParams, ComputeProfile, LatencyEstimate, UavGeometry};
use crate::data::{LabeledDataset, ShardView};
use crate::error::DataError;
use crate::model::{local_update, ModelParams, TrainConfig, WeightUpdate};
use crate::seed;
use crate::ClientId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BehaviorProfile {
    Honest,
    Straggler,
    Dropout { dropout_prob: f64 },
    MaliciousTargeted { flip_src: usize, flip_dst: usize },
    /// `noise_sigma` is relative: the absolute per-coordinate deviation is
    /// `noise_sigma * RMS(delta)` of the clean update.
    MaliciousUntargeted { noise_sigma: f64 },
}

impl BehaviorProfile {
    pub fn is_malicious(&self) -> bool {
        matches!(self, Self::MaliciousTargeted { .. } | Self::MaliciousUntargeted { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Honest => "honest",
            Self::Straggler => "straggler",
            Self::Dropout { .. } => "dropout",
            Self::MaliciousTargeted { .. } => "targeted",
            Self::MaliciousUntargeted { .. } => "untargeted",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UavClient {
    pub id: ClientId,
    /// Indices into the server's training set.
    pub shard: Vec<usize>,
    pub compute: ComputeProfile,
    pub geometry: UavGeometry,
    pub profile: BehaviorProfile,
    /// Reliability score; changed only through the defense module's update rule.
    pub reliability: i64,
    pub participation_count: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Completed,
    MissedDeadline,
    DroppedOut,
    NotSelected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundOutcome {
    pub client: ClientId,
    pub status: RoundStatus,
    #[serde(skip)]
    pub update: Option<WeightUpdate>,
    /// Training plus upload time; for dropouts, the time spent before failing.
    pub elapsed_s: f64,
    pub sample_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// Relabels every `src` sample as `dst`, leaving the parent dataset untouched.
pub fn flip_labels<'a>(shard: ShardView<'a>, src: usize, dst: usize) -> Result<ShardView<'a>, DataError> {
    let classes = shard.num_classes();
    if src == dst || src >= classes || dst >= classes {
        return Err(DataError::InvalidArgument(format!(
            "label flip {src} -> {dst} invalid for {classes} classes"
        )));
    }
    let labels = shard.labels().into_iter().map(|l| if l == src { dst } else { l }).collect();
    Ok(shard.with_labels(labels))
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every coordinate of the update.
pub fn poison_update(update: &WeightUpdate, sigma: f64, seed: u64) -> WeightUpdate {
    let mut out = update.clone();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
        let mut rng = seed::rng(seed);
        for d in &mut out.delta {
            *d += normal.sample(&mut rng);
        }
    }
    out
}

pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Everything a client needs to execute one round.
#[derive(Clone, Copy, Debug)]
pub struct RoundContext<'a> {
    pub train_set: &'a LabeledDataset,
    pub global: &'a ModelParams,
    /// `None` when the strategy imposes no deadline.
    pub deadline_s: Option<f64>,
    pub hyper: &'a TrainConfig,
    pub channel: &'a ChannelParams,
    pub bandwidth_hz: f64,
    pub master_seed: u64,
    pub round: u32,
}

impl UavClient {
    pub fn latency(
        &self,
        channel: &ChannelParams,
        epochs: usize,
        param_count: usize,
        param_bytes: usize,
        bandwidth_hz: f64,
    ) -> Result<LatencyEstimate, crate::error::ChannelError> {
        estimate_latency(
            &self.compute,
            &self.geometry,
            channel,
            epochs,
            self.shard.len(),
            param_count,
            param_bytes,
            bandwidth_hz,
        )
    }

    /// The shard this client actually trains on (labels flipped for targeted attackers).
    pub fn effective_shard<'a>(&self, train_set: &'a LabeledDataset) -> Result<ShardView<'a>, DataError> {
        let view = train_set.shard(&self.shard);
        match self.profile {
            BehaviorProfile::MaliciousTargeted { flip_src, flip_dst } => flip_labels(view, flip_src, flip_dst),
            _ => Ok(view),
        }
    }
}

/// Runs one selected client for one round.
///
/// Dropout clients fail before upload with probability `dropout_prob`; all
/// others train, malicious untargeted clients add noise, and the outcome is
/// `Completed` only if training plus upload fits the deadline.
pub fn simulate_client_round(client: &UavClient, ctx: &RoundContext<'_>) -> ClientRoundOutcome {
    let id = client.id;
    let key = u64::from(id.0);
    let round = u64::from(ctx.round);
    let sample_count = client.shard.len();
    let failed = |elapsed_s: f64, why: String| ClientRoundOutcome {
        client: id,
        status: RoundStatus::DroppedOut,
        update: None,
        elapsed_s,
        sample_count,
        diagnostic: Some(why),
    };

    let latency = match client.latency(
        ctx.channel,
        ctx.hyper.epochs,
        ctx.global.param_count(),
        ctx.global.param_bytes(),
        ctx.bandwidth_hz,
    ) {
        Ok(l) => l,
        Err(e) => return failed(0.0, format!("latency model: {e}")),
    };

    if let BehaviorProfile::Dropout { dropout_prob } = client.profile {
        let mut rng = seed::derive_rng(ctx.master_seed, seed::Purpose::Dropout, key, round);
        if rng.random::<f64>() < dropout_prob {
            return ClientRoundOutcome {
                client: id,
                status: RoundStatus::DroppedOut,
                update: None,
                elapsed_s: latency.train_s,
                sample_count,
                diagnostic: None,
            };
        }
    }

    let shard = match client.effective_shard(ctx.train_set) {
        Ok(s) => s,
        Err(e) => return failed(latency.train_s, format!("shard: {e}")),
    };
    let train_seed = seed::derive(ctx.master_seed, seed::Purpose::Training, key, round);
    let mut update = match local_update(ctx.global, &shard, id, ctx.hyper, train_seed) {
        Ok(u) => u,
        Err(e) => return failed(latency.train_s, format!("training: {e}")),
    };
    if let BehaviorProfile::MaliciousUntargeted { noise_sigma } = client.profile {
        let sigma = noise_sigma * rms(&update.delta);
        let attack_seed = seed::derive(ctx.master_seed, seed::Purpose::Attack, key, round);
        update = poison_update(&update, sigma, attack_seed);
    }

    let elapsed_s = latency.total();
    let status = match ctx.deadline_s {
        Some(zeta) if elapsed_s > zeta => RoundStatus::MissedDeadline,
        _ => RoundStatus::Completed,
    };
    ClientRoundOutcome { client: id, status, update: Some(update), elapsed_s, sample_count, diagnostic: None }
}
