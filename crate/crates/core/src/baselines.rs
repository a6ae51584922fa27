//! Comparison selection strategies and the K-means post-hoc defense.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::defense::{build_similarity_graph, HonestSelection};
use crate::error::DefenseError;
use crate::model::WeightUpdate;
use crate::seed;
use crate::ClientId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    RandomSelection,
    SpeedBased,
    WeightDivergence,
    ParticipationCapped { cap: u32 },
    RandomPlusKMeans { clusters: usize },
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::RandomSelection => "random",
            Self::SpeedBased => "speed",
            Self::WeightDivergence => "divergence",
            Self::ParticipationCapped { .. } => "capped",
            Self::RandomPlusKMeans { .. } => "kmeans",
        }
    }
}

/// Uniform sample of `p` ids without replacement, returned ascending.
pub fn random_selection(pool: &[ClientId], p: usize, seed: u64) -> Vec<ClientId> {
    let mut sorted = pool.to_vec();
    sorted.sort();
    if p >= sorted.len() {
        return sorted;
    }
    let mut rng = seed::rng(seed);
    let mut picked: Vec<ClientId> =
        rand::seq::index::sample(&mut rng, sorted.len(), p).into_iter().map(|i| sorted[i]).collect();
    picked.sort();
    picked
}

/// The `p` smallest estimated times, ties by ascending id.
pub fn speed_based_selection(est_times: &BTreeMap<ClientId, f64>, p: usize) -> Vec<ClientId> {
    let mut order: Vec<(ClientId, f64)> = est_times.iter().map(|(&i, &t)| (i, t)).collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut picked: Vec<ClientId> = order.into_iter().take(p).map(|(i, _)| i).collect();
    picked.sort();
    picked
}

/// Mean of `|(local - prev) / prev|` over coordinates with `|prev| >= 1e-8`.
/// Returns `(divergence, included_coordinates)`; the divergence is 0 when no
/// coordinate qualifies.
pub fn weight_divergence(local: &[f64], prev: &[f64]) -> Result<(f64, usize), DefenseError> {
    if local.len() != prev.len() {
        return Err(DefenseError::LengthMismatch { left: local.len(), right: prev.len() });
    }
    let (sum, count) = local
        .iter()
        .zip(prev)
        .filter(|(_, p)| p.abs() >= 1e-8)
        .fold((0.0, 0usize), |(s, c), (l, p)| (s + ((l - p) / p).abs(), c + 1));
    Ok(if count == 0 { (0.0, 0) } else { (sum / count as f64, count) })
}

/// Top `p` by last-seen divergence; clients absent from `divergences` rank as
/// infinitely divergent. Ties by ascending id.
pub fn weight_divergence_selection(
    pool: &[ClientId],
    divergences: &BTreeMap<ClientId, f64>,
    p: usize,
) -> Vec<ClientId> {
    let mut order: Vec<(ClientId, f64)> =
        pool.iter().map(|&i| (i, divergences.get(&i).copied().unwrap_or(f64::INFINITY))).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut picked: Vec<ClientId> = order.into_iter().take(p).map(|(i, _)| i).collect();
    picked.sort();
    picked
}

/// Random selection among clients that have participated fewer than `cap` rounds.
pub fn capped_selection(counts: &BTreeMap<ClientId, u32>, p: usize, cap: u32, seed: u64) -> Vec<ClientId> {
    let eligible: Vec<ClientId> = counts.iter().filter(|(_, &c)| c < cap).map(|(&i, _)| i).collect();
    random_selection(&eligible, p, seed)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// K-means (k-means++ seeding, at most 100 Lloyd iterations) on the rows of
/// the cosine-similarity matrix. The larger cluster is returned as honest.
pub fn kmeans_defense(updates: &[WeightUpdate], clusters: usize, seed: u64) -> Result<HonestSelection, DefenseError> {
    if clusters < 2 {
        return Err(DefenseError::InvalidParameter(format!("need at least 2 clusters, got {clusters}")));
    }
    if updates.len() < clusters {
        return Err(DefenseError::InvalidParameter(format!(
            "{} updates cannot form {clusters} clusters",
            updates.len()
        )));
    }
    let graph = build_similarity_graph(updates)?;
    let n = graph.len();
    let rows: Vec<&[f64]> = (0..n).map(|i| &graph.kappa[i * n..(i + 1) * n]).collect();
    let mut rng = seed::rng(seed);

    let mut centers: Vec<Vec<f64>> = vec![rows[rng.random_range(0..n)].to_vec()];
    while centers.len() < clusters {
        let d2: Vec<f64> =
            rows.iter().map(|r| centers.iter().map(|c| sq_dist(r, c)).fold(f64::INFINITY, f64::min)).collect();
        let total: f64 = d2.iter().sum();
        // Rows of identical updates differ only by rounding in the similarity.
        if total <= 1e-12 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, d) in d2.iter().enumerate() {
            if target < *d {
                pick = i;
                break;
            }
            target -= d;
        }
        centers.push(rows[pick].to_vec());
    }
    if centers.len() < clusters {
        // Every row identical.
        return Ok(HonestSelection { honest: graph.ids.clone(), abstained: false });
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..100 {
        let next: Vec<usize> = rows
            .iter()
            .map(|r| {
                (0..centers.len())
                    .min_by(|&a, &b| sq_dist(r, &centers[a]).total_cmp(&sq_dist(r, &centers[b])).then(a.cmp(&b)))
                    .unwrap()
            })
            .collect();
        if next == assign {
            break;
        }
        assign = next;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&[f64]> = (0..n).filter(|&i| assign[i] == c).map(|i| rows[i]).collect();
            if members.is_empty() {
                continue;
            }
            for (k, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[k]).sum::<f64>() / members.len() as f64;
            }
        }
    }

    let best = (0..centers.len())
        .max_by(|&a, &b| {
            let size = |c: usize| assign.iter().filter(|&&x| x == c).count();
            let first = |c: usize| assign.iter().position(|&x| x == c).unwrap_or(usize::MAX);
            size(a).cmp(&size(b)).then(first(b).cmp(&first(a)))
        })
        .unwrap();
    let honest = (0..n).filter(|&i| assign[i] == best).map(|i| graph.ids[i]).collect();
    Ok(HonestSelection { honest, abstained: false })
}
