//! The three cascaded participant filters and selective aggregation.
//!
//! 1. straggler removal by an upper IQR fence on estimated times,
//! 2. reliability-score selection with an over-selection reset,
//! 3. DBSCAN over pairwise cosine distances of the received updates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clients::RoundStatus;
use crate::error::DefenseError;
use crate::model::{apply_update, ModelParams, WeightUpdate};
use crate::ClientId;

/// Linear interpolation between order statistics of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IqrOutcome {
    pub kept: Vec<ClientId>,
    pub removed: Vec<ClientId>,
    pub q1: f64,
    pub q3: f64,
    pub cutoff: f64,
}

/// Keeps every client whose estimated time is at most `Q3 + nu * (Q3 - Q1)`.
/// There is no lower fence.
pub fn iqr_filter(est_times: &BTreeMap<ClientId, f64>, nu: f64) -> Result<IqrOutcome, DefenseError> {
    if est_times.is_empty() {
        return Err(DefenseError::EmptyInput("estimated times"));
    }
    if !(nu > 0.0) {
        return Err(DefenseError::InvalidParameter(format!("nu must be positive, got {nu}")));
    }
    let mut sorted: Vec<f64> = est_times.values().copied().collect();
    if sorted.iter().any(|t| !t.is_finite()) {
        return Err(DefenseError::InvalidParameter("estimated times must be finite".into()));
    }
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let cutoff = q3 + nu * (q3 - q1);
    let (kept, removed) = est_times.iter().fold((Vec::new(), Vec::new()), |(mut k, mut r), (&id, &t)| {
        if t <= cutoff {
            k.push(id)
        } else {
            r.push(id)
        }
        (k, r)
    });
    Ok(IqrOutcome { kept, removed, q1, q3, cutoff })
}

/// `2 * mean(kept_times)`.
pub fn compute_deadline(kept_times: &[f64]) -> Result<f64, DefenseError> {
    if kept_times.is_empty() {
        return Err(DefenseError::EmptyInput("kept times"));
    }
    Ok(2.0 * kept_times.iter().sum::<f64>() / kept_times.len() as f64)
}

pub fn reliability_increment(status: RoundStatus, penalize_dropouts: bool) -> i64 {
    match status {
        RoundStatus::Completed => 1,
        RoundStatus::MissedDeadline => -1,
        RoundStatus::DroppedOut if penalize_dropouts => -1,
        RoundStatus::DroppedOut | RoundStatus::NotSelected => 0,
    }
}

pub fn update_reliability(score: i64, status: RoundStatus, penalize_dropouts: bool) -> i64 {
    score + reliability_increment(status, penalize_dropouts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    pub reliability: BTreeMap<ClientId, i64>,
    pub round_index: u32,
    pub rho: i64,
    pub rho_max: i64,
    pub nu: f64,
    pub min_participants: usize,
    pub penalize_dropouts: bool,
}

impl SelectionState {
    pub fn new(
        reliability: BTreeMap<ClientId, i64>,
        rho: i64,
        rho_max: i64,
        nu: f64,
        min_participants: usize,
        penalize_dropouts: bool,
    ) -> Result<Self, DefenseError> {
        if rho >= rho_max {
            return Err(DefenseError::InvalidParameter(format!("rho ({rho}) must be below rho_max ({rho_max})")));
        }
        if !(nu > 0.0) {
            return Err(DefenseError::InvalidParameter(format!("nu must be positive, got {nu}")));
        }
        if min_participants == 0 {
            return Err(DefenseError::InvalidParameter("min_participants must be at least 1".into()));
        }
        Ok(Self { reliability, round_index: 0, rho, rho_max, nu, min_participants, penalize_dropouts })
    }

    pub fn score(&self, id: ClientId) -> i64 {
        self.reliability.get(&id).copied().unwrap_or(0)
    }

    /// Applies the per-round reward/penalty for every reported outcome.
    pub fn record(&mut self, outcomes: impl IntoIterator<Item = (ClientId, RoundStatus)>) {
        for (id, status) in outcomes {
            let entry = self.reliability.entry(id).or_insert(0);
            *entry = update_reliability(*entry, status, self.penalize_dropouts);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityOutcome {
    pub selected: Vec<ClientId>,
    pub reset: Vec<ClientId>,
    pub topped_up: Vec<ClientId>,
    /// How many clients short of `min_participants` the selection is.
    pub shortfall: usize,
}

/// Resets over-selected scores, keeps clients at or above `rho`, and tops up
/// to `min_participants` with the highest remaining scores.
pub fn reliability_select(
    candidates: &[ClientId],
    state: &mut SelectionState,
) -> Result<ReliabilityOutcome, DefenseError> {
    if candidates.is_empty() {
        return Err(DefenseError::EmptyInput("candidates"));
    }
    let mut reset = Vec::new();
    for &id in candidates {
        let score = state.reliability.entry(id).or_insert(0);
        if *score >= state.rho_max {
            *score = 0;
            reset.push(id);
        }
    }
    let (mut selected, mut rest): (Vec<ClientId>, Vec<ClientId>) =
        candidates.iter().partition(|&&id| state.score(id) >= state.rho);
    let mut topped_up = Vec::new();
    if selected.len() < state.min_participants {
        rest.sort_by(|a, b| state.score(*b).cmp(&state.score(*a)).then(a.cmp(b)));
        topped_up = rest.into_iter().take(state.min_participants - selected.len()).collect();
        selected.extend(&topped_up);
    }
    selected.sort();
    selected.dedup();
    let shortfall = state.min_participants.saturating_sub(selected.len());
    Ok(ReliabilityOutcome { selected, reset, topped_up, shortfall })
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<Option<f64>, DefenseError> {
    if u.len() != v.len() {
        return Err(DefenseError::LengthMismatch { left: u.len(), right: v.len() });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(None);
    }
    Ok(Some((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGraph {
    pub ids: Vec<ClientId>,
    /// Row-major `n x n`.
    pub kappa: Vec<f64>,
    pub zero_norm: Vec<ClientId>,
}

impl SimilarityGraph {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn kappa(&self, i: usize, j: usize) -> f64 {
        self.kappa[i * self.ids.len() + j]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        1.0 - self.kappa(i, j)
    }

    /// Builds a graph directly from a similarity matrix (ids must be ascending).
    pub fn from_kappa(ids: Vec<ClientId>, kappa: Vec<f64>) -> Result<Self, DefenseError> {
        if kappa.len() != ids.len() * ids.len() {
            return Err(DefenseError::LengthMismatch { left: kappa.len(), right: ids.len() * ids.len() });
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DefenseError::InvalidParameter("graph ids must be strictly ascending".into()));
        }
        Ok(Self { ids, kappa, zero_norm: Vec::new() })
    }
}

/// Pairwise cosine similarities, rows ordered by ascending client id.
/// Zero-norm updates get similarity 0 to every other update.
pub fn build_similarity_graph(updates: &[WeightUpdate]) -> Result<SimilarityGraph, DefenseError> {
    if updates.len() < 2 {
        return Err(DefenseError::EmptyInput("similarity graph needs at least two updates"));
    }
    let mut order: Vec<&WeightUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.owner_id);
    if order.windows(2).any(|w| w[0].owner_id == w[1].owner_id) {
        return Err(DefenseError::InvalidParameter("duplicate update owner".into()));
    }
    let n = order.len();
    let len = order[0].delta.len();
    if let Some(bad) = order.iter().find(|u| u.delta.len() != len) {
        return Err(DefenseError::LengthMismatch { left: len, right: bad.delta.len() });
    }
    let norms: Vec<f64> = order.iter().map(|u| u.delta.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut kappa = vec![0.0; n * n];
    for i in 0..n {
        kappa[i * n + i] = 1.0;
        for j in i + 1..n {
            let k = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                let dot: f64 = order[i].delta.iter().zip(&order[j].delta).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            kappa[i * n + j] = k;
            kappa[j * n + i] = k;
        }
    }
    let zero_norm = order.iter().zip(&norms).filter(|(_, &nm)| nm == 0.0).map(|(u, _)| u.owner_id).collect();
    Ok(SimilarityGraph { ids: order.iter().map(|u| u.owner_id).collect(), kappa, zero_norm })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Each cluster ascending; clusters by size descending, then smallest id.
    pub clusters: Vec<Vec<ClientId>>,
    pub noise: Vec<ClientId>,
}

/// DBSCAN over the graph's cosine distances. A point is core when at least
/// `min_pts` points (itself included) lie within distance `eps`. Points are
/// visited in ascending id order and a border point joins the first cluster
/// that reaches it.
pub fn dbscan_cluster(graph: &SimilarityGraph, eps: f64, min_pts: usize) -> Result<ClusterResult, DefenseError> {
    if !(eps > 0.0) {
        return Err(DefenseError::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(DefenseError::InvalidParameter("min_pts must be at least 1".into()));
    }
    let n = graph.len();
    let neighbors: Vec<Vec<usize>> =
        (0..n).map(|i| (0..n).filter(|&j| graph.distance(i, j) <= eps).collect()).collect();
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if label[start].is_some() || !is_core[start] {
            continue;
        }
        let c = clusters.len();
        let mut members = vec![start];
        label[start] = Some(c);
        let mut frontier = std::collections::VecDeque::from([start]);
        while let Some(p) = frontier.pop_front() {
            for &q in &neighbors[p] {
                if label[q].is_none() {
                    label[q] = Some(c);
                    members.push(q);
                    if is_core[q] {
                        frontier.push_back(q);
                    }
                }
            }
        }
        clusters.push(members);
    }
    let mut clusters: Vec<Vec<ClientId>> = clusters
        .into_iter()
        .map(|m| {
            let mut ids: Vec<ClientId> = m.into_iter().map(|i| graph.ids[i]).collect();
            ids.sort();
            ids
        })
        .collect();
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    let noise = (0..n).filter(|&i| label[i].is_none()).map(|i| graph.ids[i]).collect();
    Ok(ClusterResult { clusters, noise })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HonestSelection {
    pub honest: Vec<ClientId>,
    /// True when every point was noise and the defense kept everyone.
    pub abstained: bool,
}

/// The largest cluster (ties: the one holding the smallest id); everyone when all is noise.
pub fn select_honest_cluster(result: &ClusterResult) -> HonestSelection {
    let best = result
        .clusters
        .iter()
        .filter(|c| !c.is_empty())
        .min_by(|a, b| b.len().cmp(&a.len()).then(a.iter().min().cmp(&b.iter().min())));
    match best {
        Some(cluster) => {
            let mut honest = cluster.clone();
            honest.sort();
            HonestSelection { honest, abstained: false }
        }
        None => {
            let mut honest = result.noise.clone();
            honest.sort();
            HonestSelection { honest, abstained: true }
        }
    }
}

/// `prev + sum_i (n_i / N) * delta_i`, summed in ascending client id order.
pub fn aggregate(prev: &ModelParams, updates: &[WeightUpdate]) -> Result<ModelParams, DefenseError> {
    if updates.is_empty() {
        return Err(DefenseError::EmptyInput("no updates to aggregate; round canceled"));
    }
    let v = prev.param_count();
    if let Some(bad) = updates.iter().find(|u| u.delta.len() != v) {
        return Err(DefenseError::LengthMismatch { left: v, right: bad.delta.len() });
    }
    let total: usize = updates.iter().map(|u| u.sample_count).sum();
    if total == 0 {
        return Err(DefenseError::InvalidParameter("updates carry zero samples".into()));
    }
    let mut order: Vec<&WeightUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.owner_id);
    let mut combined = vec![0.0; v];
    for u in order {
        let w = u.sample_count as f64 / total as f64;
        for (c, d) in combined.iter_mut().zip(&u.delta) {
            *c += w * d;
        }
    }
    apply_update(prev, &combined).map_err(|e| DefenseError::InvalidParameter(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;
    use proptest::prelude::*;
    use rand::Rng;

    fn ids(v: &[u32]) -> Vec<ClientId> {
        v.iter().map(|&i| ClientId(i)).collect()
    }

    fn times(v: &[f64]) -> BTreeMap<ClientId, f64> {
        v.iter().enumerate().map(|(i, &t)| (ClientId(i as u32), t)).collect()
    }

    #[test]
    fn iqr_examples() {
        let out = iqr_filter(&times(&[1.0, 2.0, 3.0, 4.0, 100.0]), 1.5).unwrap();
        assert_eq!((out.q1, out.q3, out.cutoff), (2.0, 4.0, 7.0));
        assert_eq!(out.kept, ids(&[0, 1, 2, 3]));
        assert_eq!(out.removed, ids(&[4]));

        let flat = iqr_filter(&times(&[3.0; 6]), 1.5).unwrap();
        assert_eq!(flat.cutoff, 3.0);
        assert_eq!(flat.kept.len(), 6);

        assert_eq!(iqr_filter(&times(&[9.0]), 1.5).unwrap().kept, ids(&[0]));
        assert!(iqr_filter(&BTreeMap::new(), 1.5).is_err());
        assert!(iqr_filter(&times(&[1.0]), 0.0).is_err());
    }

    /// Independent quantile oracle: explicit rank arithmetic on a fresh sort.
    fn oracle_cutoff(values: &[f64], nu: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| {
            let pos = p * (v.len() as f64 - 1.0);
            let i = pos as usize;
            if i + 1 >= v.len() {
                v[v.len() - 1]
            } else {
                v[i] * (1.0 - (pos - i as f64)) + v[i + 1] * (pos - i as f64)
            }
        };
        q(0.75) + nu * (q(0.75) - q(0.25))
    }

    #[test]
    fn iqr_matches_oracle_on_random_inputs() {
        let mut rng = crate::seed::rng(11);
        for _ in 0..1000 {
            let n = rng.random_range(1..40);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0f64).powi(2)).collect();
            let nu = rng.random_range(0.1..3.0);
            let out = iqr_filter(&times(&v), nu).unwrap();
            let cut = oracle_cutoff(&v, nu);
            assert!((out.cutoff - cut).abs() <= 1e-9 * cut.abs().max(1.0));
            let expect: Vec<ClientId> =
                v.iter().enumerate().filter(|(_, &t)| t <= cut).map(|(i, _)| ClientId(i as u32)).collect();
            assert_eq!(out.kept, expect);
        }
    }

    #[test]
    fn deadline_examples() {
        assert_eq!(compute_deadline(&[3.0, 5.0]).unwrap(), 8.0);
        assert_eq!(compute_deadline(&[2.5; 4]).unwrap(), 5.0);
        assert!(compute_deadline(&[]).is_err());
    }

    #[test]
    fn reliability_update_rules() {
        assert_eq!(update_reliability(3, RoundStatus::Completed, false), 4);
        assert_eq!(update_reliability(3, RoundStatus::DroppedOut, false), 3);
        assert_eq!(update_reliability(3, RoundStatus::DroppedOut, true), 2);
        assert_eq!(update_reliability(3, RoundStatus::MissedDeadline, false), 2);
        assert_eq!(update_reliability(3, RoundStatus::NotSelected, true), 3);
    }

    fn state(scores: &[(u32, i64)], rho: i64, p: usize) -> SelectionState {
        SelectionState::new(scores.iter().map(|&(i, s)| (ClientId(i), s)).collect(), rho, 10, 1.5, p, false).unwrap()
    }

    #[test]
    fn reliability_select_examples() {
        let mut s = state(&[(0, 5), (1, -6)], -5, 1);
        assert_eq!(reliability_select(&ids(&[0, 1]), &mut s).unwrap().selected, ids(&[0]));

        let mut s = state(&[(0, 10)], -5, 1);
        let out = reliability_select(&ids(&[0]), &mut s).unwrap();
        assert_eq!(out.selected, ids(&[0]));
        assert_eq!(out.reset, ids(&[0]));
        assert_eq!(s.score(ClientId(0)), 0);

        let mut s = state(&[(0, -6), (1, -7)], -5, 2);
        let out = reliability_select(&ids(&[0, 1]), &mut s).unwrap();
        assert_eq!(out.topped_up, ids(&[0, 1]));
        assert_eq!(out.shortfall, 0);

        let mut s = state(&[(0, 1)], -5, 3);
        assert_eq!(reliability_select(&ids(&[0]), &mut s).unwrap().shortfall, 2);
        assert!(SelectionState::new(BTreeMap::new(), 10, 10, 1.5, 1, false).is_err());
    }

    #[test]
    fn top_up_exhaustive_on_three_clients() {
        let range = -8i64..=-3;
        for a in range.clone() {
            for b in range.clone() {
                for c in range.clone() {
                    for p in 1..=3usize {
                        let scores = [a, b, c];
                        let mut s = state(&[(0, a), (1, b), (2, c)], -5, p);
                        let got = reliability_select(&ids(&[0, 1, 2]), &mut s).unwrap().selected;
                        let mut above: Vec<usize> = (0..3).filter(|&i| scores[i] >= -5).collect();
                        if above.len() < p {
                            let mut below: Vec<usize> = (0..3).filter(|&i| scores[i] < -5).collect();
                            below.sort_by_key(|&i| (-scores[i], i));
                            above.extend(below.into_iter().take(p - above.len()));
                        }
                        above.sort();
                        let expect: Vec<ClientId> = above.into_iter().map(|i| ClientId(i as u32)).collect();
                        assert_eq!(got, expect, "scores {scores:?} p {p}");
                    }
                }
            }
        }
    }

    #[test]
    fn cosine_examples() {
        let u = [1.0, 2.0, -3.0];
        assert!((cosine_similarity(&u, &u).unwrap().unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 4.0]).unwrap(), Some(0.0));
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        assert!((cosine_similarity(&u, &neg).unwrap().unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&u, &[0.0; 3]).unwrap(), None);
        assert!(cosine_similarity(&u, &[1.0]).is_err());
    }

    fn upd(id: u32, delta: Vec<f64>, n: usize) -> WeightUpdate {
        WeightUpdate { delta, owner_id: ClientId(id), sample_count: n }
    }

    #[test]
    fn graph_examples() {
        let g = build_similarity_graph(&[upd(0, vec![1.0, 2.0], 1), upd(1, vec![1.0, 2.0], 1)]).unwrap();
        assert!(g.distance(0, 1).abs() < 1e-15);

        let g = build_similarity_graph(&[
            upd(2, vec![0.0, 3.0], 1),
            upd(0, vec![1.0, 0.0], 1),
            upd(1, vec![2.0, 0.0], 1),
        ])
        .unwrap();
        assert_eq!(g.ids, ids(&[0, 1, 2]));
        let d = [g.distance(0, 1), g.distance(0, 2), g.distance(1, 2)];
        assert!(d[0].abs() < 1e-15 && (d[1] - 1.0).abs() < 1e-15 && (d[2] - 1.0).abs() < 1e-15);

        let g = build_similarity_graph(&[upd(0, vec![0.0, 0.0], 1), upd(1, vec![1.0, 0.0], 1)]).unwrap();
        assert_eq!(g.zero_norm, ids(&[0]));
        assert_eq!(g.kappa(0, 1), 0.0);
        assert_eq!(g.kappa(0, 0), 1.0);
        assert!(build_similarity_graph(&[upd(0, vec![1.0], 1)]).is_err());
    }

    #[test]
    fn random_graph_is_symmetric_with_unit_diagonal() {
        let mut rng = crate::seed::rng(3);
        let ups: Vec<WeightUpdate> =
            (0..7).map(|i| upd(i, (0..30).map(|_| rng.random_range(-1.0..1.0)).collect(), 1)).collect();
        let g = build_similarity_graph(&ups).unwrap();
        for i in 0..7 {
            assert_eq!(g.kappa(i, i), 1.0);
            for j in 0..7 {
                assert_eq!(g.kappa(i, j), g.kappa(j, i));
                assert!((-1.0..=1.0).contains(&g.kappa(i, j)));
            }
        }
    }

    fn graph_from_distances(d: &[Vec<f64>]) -> SimilarityGraph {
        let n = d.len();
        let kappa = (0..n * n).map(|k| 1.0 - d[k / n][k % n]).collect();
        SimilarityGraph::from_kappa((0..n as u32).map(ClientId).collect(), kappa).unwrap()
    }

    #[test]
    fn dbscan_examples() {
        let blob = graph_from_distances(&vec![vec![0.0; 5]; 5]);
        let r = dbscan_cluster(&blob, 0.1, 2).unwrap();
        assert_eq!(r.clusters, vec![ids(&[0, 1, 2, 3, 4])]);
        assert!(r.noise.is_empty());

        let mut d = vec![vec![0.0; 4]; 4];
        for i in 0..3 {
            d[i][3] = 10.0;
            d[3][i] = 10.0;
        }
        let r = dbscan_cluster(&graph_from_distances(&d), 0.1, 2).unwrap();
        assert_eq!(r.clusters, vec![ids(&[0, 1, 2])]);
        assert_eq!(r.noise, ids(&[3]));
        assert!(dbscan_cluster(&blob, 0.0, 2).is_err());
        assert!(dbscan_cluster(&blob, 0.1, 0).is_err());
    }

    /// Brute-force reference: clusters are connected components of core points
    /// (linked when within eps); each border point joins the adjacent component
    /// with the smallest minimum core index.
    fn oracle_dbscan(d: &[Vec<f64>], eps: f64, min_pts: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
        let n = d.len();
        let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| d[i][j] <= eps).count() >= min_pts).collect();
        let mut comp: Vec<usize> = (0..n).collect();
        // Transitive closure by repeated relaxation.
        loop {
            let mut changed = false;
            for i in 0..n {
                for j in 0..n {
                    if core[i] && core[j] && d[i][j] <= eps && comp[j] < comp[i] {
                        comp[i] = comp[j];
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in (0..n).filter(|&i| core[i]) {
            groups.entry(comp[i]).or_default().push(i);
        }
        let mut noise = Vec::new();
        for p in (0..n).filter(|&i| !core[i]) {
            let home = (0..n).filter(|&q| core[q] && d[p][q] <= eps).map(|q| comp[q]).min();
            match home {
                Some(c) => groups.get_mut(&c).unwrap().push(p),
                None => noise.push(p),
            }
        }
        let mut clusters: Vec<Vec<usize>> = groups
            .into_values()
            .map(|mut g| {
                g.sort();
                g
            })
            .collect();
        clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        (clusters, noise)
    }

    #[test]
    fn dbscan_matches_brute_force_oracle() {
        let mut rng = crate::seed::rng(21);
        for _ in 0..200 {
            let n = rng.random_range(1..=20);
            let dim = rng.random_range(1..=3);
            let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
            let d: Vec<Vec<f64>> = pts
                .iter()
                .map(|a| pts.iter().map(|b| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()).collect())
                .collect();
            let eps = rng.random_range(0.05..0.4);
            let min_pts = rng.random_range(1..=4);
            let g = graph_from_distances(&d);
            let got = dbscan_cluster(&g, eps, min_pts).unwrap();
            // The graph stores 1 - d, so feed the oracle the same rounded distances.
            let rounded: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| g.distance(i, j)).collect()).collect();
            let (clusters, noise) = oracle_dbscan(&rounded, eps, min_pts);
            let as_ids = |v: &[usize]| v.iter().map(|&i| ClientId(i as u32)).collect::<Vec<_>>();
            assert_eq!(got.clusters, clusters.iter().map(|c| as_ids(c)).collect::<Vec<_>>());
            assert_eq!(got.noise, as_ids(&noise));
        }
    }

    #[test]
    fn honest_cluster_rules() {
        let r = ClusterResult { clusters: vec![ids(&[3, 4, 5, 6, 7, 8, 9]), ids(&[0, 2])], noise: ids(&[1]) };
        assert_eq!(select_honest_cluster(&r), HonestSelection { honest: ids(&[3, 4, 5, 6, 7, 8, 9]), abstained: false });
        let tie = ClusterResult { clusters: vec![ids(&[4, 5, 6]), ids(&[1, 2, 3])], noise: vec![] };
        assert_eq!(select_honest_cluster(&tie).honest, ids(&[1, 2, 3]));
        let all = ClusterResult { clusters: vec![], noise: ids(&[2, 0]) };
        assert_eq!(select_honest_cluster(&all), HonestSelection { honest: ids(&[0, 2]), abstained: true });
    }

    #[test]
    fn aggregate_examples() {
        let prev = init_model(&[2, 2], 4, 0).unwrap();
        let v = prev.param_count();
        let delta: Vec<f64> = (0..v).map(|i| i as f64 * 0.5).collect();
        let one = aggregate(&prev, &[upd(0, delta.clone(), 7)]).unwrap();
        for ((a, b), d) in one.values().iter().zip(prev.values()).zip(&delta) {
            assert_eq!(*a, b + d);
        }
        let neg: Vec<f64> = delta.iter().map(|x| -x).collect();
        let zero = aggregate(&prev, &[upd(0, delta, 5), upd(1, neg, 5)]).unwrap();
        assert_eq!(zero.values(), prev.values());

        let mut e = vec![0.0; v];
        e[0] = 4.0;
        let w = aggregate(&prev, &[upd(0, e, 100), upd(1, vec![0.0; v], 300)]).unwrap();
        assert!((w.values()[0] - (prev.values()[0] + 1.0)).abs() < 1e-12);
        assert!(aggregate(&prev, &[]).is_err());
        assert!(aggregate(&prev, &[upd(0, vec![1.0], 1)]).is_err());
    }

    #[test]
    fn aggregate_matches_weighted_mean_oracle() {
        let mut rng = crate::seed::rng(5);
        let prev = init_model(&[4, 3, 2], 4, 1).unwrap();
        let v = prev.param_count();
        for _ in 0..50 {
            let k = rng.random_range(1..8);
            let ups: Vec<WeightUpdate> = (0..k)
                .map(|i| upd(i, (0..v).map(|_| rng.random_range(-1.0..1.0)).collect(), rng.random_range(1..500)))
                .collect();
            let out = aggregate(&prev, &ups).unwrap();
            let total: f64 = ups.iter().map(|u| u.sample_count as f64).sum();
            for c in 0..v {
                let mean: f64 = ups.iter().map(|u| u.sample_count as f64 * u.delta[c]).sum::<f64>() / total;
                assert!((out.values()[c] - prev.values()[c] - mean).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn aggregate_equal_counts_is_arithmetic_mean() {
        let mut rng = crate::seed::rng(6);
        let prev = init_model(&[3, 2], 4, 2).unwrap();
        let v = prev.param_count();
        let ups: Vec<WeightUpdate> =
            (0..5).map(|i| upd(i, (0..v).map(|_| rng.random_range(-1.0..1.0)).collect(), 40)).collect();
        let out = aggregate(&prev, &ups).unwrap();
        for c in 0..v {
            let mean = ups.iter().map(|u| u.delta[c]).sum::<f64>() / 5.0;
            assert!((out.values()[c] - prev.values()[c] - mean).abs() <= 1e-12);
        }
    }

    fn clustered_updates(rng: &mut impl Rng, n: usize) -> Vec<WeightUpdate> {
        let base: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        (0..n as u32)
            .map(|i| {
                let spread = if i % 4 == 3 { 3.0 } else { 0.1 };
                upd(i, base.iter().map(|b| b + spread * rng.random_range(-1.0..1.0)).collect(), 10)
            })
            .collect()
    }

    #[test]
    fn scale_invariance_on_random_rounds() {
        let mut rng = crate::seed::rng(8);
        for _ in 0..100 {
            let n = rng.random_range(2..15);
            let ups = clustered_updates(&mut rng, n);
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let scaled: Vec<WeightUpdate> =
                ups.iter().map(|u| upd(u.owner_id.0, u.delta.iter().map(|d| d * scale).collect(), 10)).collect();
            let eps = rng.random_range(0.01..0.5);
            let a = dbscan_cluster(&build_similarity_graph(&ups).unwrap(), eps, 2).unwrap();
            let b = dbscan_cluster(&build_similarity_graph(&scaled).unwrap(), eps, 2).unwrap();
            assert_eq!(a, b);
            assert_eq!(select_honest_cluster(&a), select_honest_cluster(&b));
        }
    }

    proptest! {
        #[test]
        fn equal_times_remove_nobody(t in 0.001f64..1e6, n in 1usize..30, nu in 0.01f64..5.0) {
            let out = iqr_filter(&times(&vec![t; n]), nu).unwrap();
            prop_assert_eq!(out.kept.len(), n);
        }

        #[test]
        fn reliability_step_is_bounded(score in -100i64..100, which in 0usize..4, pen: bool) {
            let status = [RoundStatus::Completed, RoundStatus::MissedDeadline, RoundStatus::DroppedOut, RoundStatus::NotSelected][which];
            prop_assert!((update_reliability(score, status, pen) - score).abs() <= 1);
        }

        #[test]
        fn clusters_partition_inputs(seed in 0u64..1000, n in 2usize..16, eps in 0.01f64..1.5, min_pts in 1usize..4) {
            let mut rng = crate::seed::rng(seed);
            let ups = clustered_updates(&mut rng, n);
            let r = dbscan_cluster(&build_similarity_graph(&ups).unwrap(), eps, min_pts).unwrap();
            let mut all: Vec<ClientId> = r.clusters.iter().flatten().chain(&r.noise).copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..n as u32).map(ClientId).collect::<Vec<_>>());
            prop_assert!(r.clusters.iter().all(|c| !c.is_empty()));
            let honest = select_honest_cluster(&r).honest;
            prop_assert!(honest.iter().all(|id| (id.0 as usize) < n));
        }

        #[test]
        fn selection_is_subset_and_large_enough(scores in proptest::collection::vec(-12i64..15, 1..20), p in 1usize..8) {
            let cands: Vec<ClientId> = (0..scores.len() as u32).map(ClientId).collect();
            let mut s = SelectionState::new(
                cands.iter().zip(&scores).map(|(&i, &v)| (i, v)).collect(), -5, 10, 1.5, p, false).unwrap();
            let out = reliability_select(&cands, &mut s).unwrap();
            prop_assert!(out.selected.iter().all(|id| cands.contains(id)));
            prop_assert!(out.selected.len() >= p.min(cands.len()));
            prop_assert!(s.reliability.values().all(|&v| v < 10));
        }
    }
}
