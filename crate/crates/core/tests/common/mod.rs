//! Independent oracles shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::Array2;
use rand::Rng;
use uavfl::defense::{
    aggregate, build_similarity_graph, dbscan_cluster, iqr_filter, select_honest_cluster, SimilarityGraph,
};
use uavfl::model::{init_model, loss, loss_and_gradient, WeightUpdate};
use uavfl::orchestrator::ExperimentConfig;
use uavfl::seed::rng;
use uavfl::ClientId;

pub fn configs_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

pub fn scenario(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_file(configs_dir().join(name)).expect("scenario config loads")
}

/// Small synthetic setup that trains in well under a second.
pub fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.apply_overrides(&[
        "data.source=synthetic",
        "data.synthetic_classes=4",
        "data.synthetic_per_class=40",
        "data.synthetic_dim=6",
        "data.k_percent=50",
        "model.hidden=[8]",
        "model.epochs=3",
        "model.batch_size=8",
        "model.lr=0.2",
        "fleet.clients=8",
        "run.rounds=3",
        "run.log_objective=false",
        "selection.eps=0.9",
    ])
    .expect("tiny overrides are valid");
    c
}

fn sorted_quantile(v: &[f64], p: f64) -> f64 {
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// IQR filter against a sort-based quantile oracle.
pub fn check_iqr(cases: usize) -> Result<String, String> {
    let mut r = rng(101);
    for case in 0..cases {
        let n = r.random_range(1..=30);
        let times: Vec<f64> = (0..n).map(|_| r.random_range(0.1..5.0f64).exp()).collect();
        let nu = r.random_range(0.2..3.0);
        let mut sorted = times.clone();
        sorted.sort_by(f64::total_cmp);
        let (q1, q3) = (sorted_quantile(&sorted, 0.25), sorted_quantile(&sorted, 0.75));
        let cutoff = q3 + nu * (q3 - q1);
        let expect: Vec<ClientId> =
            (0..n).filter(|&i| times[i] <= cutoff).map(|i| ClientId(i as u32)).collect();
        let map: BTreeMap<ClientId, f64> = times.iter().enumerate().map(|(i, &t)| (ClientId(i as u32), t)).collect();
        let got = iqr_filter(&map, nu).map_err(|e| e.to_string())?;
        if got.kept != expect || (got.cutoff - cutoff).abs() > 1e-9 * cutoff {
            return Err(format!("case {case}: kept {:?} expected {:?}", got.kept, expect));
        }
    }
    Ok(format!("{cases} random inputs agree"))
}

/// Density-connected components of core points; border points join the
/// lowest-indexed reachable component.
fn brute_dbscan(d: &[Vec<f64>], eps: f64, min_pts: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let n = d.len();
    let core: Vec<bool> = (0..n).map(|i| d[i].iter().filter(|&&x| x <= eps).count() >= min_pts).collect();
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for s in 0..n {
        if !core[s] || label[s].is_some() {
            continue;
        }
        let mut stack = vec![s];
        label[s] = Some(next);
        while let Some(p) = stack.pop() {
            for q in 0..n {
                if core[q] && label[q].is_none() && d[p][q] <= eps {
                    label[q] = Some(next);
                    stack.push(q);
                }
            }
        }
        next += 1;
    }
    let mut groups = vec![Vec::new(); next];
    let mut noise = Vec::new();
    for p in 0..n {
        let home = if core[p] {
            label[p]
        } else {
            (0..n).filter(|&q| core[q] && d[p][q] <= eps).filter_map(|q| label[q]).min()
        };
        match home {
            Some(c) => groups[c].push(p),
            None => noise.push(p),
        }
    }
    groups.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    (groups, noise)
}

pub fn check_dbscan(instances: usize) -> Result<String, String> {
    let mut r = rng(202);
    let mut nontrivial = 0;
    for case in 0..instances {
        let n = r.random_range(1..=20);
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0)]).collect();
        let kappa: Vec<f64> = (0..n * n)
            .map(|k| {
                let (a, b) = (pts[k / n], pts[k % n]);
                if k / n == k % n {
                    1.0
                } else {
                    1.0 - ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
                }
            })
            .collect();
        let ids: Vec<ClientId> = (0..n as u32).map(ClientId).collect();
        let g = SimilarityGraph::from_kappa(ids, kappa).map_err(|e| e.to_string())?;
        let d: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| g.distance(i, j)).collect()).collect();
        let eps = r.random_range(0.05..0.35);
        let min_pts = r.random_range(1..=4);
        let got = dbscan_cluster(&g, eps, min_pts).map_err(|e| e.to_string())?;
        let (clusters, noise) = brute_dbscan(&d, eps, min_pts);
        let ids = |v: &[usize]| v.iter().map(|&i| ClientId(i as u32)).collect::<Vec<_>>();
        let want: Vec<Vec<ClientId>> = clusters.iter().map(|c| ids(c)).collect();
        if got.clusters != want || got.noise != ids(&noise) {
            return Err(format!("instance {case}: got {:?}/{:?}, oracle {want:?}/{noise:?}", got.clusters, got.noise));
        }
        nontrivial += usize::from(want.len() > 1);
    }
    Ok(format!("{instances} instances agree exactly ({nontrivial} with several clusters)"))
}

pub fn check_aggregation(rounds: usize) -> Result<String, String> {
    let mut r = rng(303);
    let prev = init_model(&[5, 4, 3], 4, 7).map_err(|e| e.to_string())?;
    let v = prev.param_count();
    let mut worst = 0.0f64;
    for _ in 0..rounds {
        let k = r.random_range(1..=10);
        let ups: Vec<WeightUpdate> = (0..k)
            .map(|i| WeightUpdate {
                delta: (0..v).map(|_| r.random_range(-2.0..2.0)).collect(),
                owner_id: ClientId(i),
                sample_count: r.random_range(1..=1300),
            })
            .collect();
        let out = aggregate(&prev, &ups).map_err(|e| e.to_string())?;
        let total: usize = ups.iter().map(|u| u.sample_count).sum();
        for c in 0..v {
            let want = prev.values()[c]
                + ups.iter().map(|u| u.sample_count as f64 * u.delta[c]).sum::<f64>() / total as f64;
            worst = worst.max((out.values()[c] - want).abs());
        }
    }
    if worst <= 1e-12 {
        Ok(format!("{rounds} rounds, max abs error {worst:.1e}"))
    } else {
        Err(format!("max abs error {worst:.3e} exceeds 1e-12"))
    }
}

/// Central differences against the analytic gradient of a model with at most 200 parameters.
pub fn check_gradient() -> Result<String, String> {
    let mut r = rng(404);
    let mut worst = 0.0f64;
    let mut params_seen = 0;
    for widths in [vec![6, 4], vec![6, 8, 5], vec![5, 6, 4, 3]] {
        let model = init_model(&widths, 4, r.random_range(0..1000)).map_err(|e| e.to_string())?;
        let mut values = model.values().to_vec();
        for v in values.iter_mut() {
            *v += r.random_range(-0.3..0.3);
        }
        let model = uavfl::model::apply_update(
            &model,
            &values.iter().zip(model.values()).map(|(a, b)| a - b).collect::<Vec<_>>(),
        )
        .map_err(|e| e.to_string())?;
        params_seen = params_seen.max(model.param_count());
        let n = 7;
        let x = Array2::from_shape_fn((n, widths[0]), |_| r.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..*widths.last().unwrap())).collect();
        let (_, grad) = loss_and_gradient(&model, x.view(), &labels);
        let h = 1e-5;
        let mut num = vec![0.0; grad.len()];
        let mut probe = model.values().to_vec();
        for i in 0..probe.len() {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = loss(&model, &probe, x.view(), &labels);
            probe[i] = orig - h;
            let down = loss(&model, &probe, x.view(), &labels);
            probe[i] = orig;
            num[i] = (up - down) / (2.0 * h);
        }
        let diff: f64 = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = grad.iter().zip(&num).map(|(a, b)| (a + b).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(diff / scale.max(1e-12));
    }
    if params_seen > 200 {
        return Err(format!("probe model too large ({params_seen} parameters)"));
    }
    if worst <= 1e-4 {
        Ok(format!("max relative error {worst:.2e} (up to {params_seen} parameters)"))
    } else {
        Err(format!("relative error {worst:.3e} exceeds 1e-4"))
    }
}

/// Clustering and honest set unchanged under a common positive rescaling.
pub fn check_scale_invariance(rounds: usize) -> Result<String, String> {
    let mut r = rng(505);
    for round in 0..rounds {
        let dim = r.random_range(3..12);
        let n = r.random_range(2..12);
        let centers: Vec<Vec<f64>> = (0..3).map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let ups: Vec<WeightUpdate> = (0..n)
            .map(|i| {
                let c = &centers[r.random_range(0..3)];
                WeightUpdate {
                    delta: c.iter().map(|x| x + r.random_range(-0.2..0.2)).collect(),
                    owner_id: ClientId(i),
                    sample_count: 10,
                }
            })
            .collect();
        let scale = 10f64.powf(r.random_range(-4.0..4.0));
        let scaled: Vec<WeightUpdate> = ups
            .iter()
            .map(|u| WeightUpdate { delta: u.delta.iter().map(|d| d * scale).collect(), ..u.clone() })
            .collect();
        let eps = r.random_range(0.01..0.5);
        let a = dbscan_cluster(&build_similarity_graph(&ups).map_err(|e| e.to_string())?, eps, 2)
            .map_err(|e| e.to_string())?;
        let b = dbscan_cluster(&build_similarity_graph(&scaled).map_err(|e| e.to_string())?, eps, 2)
            .map_err(|e| e.to_string())?;
        if a != b || select_honest_cluster(&a) != select_honest_cluster(&b) {
            return Err(format!("round {round}: clustering changed under scale {scale:e}"));
        }
    }
    Ok(format!("{rounds} random rounds unchanged"))
}
