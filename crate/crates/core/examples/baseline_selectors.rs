//! The comparison selectors and the K-means defense.

use std::collections::BTreeMap;

use uavfl::baselines::{
    capped_selection, kmeans_defense, random_selection, speed_based_selection, weight_divergence,
    weight_divergence_selection,
};
use uavfl::model::WeightUpdate;
use uavfl::ClientId;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pool: Vec<ClientId> = (0..10).map(ClientId).collect();
    println!("random      {:?}", random_selection(&pool, 4, 42));

    let times: BTreeMap<ClientId, f64> = pool.iter().map(|&id| (id, 10.0 - id.0 as f64 * 0.7)).collect();
    println!("speed-based {:?}", speed_based_selection(&times, 4));

    let prev = vec![1.0, -2.0, 0.5, 0.0];
    let mut divs = BTreeMap::new();
    for id in pool.iter().take(6) {
        let local: Vec<f64> = prev.iter().map(|w| w * (1.0 + 0.1 * id.0 as f64)).collect();
        divs.insert(*id, weight_divergence(&local, &prev)?.0);
    }
    println!("divergence  {:?} (unseen clients first)", weight_divergence_selection(&pool, &divs, 6));

    let counts: BTreeMap<ClientId, u32> = pool.iter().map(|&id| (id, if id.0 < 5 { 20 } else { 3 })).collect();
    println!("capped      {:?} (clients 0-4 hit the cap)", capped_selection(&counts, 4, 20, 42));

    let updates: Vec<WeightUpdate> = (0..8)
        .map(|i| WeightUpdate {
            delta: if i < 6 { vec![1.0, 0.9 + 0.02 * i as f64, 0.1] } else { vec![-1.0, 0.2, 3.0] },
            owner_id: ClientId(i),
            sample_count: 50,
        })
        .collect();
    println!("k-means honest {:?}", kmeans_defense(&updates, 2, 42)?.honest);
    Ok(())
}
