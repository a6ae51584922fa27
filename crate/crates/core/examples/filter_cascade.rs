//! The three filters and selective aggregation on a hand-made round.

use std::collections::BTreeMap;

use uavfl::clients::RoundStatus;
use uavfl::defense::{
    aggregate, build_similarity_graph, compute_deadline, dbscan_cluster, iqr_filter, reliability_select,
    select_honest_cluster, SelectionState,
};
use uavfl::model::{init_model, WeightUpdate};
use uavfl::ClientId;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let times: BTreeMap<ClientId, f64> =
        [2.1, 2.4, 1.9, 2.8, 30.0, 2.2, 2.6, 3.1].iter().enumerate().map(|(i, &t)| (ClientId(i as u32), t)).collect();
    let iqr = iqr_filter(&times, 1.5)?;
    println!("IQR cutoff {:.2} s, removed {:?}", iqr.cutoff, iqr.removed);
    let kept: Vec<f64> = iqr.kept.iter().map(|id| times[id]).collect();
    println!("deadline {:.2} s", compute_deadline(&kept)?);

    let scores = iqr.kept.iter().map(|&id| (id, i64::from(id.0 % 4) * 4 - 7)).collect();
    let mut state = SelectionState::new(scores, -5, 10, 1.5, 5, false)?;
    let sel = reliability_select(&iqr.kept, &mut state)?;
    println!("reliability {:?}\nselected {:?} (topped up {:?})", state.reliability, sel.selected, sel.topped_up);

    let prev = init_model(&[3, 2], 4, 0)?;
    let v = prev.param_count();
    let updates: Vec<WeightUpdate> = sel
        .selected
        .iter()
        .map(|&id| {
            let sign = if id.0 == 3 { -1.0 } else { 1.0 };
            WeightUpdate {
                delta: (0..v).map(|k| sign * (1.0 + 0.05 * ((k + id.0 as usize) % 3) as f64)).collect(),
                owner_id: id,
                sample_count: 100 + 10 * id.0 as usize,
            }
        })
        .collect();
    let graph = build_similarity_graph(&updates)?;
    let clusters = dbscan_cluster(&graph, 0.02, 2)?;
    let honest = select_honest_cluster(&clusters);
    println!("clusters {:?}, noise {:?}, honest {:?}", clusters.clusters, clusters.noise, honest.honest);
    let kept: Vec<WeightUpdate> = updates.into_iter().filter(|u| honest.honest.contains(&u.owner_id)).collect();
    let next = aggregate(&prev, &kept)?;
    println!("first aggregated weight {:.4} -> {:.4}", prev.values()[0], next.values()[0]);

    state.record(sel.selected.iter().map(|&id| {
        (id, if honest.honest.contains(&id) { RoundStatus::Completed } else { RoundStatus::MissedDeadline })
    }));
    println!("reliability after the round {:?}", state.reliability);
    Ok(())
}
