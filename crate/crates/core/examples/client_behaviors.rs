//! Honest, straggling, dropping and malicious clients over one round.

use uavfl::channel::{ChannelParams, ComputeProfile, UavGeometry};
use uavfl::clients::{simulate_client_round, BehaviorProfile, RoundContext, UavClient};
use uavfl::data::generate_synthetic_dataset;
use uavfl::model::{init_model, TrainConfig};
use uavfl::ClientId;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let train = generate_synthetic_dataset(6, 60, 8, 3.0, 3)?;
    let global = init_model(&[8, 16, 6], 4, 3)?;
    let hyper = TrainConfig { epochs: 2, batch_size: 16, lr: 0.1 };
    let channel = ChannelParams::default();
    let profiles = [
        (BehaviorProfile::Honest, 5e7),
        (BehaviorProfile::Straggler, 2e5),
        (BehaviorProfile::Dropout { dropout_prob: 1.0 }, 5e7),
        (BehaviorProfile::MaliciousTargeted { flip_src: 5, flip_dst: 3 }, 5e7),
        (BehaviorProfile::MaliciousUntargeted { noise_sigma: 1.0 }, 5e7),
    ];
    let ctx = RoundContext {
        train_set: &train,
        global: &global,
        deadline_s: Some(1.0),
        hyper: &hyper,
        channel: &channel,
        bandwidth_hz: 2e6,
        master_seed: 3,
        round: 1,
    };
    for (i, (profile, gamma)) in profiles.into_iter().enumerate() {
        let block = if i == 3 { 5 } else { i };
        let client = UavClient {
            id: ClientId(i as u32),
            shard: (block * 60..(block + 1) * 60).collect(),
            compute: ComputeProfile { gamma, kappa: 7e4 },
            geometry: UavGeometry { distance_m: 400.0, elevation_deg: 60.0 },
            profile,
            reliability: 0,
            participation_count: 0,
        };
        let effective = client.effective_shard(&train)?.class_counts();
        let out = simulate_client_round(&client, &ctx);
        let norm = out.update.as_ref().map(|u| u.delta.iter().map(|d| d * d).sum::<f64>().sqrt());
        println!(
            "{:<22} {:?} elapsed {:.3} s, |delta| {:?}, labels {:?}",
            client.profile.label(),
            out.status,
            out.elapsed_s,
            norm.map(|n| (n * 1e3).round() / 1e3),
            effective
        );
    }
    Ok(())
}
