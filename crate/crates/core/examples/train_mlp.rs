//! Local SGD on one shard, evaluation, and a checkpoint round trip.

use uavfl::data::{generate_synthetic_dataset, split_train_test};
use uavfl::model::{evaluate, init_model, load_checkpoint, local_update, apply_update, save_checkpoint, TrainConfig};
use uavfl::ClientId;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let full = generate_synthetic_dataset(5, 120, 12, 3.0, 7)?;
    let (train, test) = split_train_test(&full, 0.8, 7)?;
    let global = init_model(&[12, 32, 5], 4, 7)?;
    println!("{} parameters, initial accuracy {:.3}", global.param_count(), evaluate(&global, &test)?.global_accuracy);

    let cfg = TrainConfig { epochs: 5, batch_size: 16, lr: 0.1 };
    let shard: Vec<usize> = (0..train.len()).collect();
    let update = local_update(&global, &train.shard(&shard), ClientId(0), &cfg, 11)?;
    let trained = apply_update(&global, &update.delta)?;
    let report = evaluate(&trained, &test)?;
    println!("after {} epochs: accuracy {:.3}, loss {:.4}", cfg.epochs, report.global_accuracy, report.mean_loss);
    println!("per-class accuracy {:?}", report.per_class_accuracy);

    let path = std::env::temp_dir().join("uavfl-example.ckpt");
    save_checkpoint(&trained, &path)?;
    assert_eq!(load_checkpoint(&path)?, trained);
    println!("checkpoint written to {}", path.display());
    Ok(())
}
