//! Load the bundled MNIST subset and compare the two non-IID partitions.

use uavfl::data::{load_idx_dataset, partition_distribution1, partition_distribution2, split_train_test};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data");
    let full = load_idx_dataset(
        format!("{root}/mnist5k-images-idx3-ubyte.gz"),
        format!("{root}/mnist5k-labels-idx1-ubyte.gz"),
    )?;
    let (train, test) = split_train_test(&full, 0.8, 1)?;
    println!("{} train / {} test samples, {} features", train.len(), test.len(), train.dim());

    let d1 = partition_distribution1(&train, 10, 80.0, 1300, 1)?;
    let d2 = partition_distribution2(&train, 10, 2, 1)?;
    for (name, p) in [("distribution 1, k=80", &d1), ("distribution 2, N_c=2", &d2)] {
        println!("\n{name}");
        for (c, shard) in p.client_shards.iter().enumerate() {
            let counts = train.shard(shard).class_counts();
            println!("  client {c:2} n={:4} {:?}", shard.len(), counts);
        }
    }
    Ok(())
}
