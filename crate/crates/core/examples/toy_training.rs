//! Train a spatial head on synthetic class-clustered tensors and compare
//! held-out FPR@95 before and after.
//!
//!     cargo run --release --example toy_training [trace.csv]

use emk::learning::{
    initial_head, synthetic_dataset, train_head_toy, verification_fpr95, verification_pairs, write_trace_csv,
    SyntheticSpec, TrainConfig,
};

fn main() -> emk::Result<()> {
    let spec = SyntheticSpec::default();
    let train = synthetic_dataset(&spec, 7, 100)?;
    let held_out = synthetic_dataset(&spec, 7, 200)?;
    let pairs = verification_pairs(&held_out, 5, 300);

    let config = TrainConfig::default();
    let (init, tables) = initial_head(&config, spec.n, spec.d)?;
    let before = verification_fpr95(&init, &tables, &held_out, &pairs)?;

    let outcome = train_head_toy(&train, &config)?;
    let after = verification_fpr95(&outcome.head, &outcome.tables, &held_out, &pairs)?;

    for (epoch, loss) in outcome.epoch_losses().iter().enumerate() {
        println!("epoch {epoch:2}  mean loss {loss:.4}");
    }
    println!("held-out FPR@95: {before:.4} at init, {after:.4} after training");

    if let Some(path) = std::env::args().nth(1) {
        write_trace_csv(std::fs::File::create(&path)?, &outcome.trace)?;
        println!("trace written to {path}");
    }
    Ok(())
}
