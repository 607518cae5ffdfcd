//! Saves a model with optimizer state, reloads it, and initialises a
//! different ablation row from it with partial loading.
//!
//! ```text
//! cargo run --example checkpoints -- [dir]
//! ```

use std::path::PathBuf;

use scribsal::autograd::Adam;
use scribsal::network::{Ablation, NetworkConfig, SbaNet};
use scribsal::pipeline::{load_into, Checkpoint, CheckpointKind, TrainConfig};

fn main() -> scribsal::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let mut cfg = TrainConfig::demo(64);
    cfg.network = NetworkConfig::tiny();
    let (_, store) = SbaNet::build(&cfg.network, cfg.seed)?;
    let ckpt = Checkpoint::new(CheckpointKind::Saliency, &cfg, cfg.hash(), store).with_optimizer(&Adam::new(cfg.optimizer));
    let path = dir.join("example.safetensors");
    ckpt.save(&path)?;
    let back = Checkpoint::load(&path)?;
    println!("{}: {} tensors, config hash {}", path.display(), back.store.params().len(), &back.meta.config_hash[..12]);
    assert_eq!(back.to_bytes(), ckpt.to_bytes());
    let restored: TrainConfig = back.config()?;
    println!("stored input size {}, lr {}", restored.input_size, restored.optimizer.lr);

    let smaller = NetworkConfig::tiny().with_ablation(Ablation::lattice()[2].1);
    let (_, mut target) = SbaNet::build(&smaller, 1)?;
    let r = load_into(&mut target, &back.store, false)?;
    println!("partial load: {} loaded, {} missing, {} unexpected", r.loaded.len(), r.missing.len(), r.unexpected.len());
    match load_into(&mut target, &back.store, true) {
        Ok(_) => println!("strict load succeeded"),
        Err(e) => println!("strict load refused: {e}"),
    }
    Ok(())
}
