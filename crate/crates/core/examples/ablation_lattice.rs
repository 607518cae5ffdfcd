//! Trains each row of the component study for a few steps on generated
//! data and reports parameter counts, config hashes and losses.
//!
//! ```text
//! cargo run --release --example ablation_lattice -- [steps]
//! ```

use scribsal::blg::{BoundaryCode, BoundaryLabelMap};
use scribsal::network::{Ablation, NetworkConfig};
use scribsal::pipeline::{train_samples, TrainConfig, TrainOptions, TrainSample};
use scribsal::synthetic::{synthetic_sample, Shape};

fn main() -> scribsal::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let size = 32;
    let data: Vec<TrainSample> = (0..4)
        .map(|i| {
            let s = synthetic_sample(size, Shape::ALL[i % 2], i as u64);
            let codes = s.gt.data.iter().map(|&g| if g > 0.5 { BoundaryCode::Foreground } else { BoundaryCode::Background }).collect();
            TrainSample {
                id: format!("s{i}"),
                image: s.image,
                scribble: s.scribble,
                boundary: Some(BoundaryLabelMap { width: size, height: size, codes, window: 13 }),
            }
        })
        .collect();
    for (name, ab) in Ablation::lattice() {
        let mut cfg = TrainConfig::demo(size);
        cfg.network = NetworkConfig::tiny().with_ablation(ab);
        cfg.max_steps = Some(steps);
        let out = train_samples(&data, &cfg, TrainOptions::default(), |_, _| {})?;
        let (first, last) = (out.steps[0], out.steps[out.steps.len() - 1]);
        println!(
            "{name:<16} params {:>6}  hash {}  L_total {:.3} -> {:.3}",
            out.store.num_params(),
            &cfg.hash()[..10],
            first.l_total,
            last.l_total
        );
    }
    Ok(())
}
