//! The three training losses on a generated sample, for a blurred and a
//! sharp prediction.
//!
//! ```text
//! cargo run --example losses
//! ```

use scribsal::blg::{BoundaryCode, BoundaryLabelMap};
use scribsal::losses::{total_loss, LossConfig, LossInputs};
use scribsal::raster::SaliencyMap;
use scribsal::synthetic::{synthetic_sample, Shape};

fn main() -> scribsal::Result<()> {
    let size = 64;
    let s = synthetic_sample(size, Shape::Disk, 2);
    // Boundary labels: ground-truth pixels with a differently-labeled 4-neighbour.
    let g = |x: usize, y: usize| s.gt.data[y * size + x] > 0.5;
    let codes = (0..size * size)
        .map(|i| {
            let (x, y) = (i % size, i / size);
            let edge = [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)]
                .iter()
                .any(|&(a, b)| a < size && b < size && g(a, b) != g(x, y));
            match (edge, g(x, y)) {
                (true, _) => BoundaryCode::Boundary,
                (false, true) => BoundaryCode::Foreground,
                (false, false) => BoundaryCode::Background,
            }
        })
        .collect();
    let labels = BoundaryLabelMap { width: size, height: size, codes, window: 13 };
    let edge_map = SaliencyMap::new(size, size, labels.codes.iter().map(|&c| if c == BoundaryCode::Boundary { 0.9 } else { 0.1 }).collect())?;
    let intensity = s.image.intensity();
    let cfg = LossConfig::default();

    let sharp = SaliencyMap::new(size, size, s.gt.data.iter().map(|&v| 0.05 + 0.9 * v).collect())?;
    let blurred = sharp.resize(size / 8, size / 8).resize(size, size);
    let flat = SaliencyMap::filled(size, size, 0.5);
    for (name, pred) in [("sharp", &sharp), ("blurred", &blurred), ("flat", &flat)] {
        let t = total_loss(
            &LossInputs { saliency: pred, boundary: Some((&edge_map, &labels)), scribble: &s.scribble, intensity: &intensity, gate: None, boundary_weights: None },
            &cfg,
        )?;
        let b = t.breakdown;
        println!("{name:<8} L_b {:>8.4}  L_gs {:>9.4}  L_pce {:>8.4}  L_total {:>9.4}", b.l_b, b.l_gs, b.l_pce, b.l_total);
    }
    Ok(())
}
