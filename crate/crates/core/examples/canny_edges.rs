//! Canny edge map of a generated image, as fed to the edge branch.
//!
//! ```text
//! cargo run --example canny_edges -- [out.png]
//! ```

use scribsal::network::{canny_edges, CannyConfig};
use scribsal::raster::SaliencyMap;
use scribsal::synthetic::{synthetic_sample, Shape};

fn main() -> scribsal::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("edges.png").display().to_string());
    let sample = synthetic_sample(96, Shape::Disk, 4);
    for cfg in [CannyConfig::default(), CannyConfig { sigma: 0.0, ..CannyConfig::default() }, CannyConfig { low: 1.0, high: 2.0, ..CannyConfig::default() }] {
        let e = canny_edges(&sample.image, cfg.low, cfg.high, cfg.sigma)?;
        println!("sigma {:.1} low {:.2} high {:.2}: {} edge pixels", cfg.sigma, cfg.low, cfg.high, e.iter().filter(|&&v| v > 0.0).count());
    }
    let d = CannyConfig::default();
    let e = canny_edges(&sample.image, d.low, d.high, d.sigma)?;
    SaliencyMap::new(96, 96, e)?.save(&out)?;
    println!("wrote {out}");
    Ok(())
}
