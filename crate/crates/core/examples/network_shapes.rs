//! Builds the saliency network and prints every intermediate shape and the
//! parameter count of each ablation row.
//!
//! ```text
//! cargo run --release --example network_shapes -- [size] [default|slim|tiny]
//! ```

use scribsal::autograd::Graph;
use scribsal::network::{Ablation, CannyConfig, NetInput, NetworkConfig, SbaNet};
use scribsal::raster::Normalization;
use scribsal::synthetic::{synthetic_sample, Shape};

fn main() -> scribsal::Result<()> {
    let mut args = std::env::args().skip(1);
    let size: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(128);
    let cfg = match args.next().as_deref() {
        Some("default") => NetworkConfig::default(),
        Some("tiny") => NetworkConfig::tiny(),
        _ => NetworkConfig::slim(),
    };
    let (net, store) = SbaNet::build(&cfg, 0)?;
    let img = synthetic_sample(size, Shape::Square, 0).image;
    let input = NetInput::from_images(&[img], &Normalization::default(), &CannyConfig::default())?;
    let mut g = Graph::new(&store, false);
    let out = net.forward(&mut g, &input)?;
    for (i, f) in out.pyramid.f.iter().enumerate() {
        println!("F{}        {:?}", i + 1, g.shape(*f));
    }
    if let Some(v) = out.initial {
        println!("initial   {:?}", g.shape(v));
    }
    if let Some(v) = out.boundary {
        println!("boundary  {:?}", g.shape(v));
    }
    println!("saliency  {:?}", g.shape(out.saliency));
    println!();
    for (name, ab) in Ablation::lattice() {
        let (_, s) = SbaNet::build(&cfg.clone().with_ablation(ab), 0)?;
        println!("{name:<16} {:>10} parameters", s.num_params());
    }
    Ok(())
}
