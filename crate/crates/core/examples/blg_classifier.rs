//! Trains the tag classifier on generated squares and disks, then shows
//! the attention-pooled scores and the labels derived from its activations.
//!
//! ```text
//! cargo run --release --example blg_classifier -- [steps]
//! ```

use std::collections::BTreeSet;

use scribsal::autograd::{sigmoid, AdamConfig};
use scribsal::blg::{attention_pool, boundary_for_image, tag_accuracy, train_on_images, BlgTrainConfig, BoundaryCode, BoundaryConfig, ClassifierSpec, TaggedImage};
use scribsal::raster::Normalization;
use scribsal::synthetic::{synthetic_sample, Shape};

fn main() -> scribsal::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(120);
    let size = 64;
    let data: Vec<TaggedImage> = (0..8)
        .map(|i| {
            let shape = Shape::ALL[i % 2];
            TaggedImage { image: synthetic_sample(size, shape, i as u64).image, tags: BTreeSet::from([shape.index()]) }
        })
        .collect();
    let spec = ClassifierSpec::tiny(2, size);
    let cfg = BlgTrainConfig { steps, batch_size: 4, optimizer: AdamConfig { lr: 3e-3, ..AdamConfig::default() }, ..BlgTrainConfig::default() };
    let norm = Normalization::default();
    let trained = train_on_images(&data, &spec, &cfg, &norm, |step, loss| {
        if step % 20 == 0 {
            println!("step {step:>4}  loss {loss:.4}");
        }
    })?;
    println!("tag accuracy {:.3}", tag_accuracy(&trained.classifier, &trained.store, &data, &norm)?);

    let img = &data[0].image;
    let maps = trained.classifier.maps(&trained.store, &img.to_tensor(&norm))?;
    let pool = attention_pool(&maps);
    for (shape, s) in Shape::ALL.iter().zip(&pool.scores[0]) {
        println!("{:>6}: score {s:+.3}  p {:.3}", shape.name(), sigmoid(*s));
    }
    let (_, b) = boundary_for_image(&trained.classifier, &trained.store, img, Some(&data[0].tags), &BoundaryConfig::default(), &norm)?;
    println!("boundary pixels on image 0: {}", b.count(BoundaryCode::Boundary));
    Ok(())
}
