//! Scribble masks: draw strokes, write and read the palette PNG, measure
//! annotation density and print the manifest record for the sample.
//!
//! ```text
//! cargo run --example scribble_masks -- [outdir]
//! ```

use std::path::PathBuf;

use scribsal::dataset::{decode_scribble_mask, density_of, encode_scribble_mask, SampleEntry, ScribbleLabel, ScribbleMask, Split};

fn main() -> scribsal::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let (w, h) = (48, 32);
    let mut mask = ScribbleMask::unlabeled(w, h);
    for x in 16..32 {
        mask.set(x, 16, ScribbleLabel::Foreground);
    }
    for y in 2..30 {
        mask.set(3, y, ScribbleLabel::Background);
        mask.set(44, y, ScribbleLabel::Background);
    }
    println!(
        "foreground {} px, background {} px, labeled fraction {:.4}",
        mask.count(ScribbleLabel::Foreground),
        mask.count(ScribbleLabel::Background),
        mask.labeled_fraction()
    );
    for label in [ScribbleLabel::Unlabeled, ScribbleLabel::Foreground, ScribbleLabel::Background] {
        println!("{label:?} is drawn as RGB {:?}", label.color());
    }

    let bytes = encode_scribble_mask(&mask);
    let back = decode_scribble_mask(&bytes)?;
    assert_eq!(back, mask);
    let path = dir.join("example_scribble.png");
    mask.save(&path)?;
    println!("wrote {} ({} bytes)", path.display(), bytes.len());

    let empty = ScribbleMask::unlabeled(w, h);
    println!("density over two masks: {:.4}", density_of(&[mask, empty])?);

    let entry = SampleEntry {
        id: "example".into(),
        image: "images/example.jpg".into(),
        scribble: Some("scribbles/example.png".into()),
        tags: Some(vec!["ship".into()]),
        split: Split::Train,
    };
    println!("manifest record:\n{}", serde_json::to_string_pretty(&entry).expect("serialises"));
    Ok(())
}
