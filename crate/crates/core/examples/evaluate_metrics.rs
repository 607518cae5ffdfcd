//! Scores prediction folders against ground truth and writes the report,
//! the curve tables and a per-image summary.
//!
//! ```text
//! cargo run --release --example evaluate_metrics -- [pred_dir gt_dir out_dir]
//! ```
//!
//! Without arguments, a small set of generated maps is scored.

use std::path::PathBuf;

use scribsal::pipeline::{evaluate, export_curves};
use scribsal::raster::SaliencyMap;
use scribsal::synthetic::{synthetic_sample, Shape};

fn main() -> scribsal::Result<()> {
    let args: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    let (pred, gt, out) = if let [p, g, o] = args.as_slice() {
        (p.clone(), g.clone(), o.clone())
    } else {
        let root = std::env::temp_dir().join("scribsal-eval");
        let (p, g) = (root.join("pred"), root.join("gt"));
        for d in [&p, &g] {
            std::fs::create_dir_all(d).map_err(|e| scribsal::Error::io(d, e))?;
        }
        for i in 0..4 {
            let s = synthetic_sample(64, Shape::ALL[i % 2], i as u64);
            s.gt.save(g.join(format!("{i}.png")))?;
            // Softened, shifted copies of the ground truth.
            let soft: Vec<f64> = (0..64 * 64).map(|j| s.gt.data[(j + 64 * i) % (64 * 64)] * 0.8 + 0.1).collect();
            SaliencyMap::new(64, 64, soft)?.resize(16, 16).resize(64, 64).save(p.join(format!("{i}.png")))?;
        }
        (p, g, root.join("report"))
    };
    let report = evaluate(&pred, &gt, &out.join("report.json"))?;
    for m in &report.images {
        println!("{:<12} S {:.3}  E_max {:.3}  F_max {:.3}  MAE {:.4}", m.id, m.s_measure, m.e_max, m.f_max, m.mae);
    }
    let s = report.summary;
    println!("mean         S {:.3}  E_avg {:.3}  E_max {:.3}  F_avg {:.3}  F_max {:.3}  MAE {:.4}", s.s_measure, s.e_avg, s.e_max, s.f_avg, s.f_max, s.mae);
    let (pr, f) = export_curves(&report, &out)?;
    println!("wrote {}, {} and {}", out.join("report.json").display(), pr.display(), f.display());
    Ok(())
}
