//! From class activation maps to boundary labels: double-threshold trimap,
//! then the sliding-window boundary test. Uses a hand-made activation map
//! so the effect of each threshold is easy to see.
//!
//! ```text
//! cargo run --example boundary_labels -- [out.png]
//! ```

use scribsal::autograd::Tensor;
use scribsal::blg::{boundary_from_trimap, cam_probabilities, trimap_from_cam, BoundaryCode, BoundaryConfig, TRIMAP_BACKGROUND, TRIMAP_UNCERTAIN};

fn main() -> scribsal::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("boundary.png").display().to_string());
    // A coarse 16x16 activation: a plateau on an off-centre disk with a
    // steep falloff.
    let cam = Tensor::from_fn([1, 1, 16, 16], |[_, _, y, x]| {
        let d = ((x as f64 - 6.0).powi(2) + (y as f64 - 8.0).powi(2)).sqrt();
        5.0 / (1.0 + (3.0 * (d - 4.0)).exp())
    });
    let p = cam_probabilities(&cam, 64, 64)?;
    let cfg = BoundaryConfig::default();
    let t = trimap_from_cam(&p, cfg.t_f, cfg.t_b, None)?;
    let count = |c: u8| t.codes.iter().filter(|&&v| v == c).count();
    println!(
        "trimap (T_f {}, T_b {}): foreground {}, background {}, uncertain {}",
        cfg.t_f,
        cfg.t_b,
        t.codes.iter().filter(|&&c| c != TRIMAP_BACKGROUND && c != TRIMAP_UNCERTAIN).count(),
        count(TRIMAP_BACKGROUND),
        count(TRIMAP_UNCERTAIN)
    );
    for k in [3, 7, 13, 21] {
        let b = boundary_from_trimap(&t, k, cfg.rho, cfg.tau)?;
        println!(
            "window {k:>2}: boundary {:>4}  foreground {:>4}  background {:>4}  ignore {:>4}",
            b.count(BoundaryCode::Boundary),
            b.count(BoundaryCode::Foreground),
            b.count(BoundaryCode::Background),
            b.count(BoundaryCode::Ignore)
        );
    }
    let b = boundary_from_trimap(&t, cfg.window, cfg.rho, cfg.tau)?;
    b.save(&out)?;
    println!("wrote {out}");
    Ok(())
}
