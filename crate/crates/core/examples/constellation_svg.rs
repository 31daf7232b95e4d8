//! Trains a short run, prints the codebook geometry and writes an SVG
//! scatter of the super-constellation with noisy samples received by the
//! weak user.
//!
//! ```text
//! cargo run --release --example constellation_svg -- [iterations] [out.svg]
//! ```

use ae_noma::channel::User;
use ae_noma::eval::{noisy_overlay, render_constellation_svg, ConstellationReport, EvalChannel};
use ae_noma::training::{train, Preset, TrainingConfig};

fn main() -> ae_noma::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: u64 = args.next().map_or(2000, |s| s.parse().expect("iterations"));
    let out = args.next().unwrap_or_else(|| "constellation.svg".into());

    let system = train(TrainingConfig {
        iterations,
        seed: 3,
        ..Preset::Case1.config()
    })?
    .system;
    let codebook = system.tx.build_codebook()?;
    let report = ConstellationReport::from_codebook(&codebook);
    println!("mean power            {:.12}", report.mean_power);
    println!("min pairwise distance {:.4}", report.min_pairwise_distance);
    for g in &report.groups {
        println!(
            "user {:?} bits {:?}: centroid {:+.3}{:+.3}i spread {:.3}",
            g.user, g.bits, g.centroid.re, g.centroid.im, g.spread
        );
    }

    let overlay = noisy_overlay(&codebook, &EvalChannel::new(1.0, 2.0)?, User::Weak, 12.0, 2000, 1)?;
    std::fs::write(&out, render_constellation_svg(&report, Some(&overlay)))?;
    println!("wrote {out}");
    Ok(())
}
