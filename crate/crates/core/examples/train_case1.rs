//! Trains the fixed-channel scenario (h1 = 1, h2 = 2, w = 10) for a short
//! budget and prints the loss trajectory.
//!
//! ```text
//! cargo run --release --example train_case1 -- [iterations] [seed]
//! ```

use std::time::Instant;

use ae_noma::training::{Preset, TrainingConfig, Trainer};

fn main() -> ae_noma::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: u64 = args.next().map_or(2000, |s| s.parse().expect("iterations"));
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));

    let config = TrainingConfig {
        iterations,
        seed,
        ..Preset::Case1.config()
    };
    let mut trainer = Trainer::new(config)?;
    let start = Instant::now();
    let report_every = (iterations / 10).max(1);
    let mut window = Vec::new();
    while trainer.iteration() < iterations {
        let loss = trainer.step()?;
        window.push(loss);
        if trainer.iteration() % report_every == 0 {
            let n = window.len() as f64;
            let l1 = window.iter().map(|l| l.loss1).sum::<f64>() / n;
            let l2 = window.iter().map(|l| l.loss2).sum::<f64>() / n;
            println!(
                "iter {:>7}  L1 {:.4}  L2 {:.4}  ({:.2} ms/step)",
                trainer.iteration(),
                l1,
                l2,
                start.elapsed().as_secs_f64() * 1e3 / trainer.iteration() as f64
            );
            window.clear();
        }
    }
    let codebook = trainer.system().tx.build_codebook()?;
    for e in &codebook.entries {
        println!(
            "{:?} {:?} -> {:+.4} {:+.4}i",
            e.pair.bits1(),
            e.pair.bits2(),
            e.symbol.re,
            e.symbol.im
        );
    }
    Ok(())
}
