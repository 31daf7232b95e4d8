//! Trains a short fixed-channel run and measures both users' BER over
//! SNR1, once with the neural decoders and once with minimum-distance
//! detection on the learned codebook, on identical noise.
//!
//! ```text
//! cargo run --release --example ber_sweep -- [iterations] [seed]
//! ```

use ae_noma::eval::{measure_ber_with, BerOptions, EvalChannel, MlDetector, NeuralDetector};
use ae_noma::training::{train, Preset, TrainingConfig};

fn main() -> ae_noma::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: u64 = args.next().map_or(2000, |s| s.parse().expect("iterations"));
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));

    let system = train(TrainingConfig {
        iterations,
        seed,
        ..Preset::Case1.config()
    })?
    .system;
    let codebook = system.tx.build_codebook()?;
    let channel = EvalChannel::new(1.0, 2.0)?;
    let grid: Vec<f64> = (0..=20).step_by(2).map(f64::from).collect();
    let opts = BerOptions {
        min_error_events: 100,
        max_symbols: 1_000_000,
    };
    let neural = measure_ber_with(&NeuralDetector(&system), &codebook, &channel, &grid, &opts, 7)?;
    let ml = measure_ber_with(&MlDetector(&codebook), &codebook, &channel, &grid, &opts, 7)?;

    println!("snr1  ber1(nn)   ber2(nn)   ber1(ml)   ber2(ml)   symbols");
    for (n, m) in neural.iter().zip(&ml) {
        println!(
            "{:>4}  {:.3e}  {:.3e}  {:.3e}  {:.3e}  {}",
            n.snr1_db, n.ber1, n.ber2, m.ber1, m.ber2, n.n_symbols
        );
    }
    Ok(())
}
