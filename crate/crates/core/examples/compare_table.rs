//! Side-by-side worse-user BER of a short-trained system, the QPSK-NOMA and
//! 16-QAM closed forms, and published reference values.
//!
//! ```text
//! cargo run --release --example compare_table -- [iterations]
//! ```

use ae_noma::eval::{compare_with_baselines, BerOptions, CompareConfig, EvalChannel};
use ae_noma::training::{train, Preset, TrainingConfig};

fn main() -> ae_noma::Result<()> {
    let iterations: u64 = std::env::args()
        .nth(1)
        .map_or(2000, |s| s.parse().expect("iterations"));
    let system = train(TrainingConfig {
        iterations,
        seed: 1,
        ..Preset::Case1.config()
    })?
    .system;
    let cfg = CompareConfig {
        ber: BerOptions {
            min_error_events: 100,
            max_symbols: 1_000_000,
        },
        ..CompareConfig::default()
    };
    let table = compare_with_baselines(&system, &EvalChannel::new(1.0, 2.0)?, &cfg)?;
    for r in &table.rows {
        println!("{:<40} {:>5} dB  {:.2e}  {}", r.method, r.snr1_db, r.worse_ber, r.source.tag());
    }
    Ok(())
}
