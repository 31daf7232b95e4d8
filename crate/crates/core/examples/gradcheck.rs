//! Checks backpropagation through the whole transmitter / two-receiver
//! system against central finite differences.
//!
//! ```text
//! cargo run --release --example gradcheck -- [seed]
//! ```

use ae_noma::training::{gradient_check, Preset, TrainingConfig};

fn main() -> ae_noma::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let config = TrainingConfig {
        seed,
        ..Preset::Case1.config()
    };
    let r = gradient_check(&config)?;
    println!("parameters          {}", r.num_params);
    println!("max relative error  {:e}", r.max_relative_error);
    println!("max absolute error  {:e}", r.max_absolute_error);
    println!("worst parameter     {}", r.worst_index);
    Ok(())
}
