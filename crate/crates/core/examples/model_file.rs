//! Saves a trained system as a model file, loads it back and checks that
//! the reloaded copy measures the same BER curve bit for bit.
//!
//! ```text
//! cargo run --release --example model_file -- [path]
//! ```

use ae_noma::cli::{evaluate_model, DetectorKind, ModelFile, RunConfig, MODEL_SCHEMA_VERSION};
use ae_noma::training::{train, Preset};

fn main() -> ae_noma::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "model.json".into());
    let mut run = RunConfig::from_preset(Preset::Case1).expand()?;
    if let Some(t) = run.training.as_mut() {
        t.iterations = 500;
        t.seed = 5;
    }
    run.eval.snr_grid = vec![4.0, 8.0, 12.0];
    run.eval.ber.max_symbols = 200_000;
    let ck = train(run.training()?.clone())?;
    let file = ModelFile {
        schema_version: MODEL_SCHEMA_VERSION,
        config: run.clone(),
        final_iteration: ck.iteration,
        seed: 5,
        system: ck.system,
    };
    let before = evaluate_model(&file, &run, DetectorKind::Neural)?;
    file.save(path.as_ref())?;
    let loaded = ModelFile::load(path.as_ref())?;
    let after = evaluate_model(&loaded, &loaded.config, DetectorKind::Neural)?;
    println!("wrote {path}; reload identical: {}", before == after);
    for p in &after {
        println!("{:>4} dB  ber1 {:.3e}  ber2 {:.3e}", p.snr1_db, p.ber1, p.ber2);
    }
    Ok(())
}
