//! Reference BER curves: QPSK superposition NOMA (alpha = 0.7, h = (1, 2))
//! in closed form next to a Monte-Carlo run, and Gray 16-QAM at the strong
//! user's SNR.
//!
//! ```text
//! cargo run --release --example baselines -- [mc_symbols]
//! ```

use ae_noma::baselines::{
    ber_16qam, ber_qpsk_noma_strong_sic, ber_qpsk_noma_weak, mc_qpsk_noma, QpskNomaConfig,
};
use ae_noma::channel::snr2_from;
use ae_noma::Complex64;

fn main() -> ae_noma::Result<()> {
    let mc_symbols: u64 = std::env::args()
        .nth(1)
        .map_or(200_000, |s| s.parse().expect("mc_symbols"));
    let (h1, h2) = (1.0, 2.0);

    println!("snr1  weak(cf)   weak(mc)   strong(cf) strong(mc) 16qam@snr2");
    for snr in (0..=20).step_by(2).map(f64::from) {
        let cfg = QpskNomaConfig::at_snr1(0.7, 1.0, h1, h2, snr, false)?;
        let mc = mc_qpsk_noma(&cfg, mc_symbols, snr as u64)?;
        let snr2 = snr2_from(snr, Complex64::new(h1, 0.0), Complex64::new(h2, 0.0));
        println!(
            "{snr:>4}  {:.3e}  {:.3e}  {:.3e}  {:.3e}  {:.3e}",
            ber_qpsk_noma_weak(&cfg),
            mc.ber1,
            ber_qpsk_noma_strong_sic(&cfg),
            mc.ber2,
            ber_16qam(snr2)
        );
    }
    Ok(())
}
