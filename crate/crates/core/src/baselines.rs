//! Reference systems: QPSK superposition NOMA with hard SIC at the strong
//! user, Gray-coded 16-QAM, and maximum-likelihood detection on an
//! arbitrary codebook.
//!
//! The closed forms work per real dimension. With Gray-mapped QPSK each
//! dimension carries one bit of each user:
//!
//! ```text
//! r = h (a1 b1 + a2 b2) + n,   a1 = sqrt(alpha P / 2), a2 = sqrt((1 - alpha) P / 2),
//! b_k in {-1, +1},             n ~ N(0, sigma^2 / 2)
//! ```
//!
//! Every closed form has a Monte-Carlo counterpart here that shares no code
//! with it beyond the channel noise generator.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::RngStream;
use crate::model::{Codebook, MessagePair};
use crate::{Error, Result};

/// Gaussian tail probability `Q(x) = P(N(0,1) > x) = erfc(x / sqrt 2) / 2`.
pub fn q_function(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
}

/// Power split of two superposed QPSK users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpskNomaConfig {
    /// Fraction of power given to the weak user.
    pub alpha: f64,
    pub power: f64,
    pub h1: f64,
    pub h2: f64,
    pub sigma2: f64,
}

/// Per-dimension amplitudes and noise standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerDimAmplitudes {
    pub a1: f64,
    pub a2: f64,
    pub sigma_d: f64,
}

impl QpskNomaConfig {
    /// `alpha <= 0.5` lets the two constellations overlap or swap order and
    /// is rejected unless `allow_overlap` is set.
    pub fn new(alpha: f64, power: f64, h1: f64, h2: f64, sigma2: f64, allow_overlap: bool) -> Result<Self> {
        let cfg = Self {
            alpha,
            power,
            h1,
            h2,
            sigma2,
        };
        cfg.validate(allow_overlap)?;
        Ok(cfg)
    }

    /// Config at a given weak-user SNR, `sigma^2 = h1^2 P / 10^(snr/10)`.
    pub fn at_snr1(alpha: f64, power: f64, h1: f64, h2: f64, snr1_db: f64, allow_overlap: bool) -> Result<Self> {
        let sigma2 = crate::channel::snr_to_sigma2(snr1_db, Complex64::new(h1, 0.0), power)?;
        Self::new(alpha, power, h1, h2, sigma2, allow_overlap)
    }

    pub fn validate(&self, allow_overlap: bool) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) && !(allow_overlap && self.alpha >= 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.alpha <= 0.5 && !allow_overlap {
            return Err(Error::config(format!(
                "alpha = {} <= 0.5 makes the superposed QPSK points overlap or reorder; \
                 pass the overlap override to evaluate it anyway",
                self.alpha
            )));
        }
        if !(self.power > 0.0) || !(self.sigma2 > 0.0) {
            return Err(Error::config("power and noise variance must be > 0"));
        }
        if !(self.h1 > 0.0) || !(self.h2 >= self.h1) {
            return Err(Error::config(format!(
                "need 0 < h1 <= h2, got h1={} h2={}",
                self.h1, self.h2
            )));
        }
        Ok(())
    }

    pub fn amplitudes(&self) -> PerDimAmplitudes {
        PerDimAmplitudes {
            a1: (self.alpha * self.power / 2.0).sqrt(),
            a2: ((1.0 - self.alpha) * self.power / 2.0).sqrt(),
            sigma_d: (self.sigma2 / 2.0).sqrt(),
        }
    }
}

/// Weak-user BER: sign detection of its own bit with the strong user's
/// signal left in place, `(Q(h1 (a1 + a2) / s) + Q(h1 (a1 - a2) / s)) / 2`.
pub fn ber_qpsk_noma_weak(cfg: &QpskNomaConfig) -> f64 {
    let PerDimAmplitudes { a1, a2, sigma_d } = cfg.amplitudes();
    let g = cfg.h1 / sigma_d;
    0.5 * (q_function(g * (a1 + a2)) + q_function(g * (a1 - a2)))
}

/// Strong-user BER with hard-decision SIC per dimension.
///
/// With `x1 = h2 a1 / s` and `x2 = h2 a2 / s`:
/// `Q(x2) + (Q(2 x1 + x2) - Q(x1 + x2) + Q(x1 - x2) - Q(2 x1 - x2)) / 2`.
pub fn ber_qpsk_noma_strong_sic(cfg: &QpskNomaConfig) -> f64 {
    let PerDimAmplitudes { a1, a2, sigma_d } = cfg.amplitudes();
    let x1 = cfg.h2 * a1 / sigma_d;
    let x2 = cfg.h2 * a2 / sigma_d;
    q_function(x2)
        + 0.5
            * (q_function(2.0 * x1 + x2) - q_function(x1 + x2) + q_function(x1 - x2)
                - q_function(2.0 * x1 - x2))
}

/// Measured BERs with binomial standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McBer {
    pub ber1: f64,
    pub ber2: f64,
    pub stderr1: f64,
    pub stderr2: f64,
    pub n_bits: u64,
}

/// `sqrt(p (1 - p) / n)`.
pub fn binomial_stderr(p: f64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

pub const MIN_MC_SYMBOLS: u64 = 10_000;
const SHARD_SYMBOLS: u64 = 1 << 18;

/// Splits `n` symbols into fixed-size shards, each with its own stream id,
/// and sums per-shard counters in shard order.
fn sharded<F>(n_symbols: u64, seed: u64, stream_base: u64, shard: F) -> [u64; 2]
where
    F: Fn(u64, &mut RngStream) -> [u64; 2] + Sync,
{
    let shards = n_symbols.div_ceil(SHARD_SYMBOLS);
    let counts: Vec<[u64; 2]> = (0..shards)
        .into_par_iter()
        .map(|i| {
            let len = SHARD_SYMBOLS.min(n_symbols - i * SHARD_SYMBOLS);
            let mut rng = RngStream::new(seed, stream_base + i);
            shard(len, &mut rng)
        })
        .collect();
    counts
        .iter()
        .fold([0, 0], |acc, c| [acc[0] + c[0], acc[1] + c[1]])
}

fn bit(rng: &mut RngStream) -> bool {
    rng.uniform() < 0.5
}

fn pm(b: bool) -> f64 {
    if b {
        1.0
    } else {
        -1.0
    }
}

/// Monte-Carlo BER of QPSK superposition NOMA: the weak user detects its
/// own QPSK symbol directly, the strong user detects the weak symbol,
/// subtracts it and detects its own.
pub fn mc_qpsk_noma(cfg: &QpskNomaConfig, n_symbols: u64, seed: u64) -> Result<McBer> {
    if n_symbols < MIN_MC_SYMBOLS {
        return Err(Error::config(format!(
            "Monte-Carlo needs at least {MIN_MC_SYMBOLS} symbols, got {n_symbols}"
        )));
    }
    let s1 = (cfg.alpha * cfg.power).sqrt();
    let s2 = ((1.0 - cfg.alpha) * cfg.power).sqrt();
    let qpsk = |bi: bool, bq: bool| Complex64::new(pm(bi), pm(bq)) / std::f64::consts::SQRT_2;
    let h1 = Complex64::new(cfg.h1, 0.0);
    let h2 = Complex64::new(cfg.h2, 0.0);
    let sigma2 = cfg.sigma2;
    let errors = sharded(n_symbols, seed, 0, |len, rng| {
        let mut e = [0u64; 2];
        for _ in 0..len {
            let u1 = [bit(rng), bit(rng)];
            let u2 = [bit(rng), bit(rng)];
            let x = qpsk(u1[0], u1[1]) * s1 + qpsk(u2[0], u2[1]) * s2;

            let r1 = (h1 * x + rng.complex_normal(sigma2)) / h1;
            let d1 = [r1.re > 0.0, r1.im > 0.0];
            e[0] += (d1[0] != u1[0]) as u64 + (d1[1] != u1[1]) as u64;

            let r2 = (h2 * x + rng.complex_normal(sigma2)) / h2;
            let w = [r2.re > 0.0, r2.im > 0.0];
            let residual = r2 - qpsk(w[0], w[1]) * s1;
            let d2 = [residual.re > 0.0, residual.im > 0.0];
            e[1] += (d2[0] != u2[0]) as u64 + (d2[1] != u2[1]) as u64;
        }
        e
    });
    let n_bits = 2 * n_symbols;
    let ber1 = errors[0] as f64 / n_bits as f64;
    let ber2 = errors[1] as f64 / n_bits as f64;
    Ok(McBer {
        ber1,
        ber2,
        stderr1: binomial_stderr(ber1, n_bits),
        stderr2: binomial_stderr(ber2, n_bits),
        n_bits,
    })
}

/// Gray-coded 16-QAM bit error rate at symbol SNR `Es/N0`.
///
/// Each dimension is Gray 4-PAM at `u = sqrt(SNR / 5)` half-spacings per
/// noise standard deviation; averaging its sign bit and its inner/outer
/// bit gives `(3 Q(u) + 2 Q(3u) - Q(5u)) / 4`.
pub fn ber_16qam(snr_symbol_db: f64) -> f64 {
    let snr = 10f64.powf(snr_symbol_db / 10.0);
    let u = (snr / 5.0).sqrt();
    0.25 * (3.0 * q_function(u) + 2.0 * q_function(3.0 * u) - q_function(5.0 * u))
}

/// Gray 4-PAM levels indexed by the two bits `(b0, b1)`.
const PAM4_GRAY: [((bool, bool), f64); 4] = [
    ((false, false), -3.0),
    ((false, true), -1.0),
    ((true, true), 1.0),
    ((true, false), 3.0),
];

/// Monte-Carlo BER of Gray 16-QAM with nearest-point detection.
pub fn mc_16qam(snr_symbol_db: f64, n_symbols: u64, seed: u64) -> Result<(f64, f64, u64)> {
    if n_symbols < MIN_MC_SYMBOLS {
        return Err(Error::config(format!(
            "Monte-Carlo needs at least {MIN_MC_SYMBOLS} symbols, got {n_symbols}"
        )));
    }
    // Unit average symbol energy: mean of (l_i^2 + l_q^2) over levels is 10.
    let d = (1.0 / 10f64).sqrt();
    let sigma2 = 1.0 / 10f64.powf(snr_symbol_db / 10.0);
    let level = |b: (bool, bool)| PAM4_GRAY.iter().find(|(k, _)| *k == b).unwrap().1;
    let nearest = |v: f64| {
        PAM4_GRAY
            .iter()
            .min_by(|a, b| (v - a.1 * d).abs().total_cmp(&(v - b.1 * d).abs()))
            .unwrap()
            .0
    };
    let errors = sharded(n_symbols, seed, 1 << 32, |len, rng| {
        let mut e = 0u64;
        for _ in 0..len {
            let bi = (bit(rng), bit(rng));
            let bq = (bit(rng), bit(rng));
            let x = Complex64::new(level(bi) * d, level(bq) * d);
            let y = x + rng.complex_normal(sigma2);
            let (di, dq) = (nearest(y.re), nearest(y.im));
            e += (di.0 != bi.0) as u64 + (di.1 != bi.1) as u64;
            e += (dq.0 != bq.0) as u64 + (dq.1 != bq.1) as u64;
        }
        [e, 0]
    });
    let n_bits = 4 * n_symbols;
    let ber = errors[0] as f64 / n_bits as f64;
    Ok((ber, binomial_stderr(ber, n_bits), n_bits))
}

/// Index of the codebook symbol minimizing `|y - h x|^2`; ties go to the
/// lowest index.
pub fn ml_detect_index(y: Complex64, codebook: &Codebook, h: Complex64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, e) in codebook.entries.iter().enumerate() {
        let d = (y - h * e.symbol).norm_sqr();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Maximum-likelihood message pair for one received sample.
pub fn ml_detect(y: Complex64, codebook: &Codebook, h: Complex64) -> Result<MessagePair> {
    if h.norm_sqr() == 0.0 {
        return Err(Error::config("ML detection needs a nonzero channel gain"));
    }
    let i = ml_detect_index(y, codebook, h);
    Ok(codebook.entries[i].pair.clone())
}

/// Gray 16-QAM as a two-user codebook at power `power`: the weak user's
/// bits pick the sign of I and Q, the strong user's bits the inner/outer
/// ring in each dimension.
pub fn gray_16qam_codebook(power: f64) -> Result<Codebook> {
    let d = (power / 10.0).sqrt();
    let symbols: Vec<Complex64> = (0..16usize)
        .map(|m| {
            let p = MessagePair::from_index(m, 2, 2);
            let b = |v: u8| v == 1;
            let li = PAM4_GRAY
                .iter()
                .find(|(k, _)| *k == (b(p.bits1()[0]), b(p.bits2()[0])))
                .unwrap()
                .1;
            let lq = PAM4_GRAY
                .iter()
                .find(|(k, _)| *k == (b(p.bits1()[1]), b(p.bits2()[1])))
                .unwrap()
                .1;
            Complex64::new(li * d, lq * d)
        })
        .collect();
    Codebook::from_symbols(2, 2, power, &symbols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Composite Simpson integration of the standard normal density on
    /// `[x, x + 40]`.
    fn q_by_quadrature(x: f64) -> f64 {
        let n = 200_000;
        let h = 40.0 / n as f64;
        let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(x) + f(x + 40.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(x + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn q_function_examples() {
        assert_eq!(q_function(0.0), 0.5);
        for &x in &[0.3, 1.0, 2.5, 4.0] {
            assert!((q_function(x) + q_function(-x) - 1.0).abs() < 1e-15);
        }
        let oracle = q_by_quadrature(3.0);
        assert!((oracle - 1.3499e-3).abs() < 1e-7);
        assert!((q_function(3.0) - oracle).abs() < 1e-12);
        assert!((q_function(5.0) - q_by_quadrature(5.0)).abs() < 1e-15);
    }

    #[test]
    fn weak_user_reduces_to_single_user_qpsk() {
        for i in 0..=40 {
            let snr_db = i as f64 * 0.5;
            let cfg = QpskNomaConfig::at_snr1(1.0, 1.0, 1.0, 2.0, snr_db, false).unwrap();
            let single = q_function(10f64.powf(snr_db / 10.0).sqrt());
            assert!((ber_qpsk_noma_weak(&cfg) - single).abs() < 1e-12);
        }
    }

    #[test]
    fn strong_user_without_weak_power_is_single_user_qpsk() {
        let cfg = QpskNomaConfig::new(1e-300, 1.0, 1.0, 2.0, 0.1, true).unwrap();
        let x2 = cfg.h2 * cfg.amplitudes().a2 / cfg.amplitudes().sigma_d;
        assert!((ber_qpsk_noma_strong_sic(&cfg) - q_function(x2)).abs() < 1e-15);
    }

    #[test]
    fn noiseless_limits() {
        let cfg = QpskNomaConfig::new(0.7, 1.0, 1.0, 2.0, 1e-8, false).unwrap();
        assert!(ber_qpsk_noma_weak(&cfg) < 1e-300);
        assert!(ber_qpsk_noma_strong_sic(&cfg) < 1e-300);
        let mc = mc_qpsk_noma(&cfg, 20_000, 1).unwrap();
        assert_eq!((mc.ber1, mc.ber2), (0.0, 0.0));
    }

    #[test]
    fn alpha_guard() {
        assert!(QpskNomaConfig::new(0.4, 1.0, 1.0, 2.0, 0.1, false).is_err());
        assert!(QpskNomaConfig::new(0.5, 1.0, 1.0, 2.0, 0.1, false).is_err());
        assert!(QpskNomaConfig::new(0.4, 1.0, 1.0, 2.0, 0.1, true).is_ok());
        assert!(QpskNomaConfig::new(1.2, 1.0, 1.0, 2.0, 0.1, true).is_err());
        assert!(QpskNomaConfig::new(0.7, 1.0, 2.0, 1.0, 0.1, false).is_err());
    }

    #[test]
    fn closed_forms_match_monte_carlo_on_small_grid() {
        // 2e6 symbols keeps the unit test quick; the acceptance suite runs 1e7.
        for (k, &snr) in [2.0, 6.0, 9.0].iter().enumerate() {
            let cfg = QpskNomaConfig::at_snr1(0.75, 1.0, 1.0, 1.5, snr, false).unwrap();
            let mc = mc_qpsk_noma(&cfg, 2_000_000, 40 + k as u64).unwrap();
            let w = ber_qpsk_noma_weak(&cfg);
            let s = ber_qpsk_noma_strong_sic(&cfg);
            assert!((mc.ber1 - w).abs() < 3.0 * binomial_stderr(w, mc.n_bits), "weak {snr}: {mc:?} vs {w}");
            assert!((mc.ber2 - s).abs() < 3.0 * binomial_stderr(s, mc.n_bits), "strong {snr}: {mc:?} vs {s}");
        }
        let (ber, _, n) = mc_16qam(12.0, 2_000_000, 9).unwrap();
        let exact = ber_16qam(12.0);
        assert!((ber - exact).abs() < 3.0 * binomial_stderr(exact, n));
    }

    #[test]
    fn stderr_scales_with_sample_size() {
        let cfg = QpskNomaConfig::at_snr1(0.7, 1.0, 1.0, 2.0, 6.0, false).unwrap();
        let a = mc_qpsk_noma(&cfg, 400_000, 5).unwrap();
        let b = mc_qpsk_noma(&cfg, 800_000, 6).unwrap();
        let ratio = a.stderr1 / b.stderr1;
        assert!((ratio - std::f64::consts::SQRT_2).abs() < 0.05, "{ratio}");
        assert!(mc_qpsk_noma(&cfg, 100, 1).is_err());
    }

    #[test]
    fn mc_is_reproducible() {
        let cfg = QpskNomaConfig::at_snr1(0.7, 1.0, 1.0, 2.0, 5.0, false).unwrap();
        assert_eq!(
            mc_qpsk_noma(&cfg, 300_000, 77).unwrap(),
            mc_qpsk_noma(&cfg, 300_000, 77).unwrap()
        );
    }

    #[test]
    fn qam16_high_snr_asymptote() {
        assert!(ber_16qam(80.0) < 1e-300);
        let mut last = f64::INFINITY;
        for &snr in &[14.0, 18.0, 22.0, 26.0] {
            let lin = 10f64.powf(snr / 10.0);
            let r = ber_16qam(snr) / (0.75 * q_function((lin / 5.0).sqrt()));
            assert!(r >= 1.0 && r <= last);
            last = r;
        }
        assert!(last - 1.0 < 1e-6);
    }

    #[test]
    fn gray_16qam_geometry() {
        let cb = gray_16qam_codebook(1.0).unwrap();
        assert!((cb.mean_power - 1.0).abs() < 1e-12);
        // Gray: neighbours along one axis differ in exactly one bit.
        let syms = cb.symbols();
        let d = (0.1f64).sqrt();
        for i in 0..16 {
            for j in 0..16 {
                if ((syms[i] - syms[j]).norm() - 2.0 * d).abs() < 1e-12 {
                    assert_eq!((i ^ j).count_ones(), 1, "{i} {j}");
                }
            }
        }
    }

    #[test]
    fn ml_detect_examples() {
        let cb = gray_16qam_codebook(1.0).unwrap();
        let h = Complex64::new(0.6, -1.1);
        for e in &cb.entries {
            assert_eq!(ml_detect(h * e.symbol, &cb, h).unwrap(), e.pair);
        }
        // Midpoint between entries 0 and 1 is equidistant: lowest index wins.
        let mid = (cb.symbol(0) + cb.symbol(1)) / 2.0;
        let (a, b) = (cb.symbol(0), cb.symbol(1));
        assert!(((mid - a).norm() - (mid - b).norm()).abs() < 1e-15);
        assert_eq!(ml_detect_index(mid, &cb, Complex64::new(1.0, 0.0)), 0);
        assert!(ml_detect(mid, &cb, Complex64::new(0.0, 0.0)).is_err());
    }

    proptest! {
        #[test]
        fn closed_forms_bounded_and_monotone(alpha in 0.51f64..1.0, ratio in 1.0f64..12.0) {
            let mut prev = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
            for i in 0..=60 {
                let snr = -5.0 + 0.5 * i as f64;
                let cfg = QpskNomaConfig::at_snr1(alpha, 1.0, 1.0, ratio, snr, false).unwrap();
                let w = ber_qpsk_noma_weak(&cfg);
                let s = ber_qpsk_noma_strong_sic(&cfg);
                let q = ber_16qam(snr);
                for v in [w, s, q] {
                    prop_assert!((0.0..=0.5).contains(&v));
                }
                prop_assert!(w <= prev.0 + 1e-15);
                prop_assert!(s <= prev.1 + 1e-15);
                prop_assert!(q <= prev.2 + 1e-15);
                prev = (w, s, q);
            }
        }

        #[test]
        fn ml_detect_is_scale_invariant(re in -2.0f64..2.0, im in -2.0f64..2.0, c in 0.01f64..100.0, hr in 0.1f64..3.0) {
            let cb = gray_16qam_codebook(1.0).unwrap();
            let y = Complex64::new(re, im);
            let h = Complex64::new(hr, 0.3);
            prop_assert_eq!(
                ml_detect(y * c, &cb, h * c).unwrap(),
                ml_detect(y, &cb, h).unwrap()
            );
        }
    }
}
