//! Two-user downlink AWGN channel `y_k = h_k x + n_k`.
//!
//! SNR bookkeeping: `SNR_k = |h_k|^2 P / sigma^2`, with one noise variance
//! shared by both receivers. Sweeping SNR_1 rescales `sigma^2` while the
//! transmit power stays fixed.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Receiving user. User 1 is the weak user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum User {
    #[serde(rename = "1")]
    Weak,
    #[serde(rename = "2")]
    Strong,
}

impl User {
    pub const BOTH: [User; 2] = [User::Weak, User::Strong];

    pub fn index(self) -> usize {
        match self {
            User::Weak => 1,
            User::Strong => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            1 => Ok(User::Weak),
            2 => Ok(User::Strong),
            _ => Err(Error::config(format!("user must be 1 or 2, got {i}"))),
        }
    }
}

/// Seeded random stream. `(seed, stream_id)` fully determines the draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// Standard normal via Box-Muller; the second variate of each pair is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - U lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Circularly-symmetric complex Gaussian with total variance `variance`.
    pub fn complex_normal(&mut self, variance: f64) -> Complex64 {
        let s = (variance / 2.0).sqrt();
        let re = self.normal();
        let im = self.normal();
        Complex64::new(s * re, s * im)
    }

    /// Raw access for code that wants `rand` distributions.
    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// One channel state: both gains and the shared noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    h1: Complex64,
    h2: Complex64,
    sigma2: f64,
}

impl ChannelRealization {
    pub fn new(h1: Complex64, h2: Complex64, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::config(format!("noise variance must be > 0, got {sigma2}")));
        }
        if h1.norm_sqr() > h2.norm_sqr() {
            return Err(Error::config(format!(
                "weak user must be user 1: |h1|^2 = {} > |h2|^2 = {}",
                h1.norm_sqr(),
                h2.norm_sqr()
            )));
        }
        if h1.norm_sqr() == 0.0 {
            return Err(Error::config("channel gain h1 is zero"));
        }
        Ok(Self { h1, h2, sigma2 })
    }

    /// Realization whose noise variance yields `snr1_db` at the weak user.
    pub fn at_snr1(h1: Complex64, h2: Complex64, snr1_db: f64, power: f64) -> Result<Self> {
        Self::new(h1, h2, snr_to_sigma2(snr1_db, h1, power)?)
    }

    pub fn h1(&self) -> Complex64 {
        self.h1
    }

    pub fn h2(&self) -> Complex64 {
        self.h2
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn gain(&self, user: User) -> Complex64 {
        match user {
            User::Weak => self.h1,
            User::Strong => self.h2,
        }
    }
}

/// Distribution of the strong user's real gain; the weak user's gain is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ChannelDistribution {
    Fixed { h1: f64, h2: f64 },
    Uniform { h1: f64, h_min: f64, h_max: f64 },
}

impl ChannelDistribution {
    pub fn h1(&self) -> f64 {
        match *self {
            ChannelDistribution::Fixed { h1, .. } | ChannelDistribution::Uniform { h1, .. } => h1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h1 = self.h1();
        if !(h1 > 0.0) || !h1.is_finite() {
            return Err(Error::config(format!("h1 must be positive, got {h1}")));
        }
        match *self {
            ChannelDistribution::Fixed { h2, .. } => {
                if !(h2 >= h1) || !h2.is_finite() {
                    return Err(Error::config(format!("need h1 <= h2, got h1={h1} h2={h2}")));
                }
            }
            ChannelDistribution::Uniform { h_min, h_max, .. } => {
                if !(h_min <= h_max) || !h_max.is_finite() {
                    return Err(Error::config(format!(
                        "need h_min <= h_max, got [{h_min}, {h_max}]"
                    )));
                }
                if h_min < h1 {
                    return Err(Error::config(format!(
                        "h_min = {h_min} below h1 = {h1} would break user ordering"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Centre of the support, used as the default test-time gain.
    pub fn nominal_h2(&self) -> f64 {
        match *self {
            ChannelDistribution::Fixed { h2, .. } => h2,
            ChannelDistribution::Uniform { h_min, h_max, .. } => 0.5 * (h_min + h_max),
        }
    }
}

/// `sigma^2 = |h1|^2 P / 10^(snr1_db / 10)`.
pub fn snr_to_sigma2(snr1_db: f64, h1: Complex64, power: f64) -> Result<f64> {
    if !(power > 0.0) {
        return Err(Error::config(format!("transmit power must be > 0, got {power}")));
    }
    if h1.norm_sqr() == 0.0 {
        return Err(Error::config("channel gain h1 is zero"));
    }
    Ok(h1.norm_sqr() * power / 10f64.powf(snr1_db / 10.0))
}

/// Strong-user SNR implied by a weak-user SNR and the two gains.
pub fn snr2_from(snr1_db: f64, h1: Complex64, h2: Complex64) -> f64 {
    snr1_db + 20.0 * (h2.norm() / h1.norm()).log10()
}

/// `h_k x + n` with `n ~ CN(0, sigma^2)`.
pub fn apply_channel(
    x: Complex64,
    realization: &ChannelRealization,
    user: User,
    rng: &mut RngStream,
) -> Complex64 {
    realization.gain(user) * x + rng.complex_normal(realization.sigma2)
}

/// `y / h_k`, expressing the sample in transmit coordinates.
pub fn equalize(y: Complex64, h: Complex64) -> Result<Complex64> {
    if h.norm_sqr() == 0.0 {
        return Err(Error::config("cannot equalize with a zero channel gain"));
    }
    Ok(y / h)
}

pub fn sample_h2(dist: &ChannelDistribution, rng: &mut RngStream) -> f64 {
    match *dist {
        ChannelDistribution::Fixed { h2, .. } => h2,
        ChannelDistribution::Uniform { h_min, h_max, .. } => rng.uniform_range(h_min, h_max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn snr_to_sigma2_examples() {
        assert!((snr_to_sigma2(0.0, c(1.0), 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((snr_to_sigma2(10.0, c(1.0), 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((snr_to_sigma2(10.0, c(2.0), 1.0).unwrap() - 0.4).abs() < 1e-15);
        assert!(snr_to_sigma2(10.0, c(0.0), 1.0).is_err());
        assert!(snr_to_sigma2(10.0, c(1.0), 0.0).is_err());
    }

    #[test]
    fn snr2_examples() {
        assert!((snr2_from(10.0, c(1.0), c(2.0)) - 16.0206).abs() < 1e-4);
        assert_eq!(snr2_from(7.0, c(1.5), c(1.5)), 7.0);
        assert!((snr2_from(10.0, c(1.0), c(10.0)) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn realization_enforces_ordering() {
        assert!(ChannelRealization::new(c(2.0), c(1.0), 0.1).is_err());
        assert!(ChannelRealization::new(c(1.0), c(2.0), 0.0).is_err());
        let r = ChannelRealization::at_snr1(c(1.0), c(2.0), 10.0, 1.0).unwrap();
        assert!((r.sigma2() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn noiseless_limit_is_pure_gain() {
        let r = ChannelRealization::new(c(1.0), Complex64::new(1.5, -0.5), 1e-300).unwrap();
        let mut rng = RngStream::new(1, 0);
        let x = Complex64::new(0.3, -0.7);
        let y = apply_channel(x, &r, User::Strong, &mut rng);
        assert!((y - r.h2() * x).norm() < 1e-140);
        assert!((equalize(y, r.h2()).unwrap() - x).norm() < 1e-15);
    }

    #[test]
    fn equalize_examples() {
        let x = Complex64::new(0.2, 0.9);
        let h = Complex64::new(-1.0, 2.0);
        assert!((equalize(h * x, h).unwrap() - x).norm() < 1e-15);
        assert_eq!(equalize(x, c(1.0)).unwrap(), x);
        assert!(equalize(x, c(0.0)).is_err());
    }

    #[test]
    fn noise_moments() {
        let sigma2 = 0.37;
        let r = ChannelRealization::new(c(1.0), c(1.0), sigma2).unwrap();
        let mut rng = RngStream::new(2024, 3);
        let n = 1_000_000;
        let (mut sr, mut si, mut srr, mut sii, mut sri) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let y = apply_channel(Complex64::new(0.0, 0.0), &r, User::Weak, &mut rng);
            sr += y.re;
            si += y.im;
            srr += y.re * y.re;
            sii += y.im * y.im;
            sri += y.re * y.im;
        }
        let nf = n as f64;
        let bound = 4.0 * (sigma2 / nf).sqrt();
        assert!((sr / nf).abs() < bound);
        assert!((si / nf).abs() < bound);
        let var = (srr + sii) / nf;
        assert!((var - sigma2).abs() < 0.01 * sigma2);
        // Isotropy: each dimension sigma2/2, negligible cross term.
        assert!((srr / nf - sigma2 / 2.0).abs() < 0.02 * sigma2 / 2.0);
        assert!((sii / nf - sigma2 / 2.0).abs() < 0.02 * sigma2 / 2.0);
        assert!((sri / nf).abs() < 0.01 * sigma2);
    }

    #[test]
    fn equalized_noise_scales_with_gain() {
        let sigma2 = 0.5;
        let h = Complex64::new(2.0, 1.0);
        let r = ChannelRealization::new(c(1.0), h, sigma2).unwrap();
        let mut rng = RngStream::new(8, 0);
        let x = Complex64::new(0.6, -0.2);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let e = equalize(apply_channel(x, &r, User::Strong, &mut rng), h).unwrap() - x;
            acc += e.norm_sqr();
        }
        let expected = sigma2 / h.norm_sqr();
        assert!((acc / n as f64 - expected).abs() < 0.01 * expected);
    }

    #[test]
    fn sample_h2_examples() {
        let mut rng = RngStream::new(7, 0);
        let fixed = ChannelDistribution::Fixed { h1: 1.0, h2: 2.0 };
        assert!((0..100).all(|_| sample_h2(&fixed, &mut rng) == 2.0));

        let u13 = ChannelDistribution::Uniform {
            h1: 1.0,
            h_min: 1.0,
            h_max: 3.0,
        };
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_h2(&u13, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.01);

        let u812 = ChannelDistribution::Uniform {
            h1: 1.0,
            h_min: 8.0,
            h_max: 12.0,
        };
        assert!((0..100_000)
            .map(|_| sample_h2(&u812, &mut rng))
            .all(|h| (8.0..=12.0).contains(&h)));
    }

    #[test]
    fn distribution_validation() {
        assert!(ChannelDistribution::Uniform {
            h1: 1.0,
            h_min: 0.5,
            h_max: 3.0
        }
        .validate()
        .is_err());
        assert!(ChannelDistribution::Uniform {
            h1: 1.0,
            h_min: 3.0,
            h_max: 2.0
        }
        .validate()
        .is_err());
        assert!(ChannelDistribution::Fixed { h1: 1.0, h2: 0.5 }.validate().is_err());
        assert!(ChannelDistribution::Fixed { h1: 1.0, h2: 2.0 }.validate().is_ok());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draw = |seed, id| {
            let mut r = RngStream::new(seed, id);
            (0..16).map(|_| r.normal()).collect::<Vec<_>>()
        };
        assert_eq!(draw(42, 0), draw(42, 0));
        assert_ne!(draw(42, 0), draw(42, 1));
        assert_ne!(draw(42, 0), draw(43, 0));
    }
}
