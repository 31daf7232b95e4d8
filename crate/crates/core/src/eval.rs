//! Monte-Carlo BER curves, constellation geometry, fairness and
//! comparison tables.

use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    ber_16qam, ber_qpsk_noma_strong_sic, ber_qpsk_noma_weak, binomial_stderr, ml_detect_index,
    QpskNomaConfig,
};
use crate::channel::{apply_channel, equalize, snr2_from, ChannelRealization, RngStream, User};
use crate::model::{AeNoma, Codebook, CodebookEntry};
use crate::{Error, Result};

/// Fixed test-time gains; the noise level is set per SNR point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalChannel {
    pub h1: Complex64,
    pub h2: Complex64,
}

impl EvalChannel {
    pub fn new(h1: f64, h2: f64) -> Result<Self> {
        let ch = Self {
            h1: Complex64::new(h1, 0.0),
            h2: Complex64::new(h2, 0.0),
        };
        ch.realization(0.0, 1.0)?;
        Ok(ch)
    }

    pub fn realization(&self, snr1_db: f64, power: f64) -> Result<ChannelRealization> {
        ChannelRealization::at_snr1(self.h1, self.h2, snr1_db, power)
    }

    pub fn gain(&self, user: User) -> Complex64 {
        match user {
            User::Weak => self.h1,
            User::Strong => self.h2,
        }
    }
}

/// Stopping rule for one SNR point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BerOptions {
    pub min_error_events: u64,
    pub max_symbols: u64,
}

impl Default for BerOptions {
    fn default() -> Self {
        Self {
            min_error_events: 100,
            max_symbols: 10_000_000,
        }
    }
}

impl BerOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_symbols == 0 {
            return Err(Error::config("max_symbols must be > 0"));
        }
        Ok(())
    }
}

/// One point of a BER curve. Error events are bit errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub snr1_db: f64,
    pub ber1: f64,
    pub ber2: f64,
    pub stderr1: f64,
    pub stderr2: f64,
    pub n_symbols: u64,
    pub n_bits1: u64,
    pub n_bits2: u64,
    pub n_error_events1: u64,
    pub n_error_events2: u64,
    /// Set when a user saw no errors at all, so its BER of 0 is only a bound.
    pub zero_error1: bool,
    pub zero_error2: bool,
}

impl BerPoint {
    pub fn from_counts(snr1_db: f64, n_symbols: u64, bits: (usize, usize), errors: [u64; 2]) -> Self {
        let n_bits1 = n_symbols * bits.0 as u64;
        let n_bits2 = n_symbols * bits.1 as u64;
        let rate = |e: u64, n: u64| if n == 0 { 0.0 } else { e as f64 / n as f64 };
        let ber1 = rate(errors[0], n_bits1);
        let ber2 = rate(errors[1], n_bits2);
        Self {
            snr1_db,
            ber1,
            ber2,
            stderr1: binomial_stderr(ber1, n_bits1),
            stderr2: binomial_stderr(ber2, n_bits2),
            n_symbols,
            n_bits1,
            n_bits2,
            n_error_events1: errors[0],
            n_error_events2: errors[1],
            zero_error1: errors[0] == 0,
            zero_error2: errors[1] == 0,
        }
    }

    pub fn ber(&self, user: User) -> f64 {
        match user {
            User::Weak => self.ber1,
            User::Strong => self.ber2,
        }
    }

    pub fn stderr(&self, user: User) -> f64 {
        match user {
            User::Weak => self.stderr1,
            User::Strong => self.stderr2,
        }
    }

    pub fn worse_ber(&self) -> f64 {
        self.ber1.max(self.ber2)
    }
}

/// Maps equalized samples of one user to that user's decided bit pattern,
/// MSB first.
pub trait Detector: Sync {
    fn detect(&self, user: User, equalized: &[Complex64], h: Complex64) -> Result<Vec<usize>>;
}

/// The trained per-user decoders with hard decisions.
pub struct NeuralDetector<'a>(pub &'a AeNoma);

impl Detector for NeuralDetector<'_> {
    fn detect(&self, user: User, equalized: &[Complex64], h: Complex64) -> Result<Vec<usize>> {
        let probs = self.0.rx(user).decode_batch(equalized, h)?;
        Ok(probs
            .outer_iter()
            .map(|row| row.iter().fold(0, |acc, &p| (acc << 1) | usize::from(p >= 0.5)))
            .collect())
    }
}

/// Minimum-distance symbol detection on a codebook, keeping the user's bits
/// of the decided message pair.
pub struct MlDetector<'a>(pub &'a Codebook);

impl Detector for MlDetector<'_> {
    fn detect(&self, user: User, equalized: &[Complex64], _h: Complex64) -> Result<Vec<usize>> {
        let one = Complex64::new(1.0, 0.0);
        let k2 = self.0.k2;
        Ok(equalized
            .iter()
            .map(|&r| {
                let m = ml_detect_index(r, self.0, one);
                match user {
                    User::Weak => m >> k2,
                    User::Strong => m & ((1 << k2) - 1),
                }
            })
            .collect())
    }
}

const CHUNK_SYMBOLS: u64 = 4096;
const WAVE_CHUNKS: u64 = 16;

fn chunk_errors<D: Detector>(
    detector: &D,
    codebook: &Codebook,
    realization: &ChannelRealization,
    len: usize,
    rng: &mut RngStream,
) -> Result<[u64; 2]> {
    let k2 = codebook.k2;
    let m = codebook.len();
    let messages: Vec<usize> = (0..len).map(|_| rng.below(m)).collect();
    let mut errors = [0u64; 2];
    for user in User::BOTH {
        let h = realization.gain(user);
        let mut received = Vec::with_capacity(len);
        for &msg in &messages {
            let y = apply_channel(codebook.symbol(msg), realization, user, rng);
            received.push(equalize(y, h)?);
        }
        let decided = detector.detect(user, &received, h)?;
        for (&msg, &d) in messages.iter().zip(&decided) {
            let sent = match user {
                User::Weak => msg >> k2,
                User::Strong => msg & ((1 << k2) - 1),
            };
            errors[user.index() - 1] += (sent ^ d).count_ones() as u64;
        }
    }
    Ok(errors)
}

/// BER curve of an arbitrary detector over a fixed codebook.
///
/// Symbols are processed in chunks with their own stream ids, so two
/// detectors measured with the same seed see the same messages and noise.
/// Chunks are added in waves until both users reach `min_error_events` or
/// `max_symbols` is reached.
pub fn measure_ber_with<D: Detector>(
    detector: &D,
    codebook: &Codebook,
    channel: &EvalChannel,
    snr_grid: &[f64],
    opts: &BerOptions,
    seed: u64,
) -> Result<Vec<BerPoint>> {
    if snr_grid.is_empty() {
        return Err(Error::config("SNR grid is empty"));
    }
    opts.validate()?;
    let bits = (codebook.k1, codebook.k2);
    snr_grid
        .par_iter()
        .enumerate()
        .map(|(p, &snr)| {
            let realization = channel.realization(snr, codebook.power)?;
            let total_chunks = opts.max_symbols.div_ceil(CHUNK_SYMBOLS);
            let mut errors = [0u64; 2];
            let mut symbols = 0u64;
            let mut next = 0u64;
            while next < total_chunks
                && (errors[0] < opts.min_error_events || errors[1] < opts.min_error_events)
            {
                let end = (next + WAVE_CHUNKS).min(total_chunks);
                let wave: Vec<(u64, [u64; 2])> = (next..end)
                    .into_par_iter()
                    .map(|c| {
                        let len = CHUNK_SYMBOLS.min(opts.max_symbols - c * CHUNK_SYMBOLS);
                        let mut rng = RngStream::new(seed, ((p as u64) << 32) | c);
                        chunk_errors(detector, codebook, &realization, len as usize, &mut rng)
                            .map(|e| (len, e))
                    })
                    .collect::<Result<_>>()?;
                for (len, e) in wave {
                    symbols += len;
                    errors[0] += e[0];
                    errors[1] += e[1];
                }
                next = end;
            }
            Ok(BerPoint::from_counts(snr, symbols, bits, errors))
        })
        .collect()
}

/// BER curve of the trained decoders, with the transmitter reduced to its
/// power-normalized codebook.
pub fn measure_ber(
    system: &AeNoma,
    channel: &EvalChannel,
    snr_grid: &[f64],
    opts: &BerOptions,
    seed: u64,
) -> Result<Vec<BerPoint>> {
    let codebook = system.tx.build_codebook()?;
    measure_ber_with(&NeuralDetector(system), &codebook, channel, snr_grid, opts, seed)
}

/// Parses `start:stop:step` (inclusive stop) or a comma-separated list.
pub fn parse_snr_grid(spec: &str) -> Result<Vec<f64>> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::config(format!("bad number {s:?} in SNR grid {spec:?}")))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let grid = match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0) || stop < start {
                return Err(Error::config(format!("SNR grid {spec:?} needs step > 0 and stop >= start")));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| start + i as f64 * step).collect()
        }
        [_] => spec.split(',').map(num).collect::<Result<Vec<_>>>()?,
        _ => return Err(Error::config(format!("SNR grid {spec:?} is neither a:b:c nor a list"))),
    };
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::config(format!("SNR grid {spec:?} is empty or non-finite")));
    }
    Ok(grid)
}

/// CSV with columns `snr1_db, ber1, stderr1, ber2, stderr2, n_bits`;
/// `n_bits` counts the weak user's bits. `header` lines are written first
/// as `#` comments.
pub fn ber_csv(points: &[BerPoint], header: &[String]) -> String {
    let mut out = String::new();
    for line in header {
        for l in line.lines() {
            let _ = writeln!(out, "# {l}");
        }
    }
    out.push_str("snr1_db,ber1,stderr1,ber2,stderr2,n_bits\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            p.snr1_db, p.ber1, p.stderr1, p.ber2, p.stderr2, p.n_bits1
        );
    }
    out
}

/// Largest decade gap `|log10 ber1 - log10 ber2|` over points where both
/// BERs are at least `floor`.
pub fn fairness_gap(curve: &[BerPoint], floor: f64) -> Result<f64> {
    if !(floor > 0.0) {
        return Err(Error::config(format!("fairness floor must be > 0, got {floor}")));
    }
    curve
        .iter()
        .filter(|p| p.ber1 >= floor && p.ber2 >= floor)
        .map(|p| (p.ber1.log10() - p.ber2.log10()).abs())
        .reduce(f64::max)
        .ok_or_else(|| Error::NoData(format!("no point has both BERs >= {floor}")))
}

/// Symbols sharing one user's bit pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserGroup {
    pub user: User,
    pub bits: Vec<u8>,
    pub members: Vec<usize>,
    pub centroid: Complex64,
    /// RMS distance of the members to the centroid.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationReport {
    pub k1: usize,
    pub k2: usize,
    pub power: f64,
    pub entries: Vec<CodebookEntry>,
    pub min_pairwise_distance: f64,
    pub mean_power: f64,
    pub groups: Vec<UserGroup>,
}

impl ConstellationReport {
    pub fn from_codebook(codebook: &Codebook) -> Self {
        let symbols = codebook.symbols();
        let mut min_d = f64::INFINITY;
        for i in 0..symbols.len() {
            for j in i + 1..symbols.len() {
                min_d = min_d.min((symbols[i] - symbols[j]).norm());
            }
        }
        if symbols.len() < 2 {
            min_d = 0.0;
        }
        let mut groups = Vec::new();
        for user in User::BOTH {
            let k = codebook.entries[0].pair.bits(user).len();
            for pattern in 0..1usize << k {
                let bits: Vec<u8> = (0..k).map(|b| ((pattern >> (k - 1 - b)) & 1) as u8).collect();
                let members: Vec<usize> = codebook
                    .entries
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.pair.bits(user) == bits.as_slice())
                    .map(|(i, _)| i)
                    .collect();
                let n = members.len() as f64;
                let centroid = members.iter().map(|&i| symbols[i]).sum::<Complex64>() / n;
                let spread = (members
                    .iter()
                    .map(|&i| (symbols[i] - centroid).norm_sqr())
                    .sum::<f64>()
                    / n)
                    .sqrt();
                groups.push(UserGroup {
                    user,
                    bits,
                    members,
                    centroid,
                    spread,
                });
            }
        }
        Self {
            k1: codebook.k1,
            k2: codebook.k2,
            power: codebook.power,
            entries: codebook.entries.clone(),
            min_pairwise_distance: min_d,
            mean_power: codebook.mean_power,
            groups,
        }
    }

    /// CSV with columns `bits1, bits2, i, q` and a mean-power footer.
    pub fn to_csv(&self, header: &[String]) -> String {
        let mut out = String::new();
        for line in header {
            for l in line.lines() {
                let _ = writeln!(out, "# {l}");
            }
        }
        out.push_str("bits1,bits2,i,q\n");
        let join = |b: &[u8]| b.iter().map(|v| v.to_string()).collect::<String>();
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                join(e.pair.bits1()),
                join(e.pair.bits2()),
                e.symbol.re,
                e.symbol.im
            );
        }
        let _ = writeln!(out, "# mean_power,{}", self.mean_power);
        out
    }
}

pub fn extract_constellation(system: &AeNoma) -> Result<ConstellationReport> {
    Ok(ConstellationReport::from_codebook(&system.tx.build_codebook()?))
}

/// Equalized received samples of one user with the bit pattern that was
/// sent to that user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyOverlay {
    pub user: User,
    pub samples: Vec<(Complex64, usize)>,
}

pub fn noisy_overlay(
    codebook: &Codebook,
    channel: &EvalChannel,
    user: User,
    snr1_db: f64,
    n: usize,
    seed: u64,
) -> Result<NoisyOverlay> {
    let realization = channel.realization(snr1_db, codebook.power)?;
    let mut rng = RngStream::new(seed, 0);
    let h = realization.gain(user);
    let samples = (0..n)
        .map(|_| {
            let m = rng.below(codebook.len());
            let y = apply_channel(codebook.symbol(m), &realization, user, &mut rng);
            let bits = match user {
                User::Weak => m >> codebook.k2,
                User::Strong => m & ((1 << codebook.k2) - 1),
            };
            Ok((equalize(y, h)?, bits))
        })
        .collect::<Result<_>>()?;
    Ok(NoisyOverlay { user, samples })
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Scatter plot: codebook points as black crosses, optional noisy samples
/// as dots coloured by the selected user's bits.
pub fn render_constellation_svg(report: &ConstellationReport, noisy: Option<&NoisyOverlay>) -> String {
    const SIZE: f64 = 480.0;
    let mut extent = report
        .entries
        .iter()
        .map(|e| e.symbol.re.abs().max(e.symbol.im.abs()))
        .fold(0.0, f64::max);
    if let Some(ov) = noisy {
        for (s, _) in &ov.samples {
            extent = extent.max(s.re.abs()).max(s.im.abs());
        }
    }
    let extent = if extent > 0.0 && extent.is_finite() { extent * 1.1 } else { 1.0 };
    let px = |v: f64| SIZE / 2.0 + v / extent * (SIZE / 2.0);
    let py = |v: f64| SIZE / 2.0 - v / extent * (SIZE / 2.0);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        out,
        r##"<g stroke="#999999" stroke-width="1"><line x1="0" y1="{c}" x2="{SIZE}" y2="{c}"/><line x1="{c}" y1="0" x2="{c}" y2="{SIZE}"/></g>"##,
        c = SIZE / 2.0
    );
    if let Some(ov) = noisy {
        let _ = writeln!(out, r#"<g fill-opacity="0.5">"#);
        for (s, bits) in &ov.samples {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.3}" cy="{:.3}" r="1.5" fill="{}"/>"#,
                px(s.re),
                py(s.im),
                PALETTE[bits % PALETTE.len()]
            );
        }
        let _ = writeln!(out, "</g>");
    }
    let _ = writeln!(out, r##"<g stroke="#000000" stroke-width="2">"##);
    for e in &report.entries {
        let (x, y) = (px(e.symbol.re), py(e.symbol.im));
        let _ = writeln!(
            out,
            r#"<path d="M{:.3} {:.3}L{:.3} {:.3}M{:.3} {:.3}L{:.3} {:.3}"/>"#,
            x - 5.0,
            y - 5.0,
            x + 5.0,
            y + 5.0,
            x - 5.0,
            y + 5.0,
            x + 5.0,
            y - 5.0
        );
    }
    out.push_str("</g>\n</svg>\n");
    out
}

/// Where a comparison value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Measured,
    ClosedForm,
    LiteratureConstant,
}

impl Source {
    pub fn tag(self) -> &'static str {
        match self {
            Source::Measured => "measured",
            Source::ClosedForm => "closed-form",
            Source::LiteratureConstant => "literature-constant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub snr1_db: f64,
    pub worse_ber: f64,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_csv(&self, header: &[String]) -> String {
        let mut out = String::new();
        for line in header {
            for l in line.lines() {
                let _ = writeln!(out, "# {l}");
            }
        }
        out.push_str("method,snr1_db,worse_ber,source\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.method, r.snr1_db, r.worse_ber, r.source.tag());
        }
        out
    }

    pub fn find(&self, method: &str, snr1_db: f64) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.snr1_db == snr1_db)
    }
}

/// Published worse-user BER values shipped with the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceData {
    pub schema_version: u32,
    pub description: String,
    pub rows: Vec<ReferenceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceRow {
    pub method: String,
    pub snr1_db: f64,
    pub worse_ber: f64,
}

pub const REFERENCE_SCHEMA_VERSION: u32 = 1;
const REFERENCE_JSON: &str = include_str!("../data/reference_ber.json");

pub fn reference_data() -> Result<ReferenceData> {
    let data: ReferenceData = serde_json::from_str(REFERENCE_JSON)?;
    if data.schema_version != REFERENCE_SCHEMA_VERSION {
        return Err(Error::config(format!(
            "reference data schema {} (expected {REFERENCE_SCHEMA_VERSION})",
            data.schema_version
        )));
    }
    Ok(data)
}

pub const QPSK_NOMA_METHOD: &str = "QPSK-NOMA alpha=0.7 SIC";
pub const QAM16_METHOD: &str = "16-QAM at strong-user SNR";
pub const AE_METHOD: &str = "AE-NOMA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub snr_grid: Vec<f64>,
    pub alpha: f64,
    pub ber: BerOptions,
    pub seed: u64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            snr_grid: vec![7.5, 10.0, 14.0, 16.0, 18.0],
            alpha: 0.7,
            ber: BerOptions::default(),
            seed: 0,
        }
    }
}

/// Measured AE-NOMA rows, QPSK-NOMA and 16-QAM closed forms on the same
/// grid and channel, then the shipped literature constants.
pub fn compare_with_baselines(
    system: &AeNoma,
    channel: &EvalChannel,
    cfg: &CompareConfig,
) -> Result<ComparisonTable> {
    let measured = measure_ber(system, channel, &cfg.snr_grid, &cfg.ber, cfg.seed)?;
    let power = system.tx.power;
    let mut rows = Vec::new();
    for p in &measured {
        rows.push(ComparisonRow {
            method: AE_METHOD.into(),
            snr1_db: p.snr1_db,
            worse_ber: p.worse_ber(),
            source: Source::Measured,
        });
    }
    for &snr in &cfg.snr_grid {
        let q = QpskNomaConfig::at_snr1(cfg.alpha, power, channel.h1.norm(), channel.h2.norm(), snr, false)?;
        rows.push(ComparisonRow {
            method: QPSK_NOMA_METHOD.into(),
            snr1_db: snr,
            worse_ber: ber_qpsk_noma_weak(&q).max(ber_qpsk_noma_strong_sic(&q)),
            source: Source::ClosedForm,
        });
    }
    for &snr in &cfg.snr_grid {
        rows.push(ComparisonRow {
            method: QAM16_METHOD.into(),
            snr1_db: snr,
            worse_ber: ber_16qam(snr2_from(snr, channel.h1, channel.h2)),
            source: Source::ClosedForm,
        });
    }
    for r in reference_data()?.rows {
        rows.push(ComparisonRow {
            method: r.method,
            snr1_db: r.snr1_db,
            worse_ber: r.worse_ber,
            source: Source::LiteratureConstant,
        });
    }
    Ok(ComparisonTable { rows })
}
