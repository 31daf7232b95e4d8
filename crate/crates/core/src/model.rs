//! Transmitter encoder, receiver decoders and the extracted codebook.
//!
//! The transmitter maps a message pair (bits of both users, remapped to
//! ±1) through a residual main block to raw I/Q, multiplies it by a
//! positive per-symbol gain from a small side network, and normalizes the
//! average power to `P`. Each receiver sees only its own equalized sample
//! `y_k / h_k` and outputs one sigmoid probability per own bit.

use ndarray::{s, Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::User;
use crate::nn::{Activation, Mlp, MlpGrads, MlpSpec, Parameterized};
use crate::{Error, Result};

/// Largest supported `k1 + k2`; the transmitter enumerates all messages.
pub const MAX_TOTAL_BITS: usize = 12;

/// Bits for both users carried by one super-symbol.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MessagePair {
    bits1: Vec<u8>,
    bits2: Vec<u8>,
}

impl MessagePair {
    pub fn new(bits1: Vec<u8>, bits2: Vec<u8>) -> Result<Self> {
        if bits1.is_empty() || bits2.is_empty() {
            return Err(Error::config("each user needs at least one bit"));
        }
        if bits1.iter().chain(&bits2).any(|&b| b > 1) {
            return Err(Error::config("bits must be 0 or 1"));
        }
        Ok(Self { bits1, bits2 })
    }

    /// Message number `index` in lexicographic order, `bits1` major, MSB first.
    pub fn from_index(index: usize, k1: usize, k2: usize) -> Self {
        let bit = |i: usize| ((index >> i) & 1) as u8;
        Self {
            bits1: (0..k1).map(|j| bit(k1 + k2 - 1 - j)).collect(),
            bits2: (0..k2).map(|j| bit(k2 - 1 - j)).collect(),
        }
    }

    pub fn index(&self) -> usize {
        self.bits1
            .iter()
            .chain(&self.bits2)
            .fold(0, |acc, &b| (acc << 1) | b as usize)
    }

    /// All `2^(k1+k2)` pairs in index order.
    pub fn all(k1: usize, k2: usize) -> Vec<Self> {
        (0..1usize << (k1 + k2))
            .map(|i| Self::from_index(i, k1, k2))
            .collect()
    }

    pub fn bits1(&self) -> &[u8] {
        &self.bits1
    }

    pub fn bits2(&self) -> &[u8] {
        &self.bits2
    }

    pub fn bits(&self, user: User) -> &[u8] {
        match user {
            User::Weak => &self.bits1,
            User::Strong => &self.bits2,
        }
    }

    pub fn k1(&self) -> usize {
        self.bits1.len()
    }

    pub fn k2(&self) -> usize {
        self.bits2.len()
    }
}

fn signed(bit: u8) -> f64 {
    if bit == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Which symbols the power normalization averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    /// Empirical power of the current batch (training).
    Batch,
    /// Power of the full equiprobable codebook (inference, export).
    Codebook,
}

/// Architecture hyperparameters shared by the transmitter and receivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub k1: usize,
    pub k2: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub side_width: usize,
    pub side_layers: usize,
    pub power: f64,
    /// Append `|h_k|` to each receiver's input.
    pub rx_gain_input: bool,
    pub normalization: NormalizationMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k1: 2,
            k2: 2,
            hidden_width: 32,
            hidden_layers: 5,
            side_width: 16,
            side_layers: 2,
            power: 1.0,
            rx_gain_input: false,
            normalization: NormalizationMode::Batch,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 || self.k2 == 0 {
            return Err(Error::config("k1 and k2 must be >= 1"));
        }
        if self.k1 + self.k2 > MAX_TOTAL_BITS {
            return Err(Error::config(format!(
                "k1 + k2 = {} exceeds {}",
                self.k1 + self.k2,
                MAX_TOTAL_BITS
            )));
        }
        if self.hidden_width == 0 || self.hidden_layers == 0 || self.side_width == 0 {
            return Err(Error::config("network widths and depths must be positive"));
        }
        if !(self.power > 0.0) || !self.power.is_finite() {
            return Err(Error::config(format!("power must be > 0, got {}", self.power)));
        }
        Ok(())
    }

    pub fn num_messages(&self) -> usize {
        1 << (self.k1 + self.k2)
    }

    pub fn bits(&self, user: User) -> usize {
        match user {
            User::Weak => self.k1,
            User::Strong => self.k2,
        }
    }

    /// Main block: input -> hidden (no skip), then `hidden_layers - 1`
    /// width-preserving layers with identity skips, then the output layer.
    fn main_block(&self, in_dim: usize, out_dim: usize, out_act: Activation) -> MlpSpec {
        let h = self.hidden_width;
        let mut dims = vec![in_dim];
        dims.extend(std::iter::repeat_n(h, self.hidden_layers));
        dims.push(out_dim);
        let mut activations = vec![Activation::Elu; self.hidden_layers];
        activations.push(out_act);
        let mut residual_flags = vec![false];
        residual_flags.extend(std::iter::repeat_n(true, self.hidden_layers - 1));
        residual_flags.push(false);
        MlpSpec {
            layer_dims: dims,
            activations,
            residual_flags,
        }
    }

    fn side_block(&self) -> MlpSpec {
        let mut dims = vec![self.k1 + self.k2];
        dims.extend(std::iter::repeat_n(self.side_width, self.side_layers));
        dims.push(1);
        let mut activations = vec![Activation::Elu; self.side_layers];
        activations.push(Activation::Softplus);
        MlpSpec {
            residual_flags: vec![false; activations.len()],
            layer_dims: dims,
            activations,
        }
    }

    fn rx_in_dim(&self) -> usize {
        if self.rx_gain_input {
            3
        } else {
            2
        }
    }
}

/// `±1` input rows for every message, in index order.
pub(crate) fn message_inputs(k1: usize, k2: usize) -> Array2<f64> {
    let k = k1 + k2;
    Array2::from_shape_fn((1 << k, k), |(m, j)| signed(((m >> (k - 1 - j)) & 1) as u8))
}

fn pair_inputs(pairs: &[MessagePair]) -> Array2<f64> {
    let k = pairs[0].k1() + pairs[0].k2();
    let mut out = Array2::zeros((pairs.len(), k));
    for (mut row, p) in out.outer_iter_mut().zip(pairs) {
        for (dst, &b) in row.iter_mut().zip(p.bits1.iter().chain(&p.bits2)) {
            *dst = signed(b);
        }
    }
    out
}

fn to_complex(iq: &ArrayView2<f64>) -> Vec<Complex64> {
    iq.outer_iter().map(|r| Complex64::new(r[0], r[1])).collect()
}

/// Rescale so the mean of `|x|^2` equals `power`.
pub fn normalize_power(symbols: &[Complex64], power: f64) -> Result<Vec<Complex64>> {
    let total: f64 = symbols.iter().map(|x| x.norm_sqr()).sum();
    if symbols.is_empty() || total == 0.0 || !total.is_finite() {
        return Err(Error::DegenerateInput(
            "cannot normalize an empty or all-zero batch".into(),
        ));
    }
    let scale = (power * symbols.len() as f64 / total).sqrt();
    Ok(symbols.iter().map(|x| x * scale).collect())
}

/// Scale `c = sqrt(P / sum_j w_j |z_j|^2)` for weighted rows of raw I/Q.
pub(crate) fn weighted_scale(raw: &ArrayView2<f64>, weights: &[f64], power: f64) -> Result<(f64, f64)> {
    let s: f64 = raw
        .outer_iter()
        .zip(weights)
        .map(|(r, w)| w * (r[0] * r[0] + r[1] * r[1]))
        .sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::DegenerateInput(format!("weighted symbol power is {s}")));
    }
    Ok(((power / s).sqrt(), s))
}

/// Gradient through `x_m = c z_m`, given `g_m = dL/dx_m` aggregated per row:
/// `dL/dz_m = c g_m - (c / S) w_m z_m sum_j <g_j, z_j>`.
pub(crate) fn weighted_scale_backward(
    raw: &ArrayView2<f64>,
    weights: &[f64],
    scale: f64,
    s: f64,
    g: &ArrayView2<f64>,
) -> Array2<f64> {
    let dot: f64 = g.iter().zip(raw.iter()).map(|(a, b)| a * b).sum();
    let mut out = g.to_owned() * scale;
    for ((mut row, z), &w) in out.outer_iter_mut().zip(raw.outer_iter()).zip(weights) {
        let k = scale / s * w * dot;
        row[0] -= k * z[0];
        row[1] -= k * z[1];
    }
    out
}

/// Forward quantities the trainer keeps for the transmitter backward pass.
pub(crate) struct TxForward {
    main_out: Array2<f64>,
    gain: Array2<f64>,
    pub(crate) raw: Array2<f64>,
    main_tape: crate::nn::ForwardTape,
    side_tape: crate::nn::ForwardTape,
}

/// Transmitter: main block (message -> I/Q) times side-network gain, then
/// power normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxEncoder {
    pub k1: usize,
    pub k2: usize,
    pub main_block: Mlp,
    pub side_block: Mlp,
    pub normalization: NormalizationMode,
    pub power: f64,
}

impl TxEncoder {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let k = config.k1 + config.k2;
        Ok(Self {
            k1: config.k1,
            k2: config.k2,
            main_block: Mlp::new(config.main_block(k, 2, Activation::Linear), rng)?,
            side_block: Mlp::new(config.side_block(), rng)?,
            normalization: config.normalization,
            power: config.power,
        })
    }

    pub fn num_messages(&self) -> usize {
        1 << (self.k1 + self.k2)
    }

    fn raw_rows(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut iq = self.main_block.infer(inputs)?;
        let gain = self.side_block.infer(inputs)?;
        iq *= &gain;
        Ok(iq)
    }

    /// Unnormalized symbols for every message, in index order.
    pub fn raw_codebook(&self) -> Result<Vec<Complex64>> {
        Ok(to_complex(&self.raw_rows(message_inputs(self.k1, self.k2).view())?.view()))
    }

    /// Scale factor that brings the full codebook to mean power `P`.
    pub fn codebook_scale(&self) -> Result<f64> {
        let raw = self.raw_rows(message_inputs(self.k1, self.k2).view())?;
        let w = vec![1.0 / raw.nrows() as f64; raw.nrows()];
        Ok(weighted_scale(&raw.view(), &w, self.power)?.0)
    }

    pub(crate) fn forward_all(&self) -> Result<TxForward> {
        let inputs = message_inputs(self.k1, self.k2);
        let (main_out, main_tape) = self.main_block.forward(inputs.view())?;
        let (gain, side_tape) = self.side_block.forward(inputs.view())?;
        let raw = &main_out * &gain;
        Ok(TxForward {
            main_out,
            gain,
            raw,
            main_tape,
            side_tape,
        })
    }

    /// Parameter gradients given `dL/d raw` per message row.
    pub(crate) fn backward(&self, fwd: &TxForward, g_raw: ArrayView2<f64>) -> Result<(MlpGrads, MlpGrads)> {
        let g_main = &g_raw * &fwd.gain;
        let g_gain = (&g_raw * &fwd.main_out).sum_axis(Axis(1)).insert_axis(Axis(1));
        let (main, _) = self.main_block.backward(&fwd.main_tape, g_main.view())?;
        let (side, _) = self.side_block.backward(&fwd.side_tape, g_gain.view())?;
        Ok((main, side))
    }

    /// Encodes a batch and applies this encoder's normalization mode.
    pub fn encode_batch(&self, pairs: &[MessagePair]) -> Result<Vec<Complex64>> {
        if pairs.is_empty() {
            return Err(Error::DegenerateInput("empty batch".into()));
        }
        if pairs.iter().any(|p| p.k1() != self.k1 || p.k2() != self.k2) {
            return Err(Error::config(format!(
                "encoder expects ({}, {}) bits per pair",
                self.k1, self.k2
            )));
        }
        let raw = to_complex(&self.raw_rows(pair_inputs(pairs).view())?.view());
        match self.normalization {
            NormalizationMode::Batch => normalize_power(&raw, self.power),
            NormalizationMode::Codebook => {
                let c = self.codebook_scale()?;
                Ok(raw.into_iter().map(|x| x * c).collect())
            }
        }
    }

    /// Enumerates every message pair and encodes it with codebook normalization.
    pub fn build_codebook(&self) -> Result<Codebook> {
        let raw = self.raw_codebook()?;
        let symbols = normalize_power(&raw, self.power)?;
        let entries = symbols
            .into_iter()
            .enumerate()
            .map(|(i, symbol)| CodebookEntry {
                pair: MessagePair::from_index(i, self.k1, self.k2),
                symbol,
            })
            .collect();
        Codebook::new(self.k1, self.k2, self.power, entries)
    }
}

/// Receiver network for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RxDecoder {
    pub user: User,
    pub net: Mlp,
    pub gain_input: bool,
}

impl RxDecoder {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, user: User, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let spec = config.main_block(config.rx_in_dim(), config.bits(user), Activation::Sigmoid);
        Ok(Self {
            user,
            net: Mlp::new(spec, rng)?,
            gain_input: config.rx_gain_input,
        })
    }

    pub fn num_bits(&self) -> usize {
        self.net.spec().out_dim()
    }

    /// Network input rows for equalized samples; `h_abs(i)` is only read
    /// when the decoder takes its gain as an extra input.
    pub(crate) fn inputs(&self, samples: &[Complex64], h_abs: impl Fn(usize) -> f64) -> Array2<f64> {
        let cols = if self.gain_input { 3 } else { 2 };
        let mut out = Array2::zeros((samples.len(), cols));
        for (i, (mut row, y)) in out.outer_iter_mut().zip(samples).enumerate() {
            row[0] = y.re;
            row[1] = y.im;
            if self.gain_input {
                row[2] = h_abs(i);
            }
        }
        out
    }

    /// Per-bit probabilities for one equalized sample.
    pub fn decode(&self, equalized: Complex64, h: Complex64) -> Result<Vec<f64>> {
        if !(equalized.re.is_finite() && equalized.im.is_finite()) {
            return Err(Error::DegenerateInput("non-finite receiver input".into()));
        }
        let x = self.inputs(&[equalized], |_| h.norm());
        Ok(self.net.infer(x.view())?.into_raw_vec_and_offset().0)
    }

    /// Batched [`RxDecoder::decode`]; returns one row of probabilities per sample.
    pub fn decode_batch(&self, equalized: &[Complex64], h: Complex64) -> Result<Array2<f64>> {
        let x = self.inputs(equalized, |_| h.norm());
        self.net.infer(x.view())
    }

    pub(crate) fn strip_gain_column(&self, g_in: Array2<f64>) -> Array2<f64> {
        if self.gain_input {
            g_in.slice(s![.., 0..2]).to_owned()
        } else {
            g_in
        }
    }
}

/// Hard decision per bit: 1 where `p >= 0.5`.
pub fn hard_bits(probs: &[f64]) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= 0.5)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookEntry {
    pub pair: MessagePair,
    pub symbol: Complex64,
}

/// The labelled super-constellation: one symbol per message pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub k1: usize,
    pub k2: usize,
    pub power: f64,
    pub entries: Vec<CodebookEntry>,
    pub mean_power: f64,
}

impl Codebook {
    /// Entries must be in message-index order.
    pub fn new(k1: usize, k2: usize, power: f64, entries: Vec<CodebookEntry>) -> Result<Self> {
        if entries.len() != 1 << (k1 + k2) {
            return Err(Error::config(format!(
                "codebook needs {} entries, got {}",
                1usize << (k1 + k2),
                entries.len()
            )));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.pair.index() != i || e.pair.k1() != k1 || e.pair.k2() != k2 {
                return Err(Error::config(format!("codebook entry {i} is out of order")));
            }
            if !(e.symbol.re.is_finite() && e.symbol.im.is_finite()) {
                return Err(Error::config(format!("codebook entry {i} is not finite")));
            }
        }
        let mean_power =
            entries.iter().map(|e| e.symbol.norm_sqr()).sum::<f64>() / entries.len() as f64;
        Ok(Self {
            k1,
            k2,
            power,
            entries,
            mean_power,
        })
    }

    /// Builds a codebook from symbols listed in message-index order.
    pub fn from_symbols(k1: usize, k2: usize, power: f64, symbols: &[Complex64]) -> Result<Self> {
        let entries = symbols
            .iter()
            .enumerate()
            .map(|(i, &symbol)| CodebookEntry {
                pair: MessagePair::from_index(i, k1, k2),
                symbol,
            })
            .collect();
        Self::new(k1, k2, power, entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn symbols(&self) -> Vec<Complex64> {
        self.entries.iter().map(|e| e.symbol).collect()
    }

    pub fn symbol(&self, index: usize) -> Complex64 {
        self.entries[index].symbol
    }
}

/// Transmitter plus both receivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeNoma {
    pub config: ModelConfig,
    pub tx: TxEncoder,
    pub rx1: RxDecoder,
    pub rx2: RxDecoder,
}

impl AeNoma {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let tx = TxEncoder::new(&config, rng)?;
        let rx1 = RxDecoder::new(&config, User::Weak, rng)?;
        let rx2 = RxDecoder::new(&config, User::Strong, rng)?;
        Ok(Self {
            config,
            tx,
            rx1,
            rx2,
        })
    }

    pub fn rx(&self, user: User) -> &RxDecoder {
        match user {
            User::Weak => &self.rx1,
            User::Strong => &self.rx2,
        }
    }

    pub fn nets(&self) -> [&Mlp; 4] {
        [
            &self.tx.main_block,
            &self.tx.side_block,
            &self.rx1.net,
            &self.rx2.net,
        ]
    }

    pub fn nets_mut(&mut self) -> [&mut Mlp; 4] {
        [
            &mut self.tx.main_block,
            &mut self.tx.side_block,
            &mut self.rx1.net,
            &mut self.rx2.net,
        ]
    }

    fn locate(&self, mut index: usize) -> (usize, usize) {
        for (i, net) in self.nets().iter().enumerate() {
            if index < net.num_params() {
                return (i, index);
            }
            index -= net.num_params();
        }
        panic!("parameter index out of range");
    }
}

impl Parameterized for AeNoma {
    fn num_params(&self) -> usize {
        self.nets().iter().map(|n| n.num_params()).sum()
    }

    fn param(&self, index: usize) -> f64 {
        let (n, i) = self.locate(index);
        self.nets()[n].param(i)
    }

    fn set_param(&mut self, index: usize, value: f64) {
        let (n, i) = self.locate(index);
        self.nets_mut()[n].set_param(i, value);
    }
}
