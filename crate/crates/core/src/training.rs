//! End-to-end training with the adaptive weighted cross-entropy loss.
//!
//! Each iteration draws a fresh batch of message pairs, one strong-user
//! gain per sample, and channel noise at the training SNR. Receiver `k`
//! is scored with binary cross-entropy `L_k`; the total `w1 L1 + w2 L2`
//! puts weight `w` on whichever user currently has the larger loss. The
//! weights are constants for differentiation, so `L1` only reaches Rx1 and
//! the transmitter, and `L2` only Rx2 and the transmitter.

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_h2, snr_to_sigma2, ChannelDistribution, RngStream, User};
use crate::model::{weighted_scale, weighted_scale_backward, AeNoma, MessagePair, ModelConfig, NormalizationMode};
use crate::nn::{grad_check, AdamConfig, AdamState, GradCheckReport, MlpGrads};
use crate::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

const STREAM_INIT: u64 = 0;
const STREAM_MESSAGES: u64 = 1;
const STREAM_GAINS: u64 = 2;
const STREAM_NOISE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    /// One iteration is one Adam step on one fresh batch.
    pub iterations: u64,
    pub loss_weight: f64,
    pub snr1_train_db: f64,
    pub channel: ChannelDistribution,
    pub seed: u64,
    pub adam: AdamConfig,
    pub model: ModelConfig,
    /// Keep every n-th iteration in the loss history.
    pub history_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Preset::Case1.config()
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config(format!("batch size must be >= 2, got {}", self.batch_size)));
        }
        if !(self.loss_weight >= 1.0) || !self.loss_weight.is_finite() {
            return Err(Error::config(format!("loss weight must be >= 1, got {}", self.loss_weight)));
        }
        if !self.snr1_train_db.is_finite() {
            return Err(Error::config("training SNR must be finite"));
        }
        if self.history_every == 0 {
            return Err(Error::config("history_every must be >= 1"));
        }
        self.channel.validate()?;
        self.adam.validate()?;
        self.model.validate()
    }

    pub fn sigma2(&self) -> Result<f64> {
        snr_to_sigma2(
            self.snr1_train_db,
            Complex64::new(self.channel.h1(), 0.0),
            self.model.power,
        )
    }
}

/// The three published training scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// `h2 = 2` fixed, `w = 10`.
    Case1,
    /// `h2 ~ U[1, 3]`, `w = 20`.
    Case2,
    /// `h2 ~ U[8, 12]`, `w = 15`.
    Case3,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "case1" => Ok(Preset::Case1),
            "case2" => Ok(Preset::Case2),
            "case3" => Ok(Preset::Case3),
            other => Err(Error::config(format!("unknown preset {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Case1 => "case1",
            Preset::Case2 => "case2",
            Preset::Case3 => "case3",
        }
    }

    pub fn config(self) -> TrainingConfig {
        let (channel, w) = match self {
            Preset::Case1 => (ChannelDistribution::Fixed { h1: 1.0, h2: 2.0 }, 10.0),
            Preset::Case2 => (
                ChannelDistribution::Uniform {
                    h1: 1.0,
                    h_min: 1.0,
                    h_max: 3.0,
                },
                20.0,
            ),
            Preset::Case3 => (
                ChannelDistribution::Uniform {
                    h1: 1.0,
                    h_min: 8.0,
                    h_max: 12.0,
                },
                15.0,
            ),
        };
        TrainingConfig {
            batch_size: 1024,
            iterations: 150_000,
            loss_weight: w,
            snr1_train_db: 10.0,
            channel,
            seed: 0,
            adam: AdamConfig::default(),
            model: ModelConfig::default(),
            history_every: 1,
        }
    }

    /// Strong-user gain used when evaluating this scenario.
    pub fn test_h2(self) -> f64 {
        match self {
            Preset::Case1 | Preset::Case2 => 2.0,
            Preset::Case3 => 10.0,
        }
    }
}

/// Per-iteration loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss1: f64,
    pub loss2: f64,
    pub w1: f64,
    pub w2: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(loss1: f64, loss2: f64, (w1, w2): (f64, f64)) -> Self {
        Self {
            loss1,
            loss2,
            w1,
            w2,
            total: w1 * loss1 + w2 * loss2,
        }
    }
}

/// Binary cross-entropy of one bit vector, `-sum t ln p + (1 - t) ln(1 - p)`.
pub fn bce(targets: &[u8], probs: &[f64]) -> Result<f64> {
    if targets.len() != probs.len() {
        return Err(Error::config(format!(
            "{} targets for {} probabilities",
            targets.len(),
            probs.len()
        )));
    }
    Ok(targets
        .iter()
        .zip(probs)
        .map(|(&t, &p)| bit_bce(t as f64, p))
        .sum())
}

#[inline]
fn bit_bce(t: f64, p: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

/// Derivative of [`bit_bce`] in `p`; zero where the clamp is active.
#[inline]
fn bit_bce_grad(t: f64, p: f64) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        return 0.0;
    }
    -t / p + (1.0 - t) / (1.0 - p)
}

/// `(w, 1)` when `loss1 >= loss2`, else `(1, w)`.
pub fn adaptive_weights(loss1: f64, loss2: f64, w: f64) -> (f64, f64) {
    if loss1 >= loss2 {
        (w, 1.0)
    } else {
        (1.0, w)
    }
}

/// Everything random about one training step, drawn up front.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub messages: Vec<usize>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    /// `n_k` before equalization, `CN(0, sigma^2)`.
    pub noise1: Vec<Complex64>,
    pub noise2: Vec<Complex64>,
}

impl Batch {
    pub fn sample(
        config: &TrainingConfig,
        sigma2: f64,
        messages: &mut RngStream,
        gains: &mut RngStream,
        noise: &mut RngStream,
    ) -> Self {
        let n = config.batch_size;
        let m = config.model.num_messages();
        let h1 = config.channel.h1();
        Self {
            messages: (0..n).map(|_| messages.below(m)).collect(),
            h1: vec![h1; n],
            h2: (0..n).map(|_| sample_h2(&config.channel, gains)).collect(),
            noise1: (0..n).map(|_| noise.complex_normal(sigma2)).collect(),
            noise2: (0..n).map(|_| noise.complex_normal(sigma2)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    fn gains(&self, user: User) -> &[f64] {
        match user {
            User::Weak => &self.h1,
            User::Strong => &self.h2,
        }
    }

    fn noise(&self, user: User) -> &[Complex64] {
        match user {
            User::Weak => &self.noise1,
            User::Strong => &self.noise2,
        }
    }
}

/// Gradients for the four networks, in [`AeNoma::nets`] order.
#[derive(Debug, Clone)]
pub struct SystemGrads(pub [MlpGrads; 4]);

impl SystemGrads {
    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().flat_map(|g| g.iter()).collect()
    }
}

/// Mean batch BCE for one user and `dL/dp`, scaled by `weight`.
fn user_loss(probs: &Array2<f64>, targets: &Array2<f64>, weight: f64) -> (f64, Array2<f64>) {
    let n = probs.nrows() as f64;
    let loss = probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| bit_bce(t, p))
        .sum::<f64>()
        / n;
    let mut grad = Array2::zeros(probs.raw_dim());
    ndarray::Zip::from(&mut grad)
        .and(probs)
        .and(targets)
        .for_each(|g, &p, &t| *g = weight * bit_bce_grad(t, p) / n);
    (loss, grad)
}

fn targets(batch: &Batch, config: &ModelConfig, user: User) -> Array2<f64> {
    let k = config.bits(user);
    let mut t = Array2::zeros((batch.len(), k));
    for (mut row, &m) in t.outer_iter_mut().zip(&batch.messages) {
        let pair = MessagePair::from_index(m, config.k1, config.k2);
        for (dst, &b) in row.iter_mut().zip(pair.bits(user)) {
            *dst = b as f64;
        }
    }
    t
}

/// Loss and exact gradients of the full system on a fixed batch.
///
/// With `weights = None` the adaptive rule picks `(w1, w2)` from this
/// batch's losses; passing explicit weights isolates one user's term.
pub fn loss_and_gradients(
    system: &AeNoma,
    batch: &Batch,
    loss_weight: f64,
    weights: Option<(f64, f64)>,
) -> Result<(LossBreakdown, SystemGrads)> {
    let cfg = &system.config;
    let m = cfg.num_messages();
    let n = batch.len();
    if n == 0 {
        return Err(Error::DegenerateInput("empty training batch".into()));
    }

    // Transmitter on every distinct message; batch symbols are lookups.
    let tx_fwd = system.tx.forward_all()?;
    let norm_weights = match cfg.normalization {
        NormalizationMode::Codebook => vec![1.0 / m as f64; m],
        NormalizationMode::Batch => {
            let mut w = vec![0.0; m];
            for &i in &batch.messages {
                w[i] += 1.0 / n as f64;
            }
            w
        }
    };
    let raw = tx_fwd.raw.view();
    let (scale, s) = weighted_scale(&raw, &norm_weights, cfg.power)?;
    let x: Vec<Complex64> = batch
        .messages
        .iter()
        .map(|&i| Complex64::new(raw[(i, 0)], raw[(i, 1)]) * scale)
        .collect();

    // Receivers on their own equalized samples.
    let mut forward = Vec::with_capacity(2);
    for user in User::BOTH {
        let rx = system.rx(user);
        let gains = batch.gains(user);
        let noise = batch.noise(user);
        let r: Vec<Complex64> = (0..n)
            .map(|i| {
                let h = Complex64::new(gains[i], 0.0);
                (h * x[i] + noise[i]) / h
            })
            .collect();
        let input = rx.inputs(&r, |i| gains[i].abs());
        let (probs, tape) = rx.net.forward(input.view())?;
        forward.push((probs, tape));
    }
    let t1 = targets(batch, cfg, User::Weak);
    let t2 = targets(batch, cfg, User::Strong);
    let (loss1, _) = user_loss(&forward[0].0, &t1, 1.0);
    let (loss2, _) = user_loss(&forward[1].0, &t2, 1.0);
    let w = weights.unwrap_or_else(|| adaptive_weights(loss1, loss2, loss_weight));
    let breakdown = LossBreakdown::new(loss1, loss2, w);

    let (_, up1) = user_loss(&forward[0].0, &t1, w.0);
    let (_, up2) = user_loss(&forward[1].0, &t2, w.1);
    let (g_rx1, gin1) = system.rx1.net.backward(&forward[0].1, up1.view())?;
    let (g_rx2, gin2) = system.rx2.net.backward(&forward[1].1, up2.view())?;
    let gin1 = system.rx1.strip_gain_column(gin1);
    let gin2 = system.rx2.strip_gain_column(gin2);

    // r = x + n/h, so dL/dx = dL/dr1 + dL/dr2; aggregate per message.
    let mut g_msg = Array2::<f64>::zeros((m, 2));
    for (i, &msg) in batch.messages.iter().enumerate() {
        g_msg[(msg, 0)] += gin1[(i, 0)] + gin2[(i, 0)];
        g_msg[(msg, 1)] += gin1[(i, 1)] + gin2[(i, 1)];
    }
    let g_raw = weighted_scale_backward(&raw, &norm_weights, scale, s, &g_msg.view());
    let (g_main, g_side) = system.tx.backward(&tx_fwd, g_raw.view())?;
    Ok((breakdown, SystemGrads([g_main, g_side, g_rx1, g_rx2])))
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: u64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Complete training state at some iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config: TrainingConfig,
    pub iteration: u64,
    pub system: AeNoma,
    pub adam: Vec<AdamState>,
    pub history: Vec<HistoryRow>,
}

/// Stateful training loop.
pub struct Trainer {
    config: TrainingConfig,
    system: AeNoma,
    adam: Vec<AdamState>,
    iteration: u64,
    sigma2: f64,
    messages: RngStream,
    gains: RngStream,
    noise: RngStream,
    history: Vec<HistoryRow>,
}

impl Trainer {
    pub fn new(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        init.set_stream(STREAM_INIT);
        let system = AeNoma::new(config.model.clone(), &mut init)?;
        let adam = system
            .nets()
            .iter()
            .map(|n| AdamState::new(config.adam, n.num_params()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sigma2: config.sigma2()?,
            messages: RngStream::new(config.seed, STREAM_MESSAGES),
            gains: RngStream::new(config.seed, STREAM_GAINS),
            noise: RngStream::new(config.seed, STREAM_NOISE),
            config,
            system,
            adam,
            iteration: 0,
            history: Vec::new(),
        })
    }

    pub fn system(&self) -> &AeNoma {
        &self.system
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    /// Samples a batch, backpropagates the weighted loss and takes one Adam step.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let batch = Batch::sample(
            &self.config,
            self.sigma2,
            &mut self.messages,
            &mut self.gains,
            &mut self.noise,
        );
        let (loss, grads) = loss_and_gradients(&self.system, &batch, self.config.loss_weight, None)
            .map_err(|e| match e {
                Error::DegenerateInput(message) => Error::Numeric {
                    iteration: self.iteration,
                    message,
                    last_checkpoint: None,
                },
                other => other,
            })?;
        if !loss.total.is_finite() {
            return Err(Error::Numeric {
                iteration: self.iteration,
                message: format!("non-finite loss {loss:?}"),
                last_checkpoint: None,
            });
        }
        let flat: Vec<Vec<f64>> = grads.0.iter().map(|g| g.to_vec()).collect();
        if let Some(i) = flat.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric {
                iteration: self.iteration,
                message: format!("non-finite gradient in network {i}"),
                last_checkpoint: None,
            });
        }
        for ((net, state), g) in self.system.nets_mut().into_iter().zip(&mut self.adam).zip(&flat) {
            state.update(net.params_mut(), g).map_err(|e| match e {
                Error::Numeric { message, .. } => Error::Numeric {
                    iteration: self.iteration,
                    message,
                    last_checkpoint: None,
                },
                other => other,
            })?;
        }
        if self.iteration.is_multiple_of(self.config.history_every) {
            self.history.push(HistoryRow {
                iteration: self.iteration,
                loss,
            });
        }
        self.iteration += 1;
        Ok(loss)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            iteration: self.iteration,
            system: self.system.clone(),
            adam: self.adam.clone(),
            history: self.history.clone(),
        }
    }

    /// Runs the remaining iterations, calling `on_checkpoint` every
    /// `checkpoint_every` iterations (if set).
    pub fn run<F>(&mut self, checkpoint_every: Option<u64>, mut on_checkpoint: F) -> Result<Checkpoint>
    where
        F: FnMut(&Checkpoint) -> Result<()>,
    {
        while self.iteration < self.config.iterations {
            self.step()?;
            if let Some(every) = checkpoint_every.filter(|&e| e > 0) {
                if self.iteration.is_multiple_of(every) && self.iteration < self.config.iterations {
                    on_checkpoint(&self.checkpoint())?;
                }
            }
        }
        Ok(self.checkpoint())
    }
}

/// Trains from scratch for `config.iterations` steps.
pub fn train(config: TrainingConfig) -> Result<Checkpoint> {
    Trainer::new(config)?.run(None, |_| Ok(()))
}

/// Adapter so [`crate::nn::grad_check`] can probe [`loss_and_gradients`].
pub fn system_loss(system: &AeNoma, batch: &Batch, loss_weight: f64, weights: (f64, f64)) -> Result<(f64, Vec<f64>)> {
    let (l, g) = loss_and_gradients(system, batch, loss_weight, Some(weights))?;
    Ok((l.total, g.to_vec()))
}

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_BATCH: usize = 4;

/// Finite-difference check of every parameter of a freshly initialized
/// system on a small batch drawn at the training SNR.
pub fn gradient_check(config: &TrainingConfig) -> Result<GradCheckReport> {
    let config = TrainingConfig {
        batch_size: GRADCHECK_BATCH,
        ..config.clone()
    };
    let trainer = Trainer::new(config.clone())?;
    let batch = Batch::sample(
        &config,
        config.sigma2()?,
        &mut RngStream::new(config.seed, STREAM_MESSAGES),
        &mut RngStream::new(config.seed, STREAM_GAINS),
        &mut RngStream::new(config.seed, STREAM_NOISE),
    );
    let (l, _) = loss_and_gradients(trainer.system(), &batch, config.loss_weight, None)?;
    let mut system = trainer.system().clone();
    grad_check(
        &mut system,
        |s| system_loss(s, &batch, config.loss_weight, (l.w1, l.w2)),
        GRADCHECK_EPS,
    )
}
