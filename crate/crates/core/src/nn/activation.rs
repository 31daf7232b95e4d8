use serde::{Deserialize, Serialize};

/// Exponential linear unit: `x` for `x >= 0`, `exp(x) - 1` otherwise.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Standard logistic sigmoid `1 / (1 + exp(-x))`, evaluated without overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))`, evaluated without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Element-wise activation attached to a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Elu,
    Sigmoid,
    /// Strictly positive output; used for the transmitter's per-symbol gain.
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Elu => elu(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative at pre-activation `pre`, given the already computed output `post`.
    #[inline]
    pub fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Elu => {
                if pre >= 0.0 {
                    1.0
                } else {
                    post + 1.0
                }
            }
            Activation::Sigmoid => post * (1.0 - post),
            Activation::Softplus => sigmoid(pre),
        }
    }
}
