//! Loss modification `y = x(1 − e^{−x})` and uncertainty-based dynamic weighting.

use serde::{Deserialize, Serialize};

use crate::encoder::Adam;
use crate::error::Result;
use crate::tensor::DiffTensor;

/// `x (1 − e^{−x})`: close to `x` for large `x`, flat at 0, and rising steeply for negative `x`.
pub fn modify(x: f64) -> f64 {
    x * (1.0 - (-x).exp())
}

/// Derivative of [`modify`]: `1 − e^{−x}(1 − x)`.
pub fn modify_grad(x: f64) -> f64 {
    1.0 - (-x).exp() * (1.0 - x)
}

/// [`modify`] on a tape scalar.
pub fn modify_t(x: DiffTensor<'_>) -> Result<DiffTensor<'_>> {
    x.mul(x.neg().exp().neg().add_scalar(1.0))
}

/// Update rule for the log-deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightUpdate {
    /// Plain gradient descent.
    Sgd,
    /// Adam; bounds each step by roughly `lr_eta` even when a loss is huge.
    #[default]
    Adam,
}

/// Learnable log-deviations `s = log σ` of the two loss terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicWeights {
    pub s_clt: f64,
    pub s_sp: f64,
    pub lr_eta: f64,
    #[serde(default)]
    pub update: WeightUpdate,
    #[serde(skip)]
    adam: Option<Adam>,
}

impl DynamicWeights {
    pub fn new(lr_eta: f64) -> Self {
        Self::with_update(lr_eta, WeightUpdate::default())
    }

    pub fn with_update(lr_eta: f64, update: WeightUpdate) -> Self {
        Self {
            s_clt: 0.0,
            s_sp: 0.0,
            lr_eta,
            update,
            adam: None,
        }
    }

    pub fn sigma_clt(&self) -> f64 {
        self.s_clt.exp()
    }

    pub fn sigma_sp(&self) -> f64 {
        self.s_sp.exp()
    }

    /// Value of the combined objective for already-modified losses.
    pub fn total(&self, l_clt: f64, l_sp: f64) -> f64 {
        0.5 * (-2.0 * self.s_clt).exp() * l_clt + 0.5 * (-2.0 * self.s_sp).exp() * l_sp + self.s_clt + self.s_sp
    }

    /// Gradient of [`Self::total`] with respect to `(s_clt, s_sp)`.
    pub fn grad(&self, l_clt: f64, l_sp: f64) -> (f64, f64) {
        (
            1.0 - (-2.0 * self.s_clt).exp() * l_clt,
            1.0 - (-2.0 * self.s_sp).exp() * l_sp,
        )
    }

    /// One update with the dedicated learning rate.
    pub fn step(&mut self, g_clt: f64, g_sp: f64) {
        match self.update {
            WeightUpdate::Sgd => {
                self.s_clt -= self.lr_eta * g_clt;
                self.s_sp -= self.lr_eta * g_sp;
            }
            WeightUpdate::Adam => {
                let lr = self.lr_eta;
                let adam = self.adam.get_or_insert_with(|| Adam::new(2, lr));
                let mut s = [self.s_clt, self.s_sp];
                adam.step(&mut s, &[g_clt, g_sp]);
                [self.s_clt, self.s_sp] = s;
            }
        }
    }
}

/// `e^{−2 s_clt} ℓ_clt / 2 + e^{−2 s_sp} ℓ_sp / 2 + s_clt + s_sp` with
/// `ℓ = modify(L)`. `s_clt` and `s_sp` are scalar tensors so gradients reach them.
pub fn spclt_total<'t>(
    l_clt: DiffTensor<'t>,
    l_sp: DiffTensor<'t>,
    s_clt: DiffTensor<'t>,
    s_sp: DiffTensor<'t>,
) -> Result<DiffTensor<'t>> {
    let term = |l: DiffTensor<'t>, s: DiffTensor<'t>| -> Result<DiffTensor<'t>> {
        s.mul_scalar(-2.0).exp().mul(modify_t(l)?)?.mul_scalar(0.5).add(s)
    };
    term(l_clt, s_clt)?.add(term(l_sp, s_sp)?)
}
