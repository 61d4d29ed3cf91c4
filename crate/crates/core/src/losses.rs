//! Logistic adversarial losses, the classification regularizer and R1.
//!
//! Every loss returns a rank-0 tensor averaged over the batch.

use mlcgan_autodiff::{grad, Element, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::AblationFlags;
use crate::discriminator::ScorePair;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub uncond: f64,
    pub clf: f64,
    pub r1: f64,
    pub wrong: f64,
    /// R1 is evaluated once every this many steps.
    pub r1_interval: u64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { uncond: 1.0, clf: 1.0, r1: 10.0, wrong: 1.0, r1_interval: 16 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("uncond", self.uncond), ("clf", self.clf), ("r1", self.r1), ("wrong", self.wrong)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        if self.r1_interval == 0 {
            return Err(Error::InvalidConfig("r1_interval must be positive".into()));
        }
        Ok(())
    }

    /// Weights with the ablation flags folded in.
    pub fn with_ablation(mut self, flags: &AblationFlags) -> Self {
        if flags.disable_cr {
            self.clf = 0.0;
        }
        if flags.disable_uncond {
            self.uncond = 0.0;
        }
        self
    }

    /// Whether step `step` (0-based) carries an R1 evaluation.
    pub fn is_r1_step(&self, step: u64) -> bool {
        self.r1 > 0.0 && (step + 1) % self.r1_interval == 0
    }
}

fn mean_softplus<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.softplus().mean_all()
}

/// `softplus(−s_c) + λ_uncond·softplus(−s_uc)`.
pub fn adversarial_g_loss<T: Element>(fake: &ScorePair<T>, weights: &LossWeights) -> Tensor<T> {
    let loss = mean_softplus(&fake.s_c.neg());
    match &fake.s_uc {
        Some(s_uc) if weights.uncond != 0.0 => loss.add(&mean_softplus(&s_uc.neg()).mul_scalar(weights.uncond)),
        _ => loss,
    }
}

/// Binary cross entropy between `sigmoid(logits)` and `labels`, averaged over
/// labels and batch.
pub fn classification_regularizer<T: Element>(labels: &Tensor<T>, logits: &Tensor<T>) -> Result<Tensor<T>> {
    if labels.shape() != logits.shape() {
        return Err(Error::dims("classifier logits", format!("{:?}", labels.shape()), format!("{:?}", logits.shape())));
    }
    Ok(logits.softplus().sub(&labels.mul(logits)).mean_all())
}

#[derive(Clone, Debug)]
pub struct GeneratorLoss<T: Element> {
    pub total: Tensor<T>,
    pub adversarial: Tensor<T>,
    /// Classification term before weighting, when evaluated.
    pub bce: Option<Tensor<T>>,
}

/// Adversarial loss plus `λ_clf` times the classification regularizer. With
/// `λ_clf = 0` the logits are ignored.
pub fn generator_loss<T: Element>(
    fake: &ScorePair<T>,
    labels: &Tensor<T>,
    clf_logits: Option<&Tensor<T>>,
    weights: &LossWeights,
) -> Result<GeneratorLoss<T>> {
    let adversarial = adversarial_g_loss(fake, weights);
    if weights.clf == 0.0 {
        return Ok(GeneratorLoss { total: adversarial.clone(), adversarial, bce: None });
    }
    let logits = clf_logits.ok_or_else(|| Error::InvalidConfig("lambda_clf > 0 needs classifier logits".into()))?;
    let bce = classification_regularizer(labels, logits)?;
    let total = adversarial.add(&bce.mul_scalar(weights.clf));
    Ok(GeneratorLoss { total, adversarial, bce: Some(bce) })
}

/// Fake, real and wrong-pair logistic losses. Wrong pairs only have a
/// conditional score.
pub fn discriminator_loss<T: Element>(
    real: &ScorePair<T>,
    fake: &ScorePair<T>,
    wrong_s_c: Option<&Tensor<T>>,
    weights: &LossWeights,
) -> Tensor<T> {
    let mut loss = mean_softplus(&real.s_c.neg()).add(&mean_softplus(&fake.s_c));
    if let Some(wrong) = wrong_s_c.filter(|_| weights.wrong != 0.0) {
        loss = loss.add(&mean_softplus(wrong).mul_scalar(weights.wrong));
    }
    if let (Some(r), Some(f)) = (&real.s_uc, &fake.s_uc) {
        if weights.uncond != 0.0 {
            let uncond = mean_softplus(&r.neg()).add(&mean_softplus(f));
            loss = loss.add(&uncond.mul_scalar(weights.uncond));
        }
    }
    loss
}

fn squared_grad_norm<T: Element>(score: &Tensor<T>, y: &Tensor<T>) -> Tensor<T> {
    match grad(&score.sum_all(), &[y], true).remove(0) {
        Some(g) => g.square().sum_all(),
        None => Tensor::scalar(0.0),
    }
}

/// `(γ/2)·mean_n(‖∇_y s_c‖² + ‖∇_y s_uc‖²)` on real images. The graph is kept
/// so the penalty can be differentiated with respect to the critic.
pub fn r1_penalty<T: Element>(
    critic: impl FnOnce(&Tensor<T>) -> Result<ScorePair<T>>,
    y_real: &Tensor<T>,
    gamma: f64,
) -> Result<Tensor<T>> {
    let n = y_real.dim(0) as f64;
    let y = y_real.detach().requires_grad_leaf();
    let scores = critic(&y)?;
    let mut total = squared_grad_norm(&scores.s_c, &y);
    if let Some(s_uc) = &scores.s_uc {
        total = total.add(&squared_grad_norm(s_uc, &y));
    }
    Ok(total.mul_scalar(gamma / (2.0 * n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn pair(s_c: f64, s_uc: f64) -> ScorePair<f64> {
        ScorePair::from_values(&[s_c], Some(&[s_uc]))
    }

    fn softplus(x: f64) -> f64 {
        x.exp().ln_1p()
    }

    #[test]
    fn g_adversarial_cases() {
        let w = LossWeights::default();
        assert!((adversarial_g_loss(&pair(0.0, 0.0), &w).item() - 2.0 * LN_2).abs() < 1e-12);
        let expect = softplus(-1.0) + softplus(1.0);
        assert!((adversarial_g_loss(&pair(1.0, -1.0), &w).item() - expect).abs() < 1e-12);
        assert!((expect - 1.6265).abs() < 1e-3);
        let big = adversarial_g_loss(&pair(60.0, 0.5), &w).item();
        assert!((big - softplus(-0.5)).abs() < 1e-12);
    }

    #[test]
    fn bce_cases() {
        let x = Tensor::<f64>::from_f64s(&[1.0, 0.0], &[1, 2]);
        let zero = Tensor::<f64>::zeros(&[1, 2]);
        assert!((classification_regularizer(&x, &zero).unwrap().item() - LN_2).abs() < 1e-12);
        let sure = Tensor::<f64>::from_f64s(&[60.0, -60.0], &[1, 2]);
        assert!(classification_regularizer(&x, &sure).unwrap().item() < 1e-20);
        assert!(classification_regularizer(&x, &Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn generator_total() {
        let w = LossWeights::default();
        let x = Tensor::<f64>::from_f64s(&[1.0, 0.0, 1.0], &[1, 3]);
        let logits = Tensor::zeros(&[1, 3]);
        let g = generator_loss(&pair(0.0, 0.0), &x, Some(&logits), &w).unwrap();
        assert!((g.total.item() - 3.0 * LN_2).abs() < 1e-12);
        let off = LossWeights { clf: 0.0, ..w };
        let g = generator_loss(&pair(0.3, -0.2), &x, None, &off).unwrap();
        assert!(g.total.bit_eq(&adversarial_g_loss(&pair(0.3, -0.2), &off)));
        assert!(g.bce.is_none());
        let only_c = LossWeights { uncond: 0.0, clf: 0.0, ..w };
        assert!((generator_loss(&pair(0.0, 5.0), &x, None, &only_c).unwrap().total.item() - LN_2).abs() < 1e-12);
    }

    #[test]
    fn discriminator_cases() {
        let w = LossWeights::default();
        let zero = pair(0.0, 0.0);
        let wrong = Tensor::<f64>::zeros(&[1]);
        assert!((discriminator_loss(&zero, &zero, Some(&wrong), &w).item() - 5.0 * LN_2).abs() < 1e-12);
        let cond_only = LossWeights { uncond: 0.0, wrong: 0.0, ..w };
        assert!((discriminator_loss(&zero, &zero, Some(&wrong), &cond_only).item() - 2.0 * LN_2).abs() < 1e-12);
        let perfect = discriminator_loss(&pair(60.0, 60.0), &pair(-60.0, -60.0), Some(&wrong.add_scalar(-60.0)), &w);
        assert!(perfect.item() < 1e-20);
    }

    #[test]
    fn r1_linear_critic() {
        let a = 1.5;
        let critic = |y: &Tensor<f64>| Ok(ScorePair::new(y.reshape(&[1]).mul_scalar(a), Some(y.reshape(&[1]).mul_scalar(a))));
        let y = Tensor::<f64>::from_f64s(&[0.3], &[1, 1, 1, 1]);
        let p = r1_penalty(critic, &y, 10.0).unwrap().item();
        assert!((p - 2.0 * 5.0 * a * a).abs() < 1e-12);
        let constant = |_: &Tensor<f64>| Ok(ScorePair::from_values(&[2.0], None));
        assert_eq!(r1_penalty(constant, &y, 10.0).unwrap().item(), 0.0);
    }

    #[test]
    fn ablation_folds_into_weights() {
        let flags = AblationFlags { disable_cr: true, disable_uncond: true, ..Default::default() };
        let w = LossWeights::default().with_ablation(&flags);
        assert_eq!((w.clf, w.uncond), (0.0, 0.0));
        assert!(w.is_r1_step(15) && !w.is_r1_step(16));
    }
}
