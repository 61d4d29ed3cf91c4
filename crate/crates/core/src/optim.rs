//! Adam over named module parameters, and parameter averaging.

use std::collections::BTreeMap;

use mlcgan_autodiff::{Element, Gradients, Tensor};
use serde::{Deserialize, Serialize};

use crate::nn::Module;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.002, beta1: 0.0, beta2: 0.99, eps: 1e-8 }
    }
}

/// First and second moment estimates of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct Adam<T: Element> {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub t: u64,
    pub moments: BTreeMap<String, Moments<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, t: 0, moments: BTreeMap::new() }
    }

    /// One update of every parameter of `module` that has a gradient in
    /// `grads`. Returns the names of the updated parameters.
    pub fn step(&mut self, module: &mut impl Module<T>, grads: &Gradients<T>) -> Vec<String> {
        self.step_with(module, &mut |p| grads.get(p).cloned())
    }

    /// Like [`Adam::step`], with gradients supplied by a lookup.
    pub fn step_with(
        &mut self,
        module: &mut impl Module<T>,
        lookup: &mut dyn FnMut(&Tensor<T>) -> Option<Tensor<T>>,
    ) -> Vec<String> {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let step = lr / bc1;
        let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
        let (one, eps_t) = (T::one(), T::from_f64_lossy(eps));
        let (step_t, bc2_sqrt) = (T::from_f64_lossy(step), T::from_f64_lossy(bc2.sqrt()));
        let mut updated = Vec::new();
        let moments = &mut self.moments;
        module.visit_mut("", &mut |name, param| {
            let Some(g) = lookup(param) else { return };
            let n = param.numel();
            let entry = moments
                .entry(name.to_string())
                .or_insert_with(|| Moments { m: vec![T::zero(); n], v: vec![T::zero(); n] });
            let mut data = param.to_vec();
            for (((p, &g), m), v) in data.iter_mut().zip(g.data()).zip(&mut entry.m).zip(&mut entry.v) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= step_t * *m / ((*v).sqrt() / bc2_sqrt + eps_t);
            }
            *param = Tensor::param(data, param.shape());
            updated.push(name.to_string());
        });
        updated
    }
}

/// `avg ← decay·avg + (1 − decay)·live` for every parameter, matched by name.
/// Whether a parameter requires grad is kept from `avg`.
pub fn ema_update<T: Element, M: Module<T>>(avg: &mut M, live: &M, decay: f64) {
    let live: BTreeMap<String, Tensor<T>> = live.named_params().into_iter().collect();
    let d = T::from_f64_lossy(decay);
    let one = T::one();
    avg.visit_mut("", &mut |name, p| {
        let src = &live[name];
        let data = if decay == 0.0 {
            src.to_vec()
        } else {
            p.data().iter().zip(src.data()).map(|(&a, &l)| d * a + (one - d) * l).collect()
        };
        *p = if p.requires_grad() { Tensor::param(data, p.shape()) } else { Tensor::from_vec(data, p.shape()) };
    });
}

/// Overwrite the parameters of `dst` with those of `src`, matched by name.
pub fn copy_params<T: Element, M: Module<T>>(dst: &mut M, src: &M) {
    ema_update(dst, src, 0.0);
}
