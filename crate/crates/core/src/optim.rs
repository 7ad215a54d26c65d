//! AdamW with a linear warmup / linear decay learning-rate schedule.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{ClassifierHead, Gradients, Parameters};
use crate::{Error, Matrix, Result};

/// Moment and decay coefficients. Defaults follow the RoBERTa-base
/// pretraining recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.98, eps: 1e-6, weight_decay: 0.01 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidTrainConfig(alloc::format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Linear warmup to `peak` over `warmup` steps, then linear decay that
/// reaches `peak / (total - warmup)` on the last step. Steps count from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub peak: f64,
    pub warmup: u64,
    pub total: u64,
}

impl LinearSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        if step <= self.warmup {
            return self.peak * step as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup).max(1);
        let left = (self.total + 1).saturating_sub(step);
        self.peak * left as f64 / span as f64
    }
}

/// Biases and normalization parameters are exempt from weight decay.
pub fn decays(name: &str) -> bool {
    !(name.ends_with(".bias") || name.ends_with(".gamma") || name.ends_with(".beta") || name == "mlm_head.bias")
}

#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl AdamW {
    /// Zero moments shaped like `params` (and `head`, when fine-tuning).
    pub fn new(cfg: AdamWConfig, params: &Parameters, head: Option<&ClassifierHead>) -> Self {
        let mut shapes: Vec<Matrix> = params.named().into_iter().map(|(_, m)| Matrix::zeros_like(m)).collect();
        if let Some(h) = head {
            shapes.push(Matrix::zeros_like(&h.weight));
            shapes.push(Matrix::zeros_like(&h.bias));
        }
        Self { cfg, m: shapes.clone(), v: shapes, t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update with learning rate `lr`.
    pub fn step(&mut self, params: &mut Parameters, head: Option<&mut ClassifierHead>, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - libm::pow(c.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.t as f64);
        let mut targets: Vec<(bool, &mut Matrix)> =
            params.named_mut().into_iter().map(|(n, m)| (decays(&n), m)).collect();
        let mut sources: Vec<&Matrix> = grads.params.named().into_iter().map(|(_, m)| m).collect();
        if let (Some(h), Some(gh)) = (head, grads.head.as_ref()) {
            targets.push((true, &mut h.weight));
            targets.push((false, &mut h.bias));
            sources.push(&gh.weight);
            sources.push(&gh.bias);
        }
        assert_eq!(targets.len(), self.m.len(), "optimizer state does not match parameters");
        for (i, ((decay, w), g)) in targets.into_iter().zip(sources).enumerate() {
            let wd = if decay { c.weight_decay } else { 0.0 };
            let (m, v) = (self.m[i].as_mut_slice(), self.v[i].as_mut_slice());
            for (((w, &g), m), v) in w.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let update = (*m / bc1) / (libm::sqrt(*v / bc2) + c.eps);
                *w -= lr * (update + wd * *w);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn schedule_shape() {
        let s = LinearSchedule { peak: 1.0, warmup: 4, total: 12 };
        let lrs: Vec<f64> = (1..=12).map(|t| s.lr(t)).collect();
        assert_eq!(&lrs[..4], &[0.25, 0.5, 0.75, 1.0]);
        assert_eq!(lrs[4], 1.0);
        assert_eq!(lrs[11], 1.0 / 8.0);
        assert!(lrs[4..].windows(2).all(|w| w[1] < w[0]));
        let flat = LinearSchedule { peak: 2.0, warmup: 0, total: 1 };
        assert_eq!(flat.lr(1), 2.0);
    }

    #[test]
    fn decay_exemptions() {
        assert!(decays("layers.0.attention.query.weight"));
        assert!(decays("embeddings.token"));
        assert!(!decays("layers.1.ffn.output.bias"));
        assert!(!decays("embeddings.norm.gamma"));
        assert!(!decays("mlm_head.bias"));
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        // With bias correction the first Adam step is lr · g/(|g| + eps').
        let cfg = ModelConfig::tiny(5);
        let mut p = Parameters::zeros(&cfg);
        let mut g = Gradients { params: p.zeros_like(), head: None };
        g.params.embedding_norm.beta.set(0, 0, 3.0);
        g.params.token_embedding.set(1, 1, -2.0);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() }, &p, None);
        opt.step(&mut p, None, &g, 0.1);
        let expect = |g: f64| -0.1 * g / (g.abs() + 1e-6);
        assert!((p.embedding_norm.beta.get(0, 0) - expect(3.0)).abs() < 1e-15);
        assert!((p.token_embedding.get(1, 1) - expect(-2.0)).abs() < 1e-15);
        assert_eq!(p.token_embedding.get(0, 0), 0.0);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn weight_decay_skips_biases() {
        let cfg = ModelConfig::tiny(5);
        let mut p = Parameters::zeros(&cfg);
        p.token_embedding.fill(1.0);
        p.embedding_norm.beta.fill(1.0);
        let g = Gradients { params: p.zeros_like(), head: None };
        let mut opt = AdamW::new(AdamWConfig::default(), &p, None);
        opt.step(&mut p, None, &g, 0.5);
        assert!((p.token_embedding.get(0, 0) - (1.0 - 0.5 * 0.01)).abs() < 1e-15);
        assert_eq!(p.embedding_norm.beta.get(0, 0), 1.0);
    }
}
