use serde::{Deserialize, Serialize};

use crate::reasoner::ModelParams;

/// Hyperparameters of the rectified adaptive-moment optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerInfo {
    pub name: String,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates fall back to un-normalized momentum while the variance
    /// length estimate is at or below this value.
    pub rectification_threshold: f64,
}

impl OptimizerInfo {
    pub fn radam(learning_rate: f64) -> Self {
        OptimizerInfo {
            name: "radam".into(),
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            rectification_threshold: 5.0,
        }
    }
}

/// First and second moments shaped exactly like the parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub info: OptimizerInfo,
    pub step: u64,
    pub first: ModelParams,
    pub second: ModelParams,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, info: OptimizerInfo) -> Self {
        OptimizerState {
            info,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let OptimizerInfo {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
            rectification_threshold,
            ..
        } = self.info;
        let t = self.step as f64;
        let bias1 = 1.0 - b1.powf(t);
        let bias2 = 1.0 - b2.powf(t);
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let rho = rho_inf - 2.0 * t * b2.powf(t) / bias2;
        let rect = (rho > rectification_threshold).then(|| {
            ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt()
        });

        let blocks = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in blocks {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                let m_hat = m.data[i] / bias1;
                p.data[i] -= match rect {
                    Some(r) => lr * r * m_hat * bias2.sqrt() / (v.data[i].sqrt() + eps),
                    None => lr * m_hat,
                };
            }
        }
    }
}
