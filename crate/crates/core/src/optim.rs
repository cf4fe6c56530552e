//! Adaptive-moment (Adam) parameter updates with bias correction.
//!
//! Moments are keyed by parameter name in a sorted map so update order,
//! serialization, and resume are all deterministic. Parameters that receive
//! no gradient in a step are left untouched, moments included.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, t: 0, moments: BTreeMap::new() }
    }

    /// Advances the shared step counter; call once per optimization step,
    /// before the per-parameter updates.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One Adam update for a single parameter tensor. `learning_rate`
    /// overrides the configured rate when per-group rates are in play.
    pub fn update(&mut self, name: &str, learning_rate: f64, param: &mut [f64], grad: &[f64]) {
        assert_eq!(param.len(), grad.len(), "gradient size mismatch for {}", name);
        let entry = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
            m: vec![0.0; param.len()],
            v: vec![0.0; param.len()],
        });
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..param.len() {
            entry.m[i] = b1 * entry.m[i] + (1.0 - b1) * grad[i];
            entry.v[i] = b2 * entry.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = entry.m[i] / bc1;
            let v_hat = entry.v[i] / bc2;
            param[i] -= learning_rate * m_hat / (v_hat.sqrt() + self.config.eps);
        }
    }

    /// Moment snapshot in name order, for checkpointing.
    pub fn export_moments(&self) -> Vec<(String, Vec<f64>, Vec<f64>)> {
        self.moments
            .iter()
            .map(|(name, mo)| (name.clone(), mo.m.clone(), mo.v.clone()))
            .collect()
    }

    pub fn restore(config: AdamConfig, t: u64, moments: Vec<(String, Vec<f64>, Vec<f64>)>) -> Self {
        Adam {
            config,
            t,
            moments: moments
                .into_iter()
                .map(|(name, m, v)| (name, Moments { m, v }))
                .collect(),
        }
    }
}
