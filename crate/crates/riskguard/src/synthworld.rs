//! Deterministic synthetic oracle worlds.
//!
//! These stand in for real datasets: a classification world with an exact
//! cloud conditional law `p*(y|x) = softmax(W x / scale)` and a temperature-
//! and-noise-distorted edge model, and a segmentation-style multi-label
//! world feeding the FNR pipeline. Instances are i.i.d. by construction, so
//! random role assignment preserves the exchangeability every guarantee
//! rests on.
//!
//! Stream layout: the world's weight matrix is drawn once from stream 0 of
//! the world seed; instance `j` of a batch rooted at `stream_base` draws
//! everything it needs from stream `stream_base + j`. Batches rooted at
//! disjoint stream ranges are independent and can be generated in parallel.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::core::{make_prob_vector, Example, MultiLabelExample, RandomnessContract};
use crate::par;

/// Floor applied before taking logits of softmax outputs.
const LOGIT_EPS: f64 = 1e-12;

/// Configuration of the classification oracle world.
///
/// `edge_temperature < 1` makes the edge model overconfident, `> 1`
/// underconfident; `edge_logit_noise` perturbs its logits with Gaussian
/// noise of that standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationWorldConfig {
    pub label_count: usize,
    pub feature_dim: usize,
    pub logit_scale: f64,
    pub edge_temperature: f64,
    pub edge_logit_noise: f64,
    pub seed: u64,
}

/// A classification world with its weight matrix drawn once from the seed,
/// making `p*(y|x)` a fixed conditional law across all batches.
#[derive(Debug, Clone)]
pub struct ClassificationWorld {
    cfg: ClassificationWorldConfig,
    weights: Vec<f64>, // label_count x feature_dim, row-major
}

impl ClassificationWorld {
    pub fn new(cfg: ClassificationWorldConfig) -> Self {
        assert!(cfg.label_count >= 2, "need at least two labels");
        assert!(cfg.feature_dim >= 1, "need at least one feature");
        assert!(cfg.edge_temperature > 0.0, "temperature must be positive");
        assert!(cfg.edge_logit_noise >= 0.0, "noise must be non-negative");
        let contract = RandomnessContract::new(cfg.seed);
        let mut rng = contract.stream(0);
        let weights = (0..cfg.label_count * cfg.feature_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        ClassificationWorld { cfg, weights }
    }

    pub fn config(&self) -> &ClassificationWorldConfig {
        &self.cfg
    }

    /// Generates `n` i.i.d. examples rooted at `stream_base`.
    pub fn generate(&self, n: usize, stream_base: u64) -> Vec<Example> {
        let contract = RandomnessContract::new(self.cfg.seed);
        par::map_indexed(n, |j| {
            let mut rng = contract.stream(stream_base + j as u64);
            self.generate_one(j as u64, &mut rng)
        })
    }

    fn generate_one(&self, id: u64, rng: &mut ChaCha8Rng) -> Example {
        let cfg = &self.cfg;
        let features: Vec<f64> = (0..cfg.feature_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let logits: Vec<f64> = (0..cfg.label_count)
            .map(|y| {
                let row = &self.weights[y * cfg.feature_dim..(y + 1) * cfg.feature_dim];
                row.iter().zip(&features).map(|(w, x)| w * x).sum::<f64>()
                    / cfg.logit_scale
            })
            .collect();
        let cloud = softmax(&logits);

        let edge = if cfg.edge_temperature == 1.0 && cfg.edge_logit_noise == 0.0 {
            cloud.clone()
        } else {
            let edge_logits: Vec<f64> = cloud
                .iter()
                .map(|&p| {
                    let noise: f64 = if cfg.edge_logit_noise > 0.0 {
                        cfg.edge_logit_noise * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    };
                    p.max(LOGIT_EPS).ln() / cfg.edge_temperature + noise
                })
                .collect();
            softmax(&edge_logits)
        };

        let label = sample_label(&cloud, rng);
        Example {
            id,
            features,
            cloud_dist: make_prob_vector(&cloud).expect("softmax output is a distribution"),
            edge_dist: make_prob_vector(&edge).expect("softmax output is a distribution"),
            label: Some(label),
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

fn sample_label(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (y, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return y;
        }
    }
    probs.len() - 1
}

/// Generates `n` examples from the classification world config, instance `j`
/// rooted at stream `j + 1` of the world seed.
pub fn gen_classification(cfg: &ClassificationWorldConfig, n: usize) -> Vec<Example> {
    ClassificationWorld::new(*cfg).generate(n, 1)
}

/// Configuration of the segmentation-style multi-label world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelWorldConfig {
    pub items_per_instance: usize,
    pub positive_rate: f64,
    pub score_noise: f64,
    pub seed: u64,
}

/// The multi-label world: each item is positive independently with the
/// configured rate, and its score is the truth indicator plus clamped
/// Gaussian noise.
#[derive(Debug, Clone, Copy)]
pub struct MultiLabelWorld {
    cfg: MultiLabelWorldConfig,
}

impl MultiLabelWorld {
    pub fn new(cfg: MultiLabelWorldConfig) -> Self {
        assert!(cfg.items_per_instance >= 1, "need at least one item");
        assert!(
            cfg.positive_rate > 0.0 && cfg.positive_rate < 1.0,
            "positive rate must lie in (0, 1)"
        );
        assert!(cfg.score_noise >= 0.0, "noise must be non-negative");
        MultiLabelWorld { cfg }
    }

    pub fn config(&self) -> &MultiLabelWorldConfig {
        &self.cfg
    }

    pub fn generate(&self, n: usize, stream_base: u64) -> Vec<MultiLabelExample> {
        let contract = RandomnessContract::new(self.cfg.seed);
        let cfg = self.cfg;
        par::map_indexed(n, |j| {
            let mut rng = contract.stream(stream_base + j as u64);
            let mut item_scores = Vec::with_capacity(cfg.items_per_instance);
            let mut positives = std::collections::BTreeSet::new();
            for item in 0..cfg.items_per_instance {
                let positive = rng.random::<f64>() < cfg.positive_rate;
                if positive {
                    positives.insert(item);
                }
                let indicator = if positive { 1.0 } else { 0.0 };
                let noise: f64 = if cfg.score_noise > 0.0 {
                    cfg.score_noise * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                item_scores.push((indicator + noise).clamp(0.0, 1.0));
            }
            MultiLabelExample {
                id: j as u64,
                item_scores,
                positives,
            }
        })
    }
}

/// Generates `n` multi-label instances, instance `j` rooted at stream
/// `j + 1` of the world seed.
pub fn gen_multilabel(cfg: &MultiLabelWorldConfig, n: usize) -> Vec<MultiLabelExample> {
    MultiLabelWorld::new(*cfg).generate(n, 1)
}
