//! Fully connected share-regression network trained with Adam on mean
//! squared error.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{Adam, MlpStack};
use super::{
    EpochLoss, FeatureMatrix, ModelArtifact, ModelError, ModelFamily, ModelParams, TrainMeta,
    ARTIFACT_FORMAT_VERSION,
};

pub use super::nn::Activation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    /// Hidden layer widths; empty degenerates to a linear model.
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// In-training holdout used only for the validation loss curve.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![64, 32],
            activation: Activation::Relu,
            epochs: 800,
            batch_size: 256,
            learning_rate: 1e-3,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs < 1 {
            return Err(ModelError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.hidden_sizes.iter().any(|&h| h < 1) {
            return Err(ModelError::InvalidConfig(
                "hidden sizes must each be >= 1".into(),
            ));
        }
        if self.batch_size < 1 {
            return Err(ModelError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ModelError::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(ModelError::InvalidConfig(
                "val_fraction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpParams {
    pub net: MlpStack,
}

impl MlpParams {
    /// Predicted share for one standardized feature vector.
    pub fn predict(&self, z_features: &[f64]) -> f64 {
        self.net.forward(z_features)[0]
    }
}

/// Deterministic in-training split: shuffles `0..n` with the fit seed and
/// takes the first `floor(n * val_fraction)` indices as validation.
pub fn train_val_split(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x76616c5f73706c69); // distinct stream
    idx.shuffle(&mut rng);
    let n_val = ((n as f64) * val_fraction).floor() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

fn mse_over(net: &MlpStack, z: &FeatureMatrix, rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    let mut acc = 0.0;
    for &i in rows {
        let e = net.forward(z.row(i))[0] - z.targets()[i];
        acc += e * e;
    }
    acc / rows.len() as f64
}

/// Trains the network by backpropagated Adam steps over seeded mini
/// batches. Per-epoch train/validation losses are full-batch
/// recomputations with the epoch-end weights.
pub fn fit_mlp(m: &FeatureMatrix, config: &MlpConfig) -> Result<ModelArtifact, ModelError> {
    config.validate()?;
    if m.n_rows() == 0 {
        return Err(ModelError::InsufficientData { needed: 1, got: 0 });
    }
    let stats = m.fit_stats();
    let z = m.standardized(&stats)?;
    let d = z.n_features();

    let (train_rows, val_rows) = train_val_split(z.n_rows(), config.val_fraction, config.seed);

    let mut dims = vec![d];
    dims.extend_from_slice(&config.hidden_sizes);
    dims.push(1);
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = MlpStack::new_seeded(&dims, config.activation, false, &mut init_rng);

    let mut params = Vec::with_capacity(net.n_params());
    net.append_flat(&mut params);
    let mut adam = Adam::new(config.learning_rate, params.len());
    let mut grads = vec![0.0; params.len()];
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x62617463685f7268);
    let mut order = train_rows.clone();
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut batch_rng);
        for batch in order.chunks(config.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let cache = net.forward_cached(z.row(i));
                let diff = cache.output()[0] - z.targets()[i];
                let grad_out = [2.0 * diff / batch.len() as f64];
                net.backward(&cache, &grad_out, &mut grads, 0);
            }
            adam.step(&mut params, &grads);
            let mut cursor = 0;
            net.load_flat(&params, &mut cursor);
        }
        let train_loss = mse_over(&net, &z, &train_rows);
        let val_loss = if val_rows.is_empty() {
            None
        } else {
            Some(mse_over(&net, &z, &val_rows))
        };
        if !train_loss.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(ModelError::Divergence { epoch });
        }
        curve.push(EpochLoss {
            epoch,
            train: train_loss,
            val: val_loss,
        });
    }

    let final_train = curve.last().map(|e| e.train);
    let final_val = curve.last().and_then(|e| e.val);
    Ok(ModelArtifact {
        format_version: ARTIFACT_FORMAT_VERSION,
        family: ModelFamily::Mlp,
        n_features: d,
        stats,
        params: ModelParams::Mlp(MlpParams { net }),
        meta: TrainMeta {
            seed: config.seed,
            epochs_or_stages: config.epochs,
            final_train_loss: final_train,
            final_val_loss: final_val,
            loss_curve: curve,
            notes: vec![format!(
                "in-training validation holdout: {} of {} rows",
                val_rows.len(),
                m.n_rows()
            )],
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
        },
    })
}

/// Diagnostic handle exposing the full-batch loss surface and its analytic
/// gradient at the seeded initial weights, so gradient correctness can be
/// verified externally against finite differences.
pub struct MlpLossProbe {
    net: MlpStack,
    z: FeatureMatrix,
    params: Vec<f64>,
    analytic: Vec<f64>,
}

impl MlpLossProbe {
    pub fn new(m: &FeatureMatrix, config: &MlpConfig) -> Result<Self, ModelError> {
        config.validate()?;
        if m.n_rows() == 0 {
            return Err(ModelError::InsufficientData { needed: 1, got: 0 });
        }
        let stats = m.fit_stats();
        let z = m.standardized(&stats)?;
        let mut dims = vec![z.n_features()];
        dims.extend_from_slice(&config.hidden_sizes);
        dims.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let net = MlpStack::new_seeded(&dims, config.activation, false, &mut rng);
        let mut params = Vec::with_capacity(net.n_params());
        net.append_flat(&mut params);
        let mut analytic = vec![0.0; net.n_params()];
        let n = z.n_rows() as f64;
        for i in 0..z.n_rows() {
            let cache = net.forward_cached(z.row(i));
            let grad_out = [2.0 * (cache.output()[0] - z.targets()[i]) / n];
            net.backward(&cache, &grad_out, &mut analytic, 0);
        }
        Ok(Self {
            net,
            z,
            params,
            analytic,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn analytic_gradient(&self) -> &[f64] {
        &self.analytic
    }

    /// Named parameter ranges, one per dense layer.
    pub fn layer_spans(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut spans = Vec::new();
        let mut cursor = 0;
        for (i, layer) in self.net.layers.iter().enumerate() {
            let len = layer.w.len() + layer.b.len();
            spans.push((format!("dense{i}"), cursor..cursor + len));
            cursor += len;
        }
        spans
    }

    /// Full-batch MSE at an arbitrary parameter vector.
    pub fn loss_at(&self, params: &[f64]) -> f64 {
        let mut net = self.net.clone();
        let mut cursor = 0;
        net.load_flat(params, &mut cursor);
        let all: Vec<usize> = (0..self.z.n_rows()).collect();
        mse_over(&net, &self.z, &all)
    }
}

#[cfg(test)]
mod tests {
    use super::super::check_gradient;
    use super::*;
    use rand::Rng;

    fn random_matrix(seed: u64, n: usize, d: usize) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        FeatureMatrix::from_xy(d, x, y)
    }

    #[test]
    fn gradients_match_finite_differences_on_random_probes() {
        // five random (weights, batch) instances
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let d = 4;
            let batch: Vec<(Vec<f64>, f64)> = (0..6)
                .map(|_| {
                    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                    (x, rng.random_range(0.0..1.0))
                })
                .collect();
            let net = MlpStack::new_seeded(&[d, 5, 3, 1], Activation::Relu, false, &mut rng);
            let mut params = Vec::new();
            net.append_flat(&mut params);
            let mut grads = vec![0.0; net.n_params()];
            for (x, t) in &batch {
                let cache = net.forward_cached(x);
                let grad_out = [2.0 * (cache.output()[0] - t) / batch.len() as f64];
                net.backward(&cache, &grad_out, &mut grads, 0);
            }
            let probe_rng = &mut ChaCha8Rng::seed_from_u64(seed);
            let probes: Vec<usize> = (0..8)
                .map(|_| probe_rng.random_range(0..net.n_params()))
                .collect();
            let max_rel = check_gradient(
                |p| {
                    let mut candidate = net.clone();
                    let mut cursor = 0;
                    candidate.load_flat(p, &mut cursor);
                    batch
                        .iter()
                        .map(|(x, t)| {
                            let e = candidate.forward(x)[0] - t;
                            e * e
                        })
                        .sum::<f64>()
                        / batch.len() as f64
                },
                &params,
                &grads,
                &probes,
                1e-5,
            );
            assert!(max_rel < 1e-4, "seed {seed}: max rel err {max_rel}");
        }
    }

    #[test]
    fn zero_hidden_layers_reach_linear_fit() {
        let (x, y) = crate::model::ols::tests::exact_linear_data(19, 80);
        let m = FeatureMatrix::from_xy(2, x, y);
        let config = MlpConfig {
            hidden_sizes: vec![],
            epochs: 1500,
            batch_size: 80,
            learning_rate: 0.05,
            val_fraction: 0.0,
            seed: 4,
            ..MlpConfig::default()
        };
        let artifact = fit_mlp(&m, &config).unwrap();
        let mse = artifact.meta.final_train_loss.unwrap();
        assert!(mse < 1e-6, "linear-degenerate MLP MSE {mse}");
    }

    #[test]
    fn same_seed_gives_identical_loss_curves() {
        let m = random_matrix(8, 64, 3);
        let config = MlpConfig {
            hidden_sizes: vec![8],
            epochs: 12,
            batch_size: 16,
            val_fraction: 0.25,
            seed: 99,
            ..MlpConfig::default()
        };
        let a = fit_mlp(&m, &config).unwrap();
        let b = fit_mlp(&m, &config).unwrap();
        assert_eq!(a.meta.loss_curve, b.meta.loss_curve);
    }

    #[test]
    fn final_loss_matches_frozen_recomputation() {
        let m = random_matrix(5, 50, 3);
        let config = MlpConfig {
            hidden_sizes: vec![6],
            epochs: 10,
            batch_size: 8,
            val_fraction: 0.0,
            seed: 3,
            ..MlpConfig::default()
        };
        let artifact = fit_mlp(&m, &config).unwrap();
        let preds = artifact.predict(&m).unwrap();
        let mse: f64 = preds
            .iter()
            .zip(m.targets())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / m.n_rows() as f64;
        let recorded = artifact.meta.final_train_loss.unwrap();
        assert!(
            (mse - recorded).abs() < 1e-8,
            "recorded {recorded} vs recomputed {mse}"
        );
    }

    #[test]
    fn invalid_config_is_rejected() {
        let m = random_matrix(1, 10, 2);
        let bad = MlpConfig {
            epochs: 0,
            ..MlpConfig::default()
        };
        assert!(matches!(
            fit_mlp(&m, &bad),
            Err(ModelError::InvalidConfig(_))
        ));
        let bad = MlpConfig {
            val_fraction: 1.0,
            ..MlpConfig::default()
        };
        assert!(matches!(
            fit_mlp(&m, &bad),
            Err(ModelError::InvalidConfig(_))
        ));
    }
}
