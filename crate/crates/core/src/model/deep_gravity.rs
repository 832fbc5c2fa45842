//! Encoder-decoder gravity network: origin attributes, destination
//! attributes, and drive time are encoded by separate dense stacks, the
//! embeddings are concatenated, and a decoder stack produces one score per
//! (origin, destination) pair.
//!
//! Two objectives are supported. The default treats each origin's
//! candidate destinations as a choice set: scores pass through a
//! per-origin softmax and training minimizes cross-entropy against the
//! target shares, so predicted shares form a probability vector per origin
//! by construction. The alternative regresses the raw score on the share
//! with mean squared error.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{FeatureRow, ODDataset, N_HOSPITAL_FEATURES, N_ZONE_FEATURES};

use super::nn::{softmax_in_place, Activation, Adam, MlpStack, StackCache};
use super::{
    EpochLoss, FeatureMatrix, ModelArtifact, ModelError, ModelFamily, ModelParams, TrainMeta,
    ARTIFACT_FORMAT_VERSION,
};

/// Training objective for pair-scoring models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Per-origin softmax over the candidate set, cross-entropy against
    /// target shares.
    PerOriginSoftmaxCe,
    /// Direct share regression on the raw score.
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepGravityConfig {
    pub origin_encoder: Vec<usize>,
    pub dest_encoder: Vec<usize>,
    pub dist_encoder: Vec<usize>,
    pub decoder: Vec<usize>,
    pub epochs: usize,
    pub objective: Objective,
    pub learning_rate: f64,
    /// Origins per optimizer step under the softmax objective, rows per
    /// step under MSE; 0 means full batch.
    pub batch_size: usize,
    /// In-training holdout fraction (origins under softmax, rows under
    /// MSE) used only for the validation loss curve.
    pub val_fraction: f64,
    pub n_origin_features: usize,
    pub n_dest_features: usize,
    pub seed: u64,
}

impl Default for DeepGravityConfig {
    fn default() -> Self {
        Self {
            origin_encoder: vec![32],
            dest_encoder: vec![32],
            dist_encoder: vec![8],
            decoder: vec![64, 32],
            epochs: 400,
            objective: Objective::PerOriginSoftmaxCe,
            learning_rate: 1e-3,
            batch_size: 128,
            val_fraction: 0.1,
            n_origin_features: N_ZONE_FEATURES,
            n_dest_features: N_HOSPITAL_FEATURES,
            seed: 0,
        }
    }
}

impl DeepGravityConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs < 1 {
            return Err(ModelError::InvalidConfig("epochs must be >= 1".into()));
        }
        for (name, sizes) in [
            ("origin_encoder", &self.origin_encoder),
            ("dest_encoder", &self.dest_encoder),
            ("dist_encoder", &self.dist_encoder),
        ] {
            if sizes.is_empty() || sizes.iter().any(|&s| s < 1) {
                return Err(ModelError::InvalidConfig(format!(
                    "{name} needs at least one layer of width >= 1"
                )));
            }
        }
        if self.decoder.iter().any(|&s| s < 1) {
            return Err(ModelError::InvalidConfig(
                "decoder widths must each be >= 1".into(),
            ));
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
        if self.n_origin_features < 1 || self.n_dest_features < 1 {
            return Err(ModelError::InvalidConfig(
                "feature split needs at least one origin and one destination feature".into(),
            ));
        }
        Ok(())
    }

    fn expected_features(&self) -> usize {
        self.n_dest_features + self.n_origin_features + 1
    }
}

/// Per-origin candidate destination sets.
#[derive(Debug, Clone, Default)]
pub struct CandidateSets {
    pub per_origin: BTreeMap<String, BTreeSet<String>>,
}

impl CandidateSets {
    /// Every hospital is a candidate for every origin that has flows.
    pub fn all_hospitals(dataset: &ODDataset) -> Self {
        let hospitals: BTreeSet<String> = dataset
            .hospitals
            .iter()
            .map(|h| h.hospital_id.clone())
            .collect();
        let mut per_origin = BTreeMap::new();
        for f in &dataset.flows {
            per_origin
                .entry(f.origin_zone_id.clone())
                .or_insert_with(|| hospitals.clone());
        }
        Self { per_origin }
    }

    /// Candidate sets as actually present in a matrix's rows.
    pub fn from_matrix(m: &FeatureMatrix) -> Self {
        let mut per_origin: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for i in 0..m.n_rows() {
            per_origin
                .entry(m.origin_id_of_row(i).to_string())
                .or_default()
                .insert(m.dest_id_of_row(i).to_string());
        }
        Self { per_origin }
    }
}

/// Frozen network: three encoders and the decoder, plus the feature split
/// and objective needed to interpret inputs and outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeepGravityParams {
    pub origin_encoder: MlpStack,
    pub dest_encoder: MlpStack,
    pub dist_encoder: MlpStack,
    pub decoder: MlpStack,
    pub objective: Objective,
    pub n_origin_features: usize,
    pub n_dest_features: usize,
}

struct RowCaches {
    origin: StackCache,
    dest: StackCache,
    dist: StackCache,
    decoder: StackCache,
}

impl DeepGravityParams {
    fn new_seeded(config: &DeepGravityConfig, n_features: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let build = |sizes: &[usize], input: usize, rng: &mut ChaCha8Rng| {
            let mut dims = vec![input];
            dims.extend_from_slice(sizes);
            MlpStack::new_seeded(&dims, Activation::Relu, true, rng)
        };
        debug_assert_eq!(n_features, config.expected_features());
        let origin_encoder = build(&config.origin_encoder, config.n_origin_features, &mut rng);
        let dest_encoder = build(&config.dest_encoder, config.n_dest_features, &mut rng);
        let dist_encoder = build(&config.dist_encoder, 1, &mut rng);
        let concat =
            origin_encoder.out_dim() + dest_encoder.out_dim() + dist_encoder.out_dim();
        let mut dec_dims = vec![concat];
        dec_dims.extend_from_slice(&config.decoder);
        dec_dims.push(1);
        let decoder = {
            let mut dec_rng = rng;
            MlpStack::new_seeded(&dec_dims, Activation::Relu, false, &mut dec_rng)
        };
        Self {
            origin_encoder,
            dest_encoder,
            dist_encoder,
            decoder,
            objective: config.objective,
            n_origin_features: config.n_origin_features,
            n_dest_features: config.n_dest_features,
        }
    }

    fn split<'a>(&self, z: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let nd = self.n_dest_features;
        let no = self.n_origin_features;
        (&z[..nd], &z[nd..nd + no], &z[nd + no..])
    }

    /// Raw pair score for one standardized feature vector.
    pub fn score(&self, z_features: &[f64]) -> f64 {
        let (dest, origin, dist) = self.split(z_features);
        let o = self.origin_encoder.forward(origin);
        let d = self.dest_encoder.forward(dest);
        let t = self.dist_encoder.forward(dist);
        let mut concat = Vec::with_capacity(o.len() + d.len() + t.len());
        concat.extend_from_slice(&o);
        concat.extend_from_slice(&d);
        concat.extend_from_slice(&t);
        self.decoder.forward(&concat)[0]
    }

    fn score_cached(&self, z_features: &[f64]) -> (f64, RowCaches) {
        let (dest, origin, dist) = self.split(z_features);
        let origin_cache = self.origin_encoder.forward_cached(origin);
        let dest_cache = self.dest_encoder.forward_cached(dest);
        let dist_cache = self.dist_encoder.forward_cached(dist);
        let mut concat = Vec::with_capacity(
            self.origin_encoder.out_dim() + self.dest_encoder.out_dim() + self.dist_encoder.out_dim(),
        );
        concat.extend_from_slice(origin_cache.output());
        concat.extend_from_slice(dest_cache.output());
        concat.extend_from_slice(dist_cache.output());
        let decoder_cache = self.decoder.forward_cached(&concat);
        let score = decoder_cache.output()[0];
        (
            score,
            RowCaches {
                origin: origin_cache,
                dest: dest_cache,
                dist: dist_cache,
                decoder: decoder_cache,
            },
        )
    }

    fn n_params(&self) -> usize {
        self.origin_encoder.n_params()
            + self.dest_encoder.n_params()
            + self.dist_encoder.n_params()
            + self.decoder.n_params()
    }

    fn append_flat(&self, out: &mut Vec<f64>) {
        self.origin_encoder.append_flat(out);
        self.dest_encoder.append_flat(out);
        self.dist_encoder.append_flat(out);
        self.decoder.append_flat(out);
    }

    fn load_flat(&mut self, src: &[f64]) {
        let mut cursor = 0;
        self.origin_encoder.load_flat(src, &mut cursor);
        self.dest_encoder.load_flat(src, &mut cursor);
        self.dist_encoder.load_flat(src, &mut cursor);
        self.decoder.load_flat(src, &mut cursor);
        debug_assert_eq!(cursor, src.len());
    }

    /// Backpropagates a scalar score gradient for one row.
    fn backward_row(&self, caches: &RowCaches, dscore: f64, grads: &mut [f64]) {
        let off_origin = 0;
        let off_dest = off_origin + self.origin_encoder.n_params();
        let off_dist = off_dest + self.dest_encoder.n_params();
        let off_dec = off_dist + self.dist_encoder.n_params();
        let grad_concat = self
            .decoder
            .backward(&caches.decoder, &[dscore], grads, off_dec);
        let (go, rest) = grad_concat.split_at(self.origin_encoder.out_dim());
        let (gd, gt) = rest.split_at(self.dest_encoder.out_dim());
        self.origin_encoder
            .backward(&caches.origin, go, grads, off_origin);
        self.dest_encoder.backward(&caches.dest, gd, grads, off_dest);
        self.dist_encoder.backward(&caches.dist, gt, grads, off_dist);
    }

    /// Scores every row; under the softmax objective the scores of each
    /// origin's rows are converted to shares.
    pub fn predict_matrix(&self, z: &FeatureMatrix) -> Result<Vec<f64>, ModelError> {
        let mut out: Vec<f64> = (0..z.n_rows()).map(|i| self.score(z.row(i))).collect();
        if self.objective == Objective::PerOriginSoftmaxCe {
            for (_, rows) in z.origin_groups() {
                let mut scores: Vec<f64> = rows.iter().map(|&i| out[i]).collect();
                softmax_in_place(&mut scores);
                for (&i, s) in rows.iter().zip(&scores) {
                    out[i] = *s;
                }
            }
        }
        Ok(out)
    }
}

/// Builds the softmax-mode training matrix for a train split of observed
/// rows: for every origin covered by the split, its training pairs keep
/// their share targets and unobserved candidate pairs enter with target 0.
/// Observed pairs outside the split (held-out rows) are left out of the
/// simplex support entirely.
pub fn softmax_training_rows(
    dataset: &ODDataset,
    rows: &[FeatureRow],
    train_idx: &[usize],
) -> Result<(FeatureMatrix, CandidateSets), ModelError> {
    let observed_pairs: BTreeSet<(&str, &str)> = rows
        .iter()
        .map(|r| (r.origin_zone_id.as_str(), r.hospital_id.as_str()))
        .collect();
    let share_of: BTreeMap<(&str, &str), f64> = train_idx
        .iter()
        .map(|&i| {
            (
                (rows[i].origin_zone_id.as_str(), rows[i].hospital_id.as_str()),
                rows[i].target_share,
            )
        })
        .collect();
    let mut covered_origins: Vec<&str> = Vec::new();
    let mut seen = BTreeSet::new();
    for &i in train_idx {
        let o = rows[i].origin_zone_id.as_str();
        if seen.insert(o) {
            covered_origins.push(o);
        }
    }

    let mut out_rows = Vec::new();
    let mut candidates = CandidateSets::default();
    for origin in covered_origins {
        let zone = dataset
            .zone(origin)
            .ok_or_else(|| crate::domain::DomainError::UnknownZone(origin.to_string()))?;
        let zone_block = zone.feature_block();
        let mut set = BTreeSet::new();
        for h in &dataset.hospitals {
            let pair = (origin, h.hospital_id.as_str());
            let target = if let Some(&share) = share_of.get(&pair) {
                share
            } else if observed_pairs.contains(&pair) {
                continue; // held-out observed pair: excluded from support
            } else {
                0.0
            };
            let minutes = dataset.drive_time_for(origin, &h.hospital_id).ok_or_else(|| {
                crate::domain::DomainError::MissingDriveTime {
                    origin: origin.to_string(),
                    hospital: h.hospital_id.clone(),
                }
            })?;
            let mut features = Vec::with_capacity(zone_block.len() + N_HOSPITAL_FEATURES + 1);
            features.extend_from_slice(&h.feature_block());
            features.extend_from_slice(&zone_block);
            features.push(minutes);
            out_rows.push(FeatureRow {
                origin_zone_id: origin.to_string(),
                hospital_id: h.hospital_id.clone(),
                features,
                target_share: target,
            });
            set.insert(h.hospital_id.clone());
        }
        candidates.per_origin.insert(origin.to_string(), set);
    }
    Ok((FeatureMatrix::from_rows(&out_rows)?, candidates))
}

struct GroupedLoss<'a> {
    z: &'a FeatureMatrix,
    groups: Vec<(u32, Vec<usize>)>,
}

impl GroupedLoss<'_> {
    /// Cross-entropy of the target mass against the per-group softmax,
    /// averaged over groups.
    fn softmax_ce(&self, net: &DeepGravityParams, group_idx: &[usize]) -> f64 {
        if group_idx.is_empty() {
            return f64::NAN;
        }
        let mut total = 0.0;
        for &g in group_idx {
            let rows = &self.groups[g].1;
            let scores: Vec<f64> = rows.iter().map(|&i| net.score(self.z.row(i))).collect();
            total += group_ce(&scores, rows, self.z.targets());
        }
        total / group_idx.len() as f64
    }
}

fn group_ce(scores: &[f64], rows: &[usize], targets: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    let mut loss = 0.0;
    for (&i, &s) in rows.iter().zip(scores) {
        let t = targets[i];
        if t > 0.0 {
            loss -= t * (s - lse);
        }
    }
    loss
}

/// Fits the encoder-decoder network. Under the softmax objective the rows
/// must cover each origin's candidate set (`candidates`), with unobserved
/// pairs included at target 0.
pub fn fit_deep_gravity(
    m: &FeatureMatrix,
    candidates: &CandidateSets,
    config: &DeepGravityConfig,
) -> Result<ModelArtifact, ModelError> {
    config.validate()?;
    if m.n_rows() == 0 {
        return Err(ModelError::InsufficientData { needed: 1, got: 0 });
    }
    if m.n_features() != config.expected_features() {
        return Err(ModelError::ShapeMismatch {
            expected: config.expected_features(),
            found: m.n_features(),
        });
    }
    let stats = m.fit_stats();
    let z = m.standardized(&stats)?;
    let groups = z.origin_groups();
    let mut notes = Vec::new();

    if config.objective == Objective::PerOriginSoftmaxCe {
        for (o, rows) in &groups {
            let origin = z.origin_id_of_row(rows[0]);
            let candidate_set = candidates.per_origin.get(origin).ok_or_else(|| {
                ModelError::CandidateCoverage {
                    origin: origin.to_string(),
                    missing: "(no candidate set supplied)".to_string(),
                }
            })?;
            if candidate_set.is_empty() {
                return Err(ModelError::EmptyCandidateSet {
                    origin: origin.to_string(),
                });
            }
            let present: BTreeSet<&str> =
                rows.iter().map(|&i| z.dest_id_of_row(i)).collect();
            for cand in candidate_set {
                if !present.contains(cand.as_str()) {
                    return Err(ModelError::CandidateCoverage {
                        origin: origin.to_string(),
                        missing: cand.clone(),
                    });
                }
            }
            if rows.len() == 1 {
                notes.push(format!(
                    "origin {} has a single candidate: share is trivially 1",
                    z.origin_id_of_row(rows[0])
                ));
            }
            let _ = o;
        }
    }

    let mut net = DeepGravityParams::new_seeded(config, m.n_features(), config.seed);
    let mut params = Vec::with_capacity(net.n_params());
    net.append_flat(&mut params);
    let mut adam = Adam::new(config.learning_rate, params.len());
    let mut grads = vec![0.0; params.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x62617463685f7268);

    // training/validation units: origin groups under softmax, rows under MSE
    let n_units = match config.objective {
        Objective::PerOriginSoftmaxCe => groups.len(),
        Objective::Mse => z.n_rows(),
    };
    let (mut train_units, val_units) =
        super::mlp::train_val_split(n_units, config.val_fraction, config.seed);
    let grouped = GroupedLoss { z: &z, groups };
    let batch = if config.batch_size == 0 {
        train_units.len().max(1)
    } else {
        config.batch_size
    };
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        train_units.shuffle(&mut rng);
        for chunk in train_units.chunks(batch) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            match config.objective {
                Objective::PerOriginSoftmaxCe => {
                    let scale = 1.0 / chunk.len() as f64;
                    for &g in chunk {
                        let rows = &grouped.groups[g].1;
                        let mut caches = Vec::with_capacity(rows.len());
                        let mut scores = Vec::with_capacity(rows.len());
                        for &i in rows {
                            let (s, c) = net.score_cached(z.row(i));
                            scores.push(s);
                            caches.push(c);
                        }
                        let mut probs = scores.clone();
                        softmax_in_place(&mut probs);
                        let mass: f64 = rows.iter().map(|&i| z.targets()[i]).sum();
                        for ((&i, cache), &p) in rows.iter().zip(&caches).zip(&probs) {
                            let dscore = (mass * p - z.targets()[i]) * scale;
                            net.backward_row(cache, dscore, &mut grads);
                        }
                    }
                }
                Objective::Mse => {
                    let scale = 2.0 / chunk.len() as f64;
                    for &i in chunk {
                        let (s, cache) = net.score_cached(z.row(i));
                        let dscore = (s - z.targets()[i]) * scale;
                        net.backward_row(&cache, dscore, &mut grads);
                    }
                }
            }
            adam.step(&mut params, &grads);
            net.load_flat(&params);
        }

        let (train_loss, val_loss) = match config.objective {
            Objective::PerOriginSoftmaxCe => {
                let t = grouped.softmax_ce(&net, &train_units);
                let v = if val_units.is_empty() {
                    None
                } else {
                    Some(grouped.softmax_ce(&net, &val_units))
                };
                (t, v)
            }
            Objective::Mse => {
                let mse = |units: &[usize]| {
                    units
                        .iter()
                        .map(|&i| {
                            let e = net.score(z.row(i)) - z.targets()[i];
                            e * e
                        })
                        .sum::<f64>()
                        / units.len() as f64
                };
                let t = mse(&train_units);
                let v = if val_units.is_empty() {
                    None
                } else {
                    Some(mse(&val_units))
                };
                (t, v)
            }
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
    notes.push("objective, encoder widths, optimizer, and zero-target candidate handling are configuration defaults".into());
    Ok(ModelArtifact {
        format_version: ARTIFACT_FORMAT_VERSION,
        family: ModelFamily::DeepGravity,
        n_features: m.n_features(),
        stats,
        params: ModelParams::DeepGravity(net),
        meta: TrainMeta {
            seed: config.seed,
            epochs_or_stages: config.epochs,
            final_train_loss: final_train,
            final_val_loss: final_val,
            loss_curve: curve,
            notes,
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
        },
    })
}

/// Diagnostic handle over the softmax cross-entropy surface at the seeded
/// initial weights; see [`super::mlp::MlpLossProbe`].
pub struct DeepGravityLossProbe {
    net: DeepGravityParams,
    z: FeatureMatrix,
    groups: Vec<(u32, Vec<usize>)>,
    params: Vec<f64>,
    analytic: Vec<f64>,
}

impl DeepGravityLossProbe {
    pub fn new(m: &FeatureMatrix, config: &DeepGravityConfig) -> Result<Self, ModelError> {
        config.validate()?;
        if m.n_rows() == 0 {
            return Err(ModelError::InsufficientData { needed: 1, got: 0 });
        }
        if m.n_features() != config.expected_features() {
            return Err(ModelError::ShapeMismatch {
                expected: config.expected_features(),
                found: m.n_features(),
            });
        }
        let stats = m.fit_stats();
        let z = m.standardized(&stats)?;
        let groups = z.origin_groups();
        let net = DeepGravityParams::new_seeded(config, m.n_features(), config.seed);
        let mut params = Vec::with_capacity(net.n_params());
        net.append_flat(&mut params);
        let mut analytic = vec![0.0; net.n_params()];
        let scale = 1.0 / groups.len() as f64;
        for (_, rows) in &groups {
            let mut caches = Vec::with_capacity(rows.len());
            let mut scores = Vec::with_capacity(rows.len());
            for &i in rows {
                let (s, c) = net.score_cached(z.row(i));
                scores.push(s);
                caches.push(c);
            }
            let mut probs = scores.clone();
            softmax_in_place(&mut probs);
            let mass: f64 = rows.iter().map(|&i| z.targets()[i]).sum();
            for ((&i, cache), &p) in rows.iter().zip(&caches).zip(&probs) {
                net.backward_row(cache, (mass * p - z.targets()[i]) * scale, &mut analytic);
            }
        }
        Ok(Self {
            net,
            z,
            groups,
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

    /// Named parameter ranges, one per dense layer of each stack.
    pub fn layer_spans(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut spans = Vec::new();
        let mut cursor = 0;
        for (stack_name, stack) in [
            ("origin_encoder", &self.net.origin_encoder),
            ("dest_encoder", &self.net.dest_encoder),
            ("dist_encoder", &self.net.dist_encoder),
            ("decoder", &self.net.decoder),
        ] {
            for (i, layer) in stack.layers.iter().enumerate() {
                let len = layer.w.len() + layer.b.len();
                spans.push((format!("{stack_name}.dense{i}"), cursor..cursor + len));
                cursor += len;
            }
        }
        spans
    }

    /// Mean per-origin cross-entropy at an arbitrary parameter vector.
    pub fn loss_at(&self, params: &[f64]) -> f64 {
        let mut net = self.net.clone();
        net.load_flat(params);
        let grouped = GroupedLoss {
            z: &self.z,
            groups: self.groups.clone(),
        };
        let all: Vec<usize> = (0..self.groups.len()).collect();
        grouped.softmax_ce(&net, &all)
    }
}

#[cfg(test)]
mod tests {
    use super::super::check_gradient;
    use super::*;
    use rand::Rng;

    fn small_config(seed: u64) -> DeepGravityConfig {
        DeepGravityConfig {
            origin_encoder: vec![6],
            dest_encoder: vec![5],
            dist_encoder: vec![3],
            decoder: vec![8],
            epochs: 5,
            learning_rate: 5e-3,
            batch_size: 0,
            val_fraction: 0.0,
            n_origin_features: 3,
            n_dest_features: 2,
            seed,
            ..DeepGravityConfig::default()
        }
    }

    /// Matrix of `n_origins` groups x `n_dest` candidates with random
    /// features and per-group simplex targets.
    fn grouped_matrix(seed: u64, n_origins: usize, n_dest: usize, d: usize) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut groups = Vec::new();
        for g in 0..n_origins {
            let mut raw: Vec<f64> = (0..n_dest).map(|_| rng.random_range(0.1..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.iter_mut().for_each(|v| *v /= sum);
            for t in raw {
                for _ in 0..d {
                    x.push(rng.random_range(-1.0..1.0));
                }
                y.push(t);
                groups.push(g as u32);
            }
        }
        FeatureMatrix::from_grouped(d, x, y, groups)
    }

    #[test]
    fn softmax_predictions_sum_to_one_per_origin() {
        let m = grouped_matrix(1, 12, 5, 6);
        let cfg = small_config(1);
        let artifact = fit_deep_gravity(&m, &CandidateSets::from_matrix(&m), &cfg).unwrap();
        let preds = artifact.predict(&m).unwrap();
        for (_, rows) in m.origin_groups() {
            let sum: f64 = rows.iter().map(|&i| preds[i]).sum();
            assert!((sum - 1.0).abs() < 1e-9, "group sum {sum}");
            assert!(rows.iter().all(|&i| preds[i] >= 0.0));
        }
    }

    #[test]
    fn identical_candidates_get_uniform_shares_exactly() {
        // one origin, four identical destinations at identical distance
        let d = 6;
        let row: Vec<f64> = vec![0.4, -0.2, 0.9, 0.1, -0.5, 0.3];
        let mut x = Vec::new();
        for _ in 0..4 {
            x.extend_from_slice(&row);
        }
        let y = vec![0.25; 4];
        let m = FeatureMatrix::from_grouped(d, x, y, vec![0, 0, 0, 0]);
        let cfg = small_config(7);
        let artifact = fit_deep_gravity(&m, &CandidateSets::from_matrix(&m), &cfg).unwrap();
        let preds = artifact.predict(&m).unwrap();
        for p in preds {
            assert_eq!(p, 0.25);
        }
    }

    #[test]
    fn gradient_check_through_encoders_and_decoder() {
        for seed in 0..5u64 {
            let m = grouped_matrix(50 + seed, 3, 4, 6);
            let cfg = small_config(seed);
            let z = m.standardized(&m.fit_stats()).unwrap();
            let net = DeepGravityParams::new_seeded(&cfg, 6, seed);
            let groups = z.origin_groups();
            let group_idx: Vec<usize> = (0..groups.len()).collect();
            let grouped = GroupedLoss {
                z: &z,
                groups: groups.clone(),
            };

            let mut params = Vec::new();
            net.append_flat(&mut params);
            let mut grads = vec![0.0; net.n_params()];
            let scale = 1.0 / groups.len() as f64;
            for (_, rows) in &groups {
                let mut caches = Vec::new();
                let mut scores = Vec::new();
                for &i in rows {
                    let (s, c) = net.score_cached(z.row(i));
                    scores.push(s);
                    caches.push(c);
                }
                let mut probs = scores.clone();
                softmax_in_place(&mut probs);
                let mass: f64 = rows.iter().map(|&i| z.targets()[i]).sum();
                for ((&i, cache), &p) in rows.iter().zip(&caches).zip(&probs) {
                    net.backward_row(cache, (mass * p - z.targets()[i]) * scale, &mut grads);
                }
            }
            let mut probe_rng = ChaCha8Rng::seed_from_u64(seed + 900);
            let probes: Vec<usize> = (0..10)
                .map(|_| probe_rng.random_range(0..net.n_params()))
                .collect();
            let max_rel = check_gradient(
                |p| {
                    let mut candidate = net.clone();
                    candidate.load_flat(p);
                    grouped.softmax_ce(&candidate, &group_idx)
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
    fn same_seed_is_bit_reproducible() {
        let m = grouped_matrix(3, 8, 4, 6);
        let cfg = small_config(11);
        let a = fit_deep_gravity(&m, &CandidateSets::from_matrix(&m), &cfg).unwrap();
        let b = fit_deep_gravity(&m, &CandidateSets::from_matrix(&m), &cfg).unwrap();
        assert_eq!(a.predict(&m).unwrap(), b.predict(&m).unwrap());
        assert_eq!(a.meta.loss_curve, b.meta.loss_curve);
    }

    #[test]
    fn final_loss_matches_frozen_recomputation() {
        let m = grouped_matrix(5, 6, 4, 6);
        let cfg = small_config(2);
        let artifact = fit_deep_gravity(&m, &CandidateSets::from_matrix(&m), &cfg).unwrap();
        let ModelParams::DeepGravity(net) = &artifact.params else {
            panic!()
        };
        let z = m.standardized(&artifact.stats).unwrap();
        let groups = z.origin_groups();
        let grouped = GroupedLoss {
            z: &z,
            groups,
        };
        let all: Vec<usize> = (0..grouped.groups.len()).collect();
        let recomputed = grouped.softmax_ce(net, &all);
        let recorded = artifact.meta.final_train_loss.unwrap();
        assert!(
            (recomputed - recorded).abs() < 1e-8,
            "recorded {recorded} vs recomputed {recomputed}"
        );
    }

    #[test]
    fn missing_candidate_coverage_is_an_error() {
        let m = grouped_matrix(9, 2, 3, 6);
        let mut candidates = CandidateSets::from_matrix(&m);
        candidates
            .per_origin
            .get_mut("g0")
            .unwrap()
            .insert("extra_dest".to_string());
        let cfg = small_config(0);
        assert!(matches!(
            fit_deep_gravity(&m, &candidates, &cfg),
            Err(ModelError::CandidateCoverage { .. })
        ));
    }

    #[test]
    fn empty_candidate_set_is_an_error() {
        let m = grouped_matrix(9, 1, 3, 6);
        let mut candidates = CandidateSets::from_matrix(&m);
        candidates.per_origin.get_mut("g0").unwrap().clear();
        let cfg = small_config(0);
        assert!(matches!(
            fit_deep_gravity(&m, &candidates, &cfg),
            Err(ModelError::EmptyCandidateSet { .. })
        ));
    }

    #[test]
    fn single_candidate_origin_is_flagged_and_predicts_one() {
        let d = 6;
        let x: Vec<f64> = (0..d).map(|i| i as f64 * 0.1).collect();
        let m = FeatureMatrix::from_grouped(d, x, vec![1.0], vec![0]);
        let cfg = small_config(0);
        let artifact = fit_deep_gravity(&m, &CandidateSets::from_matrix(&m), &cfg).unwrap();
        assert!(artifact
            .meta
            .notes
            .iter()
            .any(|n| n.contains("single candidate")));
        assert_eq!(artifact.predict(&m).unwrap(), vec![1.0]);
    }

    #[test]
    fn mse_mode_regresses_scores_directly() {
        let m = grouped_matrix(13, 6, 4, 6);
        let cfg = DeepGravityConfig {
            objective: Objective::Mse,
            epochs: 30,
            ..small_config(5)
        };
        let artifact = fit_deep_gravity(&m, &CandidateSets::from_matrix(&m), &cfg).unwrap();
        let first = artifact.meta.loss_curve.first().unwrap().train;
        let last = artifact.meta.loss_curve.last().unwrap().train;
        assert!(last < first, "MSE did not improve: {first} -> {last}");
    }
}
