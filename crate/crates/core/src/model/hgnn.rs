//! Heterogeneous bipartite graph model.
//!
//! Zones and hospitals are two node types carrying their attribute blocks;
//! every candidate (zone, hospital) pair contributes a zone->hospital edge
//! and its mirror, each holding drive time as an edge attribute. Per-type
//! encoders produce initial embeddings, each convolution layer transforms
//! the mean of the opposite type's neighbor embeddings and combines it
//! with a transformed self embedding under a rectifier, and a pair is
//! scored by a head over the fusion-weighted concatenation of zone
//! embedding, hospital embedding, and encoded drive time.
//!
//! Predictions of a frozen artifact use the node embeddings captured on
//! the training graph, so they are defined for pairs of known nodes only
//! (the model is transductive).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{FeatureStats, ODDataset};

use super::deep_gravity::Objective;
use super::nn::{softmax_in_place, Activation, Adam, MlpStack, StackCache};
use super::{
    EpochLoss, FeatureMatrix, ModelArtifact, ModelError, ModelFamily, ModelParams, TrainMeta,
    ARTIFACT_FORMAT_VERSION,
};

/// Which (zone, hospital) pairs become graph edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateRule {
    AllPairs,
    ObservedFlows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub zone: u32,
    pub hosp: u32,
    pub drive_time_min: f64,
}

/// Bipartite graph with nodes sorted by identifier and neighbor lists in
/// ascending index order, so aggregation sums never depend on insertion
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroGraph {
    pub zone_ids: Vec<String>,
    pub zone_feats: Vec<Vec<f64>>,
    pub hosp_ids: Vec<String>,
    pub hosp_feats: Vec<Vec<f64>>,
    pub edges: Vec<GraphEdge>,
    zone_neighbors: Vec<Vec<u32>>,
    hosp_neighbors: Vec<Vec<u32>>,
}

impl HeteroGraph {
    pub fn n_zones(&self) -> usize {
        self.zone_ids.len()
    }

    pub fn n_hospitals(&self) -> usize {
        self.hosp_ids.len()
    }

    pub fn zone_neighbors(&self, zone: usize) -> &[u32] {
        &self.zone_neighbors[zone]
    }

    pub fn hosp_neighbors(&self, hosp: usize) -> &[u32] {
        &self.hosp_neighbors[hosp]
    }

    pub fn edge_index(&self, zone_id: &str, hospital_id: &str) -> Option<usize> {
        let z = self.zone_ids.binary_search_by(|id| id.as_str().cmp(zone_id)).ok()? as u32;
        let h = self
            .hosp_ids
            .binary_search_by(|id| id.as_str().cmp(hospital_id))
            .ok()? as u32;
        self.edges
            .binary_search_by(|e| (e.zone, e.hosp).cmp(&(z, h)))
            .ok()
    }

    /// Debug dump: nodes as `id,type` rows and edges as
    /// `src,dst,drive_time_min` rows (zone->hospital direction; the mirror
    /// direction is implied).
    pub fn dump_csv(
        &self,
        nodes: &mut dyn std::io::Write,
        edges: &mut dyn std::io::Write,
    ) -> std::io::Result<()> {
        writeln!(nodes, "id,type")?;
        for id in &self.zone_ids {
            writeln!(nodes, "{id},zone")?;
        }
        for id in &self.hosp_ids {
            writeln!(nodes, "{id},hospital")?;
        }
        writeln!(edges, "src,dst,drive_time_min")?;
        for e in &self.edges {
            writeln!(
                edges,
                "{},{},{}",
                self.zone_ids[e.zone as usize], self.hosp_ids[e.hosp as usize], e.drive_time_min
            )?;
        }
        Ok(())
    }
}

/// Builds the bipartite graph from a dataset. Node insertion order is
/// irrelevant: nodes are sorted by id and edges by (zone, hospital), so
/// relabeled datasets produce identical graphs.
pub fn build_graph(dataset: &ODDataset, rule: CandidateRule) -> Result<HeteroGraph, ModelError> {
    let mut zones: Vec<&crate::domain::ZoneAttributes> = dataset.zones.iter().collect();
    zones.sort_by(|a, b| a.zone_id.cmp(&b.zone_id));
    let mut hospitals: Vec<&crate::domain::HospitalAttributes> =
        dataset.hospitals.iter().collect();
    hospitals.sort_by(|a, b| a.hospital_id.cmp(&b.hospital_id));

    let zone_index: BTreeMap<&str, u32> = zones
        .iter()
        .enumerate()
        .map(|(i, z)| (z.zone_id.as_str(), i as u32))
        .collect();
    let hosp_index: BTreeMap<&str, u32> = hospitals
        .iter()
        .enumerate()
        .map(|(i, h)| (h.hospital_id.as_str(), i as u32))
        .collect();

    let mut pairs: Vec<(u32, u32)> = match rule {
        CandidateRule::AllPairs => (0..zones.len() as u32)
            .flat_map(|z| (0..hospitals.len() as u32).map(move |h| (z, h)))
            .collect(),
        CandidateRule::ObservedFlows => {
            let mut p: Vec<(u32, u32)> = dataset
                .flows
                .iter()
                .map(|f| {
                    (
                        zone_index[f.origin_zone_id.as_str()],
                        hosp_index[f.hospital_id.as_str()],
                    )
                })
                .collect();
            p.sort_unstable();
            p.dedup();
            p
        }
    };
    pairs.sort_unstable();

    let mut edges = Vec::with_capacity(pairs.len());
    let mut zone_neighbors = vec![Vec::new(); zones.len()];
    let mut hosp_neighbors = vec![Vec::new(); hospitals.len()];
    for (z, h) in pairs {
        let zone_id = &zones[z as usize].zone_id;
        let hosp_id = &hospitals[h as usize].hospital_id;
        let minutes = dataset
            .drive_time_for(zone_id, hosp_id)
            .ok_or_else(|| crate::domain::DomainError::MissingDriveTime {
                origin: zone_id.clone(),
                hospital: hosp_id.clone(),
            })?;
        edges.push(GraphEdge {
            zone: z,
            hosp: h,
            drive_time_min: minutes,
        });
        zone_neighbors[z as usize].push(h);
        hosp_neighbors[h as usize].push(z);
    }

    Ok(HeteroGraph {
        zone_feats: zones.iter().map(|z| z.feature_block().to_vec()).collect(),
        zone_ids: zones.into_iter().map(|z| z.zone_id.clone()).collect(),
        hosp_feats: hospitals
            .iter()
            .map(|h| h.feature_block().to_vec())
            .collect(),
        hosp_ids: hospitals.into_iter().map(|h| h.hospital_id.clone()).collect(),
        edges,
        zone_neighbors,
        hosp_neighbors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HgnnConfig {
    pub zone_encoder: Vec<usize>,
    pub hosp_encoder: Vec<usize>,
    pub dist_encoder: Vec<usize>,
    pub n_conv_layers: usize,
    /// Fusion weights scaling the zone, hospital, and distance blocks of
    /// the pair representation.
    pub fusion_zone: f64,
    pub fusion_hospital: f64,
    pub fusion_distance: f64,
    pub head: Vec<usize>,
    pub epochs: usize,
    pub objective: Objective,
    pub learning_rate: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for HgnnConfig {
    fn default() -> Self {
        Self {
            zone_encoder: vec![32],
            hosp_encoder: vec![32],
            dist_encoder: vec![8],
            n_conv_layers: 2,
            fusion_zone: 1.0,
            fusion_hospital: 1.0,
            fusion_distance: 4.0,
            head: vec![32],
            epochs: 400,
            objective: Objective::PerOriginSoftmaxCe,
            learning_rate: 1e-3,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl HgnnConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs < 1 {
            return Err(ModelError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.n_conv_layers < 1 {
            return Err(ModelError::InvalidConfig(
                "n_conv_layers must be >= 1".into(),
            ));
        }
        for (name, sizes) in [
            ("zone_encoder", &self.zone_encoder),
            ("hosp_encoder", &self.hosp_encoder),
            ("dist_encoder", &self.dist_encoder),
        ] {
            if sizes.is_empty() || sizes.iter().any(|&s| s < 1) {
                return Err(ModelError::InvalidConfig(format!(
                    "{name} needs at least one layer of width >= 1"
                )));
            }
        }
        let fusion = [self.fusion_zone, self.fusion_hospital, self.fusion_distance];
        if fusion.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(ModelError::InvalidConfig(
                "fusion weights must be nonnegative".into(),
            ));
        }
        if fusion.iter().all(|w| *w == 0.0) {
            return Err(ModelError::InvalidConfig(
                "fusion weights must not all be zero".into(),
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
        Ok(())
    }
}

/// Share target attached to one zone->hospital edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeTarget {
    pub origin_zone_id: String,
    pub hospital_id: String,
    pub share: f64,
}

/// Self/neighbor transform pair for one node type in one conv layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvPair {
    pub self_lin: MlpStack,
    pub neigh_lin: MlpStack,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvLayer {
    pub zone: ConvPair,
    pub hosp: ConvPair,
}

/// Frozen parameters plus the training-graph node embeddings used at
/// inference time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HgnnParams {
    pub zone_encoder: MlpStack,
    pub hosp_encoder: MlpStack,
    pub dist_encoder: MlpStack,
    pub convs: Vec<ConvLayer>,
    pub head: MlpStack,
    pub fusion: [f64; 3],
    pub objective: Objective,
    pub zone_embeddings: BTreeMap<String, Vec<f64>>,
    pub hosp_embeddings: BTreeMap<String, Vec<f64>>,
}

impl HgnnParams {
    /// Pair score from stored embeddings and a standardized drive time.
    fn score_pair(&self, zone_emb: &[f64], hosp_emb: &[f64], z_drive: f64) -> f64 {
        let t = self.dist_encoder.forward(&[z_drive]);
        let mut pair =
            Vec::with_capacity(zone_emb.len() + hosp_emb.len() + t.len());
        pair.extend(zone_emb.iter().map(|v| self.fusion[0] * v));
        pair.extend(hosp_emb.iter().map(|v| self.fusion[1] * v));
        pair.extend(t.iter().map(|v| self.fusion[2] * v));
        self.head.forward(&pair)[0]
    }

    /// Scores rows by embedding lookup; softmax objective converts each
    /// origin's scores to shares.
    pub fn predict_matrix(
        &self,
        m: &FeatureMatrix,
        stats: &FeatureStats,
    ) -> Result<Vec<f64>, ModelError> {
        let drive_col = m.n_features() - 1;
        let mut out = Vec::with_capacity(m.n_rows());
        for i in 0..m.n_rows() {
            let zone_emb = self
                .zone_embeddings
                .get(m.origin_id_of_row(i))
                .ok_or_else(|| ModelError::UnknownNode {
                    id: m.origin_id_of_row(i).to_string(),
                })?;
            let hosp_emb = self
                .hosp_embeddings
                .get(m.dest_id_of_row(i))
                .ok_or_else(|| ModelError::UnknownNode {
                    id: m.dest_id_of_row(i).to_string(),
                })?;
            let raw = m.row(i)[drive_col];
            let z_drive = if stats.constant[drive_col] {
                0.0
            } else {
                (raw - stats.mean[drive_col]) / stats.std[drive_col]
            };
            out.push(self.score_pair(zone_emb, hosp_emb, z_drive));
        }
        if self.objective == Objective::PerOriginSoftmaxCe {
            for (_, rows) in m.origin_groups() {
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

/// Standardized view of a graph: z-scored node features and drive times.
struct StdGraph {
    zone_feats: Vec<Vec<f64>>,
    hosp_feats: Vec<Vec<f64>>,
    z_drive: Vec<f64>,
}

/// Network weights during training (embeddings not yet frozen).
#[derive(Clone)]
pub(crate) struct HgnnNet {
    zone_encoder: MlpStack,
    hosp_encoder: MlpStack,
    dist_encoder: MlpStack,
    convs: Vec<ConvLayer>,
    head: MlpStack,
    fusion: [f64; 3],
}

struct NodeCache {
    self_cache: StackCache,
    neigh_cache: StackCache,
    /// Post-rectifier output.
    output: Vec<f64>,
}

struct ForwardState {
    zone_enc: Vec<StackCache>,
    hosp_enc: Vec<StackCache>,
    /// `levels[0]` are encoder outputs, `levels[l+1]` conv layer `l` outputs.
    zone_levels: Vec<Vec<Vec<f64>>>,
    hosp_levels: Vec<Vec<Vec<f64>>>,
    zone_caches: Vec<Vec<NodeCache>>,
    hosp_caches: Vec<Vec<NodeCache>>,
}

impl ForwardState {
    fn final_zone(&self) -> &Vec<Vec<f64>> {
        self.zone_levels.last().unwrap()
    }
    fn final_hosp(&self) -> &Vec<Vec<f64>> {
        self.hosp_levels.last().unwrap()
    }
}

fn mean_of<'a>(
    neighbors: &[u32],
    embeddings: &'a [Vec<f64>],
    dim: usize,
) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    if neighbors.is_empty() {
        return mean; // isolated node: neighbor term is the zero vector
    }
    for &n in neighbors {
        for (m, v) in mean.iter_mut().zip(&embeddings[n as usize]) {
            *m += v;
        }
    }
    let inv = 1.0 / neighbors.len() as f64;
    for m in &mut mean {
        *m *= inv;
    }
    mean
}

impl HgnnNet {
    fn new_seeded(config: &HgnnConfig, n_zone_feats: usize, n_hosp_feats: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = |sizes: &[usize], input: usize, rng: &mut ChaCha8Rng| {
            let mut dims = vec![input];
            dims.extend_from_slice(sizes);
            MlpStack::new_seeded(&dims, Activation::Relu, true, rng)
        };
        let zone_encoder = encoder(&config.zone_encoder, n_zone_feats, &mut rng);
        let hosp_encoder = encoder(&config.hosp_encoder, n_hosp_feats, &mut rng);
        let dist_encoder = encoder(&config.dist_encoder, 1, &mut rng);
        let zd = zone_encoder.out_dim();
        let hd = hosp_encoder.out_dim();
        let lin = |input: usize, output: usize, rng: &mut ChaCha8Rng| {
            MlpStack::new_seeded(&[input, output], Activation::Relu, false, rng)
        };
        let convs = (0..config.n_conv_layers)
            .map(|_| ConvLayer {
                zone: ConvPair {
                    self_lin: lin(zd, zd, &mut rng),
                    neigh_lin: lin(hd, zd, &mut rng),
                },
                hosp: ConvPair {
                    self_lin: lin(hd, hd, &mut rng),
                    neigh_lin: lin(zd, hd, &mut rng),
                },
            })
            .collect();
        let pair_dim = zd + hd + dist_encoder.out_dim();
        let mut head_dims = vec![pair_dim];
        head_dims.extend_from_slice(&config.head);
        head_dims.push(1);
        let head = MlpStack::new_seeded(&head_dims, Activation::Relu, false, &mut rng);
        Self {
            zone_encoder,
            hosp_encoder,
            dist_encoder,
            convs,
            head,
            fusion: [
                config.fusion_zone,
                config.fusion_hospital,
                config.fusion_distance,
            ],
        }
    }

    fn n_params(&self) -> usize {
        let conv: usize = self
            .convs
            .iter()
            .map(|c| {
                c.zone.self_lin.n_params()
                    + c.zone.neigh_lin.n_params()
                    + c.hosp.self_lin.n_params()
                    + c.hosp.neigh_lin.n_params()
            })
            .sum();
        self.zone_encoder.n_params()
            + self.hosp_encoder.n_params()
            + self.dist_encoder.n_params()
            + conv
            + self.head.n_params()
    }

    fn append_flat(&self, out: &mut Vec<f64>) {
        self.zone_encoder.append_flat(out);
        self.hosp_encoder.append_flat(out);
        self.dist_encoder.append_flat(out);
        for c in &self.convs {
            c.zone.self_lin.append_flat(out);
            c.zone.neigh_lin.append_flat(out);
            c.hosp.self_lin.append_flat(out);
            c.hosp.neigh_lin.append_flat(out);
        }
        self.head.append_flat(out);
    }

    fn load_flat(&mut self, src: &[f64]) {
        let mut cursor = 0;
        self.zone_encoder.load_flat(src, &mut cursor);
        self.hosp_encoder.load_flat(src, &mut cursor);
        self.dist_encoder.load_flat(src, &mut cursor);
        for c in &mut self.convs {
            c.zone.self_lin.load_flat(src, &mut cursor);
            c.zone.neigh_lin.load_flat(src, &mut cursor);
            c.hosp.self_lin.load_flat(src, &mut cursor);
            c.hosp.neigh_lin.load_flat(src, &mut cursor);
        }
        self.head.load_flat(src, &mut cursor);
        debug_assert_eq!(cursor, src.len());
    }

    /// Parameter offsets in the flat layout, mirroring `append_flat`.
    fn offsets(&self) -> HgnnOffsets {
        let mut acc = 0;
        let zone_enc = acc;
        acc += self.zone_encoder.n_params();
        let hosp_enc = acc;
        acc += self.hosp_encoder.n_params();
        let dist_enc = acc;
        acc += self.dist_encoder.n_params();
        let mut convs = Vec::with_capacity(self.convs.len());
        for c in &self.convs {
            let zs = acc;
            acc += c.zone.self_lin.n_params();
            let zn = acc;
            acc += c.zone.neigh_lin.n_params();
            let hs = acc;
            acc += c.hosp.self_lin.n_params();
            let hn = acc;
            acc += c.hosp.neigh_lin.n_params();
            convs.push([zs, zn, hs, hn]);
        }
        let head = acc;
        HgnnOffsets {
            zone_enc,
            hosp_enc,
            dist_enc,
            convs,
            head,
        }
    }

    fn forward_full(&self, g: &StdGraph, graph: &HeteroGraph) -> ForwardState {
        let zone_enc: Vec<StackCache> = g
            .zone_feats
            .iter()
            .map(|f| self.zone_encoder.forward_cached(f))
            .collect();
        let hosp_enc: Vec<StackCache> = g
            .hosp_feats
            .iter()
            .map(|f| self.hosp_encoder.forward_cached(f))
            .collect();
        let mut zone_levels = vec![zone_enc.iter().map(|c| c.output().to_vec()).collect::<Vec<_>>()];
        let mut hosp_levels =
            vec![hosp_enc.iter().map(|c| c.output().to_vec()).collect::<Vec<_>>()];
        let mut zone_caches = Vec::with_capacity(self.convs.len());
        let mut hosp_caches = Vec::with_capacity(self.convs.len());
        let zd = self.zone_encoder.out_dim();
        let hd = self.hosp_encoder.out_dim();

        for conv in &self.convs {
            let prev_zone = zone_levels.last().unwrap();
            let prev_hosp = hosp_levels.last().unwrap();
            let mut next_zone = Vec::with_capacity(prev_zone.len());
            let mut layer_zone_caches = Vec::with_capacity(prev_zone.len());
            for (zi, emb) in prev_zone.iter().enumerate() {
                let mean = mean_of(graph.zone_neighbors(zi), prev_hosp, hd);
                let self_cache = conv.zone.self_lin.forward_cached(emb);
                let neigh_cache = conv.zone.neigh_lin.forward_cached(&mean);
                let output: Vec<f64> = self_cache
                    .output()
                    .iter()
                    .zip(neigh_cache.output())
                    .map(|(a, b)| (a + b).max(0.0))
                    .collect();
                next_zone.push(output.clone());
                layer_zone_caches.push(NodeCache {
                    self_cache,
                    neigh_cache,
                    output,
                });
            }
            let mut next_hosp = Vec::with_capacity(prev_hosp.len());
            let mut layer_hosp_caches = Vec::with_capacity(prev_hosp.len());
            for (hi, emb) in prev_hosp.iter().enumerate() {
                let mean = mean_of(graph.hosp_neighbors(hi), prev_zone, zd);
                let self_cache = conv.hosp.self_lin.forward_cached(emb);
                let neigh_cache = conv.hosp.neigh_lin.forward_cached(&mean);
                let output: Vec<f64> = self_cache
                    .output()
                    .iter()
                    .zip(neigh_cache.output())
                    .map(|(a, b)| (a + b).max(0.0))
                    .collect();
                next_hosp.push(output.clone());
                layer_hosp_caches.push(NodeCache {
                    self_cache,
                    neigh_cache,
                    output,
                });
            }
            zone_levels.push(next_zone);
            hosp_levels.push(next_hosp);
            zone_caches.push(layer_zone_caches);
            hosp_caches.push(layer_hosp_caches);
        }
        ForwardState {
            zone_enc,
            hosp_enc,
            zone_levels,
            hosp_levels,
            zone_caches,
            hosp_caches,
        }
    }

    fn score_edge_cached(
        &self,
        state: &ForwardState,
        edge: &GraphEdge,
        z_drive: f64,
    ) -> (f64, StackCache, StackCache) {
        let dist_cache = self.dist_encoder.forward_cached(&[z_drive]);
        let zone_emb = &state.final_zone()[edge.zone as usize];
        let hosp_emb = &state.final_hosp()[edge.hosp as usize];
        let mut pair =
            Vec::with_capacity(zone_emb.len() + hosp_emb.len() + dist_cache.output().len());
        pair.extend(zone_emb.iter().map(|v| self.fusion[0] * v));
        pair.extend(hosp_emb.iter().map(|v| self.fusion[1] * v));
        pair.extend(dist_cache.output().iter().map(|v| self.fusion[2] * v));
        let head_cache = self.head.forward_cached(&pair);
        let score = head_cache.output()[0];
        (score, dist_cache, head_cache)
    }

    fn score_edge(&self, state: &ForwardState, edge: &GraphEdge, z_drive: f64) -> f64 {
        self.score_edge_cached(state, edge, z_drive).0
    }

    /// Full-graph backward pass. `edge_grads` maps edge index ->
    /// d(loss)/d(score); node gradients are accumulated level by level back
    /// to the encoders.
    #[allow(clippy::needless_range_loop)]
    fn backward_full(
        &self,
        graph: &HeteroGraph,
        g: &StdGraph,
        state: &ForwardState,
        edge_grads: &BTreeMap<usize, f64>,
        grads: &mut [f64],
    ) {
        let offsets = self.offsets();
        let zd = self.zone_encoder.out_dim();
        let hd = self.hosp_encoder.out_dim();
        let n_zones = graph.n_zones();
        let n_hosps = graph.n_hospitals();
        let mut d_zone: Vec<Vec<f64>> = vec![vec![0.0; zd]; n_zones];
        let mut d_hosp: Vec<Vec<f64>> = vec![vec![0.0; hd]; n_hosps];

        // head and distance encoder, accumulating into the final embeddings
        for (&ei, &dscore) in edge_grads {
            let edge = &graph.edges[ei];
            let (_, dist_cache, head_cache) =
                self.score_edge_cached(state, edge, g.z_drive[ei]);
            let grad_pair = self
                .head
                .backward(&head_cache, &[dscore], grads, offsets.head);
            let (gz, rest) = grad_pair.split_at(zd);
            let (gh, gt) = rest.split_at(hd);
            for (acc, v) in d_zone[edge.zone as usize].iter_mut().zip(gz) {
                *acc += self.fusion[0] * v;
            }
            for (acc, v) in d_hosp[edge.hosp as usize].iter_mut().zip(gh) {
                *acc += self.fusion[1] * v;
            }
            let gt_scaled: Vec<f64> = gt.iter().map(|v| self.fusion[2] * v).collect();
            self.dist_encoder
                .backward(&dist_cache, &gt_scaled, grads, offsets.dist_enc);
        }

        // conv layers, last to first
        for li in (0..self.convs.len()).rev() {
            let conv = &self.convs[li];
            let conv_off = offsets.convs[li];
            let mut d_zone_prev: Vec<Vec<f64>> = vec![vec![0.0; zd]; n_zones];
            let mut d_hosp_prev: Vec<Vec<f64>> = vec![vec![0.0; hd]; n_hosps];

            for zi in 0..n_zones {
                let cache = &state.zone_caches[li][zi];
                let delta: Vec<f64> = d_zone[zi]
                    .iter()
                    .zip(&cache.output)
                    .map(|(d, &o)| if o > 0.0 { *d } else { 0.0 })
                    .collect();
                let g_self =
                    conv.zone
                        .self_lin
                        .backward(&cache.self_cache, &delta, grads, conv_off[0]);
                for (acc, v) in d_zone_prev[zi].iter_mut().zip(&g_self) {
                    *acc += v;
                }
                let g_mean =
                    conv.zone
                        .neigh_lin
                        .backward(&cache.neigh_cache, &delta, grads, conv_off[1]);
                let neighbors = graph.zone_neighbors(zi);
                if !neighbors.is_empty() {
                    let inv = 1.0 / neighbors.len() as f64;
                    for &h in neighbors {
                        for (acc, v) in d_hosp_prev[h as usize].iter_mut().zip(&g_mean) {
                            *acc += inv * v;
                        }
                    }
                }
            }
            for hi in 0..n_hosps {
                let cache = &state.hosp_caches[li][hi];
                let delta: Vec<f64> = d_hosp[hi]
                    .iter()
                    .zip(&cache.output)
                    .map(|(d, &o)| if o > 0.0 { *d } else { 0.0 })
                    .collect();
                let g_self =
                    conv.hosp
                        .self_lin
                        .backward(&cache.self_cache, &delta, grads, conv_off[2]);
                for (acc, v) in d_hosp_prev[hi].iter_mut().zip(&g_self) {
                    *acc += v;
                }
                let g_mean =
                    conv.hosp
                        .neigh_lin
                        .backward(&cache.neigh_cache, &delta, grads, conv_off[3]);
                let neighbors = graph.hosp_neighbors(hi);
                if !neighbors.is_empty() {
                    let inv = 1.0 / neighbors.len() as f64;
                    for &z in neighbors {
                        for (acc, v) in d_zone_prev[z as usize].iter_mut().zip(&g_mean) {
                            *acc += inv * v;
                        }
                    }
                }
            }
            d_zone = d_zone_prev;
            d_hosp = d_hosp_prev;
        }

        for zi in 0..n_zones {
            self.zone_encoder
                .backward(&state.zone_enc[zi], &d_zone[zi], grads, offsets.zone_enc);
        }
        for hi in 0..n_hosps {
            self.hosp_encoder
                .backward(&state.hosp_enc[hi], &d_hosp[hi], grads, offsets.hosp_enc);
        }
    }
}

struct HgnnOffsets {
    zone_enc: usize,
    hosp_enc: usize,
    dist_enc: usize,
    convs: Vec<[usize; 4]>,
    head: usize,
}

/// Targets resolved to edge indices and grouped by zone.
struct ResolvedTargets {
    /// (edge index, share)
    by_edge: Vec<(usize, f64)>,
    /// zone -> indices into `by_edge`
    zone_groups: Vec<(u32, Vec<usize>)>,
}

fn resolve_targets(
    graph: &HeteroGraph,
    targets: &[EdgeTarget],
) -> Result<ResolvedTargets, ModelError> {
    let mut by_edge = Vec::with_capacity(targets.len());
    let mut zone_order: Vec<u32> = Vec::new();
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for t in targets {
        let ei = graph
            .edge_index(&t.origin_zone_id, &t.hospital_id)
            .ok_or_else(|| ModelError::CandidateCoverage {
                origin: t.origin_zone_id.clone(),
                missing: t.hospital_id.clone(),
            })?;
        let zone = graph.edges[ei].zone;
        let slot = by_edge.len();
        by_edge.push((ei, t.share));
        groups
            .entry(zone)
            .or_insert_with(|| {
                zone_order.push(zone);
                Vec::new()
            })
            .push(slot);
    }
    let zone_groups = zone_order
        .into_iter()
        .map(|z| {
            let slots = groups.remove(&z).unwrap();
            (z, slots)
        })
        .collect();
    Ok(ResolvedTargets {
        by_edge,
        zone_groups,
    })
}

/// Loss over the listed zone groups (softmax objective: CE of the target
/// mass against the softmax over the zone's full candidate edge set).
fn softmax_loss(
    net: &HgnnNet,
    graph: &HeteroGraph,
    g: &StdGraph,
    state: &ForwardState,
    resolved: &ResolvedTargets,
    zone_edge_ranges: &BTreeMap<u32, Vec<usize>>,
    groups: &[usize],
) -> f64 {
    if groups.is_empty() {
        return f64::NAN;
    }
    let mut total = 0.0;
    for &gi in groups {
        let (zone, slots) = &resolved.zone_groups[gi];
        let edge_set = &zone_edge_ranges[zone];
        let scores: Vec<f64> = edge_set
            .iter()
            .map(|&ei| net.score_edge(state, &graph.edges[ei], g.z_drive[ei]))
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        for &slot in slots {
            let (ei, share) = resolved.by_edge[slot];
            if share > 0.0 {
                let pos = edge_set.iter().position(|&e| e == ei).unwrap();
                total -= share * (scores[pos] - lse);
            }
        }
    }
    total / groups.len() as f64
}

fn mse_loss(
    net: &HgnnNet,
    graph: &HeteroGraph,
    g: &StdGraph,
    state: &ForwardState,
    resolved: &ResolvedTargets,
    edge_slots: &[usize],
) -> f64 {
    if edge_slots.is_empty() {
        return f64::NAN;
    }
    let mut acc = 0.0;
    for &slot in edge_slots {
        let (ei, share) = resolved.by_edge[slot];
        let e = net.score_edge(state, &graph.edges[ei], g.z_drive[ei]) - share;
        acc += e * e;
    }
    acc / edge_slots.len() as f64
}

fn standardize_graph(graph: &HeteroGraph, stats: &FeatureStats) -> StdGraph {
    let n_hosp_feats = graph.hosp_feats.first().map_or(0, Vec::len);
    let n_zone_feats = graph.zone_feats.first().map_or(0, Vec::len);
    let drive_col = n_hosp_feats + n_zone_feats;
    let std_block = |feats: &[Vec<f64>], offset: usize| -> Vec<Vec<f64>> {
        feats
            .iter()
            .map(|f| {
                f.iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let col = offset + j;
                        if stats.constant[col] {
                            0.0
                        } else {
                            (v - stats.mean[col]) / stats.std[col]
                        }
                    })
                    .collect()
            })
            .collect()
    };
    StdGraph {
        hosp_feats: std_block(&graph.hosp_feats, 0),
        zone_feats: std_block(&graph.zone_feats, n_hosp_feats),
        z_drive: graph
            .edges
            .iter()
            .map(|e| {
                if stats.constant[drive_col] {
                    0.0
                } else {
                    (e.drive_time_min - stats.mean[drive_col]) / stats.std[drive_col]
                }
            })
            .collect(),
    }
}

/// Feature statistics in the canonical row layout (hospital block, zone
/// block, drive time), computed over nodes and edges.
fn graph_stats(graph: &HeteroGraph) -> FeatureStats {
    let n_hosp_feats = graph.hosp_feats.first().map_or(0, Vec::len);
    let n_zone_feats = graph.zone_feats.first().map_or(0, Vec::len);
    let hosp_flat: Vec<f64> = graph.hosp_feats.iter().flatten().copied().collect();
    let zone_flat: Vec<f64> = graph.zone_feats.iter().flatten().copied().collect();
    let drive_flat: Vec<f64> = graph.edges.iter().map(|e| e.drive_time_min).collect();
    let hosp = FeatureStats::fit(&hosp_flat, n_hosp_feats);
    let zone = FeatureStats::fit(&zone_flat, n_zone_feats);
    let drive = FeatureStats::fit(&drive_flat, 1);
    let concat = |a: &[f64], b: &[f64], c: &[f64]| {
        let mut v = a.to_vec();
        v.extend_from_slice(b);
        v.extend_from_slice(c);
        v
    };
    FeatureStats {
        mean: concat(&hosp.mean, &zone.mean, &drive.mean),
        std: concat(&hosp.std, &zone.std, &drive.std),
        min: concat(&hosp.min, &zone.min, &drive.min),
        max: concat(&hosp.max, &zone.max, &drive.max),
        constant: {
            let mut v = hosp.constant.clone();
            v.extend_from_slice(&zone.constant);
            v.extend_from_slice(&drive.constant);
            v
        },
    }
}

/// Trains the graph network on per-edge share targets with full-batch Adam
/// steps. The returned artifact freezes both the weights and the training
/// graph's final node embeddings.
pub fn fit_hgnn(
    graph: &HeteroGraph,
    targets: &[EdgeTarget],
    config: &HgnnConfig,
) -> Result<ModelArtifact, ModelError> {
    config.validate()?;
    if targets.is_empty() {
        return Err(ModelError::InsufficientData { needed: 1, got: 0 });
    }
    if graph.zone_feats.is_empty() || graph.hosp_feats.is_empty() {
        return Err(ModelError::InsufficientData {
            needed: 1,
            got: 0,
        });
    }
    let stats = graph_stats(graph);
    let g = standardize_graph(graph, &stats);
    let resolved = resolve_targets(graph, targets)?;
    let mut notes = Vec::new();

    // per-zone candidate edge sets (all graph edges of the zone)
    let mut zone_edge_ranges: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (ei, e) in graph.edges.iter().enumerate() {
        zone_edge_ranges.entry(e.zone).or_default().push(ei);
    }
    if config.objective == Objective::PerOriginSoftmaxCe {
        for (zone, _) in &resolved.zone_groups {
            let edges = &zone_edge_ranges[zone];
            if edges.len() == 1 {
                notes.push(format!(
                    "zone {} has a single candidate edge: share is trivially 1",
                    graph.zone_ids[*zone as usize]
                ));
            }
        }
    }

    let n_zone_feats = graph.zone_feats[0].len();
    let n_hosp_feats = graph.hosp_feats[0].len();
    let mut net = HgnnNet::new_seeded(config, n_zone_feats, n_hosp_feats);
    let mut params = Vec::with_capacity(net.n_params());
    net.append_flat(&mut params);
    let mut adam = Adam::new(config.learning_rate, params.len());
    let mut grads = vec![0.0; params.len()];

    let n_units = match config.objective {
        Objective::PerOriginSoftmaxCe => resolved.zone_groups.len(),
        Objective::Mse => resolved.by_edge.len(),
    };
    let (mut train_units, val_units) =
        super::mlp::train_val_split(n_units, config.val_fraction, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x62617463685f7268);
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        train_units.shuffle(&mut rng); // order irrelevant for full batch, kept for parity
        let state = net.forward_full(&g, graph);
        grads.iter_mut().for_each(|x| *x = 0.0);
        let mut edge_grads: BTreeMap<usize, f64> = BTreeMap::new();
        match config.objective {
            Objective::PerOriginSoftmaxCe => {
                let scale = 1.0 / train_units.len().max(1) as f64;
                for &gi in &train_units {
                    let (zone, slots) = &resolved.zone_groups[gi];
                    let edge_set = &zone_edge_ranges[zone];
                    let mut scores: Vec<f64> = edge_set
                        .iter()
                        .map(|&ei| net.score_edge(&state, &graph.edges[ei], g.z_drive[ei]))
                        .collect();
                    softmax_in_place(&mut scores);
                    let mass: f64 = slots.iter().map(|&s| resolved.by_edge[s].1).sum();
                    let mut target_of: BTreeMap<usize, f64> = BTreeMap::new();
                    for &slot in slots {
                        let (ei, share) = resolved.by_edge[slot];
                        *target_of.entry(ei).or_insert(0.0) += share;
                    }
                    for (&ei, &p) in edge_set.iter().zip(&scores) {
                        let t = target_of.get(&ei).copied().unwrap_or(0.0);
                        *edge_grads.entry(ei).or_insert(0.0) += (mass * p - t) * scale;
                    }
                }
            }
            Objective::Mse => {
                let scale = 2.0 / train_units.len().max(1) as f64;
                for &slot in &train_units {
                    let (ei, share) = resolved.by_edge[slot];
                    let s = net.score_edge(&state, &graph.edges[ei], g.z_drive[ei]);
                    *edge_grads.entry(ei).or_insert(0.0) += (s - share) * scale;
                }
            }
        }
        net.backward_full(graph, &g, &state, &edge_grads, &mut grads);
        adam.step(&mut params, &grads);
        net.load_flat(&params);

        let state = net.forward_full(&g, graph);
        let (train_loss, val_loss) = match config.objective {
            Objective::PerOriginSoftmaxCe => {
                let t = softmax_loss(
                    &net,
                    graph,
                    &g,
                    &state,
                    &resolved,
                    &zone_edge_ranges,
                    &train_units,
                );
                let v = if val_units.is_empty() {
                    None
                } else {
                    Some(softmax_loss(
                        &net,
                        graph,
                        &g,
                        &state,
                        &resolved,
                        &zone_edge_ranges,
                        &val_units,
                    ))
                };
                (t, v)
            }
            Objective::Mse => {
                let t = mse_loss(&net, graph, &g, &state, &resolved, &train_units);
                let v = if val_units.is_empty() {
                    None
                } else {
                    Some(mse_loss(&net, graph, &g, &state, &resolved, &val_units))
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

    // freeze final embeddings
    let state = net.forward_full(&g, graph);
    let zone_embeddings: BTreeMap<String, Vec<f64>> = graph
        .zone_ids
        .iter()
        .cloned()
        .zip(state.final_zone().iter().cloned())
        .collect();
    let hosp_embeddings: BTreeMap<String, Vec<f64>> = graph
        .hosp_ids
        .iter()
        .cloned()
        .zip(state.final_hosp().iter().cloned())
        .collect();

    let final_train = curve.last().map(|e| e.train);
    let final_val = curve.last().and_then(|e| e.val);
    notes.push(
        "fusion weights scale embedding blocks before the head; aggregator is neighbor mean"
            .into(),
    );
    let n_features = n_hosp_feats + n_zone_feats + 1;
    Ok(ModelArtifact {
        format_version: ARTIFACT_FORMAT_VERSION,
        family: ModelFamily::Hgnn,
        n_features,
        stats,
        params: ModelParams::Hgnn(HgnnParams {
            zone_encoder: net.zone_encoder,
            hosp_encoder: net.hosp_encoder,
            dist_encoder: net.dist_encoder,
            convs: net.convs,
            head: net.head,
            fusion: net.fusion,
            objective: config.objective,
            zone_embeddings,
            hosp_embeddings,
        }),
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

/// Diagnostic handle over the graph network's loss surface at the seeded
/// initial weights; see [`super::mlp::MlpLossProbe`].
pub struct HgnnLossProbe {
    net: HgnnNet,
    graph: HeteroGraph,
    g: StdGraph,
    resolved: ResolvedTargets,
    zone_edge_ranges: BTreeMap<u32, Vec<usize>>,
    params: Vec<f64>,
    analytic: Vec<f64>,
}

impl HgnnLossProbe {
    pub fn new(
        graph: &HeteroGraph,
        targets: &[EdgeTarget],
        config: &HgnnConfig,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if targets.is_empty() {
            return Err(ModelError::InsufficientData { needed: 1, got: 0 });
        }
        let stats = graph_stats(graph);
        let g = standardize_graph(graph, &stats);
        let resolved = resolve_targets(graph, targets)?;
        let mut zone_edge_ranges: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (ei, e) in graph.edges.iter().enumerate() {
            zone_edge_ranges.entry(e.zone).or_default().push(ei);
        }
        let net = HgnnNet::new_seeded(
            config,
            graph.zone_feats[0].len(),
            graph.hosp_feats[0].len(),
        );
        let mut params = Vec::with_capacity(net.n_params());
        net.append_flat(&mut params);

        let state = net.forward_full(&g, graph);
        let mut analytic = vec![0.0; net.n_params()];
        let mut edge_grads: BTreeMap<usize, f64> = BTreeMap::new();
        let all_groups: Vec<usize> = (0..resolved.zone_groups.len()).collect();
        let scale = 1.0 / all_groups.len() as f64;
        for &gi in &all_groups {
            let (zone, slots) = &resolved.zone_groups[gi];
            let edge_set = &zone_edge_ranges[zone];
            let mut scores: Vec<f64> = edge_set
                .iter()
                .map(|&ei| net.score_edge(&state, &graph.edges[ei], g.z_drive[ei]))
                .collect();
            softmax_in_place(&mut scores);
            let mass: f64 = slots.iter().map(|&s| resolved.by_edge[s].1).sum();
            let mut target_of: BTreeMap<usize, f64> = BTreeMap::new();
            for &slot in slots {
                let (ei, share) = resolved.by_edge[slot];
                *target_of.entry(ei).or_insert(0.0) += share;
            }
            for (&ei, &p) in edge_set.iter().zip(&scores) {
                let t = target_of.get(&ei).copied().unwrap_or(0.0);
                *edge_grads.entry(ei).or_insert(0.0) += (mass * p - t) * scale;
            }
        }
        net.backward_full(graph, &g, &state, &edge_grads, &mut analytic);
        Ok(Self {
            net,
            graph: graph.clone(),
            g,
            resolved,
            zone_edge_ranges,
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

    /// Named parameter ranges, one per dense layer of each component
    /// (encoders, per-type conv transforms, head).
    pub fn layer_spans(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut spans = Vec::new();
        let mut cursor = 0;
        let mut push_stack = |name: String, stack: &MlpStack, cursor: &mut usize| {
            for (i, layer) in stack.layers.iter().enumerate() {
                let len = layer.w.len() + layer.b.len();
                spans.push((format!("{name}.dense{i}"), *cursor..*cursor + len));
                *cursor += len;
            }
        };
        push_stack("zone_encoder".into(), &self.net.zone_encoder, &mut cursor);
        push_stack("hosp_encoder".into(), &self.net.hosp_encoder, &mut cursor);
        push_stack("dist_encoder".into(), &self.net.dist_encoder, &mut cursor);
        for (li, conv) in self.net.convs.iter().enumerate() {
            push_stack(format!("conv{li}.zone_self"), &conv.zone.self_lin, &mut cursor);
            push_stack(format!("conv{li}.zone_neigh"), &conv.zone.neigh_lin, &mut cursor);
            push_stack(format!("conv{li}.hosp_self"), &conv.hosp.self_lin, &mut cursor);
            push_stack(format!("conv{li}.hosp_neigh"), &conv.hosp.neigh_lin, &mut cursor);
        }
        push_stack("head".into(), &self.net.head, &mut cursor);
        spans
    }

    /// Mean per-zone cross-entropy at an arbitrary parameter vector.
    pub fn loss_at(&self, params: &[f64]) -> f64 {
        let mut net = self.net.clone();
        net.load_flat(params);
        let state = net.forward_full(&self.g, &self.graph);
        let all: Vec<usize> = (0..self.resolved.zone_groups.len()).collect();
        softmax_loss(
            &net,
            &self.graph,
            &self.g,
            &state,
            &self.resolved,
            &self.zone_edge_ranges,
            &all,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::check_gradient;
    use super::*;
    use crate::domain::{FlowRecord, HospitalAttributes, ODDataset, ZoneAttributes};
    use rand::Rng;

    fn zone(id: &str, seed: u64) -> ZoneAttributes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ZoneAttributes {
            zone_id: id.into(),
            total_population: rng.random_range(500.0..5000.0),
            pct_under18: rng.random_range(0.0..0.4),
            pct_over65: rng.random_range(0.0..0.3),
            pct_hispanic: rng.random_range(0.0..1.0),
            pct_white: rng.random_range(0.0..1.0),
            pct_black: rng.random_range(0.0..1.0),
            pct_asian: rng.random_range(0.0..1.0),
            pct_bachelor_plus: rng.random_range(0.0..1.0),
            median_income: rng.random_range(20000.0..150000.0),
            pct_households_vehicle: rng.random_range(0.5..1.0),
            lon: rng.random_range(-95.8..-95.0),
            lat: rng.random_range(29.5..30.1),
        }
    }

    fn hospital(id: &str, seed: u64) -> HospitalAttributes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HospitalAttributes {
            hospital_id: id.into(),
            staffed_all_beds: rng.random_range(20..1300),
            staffed_icu_beds: rng.random_range(0..160),
            licensed_all_beds: rng.random_range(20..1400),
            all_bed_occupancy: rng.random_range(0.0..0.86),
            icu_occupancy: rng.random_range(0.0..0.92),
            n_reviews: rng.random_range(2..3763),
            rating: rng.random_range(1.0..4.8),
            lon: rng.random_range(-95.8..-95.0),
            lat: rng.random_range(29.5..30.1),
        }
    }

    fn toy_dataset(n_zones: usize, n_hosp: usize, seed: u64) -> ODDataset {
        let zones: Vec<ZoneAttributes> = (0..n_zones)
            .map(|i| zone(&format!("Z{i:03}"), seed * 1000 + i as u64))
            .collect();
        let hospitals: Vec<HospitalAttributes> = (0..n_hosp)
            .map(|i| hospital(&format!("H{i:02}"), seed * 2000 + i as u64))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut drive_time = BTreeMap::new();
        for z in &zones {
            for h in &hospitals {
                drive_time.insert(
                    (z.zone_id.clone(), h.hospital_id.clone()),
                    rng.random_range(2.0..65.0),
                );
            }
        }
        let mut flows = Vec::new();
        for z in &zones {
            for h in &hospitals {
                flows.push(FlowRecord {
                    origin_zone_id: z.zone_id.clone(),
                    hospital_id: h.hospital_id.clone(),
                    visits: rng.random_range(1.0..50.0),
                    drive_time_min: 0.0,
                });
            }
        }
        ODDataset::new(zones, hospitals, flows, drive_time).unwrap()
    }

    fn share_targets(dataset: &ODDataset) -> Vec<EdgeTarget> {
        let shares = crate::domain::normalize_per_origin(&dataset.flows).unwrap();
        dataset
            .flows
            .iter()
            .map(|f| EdgeTarget {
                origin_zone_id: f.origin_zone_id.clone(),
                hospital_id: f.hospital_id.clone(),
                share: shares[&(f.origin_zone_id.clone(), f.hospital_id.clone())],
            })
            .collect()
    }

    fn tiny_config(seed: u64, epochs: usize) -> HgnnConfig {
        HgnnConfig {
            zone_encoder: vec![6],
            hosp_encoder: vec![5],
            dist_encoder: vec![3],
            n_conv_layers: 2,
            head: vec![7],
            epochs,
            learning_rate: 5e-3,
            val_fraction: 0.0,
            seed,
            ..HgnnConfig::default()
        }
    }

    #[test]
    fn all_pairs_graph_has_expected_topology() {
        let dataset = toy_dataset(4, 3, 1);
        let graph = build_graph(&dataset, CandidateRule::AllPairs).unwrap();
        assert_eq!(graph.n_zones(), 4);
        assert_eq!(graph.n_hospitals(), 3);
        assert_eq!(graph.edges.len(), 12);
        for zi in 0..4 {
            assert_eq!(graph.zone_neighbors(zi).len(), 3);
        }
        for hi in 0..3 {
            assert_eq!(graph.hosp_neighbors(hi).len(), 4);
        }
    }

    #[test]
    fn sparse_rule_retains_isolated_nodes() {
        let mut dataset = toy_dataset(3, 2, 2);
        // zone Z002 loses all flows
        dataset.flows.retain(|f| f.origin_zone_id != "Z002");
        let graph = build_graph(&dataset, CandidateRule::ObservedFlows).unwrap();
        assert_eq!(graph.n_zones(), 3);
        let zi = graph.zone_ids.iter().position(|z| z == "Z002").unwrap();
        assert!(graph.zone_neighbors(zi).is_empty());
    }

    #[test]
    fn node_insertion_order_does_not_change_predictions() {
        let dataset = toy_dataset(4, 3, 3);
        let mut relabeled = dataset.clone();
        relabeled.zones.reverse();
        relabeled.hospitals.rotate_left(1);
        relabeled.flows.rotate_left(5);
        let g1 = build_graph(&dataset, CandidateRule::AllPairs).unwrap();
        let g2 = build_graph(&relabeled, CandidateRule::AllPairs).unwrap();
        assert_eq!(g1, g2);
        let targets = share_targets(&dataset);
        let a1 = fit_hgnn(&g1, &targets, &tiny_config(5, 3)).unwrap();
        let a2 = fit_hgnn(&g2, &targets, &tiny_config(5, 3)).unwrap();
        let rows = crate::domain::assemble_features(&dataset).unwrap();
        let m = FeatureMatrix::from_rows(&rows).unwrap();
        assert_eq!(a1.predict(&m).unwrap(), a2.predict(&m).unwrap());
    }

    #[test]
    fn softmax_predictions_sum_to_one_per_zone() {
        let dataset = toy_dataset(6, 4, 7);
        let graph = build_graph(&dataset, CandidateRule::AllPairs).unwrap();
        let artifact = fit_hgnn(&graph, &share_targets(&dataset), &tiny_config(7, 4)).unwrap();
        let rows = crate::domain::assemble_features(&dataset).unwrap();
        let m = FeatureMatrix::from_rows(&rows).unwrap();
        let preds = artifact.predict(&m).unwrap();
        for (_, group_rows) in m.origin_groups() {
            let sum: f64 = group_rows.iter().map(|&i| preds[i]).sum();
            assert!((sum - 1.0).abs() < 1e-9, "zone sum {sum}");
        }
    }

    #[test]
    fn identical_equidistant_hospitals_get_uniform_shares() {
        let zones = vec![zone("Z000", 10)];
        let h_template = hospital("H00", 20);
        let hospitals: Vec<HospitalAttributes> = (0..4)
            .map(|i| {
                let mut h = h_template.clone();
                h.hospital_id = format!("H{i:02}");
                h
            })
            .collect();
        let mut drive_time = BTreeMap::new();
        let mut flows = Vec::new();
        for h in &hospitals {
            drive_time.insert(("Z000".to_string(), h.hospital_id.clone()), 15.0);
            flows.push(FlowRecord {
                origin_zone_id: "Z000".into(),
                hospital_id: h.hospital_id.clone(),
                visits: 10.0,
                drive_time_min: 15.0,
            });
        }
        let dataset = ODDataset::new(zones, hospitals, flows, drive_time).unwrap();
        let graph = build_graph(&dataset, CandidateRule::AllPairs).unwrap();
        let artifact = fit_hgnn(&graph, &share_targets(&dataset), &tiny_config(1, 3)).unwrap();
        let rows = crate::domain::assemble_features(&dataset).unwrap();
        let m = FeatureMatrix::from_rows(&rows).unwrap();
        let preds = artifact.predict(&m).unwrap();
        for p in preds {
            assert_eq!(p, 0.25);
        }
    }

    #[test]
    fn fusion_defaults_echo_from_metadata() {
        let dataset = toy_dataset(3, 2, 9);
        let graph = build_graph(&dataset, CandidateRule::AllPairs).unwrap();
        let config = HgnnConfig {
            epochs: 2,
            zone_encoder: vec![4],
            hosp_encoder: vec![4],
            dist_encoder: vec![2],
            head: vec![4],
            val_fraction: 0.0,
            ..HgnnConfig::default()
        };
        let artifact = fit_hgnn(&graph, &share_targets(&dataset), &config).unwrap();
        let echo = &artifact.meta.config;
        assert_eq!(echo["fusion_zone"], 1.0);
        assert_eq!(echo["fusion_hospital"], 1.0);
        assert_eq!(echo["fusion_distance"], 4.0);
        let ModelParams::Hgnn(p) = &artifact.params else {
            panic!()
        };
        assert_eq!(p.fusion, [1.0, 1.0, 4.0]);
    }

    #[test]
    fn isolated_node_embedding_uses_self_path_only() {
        let mut dataset = toy_dataset(3, 2, 4);
        dataset.flows.retain(|f| f.origin_zone_id != "Z001");
        let graph = build_graph(&dataset, CandidateRule::ObservedFlows).unwrap();
        let config = tiny_config(11, 1);
        let stats = graph_stats(&graph);
        let g = standardize_graph(&graph, &stats);
        let net = HgnnNet::new_seeded(&config, graph.zone_feats[0].len(), graph.hosp_feats[0].len());
        let state = net.forward_full(&g, &graph);
        let zi = graph.zone_ids.iter().position(|z| z == "Z001").unwrap();
        // manual: relu(self(emb) + neigh(0))
        let enc = net.zone_encoder.forward(&g.zone_feats[zi]);
        let self_out = net.convs[0].zone.self_lin.forward(&enc);
        let zero_mean = vec![0.0; net.hosp_encoder.out_dim()];
        let neigh_out = net.convs[0].zone.neigh_lin.forward(&zero_mean);
        let expected: Vec<f64> = self_out
            .iter()
            .zip(&neigh_out)
            .map(|(a, b)| (a + b).max(0.0))
            .collect();
        assert_eq!(state.zone_levels[1][zi], expected);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5u64 {
            let dataset = toy_dataset(3, 3, 40 + seed);
            let graph = build_graph(&dataset, CandidateRule::AllPairs).unwrap();
            let targets = share_targets(&dataset);
            let config = tiny_config(seed, 1);
            let stats = graph_stats(&graph);
            let g = standardize_graph(&graph, &stats);
            let resolved = resolve_targets(&graph, &targets).unwrap();
            let mut zone_edge_ranges: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for (ei, e) in graph.edges.iter().enumerate() {
                zone_edge_ranges.entry(e.zone).or_default().push(ei);
            }
            let net = HgnnNet::new_seeded(&config, graph.zone_feats[0].len(), graph.hosp_feats[0].len());
            let all_groups: Vec<usize> = (0..resolved.zone_groups.len()).collect();

            // analytic gradient of the softmax CE over all groups
            let state = net.forward_full(&g, &graph);
            let mut grads = vec![0.0; net.n_params()];
            let mut edge_grads: BTreeMap<usize, f64> = BTreeMap::new();
            let scale = 1.0 / all_groups.len() as f64;
            for &gi in &all_groups {
                let (zone, slots) = &resolved.zone_groups[gi];
                let edge_set = &zone_edge_ranges[zone];
                let mut scores: Vec<f64> = edge_set
                    .iter()
                    .map(|&ei| net.score_edge(&state, &graph.edges[ei], g.z_drive[ei]))
                    .collect();
                softmax_in_place(&mut scores);
                let mass: f64 = slots.iter().map(|&s| resolved.by_edge[s].1).sum();
                let mut target_of: BTreeMap<usize, f64> = BTreeMap::new();
                for &slot in slots {
                    let (ei, share) = resolved.by_edge[slot];
                    *target_of.entry(ei).or_insert(0.0) += share;
                }
                for (&ei, &p) in edge_set.iter().zip(&scores) {
                    let t = target_of.get(&ei).copied().unwrap_or(0.0);
                    *edge_grads.entry(ei).or_insert(0.0) += (mass * p - t) * scale;
                }
            }
            net.backward_full(&graph, &g, &state, &edge_grads, &mut grads);

            let mut params = Vec::new();
            net.append_flat(&mut params);
            let mut probe_rng = ChaCha8Rng::seed_from_u64(seed + 777);
            let probes: Vec<usize> = (0..12)
                .map(|_| probe_rng.random_range(0..net.n_params()))
                .collect();
            let max_rel = check_gradient(
                |p| {
                    let mut candidate = net.clone();
                    candidate.load_flat(p);
                    let state = candidate.forward_full(&g, &graph);
                    softmax_loss(
                        &candidate,
                        &graph,
                        &g,
                        &state,
                        &resolved,
                        &zone_edge_ranges,
                        &all_groups,
                    )
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
    fn unknown_node_at_predict_is_an_error() {
        let dataset = toy_dataset(3, 2, 6);
        let graph = build_graph(&dataset, CandidateRule::AllPairs).unwrap();
        let artifact = fit_hgnn(&graph, &share_targets(&dataset), &tiny_config(2, 2)).unwrap();
        let mut rows = crate::domain::assemble_features(&dataset).unwrap();
        rows[0].origin_zone_id = "Z999".into();
        let err = artifact.predict_rows(&rows).unwrap_err();
        assert!(matches!(err, ModelError::UnknownNode { .. }));
    }

    #[test]
    fn row_predict_is_unsupported() {
        let dataset = toy_dataset(3, 2, 6);
        let graph = build_graph(&dataset, CandidateRule::AllPairs).unwrap();
        let artifact = fit_hgnn(&graph, &share_targets(&dataset), &tiny_config(2, 2)).unwrap();
        let err = artifact.predict_row(&vec![0.0; artifact.n_features]).unwrap_err();
        assert!(matches!(err, ModelError::UnsupportedRowPredict { .. }));
    }

    #[test]
    fn graph_dump_writes_nodes_and_edges() {
        let dataset = toy_dataset(2, 2, 8);
        let graph = build_graph(&dataset, CandidateRule::AllPairs).unwrap();
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        graph.dump_csv(&mut nodes, &mut edges).unwrap();
        let nodes = String::from_utf8(nodes).unwrap();
        let edges = String::from_utf8(edges).unwrap();
        assert_eq!(nodes.lines().count(), 1 + 4);
        assert_eq!(edges.lines().count(), 1 + 4);
        assert!(nodes.contains("Z000,zone"));
        assert!(edges.starts_with("src,dst,drive_time_min"));
    }
}
