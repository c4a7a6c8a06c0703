//! Personalized local training, hierarchical model averaging, and
//! agglomerative regrouping, plus the flat federated-averaging baseline.
//!
//! Each UE holds a personal (level-0) model. UEs in one logical group share
//! a level-1 model, and all UEs share the level-2 regional model. Local
//! training minimizes the personal empirical loss plus proximal pulls
//! toward the level-1 and level-2 ancestors, each weighted inversely by the
//! ancestor's member count. Averaging weights children by member count, so
//! a parent model is the member-count-weighted mean of its children.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Dataset;

/// Errors from training and aggregation.
#[derive(Debug, Error)]
pub enum LearnError {
    /// Training or evaluation over zero samples.
    #[error("dataset has no usable samples")]
    EmptyDataset,
    /// The group tree lacks an ancestor for the UE.
    #[error("ue {0} has no ancestor models")]
    MissingAncestor(usize),
    /// Loss or weights became non-finite during training.
    #[error("training diverged for ue {0}")]
    DivergenceDetected(usize),
    /// Vector lengths disagree with the model layout.
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    /// A group has no members.
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    /// Group lists do not partition the UE set.
    #[error("groups do not partition the {0} ues")]
    BadPartition(usize),
}

/// Classifier architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// Multinomial logistic regression.
    Logistic,
    /// One hidden tanh layer.
    Mlp { hidden: usize },
}

/// Shape descriptor mapping the flat weight vector to named layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub n_classes: usize,
}

impl ModelLayout {
    /// Total parameter count.
    pub fn len(&self) -> usize {
        match self.kind {
            ModelKind::Logistic => self.input_dim * self.n_classes + self.n_classes,
            ModelKind::Mlp { hidden } => {
                self.input_dim * hidden + hidden + hidden * self.n_classes + self.n_classes
            }
        }
    }

    /// True when the layout holds no parameters.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A flat parameter vector with its layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layout: ModelLayout,
    pub weights: Vec<f64>,
}

impl ModelParams {
    /// All-zero parameters.
    pub fn zeros(layout: ModelLayout) -> ModelParams {
        ModelParams {
            layout,
            weights: vec![0.0; layout.len()],
        }
    }

    /// Gaussian-initialized parameters with the given standard deviation.
    pub fn init(layout: ModelLayout, sigma: f64, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).unwrap();
        ModelParams {
            layout,
            weights: (0..layout.len()).map(|_| noise.sample(&mut rng)).collect(),
        }
    }

    fn check_compatible(&self, other: &ModelParams) -> Result<(), LearnError> {
        if self.weights.len() != other.weights.len() {
            return Err(LearnError::ShapeMismatch {
                expected: self.weights.len(),
                found: other.weights.len(),
            });
        }
        Ok(())
    }

    /// Squared Euclidean distance to another parameter vector.
    pub fn sq_distance(&self, other: &ModelParams) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Euclidean distance to another parameter vector.
    pub fn distance(&self, other: &ModelParams) -> f64 {
        self.sq_distance(other).sqrt()
    }
}

/// Class scores for one feature row.
fn logits(model: &ModelParams, x: ndarray::ArrayView1<f64>) -> Vec<f64> {
    let d = model.layout.input_dim;
    let c = model.layout.n_classes;
    let w = &model.weights;
    match model.layout.kind {
        ModelKind::Logistic => {
            let bias = d * c;
            let mut z: Vec<f64> = (0..c).map(|k| w[bias + k]).collect();
            for i in 0..d {
                let xi = x[i];
                if xi != 0.0 {
                    for k in 0..c {
                        z[k] += xi * w[i * c + k];
                    }
                }
            }
            z
        }
        ModelKind::Mlp { hidden } => {
            let (h, _) = mlp_forward(model, x, hidden);
            let w2 = d * hidden + hidden;
            let b2 = w2 + hidden * c;
            let mut z: Vec<f64> = (0..c).map(|k| w[b2 + k]).collect();
            for j in 0..hidden {
                for k in 0..c {
                    z[k] += h[j] * w[w2 + j * c + k];
                }
            }
            z
        }
    }
}

/// Hidden activations and pre-activations of the MLP.
fn mlp_forward(
    model: &ModelParams,
    x: ndarray::ArrayView1<f64>,
    hidden: usize,
) -> (Vec<f64>, Vec<f64>) {
    let d = model.layout.input_dim;
    let w = &model.weights;
    let b1 = d * hidden;
    let mut pre: Vec<f64> = (0..hidden).map(|j| w[b1 + j]).collect();
    for i in 0..d {
        let xi = x[i];
        if xi != 0.0 {
            for j in 0..hidden {
                pre[j] += xi * w[i * hidden + j];
            }
        }
    }
    let h: Vec<f64> = pre.iter().map(|&p| p.tanh()).collect();
    (h, pre)
}

/// Log-probabilities via a numerically stable softmax.
fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|&v| v - lse).collect()
}

/// Predicted class: the argmax logit, lowest index on ties.
pub fn predict(model: &ModelParams, x: ndarray::ArrayView1<f64>) -> usize {
    let z = logits(model, x);
    let mut best = 0;
    for k in 1..z.len() {
        if z[k] > z[best] {
            best = k;
        }
    }
    best
}

/// Fraction of the given rows the model classifies correctly.
pub fn accuracy(model: &ModelParams, data: &Dataset, rows: &[usize]) -> Result<f64, LearnError> {
    if rows.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let hits = rows
        .iter()
        .filter(|&&i| predict(model, data.features.row(i)) == data.labels[i])
        .count();
    Ok(hits as f64 / rows.len() as f64)
}

/// Weight-norm penalty added to the empirical loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    None,
    L1,
    L2,
}

impl Regularizer {
    fn value(&self, w: &[f64]) -> f64 {
        match self {
            Regularizer::None => 0.0,
            Regularizer::L1 => w.iter().map(|v| v.abs()).sum(),
            Regularizer::L2 => w.iter().map(|v| v * v).sum(),
        }
    }

    fn add_gradient(&self, w: &[f64], weight: f64, grad: &mut [f64]) {
        match self {
            Regularizer::None => {}
            Regularizer::L1 => {
                for (g, v) in grad.iter_mut().zip(w) {
                    *g += weight * v.signum() * f64::from(u8::from(*v != 0.0));
                }
            }
            Regularizer::L2 => {
                for (g, v) in grad.iter_mut().zip(w) {
                    *g += 2.0 * weight * v;
                }
            }
        }
    }
}

/// Hyperparameters for one experiment's training loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// SGD step size.
    pub learning_rate: f64,
    /// Proximal pull strength toward ancestor models.
    pub eta: f64,
    /// Weight-norm penalty kind on the empirical loss.
    pub reg: Regularizer,
    /// Weight-norm penalty strength.
    pub reg_weight: f64,
    /// Rounds between learning phases.
    pub tau: u64,
    /// Passes over the local training split per learning phase.
    pub local_epochs: usize,
    /// Mini-batch size.
    pub batch_size: usize,
    /// Total global rounds.
    pub rounds: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            eta: 1e-3,
            reg: Regularizer::None,
            reg_weight: 0.0,
            tau: 1,
            local_epochs: 2,
            batch_size: 32,
            rounds: 30,
        }
    }
}

/// Mean cross-entropy over the given rows plus the weight-norm penalty.
pub fn local_loss(
    model: &ModelParams,
    data: &Dataset,
    rows: &[usize],
    reg: Regularizer,
    reg_weight: f64,
) -> Result<f64, LearnError> {
    if rows.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let mut total = 0.0;
    for &i in rows {
        let z = logits(model, data.features.row(i));
        let logp = log_softmax(&z);
        total -= logp[data.labels[i]];
    }
    Ok(total / rows.len() as f64 + reg_weight * reg.value(&model.weights))
}

/// Adds the mean data-loss gradient over the given rows into `grad`.
fn add_data_gradient(
    model: &ModelParams,
    data: &Dataset,
    rows: &[usize],
    grad: &mut [f64],
) {
    let d = model.layout.input_dim;
    let c = model.layout.n_classes;
    let scale = 1.0 / rows.len() as f64;
    match model.layout.kind {
        ModelKind::Logistic => {
            let bias = d * c;
            for &i in rows {
                let x = data.features.row(i);
                let z = logits(model, x);
                let logp = log_softmax(&z);
                for k in 0..c {
                    let mut g = logp[k].exp();
                    if k == data.labels[i] {
                        g -= 1.0;
                    }
                    g *= scale;
                    grad[bias + k] += g;
                    for ii in 0..d {
                        grad[ii * c + k] += g * x[ii];
                    }
                }
            }
        }
        ModelKind::Mlp { hidden } => {
            let w = &model.weights;
            let w2_off = d * hidden + hidden;
            let b2_off = w2_off + hidden * c;
            for &i in rows {
                let x = data.features.row(i);
                let (h, _) = mlp_forward(model, x, hidden);
                let mut z: Vec<f64> = (0..c).map(|k| w[b2_off + k]).collect();
                for j in 0..hidden {
                    for k in 0..c {
                        z[k] += h[j] * w[w2_off + j * c + k];
                    }
                }
                let logp = log_softmax(&z);
                let mut gz: Vec<f64> = (0..c).map(|k| logp[k].exp() * scale).collect();
                gz[data.labels[i]] -= scale;
                let mut gh = vec![0.0; hidden];
                for j in 0..hidden {
                    for k in 0..c {
                        grad[w2_off + j * c + k] += h[j] * gz[k];
                        gh[j] += w[w2_off + j * c + k] * gz[k];
                    }
                }
                for k in 0..c {
                    grad[b2_off + k] += gz[k];
                }
                for j in 0..hidden {
                    let gpre = gh[j] * (1.0 - h[j] * h[j]);
                    grad[d * hidden + j] += gpre;
                    for ii in 0..d {
                        let xi = x[ii];
                        if xi != 0.0 {
                            grad[ii * hidden + j] += gpre * xi;
                        }
                    }
                }
            }
        }
    }
}

/// One merge of the agglomerative dendrogram. Leaf clusters carry ids
/// `0..n`; the merge at position `i` creates cluster `n + i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeStep {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

/// The three-level group structure with its models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupTree {
    /// Level-1 membership lists, each ascending; together they partition
    /// the UE set.
    pub groups: Vec<Vec<usize>>,
    /// Personal models, one per UE.
    pub level0: Vec<ModelParams>,
    /// Group models, one per entry of `groups`.
    pub level1: Vec<ModelParams>,
    /// The regional model.
    pub level2: ModelParams,
    /// Dendrogram of the regrouping that produced `groups`.
    pub merges: Vec<MergeStep>,
}

impl GroupTree {
    /// Builds a tree from personal models and a membership partition,
    /// filling both ancestor levels by averaging.
    pub fn new(level0: Vec<ModelParams>, groups: Vec<Vec<usize>>) -> Result<GroupTree, LearnError> {
        let n = level0.len();
        if n == 0 {
            return Err(LearnError::BadPartition(0));
        }
        let mut seen = vec![false; n];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(LearnError::EmptyGroup(g));
            }
            for &ue in members {
                if ue >= n || seen[ue] {
                    return Err(LearnError::BadPartition(n));
                }
                seen[ue] = true;
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(LearnError::BadPartition(n));
        }
        let layout = level0[0].layout;
        let mut tree = GroupTree {
            groups,
            level0,
            level1: Vec::new(),
            level2: ModelParams::zeros(layout),
            merges: Vec::new(),
        };
        hierarchical_average(&mut tree)?;
        Ok(tree)
    }

    /// Number of UEs.
    pub fn n_ues(&self) -> usize {
        self.level0.len()
    }

    /// Index of the group containing UE `ue`.
    pub fn group_of(&self, ue: usize) -> Result<usize, LearnError> {
        self.groups
            .iter()
            .position(|g| g.binary_search(&ue).is_ok())
            .ok_or(LearnError::MissingAncestor(ue))
    }

    /// Ancestor models of UE `ue` with their member counts, level 1 first.
    pub fn ancestors(&self, ue: usize) -> Result<[(&ModelParams, usize); 2], LearnError> {
        let g = self.group_of(ue)?;
        Ok([
            (&self.level1[g], self.groups[g].len()),
            (&self.level2, self.n_ues()),
        ])
    }

    /// Mean pairwise Euclidean distance among personal models.
    pub fn mean_pairwise_distance(&self) -> f64 {
        let n = self.n_ues();
        if n < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for a in 0..n {
            for b in (a + 1)..n {
                total += self.level0[a].distance(&self.level0[b]);
            }
        }
        total / (n * (n - 1) / 2) as f64
    }
}

/// Personal objective: empirical loss plus proximal pulls toward each
/// ancestor, weighted by the pull strength over the ancestor's member count.
pub fn personalized_objective(
    model: &ModelParams,
    data: &Dataset,
    rows: &[usize],
    tree: &GroupTree,
    ue: usize,
    cfg: &TrainConfig,
) -> Result<f64, LearnError> {
    let mut value = local_loss(model, data, rows, cfg.reg, cfg.reg_weight)?;
    for (ancestor, count) in tree.ancestors(ue)? {
        model.check_compatible(ancestor)?;
        value += cfg.eta / count as f64 * model.sq_distance(ancestor);
    }
    Ok(value)
}

/// Analytic gradient of [`personalized_objective`].
pub fn personalized_gradient(
    model: &ModelParams,
    data: &Dataset,
    rows: &[usize],
    tree: &GroupTree,
    ue: usize,
    cfg: &TrainConfig,
) -> Result<Vec<f64>, LearnError> {
    if rows.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let mut grad = vec![0.0; model.weights.len()];
    add_data_gradient(model, data, rows, &mut grad);
    cfg.reg.add_gradient(&model.weights, cfg.reg_weight, &mut grad);
    for (ancestor, count) in tree.ancestors(ue)? {
        model.check_compatible(ancestor)?;
        let pull = 2.0 * cfg.eta / count as f64;
        for (g, (w, a)) in grad
            .iter_mut()
            .zip(model.weights.iter().zip(&ancestor.weights))
        {
            *g += pull * (w - a);
        }
    }
    Ok(grad)
}

/// Mini-batch SGD on the personalized objective, using the UE's training
/// split. Batch order is drawn from the given seed only.
pub fn local_train(
    model: &ModelParams,
    data: &Dataset,
    tree: &GroupTree,
    ue: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelParams, LearnError> {
    let ancestors = tree.ancestors(ue)?;
    sgd(model, data, Some(ancestors), ue, cfg, seed)
}

/// Mini-batch SGD on the plain empirical loss, no proximal terms.
pub fn fedavg_local_train(
    model: &ModelParams,
    data: &Dataset,
    ue: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelParams, LearnError> {
    sgd(model, data, None, ue, cfg, seed)
}

fn sgd(
    model: &ModelParams,
    data: &Dataset,
    ancestors: Option<[(&ModelParams, usize); 2]>,
    ue: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelParams, LearnError> {
    if data.train_idx.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    if let Some(pairs) = &ancestors {
        for (ancestor, _) in pairs {
            model.check_compatible(ancestor)?;
        }
    }
    let mut current = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = data.train_idx.clone();
    let batch = cfg.batch_size.max(1);
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for rows in order.chunks(batch) {
            let mut grad = vec![0.0; current.weights.len()];
            add_data_gradient(&current, data, rows, &mut grad);
            cfg.reg.add_gradient(&current.weights, cfg.reg_weight, &mut grad);
            if let Some(pairs) = &ancestors {
                for (ancestor, count) in pairs {
                    let pull = 2.0 * cfg.eta / *count as f64;
                    for (g, (w, a)) in grad
                        .iter_mut()
                        .zip(current.weights.iter().zip(&ancestor.weights))
                    {
                        *g += pull * (w - a);
                    }
                }
            }
            for (w, g) in current.weights.iter_mut().zip(&grad) {
                *w -= cfg.learning_rate * g;
            }
            if current.weights.iter().any(|w| !w.is_finite()) {
                return Err(LearnError::DivergenceDetected(ue));
            }
        }
        let loss = local_loss(&current, data, &order, cfg.reg, cfg.reg_weight)?;
        if !loss.is_finite() {
            return Err(LearnError::DivergenceDetected(ue));
        }
    }
    Ok(current)
}

/// Member-count-weighted mean of parameter vectors.
fn weighted_mean(
    parts: &[(&ModelParams, f64)],
) -> Result<ModelParams, LearnError> {
    let (first, _) = parts.first().ok_or(LearnError::EmptyGroup(0))?;
    let total: f64 = parts.iter().map(|(_, w)| w).sum();
    let mut out = ModelParams::zeros(first.layout);
    for (params, weight) in parts {
        first.check_compatible(params)?;
        let w = weight / total;
        for (o, v) in out.weights.iter_mut().zip(&params.weights) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Recomputes the level-1 and level-2 models from the personal models:
/// each parent is the member-count-weighted mean of its children.
pub fn hierarchical_average(tree: &mut GroupTree) -> Result<(), LearnError> {
    let mut level1 = Vec::with_capacity(tree.groups.len());
    for (g, members) in tree.groups.iter().enumerate() {
        if members.is_empty() {
            return Err(LearnError::EmptyGroup(g));
        }
        let parts: Vec<(&ModelParams, f64)> =
            members.iter().map(|&ue| (&tree.level0[ue], 1.0)).collect();
        level1.push(weighted_mean(&parts)?);
    }
    let parts: Vec<(&ModelParams, f64)> = level1
        .iter()
        .zip(&tree.groups)
        .map(|(m, members)| (m, members.len() as f64))
        .collect();
    tree.level2 = weighted_mean(&parts)?;
    tree.level1 = level1;
    Ok(())
}

/// Per-group running sum of the personal models a serving node holds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartialAggregate {
    pub group: usize,
    pub sum: Vec<f64>,
    pub count: usize,
}

/// Sums the personal models of `members` per group, as one serving node
/// would before forwarding to the central aggregator.
pub fn partial_group_aggregate(
    members: &[usize],
    tree: &GroupTree,
) -> Result<Vec<PartialAggregate>, LearnError> {
    let mut partials: Vec<PartialAggregate> = Vec::new();
    for &ue in members {
        let g = tree.group_of(ue)?;
        let model = &tree.level0[ue];
        match partials.iter_mut().find(|p| p.group == g) {
            Some(p) => {
                for (s, w) in p.sum.iter_mut().zip(&model.weights) {
                    *s += w;
                }
                p.count += 1;
            }
            None => partials.push(PartialAggregate {
                group: g,
                sum: model.weights.clone(),
                count: 1,
            }),
        }
    }
    Ok(partials)
}

/// Combines partial sums from every serving node into complete level-1
/// models and the level-2 model. Equals [`hierarchical_average`] whenever
/// the nodes jointly cover every UE exactly once.
pub fn combine_partial_aggregates(
    partials: &[PartialAggregate],
    tree: &GroupTree,
) -> Result<(Vec<ModelParams>, ModelParams), LearnError> {
    let layout = tree.level0[0].layout;
    let n_groups = tree.groups.len();
    let mut sums = vec![vec![0.0; layout.len()]; n_groups];
    let mut counts = vec![0usize; n_groups];
    for p in partials {
        if p.sum.len() != layout.len() {
            return Err(LearnError::ShapeMismatch {
                expected: layout.len(),
                found: p.sum.len(),
            });
        }
        for (s, v) in sums[p.group].iter_mut().zip(&p.sum) {
            *s += v;
        }
        counts[p.group] += p.count;
    }
    let mut level1 = Vec::with_capacity(n_groups);
    for g in 0..n_groups {
        if counts[g] == 0 {
            return Err(LearnError::EmptyGroup(g));
        }
        let mut weights = sums[g].clone();
        for w in &mut weights {
            *w /= counts[g] as f64;
        }
        level1.push(ModelParams { layout, weights });
    }
    let parts: Vec<(&ModelParams, f64)> = level1
        .iter()
        .zip(&counts)
        .map(|(m, &c)| (m, c as f64))
        .collect();
    let level2 = weighted_mean(&parts)?;
    Ok((level1, level2))
}

/// Reporting-only regional objective: the member-count-weighted sum of
/// each group's mean member loss at its group model, plus half-strength
/// proximal distance between group and regional models.
pub fn regional_objective(
    tree: &GroupTree,
    per_ue: &[Dataset],
    cfg: &TrainConfig,
) -> Result<f64, LearnError> {
    let n = tree.n_ues() as f64;
    let mut value = 0.0;
    for (g, members) in tree.groups.iter().enumerate() {
        let mut group_loss = 0.0;
        for &ue in members {
            group_loss += local_loss(
                &tree.level1[g],
                &per_ue[ue],
                &per_ue[ue].train_idx,
                cfg.reg,
                cfg.reg_weight,
            )?;
        }
        group_loss /= members.len() as f64;
        let prox = cfg.eta / 2.0 * tree.level1[g].sq_distance(&tree.level2);
        value += members.len() as f64 / n * (group_loss + prox);
    }
    Ok(value)
}

/// Cluster-linkage rule for regrouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Single,
    Complete,
    Average,
}

/// Agglomerative clustering of personal models by Euclidean distance.
/// Returns the membership partition cut at `n_groups` clusters and the
/// full merge sequence. Ties break toward the pair whose clusters hold
/// the lowest UE indices.
pub fn recluster(
    level0: &[ModelParams],
    n_groups: usize,
    linkage: Linkage,
) -> Result<(Vec<Vec<usize>>, Vec<MergeStep>), LearnError> {
    let n = level0.len();
    let mut dist = vec![vec![0.0f64; n]; n];
    for a in 0..n {
        for b in (a + 1)..n {
            let d = level0[a].distance(&level0[b]);
            dist[a][b] = d;
            dist[b][a] = d;
        }
    }
    cluster_from_dist(dist, n_groups, linkage)
}

/// Agglomerative clustering of arbitrary feature vectors, one per UE,
/// under the same rules as `recluster`.
pub fn recluster_vectors(
    vectors: &[Vec<f64>],
    n_groups: usize,
    linkage: Linkage,
) -> Result<(Vec<Vec<usize>>, Vec<MergeStep>), LearnError> {
    let n = vectors.len();
    for v in vectors {
        if v.len() != vectors[0].len() {
            return Err(LearnError::ShapeMismatch {
                expected: vectors[0].len(),
                found: v.len(),
            });
        }
    }
    let mut dist = vec![vec![0.0f64; n]; n];
    for a in 0..n {
        for b in (a + 1)..n {
            let d = vectors[a]
                .iter()
                .zip(&vectors[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            dist[a][b] = d;
            dist[b][a] = d;
        }
    }
    cluster_from_dist(dist, n_groups, linkage)
}

fn cluster_from_dist(
    dist: Vec<Vec<f64>>,
    n_groups: usize,
    linkage: Linkage,
) -> Result<(Vec<Vec<usize>>, Vec<MergeStep>), LearnError> {
    let n = dist.len();
    if n == 0 || n_groups == 0 || n_groups > n {
        return Err(LearnError::BadPartition(n));
    }

    struct Cluster {
        id: usize,
        members: Vec<usize>,
    }
    let mut clusters: Vec<Cluster> = (0..n)
        .map(|i| Cluster {
            id: i,
            members: vec![i],
        })
        .collect();
    // Distances between active clusters, indexed by position in `clusters`.
    let mut cd: Vec<Vec<f64>> = dist;

    let mut merges = Vec::with_capacity(n - 1);
    let mut cut: Option<Vec<Vec<usize>>> = None;
    if n_groups == n {
        cut = Some(clusters.iter().map(|c| c.members.clone()).collect());
    }
    let mut next_id = n;
    while clusters.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                let key = (
                    cd[i][j],
                    clusters[i].members[0].min(clusters[j].members[0]),
                    clusters[i].members[0].max(clusters[j].members[0]),
                );
                let better = match best {
                    None => true,
                    Some((bd, bl, bh)) => {
                        key < (bd, bl, bh)
                    }
                };
                if better {
                    best = Some((key.0, i, j));
                }
            }
        }
        let (height, i, j) = best.unwrap();
        let (si, sj) = (clusters[i].members.len() as f64, clusters[j].members.len() as f64);
        // Update distances from the merged cluster to every survivor.
        for k in 0..clusters.len() {
            if k == i || k == j {
                continue;
            }
            let d = match linkage {
                Linkage::Single => cd[i][k].min(cd[j][k]),
                Linkage::Complete => cd[i][k].max(cd[j][k]),
                Linkage::Average => (si * cd[i][k] + sj * cd[j][k]) / (si + sj),
            };
            cd[i][k] = d;
            cd[k][i] = d;
        }
        merges.push(MergeStep {
            left: clusters[i].id,
            right: clusters[j].id,
            height,
            size: clusters[i].members.len() + clusters[j].members.len(),
        });
        let absorbed = clusters.remove(j).members;
        cd.remove(j);
        for row in &mut cd {
            row.remove(j);
        }
        clusters[i].members.extend(absorbed);
        clusters[i].members.sort_unstable();
        clusters[i].id = next_id;
        next_id += 1;

        if clusters.len() == n_groups {
            let mut groups: Vec<Vec<usize>> =
                clusters.iter().map(|c| c.members.clone()).collect();
            groups.sort_by_key(|g| g[0]);
            cut = Some(groups);
        }
    }
    Ok((cut.expect("cut recorded when cluster count reached n_groups"), merges))
}

/// Data-size-weighted mean of client models.
pub fn fedavg_round(
    models: &[ModelParams],
    data_sizes: &[u64],
) -> Result<ModelParams, LearnError> {
    if models.is_empty() || models.len() != data_sizes.len() {
        return Err(LearnError::EmptyGroup(0));
    }
    let parts: Vec<(&ModelParams, f64)> = models
        .iter()
        .zip(data_sizes)
        .map(|(m, &s)| (m, s as f64))
        .collect();
    weighted_mean(&parts)
}
