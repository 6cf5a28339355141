//! The performance predictor: message passing over a design subgraph,
//! a label-propagated instance channel projected to a task embedding, and
//! a small prediction head, trained on squared error plus a pairwise rank
//! term.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{descend, sigmoid, Mat, NodeId, Tape};
use crate::graph::Subgraph;
use crate::sampling::{binary_entropy, sample_weighted_without_replacement, softmax};

/// Relative improvement under which a training epoch counts as stale.
const TRAIN_REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct MetaModelConfig {
    pub hidden_dim: usize,
    pub mp_layers: usize,
    /// Label propagation steps.
    pub lp_layers: usize,
    /// Propagation mixing coefficient, strictly inside (0, 1).
    pub alpha: f64,
    /// Rank-loss weight.
    pub lambda: f64,
    /// Rank temperature.
    pub tau: f64,
    /// Instance columns sampled for the task-specific channel.
    pub instance_sample_size: usize,
    pub max_train_epochs: usize,
    /// Stale epochs tolerated before training stops.
    pub patience: usize,
    pub learning_rate: f64,
}

impl Default for MetaModelConfig {
    fn default() -> Self {
        MetaModelConfig {
            hidden_dim: 32,
            mp_layers: 3,
            lp_layers: 3,
            alpha: 0.8,
            lambda: 1.0,
            tau: 0.1,
            instance_sample_size: 32,
            max_train_epochs: 200,
            patience: 10,
            // The rank term sums over anchor pairs, so gradient scale grows
            // quadratically with the anchors; this rate stays stable at the
            // default exploration size of 30.
            learning_rate: 1e-3,
        }
    }
}

impl MetaModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_dim == 0 {
            return Err(ModelError::Config("hidden_dim must be positive"));
        }
        if self.mp_layers == 0 {
            return Err(ModelError::Config("mp_layers must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ModelError::Config("alpha must lie strictly inside (0, 1)"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ModelError::Config("lambda must be a finite non-negative number"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(ModelError::Config("tau must be a finite positive number"));
        }
        if self.instance_sample_size == 0 {
            return Err(ModelError::Config("instance_sample_size must be positive"));
        }
        if self.patience == 0 {
            return Err(ModelError::Config("patience must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config("learning_rate must be a finite positive number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    Config(&'static str),
    ShapeMismatch(&'static str),
    NonFinite { layer: usize },
    Diverged,
    TooFewAnchors,
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Config(msg) => write!(f, "bad model config: {msg}"),
            ModelError::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            ModelError::NonFinite { layer } => {
                write!(f, "non-finite values appeared at layer {layer}")
            }
            ModelError::Diverged => write!(f, "training diverged twice; giving up"),
            ModelError::TooFewAnchors => write!(f, "training needs at least two scored designs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpLayer {
    pub w_self: Mat,
    pub w_msg: Mat,
    pub bias: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

/// Trainable state. `Graph` is the full model; `FeaturesOnly` applies the
/// head straight to raw design features and ignores the subgraph.
#[derive(Debug, Clone, PartialEq)]
pub enum MetaModelParams {
    Graph { mp: Vec<MpLayer>, proj_w: Mat, proj_b: Mat, head: Head },
    FeaturesOnly { head: Head },
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let limit = libm::sqrt(6.0 / (rows + cols).max(1) as f64);
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Mat::from_vec(rows, cols, data)
}

impl MetaModelParams {
    /// Full model over a subgraph. `channel_width` may be zero, in which
    /// case the task-specific embedding degenerates to its bias.
    pub fn init_graph(
        config: &MetaModelConfig,
        feature_width: usize,
        relation_width: usize,
        channel_width: usize,
        rng: &mut ChaCha8Rng,
    ) -> MetaModelParams {
        let h = config.hidden_dim;
        let mp = (0..config.mp_layers)
            .map(|layer| {
                let input = if layer == 0 { feature_width } else { h };
                MpLayer {
                    w_self: glorot(rng, input, h),
                    w_msg: glorot(rng, input + relation_width, h),
                    bias: Mat::zeros(1, h),
                }
            })
            .collect();
        MetaModelParams::Graph {
            mp,
            proj_w: glorot(rng, channel_width, h),
            proj_b: Mat::zeros(1, h),
            head: Head {
                w1: glorot(rng, 2 * h, h),
                b1: Mat::zeros(1, h),
                w2: glorot(rng, h, 1),
                b2: Mat::zeros(1, 1),
            },
        }
    }

    /// Graph-blind model: the head applied to raw features.
    pub fn init_features_only(
        config: &MetaModelConfig,
        feature_width: usize,
        rng: &mut ChaCha8Rng,
    ) -> MetaModelParams {
        let h = config.hidden_dim;
        MetaModelParams::FeaturesOnly {
            head: Head {
                w1: glorot(rng, feature_width, h),
                b1: Mat::zeros(1, h),
                w2: glorot(rng, h, 1),
                b2: Mat::zeros(1, 1),
            },
        }
    }

    /// Redraw weights in place (biases back to zero), keeping all shapes.
    fn reinit(&mut self, rng: &mut ChaCha8Rng) {
        let redraw = |m: &mut Mat, rng: &mut ChaCha8Rng| *m = glorot(rng, m.rows, m.cols);
        match self {
            MetaModelParams::Graph { mp, proj_w, proj_b, head } => {
                for layer in mp.iter_mut() {
                    redraw(&mut layer.w_self, rng);
                    redraw(&mut layer.w_msg, rng);
                    layer.bias.fill(0.0);
                }
                redraw(proj_w, rng);
                proj_b.fill(0.0);
                redraw(&mut head.w1, rng);
                head.b1.fill(0.0);
                redraw(&mut head.w2, rng);
                head.b2.fill(0.0);
            }
            MetaModelParams::FeaturesOnly { head } => {
                redraw(&mut head.w1, rng);
                head.b1.fill(0.0);
                redraw(&mut head.w2, rng);
                head.b2.fill(0.0);
            }
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            MetaModelParams::Graph { .. } => "graph",
            MetaModelParams::FeaturesOnly { .. } => "features_only",
        }
    }

    /// Width of the propagated channel this model projects (None for the
    /// graph-blind variant).
    pub fn channel_width(&self) -> Option<usize> {
        match self {
            MetaModelParams::Graph { proj_w, .. } => Some(proj_w.rows),
            MetaModelParams::FeaturesOnly { .. } => None,
        }
    }

    /// Named tensors in canonical order, for checkpointing.
    pub fn named_tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        match self {
            MetaModelParams::Graph { mp, proj_w, proj_b, head } => {
                for (i, layer) in mp.iter().enumerate() {
                    out.push((alloc::format!("mp.{i}.w_self"), &layer.w_self));
                    out.push((alloc::format!("mp.{i}.w_msg"), &layer.w_msg));
                    out.push((alloc::format!("mp.{i}.bias"), &layer.bias));
                }
                out.push((String::from("proj.w"), proj_w));
                out.push((String::from("proj.b"), proj_b));
                push_head(&mut out, head);
            }
            MetaModelParams::FeaturesOnly { head } => push_head(&mut out, head),
        }
        out
    }

    fn mats_mut(&mut self) -> Vec<&mut Mat> {
        match self {
            MetaModelParams::Graph { mp, proj_w, proj_b, head } => {
                let mut out: Vec<&mut Mat> = Vec::new();
                for layer in mp.iter_mut() {
                    out.push(&mut layer.w_self);
                    out.push(&mut layer.w_msg);
                    out.push(&mut layer.bias);
                }
                out.push(proj_w);
                out.push(proj_b);
                out.extend([&mut head.w1, &mut head.b1, &mut head.w2, &mut head.b2]);
                out
            }
            MetaModelParams::FeaturesOnly { head } => {
                vec![&mut head.w1, &mut head.b1, &mut head.w2, &mut head.b2]
            }
        }
    }

}

fn push_head<'a>(out: &mut Vec<(String, &'a Mat)>, head: &'a Head) {
    out.push((String::from("head.w1"), &head.w1));
    out.push((String::from("head.b1"), &head.b1));
    out.push((String::from("head.w2"), &head.w2));
    out.push((String::from("head.b2"), &head.b2));
}

/// Anchor rows of per-instance correctness, indexed by subgraph-local row.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMatrix {
    anchors: Vec<usize>,
    bits: Vec<Vec<bool>>,
    columns: usize,
}

impl InstanceMatrix {
    pub fn new(anchors: Vec<usize>, bits: Vec<Vec<bool>>) -> Result<InstanceMatrix, ModelError> {
        if anchors.is_empty() || anchors.len() != bits.len() {
            return Err(ModelError::ShapeMismatch("one bit row per anchor, at least one anchor"));
        }
        let columns = bits[0].len();
        if bits.iter().any(|row| row.len() != columns) {
            return Err(ModelError::ShapeMismatch("instance rows have unequal lengths"));
        }
        Ok(InstanceMatrix { anchors, bits, columns })
    }

    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn bit(&self, row: usize, column: usize) -> bool {
        self.bits[row][column]
    }

    /// Empirical binary entropy of each column over the anchor rows.
    pub fn column_entropies(&self) -> Vec<f64> {
        (0..self.columns)
            .map(|c| {
                let ones = self.bits.iter().filter(|row| row[c]).count();
                binary_entropy(ones as f64 / self.bits.len() as f64)
            })
            .collect()
    }
}

/// Draws `count` instance columns without replacement, weighting columns by
/// the softmax of their anchor-entropy. Asking for at least every column
/// returns them all in natural order without touching the rng.
pub fn select_instances(
    matrix: &InstanceMatrix,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    if count >= matrix.columns() {
        return (0..matrix.columns()).collect();
    }
    let weights = softmax(&matrix.column_entropies());
    sample_weighted_without_replacement(rng, &weights, count)
}

/// One step: Y <- alpha * D^(-1/2) A D^(-1/2) Y + (1 - alpha) * Y, applied
/// `steps` times. Isolated nodes have no normalized-adjacency term, so
/// their rows scale by (1 - alpha) each step.
///
/// `alpha` = 0 is allowed here (the identity map) even though configs
/// require it strictly positive.
pub fn label_propagate(
    sub: &Subgraph,
    y0: &Mat,
    alpha: f64,
    steps: usize,
) -> Result<Mat, ModelError> {
    if y0.rows != sub.node_count() {
        return Err(ModelError::ShapeMismatch("one propagation row per subgraph node"));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(ModelError::Config("alpha must lie in [0, 1)"));
    }
    let n = y0.rows;
    let cols = y0.cols;
    let mut degree = vec![0u32; n];
    for &(u, v, _) in &sub.edges {
        degree[u as usize] += 1;
        degree[v as usize] += 1;
    }
    let inv_sqrt: Vec<f64> =
        degree.iter().map(|&d| if d == 0 { 0.0 } else { 1.0 / libm::sqrt(d as f64) }).collect();

    let mut y = y0.clone();
    let mut next = Mat::zeros(n, cols);
    for _ in 0..steps {
        for (o, &v) in next.data.iter_mut().zip(&y.data) {
            *o = (1.0 - alpha) * v;
        }
        for &(u, v, _) in &sub.edges {
            let (u, v) = (u as usize, v as usize);
            let w = alpha * inv_sqrt[u] * inv_sqrt[v];
            for c in 0..cols {
                next.data[u * cols + c] += w * y.data[v * cols + c];
                next.data[v * cols + c] += w * y.data[u * cols + c];
            }
        }
        core::mem::swap(&mut y, &mut next);
    }
    Ok(y)
}

/// Squared error plus the weighted pairwise rank term over all unordered
/// pairs with distinct targets: pairs ranked in target order pull the loss
/// down, inverted pairs push it up. Tied targets contribute nothing.
pub fn loss(
    predictions: &[f64],
    targets: &[f64],
    lambda: f64,
    tau: f64,
) -> Result<f64, ModelError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(ModelError::Config("tau must be a finite positive number"));
    }
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(ModelError::ShapeMismatch("predictions and targets must align"));
    }
    let mut total = 0.0;
    for (p, y) in predictions.iter().zip(targets) {
        total += (p - y) * (p - y);
    }
    for i in 0..targets.len() {
        for j in i + 1..targets.len() {
            if targets[i] == targets[j] {
                continue;
            }
            let sign = if targets[i] > targets[j] { -1.0 } else { 1.0 };
            total += lambda * sign * sigmoid((predictions[i] - predictions[j]) / tau);
        }
    }
    Ok(total)
}

/// Shared data plumbing for `forward` and `train`.
///
/// `edge_features` holds one relation one-hot per subgraph edge, in edge
/// order; `channel` is the already-propagated task matrix (zero width when
/// the task-specific module is off).
#[derive(Clone, Copy)]
pub struct ModelInputs<'a> {
    pub subgraph: &'a Subgraph,
    pub features: &'a Mat,
    pub edge_features: &'a Mat,
    pub channel: &'a Mat,
}

struct Built {
    tape: Tape,
    prediction: NodeId,
    loss: Option<NodeId>,
    param_ids: Vec<NodeId>,
    /// Activation node per layer, for locating non-finite blowups.
    layer_outputs: Vec<NodeId>,
}

struct LossSpec<'a> {
    anchors: &'a [usize],
    targets: &'a [f64],
    lambda: f64,
    tau: f64,
}

fn build(
    params: &MetaModelParams,
    config: &MetaModelConfig,
    inputs: &ModelInputs<'_>,
    loss_spec: Option<&LossSpec<'_>>,
) -> Result<Built, ModelError> {
    let sub = inputs.subgraph;
    let n = sub.node_count();
    if inputs.features.rows != n {
        return Err(ModelError::ShapeMismatch("one feature row per subgraph node"));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(inputs.features.clone());
    let mut param_ids = Vec::new();
    let mut layer_outputs = Vec::new();

    let prediction = match params {
        MetaModelParams::Graph { mp, proj_w, proj_b, head } => {
            if mp.len() != config.mp_layers {
                return Err(ModelError::ShapeMismatch("config and params disagree on depth"));
            }
            if inputs.features.cols != mp[0].w_self.rows {
                return Err(ModelError::ShapeMismatch("feature width vs first layer"));
            }
            let relation_width = mp[0].w_msg.rows - mp[0].w_self.rows;
            if inputs.edge_features.rows != sub.edges.len()
                || inputs.edge_features.cols != relation_width
            {
                return Err(ModelError::ShapeMismatch("edge features vs message transform"));
            }
            if inputs.channel.rows != n || inputs.channel.cols != proj_w.rows {
                return Err(ModelError::ShapeMismatch("channel vs projection"));
            }

            let ef = tape.leaf(inputs.edge_features.clone());
            let ch = tape.leaf(inputs.channel.clone());
            // Undirected edges act in both directions.
            let mut srcs = Vec::with_capacity(2 * sub.edges.len());
            let mut dsts = Vec::with_capacity(2 * sub.edges.len());
            let mut edge_rows = Vec::with_capacity(2 * sub.edges.len());
            for (i, &(u, v, _)) in sub.edges.iter().enumerate() {
                srcs.extend([u, v]);
                dsts.extend([v, u]);
                edge_rows.extend([i as u32, i as u32]);
            }
            let edge_both = tape.gather_rows(ef, edge_rows);

            let mut h = x;
            for layer in mp {
                let ws = tape.leaf(layer.w_self.clone());
                let wm = tape.leaf(layer.w_msg.clone());
                let b = tape.leaf(layer.bias.clone());
                param_ids.extend([ws, wm, b]);
                let gathered = tape.gather_rows(h, srcs.clone());
                let cat = tape.concat_cols(gathered, edge_both);
                let msgs = tape.matmul(cat, wm);
                let agg = tape.segment_mean(msgs, dsts.clone(), n);
                let selfed = tape.matmul(h, ws);
                let summed = tape.add(selfed, agg);
                let biased = tape.add_row(summed, b);
                h = tape.relu(biased);
                layer_outputs.push(h);
            }

            let pw = tape.leaf(proj_w.clone());
            let pb = tape.leaf(proj_b.clone());
            param_ids.extend([pw, pb]);
            let projected = tape.matmul(ch, pw);
            let z = tape.add_row(projected, pb);
            layer_outputs.push(z);

            let head_in = tape.concat_cols(h, z);
            build_head(&mut tape, head, head_in, &mut param_ids, &mut layer_outputs)
        }
        MetaModelParams::FeaturesOnly { head } => {
            if inputs.features.cols != head.w1.rows {
                return Err(ModelError::ShapeMismatch("feature width vs head"));
            }
            build_head(&mut tape, head, x, &mut param_ids, &mut layer_outputs)
        }
    };

    let loss = match loss_spec {
        None => None,
        Some(spec) => {
            let anchor_rows: Vec<u32> = spec.anchors.iter().map(|&a| a as u32).collect();
            let yhat = tape.gather_rows(prediction, anchor_rows);
            let y = tape.leaf(Mat::column(spec.targets.to_vec()));
            let d = tape.sub(yhat, y);
            let sq = tape.mul_elem(d, d);
            let mse = tape.sum_all(sq);

            // Pairs split by the sign of their rank term: +sigma for pairs
            // already in target order (i first, smaller target), -sigma for
            // inverted ones.
            let mut plus = (Vec::new(), Vec::new());
            let mut minus = (Vec::new(), Vec::new());
            for i in 0..spec.targets.len() {
                for j in i + 1..spec.targets.len() {
                    if spec.targets[i] == spec.targets[j] {
                        continue;
                    }
                    let side = if spec.targets[i] > spec.targets[j] { &mut minus } else { &mut plus };
                    side.0.push(i as u32);
                    side.1.push(j as u32);
                }
            }
            let mut total = mse;
            if spec.lambda > 0.0 {
                for (pairs, sign) in [(&plus, 1.0), (&minus, -1.0)] {
                    if pairs.0.is_empty() {
                        continue;
                    }
                    let a = tape.gather_rows(yhat, pairs.0.clone());
                    let b = tape.gather_rows(yhat, pairs.1.clone());
                    let diffs = tape.sub(a, b);
                    let scaled = tape.scale(diffs, 1.0 / spec.tau);
                    let sig = tape.sigmoid(scaled);
                    let rank = tape.sum_all(sig);
                    let weighted = tape.scale(rank, sign * spec.lambda);
                    total = tape.add(total, weighted);
                }
            }
            Some(total)
        }
    };

    Ok(Built { tape, prediction, loss, param_ids, layer_outputs })
}

fn build_head(
    tape: &mut Tape,
    head: &Head,
    input: NodeId,
    param_ids: &mut Vec<NodeId>,
    layer_outputs: &mut Vec<NodeId>,
) -> NodeId {
    let w1 = tape.leaf(head.w1.clone());
    let b1 = tape.leaf(head.b1.clone());
    let w2 = tape.leaf(head.w2.clone());
    let b2 = tape.leaf(head.b2.clone());
    param_ids.extend([w1, b1, w2, b2]);
    let lin1 = tape.matmul(input, w1);
    let biased1 = tape.add_row(lin1, b1);
    let hidden = tape.relu(biased1);
    layer_outputs.push(hidden);
    let lin2 = tape.matmul(hidden, w2);
    let out = tape.add_row(lin2, b2);
    layer_outputs.push(out);
    out
}

/// Predicted score per subgraph node.
pub fn forward(
    params: &MetaModelParams,
    config: &MetaModelConfig,
    inputs: &ModelInputs<'_>,
) -> Result<Vec<f64>, ModelError> {
    let built = build(params, config, inputs, None)?;
    for (layer, &node) in built.layer_outputs.iter().enumerate() {
        if built.tape.value(node).data.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { layer });
        }
    }
    let pred = built.tape.value(built.prediction);
    Ok(pred.data.clone())
}

/// Combined loss at the current parameters plus its gradient for every
/// parameter tensor, in [`MetaModelParams::named_tensors`] order. Targets
/// are used as given; [`train`] min-max normalizes scores before reaching
/// the same objective. Mainly a verification surface: finite-difference
/// checks drive it from outside the crate.
pub fn loss_gradients(
    params: &MetaModelParams,
    config: &MetaModelConfig,
    inputs: &ModelInputs<'_>,
    anchors: &[usize],
    targets: &[f64],
) -> Result<(f64, Vec<Mat>), ModelError> {
    if !(config.tau > 0.0 && config.tau.is_finite()) {
        return Err(ModelError::Config("tau must be a finite positive number"));
    }
    if anchors.len() != targets.len() || anchors.is_empty() {
        return Err(ModelError::ShapeMismatch("one target per anchor"));
    }
    if anchors.iter().any(|&a| a >= inputs.subgraph.node_count()) {
        return Err(ModelError::ShapeMismatch("anchors must be subgraph rows"));
    }
    let spec =
        LossSpec { anchors, targets, lambda: config.lambda, tau: config.tau };
    let mut built = build(params, config, inputs, Some(&spec))?;
    let loss_node = built.loss.expect("loss requested");
    built.tape.backward(loss_node);
    let value = built.tape.value(loss_node).data[0];
    let grads =
        built.param_ids.iter().map(|&id| built.tape.grad(id).clone()).collect();
    Ok((value, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub loss: f64,
    pub epochs: usize,
    /// Training diverged once and restarted from fresh parameters.
    pub restarted: bool,
}

/// Gradient descent on the combined loss over the anchors (subgraph-local
/// rows paired with raw scores; targets are min-max normalized here).
/// Divergence triggers one restart from freshly drawn parameters; the rng
/// is consumed only in that case.
pub fn train(
    params: &mut MetaModelParams,
    config: &MetaModelConfig,
    inputs: &ModelInputs<'_>,
    anchors: &[usize],
    scores: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<TrainReport, ModelError> {
    config.validate()?;
    if anchors.len() < 2 {
        return Err(ModelError::TooFewAnchors);
    }
    if anchors.len() != scores.len() {
        return Err(ModelError::ShapeMismatch("one score per anchor"));
    }
    let n = inputs.subgraph.node_count();
    for (i, &a) in anchors.iter().enumerate() {
        if a >= n || anchors[..i].contains(&a) {
            return Err(ModelError::ShapeMismatch("anchors must be distinct subgraph rows"));
        }
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ModelError::ShapeMismatch("anchor scores must be finite"));
    }

    let targets = normalize_targets(scores);
    let spec = LossSpec { anchors, targets: &targets, lambda: config.lambda, tau: config.tau };

    let mut restarted = false;
    loop {
        let mut built = build(params, config, inputs, Some(&spec))?;
        let loss_node = built.loss.expect("loss requested");
        let report = descend(
            &mut built.tape,
            loss_node,
            &built.param_ids,
            config.learning_rate,
            config.max_train_epochs,
            config.patience,
            TRAIN_REL_TOL,
        );
        if report.diverged {
            if restarted {
                return Err(ModelError::Diverged);
            }
            restarted = true;
            params.reinit(rng);
            continue;
        }
        for (slot, &id) in params.mats_mut().into_iter().zip(&built.param_ids) {
            slot.data.copy_from_slice(&built.tape.value(id).data);
        }
        return Ok(TrainReport { loss: report.best_loss, epochs: report.epochs, restarted });
    }
}

/// Min-max to [0, 1]; a constant slice maps to all zeros.
fn normalize_targets(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; scores.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Coord;
    use rand::SeedableRng;

    fn line_subgraph(n: usize) -> Subgraph {
        Subgraph {
            nodes: (0..n).collect(),
            explored: vec![false; n],
            edges: (0..n - 1).map(|i| (i as u32, i as u32 + 1, Coord::Dim(0))).collect(),
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn propagation_mixes_an_edge_evenly() {
        let sub = line_subgraph(2);
        let y0 = Mat::column(vec![1.0, 0.0]);
        let y = label_propagate(&sub, &y0, 0.5, 1).unwrap();
        assert_eq!(y.data, vec![0.5, 0.5]);
    }

    #[test]
    fn propagation_at_alpha_zero_is_identity() {
        let sub = line_subgraph(4);
        let y0 = Mat::from_vec(4, 2, (0..8).map(f64::from).collect());
        let y = label_propagate(&sub, &y0, 0.0, 3).unwrap();
        assert_eq!(y.data, y0.data);
    }

    /// Dense oracle: (alpha*S + (1-alpha)*I)^K applied by explicit dense
    /// matrix products.
    fn dense_propagate(sub: &Subgraph, y0: &Mat, alpha: f64, steps: usize) -> Mat {
        let n = sub.node_count();
        let mut degree = vec![0.0f64; n];
        for &(u, v, _) in &sub.edges {
            degree[u as usize] += 1.0;
            degree[v as usize] += 1.0;
        }
        let mut m = vec![0.0f64; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0 - alpha;
        }
        for &(u, v, _) in &sub.edges {
            let (u, v) = (u as usize, v as usize);
            let w = alpha / libm::sqrt(degree[u] * degree[v]);
            m[u * n + v] += w;
            m[v * n + u] += w;
        }
        let mut y = y0.clone();
        for _ in 0..steps {
            let mut next = Mat::zeros(n, y.cols);
            for i in 0..n {
                for k in 0..n {
                    for c in 0..y.cols {
                        next.data[i * y.cols + c] += m[i * n + k] * y.data[k * y.cols + c];
                    }
                }
            }
            y = next;
        }
        y
    }

    fn random_subgraph(rng: &mut ChaCha8Rng, n: usize) -> Subgraph {
        let mut edges = Vec::new();
        for u in 0..n as u32 {
            for v in u + 1..n as u32 {
                if rng.gen_bool(0.25) {
                    edges.push((u, v, Coord::Dim(0)));
                }
            }
        }
        Subgraph { nodes: (0..n).collect(), explored: vec![false; n], edges }
    }

    #[test]
    fn propagation_matches_dense_oracle() {
        let mut r = rng(31);
        for _ in 0..10 {
            let n = r.gen_range(2..50);
            let sub = random_subgraph(&mut r, n);
            let y0 = Mat::from_vec(n, 3, (0..n * 3).map(|_| r.gen_range(-1.0..1.0)).collect());
            let alpha = r.gen_range(0.1..0.9);
            let steps = r.gen_range(0..=5);
            let fast = label_propagate(&sub, &y0, alpha, steps).unwrap();
            let slow = dense_propagate(&sub, &y0, alpha, steps);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn propagation_is_linear_in_the_rows() {
        let mut r = rng(32);
        let sub = random_subgraph(&mut r, 12);
        let y: Vec<f64> = (0..24).map(|_| r.gen_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..24).map(|_| r.gen_range(-1.0..1.0)).collect();
        let (a, b) = (0.7, -1.3);
        let mixed: Vec<f64> = y.iter().zip(&z).map(|(yi, zi)| a * yi + b * zi).collect();
        let py = label_propagate(&sub, &Mat::from_vec(12, 2, y), 0.8, 3).unwrap();
        let pz = label_propagate(&sub, &Mat::from_vec(12, 2, z), 0.8, 3).unwrap();
        let pm = label_propagate(&sub, &Mat::from_vec(12, 2, mixed), 0.8, 3).unwrap();
        for i in 0..pm.data.len() {
            assert!((pm.data[i] - (a * py.data[i] + b * pz.data[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn propagation_rejects_bad_shapes_and_alpha() {
        let sub = line_subgraph(3);
        let wrong = Mat::column(vec![1.0, 2.0]);
        assert!(matches!(
            label_propagate(&sub, &wrong, 0.5, 1),
            Err(ModelError::ShapeMismatch(_))
        ));
        let y0 = Mat::column(vec![1.0, 2.0, 3.0]);
        assert!(matches!(label_propagate(&sub, &y0, 1.0, 1), Err(ModelError::Config(_))));
    }

    #[test]
    fn loss_examples() {
        // Exact fit, squared error only.
        assert_eq!(loss(&[0.3, 0.9], &[0.3, 0.9], 0.0, 1.0).unwrap(), 0.0);
        // One discordant-free pair at equal predictions: sigma(0) = 1/2.
        let c = 0.4;
        let got = loss(&[c, c], &[1.0, 0.0], 1.0, 1.0).unwrap();
        let expect = (c - 1.0) * (c - 1.0) + c * c - 0.5;
        assert!((got - expect).abs() < 1e-12);
        // Tied targets contribute nothing.
        let tied = loss(&[0.1, 0.9], &[0.5, 0.5], 1.0, 1.0).unwrap();
        assert!((tied - (0.16 + 0.16)).abs() < 1e-12);
        assert!(matches!(loss(&[0.0], &[0.0], 1.0, 0.0), Err(ModelError::Config(_))));
        assert!(matches!(loss(&[0.0], &[0.0, 1.0], 1.0, 0.1), Err(ModelError::ShapeMismatch(_))));
    }

    #[test]
    fn rank_term_rewards_target_order() {
        let mut r = rng(33);
        for _ in 0..100 {
            let n = r.gen_range(2..8);
            let mut targets: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
            targets.sort_unstable_by(f64::total_cmp);
            targets.dedup();
            if targets.len() < 2 {
                continue;
            }
            // Order-preserving vs order-reversing predictions, zero MSE
            // influence removed by comparing pure rank terms (lambda high).
            let forwardp: Vec<f64> = targets.iter().map(|t| t * 2.0 + 0.1).collect();
            let reversed: Vec<f64> = targets.iter().map(|t| -t * 2.0).collect();
            let keep = loss(&forwardp, &targets, 1.0, 0.1).unwrap()
                - loss(&forwardp, &targets, 0.0, 0.1).unwrap();
            let flip = loss(&reversed, &targets, 1.0, 0.1).unwrap()
                - loss(&reversed, &targets, 0.0, 0.1).unwrap();
            assert!(keep < flip);
        }
    }

    #[test]
    fn select_instances_prefers_high_entropy_columns() {
        // Softmax over entropies [0, ln 2] gives probabilities [1/3, 2/3].
        let m = InstanceMatrix::new(
            vec![0, 1],
            vec![vec![true, true], vec![true, false]],
        )
        .unwrap();
        let entropies = m.column_entropies();
        assert!(entropies[0].abs() < 1e-12);
        assert!((entropies[1] - core::f64::consts::LN_2).abs() < 1e-12);
        let mut r = rng(34);
        let mut counts = [0u32; 2];
        for _ in 0..30_000 {
            counts[select_instances(&m, 1, &mut r)[0]] += 1;
        }
        let frac = counts[1] as f64 / 30_000.0;
        assert!((frac - 2.0 / 3.0).abs() < 0.01, "got {frac}");
    }

    #[test]
    fn select_instances_takes_all_without_rng_when_enough() {
        let m = InstanceMatrix::new(vec![0], vec![vec![true, false, true]]).unwrap();
        let mut a = rng(35);
        let mut b = rng(35);
        assert_eq!(select_instances(&m, 3, &mut a), vec![0, 1, 2]);
        assert_eq!(select_instances(&m, 5, &mut a), vec![0, 1, 2]);
        // rng untouched: both streams still aligned.
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
    }

    #[test]
    fn forward_matches_hand_computed_path() {
        // 3-node path, one message-passing layer, all parameters chosen
        // for easy pencil arithmetic; expectations computed by hand.
        let sub = line_subgraph(3);
        let params = MetaModelParams::Graph {
            mp: vec![MpLayer {
                w_self: Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]),
                w_msg: Mat::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5]),
                bias: Mat::from_vec(1, 2, vec![0.1, -0.2]),
            }],
            proj_w: Mat::from_vec(1, 2, vec![1.0, -1.0]),
            proj_b: Mat::from_vec(1, 2, vec![0.05, 0.05]),
            head: Head {
                w1: Mat::from_vec(4, 2, vec![0.5, 0.0, 0.0, 0.5, 1.0, 0.0, 0.0, 1.0]),
                b1: Mat::zeros(1, 2),
                w2: Mat::from_vec(2, 1, vec![1.0, -1.0]),
                b2: Mat::from_vec(1, 1, vec![0.1]),
            },
        };
        let config = MetaModelConfig { hidden_dim: 2, mp_layers: 1, ..Default::default() };
        let features = Mat::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let edge_features = Mat::from_vec(2, 1, vec![1.0, 1.0]);
        let channel = Mat::from_vec(3, 1, vec![0.2, 0.4, 0.0]);
        let inputs = ModelInputs {
            subgraph: &sub,
            features: &features,
            edge_features: &edge_features,
            channel: &channel,
        };
        let pred = forward(&params, &config, &inputs).unwrap();
        let expect = [0.65, 0.8, -0.25];
        for (p, e) in pred.iter().zip(expect) {
            assert!((p - e).abs() < 1e-12, "{p} vs {e}");
        }
    }

    #[test]
    fn zero_parameters_predict_uniformly() {
        let sub = line_subgraph(4);
        let config = MetaModelConfig { hidden_dim: 3, mp_layers: 2, ..Default::default() };
        let params = MetaModelParams::Graph {
            mp: vec![
                MpLayer {
                    w_self: Mat::zeros(5, 3),
                    w_msg: Mat::zeros(7, 3),
                    bias: Mat::zeros(1, 3),
                },
                MpLayer {
                    w_self: Mat::zeros(3, 3),
                    w_msg: Mat::zeros(5, 3),
                    bias: Mat::zeros(1, 3),
                },
            ],
            proj_w: Mat::zeros(0, 3),
            proj_b: Mat::zeros(1, 3),
            head: Head {
                w1: Mat::zeros(6, 3),
                b1: Mat::zeros(1, 3),
                w2: Mat::zeros(3, 1),
                b2: Mat::zeros(1, 1),
            },
        };
        let features = Mat::from_vec(4, 5, (0..20).map(|i| i as f64 / 10.0).collect());
        let edge_features = Mat::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let channel = Mat::zeros(4, 0);
        let inputs = ModelInputs {
            subgraph: &sub,
            features: &features,
            edge_features: &edge_features,
            channel: &channel,
        };
        let pred = forward(&params, &config, &inputs).unwrap();
        assert!(pred.iter().all(|&p| p == pred[0]));
    }

    #[test]
    fn isolated_node_ignores_the_rest_of_the_subgraph() {
        // Node 2 has no edges; changing the other nodes' features must not
        // move its prediction.
        let sub = Subgraph {
            nodes: vec![0, 1, 2],
            explored: vec![false; 3],
            edges: vec![(0, 1, Coord::Dim(0))],
        };
        let config = MetaModelConfig { hidden_dim: 4, mp_layers: 2, ..Default::default() };
        let mut r = rng(36);
        let params = MetaModelParams::init_graph(&config, 3, 1, 2, &mut r);
        let edge_features = Mat::from_vec(1, 1, vec![1.0]);
        let channel = Mat::from_vec(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);

        let base = Mat::from_vec(3, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
        let changed = Mat::from_vec(3, 3, vec![9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 0.7, 0.8, 0.9]);
        let p1 = forward(
            &params,
            &config,
            &ModelInputs {
                subgraph: &sub,
                features: &base,
                edge_features: &edge_features,
                channel: &channel,
            },
        )
        .unwrap();
        let p2 = forward(
            &params,
            &config,
            &ModelInputs {
                subgraph: &sub,
                features: &changed,
                edge_features: &edge_features,
                channel: &channel,
            },
        )
        .unwrap();
        assert_eq!(p1[2], p2[2]);
        assert_ne!(p1[0], p2[0]);
    }

    #[test]
    fn forward_is_equivariant_to_node_relabeling() {
        let config = MetaModelConfig { hidden_dim: 4, mp_layers: 2, ..Default::default() };
        let mut r = rng(37);
        let params = MetaModelParams::init_graph(&config, 2, 2, 1, &mut r);

        let n = 6;
        let sub = random_subgraph(&mut r, n);
        let features = Mat::from_vec(n, 2, (0..2 * n).map(|_| r.gen_range(-1.0..1.0)).collect());
        let edge_features = Mat::from_vec(
            sub.edges.len(),
            2,
            sub.edges.iter().flat_map(|_| [1.0, 0.0]).collect(),
        );
        let channel = Mat::from_vec(n, 1, (0..n).map(|_| r.gen_range(0.0..1.0)).collect());
        let base = forward(
            &params,
            &config,
            &ModelInputs {
                subgraph: &sub,
                features: &features,
                edge_features: &edge_features,
                channel: &channel,
            },
        )
        .unwrap();

        // Relabel node i as perm[i] and rebuild every row-aligned input.
        let perm: Vec<usize> = vec![3, 0, 5, 1, 4, 2];
        let mut pfeat = Mat::zeros(n, 2);
        let mut pchan = Mat::zeros(n, 1);
        for i in 0..n {
            for c in 0..2 {
                pfeat.set(perm[i], c, features.get(i, c));
            }
            pchan.set(perm[i], 0, channel.get(i, 0));
        }
        let pedges = sub
            .edges
            .iter()
            .map(|&(u, v, c)| {
                let (a, b) = (perm[u as usize] as u32, perm[v as usize] as u32);
                if a < b { (a, b, c) } else { (b, a, c) }
            })
            .collect();
        let psub = Subgraph { nodes: (0..n).collect(), explored: vec![false; n], edges: pedges };
        let permuted = forward(
            &params,
            &config,
            &ModelInputs {
                subgraph: &psub,
                features: &pfeat,
                edge_features: &edge_features,
                channel: &pchan,
            },
        )
        .unwrap();
        for i in 0..n {
            assert!((base[i] - permuted[perm[i]]).abs() < 1e-12);
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let config = MetaModelConfig::default();
        let a = MetaModelParams::init_graph(&config, 5, 3, 4, &mut rng(38));
        let b = MetaModelParams::init_graph(&config, 5, 3, 4, &mut rng(38));
        let c = MetaModelParams::init_graph(&config, 5, 3, 4, &mut rng(39));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    fn train_fixture(
        n: usize,
        seed: u64,
    ) -> (Subgraph, Mat, Mat, Mat, MetaModelConfig, MetaModelParams, ChaCha8Rng) {
        let sub = line_subgraph(n);
        // Width 8 keeps clear of all-dead rectifier initializations that a
        // width-4 net can hit on unlucky seeds.
        let config = MetaModelConfig {
            hidden_dim: 8,
            mp_layers: 1,
            max_train_epochs: 300,
            learning_rate: 0.05,
            ..Default::default()
        };
        let mut r = rng(seed);
        let features =
            Mat::from_vec(n, 2, (0..2 * n).map(|_| r.gen_range(-1.0..1.0)).collect());
        let edge_features =
            Mat::from_vec(n - 1, 1, core::iter::repeat(1.0).take(n - 1).collect());
        let channel = Mat::zeros(n, 0);
        let params = MetaModelParams::init_graph(&config, 2, 1, 0, &mut r);
        (sub, features, edge_features, channel, config, params, r)
    }

    #[test]
    fn training_learns_a_single_pair_order() {
        for seed in 0..20 {
            let (sub, features, edge_features, channel, config, mut params, mut r) =
                train_fixture(2, 40 + seed);
            let inputs = ModelInputs {
                subgraph: &sub,
                features: &features,
                edge_features: &edge_features,
                channel: &channel,
            };
            let report =
                train(&mut params, &config, &inputs, &[0, 1], &[1.0, 0.0], &mut r).unwrap();
            assert!(!report.restarted);
            let pred = forward(&params, &config, &inputs).unwrap();
            assert!(pred[0] > pred[1], "seed {seed}: {pred:?}");
        }
    }

    #[test]
    fn zero_epoch_training_keeps_parameters_and_reports_initial_loss() {
        let (sub, features, edge_features, channel, mut config, mut params, mut r) =
            train_fixture(3, 70);
        config.max_train_epochs = 0;
        let inputs = ModelInputs {
            subgraph: &sub,
            features: &features,
            edge_features: &edge_features,
            channel: &channel,
        };
        let before = params.clone();
        let pred = forward(&params, &config, &inputs).unwrap();
        let report =
            train(&mut params, &config, &inputs, &[0, 2], &[0.2, 0.8], &mut r).unwrap();
        assert_eq!(params, before);
        assert_eq!(report.epochs, 0);
        // The tape loss agrees with the scalar reference on normalized
        // targets ([0.2, 0.8] min-max to [0, 1]).
        let expect = loss(&[pred[0], pred[2]], &[0.0, 1.0], config.lambda, config.tau).unwrap();
        assert!((report.loss - expect).abs() < 1e-12);
    }

    #[test]
    fn training_rejects_degenerate_anchor_sets() {
        let (sub, features, edge_features, channel, config, mut params, mut r) =
            train_fixture(3, 71);
        let inputs = ModelInputs {
            subgraph: &sub,
            features: &features,
            edge_features: &edge_features,
            channel: &channel,
        };
        assert_eq!(
            train(&mut params, &config, &inputs, &[0], &[0.2], &mut r).unwrap_err(),
            ModelError::TooFewAnchors
        );
        assert!(matches!(
            train(&mut params, &config, &inputs, &[0, 0], &[0.2, 0.8], &mut r).unwrap_err(),
            ModelError::ShapeMismatch(_)
        ));
        assert!(matches!(
            train(&mut params, &config, &inputs, &[0, 1], &[0.2, f64::NEG_INFINITY], &mut r)
                .unwrap_err(),
            ModelError::ShapeMismatch(_)
        ));
    }

    #[test]
    fn training_restarts_once_on_divergence() {
        let (sub, features, edge_features, channel, mut config, mut params, mut r) =
            train_fixture(3, 72);
        config.learning_rate = 1e280;
        config.max_train_epochs = 10;
        let inputs = ModelInputs {
            subgraph: &sub,
            features: &features,
            edge_features: &edge_features,
            channel: &channel,
        };
        let err = train(&mut params, &config, &inputs, &[0, 2], &[0.1, 0.9], &mut r).unwrap_err();
        assert_eq!(err, ModelError::Diverged);
    }

    /// Central finite differences through the whole model and loss.
    #[test]
    fn training_gradients_match_finite_differences() {
        let mut r = rng(73);
        for trial in 0..5 {
            let n = r.gen_range(3..10);
            let sub = random_subgraph(&mut r, n);
            let config = MetaModelConfig {
                hidden_dim: 3,
                mp_layers: 2,
                ..Default::default()
            };
            let features =
                Mat::from_vec(n, 2, (0..2 * n).map(|_| r.gen_range(-1.0..1.0)).collect());
            let edge_features = Mat::from_vec(
                sub.edges.len(),
                2,
                sub.edges.iter().flat_map(|_| [0.0, 1.0]).collect(),
            );
            let channel =
                Mat::from_vec(n, 2, (0..2 * n).map(|_| r.gen_range(0.0..1.0)).collect());
            let params = MetaModelParams::init_graph(&config, 2, 2, 2, &mut r);
            let inputs = ModelInputs {
                subgraph: &sub,
                features: &features,
                edge_features: &edge_features,
                channel: &channel,
            };
            let anchors: Vec<usize> = (0..n).step_by(2).collect();
            let targets: Vec<f64> =
                anchors.iter().map(|_| r.gen_range(0.0..1.0)).collect();
            let spec = LossSpec {
                anchors: &anchors,
                targets: &targets,
                lambda: config.lambda,
                tau: config.tau,
            };
            let mut built = build(&params, &config, &inputs, Some(&spec)).unwrap();
            let loss_node = built.loss.unwrap();
            built.tape.backward(loss_node);
            let step = 1e-5;
            for &pid in &built.param_ids {
                for slot in 0..built.tape.value(pid).data.len() {
                    let analytic = built.tape.grad(pid).data[slot];
                    let orig = built.tape.value(pid).data[slot];
                    built.tape.leaf_mut(pid).data[slot] = orig + step;
                    built.tape.refresh();
                    let hi = built.tape.value(loss_node).data[0];
                    built.tape.leaf_mut(pid).data[slot] = orig - step;
                    built.tape.refresh();
                    let lo = built.tape.value(loss_node).data[0];
                    built.tape.leaf_mut(pid).data[slot] = orig;
                    built.tape.refresh();
                    let fd = (hi - lo) / (2.0 * step);
                    let err = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1.0);
                    assert!(err < 1e-4, "trial {trial} param {pid} slot {slot}: {analytic} vs {fd}");
                }
                built.tape.backward(loss_node);
            }
        }
    }
}
