//! Joint-value constructions over per-agent utilities.
//!
//! All mixers are batched: utilities arrive as a `B × I` node and the output
//! is a `B × 1` column of `Q_tot`. [`MixBatch`] carries both state encodings
//! so any mixer can consume the same batch.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Activation, CsrMatrix, Eager, Graph, Linear, Matrix, ParamId, ParamStore, Reduce, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MixerKind {
    Vdn,
    Qmix,
    Kmarl,
}

impl MixerKind {
    pub const ALL: [MixerKind; 3] = [MixerKind::Vdn, MixerKind::Qmix, MixerKind::Kmarl];

    pub fn as_str(self) -> &'static str {
        match self {
            MixerKind::Vdn => "vdn",
            MixerKind::Qmix => "qmix",
            MixerKind::Kmarl => "kmarl",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config("mixer", format!("unknown mixer `{s}`")))
    }
}

impl std::fmt::Display for MixerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Max,
}

impl Pooling {
    fn reduce(self) -> Reduce {
        match self {
            Pooling::Mean => Reduce::MeanRows,
            Pooling::Max => Reduce::MaxRows,
        }
    }
}

/// How hypernetwork outputs become mixing weights. `Unconstrained` exists to
/// exercise the monotonicity check and is not a training option.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightConstraint {
    Abs,
    Unconstrained,
}

impl WeightConstraint {
    fn apply<S: Scalar, G: Graph<S>>(self, g: &mut G, x: &G::Node) -> G::Node {
        match self {
            WeightConstraint::Abs => g.activation(x, Activation::Abs),
            WeightConstraint::Unconstrained => g.activation(x, Activation::Identity),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixerConfig {
    pub mixing_hidden: usize,
    pub gnn_layers: usize,
    pub gnn_width: usize,
    pub gnn_activation: Activation,
    pub pooling: Pooling,
    pub weight_constraint: WeightConstraint,
}

impl Default for MixerConfig {
    fn default() -> Self {
        Self {
            mixing_hidden: 32,
            gnn_layers: 2,
            gnn_width: 32,
            gnn_activation: Activation::Relu,
            pooling: Pooling::Mean,
            weight_constraint: WeightConstraint::Abs,
        }
    }
}

/// Per-batch mixer inputs for `B` samples of `I` agents.
#[derive(Clone, Debug)]
pub struct MixBatch<S> {
    pub num_agents: usize,
    /// `B × (I·d)`: each sample's node features concatenated in agent order.
    pub states: Matrix<S>,
    /// `(B·I) × d`: node features stacked sample by sample.
    pub nodes: Matrix<S>,
    /// Block-diagonal `(B·I) × (B·I)` adjacency, pre-scaled by `1/I`.
    pub adjacency: Rc<CsrMatrix<S>>,
}

impl<S: Scalar> MixBatch<S> {
    /// `features[b]` is `I × d`, `adjacency[b]` is `I × I`.
    pub fn new(features: &[&Matrix<S>], adjacency: &[&Matrix<S>]) -> Result<Self> {
        let first = features.first().ok_or(Error::EmptyInput { op: "MixBatch::new" })?;
        let (n, d) = first.shape();
        if adjacency.len() != features.len() {
            return Err(Error::ShapeMismatch {
                op: "MixBatch::new",
                left: (features.len(), n),
                right: (adjacency.len(), n),
            });
        }
        for (f, a) in features.iter().zip(adjacency) {
            if f.shape() != (n, d) || a.shape() != (n, n) {
                return Err(Error::ShapeMismatch {
                    op: "MixBatch::new",
                    left: f.shape(),
                    right: a.shape(),
                });
            }
        }
        let b = features.len();
        let mut nodes = Vec::with_capacity(b * n * d);
        features.iter().for_each(|f| nodes.extend_from_slice(f.data()));
        let nodes = Matrix::new(b * n, d, nodes)?;
        let states = nodes.reshape(b, n * d)?;
        let blocks: Vec<Matrix<S>> = adjacency.iter().map(|a| (*a).clone()).collect();
        let adjacency = CsrMatrix::block_diagonal(&blocks).scale(S::one() / S::of(n as f64));
        Ok(Self {
            num_agents: n,
            states,
            nodes,
            adjacency: Rc::new(adjacency),
        })
    }

    pub fn single(features: &Matrix<S>, adjacency: &Matrix<S>) -> Result<Self> {
        Self::new(&[features], &[adjacency])
    }

    pub fn batch_size(&self) -> usize {
        self.states.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.nodes.cols()
    }
}

/// `Σ q_i`, summed in ascending order so the result is exactly
/// independent of agent order.
pub fn vdn_mix<S: Scalar>(q: &[S]) -> S {
    let mut sorted = q.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    sorted.into_iter().fold(S::zero(), |acc, v| acc + v)
}

/// Hypernetwork mixing head: state-conditioned `W1, b1, W2` and a
/// state-value bias `V(s)` through one hidden relu layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingHead {
    pub hyper_w1: Linear,
    pub hyper_b1: Linear,
    pub hyper_w2: Linear,
    pub value_hidden: Linear,
    pub value_out: Linear,
    /// Width of the `W1` output per sample: `I·H` (per agent) or `H` (shared).
    pub shared_weight: bool,
    pub hidden: usize,
    pub constraint: WeightConstraint,
}

impl MixingHead {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        state_dim: usize,
        num_agents: usize,
        shared_weight: bool,
        config: &MixerConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let h = config.mixing_hidden;
        let w1_width = if shared_weight { h } else { num_agents * h };
        Self {
            hyper_w1: Linear::new(store, &format!("{prefix}.hyper_w1"), state_dim, w1_width, rng),
            hyper_b1: Linear::new(store, &format!("{prefix}.hyper_b1"), state_dim, h, rng),
            hyper_w2: Linear::new(store, &format!("{prefix}.hyper_w2"), state_dim, h, rng),
            value_hidden: Linear::new(store, &format!("{prefix}.value_hidden"), state_dim, h, rng),
            value_out: Linear::new(store, &format!("{prefix}.value_out"), h, 1, rng),
            shared_weight,
            hidden: h,
            constraint: config.weight_constraint,
        }
    }

    /// `Q_tot = W2ᵀ·elu(W1ᵀ·q + b1) + V(s)` per row; `q` is `B × I`, `state` is `B × state_dim`.
    pub fn forward<S: Scalar, G: Graph<S>>(&self, g: &mut G, q: &G::Node, state: &G::Node) -> Result<G::Node> {
        let (b, n) = g.value(q).shape();
        let h = self.hidden;
        let w1_raw = self.hyper_w1.forward(g, state)?;
        let w1 = self.constraint.apply(g, &w1_raw);
        let pre = if self.shared_weight {
            let ones = g.input(Matrix::filled(n, h, S::one()));
            let qsum = g.matmul(q, &ones)?;
            g.hadamard(&qsum, &w1)?
        } else {
            let expand = g.input(Matrix::from_fn(
                n,
                n * h,
                |i, c| if c / h == i { S::one() } else { S::zero() },
            ));
            let collapse = g.input(Matrix::from_fn(
                n * h,
                h,
                |r, c| if r % h == c { S::one() } else { S::zero() },
            ));
            let q_wide = g.matmul(q, &expand)?;
            let weighted = g.hadamard(&q_wide, &w1)?;
            g.matmul(&weighted, &collapse)?
        };
        let b1 = self.hyper_b1.forward(g, state)?;
        let pre = g.add(&pre, &b1)?;
        let hidden = g.activation(&pre, Activation::Elu);
        let w2_raw = self.hyper_w2.forward(g, state)?;
        let w2 = self.constraint.apply(g, &w2_raw);
        let mixed = g.hadamard(&hidden, &w2)?;
        let ones = g.input(Matrix::filled(h, 1, S::one()));
        let mixed = g.matmul(&mixed, &ones)?;
        let v = self.value_hidden.forward(g, state)?;
        let v = g.activation(&v, Activation::Relu);
        let v = self.value_out.forward(g, &v)?;
        debug_assert_eq!(g.value(&v).rows(), b);
        g.add(&mixed, &v)
    }
}

/// Monotonic mixing conditioned on the ordered concatenation of observations.
#[derive(Clone, Debug, PartialEq)]
pub struct QmixMixer {
    pub head: MixingHead,
    pub num_agents: usize,
    pub state_dim: usize,
}

impl QmixMixer {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        num_agents: usize,
        feature_dim: usize,
        config: &MixerConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let state_dim = num_agents * feature_dim;
        Self {
            head: MixingHead::new(store, "mixer", state_dim, num_agents, false, config, rng),
            num_agents,
            state_dim,
        }
    }

    pub fn forward<S: Scalar, G: Graph<S>>(&self, g: &mut G, q: &G::Node, batch: &MixBatch<S>) -> Result<G::Node> {
        if batch.states.cols() != self.state_dim || g.value(q).cols() != self.num_agents {
            return Err(Error::ShapeMismatch {
                op: "QmixMixer::forward",
                left: batch.states.shape(),
                right: (g.value(q).cols(), self.state_dim),
            });
        }
        let state = g.input(batch.states.clone());
        self.head.forward(g, q, &state)
    }
}

/// One graph-convolution layer's weights (no bias).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GnnLayer {
    pub w_self: ParamId,
    pub w_other: ParamId,
}

/// `σ((1/N)·A·h·W_other + h·W_self)` with `N` the number of nodes.
pub fn gnn_layer<S: Scalar>(
    h: &Matrix<S>,
    adjacency: &Matrix<S>,
    w_self: &Matrix<S>,
    w_other: &Matrix<S>,
    activation: Activation,
) -> Result<Matrix<S>> {
    let n = h.rows();
    if adjacency.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            op: "gnn_layer",
            left: adjacency.shape(),
            right: (n, n),
        });
    }
    let inv_n = S::one() / S::of(n as f64);
    let neighbours = adjacency.matmul(h)?.matmul(w_other)?.scale(inv_n);
    let own = h.matmul(w_self)?;
    Ok(neighbours.add(&own)?.map(|v| activation.apply(v)))
}

/// Stack of graph-convolution layers followed by per-graph pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnEncoder {
    pub layers: Vec<GnnLayer>,
    pub activation: Activation,
    pub pooling: Pooling,
    pub input_dim: usize,
    pub width: usize,
}

impl GnnEncoder {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        input_dim: usize,
        config: &MixerConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let width = config.gnn_width;
        let layers = (0..config.gnn_layers)
            .map(|l| {
                let fan_in = if l == 0 { input_dim } else { width };
                GnnLayer {
                    w_self: store.add_glorot(format!("mixer.gnn.l{l}.w_self"), fan_in, width, rng),
                    w_other: store.add_glorot(format!("mixer.gnn.l{l}.w_other"), fan_in, width, rng),
                }
            })
            .collect();
        Self {
            layers,
            activation: config.gnn_activation,
            pooling: config.pooling,
            input_dim,
            width,
        }
    }

    /// Pooled embedding dimension; independent of the number of agents.
    pub fn output_dim(&self) -> usize {
        if self.layers.is_empty() {
            self.input_dim
        } else {
            self.width
        }
    }

    /// Node embeddings for the whole batch, `(B·I) × width`.
    pub fn node_embeddings<S: Scalar, G: Graph<S>>(&self, g: &mut G, batch: &MixBatch<S>) -> Result<G::Node> {
        let mut h = g.input(batch.nodes.clone());
        for layer in &self.layers {
            let w_other = g.param(layer.w_other);
            let w_self = g.param(layer.w_self);
            let msg = g.matmul(&h, &w_other)?;
            let msg = g.sparse_matmul(&batch.adjacency, &msg)?;
            let own = g.matmul(&h, &w_self)?;
            let pre = g.add(&msg, &own)?;
            h = g.activation(&pre, self.activation);
        }
        Ok(h)
    }

    /// `B × output_dim` pooled embeddings.
    pub fn embed<S: Scalar, G: Graph<S>>(&self, g: &mut G, batch: &MixBatch<S>) -> Result<G::Node> {
        let h = self.node_embeddings(g, batch)?;
        g.reduce_groups(&h, self.pooling.reduce(), batch.num_agents)
    }
}

/// GNN-encoded, permutation-invariant monotonic mixing. Accepts any number
/// of agents.
#[derive(Clone, Debug, PartialEq)]
pub struct KmarlMixer {
    pub encoder: GnnEncoder,
    pub head: MixingHead,
}

impl KmarlMixer {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        feature_dim: usize,
        config: &MixerConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let encoder = GnnEncoder::new(store, feature_dim, config, rng);
        let head = MixingHead::new(store, "mixer", encoder.output_dim(), 1, true, config, rng);
        Self { encoder, head }
    }

    pub fn forward<S: Scalar, G: Graph<S>>(&self, g: &mut G, q: &G::Node, batch: &MixBatch<S>) -> Result<G::Node> {
        if g.value(q).cols() != batch.num_agents || batch.feature_dim() != self.encoder.input_dim {
            return Err(Error::ShapeMismatch {
                op: "KmarlMixer::forward",
                left: g.value(q).shape(),
                right: batch.nodes.shape(),
            });
        }
        let e = self.encoder.embed(g, batch)?;
        self.head.forward(g, q, &e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Mixer {
    Vdn,
    Qmix(QmixMixer),
    Kmarl(KmarlMixer),
}

impl Mixer {
    /// Registers mixer parameters (prefixed `mixer.`) in `store`.
    pub fn new<S: Scalar>(
        kind: MixerKind,
        store: &mut ParamStore<S>,
        num_agents: usize,
        feature_dim: usize,
        config: &MixerConfig,
        rng: &mut impl Rng,
    ) -> Self {
        match kind {
            MixerKind::Vdn => Mixer::Vdn,
            MixerKind::Qmix => Mixer::Qmix(QmixMixer::new(store, num_agents, feature_dim, config, rng)),
            MixerKind::Kmarl => Mixer::Kmarl(KmarlMixer::new(store, feature_dim, config, rng)),
        }
    }

    pub fn kind(&self) -> MixerKind {
        match self {
            Mixer::Vdn => MixerKind::Vdn,
            Mixer::Qmix(_) => MixerKind::Qmix,
            Mixer::Kmarl(_) => MixerKind::Kmarl,
        }
    }

    /// `q` is `B × I`; returns `B × 1`.
    pub fn forward<S: Scalar, G: Graph<S>>(&self, g: &mut G, q: &G::Node, batch: &MixBatch<S>) -> Result<G::Node> {
        match self {
            Mixer::Vdn => {
                let n = g.value(q).cols();
                let ones = g.input(Matrix::filled(n, 1, S::one()));
                g.matmul(q, &ones)
            }
            Mixer::Qmix(m) => m.forward(g, q, batch),
            Mixer::Kmarl(m) => m.forward(g, q, batch),
        }
    }

    /// `Q_tot` per batch row without recording gradients.
    pub fn q_tot<S: Scalar>(&self, store: &ParamStore<S>, q: &Matrix<S>, batch: &MixBatch<S>) -> Result<Vec<S>> {
        if let Mixer::Vdn = self {
            return Ok((0..q.rows()).map(|r| vdn_mix(q.row(r))).collect());
        }
        let mut g = Eager::new(store);
        let qn = g.input(q.clone());
        Ok(self.forward(&mut g, &qn, batch)?.into_owned().into_data())
    }
}

/// Random node features in `[0, 1)` and a random symmetric adjacency with zero diagonal.
pub fn random_graph(num_agents: usize, feature_dim: usize, rng: &mut impl Rng) -> (Matrix<f64>, Matrix<f64>) {
    let features = Matrix::from_fn(num_agents, feature_dim, |_, _| rng.gen::<f64>());
    let mut adj = Matrix::zeros(num_agents, num_agents);
    for i in 0..num_agents {
        for j in i + 1..num_agents {
            if rng.gen_bool(0.5) {
                adj.set(i, j, 1.0);
                adj.set(j, i, 1.0);
            }
        }
    }
    (features, adj)
}

/// Most negative central-difference partial `∂Q_tot/∂q_i` over `samples`
/// random `(q, state)` inputs.
pub fn monotonicity_check(
    mixer: &Mixer,
    store: &ParamStore<f64>,
    num_agents: usize,
    feature_dim: usize,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let (features, adj) = random_graph(num_agents, feature_dim, rng);
        let q: Vec<f64> = (0..num_agents).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let feats = vec![&features; 2 * num_agents];
        let adjs = vec![&adj; 2 * num_agents];
        let batch = MixBatch::new(&feats, &adjs)?;
        let probes = Matrix::from_fn(2 * num_agents, num_agents, |r, c| {
            let shift = if r / 2 == c { STEP } else { 0.0 };
            if r % 2 == 0 {
                q[c] + shift
            } else {
                q[c] - shift
            }
        });
        let out = mixer.q_tot(store, &probes, &batch)?;
        for i in 0..num_agents {
            worst = worst.min((out[2 * i] - out[2 * i + 1]) / (2.0 * STEP));
        }
    }
    Ok(worst)
}
