//! MLP, GCN and the three feature-gating layers.
//!
//! Every gating layer transforms its input per head (`HW`) and mixes each
//! node's own transformed features with the normalized neighborhood sum
//! through a smoothing score `s ∈ (0, λ)` per feature dimension:
//!
//! * graph level: one score vector for the whole graph, from the mean of `HW`;
//! * neighbor level: one vector per node, from `HᵢW ∥ mean_{j∈Ñ(i)} HⱼW`;
//! * pair level: one vector per directed edge of `Ã`, from `HᵢW ∥ HⱼW`.
//!
//! Neighborhoods `Ñ(i)` include `i` itself and normalization uses the
//! augmented degrees, so a score of one reproduces GCN exactly and a score of
//! zero reproduces an MLP exactly.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{augmented_csr, mean_aggregator, normalized_adjacency, Graph, SparseOperator};
use crate::rng::{self, tag};
use crate::tensor::{Matrix, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Mlp,
    Gcn,
    GfgnGraph,
    GfgnNeighbor,
    GfgnPair,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Mlp,
        Variant::Gcn,
        Variant::GfgnGraph,
        Variant::GfgnNeighbor,
        Variant::GfgnPair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mlp => "mlp",
            Variant::Gcn => "gcn",
            Variant::GfgnGraph => "gfgn-graph",
            Variant::GfgnNeighbor => "gfgn-neighbor",
            Variant::GfgnPair => "gfgn-pair",
        }
    }

    pub fn is_gated(self) -> bool {
        self.gate_inputs().is_some()
    }

    pub fn uses_graph(self) -> bool {
        self != Variant::Mlp
    }

    /// Multiplier `m` on the per-head width for the gate input: 1 for the
    /// pooled graph vector, 2 for the concatenated node/neighbor or node/node
    /// vectors.
    pub fn gate_inputs(self) -> Option<usize> {
        match self {
            Variant::GfgnGraph => Some(1),
            Variant::GfgnNeighbor | Variant::GfgnPair => Some(2),
            Variant::Mlp | Variant::Gcn => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }
}

/// Graph structures shared by every layer, built once per graph.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub n: usize,
    /// `D̃^{-1/2} Ã D̃^{-1/2}`.
    pub adjacency: Arc<SparseOperator>,
    /// `D̃^{-1} Ã`.
    pub mean: Arc<SparseOperator>,
    /// CSR offsets of `Ã`; entry `e` is the directed pair `(src[e], dst[e])`.
    pub offsets: Arc<[usize]>,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    /// `Â` weight of each entry.
    pub edge_weight: Arc<[f64]>,
    /// Entry index of `(i, i)` for each node.
    pub self_entry: Arc<[usize]>,
    pub inv_deg: Arc<[f64]>,
}

impl GraphContext {
    pub fn new(g: &Graph) -> Self {
        let adjacency = normalized_adjacency(g);
        let (offsets, dst) = augmented_csr(g);
        let mut src = Vec::with_capacity(dst.len());
        let mut self_entry = Vec::with_capacity(g.n());
        for i in 0..g.n() {
            for e in offsets[i]..offsets[i + 1] {
                src.push(i);
                if dst[e] == i {
                    self_entry.push(e);
                }
            }
        }
        let edge_weight: Arc<[f64]> = adjacency.weights().into();
        Self {
            n: g.n(),
            mean: Arc::new(mean_aggregator(g)),
            adjacency: Arc::new(adjacency),
            offsets: offsets.into(),
            src: src.into(),
            dst: dst.into(),
            edge_weight,
            self_entry: self_entry.into(),
            inv_deg: g.deg_aug().iter().map(|d| 1.0 / d).collect(),
        }
    }

    pub fn num_entries(&self) -> usize {
        self.dst.len()
    }

    /// Directed pairs `(i, j)`, `j ∈ Ñ(i)`, in entry order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.src.iter().copied().zip(self.dst.iter().copied())
    }
}

fn need_ctx(ctx: Option<&GraphContext>, variant: Variant) -> Result<&GraphContext> {
    ctx.ok_or_else(|| Error::Config(format!("{variant} requires a graph")))
}

fn check_rows(tape: &Tape, h: Var, ctx: &GraphContext, op: &'static str) -> Result<()> {
    let v = tape.value(h);
    if v.rows() != ctx.n {
        return Err(Error::Shape {
            op,
            left: (ctx.n, ctx.n),
            right: v.shape(),
        });
    }
    Ok(())
}

/// `σ(HW)`.
pub fn mlp_forward(tape: &mut Tape, h: Var, w: Var, act: Activation) -> Result<Var> {
    let xw = tape.matmul(h, w)?;
    Ok(act.apply(tape, xw))
}

/// `σ(Â H W)`.
pub fn gcn_forward(
    tape: &mut Tape,
    ctx: &GraphContext,
    h: Var,
    w: Var,
    act: Activation,
) -> Result<Var> {
    check_rows(tape, h, ctx, "gcn_forward")?;
    let xw = tape.matmul(h, w)?;
    let agg = tape.spmm(&ctx.adjacency, xw)?;
    Ok(act.apply(tape, agg))
}

fn gate(tape: &mut Tape, input: Var, w_s: Var, lambda: f64) -> Result<Var> {
    let z = tape.matmul(input, w_s)?;
    let sig = tape.sigmoid(z);
    Ok(tape.scale(sig, lambda))
}

/// `λ · sigmoid(mean_i(HᵢW) · W_s)` from transformed features `xw`.
pub fn graph_scores(tape: &mut Tape, xw: Var, w_s: Var, lambda: f64) -> Result<Var> {
    let pooled = tape.row_mean(xw)?;
    gate(tape, pooled, w_s, lambda)
}

/// `λ · sigmoid((HᵢW ∥ mean_{j∈Ñ(i)} HⱼW) · W_s)` for every node.
pub fn neighbor_scores(
    tape: &mut Tape,
    ctx: &GraphContext,
    xw: Var,
    w_s: Var,
    lambda: f64,
) -> Result<Var> {
    let pooled = tape.spmm(&ctx.mean, xw)?;
    let z = tape.concat_cols(xw, pooled)?;
    gate(tape, z, w_s, lambda)
}

/// `λ · sigmoid((HᵢW ∥ HⱼW) · W_s)` for every entry `(i, j)` of `Ã`.
pub fn pair_scores(
    tape: &mut Tape,
    ctx: &GraphContext,
    xw: Var,
    w_s: Var,
    lambda: f64,
) -> Result<Var> {
    let xs = tape.gather_rows(xw, &ctx.src)?;
    let xd = tape.gather_rows(xw, &ctx.dst)?;
    let z = tape.concat_cols(xs, xd)?;
    gate(tape, z, w_s, lambda)
}

/// `(1 − s) ⊙ HᵢW + s ⊙ Σ_{j∈Ñ(i)} HⱼW / √(d̃ᵢd̃ⱼ)` with `s` either one row
/// broadcast over nodes or one row per node.
fn mix_node_scores(tape: &mut Tape, ctx: &GraphContext, xw: Var, s: Var) -> Result<Var> {
    let agg = tape.spmm(&ctx.adjacency, xw)?;
    let keep = tape.affine(s, -1.0, 1.0);
    let own = tape.mul(xw, keep)?;
    let smoothed = tape.mul(agg, s)?;
    tape.add(own, smoothed)
}

/// `(1 − Σⱼ sᵢⱼ/d̃ᵢ) ⊙ HᵢW + Σⱼ sᵢⱼ ⊙ HⱼW / √(d̃ᵢd̃ⱼ)`.
///
/// Both sums are taken relative to the self-pair score `sᵢᵢ`:
/// `Σⱼ sᵢⱼ/d̃ᵢ = sᵢᵢ + Σⱼ (sᵢⱼ − sᵢᵢ)/d̃ᵢ` and
/// `Σⱼ sᵢⱼ ⊙ mᵢⱼ = sᵢᵢ ⊙ Σⱼ mᵢⱼ + Σⱼ (sᵢⱼ − sᵢᵢ) ⊙ mᵢⱼ`.
/// When every `sᵢⱼ` of a row is equal the corrections are exact zeros and
/// the result coincides bit for bit with the node-level mix.
fn mix_pair_scores(tape: &mut Tape, ctx: &GraphContext, xw: Var, s_pair: Var) -> Result<Var> {
    let s_self = tape.gather_rows(s_pair, &ctx.self_entry)?;
    let s_anchor = tape.gather_rows(s_self, &ctx.src)?;
    let diff = tape.sub(s_pair, s_anchor)?;

    let diff_sum = tape.segment_sum(diff, &ctx.offsets)?;
    let diff_mean = tape.scale_rows(diff_sum, &ctx.inv_deg)?;
    let mean = tape.add(s_self, diff_mean)?;
    let keep = tape.affine(mean, -1.0, 1.0);
    let own = tape.mul(xw, keep)?;

    let agg = tape.spmm(&ctx.adjacency, xw)?;
    let main = tape.mul(agg, s_self)?;
    let xd = tape.gather_rows(xw, &ctx.dst)?;
    let msg = tape.scale_rows(xd, &ctx.edge_weight)?;
    let weighted = tape.mul(diff, msg)?;
    let corr = tape.segment_sum(weighted, &ctx.offsets)?;
    let smoothed = tape.add(main, corr)?;
    tape.add(own, smoothed)
}

/// One gating head. Returns the pre-activation output and the score used.
pub fn gfgn_head(
    tape: &mut Tape,
    ctx: &GraphContext,
    variant: Variant,
    h: Var,
    w: Var,
    w_s: Var,
    lambda: f64,
    score_override: Option<Var>,
) -> Result<(Var, Var)> {
    check_rows(tape, h, ctx, "gfgn_forward")?;
    let xw = tape.matmul(h, w)?;
    let d = tape.value(xw).cols();
    let expected = match variant {
        Variant::GfgnGraph => (1, d),
        Variant::GfgnNeighbor => (ctx.n, d),
        Variant::GfgnPair => (ctx.num_entries(), d),
        Variant::Mlp | Variant::Gcn => {
            return Err(Error::Config(format!("{variant} is not a gating layer")))
        }
    };
    let s = match score_override {
        Some(s) => {
            let shape = tape.value(s).shape();
            if shape != expected {
                return Err(Error::Shape {
                    op: "score override",
                    left: expected,
                    right: shape,
                });
            }
            s
        }
        None => match variant {
            Variant::GfgnGraph => graph_scores(tape, xw, w_s, lambda)?,
            Variant::GfgnNeighbor => neighbor_scores(tape, ctx, xw, w_s, lambda)?,
            _ => pair_scores(tape, ctx, xw, w_s, lambda)?,
        },
    };
    let out = match variant {
        Variant::GfgnPair => mix_pair_scores(tape, ctx, xw, s)?,
        _ => mix_node_scores(tape, ctx, xw, s)?,
    };
    Ok((out, s))
}

/// Smoothing scores of one layer, heads concatenated along dimensions.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreRecord {
    /// `1 × D`.
    Graph(Matrix),
    /// `n × D`.
    Neighbor(Matrix),
    /// `|Ẽ| × D`, one row per directed pair.
    Pair {
        pairs: Vec<(usize, usize)>,
        scores: Matrix,
    },
}

impl ScoreRecord {
    pub fn scores(&self) -> &Matrix {
        match self {
            ScoreRecord::Graph(m) | ScoreRecord::Neighbor(m) => m,
            ScoreRecord::Pair { scores, .. } => scores,
        }
    }

    pub fn dims(&self) -> usize {
        self.scores().cols()
    }

    /// Mean score of each dimension over all rows.
    pub fn dimension_means(&self) -> Vec<f64> {
        let m = self.scores();
        let mut out = vec![0.0; m.cols()];
        for r in 0..m.rows() {
            for (o, x) in out.iter_mut().zip(m.row(r)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= m.rows() as f64);
        out
    }

    /// CSV with columns `dim,score`, `node,dim,score` or `src,dst,dim,score`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        match self {
            ScoreRecord::Graph(m) => {
                writeln!(w, "dim,score")?;
                for (d, s) in m.row(0).iter().enumerate() {
                    writeln!(w, "{d},{s}")?;
                }
            }
            ScoreRecord::Neighbor(m) => {
                writeln!(w, "node,dim,score")?;
                for i in 0..m.rows() {
                    for (d, s) in m.row(i).iter().enumerate() {
                        writeln!(w, "{i},{d},{s}")?;
                    }
                }
            }
            ScoreRecord::Pair { pairs, scores } => {
                writeln!(w, "src,dst,dim,score")?;
                for (e, &(i, j)) in pairs.iter().enumerate() {
                    for (d, s) in scores.row(e).iter().enumerate() {
                        writeln!(w, "{i},{j},{d},{s}")?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Weights of one head: `W` is `D_in × D_out/K`; `W_s` is
/// `m·D_out/K × D_out/K` for gating variants and absent otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w: Matrix,
    pub w_s: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub variant: Variant,
    pub lambda: f64,
    pub activation: Activation,
    pub heads: Vec<HeadParams>,
}

fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

impl LayerParams {
    /// Glorot-uniform initialization. The transform is drawn as one
    /// `D_in × D_out` matrix from `seed_w` and split column-wise into heads,
    /// so every variant sharing `seed_w` starts from identical transforms.
    /// MLP and GCN layers keep it as a single head.
    pub fn init(
        variant: Variant,
        d_in: usize,
        d_out: usize,
        heads: usize,
        lambda: f64,
        activation: Activation,
        seed_w: u64,
        seed_gate: u64,
    ) -> Result<Self> {
        if heads == 0 || !d_out.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "output width {d_out} is not divisible by {heads} heads"
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {lambda} must be >= 0")));
        }
        let full = glorot(d_in, d_out, &mut rng::seeded(seed_w));
        let heads = match variant.gate_inputs() {
            None => vec![HeadParams { w: full, w_s: None }],
            Some(m) => {
                let width = d_out / heads;
                (0..heads)
                    .map(|k| HeadParams {
                        w: full.columns(k * width, (k + 1) * width),
                        w_s: Some(glorot(
                            m * width,
                            width,
                            &mut rng::seeded(rng::derive_seed(seed_gate, &[k as u64])),
                        )),
                    })
                    .collect()
            }
        };
        Ok(Self {
            variant,
            lambda,
            activation,
            heads,
        })
    }

    pub fn d_in(&self) -> usize {
        self.heads[0].w.rows()
    }

    pub fn d_out(&self) -> usize {
        self.heads.iter().map(|h| h.w.cols()).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.heads
            .iter()
            .map(|h| h.w.len() + h.w_s.as_ref().map_or(0, Matrix::len))
            .sum()
    }

    pub fn matrices(&self) -> impl Iterator<Item = &Matrix> {
        self.heads
            .iter()
            .flat_map(|h| std::iter::once(&h.w).chain(h.w_s.as_ref()))
    }

    pub fn matrices_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.heads
            .iter_mut()
            .flat_map(|h| std::iter::once(&mut h.w).chain(h.w_s.as_mut()))
    }

    /// Parameter names in the same order as [`LayerParams::matrices`].
    pub fn names(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        for (k, h) in self.heads.iter().enumerate() {
            if h.w_s.is_some() {
                out.push(format!("{prefix}.head{k}.w"));
                out.push(format!("{prefix}.head{k}.w_s"));
            } else {
                out.push(format!("{prefix}.w"));
            }
        }
        out
    }

    /// Records the layer on `tape`. `params` are the leaves for
    /// [`LayerParams::matrices`] in order. `score_override` (full output width)
    /// replaces the learned scores.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ctx: Option<&GraphContext>,
        h: Var,
        params: &[Var],
        score_override: Option<&Matrix>,
    ) -> Result<(Var, Option<Var>)> {
        match self.variant {
            Variant::Mlp => Ok((mlp_forward(tape, h, params[0], self.activation)?, None)),
            Variant::Gcn => {
                let ctx = need_ctx(ctx, self.variant)?;
                Ok((gcn_forward(tape, ctx, h, params[0], self.activation)?, None))
            }
            variant => {
                let ctx = need_ctx(ctx, variant)?;
                let mut out: Option<Var> = None;
                let mut scores: Option<Var> = None;
                let mut col = 0;
                for (k, head) in self.heads.iter().enumerate() {
                    let width = head.w.cols();
                    let ov = match score_override {
                        Some(m) => {
                            if m.cols() != self.d_out() {
                                return Err(Error::Shape {
                                    op: "score override",
                                    left: (m.rows(), self.d_out()),
                                    right: m.shape(),
                                });
                            }
                            Some(tape.constant(m.columns(col, col + width)))
                        }
                        None => None,
                    };
                    let (pre, s) = gfgn_head(
                        tape,
                        ctx,
                        variant,
                        h,
                        params[2 * k],
                        params[2 * k + 1],
                        self.lambda,
                        ov,
                    )?;
                    let act = self.activation.apply(tape, pre);
                    out = Some(match out {
                        None => act,
                        Some(prev) => tape.concat_cols(prev, act)?,
                    });
                    scores = Some(match scores {
                        None => s,
                        Some(prev) => tape.concat_cols(prev, s)?,
                    });
                    col += width;
                }
                Ok((out.expect("at least one head"), scores))
            }
        }
    }

    /// Wraps score values read off a tape into a [`ScoreRecord`].
    pub fn score_record(&self, ctx: &GraphContext, scores: Matrix) -> Option<ScoreRecord> {
        match self.variant {
            Variant::GfgnGraph => Some(ScoreRecord::Graph(scores)),
            Variant::GfgnNeighbor => Some(ScoreRecord::Neighbor(scores)),
            Variant::GfgnPair => Some(ScoreRecord::Pair {
                pairs: ctx.pairs().collect(),
                scores,
            }),
            Variant::Mlp | Variant::Gcn => None,
        }
    }
}

/// Closed-form parameter count of a layer: `D_in·D_out` for the transform
/// plus `m·(D_out/K)·D_out` for the gates.
pub fn expected_parameter_count(variant: Variant, d_in: usize, d_out: usize, heads: usize) -> usize {
    let gates = variant
        .gate_inputs()
        .map_or(0, |m| m * (d_out / heads) * d_out);
    d_in * d_out + gates
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub in_features: usize,
    pub classes: usize,
    pub heads: usize,
    pub units_per_head: usize,
    pub lambda: f64,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn hidden(&self) -> usize {
        self.heads * self.units_per_head
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.units_per_head == 0 {
            return Err(Error::Config("heads and units per head must be positive".into()));
        }
        if self.in_features == 0 || self.classes == 0 {
            return Err(Error::Config("model needs at least one feature and class".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be >= 0", self.lambda)));
        }
        Ok(())
    }
}

/// Two stacked layers: a `K`-head layer with ReLU, dropout, then a
/// single-head output layer of the same variant with identity activation.
/// Dropout is also applied to the input features.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub layers: [LayerParams; 2],
}

/// Handles produced by one forward pass.
pub struct Forward {
    pub logits: Var,
    /// Parameter leaves in [`Model::matrices`] order.
    pub params: Vec<Var>,
    pub scores: [Option<Var>; 2],
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let hidden = LayerParams::init(
            config.variant,
            config.in_features,
            config.hidden(),
            config.heads,
            config.lambda,
            Activation::Relu,
            rng::derive_seed(seed, &[tag::INIT_TRANSFORM, 1]),
            rng::derive_seed(seed, &[tag::INIT_GATE, 1]),
        )?;
        let output = LayerParams::init(
            config.variant,
            config.hidden(),
            config.classes,
            1,
            config.lambda,
            Activation::Identity,
            rng::derive_seed(seed, &[tag::INIT_TRANSFORM, 2]),
            rng::derive_seed(seed, &[tag::INIT_GATE, 2]),
        )?;
        Ok(Self {
            config,
            layers: [hidden, output],
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(LayerParams::parameter_count).sum()
    }

    pub fn matrices(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(LayerParams::matrices)
    }

    pub fn matrices_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers.iter_mut().flat_map(LayerParams::matrices_mut)
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = self.layers[0].names("layer1");
        names.extend(self.layers[1].names("layer2"));
        names
    }

    /// Records a full forward pass. `rng` drives dropout when `training`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        ctx: Option<&GraphContext>,
        features: &Arc<Matrix>,
        training: bool,
        rng: &mut R,
    ) -> Result<Forward> {
        if features.cols() != self.config.in_features {
            return Err(Error::Shape {
                op: "model input",
                left: (features.rows(), self.config.in_features),
                right: features.shape(),
            });
        }
        let ctx = if self.config.variant.uses_graph() {
            Some(need_ctx(ctx, self.config.variant)?)
        } else {
            None
        };
        let params: Vec<Var> = self
            .matrices()
            .map(|m| tape.leaf(m.clone(), true))
            .collect();
        let split = self.layers[0].matrices().count();
        let x = tape.constant_shared(features);
        let x = tape.dropout(x, self.config.dropout, training, rng)?;
        let (h, s1) = self.layers[0].forward(tape, ctx, x, &params[..split], None)?;
        let h = tape.dropout(h, self.config.dropout, training, rng)?;
        let (logits, s2) = self.layers[1].forward(tape, ctx, h, &params[split..], None)?;
        Ok(Forward {
            logits,
            params,
            scores: [s1, s2],
        })
    }
}
