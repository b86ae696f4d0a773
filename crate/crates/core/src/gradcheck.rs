//! Central-difference gradient checks for tape programs and whole models.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::Result;
use crate::graph::Graph;
use crate::layers::{GraphContext, Model, ModelConfig, Variant};
use crate::rng::{self, tag};
use crate::tensor::{Matrix, Parallelism, Tape, Var};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
const DENOM_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < TOLERANCE
    }
}

/// Deliberate gradient corruption, used as a negative control.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Corruption {
    #[default]
    None,
    /// Multiplies the analytic gradient of the first parameter by this factor.
    ScaleFirst(f64),
}

/// Checks `program`, a scalar-valued function of the parameter leaves, at
/// `params`. `names` labels the parameters in the report.
pub fn check<F>(
    params: &[Matrix],
    names: &[String],
    corruption: Corruption,
    program: F,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert_eq!(params.len(), names.len());
    let eval = |values: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::with_parallelism(Parallelism::Sequential);
        let vars: Vec<Var> = values.iter().map(|m| tape.leaf(m.clone(), true)).collect();
        let out = program(&mut tape, &vars)?;
        Ok(tape.value(out).get(0, 0))
    };

    let mut tape = Tape::with_parallelism(Parallelism::Sequential);
    let vars: Vec<Var> = params.iter().map(|m| tape.leaf(m.clone(), true)).collect();
    let out = program(&mut tape, &vars)?;
    tape.backward(out)?;
    let mut analytic: Vec<Matrix> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols()))
        })
        .collect();
    if let (Corruption::ScaleFirst(f), Some(g)) = (corruption, analytic.first_mut()) {
        *g = g.map(|x| x * f);
    }

    let mut work = params.to_vec();
    let mut report = Vec::with_capacity(params.len());
    for (k, name) in names.iter().enumerate() {
        let mut check = ParamCheck {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
        };
        for idx in 0..params[k].len() {
            let orig = params[k].as_slice()[idx];
            work[k].as_mut_slice()[idx] = orig + STEP;
            let plus = eval(&work)?;
            work[k].as_mut_slice()[idx] = orig - STEP;
            let minus = eval(&work)?;
            work[k].as_mut_slice()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let err = relative_error(analytic[k].as_slice()[idx], numeric);
            if err > check.max_rel_err {
                check.max_rel_err = err;
                check.worst_index = idx;
            }
        }
        report.push(check);
    }
    Ok(GradcheckReport { params: report })
}

/// Checks every parameter of `model` under mean cross-entropy over all
/// nodes, in eval mode (no dropout).
pub fn check_model(ds: &Dataset, model: &Model, corruption: Corruption) -> Result<GradcheckReport> {
    let ctx = model
        .config
        .variant
        .uses_graph()
        .then(|| GraphContext::new(&ds.graph));
    let all: Vec<usize> = (0..ds.n()).collect();
    let params: Vec<Matrix> = model.matrices().cloned().collect();
    let names = model.parameter_names();
    check(&params, &names, corruption, |tape, vars| {
        let logits = forward_with_leaves(tape, model, ctx.as_ref(), &ds.features, vars)?;
        tape.softmax_cross_entropy(logits, &ds.labels, &all)
    })
}

fn forward_with_leaves(
    tape: &mut Tape,
    model: &Model,
    ctx: Option<&GraphContext>,
    features: &Arc<Matrix>,
    leaves: &[Var],
) -> Result<Var> {
    let split = model.layers[0].matrices().count();
    let x = tape.constant_shared(features);
    let (h, _) = model.layers[0].forward(tape, ctx, x, &leaves[..split], None)?;
    let (logits, _) = model.layers[1].forward(tape, ctx, h, &leaves[split..], None)?;
    Ok(logits)
}

/// Tiny random problem: Erdős–Rényi graph with edge probability 0.4,
/// standard-normal features, `classes` uniform labels.
pub fn random_problem(n: usize, dims: usize, classes: usize, seed: u64) -> Result<Dataset> {
    let mut rng = rng::seeded(rng::derive_seed(seed, &[tag::GRADCHECK]));
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < 0.4 {
                edges.push((i, j));
            }
        }
    }
    let graph = Graph::from_edges(n, &edges)?;
    let data = (0..n * dims).map(|_| rng.sample(StandardNormal)).collect();
    let features = Matrix::from_vec(n, dims, data)?;
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    Dataset::new("gradcheck", graph, features, labels, classes)
}

/// Random problem plus a freshly initialized model with `heads` heads of
/// two units each.
pub fn check_variant(
    variant: Variant,
    n: usize,
    heads: usize,
    seed: u64,
    corruption: Corruption,
) -> Result<GradcheckReport> {
    let ds = random_problem(n, 5, 3.min(n), seed)?;
    let config = ModelConfig {
        variant,
        in_features: ds.num_features(),
        classes: ds.num_classes,
        heads,
        units_per_head: 2,
        lambda: 1.0,
        dropout: 0.0,
    };
    let model = Model::new(config, seed)?;
    check_model(&ds, &model, corruption)
}
