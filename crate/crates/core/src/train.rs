//! Full-batch transductive training: Adam with L2 weight decay, early
//! stopping on validation accuracy, and multi-split, multi-seed aggregation.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{random_split, Dataset, Split, DEFAULT_RATIOS};
use crate::error::{Error, Result};
use crate::graph::add_random_edges;
use crate::layers::{GraphContext, Model, ModelConfig, ScoreRecord, Variant};
use crate::rng::{self, tag};
use crate::tensor::{Matrix, Parallelism, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub lr: f64,
    pub dropout: f64,
    pub lambda: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub heads: usize,
    pub units_per_head: usize,
    pub seed: u64,
    pub splits: usize,
    pub repeats: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::GfgnGraph,
            lr: 0.005,
            dropout: 0.5,
            lambda: 1.0,
            weight_decay: 5e-4,
            epochs: 1000,
            patience: 100,
            heads: 8,
            units_per_head: 8,
            seed: 0,
            splits: 10,
            repeats: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("patience", self.patience),
            ("heads", self.heads),
            ("units per head", self.units_per_head),
            ("splits", self.splits),
            ("repeats", self.repeats),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.patience > self.epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay {} must be >= 0",
                self.weight_decay
            )));
        }
        self.model_config(1, 1).validate()
    }

    pub fn model_config(&self, in_features: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            in_features,
            classes,
            heads: self.heads,
            units_per_head: self.units_per_head,
            lambda: self.lambda,
            dropout: self.dropout,
        }
    }

    /// Seed of the `(split, repeat)` run; drives initialization and dropout.
    pub fn run_seed(&self, split: usize, repeat: usize) -> u64 {
        rng::derive_seed(self.seed, &[split as u64, repeat as u64])
    }

    pub fn split_seed(&self, split: usize) -> u64 {
        rng::derive_seed(self.seed, &[tag::SPLIT, split as u64])
    }
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState {
    t: u32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let m: Vec<Matrix> = params
            .into_iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            t: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }
}

/// One Adam update on `grad + weight_decay · param`, with bias correction.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Matrix>,
    grads: &[&Matrix],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let params: Vec<&mut Matrix> = params.into_iter().collect();
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Config(format!(
            "adam: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
    }
    state.t += 1;
    let c1 = 1.0 - BETA1.powi(state.t as i32);
    let c2 = 1.0 - BETA2.powi(state.t as i32);
    for (((p, g), m), v) in params
        .into_iter()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        let (ps, gs) = (p.as_mut_slice(), g.as_slice());
        for (i, x) in ps.iter_mut().enumerate() {
            let grad = gs[i] + weight_decay * *x;
            let mi = &mut m.as_mut_slice()[i];
            *mi = BETA1 * *mi + (1.0 - BETA1) * grad;
            let vi = &mut v.as_mut_slice()[i];
            *vi = BETA2 * *vi + (1.0 - BETA2) * grad * grad;
            let (mh, vh) = (*mi / c1, *vi / c2);
            *x -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Row-wise argmax (ties to the smaller class) accuracy over `indices`.
pub fn evaluate(logits: &Matrix, labels: &[usize], indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Empty("evaluation index set"));
    }
    let mut correct = 0usize;
    for &i in indices {
        if i >= logits.rows() || i >= labels.len() {
            return Err(Error::Data(format!("evaluation index {i} out of range")));
        }
        let row = logits.row(i);
        let mut best = 0;
        for (c, &x) in row.iter().enumerate().skip(1) {
            if x > row[best] {
                best = c;
            }
        }
        correct += usize::from(best == labels[i]);
    }
    Ok(correct as f64 / indices.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunEntry {
    pub split: usize,
    pub repeat: usize,
    pub test_acc: f64,
    pub val_acc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Excluded from serialized results so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_time_ms: f64,
}

impl PartialEq for RunEntry {
    fn eq(&self, other: &Self) -> bool {
        (self.split, self.repeat, self.best_epoch, self.epochs_run)
            == (other.split, other.repeat, other.best_epoch, other.epochs_run)
            && self.test_acc.to_bits() == other.test_acc.to_bits()
            && self.val_acc.to_bits() == other.val_acc.to_bits()
    }
}

/// Everything produced by one training run.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub entry: RunEntry,
    pub model: Model,
    /// Training loss per epoch.
    pub losses: Vec<f64>,
}

/// Eval-mode logits plus per-layer score matrices (gated variants only).
pub fn infer(
    model: &Model,
    ctx: Option<&GraphContext>,
    features: &Arc<Matrix>,
    par: Parallelism,
) -> Result<(Matrix, [Option<Matrix>; 2])> {
    let mut tape = Tape::with_parallelism(par);
    // Eval mode draws nothing from the generator.
    let mut unused = rng::seeded(0);
    let fwd = model.forward(&mut tape, ctx, features, false, &mut unused)?;
    let scores = fwd.scores.map(|s| s.map(|v| tape.value(v).clone()));
    Ok((tape.value(fwd.logits).clone(), scores))
}

/// Trains one model on `split` until `patience` epochs pass without a strict
/// validation-accuracy improvement, then restores the best-epoch parameters.
pub fn train_one(
    ds: &Dataset,
    ctx: Option<&GraphContext>,
    split: &Split,
    cfg: &TrainConfig,
    run_seed: u64,
    par: Parallelism,
) -> Result<TrainedRun> {
    cfg.validate()?;
    split.validate(ds.n())?;
    let start = Instant::now();
    let mut model = Model::new(cfg.model_config(ds.num_features(), ds.num_classes), run_seed)?;
    let mut adam = AdamState::new(model.matrices());
    let mut dropout_rng = rng::seeded(rng::derive_seed(run_seed, &[tag::DROPOUT]));

    let mut best = (f64::NEG_INFINITY, 0usize, model.clone());
    let mut losses = Vec::new();
    let mut epochs_run = 0;
    for epoch in 1..=cfg.epochs {
        epochs_run = epoch;
        let mut tape = Tape::with_parallelism(par);
        let fwd = model.forward(&mut tape, ctx, &ds.features, true, &mut dropout_rng)?;
        let loss = tape.softmax_cross_entropy(fwd.logits, &ds.labels, &split.train)?;
        let loss_value = tape.value(loss).get(0, 0);
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        losses.push(loss_value);
        tape.backward(loss)?;
        let grads: Vec<&Matrix> = fwd
            .params
            .iter()
            .map(|&p| tape.grad(p).expect("parameters require grad"))
            .collect();
        adam_step(model.matrices_mut(), &grads, &mut adam, cfg.lr, cfg.weight_decay)?;

        let (logits, _) = infer(&model, ctx, &ds.features, par)?;
        let val = evaluate(&logits, &ds.labels, &split.val)?;
        if val > best.0 {
            best = (val, epoch, model.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    let (val_acc, best_epoch, model) = best;
    let (logits, _) = infer(&model, ctx, &ds.features, par)?;
    let test_acc = evaluate(&logits, &ds.labels, &split.test)?;
    Ok(TrainedRun {
        entry: RunEntry {
            split: 0,
            repeat: 0,
            test_acc,
            val_acc,
            best_epoch,
            epochs_run,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        },
        model,
        losses,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub runs: Vec<RunEntry>,
    pub mean_test_acc: f64,
    /// Population standard deviation over runs.
    pub std_test_acc: f64,
    pub mean_val_acc: f64,
}

impl RunResult {
    pub fn from_runs(runs: Vec<RunEntry>) -> Self {
        let tests: Vec<f64> = runs.iter().map(|r| r.test_acc).collect();
        let vals: Vec<f64> = runs.iter().map(|r| r.val_acc).collect();
        let (mean_test_acc, std_test_acc) = mean_std(&tests);
        Self {
            runs,
            mean_test_acc,
            std_test_acc,
            mean_val_acc: mean_std(&vals).0,
        }
    }

    pub fn total_wall_time_ms(&self) -> f64 {
        self.runs.iter().map(|r| r.wall_time_ms).sum()
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// The splits a protocol run uses: the dataset's own when it ships any
/// (capped at `cfg.splits`), otherwise seeded 48/32/20 splits.
pub fn protocol_splits(ds: &Dataset, cfg: &TrainConfig) -> Result<Vec<Split>> {
    if !ds.splits.is_empty() {
        return Ok(ds.splits.iter().take(cfg.splits).cloned().collect());
    }
    (0..cfg.splits)
        .map(|s| random_split(ds.n(), DEFAULT_RATIOS, cfg.split_seed(s)))
        .collect()
}

/// Runs `f` over `jobs`, in parallel when enabled, returning results in job
/// order. The first failing job (in job order) decides the error.
pub fn run_jobs<J, T, F>(jobs: &[J], par: Parallelism, f: F) -> Result<Vec<T>>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if par == Parallelism::Parallel && jobs.len() > 1 {
        use rayon::prelude::*;
        let out: Vec<Result<T>> = jobs.par_iter().map(&f).collect();
        return out.into_iter().collect();
    }
    let _ = par;
    jobs.iter().map(f).collect()
}

/// `cfg.splits × cfg.repeats` independent runs aggregated in
/// `(split, repeat)` order. `graph_for_run` may replace the graph per run
/// (noise injection); `None` trains on the dataset graph.
fn run_protocol_with<G>(
    ds: &Dataset,
    cfg: &TrainConfig,
    par: Parallelism,
    graph_for_run: G,
) -> Result<RunResult>
where
    G: Fn(usize, usize) -> Result<Option<Dataset>> + Sync + Send,
{
    cfg.validate()?;
    let splits = protocol_splits(ds, cfg)?;
    let shared_ctx = (cfg.variant.uses_graph()).then(|| GraphContext::new(&ds.graph));
    let jobs: Vec<(usize, usize)> = (0..splits.len())
        .flat_map(|s| (0..cfg.repeats).map(move |r| (s, r)))
        .collect();
    let runs = run_jobs(&jobs, par, |&(s, r)| {
        let seed = cfg.run_seed(s, r);
        let run = match graph_for_run(s, r)? {
            Some(noisy) => {
                let ctx = cfg.variant.uses_graph().then(|| GraphContext::new(&noisy.graph));
                train_one(&noisy, ctx.as_ref(), &splits[s], cfg, seed, Parallelism::Sequential)?
            }
            None => train_one(ds, shared_ctx.as_ref(), &splits[s], cfg, seed, Parallelism::Sequential)?,
        };
        Ok(RunEntry {
            split: s,
            repeat: r,
            ..run.entry
        })
    })?;
    Ok(RunResult::from_runs(runs))
}

/// The evaluation protocol: every `(split, repeat)` pair, one model each.
pub fn run_protocol(ds: &Dataset, cfg: &TrainConfig, par: Parallelism) -> Result<RunResult> {
    run_protocol_with(ds, cfg, par, |_, _| Ok(None))
}

/// Protocol runs on graphs with `ratio · |E|` random edges added; each
/// `(split, repeat)` draws its own noise graph.
pub fn run_noisy_protocol(
    ds: &Dataset,
    cfg: &TrainConfig,
    ratio: f64,
    par: Parallelism,
) -> Result<RunResult> {
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(Error::Config(format!("noise ratio {ratio} must be >= 0")));
    }
    if ratio == 0.0 {
        return run_protocol(ds, cfg, par);
    }
    run_protocol_with(ds, cfg, par, |s, r| {
        let seed = rng::derive_seed(cfg.seed, &[tag::NOISE, ratio.to_bits(), s as u64, r as u64]);
        Ok(Some(ds.with_graph(add_random_edges(&ds.graph, ratio, seed)?)))
    })
}

/// Hyperparameter axes; the Cartesian product is searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lr: Vec<f64>,
    pub dropout: Vec<f64>,
    pub lambda: Vec<f64>,
    pub weight_decay: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            lr: vec![0.005, 0.05],
            dropout: vec![0.5, 0.8],
            lambda: vec![0.5, 1.0, 2.0],
            weight_decay: vec![5e-4, 5e-5],
        }
    }
}

impl Grid {
    pub fn single(cfg: &TrainConfig) -> Self {
        Self {
            lr: vec![cfg.lr],
            dropout: vec![cfg.dropout],
            lambda: vec![cfg.lambda],
            weight_decay: vec![cfg.weight_decay],
        }
    }

    /// All grid points on top of `base`, in lr → dropout → λ → weight-decay
    /// nesting order. Variants without gates ignore λ, so only its first
    /// value is kept for them.
    pub fn configs(&self, base: &TrainConfig) -> Result<Vec<TrainConfig>> {
        let axes = [&self.lr, &self.dropout, &self.lambda, &self.weight_decay];
        if axes.iter().any(|a| a.is_empty()) {
            return Err(Error::Config("every grid axis needs at least one value".into()));
        }
        let lambdas = if base.variant.is_gated() {
            &self.lambda[..]
        } else {
            &self.lambda[..1]
        };
        let mut out = Vec::new();
        for &lr in &self.lr {
            for &dropout in &self.dropout {
                for &lambda in lambdas {
                    for &weight_decay in &self.weight_decay {
                        let cfg = TrainConfig {
                            lr,
                            dropout,
                            lambda,
                            weight_decay,
                            ..*base
                        };
                        cfg.validate()?;
                        out.push(cfg);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config: TrainConfig,
    pub result: RunResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Row with the highest mean validation accuracy (first on ties).
    pub best: usize,
}

impl SweepResult {
    pub fn best_row(&self) -> &SweepRow {
        &self.rows[self.best]
    }
}

pub fn sweep(ds: &Dataset, base: &TrainConfig, grid: &Grid, par: Parallelism) -> Result<SweepResult> {
    sweep_with(base, grid, |cfg| run_protocol(ds, cfg, par))
}

pub fn sweep_noisy(
    ds: &Dataset,
    base: &TrainConfig,
    grid: &Grid,
    ratio: f64,
    par: Parallelism,
) -> Result<SweepResult> {
    sweep_with(base, grid, |cfg| run_noisy_protocol(ds, cfg, ratio, par))
}

fn sweep_with(
    base: &TrainConfig,
    grid: &Grid,
    run: impl Fn(&TrainConfig) -> Result<RunResult>,
) -> Result<SweepResult> {
    let mut rows = Vec::new();
    let mut best = 0;
    for config in grid.configs(base)? {
        let result = run(&config)?;
        if result.mean_val_acc > rows.get(best).map_or(f64::NEG_INFINITY, |r: &SweepRow| r.result.mean_val_acc) {
            best = rows.len();
        }
        rows.push(SweepRow { config, result });
    }
    Ok(SweepResult { rows, best })
}

/// Trains split 0, repeat 0 and returns the score record of `layer` (1 or 2)
/// under eval mode.
pub fn train_and_dump_scores(
    ds: &Dataset,
    cfg: &TrainConfig,
    layer: usize,
    par: Parallelism,
) -> Result<ScoreRecord> {
    if !(1..=2).contains(&layer) {
        return Err(Error::Config(format!("layer must be 1 or 2, got {layer}")));
    }
    if !cfg.variant.is_gated() {
        return Err(Error::Config(format!(
            "{} has no smoothing scores",
            cfg.variant
        )));
    }
    let split = protocol_splits(ds, &TrainConfig { splits: 1, ..*cfg })?
        .pop()
        .expect("one split");
    let ctx = GraphContext::new(&ds.graph);
    let run = train_one(ds, Some(&ctx), &split, cfg, cfg.run_seed(0, 0), par)?;
    let (_, scores) = infer(&run.model, Some(&ctx), &ds.features, par)?;
    let scores = scores[layer - 1].clone().expect("gated layers record scores");
    Ok(run.model.layers[layer - 1]
        .score_record(&ctx, scores)
        .expect("gated layers have a score record"))
}
