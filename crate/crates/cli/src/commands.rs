//! Subcommand implementations.

use std::path::{Path, PathBuf};

use gfgn::data::{self, Dataset, RowNormalize, SynthSpec};
use gfgn::graph::{edge_homophily, normalized_laplacian};
use gfgn::gradcheck::{self, Corruption};
use gfgn::spectral::{bfs_sample, eig_symmetric, polynomial_filter_apply};
use gfgn::train::{self, Grid, RunResult, TrainConfig, ADAM_EPS, BETA1, BETA2};
use gfgn::{Error, Parallelism};
use serde::Serialize;

use crate::output::{csv_preamble, write_atomic, write_json};
use crate::{
    DatasetArgs, DumpScoresCmd, Failure, GradcheckCmd, HomophilyCmd, NoiseSweepCmd, SpectralCmd,
    SweepCmd, SynthCmd, TrainCmd,
};

/// Dataset facts echoed into every artifact.
#[derive(Serialize)]
struct DatasetMeta {
    name: String,
    nodes: usize,
    edges: usize,
    features: usize,
    classes: usize,
    content_hash: String,
    row_normalized: bool,
    /// `shipped` when the directory provides splits.json, else `seeded`.
    splits: &'static str,
}

#[derive(Serialize)]
struct Optimizer {
    name: &'static str,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

const ADAM: Optimizer = Optimizer {
    name: "adam",
    beta1: BETA1,
    beta2: BETA2,
    eps: ADAM_EPS,
};

/// A bare name that is not an existing path is looked up under `$GFGN_DATA`.
fn resolve_dataset(path: &Path) -> PathBuf {
    if path.exists() || path.components().count() != 1 {
        return path.to_path_buf();
    }
    match std::env::var_os("GFGN_DATA") {
        Some(root) if Path::new(&root).join(path).is_dir() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

fn load(args: &DatasetArgs) -> Result<(Dataset, DatasetMeta), Failure> {
    let dir = resolve_dataset(&args.dataset);
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir).into());
    }
    let ds = data::load_dataset(&dir, args.row_normalize)?;
    let row_normalized = match args.row_normalize {
        RowNormalize::On => true,
        RowNormalize::Off => false,
        RowNormalize::Auto => !dir.join(data::SYNTH_FILE).exists(),
    };
    let meta = DatasetMeta {
        name: ds.name.clone(),
        nodes: ds.n(),
        edges: ds.graph.num_edges(),
        features: ds.num_features(),
        classes: ds.num_classes,
        content_hash: data::content_hash(&dir)?,
        row_normalized,
        splits: if ds.splits.is_empty() { "seeded" } else { "shipped" },
    };
    Ok((ds, meta))
}

fn percent(r: &RunResult) -> String {
    format!(
        "{:.2} ± {:.2} % test accuracy over {} runs (val {:.2} %)",
        100.0 * r.mean_test_acc,
        100.0 * r.std_test_acc,
        r.runs.len(),
        100.0 * r.mean_val_acc
    )
}

pub fn train(cmd: TrainCmd) -> Result<(), Failure> {
    let cfg = cmd.hyper.config(cmd.model);
    cfg.validate()?;
    let (ds, meta) = load(&cmd.data)?;
    let result = train::run_protocol(&ds, &cfg, Parallelism::default())?;

    #[derive(Serialize)]
    struct Artifact<'a> {
        command: &'static str,
        config: &'a TrainConfig,
        dataset: &'a DatasetMeta,
        optimizer: Optimizer,
        result: &'a RunResult,
    }
    let out = cmd
        .out
        .unwrap_or_else(|| PathBuf::from(format!("{}_{}.json", meta.name, cfg.variant)));
    write_json(
        &out,
        &Artifact {
            command: "train",
            config: &cfg,
            dataset: &meta,
            optimizer: ADAM,
            result: &result,
        },
    )?;
    println!("{} {}: {}", meta.name, cfg.variant, percent(&result));
    println!("wrote {}", out.display());
    Ok(())
}

pub fn sweep(cmd: SweepCmd) -> Result<(), Failure> {
    let base = cmd.hyper.config(cmd.model);
    let grid = Grid {
        lr: cmd.lr_grid,
        dropout: cmd.dropout_grid,
        lambda: cmd.lambda_grid,
        weight_decay: cmd.weight_decay_grid,
    };
    // Surface grid errors before touching the dataset.
    grid.configs(&base)?;
    let (ds, meta) = load(&cmd.data)?;
    let result = train::sweep(&ds, &base, &grid, Parallelism::default())?;

    #[derive(Serialize)]
    struct Artifact<'a> {
        command: &'static str,
        config: &'a TrainConfig,
        grid: &'a Grid,
        dataset: &'a DatasetMeta,
        optimizer: Optimizer,
        result: &'a train::SweepResult,
    }
    let out = cmd
        .out
        .unwrap_or_else(|| PathBuf::from(format!("{}_{}_sweep.json", meta.name, base.variant)));
    write_json(
        &out,
        &Artifact {
            command: "sweep",
            config: &base,
            grid: &grid,
            dataset: &meta,
            optimizer: ADAM,
            result: &result,
        },
    )?;
    let best = result.best_row();
    println!(
        "{} {}: best of {} configs (lr {}, dropout {}, lambda {}, weight decay {}): {}",
        meta.name,
        base.variant,
        result.rows.len(),
        best.config.lr,
        best.config.dropout,
        best.config.lambda,
        best.config.weight_decay,
        percent(&best.result)
    );
    println!("wrote {}", out.display());
    Ok(())
}

pub fn noise_sweep(cmd: NoiseSweepCmd) -> Result<(), Failure> {
    if cmd.ratios.is_empty() || cmd.models.is_empty() {
        return Err(Error::Config("need at least one ratio and one model".into()).into());
    }
    if let Some(r) = cmd.ratios.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(Error::Config(format!("noise ratio {r} must be >= 0")).into());
    }
    let configs: Vec<TrainConfig> = cmd.models.iter().map(|&m| cmd.hyper.config(m)).collect();
    for c in &configs {
        c.validate()?;
    }
    let (ds, meta) = load(&cmd.data)?;

    #[derive(Serialize)]
    struct Echo<'a> {
        ratios: &'a [f64],
        configs: &'a [TrainConfig],
        dataset: &'a DatasetMeta,
        optimizer: Optimizer,
    }
    let mut csv = csv_preamble(
        "noise-sweep",
        &Echo {
            ratios: &cmd.ratios,
            configs: &configs,
            dataset: &meta,
            optimizer: ADAM,
        },
    );
    csv.push_str("ratio,model,mean_test_acc,std_test_acc,mean_val_acc,runs\n");
    for &ratio in &cmd.ratios {
        for cfg in &configs {
            let r = train::run_noisy_protocol(&ds, cfg, ratio, Parallelism::default())?;
            println!("ratio {ratio} {}: {}", cfg.variant, percent(&r));
            csv.push_str(&format!(
                "{ratio},{},{},{},{},{}\n",
                cfg.variant,
                r.mean_test_acc,
                r.std_test_acc,
                r.mean_val_acc,
                r.runs.len()
            ));
        }
    }
    write_atomic(&cmd.out, csv.as_bytes())?;
    println!("wrote {}", cmd.out.display());
    Ok(())
}

pub fn dump_scores(cmd: DumpScoresCmd) -> Result<(), Failure> {
    let cfg = cmd.hyper.config(cmd.model);
    cfg.validate()?;
    if !(1..=2).contains(&cmd.layer) {
        return Err(Error::Config(format!("layer must be 1 or 2, got {}", cmd.layer)).into());
    }
    let (ds, meta) = load(&cmd.data)?;
    let record = train::train_and_dump_scores(&ds, &cfg, cmd.layer, Parallelism::default())?;

    #[derive(Serialize)]
    struct Echo<'a> {
        config: &'a TrainConfig,
        layer: usize,
        dataset: &'a DatasetMeta,
        optimizer: Optimizer,
    }
    let mut bytes = csv_preamble(
        "dump-scores",
        &Echo {
            config: &cfg,
            layer: cmd.layer,
            dataset: &meta,
            optimizer: ADAM,
        },
    )
    .into_bytes();
    record
        .write_csv(&mut bytes)
        .expect("writing to a Vec cannot fail");
    write_atomic(&cmd.out, &bytes)?;
    let means = record.dimension_means();
    let overall = means.iter().sum::<f64>() / means.len() as f64;
    println!(
        "layer {} scores: {} dims, mean {overall:.4}",
        cmd.layer,
        record.dims()
    );
    println!("wrote {}", cmd.out.display());
    Ok(())
}

/// Parses `start:stop:step` (inclusive) or a single value. Grid points are
/// rounded to 12 decimals so `0.1:1.0:0.1` yields 0.3, not 0.30000000000000004.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, Error> {
    let bad = || Error::Config(format!("grid must be start:stop:step, got {spec:?}"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    if parts.iter().any(|x| !x.is_finite()) {
        return Err(bad());
    }
    match parts[..] {
        [x] => Ok(vec![x]),
        [start, stop, step] => {
            if step <= 0.0 || stop < start {
                return Err(Error::Config(format!(
                    "grid {spec:?} needs step > 0 and stop >= start"
                )));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            Ok((0..count)
                .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
                .collect())
        }
        _ => Err(bad()),
    }
}

pub fn spectral(cmd: SpectralCmd) -> Result<(), Failure> {
    let grid = parse_grid(&cmd.s_grid)?;
    if cmd.max_nodes == 0 || cmd.max_nodes > gfgn::spectral::MAX_DENSE_NODES {
        return Err(Error::Config(format!(
            "--max-nodes must be in 1..={}",
            gfgn::spectral::MAX_DENSE_NODES
        ))
        .into());
    }
    let (ds, meta) = load(&cmd.data)?;
    let nodes = bfs_sample(&ds.graph, cmd.max_nodes);
    let sub = ds.graph.induced(&nodes);
    let lap = normalized_laplacian(&sub, cmd.self_loops);
    let eig = eig_symmetric(&lap.to_dense())?;

    #[derive(Serialize)]
    struct Echo<'a> {
        max_nodes: usize,
        nodes_used: usize,
        edges_used: usize,
        s_grid: &'a [f64],
        k: u32,
        self_loops: bool,
        dataset: &'a DatasetMeta,
    }
    let mut csv = csv_preamble(
        "spectral",
        &Echo {
            max_nodes: cmd.max_nodes,
            nodes_used: sub.n(),
            edges_used: sub.num_edges(),
            s_grid: &grid,
            k: cmd.k,
            self_loops: cmd.self_loops,
            dataset: &meta,
        },
    );
    csv.push_str("eigenvalue,s,K,coefficient,residual\n");
    let n = sub.n();
    let mut worst: f64 = 0.0;
    for &s in &grid {
        for (j, &lam) in eig.eigenvalues.iter().enumerate() {
            let u: Vec<f64> = (0..n).map(|i| eig.eigenvectors.get(i, j)).collect();
            let coef = (1.0 - s * lam).powi(cmd.k as i32);
            let filtered = polynomial_filter_apply(&lap, &u, s, cmd.k);
            let residual = filtered
                .iter()
                .zip(&u)
                .map(|(f, x)| (f - coef * x).abs())
                .fold(0.0, f64::max);
            worst = worst.max(residual);
            csv.push_str(&format!("{lam},{s},{},{coef},{residual}\n", cmd.k));
        }
    }
    write_atomic(&cmd.out, csv.as_bytes())?;
    println!(
        "{} eigenvalues on {n} of {} nodes, {} s values, max residual {worst:.3e}",
        eig.eigenvalues.len(),
        ds.n(),
        grid.len()
    );
    println!("wrote {}", cmd.out.display());
    Ok(())
}

pub fn gradcheck(cmd: GradcheckCmd) -> Result<(), Failure> {
    if cmd.n < 2 {
        return Err(Error::Config(format!("--n must be at least 2, got {}", cmd.n)).into());
    }
    if cmd.heads == 0 {
        return Err(Error::Config("--heads must be positive".into()).into());
    }
    let corruption = cmd.corrupt.map_or(Corruption::None, Corruption::ScaleFirst);
    let report = gradcheck::check_variant(cmd.model, cmd.n, cmd.heads, cmd.seed, corruption)?;
    for p in &report.params {
        println!("{:<24} {:.3e}", p.name, p.max_rel_err);
    }
    let worst = report.worst().expect("every model has parameters");
    println!("max relative error {:.3e} ({})", worst.max_rel_err, worst.name);
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::CheckFailed(format!(
            "{}: relative error {:.3e} at entry {} exceeds {:e}",
            worst.name,
            worst.max_rel_err,
            worst.worst_index,
            gradcheck::TOLERANCE
        )))
    }
}

pub fn synth(cmd: SynthCmd) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&cmd.spec).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(cmd.spec.clone())
        } else {
            Error::Io {
                path: cmd.spec.clone(),
                source: e,
            }
        }
    })?;
    let spec: SynthSpec = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", cmd.spec.display())))?;
    spec.validate()?;
    let ds = data::generate_synthetic(&spec)?;
    data::write_synthetic(&spec, &ds, &cmd.out)?;
    println!(
        "{} nodes, {} edges, homophily {:.4}",
        ds.n(),
        ds.graph.num_edges(),
        edge_homophily(&ds.graph, &ds.labels)
    );
    println!("wrote {}", cmd.out.display());
    Ok(())
}

pub fn homophily(cmd: HomophilyCmd) -> Result<(), Failure> {
    let (ds, _) = load(&cmd.data)?;
    println!("{}", edge_homophily(&ds.graph, &ds.labels));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_inclusive_and_rounded() {
        let g = parse_grid("0.1:1.0:0.1").unwrap();
        assert_eq!(g, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
        assert_eq!(parse_grid("0:1:0.5").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("0.25").unwrap(), vec![0.25]);
    }

    #[test]
    fn grid_rejects_bad_specs() {
        for bad in ["", "a:b:c", "1:0:0.1", "0:1:0", "0:1", "0:inf:1"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }
}
