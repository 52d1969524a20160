use std::path::{Path, PathBuf};

use cnnflow::cfd::{generate_dataset, load_dataset, DatasetManifest, ResidualEvaluator, SolverParams};
use cnnflow::harness::{
    emit_report, evaluate_model, fit_model, read_metrics_csv, save_model, switch_decisions, threshold_horizon,
    write_metrics_csv, write_summary_csv, EvaluationSeries, GenerationMode, ModelMeta, SwitchDecision,
    ThresholdConfig,
};
use cnnflow::nets::load_checkpoint;
use cnnflow::{Error, Result, Tensor};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::{Cli, Command, EvalArgs, GenerateArgs, ReportArgs, SharedArgs, SplitArgs, ThresholdArgs, TrainArgs};

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn base_config(shared: &SharedArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(shared.config.as_deref())?;
    if shared.seed.is_some() {
        cfg.seed = shared.seed;
    }
    set(&mut cfg.out, shared.out.clone());
    set(&mut cfg.workers, shared.workers);
    Ok(cfg)
}

fn apply_split(cfg: &mut RunConfig, a: &SplitArgs) {
    set(&mut cfg.split.n_train, a.n_train);
    set(&mut cfg.split.n_val, a.n_val);
    set(&mut cfg.split.n_test, a.n_test);
    set(&mut cfg.split.skip, a.skip);
}

fn apply_thresholds(cfg: &mut RunConfig, a: &ThresholdArgs) {
    set(&mut cfg.thresholds.t, a.tau_t);
    set(&mut cfg.thresholds.u_x, a.tau_ux);
    set(&mut cfg.thresholds.u_y, a.tau_uy);
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = base_config(&cli.shared)?;
    match cli.command {
        Command::Generate(a) => generate(&mut cfg, &a),
        Command::Train(a) => train(&mut cfg, &a),
        Command::Eval(a) => eval(&mut cfg, &a),
        Command::Report(a) => report(&mut cfg, &a),
    }
}

fn generate(cfg: &mut RunConfig, a: &GenerateArgs) -> Result<()> {
    let s = &mut cfg.solver;
    set(&mut s.nx, a.nx);
    set(&mut s.ny, a.ny);
    set(&mut s.dt, a.dt);
    set(&mut s.length, a.length);
    set(&mut s.perturbation, a.perturbation);
    set(&mut cfg.steps, a.steps);
    apply_split(cfg, &a.split);
    let seed = cfg.require_seed()?;
    cfg.solver.seed = seed;
    cfg.validate()?;
    let train = cfg.split.train_range();
    if train.end > cfg.steps {
        return Err(Error::config(
            "split",
            format!("training records {train:?} exceed the {} generated steps", cfg.steps),
        ));
    }
    create_dir(&cfg.out)?;
    let path = cfg.out.join(&a.name);
    let m = generate_dataset(&cfg.solver, cfg.steps, train, &path)?;
    println!("wrote {} records of {}×{} to {}", m.count, m.nx, m.ny, path.display());
    for (name, r) in [("u_x", m.bounds.u_x), ("u_y", m.bounds.u_y), ("T", m.bounds.t)] {
        println!("  {name:<3} min {:.6} max {:.6}", r.min, r.max);
    }
    Ok(())
}

/// The dataset and solver parameters matching its grid and time step.
fn dataset(cfg: &RunConfig) -> Result<(DatasetManifest, Vec<Tensor>, SolverParams)> {
    let path = cfg.require_data()?;
    let (manifest, data) = load_dataset(path)?;
    let mut params = cfg.solver.clone();
    params.nx = manifest.nx;
    params.ny = manifest.ny;
    params.dt = manifest.dt;
    Ok((manifest, data.records, params))
}

fn train(cfg: &mut RunConfig, a: &TrainArgs) -> Result<()> {
    if !a.models.is_empty() {
        cfg.models = a.models.clone();
    }
    if !a.strategies.is_empty() {
        cfg.strategies = a.strategies.clone();
    }
    if a.data.is_some() {
        cfg.data = a.data.clone();
    }
    set(&mut cfg.spec.seq_len, a.seq_len);
    set(&mut cfg.spec.base_channels, a.base_channels);
    set(&mut cfg.spec.hidden_channels, a.hidden_channels);
    if a.depth.is_some() {
        cfg.spec.depth = a.depth;
    }
    set(&mut cfg.hyper.epochs, a.epochs);
    set(&mut cfg.hyper.batch_size, a.batch_size);
    set(&mut cfg.hyper.learning_rate, a.learning_rate);
    set(&mut cfg.hyper.patience, a.patience);
    apply_split(cfg, &a.split);
    let seed = cfg.require_seed()?;
    cfg.validate()?;
    let (_, records, _) = dataset(cfg)?;
    let exp = cfg.experiment(seed);
    create_dir(&cfg.out)?;
    for &model in &exp.models {
        for &strategy in &exp.strategies {
            let trained = fit_model(&exp, &records, model, strategy)?;
            let path = save_model(&cfg.out, &trained.network, &trained.meta, &trained.report)?;
            let r = &trained.report;
            println!(
                "{model} {strategy}: {} parameters, {} epochs, best epoch {} (val loss {:.6e}) -> {}",
                trained.meta.parameter_count,
                r.epochs_run(),
                r.best_epoch + 1,
                r.val_loss[r.best_epoch],
                path.display()
            );
        }
    }
    Ok(())
}

fn checkpoint_paths(a: &EvalArgs) -> Result<Vec<PathBuf>> {
    let mut paths = a.checkpoints.clone();
    if let Some(dir) = &a.models_dir {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut found = Vec::new();
        for entry in entries {
            let p = entry.map_err(|e| Error::io(dir, e))?.path();
            if p.extension().is_some_and(|x| x == "nckp") {
                found.push(p);
            }
        }
        found.sort();
        paths.extend(found);
    }
    if paths.is_empty() {
        return Err(Error::config("checkpoint", "no checkpoints given (--checkpoint or --models-dir)"));
    }
    Ok(paths)
}

fn eval(cfg: &mut RunConfig, a: &EvalArgs) -> Result<()> {
    if a.data.is_some() {
        cfg.data = a.data.clone();
    }
    if !a.modes.is_empty() {
        cfg.modes = a.modes.clone();
    }
    apply_thresholds(cfg, &a.thresholds);
    cfg.validate()?;
    let paths = checkpoint_paths(a)?;
    let (_, records, params) = dataset(cfg)?;
    let residuals = ResidualEvaluator::new(&params)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    let modes = cfg.modes.clone();
    let per_model: Vec<Vec<EvaluationSeries>> = pool.install(|| {
        paths
            .par_iter()
            .map(|p| {
                let net = load_checkpoint(p)?;
                let meta = ModelMeta::read(&ModelMeta::path_for(p))?;
                if net.kind() != meta.model {
                    return Err(Error::format(p, format!("checkpoint holds {}, sidecar says {}", net.kind(), meta.model)));
                }
                evaluate_model(&net, meta.strategy, &meta.normalizer, &records, &meta.split, &modes, &residuals)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let series: Vec<EvaluationSeries> = per_model.into_iter().flatten().collect();
    create_dir(&cfg.out)?;
    write_metrics_csv(&cfg.out.join("metrics.csv"), &series)?;
    write_summary_csv(&cfg.out.join("summary.csv"), &series, &cfg.thresholds)?;
    let switches = switch_decisions(&series, &cfg.repit)?;
    print_horizons(&series, &switches, &cfg.thresholds);
    println!("wrote {} and {}", cfg.out.join("metrics.csv").display(), cfg.out.join("summary.csv").display());
    Ok(())
}

fn print_horizons(
    series: &[EvaluationSeries],
    switches: &[(GenerationMode, SwitchDecision)],
    tau: &ThresholdConfig,
) {
    let show = |h: Option<usize>| h.map_or("none".to_string(), |k| k.to_string());
    println!(
        "horizons at tau = ({} K, {} m/s, {} m/s) and solver hand-over:",
        tau.t, tau.u_x, tau.u_y
    );
    for (s, (_, d)) in series.iter().zip(switches) {
        let h = threshold_horizon(&s.records, tau);
        let switch = match d {
            SwitchDecision::ContinueDl => "continue".to_string(),
            SwitchDecision::SwitchToCfd { step } => format!("switch at step {step}"),
        };
        println!(
            "  {:<14} {:<10} {:<10} T {:>4}  u_x {:>4}  u_y {:>4}  {switch}",
            s.model.as_str(),
            s.strategy.as_str(),
            s.mode.as_str(),
            show(h.t),
            show(h.u_x),
            show(h.u_y)
        );
    }
}

fn report(cfg: &mut RunConfig, a: &ReportArgs) -> Result<()> {
    apply_thresholds(cfg, &a.thresholds);
    cfg.thresholds.validate()?;
    let inputs = if a.metrics.is_empty() {
        vec![cfg.out.join("metrics.csv")]
    } else {
        a.metrics
            .iter()
            .map(|p| if p.is_dir() { p.join("metrics.csv") } else { p.clone() })
            .collect()
    };
    let mut series = Vec::new();
    for path in &inputs {
        series.extend(read_metrics_csv(path)?);
    }
    if series.is_empty() {
        return Err(Error::format(&inputs[0], "no metrics rows"));
    }
    create_dir(&cfg.out)?;
    let written = emit_report(&series, &cfg.thresholds, &cfg.out)?;
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(())
}
