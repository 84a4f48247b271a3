mod io;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use linked_gp::adaptive::{adapt, AdaptiveConfig, DesignState, TestSet};
use linked_gp::design::{grid, maximin_lhd};
use linked_gp::emulator::{loo_cv, FitConfig, NuggetMode, TrainedEmulator, TrendBasis};
use linked_gp::experiment::{run_experiment, ExperimentConfig, ExperimentKind};
use linked_gp::graph::{NodeId, SystemGraph};
use linked_gp::mc::sample_linked;
use linked_gp::{systems, Error, KernelKind, Result};
use nalgebra::DMatrix;
use serde_json::Value;

use crate::io::{config_value, from_config, output_path, parse_point, read_table, writer};

#[derive(Parser)]
#[command(name = "linkedgp", version, about = "Gaussian-process emulators linked through feed-forward systems of models")]
struct Cli {
    /// JSON configuration file for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed; overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Use the full replication count and test grid.
    #[arg(long, global = true)]
    paper_scale: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an emulator to a CSV of inputs and a response (last column).
    Fit(FitArgs),
    /// Predict with a fitted emulator at the points of a CSV file.
    Predict(PredictArgs),
    /// Run a system at a global design and fit every node emulator.
    Link(LinkArgs),
    /// Linked predictions of every node of a fitted system.
    Propagate(PropagateArgs),
    /// Adaptive design, resuming from the checkpoint in the output directory.
    Adapt(AdaptArgs),
    /// Run one of the built-in experiments.
    Experiment(ExperimentArgs),
    /// Monte-Carlo draws of the linked emulator at one global input.
    Sample(SampleArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    kernel: Option<KernelKind>,
    /// `constant` or `linear`.
    #[arg(long)]
    trend: Option<String>,
    /// `estimate` or a fixed value.
    #[arg(long)]
    nugget: Option<String>,
    /// Reuse the hyperparameters of this emulator instead of estimating them.
    #[arg(long)]
    frozen: Option<PathBuf>,
    /// Skip leave-one-out cross-validation.
    #[arg(long)]
    no_loo: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    emulator: PathBuf,
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct LinkArgs {
    /// Graph file, or the name of a built-in system.
    #[arg(long)]
    graph: String,
    /// CSV of global inputs; a maximin LHD of `--size` points otherwise.
    #[arg(long)]
    design: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    size: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PropagateArgs {
    /// Fitted graph file.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AdaptArgs {
    /// Graph file with simulators, or the name of a built-in system.
    #[arg(long)]
    graph: String,
    /// System runs in the starting maximin LHD.
    #[arg(long, default_value_t = 7)]
    initial: usize,
    /// Total adaptive iterations; a resumed run continues up to this count.
    #[arg(long, short = 'k', default_value_t = 9)]
    iterations: usize,
    /// Test grid points per dimension (squared for one global input).
    #[arg(long, default_value_t = 25)]
    test_grid: usize,
    /// Ignore an existing checkpoint.
    #[arg(long)]
    fresh: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment name; overrides the configuration.
    #[arg(long)]
    experiment: Option<ExperimentKind>,
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Args)]
struct SampleArgs {
    /// Fitted graph file.
    #[arg(long)]
    graph: PathBuf,
    /// Global input, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    point: String,
    #[arg(long, short = 'n', default_value_t = 1000)]
    samples: usize,
    #[arg(long)]
    node: Option<NodeId>,
    /// Also write the draws of every other node.
    #[arg(long)]
    all: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        _ if e.is_numerical() => 3,
        Error::Config(_)
        | Error::Json(_)
        | Error::Csv(_)
        | Error::Io(_)
        | Error::Graph(_)
        | Error::Dimension { .. }
        | Error::Domain(_)
        | Error::Unsupported(_)
        | Error::ZeroRange => 2,
        Error::Node { source, .. } => exit_code(source),
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LINKEDGP_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = config_value(cli.config.as_deref())?;
    match &cli.command {
        Command::Fit(a) => cmd_fit(cli, &config, a),
        Command::Predict(a) => cmd_predict(cli, a),
        Command::Link(a) => cmd_link(cli, a),
        Command::Propagate(a) => cmd_propagate(cli, a),
        Command::Adapt(a) => cmd_adapt(cli, &config, a),
        Command::Experiment(a) => cmd_experiment(cli, &config, a),
        Command::Sample(a) => cmd_sample(cli, a),
    }
}

fn load_graph(spec: &str) -> Result<SystemGraph> {
    let p = Path::new(spec);
    if p.exists() {
        SystemGraph::load(p)
    } else {
        systems::by_name(spec)
            .map_err(|_| Error::Config(format!("'{spec}' is neither a graph file nor a built-in system")))
    }
}

fn cmd_fit(cli: &Cli, config: &Option<Value>, a: &FitArgs) -> Result<()> {
    let t = read_table(&a.data)?;
    let p = t.header.len();
    if p < 2 {
        return Err(Error::Config(format!("{}: need input columns and a response column", a.data.display())));
    }
    let x = DMatrix::from_fn(t.rows.len(), p - 1, |i, j| t.rows[i][j]);
    let y: Vec<f64> = t.rows.iter().map(|r| r[p - 1]).collect();
    let mut fit: FitConfig = from_config(config)?;
    if let Some(k) = a.kernel {
        fit.kernel = k;
    }
    match a.trend.as_deref() {
        None => {}
        Some("constant") => fit.trend = TrendBasis::Constant,
        Some("linear") => fit.trend = TrendBasis::LinearInAll,
        Some(o) => return Err(Error::Config(format!("unknown trend '{o}' (expected constant or linear)"))),
    }
    match a.nugget.as_deref() {
        None => {}
        Some("estimate") => fit.nugget = NuggetMode::Estimate,
        Some(v) => {
            let eta = v
                .parse::<f64>()
                .ok()
                .filter(|e| *e >= 0.0)
                .ok_or_else(|| Error::Config(format!("nugget '{v}' is neither 'estimate' nor a non-negative number")))?;
            fit.nugget = NuggetMode::Fixed(eta);
        }
    }
    let seed = cli.seed.unwrap_or(0);
    let g = match &a.frozen {
        Some(f) => {
            let old = TrainedEmulator::load(f)?;
            TrainedEmulator::with_hyperparameters(
                &x,
                &y,
                old.trend().clone(),
                old.kernel().clone(),
                old.nugget(),
                Some(old.bounds().to_vec()),
            )?
        }
        None => TrainedEmulator::fit(&x, &y, &fit, seed)?,
    };
    let out = output_path(&a.output, &cli.out_dir, "emulator.json");
    let mut w = writer(&out)?;
    w.write_all(g.to_json()?.as_bytes())?;
    w.flush()?;
    println!("nugget {}", g.nugget());
    println!("gammas {:?}", g.gammas_original_units());
    println!("sigma2 {}", g.sigma2());
    if !a.no_loo && a.frozen.is_none() && x.nrows() >= 3 {
        match loo_cv(&x, &y, &fit, seed) {
            Ok(v) => println!("loo_nrmsep {v}"),
            Err(e) => log::warn!("leave-one-out skipped: {e}"),
        }
    }
    Ok(())
}

fn cmd_predict(cli: &Cli, a: &PredictArgs) -> Result<()> {
    let g = TrainedEmulator::load(&a.emulator)?;
    let t = read_table(&a.points)?;
    let out = output_path(&a.output, &cli.out_dir, "predictions.csv");
    let mut w = csv::Writer::from_writer(writer(&out)?);
    let mut head = t.header.clone();
    head.extend(["mean".into(), "var".into()]);
    w.write_record(&head)?;
    for row in &t.rows {
        let p = g.predict(row)?;
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(p.mean.to_string());
        rec.push(p.var.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_link(cli: &Cli, a: &LinkArgs) -> Result<()> {
    let mut g = load_graph(&a.graph)?;
    let seed = cli.seed.unwrap_or(0);
    let xs = match &a.design {
        Some(p) => read_table(p)?.rows,
        None => maximin_lhd(a.size, g.global_bounds(), seed, 10_000)?.points().to_vec(),
    };
    let data = g.collect_runs(&xs)?;
    g.fit_all(&data, seed)?;
    let out = output_path(&a.output, &cli.out_dir, "linked.json");
    let mut w = writer(&out)?;
    w.write_all(g.to_json()?.as_bytes())?;
    w.flush()?;
    for id in g.order() {
        let e = g.emulator(id)?;
        println!(
            "node {id}: {} runs, nugget {}, gammas {:?}, sigma2 {}",
            e.len(),
            e.nugget(),
            e.gammas_original_units(),
            e.sigma2()
        );
    }
    Ok(())
}

fn cmd_propagate(cli: &Cli, a: &PropagateArgs) -> Result<()> {
    let g = SystemGraph::load(&a.graph)?;
    let t = read_table(&a.points)?;
    let props = g.propagate_many(&t.rows)?;
    let out = output_path(&a.output, &cli.out_dir, "propagation.csv");
    let mut w = csv::Writer::from_writer(writer(&out)?);
    w.write_record(["point", "node", "mean", "var", "v1", "v2"])?;
    for (i, p) in props.iter().enumerate() {
        for id in g.order() {
            let o = p.output(id).expect("every node has a prediction");
            w.write_record([
                i.to_string(),
                id.to_string(),
                o.mu.to_string(),
                o.var.to_string(),
                o.v1.to_string(),
                o.v2.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn test_points(g: &SystemGraph, per_dim: usize) -> Vec<Vec<f64>> {
    let per = if g.global_dim() == 1 { per_dim * per_dim } else { per_dim };
    grid(g.global_bounds(), per)
}

fn terminal(g: &SystemGraph) -> Result<NodeId> {
    match g.terminals().as_slice() {
        [t] => Ok(*t),
        t => Err(Error::Config(format!("adapt needs a single terminal node, found {t:?}"))),
    }
}

fn cmd_adapt(cli: &Cli, config: &Option<Value>, a: &AdaptArgs) -> Result<()> {
    let graph = load_graph(&a.graph)?;
    let mut ac: AdaptiveConfig = from_config(config)?;
    if let Some(s) = cli.seed {
        ac.seed = s;
    }
    std::fs::create_dir_all(&cli.out_dir)?;
    let checkpoint = cli.out_dir.join("adapt_state.json");
    let mut state = if checkpoint.exists() && !a.fresh {
        let s = DesignState::load(&checkpoint)?;
        log::info!("resuming from {} at iteration {}", checkpoint.display(), s.iteration);
        s
    } else {
        let d = maximin_lhd(a.initial, graph.global_bounds(), ac.seed, 10_000)?;
        DesignState::from_runs(graph.clone(), d.points(), ac.seed)?
    };
    let node = terminal(&state.graph)?;
    let test = TestSet::from_graph(&state.graph, test_points(&state.graph, a.test_grid), node)?;
    let remaining = a.iterations.saturating_sub(state.iteration);
    let result = adapt(&mut state, remaining, &ac, Some(&test), Some(&checkpoint));
    if let Err(Error::Converged) = result {
        println!("converged after {} iterations", state.iteration);
    } else {
        result?;
    }

    let mut w = writer(&cli.out_dir.join("history.csv"))?;
    state.write_history_csv(&mut w)?;
    w.flush()?;

    // Sequential LHD with the same number of model runs, rounded up to whole
    // system runs.
    let nodes = state.graph.order().count();
    let budget = state.total_runs().div_ceil(nodes);
    let mut base = graph;
    let d = maximin_lhd(budget, base.global_bounds(), ac.seed, 10_000)?;
    let data = base.collect_runs(d.points())?;
    base.fit_all(&data, ac.seed)?;
    let adaptive = test.nrmsep(&state.graph)?;
    let sequential = test.nrmsep(&base)?;
    let mut w = csv::Writer::from_writer(writer(&cli.out_dir.join("comparison.csv"))?);
    w.write_record(["method", "model_runs", "nrmsep"])?;
    w.write_record(["adaptive".into(), state.total_runs().to_string(), adaptive.to_string()])?;
    let seq_runs: usize = data.values().map(|d| d.len()).sum();
    w.write_record(["sequential".into(), seq_runs.to_string(), sequential.to_string()])?;
    w.flush()?;
    let runs: BTreeMap<NodeId, usize> = state.runs_by_node();
    println!("adaptive runs by node {runs:?}");
    println!("nrmsep adaptive {adaptive} ({} runs), sequential {sequential} ({seq_runs} runs)", state.total_runs());
    Ok(())
}

fn cmd_experiment(cli: &Cli, config: &Option<Value>, a: &ExperimentArgs) -> Result<()> {
    let mut c: ExperimentConfig = from_config(config)?;
    if let Some(k) = a.experiment {
        c.experiment = k;
    }
    if cli.paper_scale {
        c = c.full_scale();
    }
    if let Some(r) = a.replications {
        c.replications = r;
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    let out = run_experiment(&c)?;
    out.save(&cli.out_dir)?;
    let s = &out.summary;
    println!("{}: {} units completed, {} failed", s.experiment, s.completed, s.failed);
    for e in s.entries.iter().filter(|e| !e.metric.ends_with("_min") && !e.metric.ends_with("_max")) {
        println!("  size {:>3}  {:<20} {:<32} {}", e.size, e.method, e.metric, e.value);
    }
    Ok(())
}

fn cmd_sample(cli: &Cli, a: &SampleArgs) -> Result<()> {
    let g = SystemGraph::load(&a.graph)?;
    let x = parse_point(&a.point)?;
    let b = sample_linked(&g, &x, a.samples, cli.seed.unwrap_or(0), a.node, a.all)?;
    let out = output_path(&a.output, &cli.out_dir, "samples.csv");
    let mut w = writer(&out)?;
    b.write_csv(&mut w)?;
    w.flush()?;
    let m = b.moments()?;
    println!(
        "node {}: mean {} (se {}), var {} (se {}), skewness {} (se {})",
        b.node, m.mean, m.se_mean, m.var, m.se_var, m.skewness, m.se_skewness
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::IllConditioned { tried: vec![1e-8] }), 3);
        assert_eq!(exit_code(&Error::Estimation("x".into())), 3);
        let nested = Error::Node {
            node: 3,
            source: Box::new(Error::RankDeficientTrend),
        };
        assert_eq!(exit_code(&nested), 3);
        let sim = Error::Simulator {
            node: 1,
            message: "boom".into(),
        };
        assert_eq!(exit_code(&sim), 1);
    }
}
