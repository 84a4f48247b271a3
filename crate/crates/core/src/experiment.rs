//! Experiment drivers: repeated design/fit/score runs on the built-in
//! systems, producing long-format result rows and a summary.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{adapt, AdaptiveConfig, DesignState};
use crate::design::{grid, Design, maximin_lhd, nrmsep, nrmsep_pooled};
use crate::emulator::{FitConfig, NuggetMode, TrainedEmulator, TrendBasis};
use crate::error::{Error, Result};
use crate::graph::{node_seed, NodeId, Source, SystemGraph, TrainingSet};
use crate::kernel::KernelKind;
use crate::linked::{ratio_diagnostic, ColumnInput};
use crate::mc::{mc_moments, sample_linked};
use crate::systems::{chain_system, shared_input_system, two_layer_system};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Linked vs composite emulator on the two-layer system, over
    /// training sizes.
    #[default]
    TwoLayerAccuracy,
    /// Linked emulator accuracy per design for several kernels.
    KernelComparison,
    /// Adaptive design against a sequential LHD with the same budget.
    AdaptiveVsSequential,
    /// Per-model independent LHDs against the sequential LHD on the
    /// shared-input system.
    IndependentDesign,
    /// Linked prediction against Monte-Carlo draws on the three-model chain.
    ThreeLayerChain,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::TwoLayerAccuracy,
        ExperimentKind::KernelComparison,
        ExperimentKind::AdaptiveVsSequential,
        ExperimentKind::IndependentDesign,
        ExperimentKind::ThreeLayerChain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::TwoLayerAccuracy => "two_layer_accuracy",
            ExperimentKind::KernelComparison => "kernel_comparison",
            ExperimentKind::AdaptiveVsSequential => "adaptive_vs_sequential",
            ExperimentKind::IndependentDesign => "independent_design",
            ExperimentKind::ThreeLayerChain => "three_layer_chain",
        }
    }

    fn default_sizes(self) -> Vec<usize> {
        match self {
            ExperimentKind::TwoLayerAccuracy | ExperimentKind::KernelComparison => (2..=10).map(|k| 5 * k).collect(),
            ExperimentKind::AdaptiveVsSequential => vec![10],
            ExperimentKind::IndependentDesign => vec![10],
            ExperimentKind::ThreeLayerChain => vec![8],
        }
    }

    fn system(self) -> SystemGraph {
        match self {
            ExperimentKind::TwoLayerAccuracy | ExperimentKind::KernelComparison | ExperimentKind::AdaptiveVsSequential => {
                two_layer_system()
            }
            ExperimentKind::IndependentDesign => shared_input_system(),
            ExperimentKind::ThreeLayerChain => chain_system(),
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Training sizes; each experiment has its own default. For the adaptive
    /// experiment this is the run budget of the sequential baseline, in
    /// system runs.
    pub sizes: Option<Vec<usize>>,
    pub kernel: KernelKind,
    /// Kernels compared by the kernel experiment.
    pub kernels: Vec<KernelKind>,
    pub nugget: NuggetMode,
    pub replications: usize,
    /// Replication `t` uses seed `seed + t`.
    pub seed: u64,
    /// Test grid points per dimension; one-dimensional systems use its square.
    pub test_grid: usize,
    pub lhd_iterations: usize,
    /// Candidate grid points per dimension for the adaptive search.
    pub grid_per_dim: usize,
    pub initial_runs: usize,
    pub adaptive_runs: usize,
    pub mc_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::default(),
            sizes: None,
            kernel: KernelKind::Matern25,
            kernels: vec![KernelKind::SquaredExponential, KernelKind::Matern25],
            nugget: NuggetMode::Estimate,
            replications: 10,
            seed: 0,
            test_grid: 25,
            lhd_iterations: 10_000,
            grid_per_dim: 50,
            initial_runs: 7,
            adaptive_runs: 9,
            mc_samples: 500,
        }
    }
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment,
            ..Self::default()
        }
    }

    /// Full-size settings: 100 replications and a 50-point test grid.
    pub fn full_scale(mut self) -> Self {
        self.replications = 100;
        self.test_grid = 50;
        self
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.sizes.clone().unwrap_or_else(|| self.experiment.default_sizes())
    }

    fn fit(&self, kernel: KernelKind) -> FitConfig {
        FitConfig {
            kernel,
            nugget: self.nugget,
            ..FitConfig::default()
        }
    }

    fn graph(&self, kernel: KernelKind) -> SystemGraph {
        let g = self.experiment.system();
        let nodes = g.nodes().map(|n| n.clone().with_fit(self.fit(kernel))).collect();
        SystemGraph::new(g.global_bounds().to_vec(), nodes).expect("rewired built-in system is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.test_grid < 2 {
            return Err(Error::Config("test_grid must be at least 2".into()));
        }
        if self.experiment == ExperimentKind::KernelComparison && self.kernels.is_empty() {
            return Err(Error::Config("kernel_comparison needs at least one kernel".into()));
        }
        if self.experiment == ExperimentKind::ThreeLayerChain && self.mc_samples < 3 {
            return Err(Error::Config("mc_samples must be at least 3".into()));
        }
        let g = self.experiment.system();
        let p = g.global_dim();
        // Every emulator needs more points than trend coefficients plus inputs.
        let need = g
            .nodes()
            .map(|n| {
                let d = n.inputs.len();
                n.effective_fit().trend.size(d) + d
            })
            .chain(std::iter::once(1 + p))
            .max()
            .unwrap_or(0);
        let sizes = self.sizes();
        if sizes.is_empty() {
            return Err(Error::Config("no training sizes".into()));
        }
        let check = |n: usize, what: &str| {
            if n <= need {
                Err(Error::Config(format!("{what} {n} must exceed {need} for this system")))
            } else {
                Ok(())
            }
        };
        if self.experiment == ExperimentKind::AdaptiveVsSequential {
            check(self.initial_runs, "initial_runs")?;
        }
        for n in sizes {
            check(n, "training size")?;
        }
        Ok(())
    }
}

/// One long-format result value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub replication: usize,
    pub size: usize,
    pub method: String,
    pub metric: String,
    /// Global input for per-point values.
    pub input: Option<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub size: usize,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub replication: usize,
    pub size: usize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment: ExperimentKind,
    pub config: ExperimentConfig,
    pub completed: usize,
    pub failed: usize,
    pub failures: Vec<Failure>,
    pub entries: Vec<SummaryEntry>,
}

impl ExperimentSummary {
    pub fn get(&self, size: usize, method: &str, metric: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.size == size && e.method == method && e.metric == metric)
            .map(|e| e.value)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub summary: ExperimentSummary,
}

impl ExperimentOutput {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["experiment", "replication", "size", "method", "metric", "input", "value"])?;
        for r in &self.rows {
            w.write_record([
                r.experiment.clone(),
                r.replication.to_string(),
                r.size.to_string(),
                r.method.clone(),
                r.metric.clone(),
                r.input.map(|v| v.to_string()).unwrap_or_default(),
                r.value.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Write `<name>_results.csv` and `<name>_summary.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let name = self.summary.experiment.name();
        self.write_csv(std::fs::File::create(dir.join(format!("{name}_results.csv")))?)?;
        std::fs::write(
            dir.join(format!("{name}_summary.json")),
            serde_json::to_string_pretty(&self.summary)?,
        )?;
        Ok(())
    }
}

/// Results of one (size, replication) unit.
#[derive(Default)]
struct Unit {
    rows: Vec<(String, String, Option<f64>, f64)>,
    /// Test-grid predictions kept for pooling, by method.
    predictions: Vec<(String, Vec<f64>)>,
}

impl Unit {
    fn push(&mut self, method: &str, metric: &str, value: f64) {
        self.rows.push((method.into(), metric.into(), None, value));
    }

    fn push_at(&mut self, method: &str, metric: &str, input: f64, value: f64) {
        self.rows.push((method.into(), metric.into(), Some(input), value));
    }
}

struct TestGrid {
    x: Vec<Vec<f64>>,
    truth: Vec<f64>,
    node: NodeId,
}

impl TestGrid {
    fn new(graph: &SystemGraph, per_dim: usize) -> Result<Self> {
        let per = if graph.global_dim() == 1 { per_dim * per_dim } else { per_dim };
        let x = grid(graph.global_bounds(), per);
        let node = single_terminal(graph)?;
        let truth = x
            .iter()
            .map(|p| graph.true_outputs(p).map(|o| o[&node]))
            .collect::<Result<Vec<f64>>>()?;
        Ok(TestGrid { x, truth, node })
    }

    fn linked_means(&self, graph: &SystemGraph) -> Result<Vec<f64>> {
        Ok(graph
            .propagate_many(&self.x)?
            .iter()
            .map(|p| p.output(self.node).expect("terminal in graph").mu)
            .collect())
    }
}

fn single_terminal(graph: &SystemGraph) -> Result<NodeId> {
    match graph.terminals().as_slice() {
        [t] => Ok(*t),
        t => Err(Error::Config(format!("expected one terminal node, found {t:?}"))),
    }
}

/// Design, fit and score every (size, replication) unit. Units run in
/// parallel on the current rayon pool; results do not depend on its size.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let kind = config.experiment;
    let test = TestGrid::new(&kind.system(), config.test_grid)?;
    let units: Vec<(usize, usize)> = config
        .sizes()
        .into_iter()
        .flat_map(|n| (0..config.replications).map(move |t| (n, t)))
        .collect();
    let results: Vec<Result<Unit>> = units
        .par_iter()
        .map(|&(n, t)| {
            let seed = config.seed.wrapping_add(t as u64);
            match kind {
                ExperimentKind::TwoLayerAccuracy => two_layer_unit(config, &test, n, seed),
                ExperimentKind::KernelComparison => kernel_unit(config, &test, n, seed),
                ExperimentKind::AdaptiveVsSequential => adaptive_unit(config, &test, n, seed),
                ExperimentKind::IndependentDesign => independent_unit(config, &test, n, seed),
                ExperimentKind::ThreeLayerChain => chain_unit(config, &test, n, seed),
            }
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut kept: Vec<(usize, usize, Unit)> = Vec::new();
    for (&(n, t), r) in units.iter().zip(results) {
        match r {
            Ok(u) => {
                for (method, metric, input, value) in &u.rows {
                    rows.push(ResultRow {
                        experiment: kind.name().into(),
                        replication: t,
                        size: n,
                        method: method.clone(),
                        metric: metric.clone(),
                        input: *input,
                        value: *value,
                    });
                }
                kept.push((n, t, u));
            }
            Err(e) => {
                log::warn!("{kind}: size {n}, replication {t} failed: {e}");
                failures.push(Failure {
                    replication: t,
                    size: n,
                    error: e.to_string(),
                });
            }
        }
    }
    let entries = summarize(kind, &rows, &kept, &test)?;
    Ok(ExperimentOutput {
        rows,
        summary: ExperimentSummary {
            experiment: kind,
            config: config.clone(),
            completed: kept.len(),
            failed: failures.len(),
            failures,
            entries,
        },
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn summarize(kind: ExperimentKind, rows: &[ResultRow], kept: &[(usize, usize, Unit)], test: &TestGrid) -> Result<Vec<SummaryEntry>> {
    let mut groups: BTreeMap<(usize, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.input.is_none()) {
        groups
            .entry((r.size, r.method.clone(), r.metric.clone()))
            .or_default()
            .push(r.value);
    }
    let mut out = Vec::new();
    let mut entry = |size: usize, method: &str, metric: String, value: f64| {
        out.push(SummaryEntry {
            size,
            method: method.into(),
            metric,
            value,
        })
    };
    for ((size, method, metric), mut v) in groups {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let med = median(&mut v);
        entry(size, &method, format!("{metric}_mean"), mean);
        entry(size, &method, format!("{metric}_median"), med);
        entry(size, &method, format!("{metric}_min"), min);
        entry(size, &method, format!("{metric}_max"), max);
        if metric == "nrmsep" && kind == ExperimentKind::KernelComparison {
            entry(size, &method, "nrmsep_max_over_median".into(), max / med);
        }
    }

    // Pooled NRMSEP over replications, per size and method.
    if kind == ExperimentKind::TwoLayerAccuracy {
        let mut preds: BTreeMap<(usize, String), Vec<Vec<f64>>> = BTreeMap::new();
        for (n, _, u) in kept {
            for (m, p) in &u.predictions {
                preds.entry((*n, m.clone())).or_default().push(p.clone());
            }
        }
        for ((n, m), p) in preds {
            entry(n, &m, "nrmsep_pooled".into(), nrmsep_pooled(&test.truth, &p)?);
        }
    }

    if kind == ExperimentKind::AdaptiveVsSequential {
        let by_rep = |metric: &str, method: &str| -> BTreeMap<(usize, usize), f64> {
            rows.iter()
                .filter(|r| r.metric == metric && r.method == method)
                .map(|r| ((r.size, r.replication), r.value))
                .collect()
        };
        let a = by_rep("nrmsep", "adaptive");
        let s = by_rep("nrmsep", "sequential");
        let sizes: Vec<usize> = kept.iter().map(|k| k.0).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        for n in sizes {
            let wins = a.iter().filter(|(k, v)| k.0 == n && **v < s[k]).count();
            entry(n, "adaptive", "wins".into(), wins as f64);
            let runs: Vec<&ResultRow> = rows.iter().filter(|r| r.size == n && r.metric.starts_with("runs_node_")).collect();
            let reps: std::collections::BTreeSet<usize> = runs.iter().map(|r| r.replication).collect();
            let mut most = 0;
            for t in reps {
                let mine: Vec<(&str, f64)> = runs
                    .iter()
                    .filter(|r| r.replication == t)
                    .map(|r| (r.metric.as_str(), r.value))
                    .collect();
                let first = mine.iter().find(|m| m.0 == "runs_node_1").map_or(0.0, |m| m.1);
                if mine.iter().filter(|m| m.0 != "runs_node_1").all(|m| first > m.1) {
                    most += 1;
                }
            }
            entry(n, "adaptive", "node_1_most_runs".into(), most as f64);
        }
    }

    if kind == ExperimentKind::IndependentDesign {
        let mut share: BTreeMap<(usize, &str), (usize, usize)> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.metric.starts_with("ratio_")) {
            let c = share.entry((r.size, r.metric.as_str())).or_default();
            c.1 += 1;
            if r.value > 100.0 {
                c.0 += 1;
            }
        }
        for ((n, m), (hit, total)) in share {
            entry(n, "sequential", format!("{m}_share_above_100"), hit as f64 / total as f64);
        }
    }

    if kind == ExperimentKind::ThreeLayerChain {
        let mut counts: BTreeMap<(usize, &str), (usize, usize)> = BTreeMap::new();
        let cell = |r: &ResultRow| (r.replication, r.input.map(f64::to_bits));
        let mut table: BTreeMap<(usize, Option<u64>), BTreeMap<&str, f64>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.input.is_some()) {
            table.entry(cell(r)).or_default().insert(r.metric.as_str(), r.value);
        }
        let size = kept.first().map_or(0, |k| k.0);
        for m in table.values() {
            let g = |k: &str| m.get(k).copied().unwrap_or(f64::NAN);
            let c = counts.entry((size, "skew")).or_default();
            c.1 += 1;
            if g("mc_skewness").abs() > 3.0 * g("mc_skewness_se") {
                c.0 += 1;
            }
            let c = counts.entry((size, "mean")).or_default();
            c.1 += 1;
            if (g("linked_mean") - g("mc_mean")).abs() <= 3.0 * g("mc_mean_se") {
                c.0 += 1;
            }
            let c = counts.entry((size, "sd")).or_default();
            c.1 += 1;
            if (g("linked_sd") - g("mc_sd")).abs() <= 3.0 * g("mc_sd_se") {
                c.0 += 1;
            }
        }
        for ((n, what), (hit, total)) in counts {
            let metric = match what {
                "skew" => "share_skewness_significant",
                "mean" => "share_mean_within_3se",
                _ => "share_sd_within_3se",
            };
            entry(n, "linked", metric.into(), hit as f64 / total as f64);
        }
    }
    Ok(out)
}

struct Sequential {
    graph: SystemGraph,
    data: BTreeMap<NodeId, TrainingSet>,
    design: Design,
}

fn fitted_sequential(config: &ExperimentConfig, kernel: KernelKind, n: usize, seed: u64) -> Result<Sequential> {
    let mut graph = config.graph(kernel);
    let design = maximin_lhd(n, graph.global_bounds(), seed, config.lhd_iterations)?;
    let data = graph.collect_runs(design.points())?;
    graph.fit_all(&data, seed)?;
    Ok(Sequential { graph, data, design })
}

fn two_layer_unit(config: &ExperimentConfig, test: &TestGrid, n: usize, seed: u64) -> Result<Unit> {
    let mut u = Unit::default();
    let s = fitted_sequential(config, config.kernel, n, seed)?;
    let linked = test.linked_means(&s.graph)?;
    u.push("linked", "nrmsep", nrmsep(&test.truth, &linked)?);

    // A single emulator from global inputs straight to the output.
    let y = &s.data[&test.node].y;
    let fit = FitConfig {
        trend: TrendBasis::Constant,
        ..config.fit(config.kernel)
    };
    let comp = TrainedEmulator::fit(&s.design.to_matrix(), y, &fit, seed)?;
    let composite = test.x.iter().map(|p| comp.predict_mean(p)).collect::<Result<Vec<f64>>>()?;
    u.push("composite", "nrmsep", nrmsep(&test.truth, &composite)?);
    u.predictions.push(("linked".into(), linked));
    u.predictions.push(("composite".into(), composite));
    Ok(u)
}

fn kernel_unit(config: &ExperimentConfig, test: &TestGrid, n: usize, seed: u64) -> Result<Unit> {
    let mut u = Unit::default();
    for &k in &config.kernels {
        let pred = test.linked_means(&fitted_sequential(config, k, n, seed)?.graph)?;
        u.push(k.name(), "nrmsep", nrmsep(&test.truth, &pred)?);
    }
    Ok(u)
}

fn adaptive_unit(config: &ExperimentConfig, test: &TestGrid, n: usize, seed: u64) -> Result<Unit> {
    let mut u = Unit::default();
    let g = config.graph(config.kernel);
    let start = maximin_lhd(config.initial_runs, g.global_bounds(), seed, config.lhd_iterations)?;
    let mut state = DesignState::from_runs(g, start.points(), seed)?;
    let ac = AdaptiveConfig {
        grid_per_dim: config.grid_per_dim,
        seed,
        ..AdaptiveConfig::default()
    };
    adapt(&mut state, config.adaptive_runs, &ac, None, None)?;
    u.push("adaptive", "nrmsep", nrmsep(&test.truth, &test.linked_means(&state.graph)?)?);
    u.push("adaptive", "total_runs", state.total_runs() as f64);
    for (id, r) in state.runs_by_node() {
        u.push("adaptive", &format!("runs_node_{id}"), r as f64);
    }
    let base = fitted_sequential(config, config.kernel, n, seed)?;
    u.push("sequential", "nrmsep", nrmsep(&test.truth, &test.linked_means(&base.graph)?)?);
    u.push("sequential", "total_runs", base.data.values().map(TrainingSet::len).sum::<usize>() as f64);
    Ok(u)
}

fn independent_unit(config: &ExperimentConfig, test: &TestGrid, n: usize, seed: u64) -> Result<Unit> {
    let mut u = Unit::default();
    let seq = fitted_sequential(config, config.kernel, n, seed)?.graph;
    u.push("sequential", "nrmsep", nrmsep(&test.truth, &test.linked_means(&seq)?)?);

    // Each model gets its own LHD. Nodes fed by other nodes are designed
    // on the unit box, taken to be the known range of their inputs.
    let mut ind = config.graph(config.kernel);
    let mut data = BTreeMap::new();
    for node in ind.nodes() {
        let bounds: Vec<(f64, f64)> = node
            .inputs
            .iter()
            .map(|s| match *s {
                Source::Global(k) => ind.global_bounds()[k],
                Source::Node(_) => (0.0, 1.0),
            })
            .collect();
        let d = maximin_lhd(n, &bounds, node_seed(seed, node.id), config.lhd_iterations)?;
        let sim = node.simulator.as_ref().ok_or_else(|| Error::Simulator {
            node: node.id,
            message: "no simulator attached".into(),
        })?;
        let mut set = TrainingSet::default();
        for p in d.points() {
            set.push(p.clone(), sim.run(node.id, p)?);
        }
        data.insert(node.id, set);
    }
    ind.fit_all(&data, seed)?;
    u.push("independent", "nrmsep", nrmsep(&test.truth, &test.linked_means(&ind)?)?);

    // Dependence ratios of the terminal node's random inputs along the test grid.
    let node = seq.node(test.node)?;
    let g = seq.emulator(test.node)?;
    for (x, p) in test.x.iter().zip(seq.propagate_many(&test.x)?) {
        let inputs: Vec<ColumnInput> = node
            .inputs
            .iter()
            .map(|s| match *s {
                Source::Global(k) => ColumnInput::Fixed(x[k]),
                Source::Node(v) => ColumnInput::Random(p.beliefs[&v]),
            })
            .collect();
        for (k, r) in ratio_diagnostic(g, &inputs)?.into_iter().enumerate() {
            u.push_at("sequential", &format!("ratio_{}", k + 1), x[0], r);
        }
    }
    Ok(u)
}

fn chain_unit(config: &ExperimentConfig, test: &TestGrid, n: usize, seed: u64) -> Result<Unit> {
    let mut u = Unit::default();
    let g = fitted_sequential(config, config.kernel, n, seed)?.graph;
    let props = g.propagate_many(&test.x)?;
    for (i, (x, p)) in test.x.iter().zip(props).enumerate() {
        let l = p.output(test.node).expect("terminal in graph");
        let b = sample_linked(&g, x, config.mc_samples, node_seed(seed, i), Some(test.node), false)?;
        let m = mc_moments(&b.samples)?;
        let sd = m.var.sqrt();
        u.push_at("linked", "linked_mean", x[0], l.mu);
        u.push_at("linked", "linked_sd", x[0], l.var.sqrt());
        u.push_at("linked", "mc_mean", x[0], m.mean);
        u.push_at("linked", "mc_mean_se", x[0], m.se_mean);
        u.push_at("linked", "mc_sd", x[0], sd);
        // Delta method: se(s) = se(s²) / 2s.
        u.push_at("linked", "mc_sd_se", x[0], if sd > 0.0 { m.se_var / (2.0 * sd) } else { 0.0 });
        u.push_at("linked", "mc_skewness", x[0], m.skewness);
        u.push_at("linked", "mc_skewness_se", x[0], m.se_skewness);
        u.push_at("linked", "truth", x[0], test.truth[i]);
    }
    Ok(u)
}
