//! Variance-based adaptive design: at each iteration find the global input
//! and the model whose emulator contributes most to the linked variance,
//! run that one model, refit its emulator and relink.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{grid, nrmsep, random_lhs};
use crate::emulator::{scale_value, scale_width};
use crate::error::{Error, Result};
use crate::graph::{node_seed, NodeId, Propagation, Source, SystemGraph, TrainingSet};
use crate::linked::{variance_contribution, ColumnInput};

/// Grid search settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveConfig {
    /// Grid points per global input dimension.
    pub grid_per_dim: usize,
    /// Largest full grid; above it a Latin hypercube of this size is used.
    pub grid_cap: usize,
    pub seed: u64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            grid_per_dim: 50,
            grid_cap: 10_000,
            seed: 0,
        }
    }
}

impl AdaptiveConfig {
    pub fn candidates(&self, bounds: &[(f64, f64)]) -> Vec<Vec<f64>> {
        let per = self.grid_per_dim.max(1);
        let full = (per as f64).powi(bounds.len() as i32);
        if full <= self.grid_cap as f64 {
            grid(bounds, per)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            random_lhs(self.grid_cap.max(1), bounds, &mut rng)
        }
    }
}

/// Which part of a node's linked variance was largest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Contribution {
    /// `V1`: the upstream emulators.
    Upstream,
    /// `V2`: the node's own emulator.
    Own,
}

/// The outcome of one selection step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Global input with the largest variance term.
    pub global_input: Vec<f64>,
    /// Terminal node at which the maximum was found.
    pub terminal: NodeId,
    pub label: Contribution,
    pub v1: f64,
    pub v2: f64,
    /// Node to run and the input at which to run it.
    pub node: NodeId,
    pub point: Vec<f64>,
    /// `V1({k})` of each upstream node examined on the way down.
    pub upstream: Vec<(NodeId, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub node: NodeId,
    pub global_input: Vec<f64>,
    pub point: Vec<f64>,
    pub output: f64,
    pub label: Contribution,
    pub v1: f64,
    pub v2: f64,
    pub upstream: Vec<(NodeId, f64)>,
    pub jittered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nrmsep: Option<f64>,
}

/// Held-out points for tracking accuracy after each refit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSet {
    pub x: Vec<Vec<f64>>,
    pub truth: Vec<f64>,
    pub node: NodeId,
}

impl TestSet {
    pub fn from_graph(graph: &SystemGraph, x: Vec<Vec<f64>>, node: NodeId) -> Result<Self> {
        let truth = x
            .iter()
            .map(|p| graph.run_true_system(p).map(|r| r.outputs[&node]))
            .collect::<Result<Vec<f64>>>()?;
        Ok(TestSet { x, truth, node })
    }

    pub fn nrmsep(&self, graph: &SystemGraph) -> Result<f64> {
        let pred = graph
            .propagate_many(&self.x)?
            .iter()
            .map(|p| p.output(self.node).map(|o| o.mu).expect("node in graph"))
            .collect::<Vec<f64>>();
        nrmsep(&self.truth, &pred)
    }
}

/// Everything needed to continue an adaptive design.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DesignState {
    pub graph: SystemGraph,
    pub data: BTreeMap<NodeId, TrainingSet>,
    pub iteration: usize,
    pub initial_runs: usize,
    pub history: Vec<HistoryEntry>,
    pub seed: u64,
}

impl DesignState {
    /// Start from fitted emulators and their training data.
    pub fn new(graph: SystemGraph, data: BTreeMap<NodeId, TrainingSet>, seed: u64) -> Result<Self> {
        if !graph.is_fitted() {
            return Err(Error::Graph("every node needs an emulator before adapting".into()));
        }
        for id in graph.order() {
            if data.get(&id).is_none_or(|d| d.len() != graph.emulator(id).map_or(0, |g| g.len())) {
                return Err(Error::Graph(format!("training data of node {id} does not match its emulator")));
            }
        }
        let initial_runs = data.values().map(TrainingSet::len).sum();
        Ok(DesignState {
            graph,
            data,
            iteration: 0,
            initial_runs,
            history: Vec::new(),
            seed,
        })
    }

    /// Run the true system at `xs`, fit every node and start a design.
    pub fn from_runs(mut graph: SystemGraph, xs: &[Vec<f64>], seed: u64) -> Result<Self> {
        let data = graph.collect_runs(xs)?;
        graph.fit_all(&data, seed)?;
        Self::new(graph, data, seed)
    }

    pub fn total_runs(&self) -> usize {
        self.data.values().map(TrainingSet::len).sum()
    }

    /// Number of adaptive runs per node.
    pub fn runs_by_node(&self) -> BTreeMap<NodeId, usize> {
        let mut m: BTreeMap<NodeId, usize> = self.graph.order().map(|id| (id, 0)).collect();
        for h in &self.history {
            *m.entry(h.node).or_default() += 1;
        }
        m
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// History as CSV: iteration, node, global input, run point, output and
    /// the variance terms at selection.
    pub fn write_history_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "iteration",
            "node",
            "global_input",
            "point",
            "output",
            "label",
            "v1",
            "v2",
            "jittered",
            "nrmsep",
        ])?;
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        for h in &self.history {
            w.write_record([
                h.iteration.to_string(),
                h.node.to_string(),
                join(&h.global_input),
                join(&h.point),
                h.output.to_string(),
                format!("{:?}", h.label),
                h.v1.to_string(),
                h.v2.to_string(),
                h.jittered.to_string(),
                h.nrmsep.map_or(String::new(), |v| v.to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Input at which node `id` would be run for global input `x`: global
/// slots take `x`, upstream slots take the upstream predictive means.
fn node_point(graph: &SystemGraph, prop: &Propagation, id: NodeId, x: &[f64]) -> Result<Vec<f64>> {
    Ok(graph
        .node(id)?
        .inputs
        .iter()
        .map(|s| match *s {
            Source::Global(k) => x[k],
            Source::Node(u) => prop.beliefs[&u].mu,
        })
        .collect())
}

fn column_inputs(graph: &SystemGraph, prop: &Propagation, id: NodeId, x: &[f64]) -> Result<Vec<ColumnInput>> {
    Ok(graph
        .node(id)?
        .inputs
        .iter()
        .map(|s| match *s {
            Source::Global(k) => ColumnInput::Fixed(x[k]),
            Source::Node(u) => ColumnInput::Random(prop.beliefs[&u]),
        })
        .collect())
}

/// Walk down from node `id` to the emulator responsible for its upstream
/// variance: the feeding node with the largest `V1({k})`, recursing while
/// that node's own upstream share exceeds its own variance.
fn attribute_upstream(
    graph: &SystemGraph,
    prop: &Propagation,
    x: &[f64],
    mut id: NodeId,
    trail: &mut Vec<(NodeId, f64)>,
) -> Result<NodeId> {
    loop {
        let g = graph.emulator(id)?;
        let inputs = column_inputs(graph, prop, id, x)?;
        let mut best: Option<(NodeId, f64)> = None;
        for (slot, s) in graph.node(id)?.inputs.iter().enumerate() {
            if let Source::Node(u) = *s {
                let v = variance_contribution(g, &inputs, &[slot]).map_err(|e| e.at_node(id))?;
                trail.push((u, v));
                if best.is_none_or(|(bu, bv)| v > bv || (v == bv && u < bu)) {
                    best = Some((u, v));
                }
            }
        }
        let (u, _) = best.expect("node has upstream inputs");
        match prop.linked.get(&u) {
            Some(l) if l.v1 > l.v2 => id = u,
            _ => return Ok(u),
        }
    }
}

/// Grid search for the largest variance term and the model to refine.
pub fn select_refinement(graph: &SystemGraph, candidates: &[Vec<f64>]) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Domain("empty candidate grid".into()));
    }
    let props = graph.propagate_many(candidates)?;
    let terminals = graph.terminals();
    // (value, terminal, grid index, label); earlier entries win ties.
    let mut best: Option<(f64, NodeId, usize, Contribution)> = None;
    for &t in &terminals {
        for (i, p) in props.iter().enumerate() {
            let out = p.output(t).expect("terminal in propagation");
            for (label, v) in [(Contribution::Upstream, out.v1), (Contribution::Own, out.v2)] {
                if best.is_none_or(|b| v > b.0) {
                    best = Some((v, t, i, label));
                }
            }
        }
    }
    let (v, terminal, i, label) = best.expect("non-empty");
    if !(v > 0.0) {
        return Err(Error::Converged);
    }
    let x = &candidates[i];
    let prop = &props[i];
    let out = prop.output(terminal).expect("terminal in propagation");
    let mut upstream = Vec::new();
    let node = match label {
        Contribution::Own => terminal,
        Contribution::Upstream => attribute_upstream(graph, prop, x, terminal, &mut upstream)?,
    };
    Ok(Selection {
        global_input: x.clone(),
        terminal,
        label,
        v1: out.v1,
        v2: out.v2,
        node,
        point: node_point(graph, prop, node, x)?,
        upstream,
    })
}

/// Move a point that (nearly) repeats an existing design point by one grid
/// cell in every coordinate, staying inside `bounds`.
/// Returns whether the point was moved.
pub fn nudge_duplicate(point: &mut [f64], existing: &[Vec<f64>], bounds: &[(f64, f64)], per_dim: usize) -> bool {
    let close = |p: &[f64], q: &[f64]| {
        p.iter().zip(q).zip(bounds).all(|((a, b), bd)| {
            (scale_value(*a, *bd) - scale_value(*b, *bd)).abs() <= 1e-9
        })
    };
    if !existing.iter().any(|e| close(point, e)) {
        return false;
    }
    let cells = per_dim.saturating_sub(1).max(1) as f64;
    for (v, (lo, hi)) in point.iter_mut().zip(bounds) {
        let step = scale_width((*lo, *hi)) / cells;
        *v = if *v + step <= *hi { *v + step } else { *v - step };
    }
    true
}

/// Run `k` more iterations. With a checkpoint path the state is saved
/// after every iteration, and before returning an error.
pub fn adapt(
    state: &mut DesignState,
    k: usize,
    config: &AdaptiveConfig,
    test: Option<&TestSet>,
    checkpoint: Option<&Path>,
) -> Result<()> {
    let candidates = config.candidates(state.graph.global_bounds());
    for _ in 0..k {
        if let Err(e) = step(state, &candidates, config, test) {
            if let Some(p) = checkpoint {
                state.save(p)?;
            }
            return Err(e);
        }
        if let Some(p) = checkpoint {
            state.save(p)?;
        }
    }
    Ok(())
}

fn step(state: &mut DesignState, candidates: &[Vec<f64>], config: &AdaptiveConfig, test: Option<&TestSet>) -> Result<()> {
    let sel = select_refinement(&state.graph, candidates)?;
    let id = sel.node;
    let mut point = sel.point.clone();
    let node = state.graph.node(id)?;
    let bounds: Vec<(f64, f64)> = node
        .inputs
        .iter()
        .enumerate()
        .map(|(slot, s)| match *s {
            Source::Global(g) => state.graph.global_bounds()[g],
            Source::Node(_) => state.graph.emulator(id).map(|e| e.bounds()[slot]).unwrap_or((0.0, 1.0)),
        })
        .collect();
    let data = state.data.get(&id).expect("data for every node");
    let jittered = nudge_duplicate(&mut point, &data.x, &bounds, config.grid_per_dim);
    if jittered {
        log::warn!("node {id}: selected point {:?} repeats a design point; moved to {point:?}", sel.point);
    }
    let sim = node.simulator.as_ref().ok_or_else(|| Error::Simulator {
        node: id,
        message: "no simulator attached".into(),
    })?;
    let y = sim.run(id, &point)?;
    let mut data = data.clone();
    data.push(point.clone(), y);
    let seed = node_seed(state.seed.wrapping_add(state.iteration as u64 + 1), id);
    state.graph.fit_node(id, &data, seed)?;
    state.data.insert(id, data);
    state.iteration += 1;
    let nrmsep = test.map(|t| t.nrmsep(&state.graph)).transpose()?;
    log::info!(
        "iteration {}: node {id} at {point:?} ({:?}, v1 {:.3e}, v2 {:.3e})",
        state.iteration,
        sel.label,
        sel.v1,
        sel.v2
    );
    state.history.push(HistoryEntry {
        iteration: state.iteration,
        node: id,
        global_input: sel.global_input,
        point,
        output: y,
        label: sel.label,
        v1: sel.v1,
        v2: sel.v2,
        upstream: sel.upstream,
        jittered,
        nrmsep,
    });
    Ok(())
}
