//! Feed-forward systems of models: wiring, validation, layer-by-layer
//! propagation of linked predictions and evaluation of the true system.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::rows_to_matrix;
use crate::emulator::{FitConfig, TrainedEmulator, TrendBasis};
use crate::error::{Error, Result};
use crate::linked::{linked_predict, ratio_diagnostic, ColumnInput, LinkedPrediction};
use crate::moments::NormalScalar;
use crate::systems::Builtin;

pub type NodeId = usize;

/// Where a node input slot takes its value from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Index into the global input vector.
    Global(usize),
    /// Output of another node.
    Node(NodeId),
}

/// How to run the model behind a node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Simulator {
    Builtin(Builtin),
    /// A program run once per evaluation. It receives `{"inputs": [...]}`
    /// on standard input and must print `{"output": <number>}`.
    External { command: Vec<String> },
}

#[derive(Deserialize)]
struct SimulatorReply {
    output: f64,
}

impl Simulator {
    pub fn run(&self, node: NodeId, x: &[f64]) -> Result<f64> {
        match self {
            Simulator::Builtin(b) => b.eval(x).map_err(|e| Error::Simulator {
                node,
                message: e.to_string(),
            }),
            Simulator::External { command } => run_external(node, command, x),
        }
    }
}

fn run_external(node: NodeId, command: &[String], x: &[f64]) -> Result<f64> {
    let fail = |message: String| Error::Simulator { node, message };
    let (program, args) = command.split_first().ok_or_else(|| fail("empty command".into()))?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| fail(format!("cannot start '{program}': {e}")))?;
    let request = serde_json::json!({ "inputs": x }).to_string();
    child
        .stdin
        .take()
        .expect("piped stdin")
        .write_all(request.as_bytes())
        .map_err(|e| fail(format!("cannot write request: {e}")))?;
    let out = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
    let raw = String::from_utf8_lossy(&out.stdout);
    if !out.status.success() {
        return Err(fail(format!(
            "exited with {}; stdout: {raw:?}; stderr: {:?}",
            out.status,
            String::from_utf8_lossy(&out.stderr)
        )));
    }
    let reply: SimulatorReply =
        serde_json::from_str(raw.trim()).map_err(|e| fail(format!("bad reply {raw:?}: {e}")))?;
    if !reply.output.is_finite() {
        return Err(fail(format!("non-finite output in {raw:?}")));
    }
    Ok(reply.output)
}

/// One model in the system.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub inputs: Vec<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulator: Option<Simulator>,
    /// Fit settings. For nodes fed by other nodes the trend is always
    /// replaced by one linear in the upstream slots.
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emulator: Option<TrainedEmulator>,
    /// Emulator stored in a separate file, relative to the graph file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emulator_file: Option<PathBuf>,
}

impl Node {
    pub fn new(id: NodeId, name: &str, inputs: Vec<Source>) -> Self {
        Node {
            id,
            name: name.to_string(),
            inputs,
            simulator: None,
            fit: FitConfig::default(),
            emulator: None,
            emulator_file: None,
        }
    }

    pub fn with_simulator(mut self, sim: Simulator) -> Self {
        self.simulator = Some(sim);
        self
    }

    pub fn with_fit(mut self, fit: FitConfig) -> Self {
        self.fit = fit;
        self
    }

    /// Slots wired to other nodes.
    pub fn upstream_slots(&self) -> Vec<usize> {
        (0..self.inputs.len())
            .filter(|s| matches!(self.inputs[*s], Source::Node(_)))
            .collect()
    }

    /// Fit settings with the trend forced to the linked form for nodes that
    /// have upstream inputs.
    pub fn effective_fit(&self) -> FitConfig {
        let slots = self.upstream_slots();
        let mut fit = self.fit.clone();
        if !slots.is_empty() {
            fit.trend = TrendBasis::LinkedTrend { w_columns: slots };
        }
        fit
    }
}

#[derive(Clone, Serialize, Deserialize)]
struct GraphFile {
    global_bounds: Vec<(f64, f64)>,
    nodes: Vec<Node>,
}

/// A validated feed-forward system.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "GraphFile", into = "GraphFile")]
pub struct SystemGraph {
    global_bounds: Vec<(f64, f64)>,
    nodes: Vec<Node>,
    index: BTreeMap<NodeId, usize>,
    layers: Vec<Vec<NodeId>>,
}

/// Output training data of one node.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) {
        self.x.push(x);
        self.y.push(y);
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.x, self.x.first().map_or(0, Vec::len))
    }
}

/// Result of propagating one global input.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Propagation {
    /// Normal summary of every node output, by node id.
    pub beliefs: BTreeMap<NodeId, NormalScalar>,
    /// Linked predictions of the nodes with upstream inputs.
    pub linked: BTreeMap<NodeId, LinkedPrediction>,
    /// Nodes whose outputs feed no other node.
    pub terminals: Vec<NodeId>,
}

impl Propagation {
    /// Prediction for a terminal node; nodes without upstream inputs report
    /// their plain predictive variance as `v2`.
    pub fn output(&self, id: NodeId) -> Option<LinkedPrediction> {
        self.linked.get(&id).copied().or_else(|| {
            self.beliefs.get(&id).map(|b| LinkedPrediction {
                mu: b.mu,
                var: b.var,
                raw_var: b.var,
                v1: 0.0,
                v2: b.var,
            })
        })
    }
}

/// Inputs and outputs of every node from one run of the true system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemRun {
    pub inputs: BTreeMap<NodeId, Vec<f64>>,
    pub outputs: BTreeMap<NodeId, f64>,
}

impl TryFrom<GraphFile> for SystemGraph {
    type Error = Error;

    fn try_from(f: GraphFile) -> Result<Self> {
        SystemGraph::new(f.global_bounds, f.nodes)
    }
}

impl From<SystemGraph> for GraphFile {
    fn from(g: SystemGraph) -> Self {
        GraphFile {
            global_bounds: g.global_bounds,
            nodes: g.nodes,
        }
    }
}

impl SystemGraph {
    pub fn new(global_bounds: Vec<(f64, f64)>, nodes: Vec<Node>) -> Result<Self> {
        for (lo, hi) in &global_bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Graph(format!("invalid global bounds [{lo}, {hi}]")));
            }
        }
        let mut index = BTreeMap::new();
        for (pos, n) in nodes.iter().enumerate() {
            if index.insert(n.id, pos).is_some() {
                return Err(Error::Graph(format!("duplicate node id {}", n.id)));
            }
            if n.inputs.is_empty() {
                return Err(Error::Graph(format!("node {} has no inputs", n.id)));
            }
        }
        for n in &nodes {
            for (slot, s) in n.inputs.iter().enumerate() {
                match *s {
                    Source::Global(g) if g >= global_bounds.len() => {
                        return Err(Error::Graph(format!(
                            "node {} slot {slot} reads global input {g}, but there are only {}",
                            n.id,
                            global_bounds.len()
                        )))
                    }
                    Source::Node(u) if !index.contains_key(&u) => {
                        return Err(Error::Graph(format!("node {} slot {slot} reads unknown node {u}", n.id)))
                    }
                    _ => {}
                }
            }
        }
        let layers = layering(&nodes, &index)?;
        let g = SystemGraph {
            global_bounds,
            nodes,
            index,
            layers,
        };
        g.check_emulators()?;
        Ok(g)
    }

    /// Read a graph file; emulator files are resolved relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut file: GraphFile =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for n in &mut file.nodes {
            if n.emulator.is_none() {
                if let Some(f) = &n.emulator_file {
                    n.emulator = Some(TrainedEmulator::load(&base.join(f))?);
                }
            }
        }
        Self::new(file.global_bounds, file.nodes)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn global_bounds(&self) -> &[(f64, f64)] {
        &self.global_bounds
    }

    pub fn global_dim(&self) -> usize {
        self.global_bounds.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter()
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.index
            .get(&id)
            .map(|p| &self.nodes[*p])
            .ok_or_else(|| Error::Graph(format!("unknown node {id}")))
    }

    fn node_mut(&mut self, id: NodeId) -> Result<&mut Node> {
        let pos = *self.index.get(&id).ok_or_else(|| Error::Graph(format!("unknown node {id}")))?;
        Ok(&mut self.nodes[pos])
    }

    /// Node ids by layer; layer 1 reads only global inputs and every other
    /// node sits one layer above its deepest upstream node.
    pub fn layers(&self) -> &[Vec<NodeId>] {
        &self.layers
    }

    /// Node ids in evaluation order.
    pub fn order(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.layers.iter().flatten().copied()
    }

    pub fn layer_of(&self, id: NodeId) -> Option<usize> {
        self.layers.iter().position(|l| l.contains(&id)).map(|l| l + 1)
    }

    /// Nodes whose output is not read by any other node.
    pub fn terminals(&self) -> Vec<NodeId> {
        let mut fed = vec![false; self.nodes.len()];
        for n in &self.nodes {
            for s in &n.inputs {
                if let Source::Node(u) = s {
                    fed[self.index[u]] = true;
                }
            }
        }
        self.index.iter().filter(|(_, p)| !fed[**p]).map(|(id, _)| *id).collect()
    }

    /// Check the structure together with any attached emulators and return
    /// the layer plan.
    pub fn validate(&self) -> Result<Vec<Vec<NodeId>>> {
        self.check_emulators()?;
        Ok(self.layers.clone())
    }

    fn check_emulators(&self) -> Result<()> {
        for n in &self.nodes {
            if let Some(g) = &n.emulator {
                check_node_emulator(n, g)?;
            }
        }
        Ok(())
    }

    pub fn is_fitted(&self) -> bool {
        self.nodes.iter().all(|n| n.emulator.is_some())
    }

    pub fn emulator(&self, id: NodeId) -> Result<&TrainedEmulator> {
        self.node(id)?
            .emulator
            .as_ref()
            .ok_or_else(|| Error::Graph(format!("node {id} has no emulator")))
    }

    pub fn set_emulator(&mut self, id: NodeId, g: TrainedEmulator) -> Result<()> {
        let n = self.node_mut(id)?;
        check_node_emulator(n, &g)?;
        n.emulator = Some(g);
        Ok(())
    }

    /// Fit the emulator of one node from its training data.
    pub fn fit_node(&mut self, id: NodeId, data: &TrainingSet, seed: u64) -> Result<()> {
        let config = self.node(id)?.effective_fit();
        let g = TrainedEmulator::fit(&data.matrix(), &data.y, &config, seed).map_err(|e| e.at_node(id))?;
        self.set_emulator(id, g)
    }

    /// Fit every node; `data` is keyed by node id.
    pub fn fit_all(&mut self, data: &BTreeMap<NodeId, TrainingSet>, seed: u64) -> Result<()> {
        let ids: Vec<NodeId> = self.index.keys().copied().collect();
        let fitted: Vec<Result<(NodeId, TrainedEmulator)>> = ids
            .par_iter()
            .map(|&id| {
                let d = data
                    .get(&id)
                    .ok_or_else(|| Error::Graph(format!("no training data for node {id}")))?;
                let config = self.node(id)?.effective_fit();
                let g = TrainedEmulator::fit(&d.matrix(), &d.y, &config, node_seed(seed, id))
                    .map_err(|e| e.at_node(id))?;
                Ok((id, g))
            })
            .collect();
        for r in fitted {
            let (id, g) = r?;
            self.set_emulator(id, g)?;
        }
        Ok(())
    }

    fn slot_inputs(&self, n: &Node, x: &[f64], outputs: &BTreeMap<NodeId, f64>) -> Vec<f64> {
        n.inputs
            .iter()
            .map(|s| match *s {
                Source::Global(g) => x[g],
                Source::Node(u) => outputs[&u],
            })
            .collect()
    }

    fn check_global(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.global_dim() {
            return Err(Error::Dimension {
                expected: self.global_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite global input".into()));
        }
        Ok(())
    }

    /// Run every simulator in order at global input `x`.
    pub fn run_true_system(&self, x: &[f64]) -> Result<SystemRun> {
        self.check_global(x)?;
        let mut run = SystemRun {
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        };
        for id in self.order() {
            let n = self.node(id)?;
            let sim = n.simulator.as_ref().ok_or_else(|| Error::Simulator {
                node: id,
                message: "no simulator attached".into(),
            })?;
            let inp = self.slot_inputs(n, x, &run.outputs);
            let y = sim.run(id, &inp)?;
            run.inputs.insert(id, inp);
            run.outputs.insert(id, y);
        }
        Ok(run)
    }

    /// Training data of every node from full runs of the system at the given
    /// global inputs (the sequential design).
    pub fn collect_runs(&self, xs: &[Vec<f64>]) -> Result<BTreeMap<NodeId, TrainingSet>> {
        let mut data: BTreeMap<NodeId, TrainingSet> = self.index.keys().map(|id| (*id, TrainingSet::default())).collect();
        for x in xs {
            let run = self.run_true_system(x)?;
            for (id, inp) in run.inputs {
                data.get_mut(&id).expect("known node").push(inp, run.outputs[&id]);
            }
        }
        Ok(data)
    }

    /// Terminal outputs of the true system.
    pub fn true_outputs(&self, x: &[f64]) -> Result<BTreeMap<NodeId, f64>> {
        let run = self.run_true_system(x)?;
        Ok(self.terminals().into_iter().map(|t| (t, run.outputs[&t])).collect())
    }

    /// Layer-by-layer linked prediction at global input `x`. Upstream
    /// outputs enter each node as independent normals.
    pub fn propagate(&self, x: &[f64]) -> Result<Propagation> {
        self.check_global(x)?;
        let mut beliefs = BTreeMap::new();
        let mut linked = BTreeMap::new();
        for id in self.order() {
            let n = self.node(id)?;
            let g = self.emulator(id)?;
            let inputs: Vec<ColumnInput> = n
                .inputs
                .iter()
                .map(|s| match *s {
                    Source::Global(k) => ColumnInput::Fixed(x[k]),
                    Source::Node(u) => ColumnInput::Random(beliefs[&u]),
                })
                .collect();
            if n.upstream_slots().is_empty() {
                let values: Vec<f64> = inputs.iter().map(ColumnInput::mean).collect();
                let p = g.predict(&values).map_err(|e| e.at_node(id))?;
                beliefs.insert(id, NormalScalar { mu: p.mean, var: p.var });
            } else {
                let l = linked_predict(g, &inputs).map_err(|e| e.at_node(id))?;
                if log::log_enabled!(log::Level::Debug) {
                    if let Ok(r) = ratio_diagnostic(g, &inputs) {
                        log::debug!("node {id}: dependence ratios {r:?}");
                    }
                }
                beliefs.insert(id, l.normal());
                linked.insert(id, l);
            }
        }
        Ok(Propagation {
            beliefs,
            linked,
            terminals: self.terminals(),
        })
    }

    pub fn propagate_many(&self, xs: &[Vec<f64>]) -> Result<Vec<Propagation>> {
        xs.par_iter().map(|x| self.propagate(x)).collect()
    }

    /// Compose the predictive means of the node emulators at `x`.
    pub fn mean_outputs(&self, x: &[f64]) -> Result<BTreeMap<NodeId, f64>> {
        self.check_global(x)?;
        let mut outputs = BTreeMap::new();
        for id in self.order() {
            let n = self.node(id)?;
            let inp = self.slot_inputs(n, x, &outputs);
            outputs.insert(id, self.emulator(id)?.predict_mean(&inp).map_err(|e| e.at_node(id))?);
        }
        Ok(outputs)
    }
}

/// Per-node seed derived from a run seed.
pub fn node_seed(seed: u64, id: NodeId) -> u64 {
    seed.wrapping_add((id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn check_node_emulator(n: &Node, g: &TrainedEmulator) -> Result<()> {
    if g.input_dim() != n.inputs.len() {
        return Err(Error::Graph(format!(
            "node {}: emulator has {} inputs but {} slots are wired",
            n.id,
            g.input_dim(),
            n.inputs.len()
        )));
    }
    let slots = n.upstream_slots();
    if !slots.is_empty() {
        let ok = matches!(g.trend(), TrendBasis::LinkedTrend { w_columns } if *w_columns == slots);
        if !ok {
            return Err(Error::Graph(format!(
                "node {}: emulator trend {:?} must be linear in the upstream slots {slots:?}",
                n.id,
                g.trend()
            )));
        }
    }
    Ok(())
}

fn layering(nodes: &[Node], index: &BTreeMap<NodeId, usize>) -> Result<Vec<Vec<NodeId>>> {
    let mut dag = DiGraph::<NodeId, ()>::new();
    let handles: Vec<_> = nodes.iter().map(|n| dag.add_node(n.id)).collect();
    for (pos, n) in nodes.iter().enumerate() {
        for s in &n.inputs {
            if let Source::Node(u) = s {
                dag.add_edge(handles[index[u]], handles[pos], ());
            }
        }
    }
    for scc in tarjan_scc(&dag) {
        let self_loop = scc.len() == 1 && dag.contains_edge(scc[0], scc[0]);
        if scc.len() > 1 || self_loop {
            let mut ids: Vec<NodeId> = scc.iter().map(|h| dag[*h]).collect();
            ids.sort_unstable();
            return Err(Error::Graph(format!("cycle through nodes {ids:?}")));
        }
    }
    let mut depth: BTreeMap<NodeId, usize> = BTreeMap::new();
    fn depth_of(
        id: NodeId,
        nodes: &[Node],
        index: &BTreeMap<NodeId, usize>,
        memo: &mut BTreeMap<NodeId, usize>,
    ) -> usize {
        if let Some(d) = memo.get(&id) {
            return *d;
        }
        let d = nodes[index[&id]]
            .inputs
            .iter()
            .filter_map(|s| match s {
                Source::Node(u) => Some(depth_of(*u, nodes, index, memo) + 1),
                Source::Global(_) => None,
            })
            .max()
            .unwrap_or(1);
        memo.insert(id, d);
        d
    }
    for id in index.keys() {
        depth_of(*id, nodes, index, &mut depth);
    }
    let n_layers = depth.values().copied().max().unwrap_or(0);
    let mut layers = vec![Vec::new(); n_layers];
    for (id, d) in depth {
        layers[d - 1].push(id);
    }
    Ok(layers)
}
