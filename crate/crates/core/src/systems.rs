//! Analytic test functions and the small systems built from them.

use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Node, Simulator, Source, SystemGraph};

/// Closed-form simulators. The `two_layer_*` functions form the two-layer
/// system on `[0, 2]²`, `shared_*` the shared-input system on `[0, 1]` and
/// `chain_*` the three-model chain on `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    /// `30 + 5 x sin(5x)`
    TwoLayerF1,
    /// `4 + exp(-5x)`
    TwoLayerF2,
    /// `(w1 w2 - 100) / 6`
    TwoLayerF3,
    /// `0.5 + 0.5 x sin(10x)`
    SharedF1,
    /// `exp(-10x)`
    SharedF2,
    /// `sin(1 / ((0.7 w1 + 0.3)(0.7 w2 + 0.3)))`
    SharedF3,
    /// `sin(πx)`
    ChainF1,
    /// `cos(5w)`
    ChainF2,
    /// `sin(w²)`
    ChainF3,
    Identity,
    Sum,
    Product,
    Sin,
    Cos,
}

impl Builtin {
    pub const ALL: [Builtin; 14] = [
        Builtin::TwoLayerF1,
        Builtin::TwoLayerF2,
        Builtin::TwoLayerF3,
        Builtin::SharedF1,
        Builtin::SharedF2,
        Builtin::SharedF3,
        Builtin::ChainF1,
        Builtin::ChainF2,
        Builtin::ChainF3,
        Builtin::Identity,
        Builtin::Sum,
        Builtin::Product,
        Builtin::Sin,
        Builtin::Cos,
    ];

    /// Number of inputs, or `None` for variadic functions.
    pub fn arity(self) -> Option<usize> {
        match self {
            Builtin::TwoLayerF3 | Builtin::SharedF3 => Some(2),
            Builtin::Sum | Builtin::Product => None,
            _ => Some(1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Builtin::TwoLayerF1 => "two_layer_f1",
            Builtin::TwoLayerF2 => "two_layer_f2",
            Builtin::TwoLayerF3 => "two_layer_f3",
            Builtin::SharedF1 => "shared_f1",
            Builtin::SharedF2 => "shared_f2",
            Builtin::SharedF3 => "shared_f3",
            Builtin::ChainF1 => "chain_f1",
            Builtin::ChainF2 => "chain_f2",
            Builtin::ChainF3 => "chain_f3",
            Builtin::Identity => "identity",
            Builtin::Sum => "sum",
            Builtin::Product => "product",
            Builtin::Sin => "sin",
            Builtin::Cos => "cos",
        }
    }

    pub fn eval(self, x: &[f64]) -> Result<f64> {
        match self.arity() {
            Some(n) if n != x.len() => {
                return Err(Error::Dimension {
                    expected: n,
                    got: x.len(),
                })
            }
            None if x.is_empty() => return Err(Error::Domain(format!("{} needs at least one input", self.name()))),
            _ => {}
        }
        Ok(match self {
            Builtin::TwoLayerF1 => 30.0 + 5.0 * x[0] * (5.0 * x[0]).sin(),
            Builtin::TwoLayerF2 => 4.0 + (-5.0 * x[0]).exp(),
            Builtin::TwoLayerF3 => (x[0] * x[1] - 100.0) / 6.0,
            Builtin::SharedF1 => 0.5 + 0.5 * x[0] * (10.0 * x[0]).sin(),
            Builtin::SharedF2 => (-10.0 * x[0]).exp(),
            Builtin::SharedF3 => (1.0 / ((0.7 * x[0] + 0.3) * (0.7 * x[1] + 0.3))).sin(),
            Builtin::ChainF1 => (PI * x[0]).sin(),
            Builtin::ChainF2 => (5.0 * x[0]).cos(),
            Builtin::ChainF3 => (x[0] * x[0]).sin(),
            Builtin::Identity => x[0],
            Builtin::Sum => x.iter().sum(),
            Builtin::Product => x.iter().product(),
            Builtin::Sin => x[0].sin(),
            Builtin::Cos => x[0].cos(),
        })
    }
}

impl FromStr for Builtin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Builtin::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown builtin simulator '{s}'")))
    }
}

fn node(id: usize, name: &str, inputs: Vec<Source>, f: Builtin) -> Node {
    Node::new(id, name, inputs).with_simulator(Simulator::Builtin(f))
}

/// Two independent one-input models feeding a two-input model, global
/// inputs on `[0, 2]²`.
pub fn two_layer_system() -> SystemGraph {
    SystemGraph::new(
        vec![(0.0, 2.0), (0.0, 2.0)],
        vec![
            node(1, "f1", vec![Source::Global(0)], Builtin::TwoLayerF1),
            node(2, "f2", vec![Source::Global(1)], Builtin::TwoLayerF2),
            node(3, "f3", vec![Source::Node(1), Source::Node(2)], Builtin::TwoLayerF3),
        ],
    )
    .expect("static system is valid")
}

/// Two models sharing one global input on `[0, 1]`, feeding a third.
pub fn shared_input_system() -> SystemGraph {
    SystemGraph::new(
        vec![(0.0, 1.0)],
        vec![
            node(1, "f1", vec![Source::Global(0)], Builtin::SharedF1),
            node(2, "f2", vec![Source::Global(0)], Builtin::SharedF2),
            node(3, "f3", vec![Source::Node(1), Source::Node(2)], Builtin::SharedF3),
        ],
    )
    .expect("static system is valid")
}

/// The chain `x → f1 → f2 → f3` on `[-1, 1]`.
pub fn chain_system() -> SystemGraph {
    SystemGraph::new(
        vec![(-1.0, 1.0)],
        vec![
            node(1, "f1", vec![Source::Global(0)], Builtin::ChainF1),
            node(2, "f2", vec![Source::Node(1)], Builtin::ChainF2),
            node(3, "f3", vec![Source::Node(2)], Builtin::ChainF3),
        ],
    )
    .expect("static system is valid")
}

/// A 1 → 2 → 2 → 1 network of simple functions on `[0, 1]`.
pub fn network_system() -> SystemGraph {
    SystemGraph::new(
        vec![(0.0, 1.0)],
        vec![
            node(1, "a", vec![Source::Global(0)], Builtin::Sin),
            node(2, "b1", vec![Source::Node(1)], Builtin::Cos),
            node(3, "b2", vec![Source::Node(1)], Builtin::Identity),
            node(4, "c1", vec![Source::Node(2), Source::Node(3)], Builtin::Sum),
            node(5, "c2", vec![Source::Node(2), Source::Node(3)], Builtin::Product),
            node(6, "d", vec![Source::Node(4), Source::Node(5)], Builtin::Sum),
        ],
    )
    .expect("static system is valid")
}

/// Named built-in systems, for the command line.
pub fn by_name(name: &str) -> Result<SystemGraph> {
    match name {
        "two_layer" => Ok(two_layer_system()),
        "shared_input" => Ok(shared_input_system()),
        "chain" => Ok(chain_system()),
        "network" => Ok(network_system()),
        _ => Err(Error::Config(format!("unknown system '{name}' (expected two_layer, shared_input, chain or network)"))),
    }
}
