//! Monte Carlo sampling of linked emulators, used as an oracle for the
//! closed-form moments.
//!
//! Samples are generated in fixed-size chunks; chunk `c` draws from a
//! ChaCha8 stream `c` of the run seed, so results do not depend on the
//! number of worker threads.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emulator::TrainedEmulator;
use crate::error::{Error, Result};
use crate::graph::{NodeId, Source, SystemGraph};
use crate::linked::{split_columns, ColumnInput};
use crate::moments::NormalVector;

const CHUNK: usize = 4096;

/// Draws of one node's output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub seed: u64,
    pub node: NodeId,
    pub samples: Vec<f64>,
    /// Draws of every node, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediates: Option<BTreeMap<NodeId, Vec<f64>>>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn moments(&self) -> Result<McMoments> {
        mc_moments(&self.samples)
    }

    /// Long-format CSV: `sample,node,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample", "node", "value"])?;
        match &self.intermediates {
            Some(all) => {
                for (id, vals) in all {
                    for (i, v) in vals.iter().enumerate() {
                        w.write_record([i.to_string(), id.to_string(), v.to_string()])?;
                    }
                }
            }
            None => {
                for (i, v) in self.samples.iter().enumerate() {
                    w.write_record([i.to_string(), self.node.to_string(), v.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Sample statistics with standard errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McMoments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub var: f64,
    pub se_mean: f64,
    pub se_var: f64,
    pub skewness: f64,
    pub se_skewness: f64,
}

/// Mean, unbiased variance and sample skewness, with standard errors. The
/// standard error of the variance uses the fourth central moment.
pub fn mc_moments(x: &[f64]) -> Result<McMoments> {
    let n = x.len();
    if n < 2 {
        return Err(Error::Domain("need at least two samples".into()));
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let var = m2 * nf / (nf - 1.0);
    let var_of_var = ((m4 - (nf - 3.0) / (nf - 1.0) * var * var) / nf).max(0.0);
    let skewness = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    let se_skewness = if n > 2 {
        (6.0 * nf * (nf - 1.0) / ((nf - 2.0) * (nf + 1.0) * (nf + 3.0))).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(McMoments {
        n,
        mean,
        var,
        se_mean: (var / nf).sqrt(),
        se_var: var_of_var.sqrt(),
        skewness,
        se_skewness,
    })
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

/// Run `f` once per sample index with a reproducible generator and
/// collect the results in order.
fn chunked<T: Send, F>(n: usize, seed: u64, f: F) -> Vec<T>
where
    F: Fn(&mut ChaCha8Rng) -> T + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(|_| f(&mut rng)).collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

fn normal_draw(rng: &mut ChaCha8Rng, mu: f64, var: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mu + var.max(0.0).sqrt() * z
}

/// Draw the output of `node` (the only terminal node when `None`) by
/// sampling each emulator's predictive normal in turn, feeding draws
/// forward. With `keep_all`, the draws of every node are returned too.
pub fn sample_linked(
    graph: &SystemGraph,
    x: &[f64],
    n: usize,
    seed: u64,
    node: Option<NodeId>,
    keep_all: bool,
) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::Domain("sample size must be at least 1".into()));
    }
    if x.len() != graph.global_dim() {
        return Err(Error::Dimension {
            expected: graph.global_dim(),
            got: x.len(),
        });
    }
    let target = match node {
        Some(id) => {
            graph.node(id)?;
            id
        }
        None => {
            let t = graph.terminals();
            if t.len() != 1 {
                return Err(Error::Config(format!("graph has terminal nodes {t:?}; choose one")));
            }
            t[0]
        }
    };
    let order: Vec<NodeId> = graph.order().collect();
    let pos: BTreeMap<NodeId, usize> = order.iter().enumerate().map(|(i, id)| (*id, i)).collect();

    // Nodes fed only by global inputs have the same predictive law for
    // every sample.
    let mut fixed_law: Vec<Option<(f64, f64)>> = vec![None; order.len()];
    let mut emus: Vec<&TrainedEmulator> = Vec::with_capacity(order.len());
    let mut wiring: Vec<Vec<Source>> = Vec::with_capacity(order.len());
    for (i, id) in order.iter().enumerate() {
        let nd = graph.node(*id)?;
        let g = graph.emulator(*id)?;
        if nd.upstream_slots().is_empty() {
            let inp: Vec<f64> = nd
                .inputs
                .iter()
                .map(|s| match s {
                    Source::Global(k) => x[*k],
                    Source::Node(_) => unreachable!(),
                })
                .collect();
            let p = g.predict(&inp)?;
            fixed_law[i] = Some((p.mean, p.var));
        }
        emus.push(g);
        wiring.push(nd.inputs.clone());
    }
    let draw_all = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut vals = vec![0.0; order.len()];
        let mut buf = Vec::new();
        for i in 0..order.len() {
            vals[i] = match fixed_law[i] {
                Some((m, v)) => normal_draw(rng, m, v),
                None => {
                    buf.clear();
                    buf.extend(wiring[i].iter().map(|s| match s {
                        Source::Global(k) => x[*k],
                        Source::Node(u) => vals[pos[u]],
                    }));
                    let p = emus[i].predict_unchecked(&buf);
                    normal_draw(rng, p.mean, p.var)
                }
            };
        }
        vals
    };
    let t = pos[&target];
    if keep_all {
        let rows = chunked(n, seed, draw_all);
        let mut all: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
        for (i, id) in order.iter().enumerate() {
            all.insert(*id, rows.iter().map(|r| r[i]).collect());
        }
        Ok(SampleBatch {
            seed,
            node: target,
            samples: all[&target].clone(),
            intermediates: Some(all),
        })
    } else {
        Ok(SampleBatch {
            seed,
            node: target,
            samples: chunked(n, seed, |rng| draw_all(rng)[t]),
            intermediates: None,
        })
    }
}

/// A square root `L` with `L L' = Σ`, valid for singular `Σ`.
fn sqrt_psd(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = sigma.clone().cholesky() {
        return c.l();
    }
    let eig = SymmetricEigen::new(sigma.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    eig.eigenvectors * d
}

/// Draws of a single emulator's output with jointly normal random inputs
/// `w` (placed as in [`split_columns`]) and fixed inputs `z`.
pub fn sample_emulator(g: &TrainedEmulator, w: &NormalVector, z: &[f64], n: usize, seed: u64) -> Result<Vec<f64>> {
    let (w_cols, z_cols) = split_columns(g, w.dim())?;
    if z.len() != z_cols.len() {
        return Err(Error::Dimension {
            expected: z_cols.len(),
            got: z.len(),
        });
    }
    let l = sqrt_psd(w.sigma());
    let d = w.dim();
    let mut base = vec![0.0; g.input_dim()];
    for (c, v) in z_cols.iter().zip(z) {
        base[*c] = *v;
    }
    Ok(chunked(n, seed, |rng| {
        let e = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let wv = w.mu() + &l * e;
        let mut x = base.clone();
        for (k, c) in w_cols.iter().enumerate() {
            x[*c] = wv[k];
        }
        let p = g.predict_unchecked(&x);
        normal_draw(rng, p.mean, p.var)
    }))
}

/// Monte Carlo estimate of `Var_{W_S}[E_{W_{S^c}}[μ0(W)]]` with its standard
/// error, from `n_outer` draws of the subset columns each averaged over
/// `n_inner` draws of the others. The within-draw noise of the inner means
/// is subtracted.
pub fn nested_variance_contribution(
    g: &TrainedEmulator,
    inputs: &[ColumnInput],
    subset: &[usize],
    n_outer: usize,
    n_inner: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if inputs.len() != g.input_dim() {
        return Err(Error::Dimension {
            expected: g.input_dim(),
            got: inputs.len(),
        });
    }
    if n_outer < 2 || n_inner < 2 {
        return Err(Error::Domain("nested sampling needs at least two draws per level".into()));
    }
    let inner_cols: Vec<usize> = (0..inputs.len())
        .filter(|k| matches!(inputs[*k], ColumnInput::Random(_)) && !subset.contains(k))
        .collect();
    let draw = |rng: &mut ChaCha8Rng, k: usize| match inputs[k] {
        ColumnInput::Random(d) => normal_draw(rng, d.mu, d.var),
        ColumnInput::Fixed(v) => v,
    };
    let stats: Vec<(f64, f64)> = chunked(n_outer, seed, |rng| {
        let mut x: Vec<f64> = (0..inputs.len())
            .map(|k| if subset.contains(&k) { draw(rng, k) } else { inputs[k].mean() })
            .collect();
        let mut s = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n_inner {
            for &k in &inner_cols {
                x[k] = draw(rng, k);
            }
            let m = g.predict_unchecked(&x).mean;
            s += m;
            s2 += m * m;
        }
        let ni = n_inner as f64;
        let mean = s / ni;
        (mean, ((s2 - ni * mean * mean) / (ni - 1.0)).max(0.0))
    });
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let mm = mc_moments(&means)?;
    let noise = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64 / n_inner as f64;
    Ok((mm.var - noise, mm.se_var))
}
