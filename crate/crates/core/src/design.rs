//! Latin hypercube designs, evaluation grids and the NRMSEP metric.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    MaximinLHD,
    SequentialPropagated,
    Independent,
    Adaptive,
    Grid,
}

/// A set of points inside per-dimension bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Design {
    points: Vec<Vec<f64>>,
    bounds: Vec<(f64, f64)>,
    provenance: Provenance,
}

impl Design {
    pub fn new(points: Vec<Vec<f64>>, bounds: Vec<(f64, f64)>, provenance: Provenance) -> Result<Self> {
        check_bounds(&bounds)?;
        for p in &points {
            if p.len() != bounds.len() {
                return Err(Error::Dimension {
                    expected: bounds.len(),
                    got: p.len(),
                });
            }
        }
        Ok(Design {
            points,
            bounds,
            provenance,
        })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.points, self.dim())
    }

    /// Smallest Euclidean distance between two points, measured after mapping
    /// the bounds to the unit cube.
    pub fn min_distance(&self) -> f64 {
        let unit: Vec<Vec<f64>> = self.points.iter().map(|p| to_unit(p, &self.bounds)).collect();
        min_sq_distance(&unit).0.sqrt()
    }

    pub fn write_csv<W: Write>(&self, out: W, names: Option<&[String]>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = match names {
            Some(n) => n.to_vec(),
            None => (1..=self.dim()).map(|k| format!("x{k}")).collect(),
        };
        w.write_record(&header)?;
        for p in &self.points {
            w.write_record(p.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, names: Option<&[String]>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?, names)
    }
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j])
}

fn check_bounds(bounds: &[(f64, f64)]) -> Result<()> {
    if bounds.is_empty() {
        return Err(Error::Domain("design needs at least one dimension".into()));
    }
    for (lo, hi) in bounds {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Domain(format!("invalid bounds [{lo}, {hi}]")));
        }
    }
    Ok(())
}

fn to_unit(p: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    p.iter().zip(bounds).map(|(v, (lo, hi))| (v - lo) / (hi - lo)).collect()
}

/// Squared minimum distance and the number of pairs attaining it.
fn min_sq_distance(points: &[Vec<f64>]) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut count = 0;
    for i in 0..points.len() {
        for j in 0..i {
            let d: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best - 1e-12 {
                best = d;
                count = 1;
            } else if (d - best).abs() <= 1e-12 {
                count += 1;
            }
        }
    }
    (best, count)
}

/// `(min distance, -pairs at the minimum)`, larger is better.
fn maximin_score(levels: &[Vec<usize>]) -> (f64, i64) {
    let n = levels.len();
    let pts: Vec<Vec<f64>> = levels
        .iter()
        .map(|r| r.iter().map(|l| (*l as f64 + 0.5) / n as f64).collect())
        .collect();
    let (d, c) = min_sq_distance(&pts);
    (d, -(c as i64))
}

fn better_or_equal(a: (f64, i64), b: (f64, i64)) -> bool {
    a.0 > b.0 + 1e-12 || ((a.0 - b.0).abs() <= 1e-12 && a.1 >= b.1)
}

fn random_levels(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut levels = vec![vec![0usize; p]; n];
    for k in 0..p {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for i in 0..n {
            levels[i][k] = perm[i];
        }
    }
    levels
}

/// Centred maximin Latin hypercube of `n` points.
///
/// `iterations` is the total number of candidate designs examined: each
/// restart begins from a random centred LHD and then proposes swaps of two
/// entries within one column, keeping a proposal unless it lowers the
/// maximin score. `iterations == 1` returns the unoptimised random LHD.
pub fn maximin_lhd(n: usize, bounds: &[(f64, f64)], seed: u64, iterations: usize) -> Result<Design> {
    check_bounds(bounds)?;
    if n == 0 {
        return Err(Error::Domain("design size must be at least 1".into()));
    }
    let p = bounds.len();
    let iterations = iterations.max(1);
    let restarts = iterations.min(5);
    let mut best: Option<(Vec<Vec<usize>>, (f64, i64))> = None;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let mut levels = random_levels(n, p, &mut rng);
        let mut score = maximin_score(&levels);
        let budget = iterations / restarts + usize::from(r < iterations % restarts);
        if n >= 2 {
            for _ in 1..budget {
                let k = rng.random_range(0..p);
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                let (a, b) = (levels[i][k], levels[j][k]);
                levels[i][k] = b;
                levels[j][k] = a;
                let s = maximin_score(&levels);
                if better_or_equal(s, score) {
                    score = s;
                } else {
                    levels[i][k] = a;
                    levels[j][k] = b;
                }
            }
        }
        if best.as_ref().is_none_or(|(_, s)| !better_or_equal(*s, score)) {
            best = Some((levels, score));
        }
    }
    let (levels, _) = best.expect("at least one restart");
    let points = levels
        .iter()
        .map(|row| {
            row.iter()
                .zip(bounds)
                .map(|(l, (lo, hi))| lo + (*l as f64 + 0.5) / n as f64 * (hi - lo))
                .collect()
        })
        .collect();
    Design::new(points, bounds.to_vec(), Provenance::MaximinLHD)
}

/// Randomly jittered Latin hypercube sample from an existing generator.
pub fn random_lhs<R: Rng>(n: usize, bounds: &[(f64, f64)], rng: &mut R) -> Vec<Vec<f64>> {
    let p = bounds.len();
    let mut pts = vec![vec![0.0; p]; n];
    for (k, (lo, hi)) in bounds.iter().enumerate() {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for i in 0..n {
            let u: f64 = rng.random();
            pts[i][k] = lo + (perm[i] as f64 + u) / n as f64 * (hi - lo);
        }
    }
    pts
}

/// Full tensor grid with `per_dim` equally spaced points (end points
/// included) per dimension, in lexicographic order with the first dimension
/// varying slowest.
pub fn grid(bounds: &[(f64, f64)], per_dim: usize) -> Vec<Vec<f64>> {
    let p = bounds.len();
    let total = per_dim.pow(p as u32);
    (0..total)
        .map(|mut idx| {
            let mut pt = vec![0.0; p];
            for k in (0..p).rev() {
                let i = idx % per_dim;
                idx /= per_dim;
                let (lo, hi) = bounds[k];
                pt[k] = if per_dim == 1 {
                    0.5 * (lo + hi)
                } else {
                    lo + i as f64 / (per_dim - 1) as f64 * (hi - lo)
                };
            }
            pt
        })
        .collect()
}

/// Normalised root mean squared error of prediction: the RMSE divided by the
/// range of the true values.
pub fn nrmsep(truth: &[f64], predictions: &[f64]) -> Result<f64> {
    nrmsep_pooled(truth, &[predictions.to_vec()])
}

/// NRMSEP pooled over several sets of predictions of the same truth.
pub fn nrmsep_pooled(truth: &[f64], predictions: &[Vec<f64>]) -> Result<f64> {
    if truth.len() < 2 {
        return Err(Error::Domain("NRMSEP needs at least two test points".into()));
    }
    if predictions.is_empty() {
        return Err(Error::Domain("no predictions".into()));
    }
    let (min, max) = truth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if !(max > min) {
        return Err(Error::ZeroRange);
    }
    let mut sse = 0.0;
    for p in predictions {
        if p.len() != truth.len() {
            return Err(Error::Dimension {
                expected: truth.len(),
                got: p.len(),
            });
        }
        sse += truth.iter().zip(p).map(|(t, y)| (t - y) * (t - y)).sum::<f64>();
    }
    let n = (truth.len() * predictions.len()) as f64;
    Ok((sse / n).sqrt() / (max - min))
}
