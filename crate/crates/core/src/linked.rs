//! The linked emulator: mean and variance of a GP emulator whose inputs are
//! (partly) normal random variables produced by upstream emulators.
//!
//! For an emulator with trend `h(x)'b̂` and `A = R⁻¹(y - Hb̂)` the linked mean
//! is `G'b̂ + I'A` and the linked variance is split as `V1 + V2`, where
//! `V1 = Var[μ0(W)]` comes from the uncertainty of the inputs and
//! `V2 = E[σ0²(W)]` from the emulator itself. `G`, `K` and `P` are the mean,
//! cross-moment with the correlation vector, and covariance of the trend
//! basis; for the usual `h = (W, h(z))` they reduce to `[μ; h(z)]`,
//! `[B', I h(z)']` and `blkdiag(Ω, 0)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::emulator::{scale_value, scale_width, TrainedEmulator, TrendBasis};
use crate::error::{Error, Result};
use crate::kernel::KernelForm;
use crate::moments::{narrow_covariance, psi, xi, zeta, NormalScalar, NormalVector, SeMvnMoments};

/// What feeds one input column of an emulator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ColumnInput {
    /// Output of an upstream model, summarised as a normal.
    Random(NormalScalar),
    /// A known (exogenous) value.
    Fixed(f64),
}

impl ColumnInput {
    pub fn mean(&self) -> f64 {
        match self {
            ColumnInput::Random(d) => d.mu,
            ColumnInput::Fixed(v) => *v,
        }
    }
}

/// The vectors `I`, `J`, `B` for one emulator and one set of inputs.
#[derive(Clone, Debug)]
pub struct LinkedMomentSet {
    form: KernelForm,
    i: DVector<f64>,
    j: DMatrix<f64>,
    b: DMatrix<f64>,
    random_columns: Vec<usize>,
}

impl LinkedMomentSet {
    pub fn form(&self) -> KernelForm {
        self.form
    }

    /// `I_i = E[c(X, x_i)]`
    pub fn i(&self) -> &DVector<f64> {
        &self.i
    }

    /// `J_ij = E[c(X, x_i) c(X, x_j)]`
    pub fn j(&self) -> &DMatrix<f64> {
        &self.j
    }

    /// `B_lj = E[W_l c(X, x_j)]`, one row per random column (rescaled units).
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Kernel columns that carry random inputs, in the row order of `B`.
    pub fn random_columns(&self) -> &[usize] {
        &self.random_columns
    }
}

/// Linked mean and variance with the variance decomposition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkedPrediction {
    pub mu: f64,
    /// `max(raw_var, 0)`
    pub var: f64,
    pub raw_var: f64,
    /// Contribution of the input uncertainty.
    pub v1: f64,
    /// Contribution of the emulator's own uncertainty.
    pub v2: f64,
}

impl LinkedPrediction {
    fn new(mu: f64, v1: f64, v2: f64) -> Self {
        let raw_var = v1 + v2;
        if raw_var < -1e-10 * (v1.abs() + v2.abs()).max(1.0) {
            log::debug!("linked variance {raw_var:e} clamped to 0");
        }
        LinkedPrediction {
            mu,
            var: raw_var.max(0.0),
            raw_var,
            v1,
            v2,
        }
    }

    pub fn normal(&self) -> NormalScalar {
        NormalScalar {
            mu: self.mu,
            var: self.var,
        }
    }
}

/// Split a kernel's columns into the `d` random ones and the rest.
/// With a linked trend the random columns are its `w_columns`; otherwise the
/// first `d` columns.
pub fn split_columns(g: &TrainedEmulator, d: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let p = g.input_dim();
    let w_cols: Vec<usize> = match g.trend() {
        TrendBasis::LinkedTrend { w_columns } => {
            if w_columns.len() != d {
                return Err(Error::Dimension {
                    expected: w_columns.len(),
                    got: d,
                });
            }
            w_columns.clone()
        }
        _ => (0..d.min(p)).collect(),
    };
    if d > p {
        return Err(Error::Dimension { expected: p, got: d });
    }
    let z_cols = (0..p).filter(|c| !w_cols.contains(c)).collect();
    Ok((w_cols, z_cols))
}

/// Column inputs from a list of random inputs `w` and fixed inputs `z`,
/// placed according to [`split_columns`].
pub fn assign_columns(g: &TrainedEmulator, w: &[NormalScalar], z: &[f64]) -> Result<Vec<ColumnInput>> {
    let (w_cols, z_cols) = split_columns(g, w.len())?;
    if z.len() != z_cols.len() {
        return Err(Error::Dimension {
            expected: z_cols.len(),
            got: z.len(),
        });
    }
    let mut cols = vec![ColumnInput::Fixed(0.0); g.input_dim()];
    for (c, d) in w_cols.iter().zip(w) {
        cols[*c] = ColumnInput::Random(*d);
    }
    for (c, v) in z_cols.iter().zip(z) {
        cols[*c] = ColumnInput::Fixed(*v);
    }
    Ok(cols)
}

/// Input variances below this multiple of `γ²` are treated as exact.
const POINT_MASS_RATIO: f64 = 1e-14;

enum Col {
    Random {
        dist: NormalScalar,
        xi: Vec<f64>,
        psi: Vec<f64>,
        zeta: DMatrix<f64>,
        // `ζ - ξξ'`
        cov: DMatrix<f64>,
    },
    Fixed {
        z: f64,
        c: Vec<f64>,
    },
}

impl Col {
    fn e(&self, i: usize) -> f64 {
        match self {
            Col::Random { xi, .. } => xi[i],
            Col::Fixed { c, .. } => c[i],
        }
    }

    fn mean(&self) -> f64 {
        match self {
            Col::Random { dist, .. } => dist.mu,
            Col::Fixed { z, .. } => *z,
        }
    }
}

/// Per-column kernel expectations in rescaled units.
struct Prepared<'a> {
    g: &'a TrainedEmulator,
    cols: Vec<Col>,
}

fn check_inputs(g: &TrainedEmulator, inputs: &[ColumnInput]) -> Result<()> {
    if inputs.len() != g.input_dim() {
        return Err(Error::Dimension {
            expected: g.input_dim(),
            got: inputs.len(),
        });
    }
    for c in inputs {
        let ok = match c {
            ColumnInput::Random(d) => d.mu.is_finite() && d.var.is_finite() && d.var >= 0.0,
            ColumnInput::Fixed(v) => v.is_finite(),
        };
        if !ok {
            return Err(Error::Domain(format!("invalid linked input {c:?}")));
        }
    }
    Ok(())
}

impl<'a> Prepared<'a> {
    fn new(g: &'a TrainedEmulator, inputs: &[ColumnInput]) -> Result<Self> {
        check_inputs(g, inputs)?;
        let kernel = g.kernel();
        let kind = kernel.kind();
        let rows = &g.cache().rows;
        let m = rows.len();
        let cols = inputs
            .iter()
            .enumerate()
            .map(|(k, inp)| {
                let b = g.bounds()[k];
                let gamma = kernel.gammas()[k];
                match inp {
                    ColumnInput::Fixed(v) => {
                        let z = scale_value(*v, b);
                        Col::Fixed {
                            z,
                            c: rows.iter().map(|r| kind.eval(gamma, z - r[k])).collect(),
                        }
                    }
                    ColumnInput::Random(d) => {
                        let w = scale_width(b);
                        let mut dist = NormalScalar {
                            mu: scale_value(d.mu, b),
                            var: d.var / (w * w),
                        };
                        // Below this the spread terms are pure round-off,
                        // which an ill-conditioned R⁻¹ would amplify.
                        if dist.var < POINT_MASS_RATIO * gamma * gamma {
                            dist.var = 0.0;
                        }
                        let mut zm = DMatrix::zeros(m, m);
                        for i in 0..m {
                            for j in 0..=i {
                                let v = zeta(kind, gamma, dist, rows[i][k], rows[j][k]);
                                zm[(i, j)] = v;
                                zm[(j, i)] = v;
                            }
                        }
                        let xs: Vec<f64> = rows.iter().map(|r| xi(kind, gamma, dist, r[k])).collect();
                        let w: Vec<f64> = rows.iter().map(|r| r[k]).collect();
                        let cov = narrow_covariance(kind, gamma, dist, &w).unwrap_or_else(|| {
                            DMatrix::from_fn(m, m, |i, j| zm[(i, j)] - xs[i] * xs[j])
                        });
                        Col::Random {
                            dist,
                            psi: rows.iter().map(|r| psi(kind, gamma, dist, r[k])).collect(),
                            xi: xs,
                            zeta: zm,
                            cov,
                        }
                    }
                }
            })
            .collect();
        Ok(Prepared { g, cols })
    }

    fn m(&self) -> usize {
        self.g.len()
    }

    fn random_columns(&self) -> Vec<usize> {
        (0..self.cols.len())
            .filter(|k| matches!(self.cols[*k], Col::Random { .. }))
            .collect()
    }

    fn form(&self) -> KernelForm {
        self.g.kernel().form()
    }

    fn i_vec(&self) -> DVector<f64> {
        let m = self.m();
        DVector::from_fn(m, |i, _| match self.form() {
            KernelForm::Product => self.cols.iter().map(|c| c.e(i)).product(),
            KernelForm::Additive => self.cols.iter().map(|c| c.e(i)).sum(),
        })
    }

    /// `J - II'`, or `J̃ - II'` when only the random columns in `subset`
    /// are integrated jointly (all random columns when `None`). Built from
    /// the per-column covariances `ζ - ξξ'` so that it vanishes exactly for
    /// point-mass inputs.
    fn j_centered(&self, subset: Option<&[usize]>) -> DMatrix<f64> {
        let m = self.m();
        let in_subset = |k: usize| subset.is_none_or(|s| s.contains(&k));
        let mut d = DMatrix::zeros(m, m);
        match self.form() {
            KernelForm::Product => {
                // Π a_k - Π b_k = Σ_k (a_k - b_k) Π_{l<k} a_l Π_{l>k} b_l
                let mut after = DMatrix::from_element(m, m, 1.0);
                let mut suffix = vec![after.clone()];
                for col in self.cols.iter().rev() {
                    for a in 0..m {
                        for b in 0..m {
                            after[(a, b)] *= col.e(a) * col.e(b);
                        }
                    }
                    suffix.push(after.clone());
                }
                suffix.reverse();
                let mut before = DMatrix::from_element(m, m, 1.0);
                for (k, col) in self.cols.iter().enumerate() {
                    match col {
                        Col::Random { zeta, cov, .. } if in_subset(k) => {
                            for a in 0..m {
                                for b in 0..m {
                                    d[(a, b)] += cov[(a, b)] * before[(a, b)] * suffix[k + 1][(a, b)];
                                    before[(a, b)] *= zeta[(a, b)];
                                }
                            }
                        }
                        _ => {
                            for a in 0..m {
                                for b in 0..m {
                                    before[(a, b)] *= col.e(a) * col.e(b);
                                }
                            }
                        }
                    }
                }
            }
            KernelForm::Additive => {
                debug_assert!(subset.is_none());
                for col in &self.cols {
                    if let Col::Random { cov, .. } = col {
                        for a in 0..m {
                            for b in 0..m {
                                d[(a, b)] += cov[(a, b)];
                            }
                        }
                    }
                }
            }
        }
        d
    }

    /// `E[(W_l - μ_l) c(W, x_j)]` for random column `l`.
    fn b_centered(&self, l: usize) -> DVector<f64> {
        let m = self.m();
        let Col::Random { dist, xi, psi, .. } = &self.cols[l] else {
            unreachable!("B is only defined for random columns")
        };
        match self.form() {
            KernelForm::Product => DVector::from_fn(m, |j, _| {
                let others: f64 = self
                    .cols
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != l)
                    .map(|(_, c)| c.e(j))
                    .product();
                (psi[j] - dist.mu * xi[j]) * others
            }),
            KernelForm::Additive => DVector::from_fn(m, |j, _| psi[j] - dist.mu * xi[j]),
        }
    }

    fn moment_set(&self) -> LinkedMomentSet {
        let i = self.i_vec();
        let j = self.j_centered(None) + &i * i.transpose();
        let rc = self.random_columns();
        let mut b = DMatrix::zeros(rc.len(), self.m());
        for (r, l) in rc.iter().enumerate() {
            let row = self.b_centered(*l) + &i * self.cols[*l].mean();
            b.set_row(r, &row.transpose());
        }
        LinkedMomentSet {
            form: self.form(),
            i,
            j,
            b,
            random_columns: rc,
        }
    }
}

fn trace_prod(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut t = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            t += a[(i, j)] * b[(j, i)];
        }
    }
    t
}

/// Trend-basis moments: `G = E[h]`, `K - IG'` with `K = E[r h']`, and
/// `P = Cov[h]`.
struct BasisMoments {
    g: DVector<f64>,
    kc: DMatrix<f64>,
    p: DMatrix<f64>,
}

fn basis_moments(
    prep: &Prepared,
    b_centered: &dyn Fn(usize) -> DVector<f64>,
    cov: &dyn Fn(usize, usize) -> f64,
) -> BasisMoments {
    let m = prep.m();
    let lin = prep.g.trend().linear_columns(prep.cols.len());
    let q = lin.len() + 1;
    let mut g = DVector::zeros(q);
    let mut kc = DMatrix::zeros(m, q);
    let mut p = DMatrix::zeros(q, q);
    g[0] = 1.0;
    for (a, &c) in lin.iter().enumerate() {
        g[a + 1] = prep.cols[c].mean();
        if let Col::Random { .. } = &prep.cols[c] {
            kc.set_column(a + 1, &b_centered(c));
        }
        for (b2, &c2) in lin.iter().enumerate() {
            p[(a + 1, b2 + 1)] = cov(c, c2);
        }
    }
    BasisMoments { g, kc, p }
}

/// `V1 = A'(J - II')A + 2 b̂'(K - IG')'A + b̂'P b̂`
fn v1_term(g: &TrainedEmulator, jc: &DMatrix<f64>, bm: &BasisMoments) -> f64 {
    let a = &g.cache().a;
    let b = g.coefficients();
    a.dot(&(jc * a)) + 2.0 * b.dot(&(bm.kc.transpose() * a)) + b.dot(&(&bm.p * b))
}

fn general_prediction(prep: &Prepared, cov: &dyn Fn(usize, usize) -> f64) -> LinkedPrediction {
    let i_vec = prep.i_vec();
    let jc = prep.j_centered(None);
    let bm = basis_moments(prep, &|l| prep.b_centered(l), cov);
    general_from_parts(prep.g, &i_vec, &jc, &bm)
}

/// `tr(R⁻¹ X)` through the Cholesky factor.
fn trace_rinv(g: &TrainedEmulator, x: &DMatrix<f64>) -> f64 {
    let l = g.cache().corr.cholesky().l_dirty();
    let y = l.solve_lower_triangular(x).expect("factor is non-singular");
    let z = l.solve_lower_triangular(&y.transpose()).expect("factor is non-singular");
    z.trace()
}

/// `‖L⁻¹ v‖²` with `R = LL'`.
fn quad_rinv(g: &TrainedEmulator, v: &DVector<f64>) -> f64 {
    let l = g.cache().corr.cholesky().l_dirty();
    l.solve_lower_triangular(v).expect("factor is non-singular").norm_squared()
}

// `V2 = E[σ0²(W)]` is evaluated as the point-prediction formula at the
// mean correlation vector plus centred corrections:
// `σ²(k0 + η - I'R⁻¹I - tr(R⁻¹D) + ū'Cū + tr(C S))` with `D = J - II'`,
// `ū = G - M'I`, `S = P - M'Kc - Kc'M + M'DM`, `M = R⁻¹H` and
// `Kc = K - IG'`. Expanding recovers the textbook expression, but this
// form avoids cancelling the large terms `tr(R⁻¹J)` and `M'JM` when `R`
// is ill-conditioned.
fn general_from_parts(g: &TrainedEmulator, i_vec: &DVector<f64>, jc: &DMatrix<f64>, bm: &BasisMoments) -> LinkedPrediction {
    let cache = g.cache();
    let mu = bm.g.dot(g.coefficients()) + i_vec.dot(&cache.a);
    let v1 = v1_term(g, jc, bm);
    let v2 = if g.sigma2() == 0.0 {
        0.0
    } else {
        let m = &cache.rinv_h;
        let ubar = &bm.g - m.transpose() * i_vec;
        let mk = m.transpose() * &bm.kc;
        let s = &bm.p - &mk - mk.transpose() + m.transpose() * jc * m;
        g.sigma2()
            * (g.kernel().self_correlation() + g.effective_nugget() - quad_rinv(g, i_vec) - trace_rinv(g, jc)
                + ubar.dot(&(&cache.c * &ubar))
                + trace_prod(&cache.c, &s))
    };
    LinkedPrediction::new(mu, v1, v2)
}

/// Constant trend: `μ = b̂ + I'A` and
/// `σ² = A'(J - II')A + σ̂²(1 + η + tr(QJ) + C - 2C 1'R⁻¹I)`, with the
/// variance regrouped as in the general case.
fn constant_prediction(prep: &Prepared) -> LinkedPrediction {
    let g = prep.g;
    let cache = g.cache();
    let i_vec = prep.i_vec();
    let jc = prep.j_centered(None);
    let a = &cache.a;
    let mu = g.coefficients()[0] + i_vec.dot(a);
    let v1 = a.dot(&(&jc * a));
    let v2 = if g.sigma2() == 0.0 {
        0.0
    } else {
        let c = cache.c[(0, 0)];
        let rinv_1 = cache.rinv_h.column(0);
        let ubar = 1.0 - rinv_1.dot(&i_vec);
        g.sigma2()
            * (g.kernel().self_correlation() + g.effective_nugget() - quad_rinv(g, &i_vec) - trace_rinv(g, &jc)
                + c * ubar * ubar
                + c * rinv_1.dot(&(&jc * rinv_1)))
    };
    LinkedPrediction::new(mu, v1, v2)
}

fn independent_cov(prep: &Prepared, a: usize, b: usize) -> f64 {
    match (&prep.cols[a], a == b) {
        (Col::Random { dist, .. }, true) => dist.var,
        _ => 0.0,
    }
}

/// `I`, `J` and `B` for emulator `g` at the given inputs.
pub fn moment_set(g: &TrainedEmulator, inputs: &[ColumnInput]) -> Result<LinkedMomentSet> {
    Ok(Prepared::new(g, inputs)?.moment_set())
}

/// Linked mean and variance with independent normal inputs. Emulators
/// with a constant trend use the simplified constant-trend expressions.
pub fn linked_predict(g: &TrainedEmulator, inputs: &[ColumnInput]) -> Result<LinkedPrediction> {
    let prep = Prepared::new(g, inputs)?;
    Ok(match g.trend() {
        TrendBasis::Constant => constant_prediction(&prep),
        _ => general_prediction(&prep, &|a, b| independent_cov(&prep, a, b)),
    })
}

/// Linked prediction through the general trend-basis assembly, whatever
/// the trend. Agrees with [`linked_predict`] up to round-off.
pub fn linked_predict_general(g: &TrainedEmulator, inputs: &[ColumnInput]) -> Result<LinkedPrediction> {
    let prep = Prepared::new(g, inputs)?;
    Ok(general_prediction(&prep, &|a, b| independent_cov(&prep, a, b)))
}

/// `V1(S) = Var_{W_S}[E_{W_{S^c}}[μ0(W)]]`, the share of the input-driven
/// variance due to the random columns in `subset` (kernel column indices).
/// Only defined for product kernels.
pub fn variance_contribution(g: &TrainedEmulator, inputs: &[ColumnInput], subset: &[usize]) -> Result<f64> {
    if g.kernel().form() != KernelForm::Product {
        return Err(Error::Unsupported("subset variance contributions need a product kernel".into()));
    }
    let prep = Prepared::new(g, inputs)?;
    for &k in subset {
        if !matches!(prep.cols.get(k), Some(Col::Random { .. })) {
            return Err(Error::Domain(format!("column {k} is not a random input")));
        }
    }
    if subset.is_empty() {
        return Ok(0.0);
    }
    let jc = prep.j_centered(Some(subset));
    let b_centered = |l: usize| {
        if subset.contains(&l) {
            prep.b_centered(l)
        } else {
            DVector::zeros(prep.m())
        }
    };
    let cov = |a: usize, b: usize| match (&prep.cols[a], a == b && subset.contains(&a)) {
        (Col::Random { dist, .. }, true) => dist.var,
        _ => 0.0,
    };
    let bm = basis_moments(&prep, &b_centered, &cov);
    Ok(v1_term(g, &jc, &bm).max(0.0))
}

/// Linked prediction when the random inputs are jointly normal with a full
/// covariance. Squared-exponential product kernels only. `w` covers the
/// random columns in the order of [`split_columns`]; `z` the rest.
pub fn linked_predict_dependent(g: &TrainedEmulator, w: &NormalVector, z: &[f64]) -> Result<LinkedPrediction> {
    if g.kernel().form() != KernelForm::Product {
        return Err(Error::Unsupported("dependent inputs need a product kernel".into()));
    }
    let d = w.dim();
    let marginals: Vec<NormalScalar> = (0..d).map(|k| w.marginal(k)).collect();
    let inputs = assign_columns(g, &marginals, z)?;
    let (w_cols, _) = split_columns(g, d)?;
    let widths: Vec<f64> = w_cols.iter().map(|c| scale_width(g.bounds()[*c])).collect();
    let mu_s = DVector::from_fn(d, |k, _| scale_value(w.mu()[k], g.bounds()[w_cols[k]]));
    let sig_s = DMatrix::from_fn(d, d, |a, b| w.sigma()[(a, b)] / (widths[a] * widths[b]));
    let dist = NormalVector::new(mu_s, sig_s)?;
    let gammas: Vec<f64> = w_cols.iter().map(|c| g.kernel().gammas()[*c]).collect();
    let mv = SeMvnMoments::new(g.kernel().kind(), &gammas, &dist)?;

    // Fixed columns still factor out of every expectation.
    check_inputs(g, &inputs)?;
    let rows = &g.cache().rows;
    let m = rows.len();
    let kind = g.kernel().kind();
    let fixed: Vec<f64> = (0..m)
        .map(|i| {
            inputs
                .iter()
                .enumerate()
                .filter_map(|(k, c)| match c {
                    ColumnInput::Fixed(v) => {
                        Some(kind.eval(g.kernel().gammas()[k], scale_value(*v, g.bounds()[k]) - rows[i][k]))
                    }
                    ColumnInput::Random(_) => None,
                })
                .product()
        })
        .collect();
    let wrow = |i: usize| -> Vec<f64> { w_cols.iter().map(|c| rows[i][*c]).collect() };
    let wrows: Vec<Vec<f64>> = (0..m).map(wrow).collect();
    let xi_w: Vec<f64> = wrows.iter().map(|w| mv.xi(w).expect("dimension checked")).collect();
    let i_vec = DVector::from_fn(m, |i, _| xi_w[i] * fixed[i]);
    let mut jc = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in 0..=a {
            let z = mv.zeta(&wrows[a], &wrows[b]).expect("dimension checked");
            let v = (z - xi_w[a] * xi_w[b]) * fixed[a] * fixed[b];
            jc[(a, b)] = v;
            jc[(b, a)] = v;
        }
    }
    // Reuse the basis assembly with random columns backed by the joint law.
    let prep = Prepared {
        g,
        cols: inputs
            .iter()
            .enumerate()
            .map(|(k, c)| match c {
                ColumnInput::Fixed(v) => {
                    let zs = scale_value(*v, g.bounds()[k]);
                    Col::Fixed {
                        z: zs,
                        c: rows.iter().map(|r| kind.eval(g.kernel().gammas()[k], zs - r[k])).collect(),
                    }
                }
                ColumnInput::Random(_) => {
                    let l = w_cols.iter().position(|c| *c == k).expect("random column");
                    Col::Random {
                        dist: dist.marginal(l),
                        xi: vec![],
                        psi: vec![],
                        zeta: DMatrix::zeros(0, 0),
                        cov: DMatrix::zeros(0, 0),
                    }
                }
            })
            .collect(),
    };
    let b_centered = |col: usize| {
        let l = w_cols.iter().position(|c| *c == col).expect("random column");
        let mu_l = dist.mu()[l];
        DVector::from_fn(m, |jj, _| {
            (mv.psi(l, &wrows[jj]).expect("dimension checked") - mu_l * xi_w[jj]) * fixed[jj]
        })
    };
    let cov = |a: usize, b: usize| {
        match (w_cols.iter().position(|c| *c == a), w_cols.iter().position(|c| *c == b)) {
            (Some(x), Some(y)) => dist.sigma()[(x, y)],
            _ => 0.0,
        }
    };
    let bm = basis_moments(&prep, &b_centered, &cov);
    Ok(general_from_parts(g, &i_vec, &jc, &bm))
}

/// `r_k = γ̂_k² / σ_k²` for each random column (in column order); `+∞` for a
/// zero-variance input. Large ratios mean that ignoring dependence between
/// the random inputs is harmless. Calibrated for the squared exponential
/// kernel; reported for all kernels.
pub fn ratio_diagnostic(g: &TrainedEmulator, inputs: &[ColumnInput]) -> Result<Vec<f64>> {
    check_inputs(g, inputs)?;
    let gam = g.gammas_original_units();
    Ok(inputs
        .iter()
        .enumerate()
        .filter_map(|(k, c)| match c {
            ColumnInput::Random(d) if d.var == 0.0 => Some(f64::INFINITY),
            ColumnInput::Random(d) => Some(gam[k] * gam[k] / d.var),
            ColumnInput::Fixed(_) => None,
        })
        .collect())
}
