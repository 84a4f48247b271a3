//! One-dimensional correlation functions and the correlation matrices built
//! from them.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal jitter tried, in order, when a correlation matrix fails to factor.
pub const JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

const SQRT3: f64 = 1.732_050_807_568_877_2;
const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    Exponential,
    SquaredExponential,
    Matern15,
    Matern25,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelForm {
    #[default]
    Product,
    Additive,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::Exponential,
        KernelKind::SquaredExponential,
        KernelKind::Matern15,
        KernelKind::Matern25,
    ];

    /// Correlation at distance `d = |x1 - x2|` for range parameter `gamma`.
    #[inline]
    pub fn eval(self, gamma: f64, d: f64) -> f64 {
        let d = d.abs();
        match self {
            KernelKind::Exponential => (-d / gamma).exp(),
            KernelKind::SquaredExponential => {
                let t = d / gamma;
                (-t * t).exp()
            }
            KernelKind::Matern15 => {
                let t = SQRT3 * d / gamma;
                (1.0 + t) * (-t).exp()
            }
            KernelKind::Matern25 => {
                let t = SQRT5 * d / gamma;
                (1.0 + t + t * t / 3.0) * (-t).exp()
            }
        }
    }

    /// For the exponential and Matérn kernels, `c(d) = P(d) exp(-a d)` with a
    /// polynomial `P`. Returns the coefficients of `P` (lowest order first)
    /// and the rate `a`. The squared exponential has no such form.
    pub(crate) fn poly_exp(self, gamma: f64) -> Option<(Vec<f64>, f64)> {
        match self {
            KernelKind::Exponential => Some((vec![1.0], 1.0 / gamma)),
            KernelKind::Matern15 => {
                let a = SQRT3 / gamma;
                Some((vec![1.0, a], a))
            }
            KernelKind::Matern25 => {
                let a = SQRT5 / gamma;
                Some((vec![1.0, a, a * a / 3.0], a))
            }
            KernelKind::SquaredExponential => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Exponential => "exponential",
            KernelKind::SquaredExponential => "squared_exponential",
            KernelKind::Matern15 => "matern15",
            KernelKind::Matern25 => "matern25",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '.'], "_").as_str() {
            "exp" | "exponential" => Ok(KernelKind::Exponential),
            "se" | "squared_exponential" | "squaredexponential" | "gaussian" => {
                Ok(KernelKind::SquaredExponential)
            }
            "matern15" | "matern_15" | "matern1_5" => Ok(KernelKind::Matern15),
            "matern25" | "matern_25" | "matern2_5" => Ok(KernelKind::Matern25),
            other => Err(Error::Config(format!("unknown kernel '{other}'"))),
        }
    }
}

#[derive(Deserialize)]
struct RawKernelSpec {
    kind: KernelKind,
    gammas: Vec<f64>,
    #[serde(default)]
    form: KernelForm,
}

/// Kernel family, per-dimension range parameters and the way the
/// one-dimensional kernels are combined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernelSpec")]
pub struct KernelSpec {
    kind: KernelKind,
    gammas: Vec<f64>,
    form: KernelForm,
}

impl TryFrom<RawKernelSpec> for KernelSpec {
    type Error = Error;

    fn try_from(raw: RawKernelSpec) -> Result<Self> {
        KernelSpec::new(raw.kind, raw.gammas, raw.form)
    }
}

impl KernelSpec {
    pub fn new(kind: KernelKind, gammas: Vec<f64>, form: KernelForm) -> Result<Self> {
        if gammas.is_empty() {
            return Err(Error::Domain("kernel needs at least one dimension".into()));
        }
        if let Some(g) = gammas.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::Domain(format!("range parameter must be positive, got {g}")));
        }
        Ok(KernelSpec { kind, gammas, form })
    }

    pub fn product(kind: KernelKind, gammas: Vec<f64>) -> Result<Self> {
        Self::new(kind, gammas, KernelForm::Product)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn form(&self) -> KernelForm {
        self.form
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn dim(&self) -> usize {
        self.gammas.len()
    }

    /// Value of the composite correlation at zero distance.
    pub fn self_correlation(&self) -> f64 {
        match self.form {
            KernelForm::Product => 1.0,
            KernelForm::Additive => self.dim() as f64,
        }
    }

    #[inline]
    pub(crate) fn eval_dim(&self, k: usize, x1: f64, x2: f64) -> f64 {
        self.kind.eval(self.gammas[k], x1 - x2)
    }

    /// Composite correlation without dimension or finiteness checks.
    #[inline]
    pub(crate) fn corr_unchecked(&self, x1: &[f64], x2: &[f64]) -> f64 {
        match self.form {
            KernelForm::Product => {
                let mut v = 1.0;
                for k in 0..self.gammas.len() {
                    v *= self.eval_dim(k, x1[k], x2[k]);
                }
                v
            }
            KernelForm::Additive => (0..self.gammas.len())
                .map(|k| self.eval_dim(k, x1[k], x2[k]))
                .sum(),
        }
    }
}

/// Correlation of dimension `dim` between two scalar inputs.
pub fn kernel_value(spec: &KernelSpec, dim: usize, x1: f64, x2: f64) -> Result<f64> {
    if dim >= spec.dim() {
        return Err(Error::Dimension {
            expected: spec.dim(),
            got: dim + 1,
        });
    }
    if !x1.is_finite() || !x2.is_finite() {
        return Err(Error::Domain(format!("non-finite kernel input ({x1}, {x2})")));
    }
    Ok(spec.eval_dim(dim, x1, x2))
}

/// Correlation between two input vectors: the product (or sum, for the
/// additive form) of the per-dimension correlations.
pub fn composite_correlation(spec: &KernelSpec, x1: &[f64], x2: &[f64]) -> Result<f64> {
    for x in [x1, x2] {
        if x.len() != spec.dim() {
            return Err(Error::Dimension {
                expected: spec.dim(),
                got: x.len(),
            });
        }
    }
    if x1.iter().chain(x2).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite kernel input".into()));
    }
    Ok(spec.corr_unchecked(x1, x2))
}

/// A factored correlation matrix `R = C + nugget * I`.
#[derive(Clone, Debug)]
pub struct CorrelationMatrix {
    matrix: DMatrix<f64>,
    nugget: f64,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
}

impl CorrelationMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// The requested nugget.
    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    /// Extra diagonal jitter that was needed for the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Total diagonal inflation actually present in the factored matrix.
    pub fn effective_nugget(&self) -> f64 {
        self.nugget + self.jitter
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// log |R|
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Correlation matrix over the rows of `design` using the default jitter
/// ladder.
pub fn correlation_matrix(
    spec: &KernelSpec,
    design: &DMatrix<f64>,
    nugget: f64,
) -> Result<CorrelationMatrix> {
    correlation_matrix_with(spec, design, nugget, &JITTER_LADDER)
}

/// Correlation matrix with an explicit jitter ladder (possibly empty).
pub fn correlation_matrix_with(
    spec: &KernelSpec,
    design: &DMatrix<f64>,
    nugget: f64,
    ladder: &[f64],
) -> Result<CorrelationMatrix> {
    if design.ncols() != spec.dim() {
        return Err(Error::Dimension {
            expected: spec.dim(),
            got: design.ncols(),
        });
    }
    if design.nrows() == 0 {
        return Err(Error::Domain("empty design".into()));
    }
    if !(nugget >= 0.0 && nugget.is_finite()) {
        return Err(Error::Domain(format!("nugget must be >= 0, got {nugget}")));
    }
    let m = design.nrows();
    let rows: Vec<Vec<f64>> = (0..m).map(|i| design.row(i).iter().copied().collect()).collect();
    let mut base = DMatrix::zeros(m, m);
    for i in 0..m {
        base[(i, i)] = spec.self_correlation();
        for j in 0..i {
            let v = spec.corr_unchecked(&rows[i], &rows[j]);
            base[(i, j)] = v;
            base[(j, i)] = v;
        }
    }
    let mut tried = Vec::new();
    for jitter in std::iter::once(0.0).chain(ladder.iter().copied()) {
        let mut r = base.clone();
        for i in 0..m {
            r[(i, i)] += nugget + jitter;
        }
        if let Some(chol) = Cholesky::new(r.clone()) {
            if chol.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                if jitter > 0.0 {
                    log::debug!("correlation matrix needed jitter {jitter:e}");
                }
                return Ok(CorrelationMatrix {
                    matrix: r,
                    nugget,
                    jitter,
                    chol,
                });
            }
        }
        tried.push(jitter);
    }
    Err(Error::IllConditioned { tried })
}
