//! Single-output Gaussian-process emulators.
//!
//! Inputs are mapped to `[0, 1]` per dimension with the bounds of the
//! training design before the kernel is applied; the stored range parameters
//! are in those rescaled units. Responses are left in their own units.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{random_lhs, rows_to_matrix};
use crate::error::{Error, Result};
use crate::kernel::{correlation_matrix, CorrelationMatrix, KernelForm, KernelKind, KernelSpec};
use crate::optim;

pub const FORMAT_VERSION: u32 = 1;

/// Mean function basis: an intercept plus linear terms in some inputs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrendBasis {
    /// `h(x) = 1`.
    #[default]
    Constant,
    /// `h(x) = (1, x_1, ..., x_p)`.
    LinearInAll,
    /// `h(x) = (1, x_k for k in w_columns)`: linear in the inputs that are
    /// fed by upstream models, constant in the rest.
    LinkedTrend { w_columns: Vec<usize> },
}

impl TrendBasis {
    /// Input columns that enter the trend linearly.
    pub fn linear_columns(&self, p: usize) -> Vec<usize> {
        match self {
            TrendBasis::Constant => vec![],
            TrendBasis::LinearInAll => (0..p).collect(),
            TrendBasis::LinkedTrend { w_columns } => w_columns.clone(),
        }
    }

    /// Number of basis functions `q`.
    pub fn size(&self, p: usize) -> usize {
        1 + self.linear_columns(p).len()
    }

    fn validate(&self, p: usize) -> Result<()> {
        if let TrendBasis::LinkedTrend { w_columns } = self {
            let mut seen = vec![false; p];
            for &c in w_columns {
                if c >= p || seen[c] {
                    return Err(Error::Config(format!(
                        "trend column {c} is out of range or repeated for {p} inputs"
                    )));
                }
                seen[c] = true;
            }
        }
        Ok(())
    }

    pub(crate) fn row(&self, x: &[f64]) -> Vec<f64> {
        let mut h = vec![1.0];
        h.extend(self.linear_columns(x.len()).into_iter().map(|c| x[c]));
        h
    }

    pub(crate) fn matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let cols = self.linear_columns(x.ncols());
        DMatrix::from_fn(x.nrows(), cols.len() + 1, |i, j| if j == 0 { 1.0 } else { x[(i, cols[j - 1])] })
    }
}

/// Jointly robust prior on the inverse range parameters and the nugget:
/// `log π = a log(t) - b t` with `t = Σ C_k / γ_k + η`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub enabled: bool,
    pub a: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { enabled: true, a: 0.2 }
    }
}

impl PriorConfig {
    pub fn disabled() -> Self {
        PriorConfig {
            enabled: false,
            ..Self::default()
        }
    }

    fn constants(&self, m: usize, p: usize) -> (f64, f64) {
        let scale = (m as f64).powf(-1.0 / p as f64);
        (scale, scale * (self.a + p as f64))
    }

    fn log_density(&self, m: usize, gammas: &[f64], nugget: f64) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        let (c, b) = self.constants(m, gammas.len());
        let t: f64 = gammas.iter().map(|g| c / g).sum::<f64>() + nugget;
        self.a * t.ln() - b * t
    }

    /// Range parameters at the prior mode, split evenly over dimensions.
    fn mode(&self, m: usize, p: usize, nugget: f64) -> Vec<f64> {
        if !self.enabled {
            return vec![0.5; p];
        }
        let (c, b) = self.constants(m, p);
        let t = (self.a / b - nugget).max(1e-6);
        vec![p as f64 * c / t; p]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NuggetMode {
    Estimate,
    Fixed(f64),
}

/// Everything needed to fit an emulator from data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub kernel: KernelKind,
    pub form: KernelForm,
    pub trend: TrendBasis,
    pub prior: PriorConfig,
    pub nugget: NuggetMode,
    pub starts: usize,
    pub tolerance: f64,
    pub max_iterations: u64,
    /// Search box for the range parameters, in rescaled units.
    pub gamma_bounds: (f64, f64),
    pub nugget_bounds: (f64, f64),
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            kernel: KernelKind::Matern25,
            form: KernelForm::Product,
            trend: TrendBasis::Constant,
            prior: PriorConfig::default(),
            nugget: NuggetMode::Estimate,
            starts: 5,
            tolerance: 1e-8,
            max_iterations: 2000,
            gamma_bounds: (1e-3, 1e2),
            nugget_bounds: (1e-10, 1.0),
        }
    }
}

impl FitConfig {
    pub fn new(kernel: KernelKind, trend: TrendBasis) -> Self {
        FitConfig {
            kernel,
            trend,
            ..Self::default()
        }
    }
}

/// Estimated correlation hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparameters {
    /// Range parameters in rescaled units.
    pub gammas: Vec<f64>,
    pub nugget: f64,
    /// Responses lie in the span of the trend, so `σ̂² = 0`.
    pub degenerate: bool,
    /// Log marginal posterior at the estimate (NaN for degenerate fits).
    pub objective: f64,
}

/// Predictive normal at one input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction {
    pub mean: f64,
    pub var: f64,
}

/// Generalised least-squares fit of the trend under a given correlation.
pub(crate) struct Gls {
    pub coefficients: DVector<f64>,
    /// `(y - Hb)' R⁻¹ (y - Hb)`
    pub rss: f64,
    /// `(H' R⁻¹ H)⁻¹`
    pub c: DMatrix<f64>,
    pub log_det_hrh: f64,
}

pub(crate) fn gls(h: &DMatrix<f64>, y: &DVector<f64>, corr: &CorrelationMatrix) -> Result<Gls> {
    let l = corr.cholesky().l();
    let hw = l.solve_lower_triangular(h).ok_or(Error::RankDeficientTrend)?;
    let yw = l.solve_lower_triangular(y).ok_or(Error::RankDeficientTrend)?;
    let q = h.ncols();
    let qr = hw.clone().qr();
    let rq = qr.r();
    let scale = rq.diagonal().amax();
    if !(scale > 0.0) || rq.diagonal().iter().any(|d| d.abs() <= 1e-12 * scale) {
        return Err(Error::RankDeficientTrend);
    }
    let qty = qr.q().transpose() * &yw;
    let coefficients = rq.solve_upper_triangular(&qty).ok_or(Error::RankDeficientTrend)?;
    let resid = yw - hw * &coefficients;
    let rinv = rq
        .solve_upper_triangular(&DMatrix::identity(q, q))
        .ok_or(Error::RankDeficientTrend)?;
    let c = &rinv * rinv.transpose();
    let log_det_hrh = 2.0 * rq.diagonal().iter().map(|d| d.abs().ln()).sum::<f64>();
    Ok(Gls {
        coefficients,
        rss: resid.norm_squared(),
        c,
        log_det_hrh,
    })
}

/// `b̂ = (H'R⁻¹H)⁻¹H'R⁻¹y` and `σ̂² = (y - Hb̂)'R⁻¹(y - Hb̂)/(m - q)`.
/// `design` must already be in the units the kernel expects.
pub fn fit_trend_and_variance(
    design: &DMatrix<f64>,
    y: &[f64],
    trend: &TrendBasis,
    corr: &CorrelationMatrix,
) -> Result<(DVector<f64>, f64)> {
    let m = design.nrows();
    let q = trend.size(design.ncols());
    if m <= q {
        return Err(Error::Domain(format!("need more than {q} points, got {m}")));
    }
    let fit = gls(&trend.matrix(design), &DVector::from_column_slice(y), corr)?;
    Ok((fit.coefficients, fit.rss / (m - q) as f64))
}

pub(crate) fn data_bounds(design: &DMatrix<f64>) -> Vec<(f64, f64)> {
    (0..design.ncols())
        .map(|k| {
            let col = design.column(k);
            (col.min(), col.max())
        })
        .collect()
}

#[inline]
pub(crate) fn scale_value(v: f64, (lo, hi): (f64, f64)) -> f64 {
    let w = hi - lo;
    if w > 0.0 {
        (v - lo) / w
    } else {
        v - lo
    }
}

#[inline]
pub(crate) fn scale_width((lo, hi): (f64, f64)) -> f64 {
    let w = hi - lo;
    if w > 0.0 {
        w
    } else {
        1.0
    }
}

fn scale_design(design: &DMatrix<f64>, bounds: &[(f64, f64)]) -> DMatrix<f64> {
    DMatrix::from_fn(design.nrows(), design.ncols(), |i, j| scale_value(design[(i, j)], bounds[j]))
}

fn check_data(design: &DMatrix<f64>, y: &[f64], trend: &TrendBasis) -> Result<()> {
    if design.nrows() != y.len() {
        return Err(Error::Dimension {
            expected: design.nrows(),
            got: y.len(),
        });
    }
    if design.ncols() == 0 {
        return Err(Error::Domain("design has no columns".into()));
    }
    if design.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite training data".into()));
    }
    trend.validate(design.ncols())?;
    let q = trend.size(design.ncols());
    if design.nrows() <= q {
        return Err(Error::Domain(format!(
            "need more than {q} training points, got {}",
            design.nrows()
        )));
    }
    Ok(())
}

/// Log marginal posterior of `(γ, η)` with `b` and `σ²` integrated out,
/// on an already rescaled design. `None` when the correlation matrix cannot
/// be factored.
pub fn log_marginal_posterior(
    scaled_design: &DMatrix<f64>,
    y: &[f64],
    config: &FitConfig,
    gammas: &[f64],
    nugget: f64,
) -> Option<f64> {
    let m = scaled_design.nrows();
    let q = config.trend.size(scaled_design.ncols());
    let spec = KernelSpec::new(config.kernel, gammas.to_vec(), config.form).ok()?;
    let corr = correlation_matrix(&spec, scaled_design, nugget).ok()?;
    let fit = gls(&config.trend.matrix(scaled_design), &DVector::from_column_slice(y), &corr).ok()?;
    let s2 = fit.rss / (m - q) as f64;
    let v = -0.5 * corr.log_det() - 0.5 * fit.log_det_hrh - 0.5 * (m - q) as f64 * s2.ln()
        + config.prior.log_density(m, gammas, nugget);
    v.is_finite().then_some(v)
}

/// Maximum marginal-posterior estimate of the range parameters (and the
/// nugget unless it is fixed), by multi-start bounded Nelder–Mead in
/// log-parameter space. Deterministic for a given seed.
pub fn map_estimate(design: &DMatrix<f64>, y: &[f64], config: &FitConfig, seed: u64) -> Result<Hyperparameters> {
    check_data(design, y, &config.trend)?;
    let bounds = data_bounds(design);
    let scaled = scale_design(design, &bounds);
    map_estimate_scaled(&scaled, y, config, seed)
}

fn responses_in_trend_span(scaled: &DMatrix<f64>, y: &[f64], trend: &TrendBasis) -> bool {
    let h = trend.matrix(scaled);
    let yv = DVector::from_column_slice(y);
    let Some(b) = h.clone().svd(true, true).solve(&yv, 1e-12).ok() else {
        return false;
    };
    let resid = (&yv - h * b).amax();
    resid <= 1e-12 * yv.amax().max(1.0)
}

fn map_estimate_scaled(scaled: &DMatrix<f64>, y: &[f64], config: &FitConfig, seed: u64) -> Result<Hyperparameters> {
    let (m, p) = (scaled.nrows(), scaled.ncols());
    let fixed_nugget = match config.nugget {
        NuggetMode::Fixed(v) if v >= 0.0 && v.is_finite() => Some(v),
        NuggetMode::Fixed(v) => return Err(Error::Config(format!("invalid fixed nugget {v}"))),
        NuggetMode::Estimate => None,
    };
    if responses_in_trend_span(scaled, y, &config.trend) {
        let nugget = fixed_nugget.unwrap_or(config.nugget_bounds.0);
        log::warn!("responses are exactly in the trend span; using the prior-mode range parameters");
        let (glo, ghi) = config.gamma_bounds;
        return Ok(Hyperparameters {
            gammas: config.prior.mode(m, p, nugget).into_iter().map(|g| g.clamp(glo, ghi)).collect(),
            nugget,
            degenerate: true,
            objective: f64::NAN,
        });
    }

    let (glo, ghi) = (config.gamma_bounds.0.ln(), config.gamma_bounds.1.ln());
    let (nlo, nhi) = (config.nugget_bounds.0.ln(), config.nugget_bounds.1.ln());
    let dim = p + usize::from(fixed_nugget.is_none());
    let mut lower = vec![glo; p];
    let mut upper = vec![ghi; p];
    let mut start_box = vec![((0.05f64).ln().max(glo), (2.0f64).ln().min(ghi)); p];
    if fixed_nugget.is_none() {
        lower.push(nlo);
        upper.push(nhi);
        start_box.push(((1e-8f64).ln().clamp(nlo, nhi), (1e-2f64).ln().clamp(nlo, nhi)));
    }
    let unpack = |theta: &[f64]| -> (Vec<f64>, f64) {
        let gammas = theta[..p].iter().map(|t| t.exp()).collect();
        let nugget = fixed_nugget.unwrap_or_else(|| theta[p].exp());
        (gammas, nugget)
    };
    let objective = |theta: &[f64]| -> f64 {
        let (g, n) = unpack(theta);
        match log_marginal_posterior(scaled, y, config, &g, n) {
            Some(v) => -v,
            None => f64::INFINITY,
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = random_lhs(config.starts.max(1), &start_box, &mut rng);
    let results: Vec<Option<optim::Minimum>> = starts
        .par_iter()
        .map(|s| optim::minimize(&objective, s, 0.5, &lower, &upper, config.tolerance, config.max_iterations))
        .collect();
    let mut best: Option<optim::Minimum> = None;
    for r in results.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    let Some(best) = best else {
        return Err(Error::Estimation(format!(
            "no start produced a finite objective; starts (log-parameters): {starts:?}"
        )));
    };
    debug_assert_eq!(best.x.len(), dim);
    let (gammas, nugget) = unpack(&best.x);
    Ok(Hyperparameters {
        gammas,
        nugget,
        degenerate: false,
        objective: -best.value,
    })
}

/// A fitted emulator together with the cached quantities that prediction and
/// linking need.
#[derive(Clone, Debug)]
pub struct TrainedEmulator {
    design: DMatrix<f64>,
    responses: DVector<f64>,
    bounds: Vec<(f64, f64)>,
    trend: TrendBasis,
    kernel: KernelSpec,
    nugget: f64,
    coefficients: DVector<f64>,
    sigma2: f64,
    degenerate: bool,
    cache: Cache,
}

#[derive(Clone, Debug)]
pub(crate) struct Cache {
    pub rows: Vec<Vec<f64>>,
    pub corr: CorrelationMatrix,
    /// `R⁻¹ (y - H b̂)`
    pub a: DVector<f64>,
    /// `R⁻¹ H`
    pub rinv_h: DMatrix<f64>,
    /// `(H' R⁻¹ H)⁻¹`
    pub c: DMatrix<f64>,
}

impl TrainedEmulator {
    /// Estimate hyperparameters and fit.
    pub fn fit(design: &DMatrix<f64>, y: &[f64], config: &FitConfig, seed: u64) -> Result<Self> {
        check_data(design, y, &config.trend)?;
        let bounds = data_bounds(design);
        let scaled = scale_design(design, &bounds);
        let hyper = map_estimate_scaled(&scaled, y, config, seed)?;
        let kernel = KernelSpec::new(config.kernel, hyper.gammas, config.form)?;
        Self::build(design, y, bounds, config.trend.clone(), kernel, hyper.nugget, hyper.degenerate)
    }

    /// Fit with given hyperparameters. `kernel` range parameters are in the
    /// rescaled units implied by `bounds` (the design's own bounds if `None`).
    pub fn with_hyperparameters(
        design: &DMatrix<f64>,
        y: &[f64],
        trend: TrendBasis,
        kernel: KernelSpec,
        nugget: f64,
        bounds: Option<Vec<(f64, f64)>>,
    ) -> Result<Self> {
        check_data(design, y, &trend)?;
        let bounds = bounds.unwrap_or_else(|| data_bounds(design));
        if bounds.len() != design.ncols() || kernel.dim() != design.ncols() {
            return Err(Error::Dimension {
                expected: design.ncols(),
                got: kernel.dim(),
            });
        }
        let scaled = scale_design(design, &bounds);
        let degenerate = responses_in_trend_span(&scaled, y, &trend);
        Self::build(design, y, bounds, trend, kernel, nugget, degenerate)
    }

    fn build(
        design: &DMatrix<f64>,
        y: &[f64],
        bounds: Vec<(f64, f64)>,
        trend: TrendBasis,
        kernel: KernelSpec,
        nugget: f64,
        degenerate: bool,
    ) -> Result<Self> {
        let scaled = scale_design(design, &bounds);
        let corr = correlation_matrix(&kernel, &scaled, nugget)?;
        let fit = gls(&trend.matrix(&scaled), &DVector::from_column_slice(y), &corr)?;
        let q = trend.size(design.ncols());
        let sigma2 = if degenerate { 0.0 } else { fit.rss / (design.nrows() - q) as f64 };
        Self::assemble(
            design.clone(),
            DVector::from_column_slice(y),
            bounds,
            trend,
            kernel,
            nugget,
            fit.coefficients,
            sigma2,
            degenerate,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        design: DMatrix<f64>,
        responses: DVector<f64>,
        bounds: Vec<(f64, f64)>,
        trend: TrendBasis,
        kernel: KernelSpec,
        nugget: f64,
        coefficients: DVector<f64>,
        sigma2: f64,
        degenerate: bool,
    ) -> Result<Self> {
        let scaled = scale_design(&design, &bounds);
        let corr = correlation_matrix(&kernel, &scaled, nugget)?;
        let h = trend.matrix(&scaled);
        let fit = gls(&h, &responses, &corr)?;
        let resid = &responses - &h * &coefficients;
        let a = corr.cholesky().solve(&resid);
        let rinv_h = corr.cholesky().solve(&h);
        let rows = (0..scaled.nrows()).map(|i| scaled.row(i).iter().copied().collect()).collect();
        Ok(TrainedEmulator {
            design,
            responses,
            bounds,
            trend,
            kernel,
            nugget,
            coefficients,
            sigma2,
            degenerate,
            cache: Cache {
                rows,
                corr,
                a,
                rinv_h,
                c: fit.c,
            },
        })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn trend(&self) -> &TrendBasis {
        &self.trend
    }

    /// Kernel with range parameters in rescaled units.
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// Range parameters in the units of the original inputs.
    pub fn gammas_original_units(&self) -> Vec<f64> {
        self.kernel
            .gammas()
            .iter()
            .zip(&self.bounds)
            .map(|(g, b)| g * scale_width(*b))
            .collect()
    }

    /// Estimated nugget `η̂`.
    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    /// Nugget plus any jitter the factorization needed.
    pub fn effective_nugget(&self) -> f64 {
        self.cache.corr.effective_nugget()
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn input_dim(&self) -> usize {
        self.design.ncols()
    }

    pub fn len(&self) -> usize {
        self.design.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.design.nrows() == 0
    }

    pub(crate) fn cache(&self) -> &Cache {
        &self.cache
    }

    pub(crate) fn scale_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.bounds).map(|(v, b)| scale_value(*v, *b)).collect()
    }

    fn check_input(&self, x0: &[f64]) -> Result<()> {
        if x0.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x0.len(),
            });
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite prediction input".into()));
        }
        Ok(())
    }

    fn correlations(&self, xs: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.cache.rows.iter().map(|row| self.kernel.corr_unchecked(xs, row)),
        )
    }

    /// Predictive mean and variance at `x0` (original units).
    pub fn predict(&self, x0: &[f64]) -> Result<GaussianPrediction> {
        self.check_input(x0)?;
        Ok(self.predict_unchecked(x0))
    }

    pub(crate) fn predict_unchecked(&self, x0: &[f64]) -> GaussianPrediction {
        let xs = self.scale_input(x0);
        let r = self.correlations(&xs);
        let h0 = DVector::from_vec(self.trend.row(&xs));
        let mean = h0.dot(&self.coefficients) + r.dot(&self.cache.a);
        if self.sigma2 == 0.0 {
            return GaussianPrediction { mean, var: 0.0 };
        }
        let v = self
            .cache
            .corr
            .cholesky()
            .l_dirty()
            .solve_lower_triangular(&r)
            .expect("factor is non-singular");
        let u = h0 - self.cache.rinv_h.transpose() * &r;
        let quad = u.dot(&(&self.cache.c * &u));
        let raw = self.sigma2 * (self.kernel.self_correlation() + self.effective_nugget() - v.norm_squared() + quad);
        GaussianPrediction { mean, var: raw.max(0.0) }
    }

    /// Predictive mean only.
    pub fn predict_mean(&self, x0: &[f64]) -> Result<f64> {
        self.check_input(x0)?;
        let xs = self.scale_input(x0);
        let h0 = self.trend.row(&xs);
        let trend: f64 = h0.iter().zip(self.coefficients.iter()).map(|(a, b)| a * b).sum();
        Ok(trend + self.correlations(&xs).dot(&self.cache.a))
    }

    pub fn to_file(&self) -> EmulatorFile {
        EmulatorFile::from(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: EmulatorFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk form of a [`TrainedEmulator`]. Floats are written with
/// round-trip precision, and the cache is rebuilt on load with the stored
/// estimates, so a reloaded emulator predicts bit-identically.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmulatorFile {
    pub format_version: u32,
    pub design: Vec<Vec<f64>>,
    pub responses: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
    pub trend: TrendBasis,
    /// Range parameters are in rescaled units.
    pub kernel: KernelSpec,
    pub nugget: f64,
    pub coefficients: Vec<f64>,
    pub sigma2: f64,
    pub degenerate: bool,
}

impl From<&TrainedEmulator> for EmulatorFile {
    fn from(e: &TrainedEmulator) -> Self {
        EmulatorFile {
            format_version: FORMAT_VERSION,
            design: (0..e.len()).map(|i| e.design.row(i).iter().copied().collect()).collect(),
            responses: e.responses.iter().copied().collect(),
            bounds: e.bounds.clone(),
            trend: e.trend.clone(),
            kernel: e.kernel.clone(),
            nugget: e.nugget,
            coefficients: e.coefficients.iter().copied().collect(),
            sigma2: e.sigma2,
            degenerate: e.degenerate,
        }
    }
}

impl From<TrainedEmulator> for EmulatorFile {
    fn from(e: TrainedEmulator) -> Self {
        EmulatorFile::from(&e)
    }
}

impl TryFrom<EmulatorFile> for TrainedEmulator {
    type Error = Error;

    fn try_from(f: EmulatorFile) -> Result<Self> {
        if f.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported emulator format version {} (expected {FORMAT_VERSION})",
                f.format_version
            )));
        }
        let p = f.kernel.dim();
        if f.design.iter().any(|r| r.len() != p) || f.bounds.len() != p {
            return Err(Error::Dimension {
                expected: p,
                got: f.design.first().map_or(0, Vec::len),
            });
        }
        let design = rows_to_matrix(&f.design, p);
        check_data(&design, &f.responses, &f.trend)?;
        if f.coefficients.len() != f.trend.size(p) {
            return Err(Error::Dimension {
                expected: f.trend.size(p),
                got: f.coefficients.len(),
            });
        }
        TrainedEmulator::assemble(
            design,
            DVector::from_vec(f.responses),
            f.bounds,
            f.trend,
            f.kernel,
            f.nugget,
            DVector::from_vec(f.coefficients),
            f.sigma2,
            f.degenerate,
        )
    }
}

impl Serialize for TrainedEmulator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        EmulatorFile::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for TrainedEmulator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = EmulatorFile::deserialize(d)?;
        TrainedEmulator::try_from(f).map_err(serde::de::Error::custom)
    }
}

/// Leave-one-out cross-validation NRMSEP: each point is predicted by an
/// emulator refitted without it.
pub fn loo_cv(design: &DMatrix<f64>, y: &[f64], config: &FitConfig, seed: u64) -> Result<f64> {
    let m = design.nrows();
    if m < 3 {
        return Err(Error::Domain("leave-one-out needs at least 3 points".into()));
    }
    if y.len() != m {
        return Err(Error::Dimension { expected: m, got: y.len() });
    }
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if !(hi > lo) {
        return Err(Error::ZeroRange);
    }
    let preds: Vec<Result<f64>> = (0..m)
        .into_par_iter()
        .map(|drop| {
            let keep: Vec<usize> = (0..m).filter(|i| *i != drop).collect();
            let d = design.select_rows(&keep);
            let yy: Vec<f64> = keep.iter().map(|i| y[*i]).collect();
            let x0: Vec<f64> = design.row(drop).iter().copied().collect();
            TrainedEmulator::fit(&d, &yy, config, seed)
                .and_then(|e| e.predict_mean(&x0))
                .map_err(|e| Error::Estimation(format!("leave-one-out refit without point {drop}: {e}")))
        })
        .collect();
    let preds = preds.into_iter().collect::<Result<Vec<f64>>>()?;
    crate::design::nrmsep(y, &preds)
}
