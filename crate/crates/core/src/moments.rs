//! Expectations of one-dimensional kernels under a normal input:
//!
//! * `ξ(w)     = E[c(W, w)]`
//! * `ζ(wi,wj) = E[c(W, wi) c(W, wj)]`
//! * `ψ(w)     = E[W c(W, w)]`
//!
//! The exponential and Matérn kernels are piecewise `P(|x - w|) exp(-a|x - w|)`
//! with a polynomial `P`, so every expectation reduces to partial moments of
//! the form `E[(X - c)^n exp(-a (X - c)); X > c]`. Those are evaluated with
//! scaled recurrences whose exponents are never positive, which keeps them
//! finite however large `σ/γ` gets.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};
use crate::kernel::KernelKind;
use crate::poly;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// A univariate normal law. `var == 0` is a point mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalScalar {
    pub mu: f64,
    pub var: f64,
}

impl NormalScalar {
    pub fn new(mu: f64, var: f64) -> Result<Self> {
        if !mu.is_finite() || !var.is_finite() || var < 0.0 {
            return Err(Error::Domain(format!("invalid normal N({mu}, {var})")));
        }
        Ok(NormalScalar { mu, var })
    }

    pub fn point(mu: f64) -> Self {
        NormalScalar { mu, var: 0.0 }
    }

    pub fn sd(&self) -> f64 {
        self.var.sqrt()
    }
}

/// A multivariate normal law with mean `mu` and covariance `sigma`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalVector {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
}

impl NormalVector {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                got: sigma.nrows(),
            });
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite normal parameters".into()));
        }
        let scale = sigma.amax().max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Domain("covariance is not symmetric".into()));
                }
            }
        }
        let eig = sigma.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|e| *e < -1e-10 * scale) {
            return Err(Error::Domain("covariance is not positive semi-definite".into()));
        }
        Ok(NormalVector { mu, sigma })
    }

    pub fn independent(parts: &[NormalScalar]) -> Self {
        NormalVector {
            mu: DVector::from_iterator(parts.len(), parts.iter().map(|p| p.mu)),
            sigma: DMatrix::from_diagonal(&DVector::from_iterator(
                parts.len(),
                parts.iter().map(|p| p.var),
            )),
        }
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn marginal(&self, k: usize) -> NormalScalar {
        NormalScalar {
            mu: self.mu[k],
            var: self.sigma[(k, k)].max(0.0),
        }
    }
}

#[inline]
pub(crate) fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub(crate) fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// `Φ(hi) - Φ(lo)` without cancellation in the upper tail.
fn cdf_diff(hi: f64, lo: f64) -> f64 {
    if lo > 0.0 {
        norm_cdf(-lo) - norm_cdf(-hi)
    } else {
        norm_cdf(hi) - norm_cdf(lo)
    }
}

/// Standardised `(x - mu) / sigma`, with the point-mass limit for `sigma == 0`.
fn standardize(x: f64, mu: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        (x - mu) / sigma
    } else if x > mu {
        f64::INFINITY
    } else if x < mu {
        f64::NEG_INFINITY
    } else {
        0.0
    }
}

/// Partial normal moment `∫_b^a x^m N(x; μ, σ²) dx` for `m = 0..=4`, with
/// `a = +∞` and `b = -∞` allowed.
pub fn gamma_moment(m: u32, a: f64, b: f64, dist: NormalScalar) -> Result<f64> {
    if m > 4 {
        return Err(Error::Unsupported(format!("partial moment of order {m}")));
    }
    if a.is_nan() || b.is_nan() || b > a {
        return Err(Error::Domain(format!("invalid interval [{b}, {a}]")));
    }
    let (mu, s) = (dist.mu, dist.sd());
    let (s2, s4) = (s * s, s * s * s * s);
    let mass = cdf_diff(standardize(a, mu, s), standardize(b, mu, s));
    // Density-weighted boundary term `poly(x) σ φ((x-μ)/σ)`; zero at ±∞.
    let edge = |x: f64, poly: &dyn Fn(f64) -> f64| -> f64 {
        if x.is_infinite() || s == 0.0 {
            0.0
        } else {
            poly(x) * s * norm_pdf((x - mu) / s)
        }
    };
    let v = match m {
        0 => mass,
        1 => mu * mass + edge(b, &|_| 1.0) - edge(a, &|_| 1.0),
        2 => {
            let p = |x: f64| mu + x;
            (mu * mu + s2) * mass + edge(b, &p) - edge(a, &p)
        }
        3 => {
            let p = |x: f64| x * x + mu * x + mu * mu + 2.0 * s2;
            (mu.powi(3) + 3.0 * mu * s2) * mass + edge(b, &p) - edge(a, &p)
        }
        _ => {
            let p = |x: f64| {
                x.powi(3) + mu.powi(3) + mu * mu * x + mu * x * x + 3.0 * s2 * x + 5.0 * s2 * mu
            };
            (mu.powi(4) + 3.0 * s4 + 6.0 * mu * mu * s2) * mass + edge(b, &p) - edge(a, &p)
        }
    };
    Ok(v)
}

const MAX_ORDER: usize = 6;

/// `E[(X - c)^n exp(-a (X - c)); X > c]` for `n = 0..=nmax`, `X ~ N(μ, σ²)`.
///
/// With `t0 = (μ - c)/σ` and `s = t0 - aσ` the moment equals
/// `σ^n exp(-aσ(s + aσ/2)) I_n(s)` where `I_n(s) = E[V^n; V > 0]` for
/// `V ~ N(s, 1)`. For `s < 0` the prefactor is rewritten as `φ(t0)/φ(s)` and
/// the ratio `J_n = I_n / φ(s)` is used instead, so no exponent is ever
/// positive.
fn upper_tail(nmax: usize, mu: f64, sigma: f64, c: f64, a: f64) -> [f64; MAX_ORDER + 1] {
    debug_assert!(nmax <= MAX_ORDER);
    let mut out = [0.0; MAX_ORDER + 1];
    let t0 = if sigma > 0.0 { (mu - c) / sigma } else { f64::NAN };
    if !t0.is_finite() {
        // Point mass (or a mass so concentrated that it is one numerically).
        let d = mu - c;
        if d > 0.0 {
            let e = (-a * d).exp();
            for (n, o) in out.iter_mut().enumerate().take(nmax + 1) {
                *o = d.powi(n as i32) * e;
            }
        }
        return out;
    }
    let s = t0 - a * sigma;
    let mut ratios = [0.0; MAX_ORDER + 1];
    let prefactor;
    if s >= 0.0 {
        prefactor = (-a * sigma * (s + 0.5 * a * sigma)).exp();
        ratios[0] = norm_cdf(s);
        if nmax >= 1 {
            ratios[1] = s * ratios[0] + norm_pdf(s);
        }
        for n in 2..=nmax {
            ratios[n] = s * ratios[n - 1] + (n - 1) as f64 * ratios[n - 2];
        }
    } else {
        prefactor = norm_pdf(t0);
        if prefactor == 0.0 {
            return out;
        }
        if s >= -2.0 {
            ratios[0] = norm_cdf(s) / norm_pdf(s);
            if nmax >= 1 {
                ratios[1] = s * ratios[0] + 1.0;
            }
            for n in 2..=nmax {
                ratios[n] = s * ratios[n - 1] + (n - 1) as f64 * ratios[n - 2];
            }
        } else {
            // r_n = I_n / I_{n-1} satisfies r_n = n / (r_{n+1} - s); iterate
            // it downwards from a deep start, where it is contracting.
            let depth = ((20.0 / s).powi(2)).ceil() as usize + nmax + 8;
            let mut r = (depth as f64).sqrt();
            let mut r_low = [0.0; MAX_ORDER + 2];
            for n in (1..=depth).rev() {
                r = n as f64 / (r - s);
                if n <= nmax + 1 {
                    r_low[n] = r;
                }
            }
            ratios[0] = 1.0 / (r_low[1] - s);
            for n in 1..=nmax {
                ratios[n] = ratios[n - 1] * r_low[n];
            }
        }
    }
    let mut sp = 1.0;
    for n in 0..=nmax {
        out[n] = sp * prefactor * ratios[n];
        sp *= sigma;
    }
    out
}

/// `E[(c - X)^n exp(-a (c - X)); X < c]` by reflecting `X -> -X`.
fn lower_tail(nmax: usize, mu: f64, sigma: f64, c: f64, a: f64) -> [f64; MAX_ORDER + 1] {
    upper_tail(nmax, -mu, sigma, -c, a)
}

fn dot(coefs: &[f64], moments: &[f64]) -> f64 {
    coefs.iter().zip(moments).map(|(c, m)| c * m).sum()
}

/// Central moments `E[(X - μ)^n]` for `n = 0..=nmax`.
fn central_moments(nmax: usize, sigma: f64) -> [f64; MAX_ORDER + 1] {
    let mut out = [0.0; MAX_ORDER + 1];
    out[0] = 1.0;
    for n in (2..=nmax).step_by(2) {
        out[n] = out[n - 2] * (n - 1) as f64 * sigma * sigma;
    }
    out
}

/// `E[M(X - w1); w1 < X < w2]` for a polynomial `M` satisfying
/// `M(u) = M(w2 - w1 - u)`. The evaluation route is chosen so that the
/// difference being formed is never between two nearly equal large numbers.
fn interval_moment(m: &[f64], mu: f64, sigma: f64, w1: f64, w2: f64) -> f64 {
    let deg = m.len() - 1;
    let delta = w2 - w1;
    let upper_part = |mu: f64, w1: f64, w2: f64| {
        let from_w1 = dot(m, &upper_tail(deg, mu, sigma, w1, 0.0));
        let beyond = dot(&poly::shift(m, delta), &upper_tail(deg, mu, sigma, w2, 0.0));
        from_w1 - beyond
    };
    if w1 >= mu {
        upper_part(mu, w1, w2)
    } else if w2 <= mu {
        // Mirror image; the symmetry of M makes the integrand keep its form.
        upper_part(-mu, -w2, -w1)
    } else {
        let total = dot(&poly::shift(m, mu - w1), &central_moments(deg, sigma));
        let above = dot(&poly::shift(m, delta), &upper_tail(deg, mu, sigma, w2, 0.0));
        let below = dot(&poly::reflect(m), &lower_tail(deg, mu, sigma, w1, 0.0));
        total - above - below
    }
}

/// `ξ = E[c(W, w)]` for `W ~ dist` and the one-dimensional kernel `kind`.
pub fn xi(kind: KernelKind, gamma: f64, dist: NormalScalar, w: f64) -> f64 {
    let sigma = dist.sd();
    if sigma == 0.0 {
        return kind.eval(gamma, dist.mu - w);
    }
    match kind.poly_exp(gamma) {
        None => {
            let (g2, s2) = (gamma * gamma, dist.var);
            let d = dist.mu - w;
            (-d * d / (2.0 * s2 + g2)).exp() / (1.0 + 2.0 * s2 / g2).sqrt()
        }
        Some((p, a)) => {
            let deg = p.len() - 1;
            let up = upper_tail(deg, dist.mu, sigma, w, a);
            let lo = lower_tail(deg, dist.mu, sigma, w, a);
            dot(&p, &up) + dot(&p, &lo)
        }
    }
}

/// `ψ = E[W c(W, w)]`.
pub fn psi(kind: KernelKind, gamma: f64, dist: NormalScalar, w: f64) -> f64 {
    let sigma = dist.sd();
    if sigma == 0.0 {
        return dist.mu * kind.eval(gamma, dist.mu - w);
    }
    match kind.poly_exp(gamma) {
        None => {
            let (g2, s2) = (gamma * gamma, dist.var);
            let x = xi(kind, gamma, dist, w);
            x * (2.0 * s2 * w + g2 * dist.mu) / (2.0 * s2 + g2)
        }
        Some((p, a)) => {
            // E[W c] = w ξ + E[(W - w) c]; the second term shifts every
            // partial moment up by one order, negated below w.
            let deg = p.len();
            let up = upper_tail(deg, dist.mu, sigma, w, a);
            let lo = lower_tail(deg, dist.mu, sigma, w, a);
            let xi_v = dot(&p, &up[..deg]) + dot(&p, &lo[..deg]);
            let mut shifted = 0.0;
            for (n, c) in p.iter().enumerate() {
                shifted += c * (up[n + 1] - lo[n + 1]);
            }
            w * xi_v + shifted
        }
    }
}

/// `ζ = E[c(W, wi) c(W, wj)]`. The arguments are put in increasing order
/// first, so the result is exactly symmetric.
pub fn zeta(kind: KernelKind, gamma: f64, dist: NormalScalar, wi: f64, wj: f64) -> f64 {
    let (w1, w2) = if wi <= wj { (wi, wj) } else { (wj, wi) };
    let sigma = dist.sd();
    if sigma == 0.0 {
        return kind.eval(gamma, dist.mu - w1) * kind.eval(gamma, dist.mu - w2);
    }
    match kind.poly_exp(gamma) {
        None => {
            let (g2, s2) = (gamma * gamma, dist.var);
            let mid = 0.5 * (w1 + w2) - dist.mu;
            let diff = w1 - w2;
            (-mid * mid / (0.5 * g2 + 2.0 * s2) - diff * diff / (2.0 * g2)).exp()
                / (1.0 + 4.0 * s2 / g2).sqrt()
        }
        Some((p, a)) => {
            let delta = w2 - w1;
            let damp = (-a * delta).exp();
            // Outside [w1, w2] the product is Q(u) exp(-2a u) exp(-a δ) with u
            // the distance to the nearer end point.
            let q = poly::mul(&p, &poly::shift(&p, delta));
            let deg = q.len() - 1;
            let above = dot(&q, &upper_tail(deg, dist.mu, sigma, w2, 2.0 * a));
            let below = dot(&q, &lower_tail(deg, dist.mu, sigma, w1, 2.0 * a));
            let mut total = above + below;
            if delta > 0.0 {
                // Inside, P(u) P(δ - u) exp(-a δ) with u = x - w1.
                let m = poly::mul(&p, &poly::reflect(&poly::shift(&p, delta)));
                total += interval_moment(&m, dist.mu, sigma, w1, w2);
            }
            damp * total
        }
    }
}

/// Below this `σ²/γ²` the covariances `ζ - ξξ'` are integrated directly.
pub const NARROW_RATIO: f64 = 1e-4;
const NARROW_NODES: usize = 48;
const NARROW_HALF_WIDTH: f64 = 10.0;

fn legendre() -> &'static [(f64, f64)] {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(NARROW_NODES).unwrap()))
        .as_node_weight_pairs()
}

/// `Cov[c(W, w_a), c(W, w_b)]` for all pairs of `w`, when `σ²/γ² <
/// NARROW_RATIO`. There the closed forms for `ζ` and `ξξ'` agree to about
/// `1 - σ²/γ²` and their difference keeps only an absolute precision, which
/// an ill-conditioned `R⁻¹` amplifies. Integrating the products of centred
/// differences `c(W, w) - c(μ, w)` keeps a relative one. Gauss–Legendre
/// pieces cover `μ ± 10σ`, split at every kernel kink in range.
pub fn narrow_covariance(kind: KernelKind, gamma: f64, dist: NormalScalar, w: &[f64]) -> Option<DMatrix<f64>> {
    let sigma = dist.sd();
    if sigma == 0.0 || dist.var >= NARROW_RATIO * gamma * gamma {
        return None;
    }
    let (lo, hi) = (dist.mu - NARROW_HALF_WIDTH * sigma, dist.mu + NARROW_HALF_WIDTH * sigma);
    let mut breaks: Vec<f64> = w.iter().copied().filter(|v| *v > lo && *v < hi).collect();
    breaks.push(lo);
    breaks.push(hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for p in breaks.windows(2) {
        let (c, h) = (0.5 * (p[0] + p[1]), 0.5 * (p[1] - p[0]));
        for &(t, wt) in legendre() {
            let x = c + h * t;
            let z = (x - dist.mu) / sigma;
            nodes.push(x);
            weights.push(wt * h * (-0.5 * z * z).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    let m = w.len();
    let n = nodes.len();
    // Rows: weighted centred differences; the covariance is a Gram matrix.
    let mut diff = DMatrix::zeros(m, n);
    let mut mean = DVector::zeros(m);
    for (i, wi) in w.iter().enumerate() {
        let at_mu = kind.eval(gamma, dist.mu - wi);
        for k in 0..n {
            let d = kind.eval(gamma, nodes[k] - wi) - at_mu;
            diff[(i, k)] = d;
            mean[i] += weights[k] * d;
        }
    }
    mean /= total;
    let mut scaled = diff.clone();
    for k in 0..n {
        let s = weights[k] / total;
        scaled.column_mut(k).scale_mut(s);
    }
    let mut cov = &scaled * diff.transpose() - &mean * mean.transpose();
    // Exact symmetry for the downstream quadratic forms.
    for i in 0..m {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Some(cov)
}

/// Squared-exponential kernel expectations under a multivariate normal
/// input, with the matrix inverses shared across evaluations.
#[derive(Clone, Debug)]
pub struct SeMvnMoments {
    gammas: Vec<f64>,
    mu: DVector<f64>,
    xi_scale: f64,
    lam_sigma_inv: DMatrix<f64>,
    zeta_scale: f64,
    gam_sigma_inv: DMatrix<f64>,
    // Λ(Λ+Σ)⁻¹μ and Σ(Λ+Σ)⁻¹
    psi_offset: DVector<f64>,
    psi_gain: DMatrix<f64>,
}

impl SeMvnMoments {
    pub fn new(kind: KernelKind, gammas: &[f64], dist: &NormalVector) -> Result<Self> {
        if kind != KernelKind::SquaredExponential {
            return Err(Error::Unsupported(format!(
                "dependent-input moments need the squared exponential kernel, got {}",
                kind.name()
            )));
        }
        let d = dist.dim();
        if gammas.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: gammas.len(),
            });
        }
        let lam = DMatrix::from_diagonal(&DVector::from_iterator(d, gammas.iter().map(|g| g * g / 2.0)));
        let gam = DMatrix::from_diagonal(&DVector::from_iterator(d, gammas.iter().map(|g| g * g / 4.0)));
        let sigma = dist.sigma();
        let inverse_and_ratio = |base: &DMatrix<f64>| -> Result<(DMatrix<f64>, f64)> {
            let sum = base + sigma;
            let chol = sum
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Domain("Λ + Σ is not positive definite".into()))?;
            let log_det_sum: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
            let log_det_base: f64 = base.diagonal().iter().map(|x| x.ln()).sum();
            Ok((chol.inverse(), (-0.5 * (log_det_sum - log_det_base)).exp()))
        };
        let (lam_sigma_inv, xi_scale) = inverse_and_ratio(&lam)?;
        let (gam_sigma_inv, zeta_scale) = inverse_and_ratio(&gam)?;
        let psi_offset = &lam * &lam_sigma_inv * dist.mu();
        let psi_gain = sigma * &lam_sigma_inv;
        Ok(SeMvnMoments {
            gammas: gammas.to_vec(),
            mu: dist.mu().clone(),
            xi_scale,
            lam_sigma_inv,
            zeta_scale,
            gam_sigma_inv,
            psi_offset,
            psi_gain,
        })
    }

    fn check(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.mu.len() {
            return Err(Error::Dimension {
                expected: self.mu.len(),
                got: w.len(),
            });
        }
        Ok(())
    }

    pub fn xi(&self, w: &[f64]) -> Result<f64> {
        self.check(w)?;
        let r = DVector::from_column_slice(w) - &self.mu;
        Ok(self.xi_scale * (-0.5 * r.dot(&(&self.lam_sigma_inv * &r))).exp())
    }

    pub fn zeta(&self, wi: &[f64], wj: &[f64]) -> Result<f64> {
        self.check(wi)?;
        self.check(wj)?;
        let mut spread = 0.0;
        for k in 0..wi.len() {
            let d = wi[k] - wj[k];
            spread += d * d / (2.0 * self.gammas[k] * self.gammas[k]);
        }
        let mid = DVector::from_iterator(wi.len(), wi.iter().zip(wj).map(|(a, b)| 0.5 * (a + b))) - &self.mu;
        let quad = mid.dot(&(&self.gam_sigma_inv * &mid));
        Ok(self.zeta_scale * (-spread - 0.5 * quad).exp())
    }

    pub fn psi(&self, l: usize, w: &[f64]) -> Result<f64> {
        if l >= self.mu.len() {
            return Err(Error::Dimension {
                expected: self.mu.len(),
                got: l + 1,
            });
        }
        let xi = self.xi(w)?;
        let shifted = self.psi_offset[l] + self.psi_gain.row(l).iter().zip(w).map(|(g, x)| g * x).sum::<f64>();
        Ok(shifted * xi)
    }
}

/// `E[c(W, w)]` for a multivariate normal `W` and the product SE kernel.
pub fn xi_mv(kind: KernelKind, gammas: &[f64], dist: &NormalVector, w: &[f64]) -> Result<f64> {
    SeMvnMoments::new(kind, gammas, dist)?.xi(w)
}

/// `E[c(W, wi) c(W, wj)]` for a multivariate normal `W`.
pub fn zeta_mv(
    kind: KernelKind,
    gammas: &[f64],
    dist: &NormalVector,
    wi: &[f64],
    wj: &[f64],
) -> Result<f64> {
    SeMvnMoments::new(kind, gammas, dist)?.zeta(wi, wj)
}

/// `E[W_l c(W, w)]` for a multivariate normal `W`.
pub fn psi_mv(kind: KernelKind, l: usize, gammas: &[f64], dist: &NormalVector, w: &[f64]) -> Result<f64> {
    SeMvnMoments::new(kind, gammas, dist)?.psi(l, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(mu: f64, var: f64) -> NormalScalar {
        NormalScalar::new(mu, var).unwrap()
    }

    #[test]
    fn gamma_moment_basics() {
        let inf = f64::INFINITY;
        assert!((gamma_moment(0, inf, -inf, n(0.3, 2.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!((gamma_moment(1, inf, -inf, n(3.0, 1.0)).unwrap() - 3.0).abs() < 1e-14);
        assert!((gamma_moment(4, inf, -inf, n(0.0, 1.0)).unwrap() - 3.0).abs() < 1e-14);
        assert!(gamma_moment(5, 1.0, 0.0, n(0.0, 1.0)).is_err());
    }

    #[test]
    fn se_closed_form_substitutions() {
        let g = 0.8;
        let v = xi(KernelKind::SquaredExponential, g, n(0.4, g * g), 0.4);
        assert!((v - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        let s2: f64 = 0.3;
        let p = psi(KernelKind::SquaredExponential, g, n(0.4, s2), 0.4);
        assert!((p - 0.4 / (1.0 + 2.0 * s2 / (g * g)).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn point_mass_limits() {
        for kind in KernelKind::ALL {
            let d = n(0.3, 0.0);
            let (c1, c2) = (kind.eval(0.7, 0.3 - 0.9), kind.eval(0.7, 0.3 + 0.1));
            assert_eq!(xi(kind, 0.7, d, 0.9), c1);
            assert_eq!(zeta(kind, 0.7, d, 0.9, -0.1), c2 * c1);
            assert_eq!(psi(kind, 0.7, d, 0.9), 0.3 * c1);
        }
    }

    #[test]
    fn tail_recurrence_branches_agree() {
        // The forward and continued-fraction branches meet at s = -2.
        let a = upper_tail(5, -2.0 + 1e-12, 1.0, 0.0, 0.0);
        let b = upper_tail(5, -2.0 - 1e-12, 1.0, 0.0, 0.0);
        for k in 0..=5 {
            assert!((a[k] / b[k] - 1.0).abs() < 1e-9, "order {k}: {} vs {}", a[k], b[k]);
        }
    }

    #[test]
    fn mv_rejects_other_kernels() {
        let d = NormalVector::independent(&[n(0.0, 1.0)]);
        assert!(matches!(
            xi_mv(KernelKind::Matern25, &[1.0], &d, &[0.0]),
            Err(Error::Unsupported(_))
        ));
    }
}
