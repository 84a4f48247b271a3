//! Dense univariate polynomials stored lowest order first.

pub(crate) fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Coefficients of `q(u) = p(u + h)`.
pub(crate) fn shift(p: &[f64], h: f64) -> Vec<f64> {
    // Horner in the shifted variable: q = (...(p_n (u+h) + p_{n-1})(u+h) + ...)
    let mut q = vec![0.0; p.len()];
    for &c in p.iter().rev() {
        for k in (1..q.len()).rev() {
            q[k] = q[k - 1] + h * q[k];
        }
        q[0] = c + h * q[0];
    }
    q
}

/// Coefficients of `q(u) = p(-u)`.
pub(crate) fn reflect(p: &[f64]) -> Vec<f64> {
    p.iter()
        .enumerate()
        .map(|(n, c)| if n % 2 == 1 { -c } else { *c })
        .collect()
}

#[cfg(test)]
pub(crate) fn eval(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * x + c)
}
