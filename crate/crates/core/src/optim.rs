//! Bounded Nelder–Mead minimisation on top of `argmin`.

use argmin::core::{CostFunction, Error as ArgminError, Executor, State};
use argmin::solver::neldermead::NelderMead;

/// Large finite stand-in for an infeasible point; the simplex treats it as
/// simply very bad.
const INFEASIBLE: f64 = 1e300;

struct Boxed<'a, F> {
    f: &'a F,
    lower: &'a [f64],
    upper: &'a [f64],
}

impl<F: Fn(&[f64]) -> f64> CostFunction for Boxed<'_, F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> Result<f64, ArgminError> {
        // Evaluate at the projection onto the box and add a quadratic penalty
        // for the distance outside it.
        let mut excess = 0.0;
        let x: Vec<f64> = p
            .iter()
            .zip(self.lower.iter().zip(self.upper))
            .map(|(v, (lo, hi))| {
                let c = v.clamp(*lo, *hi);
                excess += (v - c) * (v - c);
                c
            })
            .collect();
        let v = (self.f)(&x);
        Ok(if v.is_finite() { v + 1e3 * excess } else { INFEASIBLE })
    }
}

pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
}

/// Minimise `f` inside the box `[lower, upper]` starting from `x0`.
pub(crate) fn minimize<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    step: f64,
    lower: &[f64],
    upper: &[f64],
    tolerance: f64,
    max_iterations: u64,
) -> Option<Minimum> {
    let n = x0.len();
    let mut simplex = vec![x0.to_vec()];
    for k in 0..n {
        let mut v = x0.to_vec();
        // Step inwards if the outward step would leave the box.
        v[k] = if v[k] + step <= upper[k] { v[k] + step } else { v[k] - step };
        simplex.push(v);
    }
    let problem = Boxed { f, lower, upper };
    let solver = NelderMead::new(simplex).with_sd_tolerance(tolerance).ok()?;
    let res = Executor::new(problem, solver)
        .configure(|s| s.max_iters(max_iterations))
        .run()
        .ok()?;
    let state = res.state();
    let best = state.get_best_param()?.clone();
    let value = state.get_best_cost();
    if !(value < INFEASIBLE) {
        return None;
    }
    let x = best
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
        .collect();
    Some(Minimum { x, value })
}
