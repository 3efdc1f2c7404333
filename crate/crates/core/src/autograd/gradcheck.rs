//! Central finite-difference gradient checking.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Var};
use crate::error::{arg_err, Result};
use crate::tensor::Tensor;

/// Denominator floor of the relative error, so exact zeros compare as absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `(input index, flat element index)` of every checked coordinate.
    pub coordinates: Vec<(usize, usize)>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

/// Configurable checker over several inputs, optionally on a random subset of coordinates.
#[derive(Clone, Debug)]
pub struct GradCheck {
    eps: f64,
    tol: f64,
    sample: Option<(usize, u64)>,
}

impl GradCheck {
    pub fn new(eps: f64, tol: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(arg_err!("finite-difference step must be positive, got {eps}"));
        }
        Ok(GradCheck { eps, tol, sample: None })
    }

    /// Check only `count` coordinates drawn uniformly (without replacement) from all inputs.
    pub fn sampled(mut self, count: usize, seed: u64) -> Self {
        self.sample = Some((count, seed));
        self
    }

    pub fn run<F>(&self, f: F, inputs: &[Tensor<f64>]) -> Result<GradCheckReport>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let root = f(&mut g, &vars)?;
        g.backward(root)?;
        let grads: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad(v).expect("leaf grad")).collect();

        let mut all: Vec<(usize, usize)> = Vec::new();
        for (i, t) in inputs.iter().enumerate() {
            all.extend((0..t.len()).map(|j| (i, j)));
        }
        let coordinates = match self.sample {
            Some((count, seed)) if count < all.len() => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, all.len(), count).into_vec();
                picked.sort_unstable();
                picked.into_iter().map(|k| all[k]).collect()
            }
            _ => all,
        };

        let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
            let mut g = Graph::new();
            let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
            let root = f(&mut g, &vars)?;
            g.value(root).item()
        };

        let mut work = inputs.to_vec();
        let mut analytic = Vec::with_capacity(coordinates.len());
        let mut numeric = Vec::with_capacity(coordinates.len());
        for &(i, j) in &coordinates {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + self.eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - self.eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * self.eps));
            analytic.push(grads[i].data()[j]);
        }
        let rel_errors: Vec<f64> = analytic.iter().zip(&numeric).map(|(&a, &n)| relative_error(a, n)).collect();
        let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
        Ok(GradCheckReport {
            coordinates,
            analytic,
            numeric,
            rel_errors,
            max_rel_error,
            tol: self.tol,
            passed: max_rel_error < self.tol,
        })
    }
}

/// Compares the analytic gradient of scalar `f` at `x` against `(f(x+ε) − f(x−ε)) / 2ε`.
pub fn check_gradient<F>(f: F, x: &Tensor<f64>, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    GradCheck::new(eps, tol)?.run(|g, vars| f(g, vars[0]), std::slice::from_ref(x))
}
