//! Central-difference gradient oracle.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::TensorError;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Compares reverse-mode gradients of a scalar function against central
/// differences `(f(x+h) − f(x−h)) / 2h`, coordinate by coordinate.
///
/// The error per coordinate is `|analytic − numeric| / max(1, |numeric|)`.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub h: f64,
    /// Coordinates sampled across all inputs; every coordinate is checked when
    /// the inputs hold fewer than this many.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { h: 1e-4, max_coords: usize::MAX, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub coords_checked: usize,
    /// (input, flat index) of the worst coordinate.
    pub worst: (usize, usize),
}

impl GradCheck {
    pub fn new(h: f64) -> Self {
        Self { h, ..Self::default() }
    }

    pub fn sampled(mut self, max_coords: usize, seed: u64) -> Self {
        self.max_coords = max_coords;
        self.seed = seed;
        self
    }

    pub fn run<F, E>(&self, point: &[Tensor<f64>], f: F) -> Result<GradCheckReport, E>
    where
        F: Fn(&Graph<f64>, &[Var]) -> Result<Var, E>,
        E: From<TensorError>,
    {
        let eval = |inputs: &[Tensor<f64>]| -> Result<f64, E> {
            let g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
            let out = f(&g, &vars)?;
            let v = g.value(out).item();
            Ok(v)
        };

        let g = Graph::new();
        let vars: Vec<Var> = point.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&g, &vars)?;
        g.backward(out)?;
        let analytic: Vec<Tensor<f64>> = vars
            .iter()
            .zip(point)
            .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();

        let offsets: Vec<usize> = point
            .iter()
            .scan(0, |acc, t| {
                let start = *acc;
                *acc += t.numel();
                Some(start)
            })
            .collect();
        let total: usize = point.iter().map(|t| t.numel()).sum();
        let coords: Vec<usize> = if total <= self.max_coords {
            (0..total).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let mut picked = index::sample(&mut rng, total, self.max_coords).into_vec();
            picked.sort_unstable();
            picked
        };

        let mut work = point.to_vec();
        let mut report = GradCheckReport { max_relative_error: 0.0, coords_checked: 0, worst: (0, 0) };
        for flat in coords {
            let input = offsets.partition_point(|&o| o <= flat) - 1;
            let i = flat - offsets[input];
            let orig = work[input].data()[i];
            work[input].data_mut()[i] = orig + self.h;
            let plus = eval(&work)?;
            work[input].data_mut()[i] = orig - self.h;
            let minus = eval(&work)?;
            work[input].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(TensorError::NonFinite { input, index: i }.into());
            }
            let numeric = (plus - minus) / (2.0 * self.h);
            let err = (analytic[input].data()[i] - numeric).abs() / numeric.abs().max(1.0);
            if report.coords_checked == 0 || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (input, i);
            }
            report.coords_checked += 1;
        }
        Ok(report)
    }
}

/// Max relative error over every coordinate of `point`.
pub fn grad_check<F, E>(point: &[Tensor<f64>], h: f64, f: F) -> Result<f64, E>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    GradCheck::new(h).run(point, f).map(|r| r.max_relative_error)
}
