//! Leapfrog-integrated Metropolis proposals with an identity mass matrix.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Unnormalized log density over `R^dim` with its gradient.
pub trait LogDensity {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density. May
    /// return a non-finite value, which the sampler treats as rejection.
    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64;
}

/// Current point of a chain with its cached log density and gradient.
#[derive(Debug, Clone)]
pub struct Point {
    pub position: Vec<f64>,
    pub log_density: f64,
    pub grad: Vec<f64>,
}

impl Point {
    pub fn new<T: LogDensity + ?Sized>(target: &T, position: Vec<f64>) -> Self {
        let mut grad = vec![0.0; position.len()];
        let log_density = target.log_density_and_grad(&position, &mut grad);
        Self {
            position,
            log_density,
            grad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    /// `min(1, exp(-dH))`, zero for non-finite trajectories.
    pub accept_prob: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leapfrog {
    pub step_size: f64,
    pub steps: usize,
}

impl Leapfrog {
    /// One HMC transition from `current`, replacing it on acceptance.
    pub fn transition<T, R>(&self, target: &T, current: &mut Point, rng: &mut R) -> Transition
    where
        T: LogDensity + ?Sized,
        R: Rng + ?Sized,
    {
        let n = current.position.len();
        let mut momentum: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let kinetic0 = 0.5 * momentum.iter().map(|p| p * p).sum::<f64>();
        let h0 = -current.log_density + kinetic0;

        let eps = self.step_size;
        let mut position = current.position.clone();
        let mut grad = current.grad.clone();
        let mut log_density = current.log_density;
        for _ in 0..self.steps {
            for (p, g) in momentum.iter_mut().zip(&grad) {
                *p += 0.5 * eps * g;
            }
            for (x, p) in position.iter_mut().zip(&momentum) {
                *x += eps * p;
            }
            log_density = target.log_density_and_grad(&position, &mut grad);
            if !log_density.is_finite() {
                break;
            }
            for (p, g) in momentum.iter_mut().zip(&grad) {
                *p += 0.5 * eps * g;
            }
        }

        let kinetic1 = 0.5 * momentum.iter().map(|p| p * p).sum::<f64>();
        let h1 = -log_density + kinetic1;
        let accept_prob = if h1.is_finite() {
            (h0 - h1).exp().min(1.0)
        } else {
            0.0
        };
        let u: f64 = rng.random();
        let accepted = u < accept_prob;
        if accepted {
            current.position = position;
            current.grad = grad;
            current.log_density = log_density;
        }
        Transition {
            accept_prob,
            accepted,
        }
    }
}
