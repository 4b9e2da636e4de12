//! Maximum likelihood for `z = Hθ + μ + w + d` with Gaussian `w` and i.i.d.
//! Laplace or Cauchy `d`, solved with BFGS.

use std::cell::RefCell;
use std::rc::Rc;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::BFGS;
use nalgebra::{DMatrix, DVector};

use super::likelihood::{LaplaceGauss, Voigt};

pub const GRAD_TOL: f64 = 1e-8;
pub const MAX_ITERS: u64 = 500;
/// Gradient norm below which a returned point counts as converged.
pub const CONVERGED_GRAD: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Kernel {
    Laplace(LaplaceGauss),
    Voigt(Voigt),
}

impl Kernel {
    fn ln_pdf(&self, x: f64) -> f64 {
        match self {
            Kernel::Laplace(k) => k.ln_pdf(x),
            Kernel::Voigt(k) => k.ln_pdf(x),
        }
    }

    fn score(&self, x: f64) -> f64 {
        match self {
            Kernel::Laplace(k) => k.score(x),
            Kernel::Voigt(k) => k.score(x),
        }
    }
}

/// Cap on cost plus gradient evaluations of one fit.
const MAX_EVALS: usize = 5000;
const STOP: &str = "gradient tolerance met";

#[derive(Debug, Default)]
struct Track {
    evals: usize,
    grads: u64,
    best: Option<(Vec<f64>, f64)>,
}

impl Track {
    fn offer(&mut self, p: &[f64], v: f64) {
        if v.is_finite() && self.best.as_ref().is_none_or(|(_, b)| v < *b) {
            self.best = Some((p.to_vec(), v));
        }
    }
}

/// Negative log-likelihood in θ given centered data `r = z - μ`.
pub(crate) struct NegLogLik<'a> {
    pub h: &'a DMatrix<f64>,
    pub r: &'a DVector<f64>,
    pub kernels: &'a [Kernel],
    track: Rc<RefCell<Track>>,
}

impl<'a> NegLogLik<'a> {
    pub fn new(h: &'a DMatrix<f64>, r: &'a DVector<f64>, kernels: &'a [Kernel]) -> Self {
        Self {
            h,
            r,
            kernels,
            track: Rc::default(),
        }
    }

    fn tick(&self) -> Result<(), argmin::core::Error> {
        let mut t = self.track.borrow_mut();
        t.evals += 1;
        if t.evals > MAX_EVALS {
            return Err(argmin::core::Error::msg("evaluation budget exhausted"));
        }
        Ok(())
    }

    fn residuals(&self, theta: &[f64]) -> DVector<f64> {
        self.r - self.h * DVector::from_column_slice(theta)
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let x = self.residuals(theta);
        -self.kernels.iter().zip(x.iter()).map(|(k, xi)| k.ln_pdf(*xi)).sum::<f64>()
    }

    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        let x = self.residuals(theta);
        let psi = DVector::from_iterator(x.len(), self.kernels.iter().zip(x.iter()).map(|(k, xi)| k.score(*xi)));
        (self.h.transpose() * psi).iter().copied().collect()
    }
}

impl CostFunction for NegLogLik<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> Result<f64, argmin::core::Error> {
        self.tick()?;
        let v = self.value(p);
        self.track.borrow_mut().offer(p, v);
        Ok(v)
    }
}

impl Gradient for NegLogLik<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Self::Param) -> Result<Vec<f64>, argmin::core::Error> {
        self.tick()?;
        self.track.borrow_mut().grads += 1;
        let g = self.grad(p);
        // The line search can cycle at the precision floor; stop once a point
        // meets the gradient tolerance.
        if grad_norm(&g) <= GRAD_TOL {
            let v = self.value(p);
            self.track.borrow_mut().offer(p, v);
            return Err(argmin::core::Error::msg(STOP));
        }
        Ok(g)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Fit {
    pub theta: Vec<f64>,
    pub cost: f64,
    /// Solver iterations, or gradient evaluations when the run stopped early.
    pub iterations: u64,
    pub converged: bool,
}

fn grad_norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn minimize(problem: NegLogLik<'_>, init: Vec<f64>) -> Fit {
    let n = init.len();
    let start_cost = problem.value(&init);
    let start_grad = grad_norm(&problem.grad(&init));
    if start_grad <= GRAD_TOL || !start_cost.is_finite() {
        return Fit {
            theta: init,
            cost: start_cost,
            iterations: 0,
            converged: start_grad <= CONVERGED_GRAD,
        };
    }
    problem.track.borrow_mut().offer(&init, start_cost);
    let eye: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let solver = BFGS::new(MoreThuenteLineSearch::new())
        .with_tolerance_grad(GRAD_TOL)
        .expect("positive tolerance");
    let (h, r, kernels) = (problem.h, problem.r, problem.kernels);
    let track = Rc::clone(&problem.track);
    let run = Executor::new(problem, solver)
        .configure(|s| s.param(init).inv_hessian(eye).max_iters(MAX_ITERS))
        .run();
    let iterations = match &run {
        Ok(res) => res.state().get_iter(),
        Err(_) => track.borrow().grads,
    };
    let (theta, cost) = track.borrow_mut().best.take().expect("start point offered");
    let check = NegLogLik::new(h, r, kernels);
    let converged = grad_norm(&check.grad(&theta)) <= CONVERGED_GRAD;
    Fit {
        theta,
        cost,
        iterations,
        converged,
    }
}
