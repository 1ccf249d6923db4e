//! Minimizing-movement (JKO) steps for the interaction energy over particle
//! positions, and the forward gradient flow they approximate.

use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::diagnostics;
use crate::attention::{FieldEvaluator, FieldRequest, HeadEnsemble, TokenCloud};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result, ResultExt};
use crate::scalar::{dot, Scalar};
use crate::sphere;
use crate::weights::{self, RngStream, WeightProcessSpec};

/// Transport plan used in the inner problem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// `u_i` is transported from `prev_i`.
    #[default]
    Identity,
    /// As `Identity`, then the returned cloud is checked against an optimal
    /// assignment to `prev`.
    Assignment,
}

/// Metric of the transport term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityMode {
    /// Plain `W2²/(2τ)`.
    #[default]
    Constant,
    /// Each particle's transport cost divided by its effective mobility
    /// `b(prev_i)`, frozen over the step.
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JkoConfig<T> {
    pub tau: T,
    pub inner_iters: usize,
    pub inner_lr: T,
    pub coupling: Coupling,
    pub mobility_mode: MobilityMode,
}

/// Consecutive increases of the inner objective that count as divergence.
pub const DIVERGENCE_STREAK: usize = 5;

impl<T: Scalar> JkoConfig<T> {
    /// `inner_lr = τ/2`, 50 inner iterations, identity coupling, constant
    /// mobility.
    pub fn new(tau: T) -> Self {
        Self {
            tau,
            inner_iters: 50,
            inner_lr: tau * T::lit(0.5),
            coupling: Coupling::Identity,
            mobility_mode: MobilityMode::Constant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > T::zero()) || !self.tau.is_finite() {
            return Err(Error::invalid("tau", format!("must be > 0, got {}", self.tau)));
        }
        if self.inner_iters == 0 {
            return Err(Error::invalid("inner_iters", "must be >= 1"));
        }
        if !(self.inner_lr > T::zero()) || !self.inner_lr.is_finite() {
            return Err(Error::invalid("inner_lr", format!("must be > 0, got {}", self.inner_lr)));
        }
        Ok(())
    }
}

/// Outcome of one minimizing-movement step.
#[derive(Clone, Debug, PartialEq)]
pub struct JkoStep<T> {
    pub cloud: TokenCloud<T>,
    /// `J(prev) = E(prev)`.
    pub j_initial: T,
    /// `J` at the returned cloud.
    pub j_final: T,
    pub energy: T,
    /// Transport term at the returned cloud.
    pub transport: T,
    /// Inner iterations performed.
    pub iterations: usize,
    /// With [`Coupling::Assignment`], whether the identity is an optimal
    /// coupling between the returned cloud and `prev`.
    pub identity_coupling_optimal: Option<bool>,
}

struct Inner<T: Scalar> {
    eval: FieldEvaluator<T>,
    n: usize,
    dim: usize,
    tau: T,
    prev: Vec<T>,
    /// Transport weights `1 / b(prev_i)` (all 1 for constant mobility).
    weights: Vec<T>,
}

impl<T: Scalar> Inner<T> {
    /// `J(u)` and, if `grad` is given, the per-particle tangential gradient of
    /// `n J`.
    fn objective(&mut self, u: &TokenCloud<T>, ens: &HeadEnsemble<T>, grad: Option<&mut [T]>) -> Result<(T, T, T)> {
        let req = FieldRequest {
            mobility: grad.is_some(),
            kernel_moments: false,
        };
        let field = self.eval.evaluate(u, ens, req)?;
        let x = u.as_flat();
        let d = self.dim;
        let mut transport = T::zero();
        for i in 0..self.n {
            let mut c = T::zero();
            for k in 0..d {
                let diff = x[i * d + k] - self.prev[i * d + k];
                c += diff * diff;
            }
            transport += self.weights[i] * c;
        }
        transport /= T::of_usize(self.n) * (self.tau + self.tau);
        if let Some(g) = grad {
            for i in 0..self.n {
                let r = i * d..(i + 1) * d;
                let gi = &mut g[r.clone()];
                for ((gk, xk), (pk, ek)) in gi
                    .iter_mut()
                    .zip(&x[r.clone()])
                    .zip(self.prev[r.clone()].iter().zip(&field.energy_gradient[r.clone()]))
                {
                    *gk = self.weights[i] * (*xk - *pk) / self.tau + *ek;
                }
                sphere::project_tangent_in_place(&x[r], gi);
            }
        }
        Ok((transport + field.energy, field.energy, transport))
    }
}

/// One step `argmin_u W2²(u, prev)/(2τ) + E(u)` by projected gradient descent
/// from `u = prev`, each particle's step divided by its transport weight.
/// Returns the best iterate.
pub fn jko_step<T: Scalar>(prev: &TokenCloud<T>, ens: &HeadEnsemble<T>, cfg: &JkoConfig<T>) -> Result<JkoStep<T>> {
    cfg.validate()?;
    if prev.dim() != ens.dim() {
        return Err(Error::DimensionMismatch {
            expected: prev.dim(),
            found: ens.dim(),
        });
    }
    let (n, dim) = (prev.len(), prev.dim());
    let weights = match cfg.mobility_mode {
        MobilityMode::Constant => vec![T::one(); n],
        MobilityMode::Softmax => {
            let mut eval = FieldEvaluator::new();
            let req = FieldRequest {
                mobility: true,
                kernel_moments: false,
            };
            eval.evaluate(prev, ens, req)?.inv_mobility_mean.clone()
        }
    };
    let mut inner = Inner {
        eval: FieldEvaluator::new(),
        n,
        dim,
        tau: cfg.tau,
        prev: prev.as_flat().to_vec(),
        weights,
    };
    let mut grad = vec![T::zero(); n * dim];
    let mut u = prev.clone();
    let (j0, e0, _) = inner.objective(&u, ens, Some(&mut grad))?;
    let mut best = (u.clone(), j0, e0, T::zero());
    let mut last = j0;
    let mut streak = 0usize;
    let mut iterations = 0usize;
    for _ in 0..cfg.inner_iters {
        iterations += 1;
        let x = u.as_flat_mut();
        for ((xi, gi), w) in x.chunks_exact_mut(dim).zip(grad.chunks_exact(dim)).zip(&inner.weights) {
            // Scaling by the inverse transport weight keeps the contraction
            // of the transport part at 1 − lr/τ for every particle.
            let lr = cfg.inner_lr / *w;
            for (a, b) in xi.iter_mut().zip(gi) {
                *a -= lr * *b;
            }
            sphere::normalize_in_place(xi).context("jko_solver", "jko_step")?;
        }
        let (j, e, tr) = inner.objective(&u, ens, Some(&mut grad))?;
        if j < best.1 {
            best = (u.clone(), j, e, tr);
        }
        if j > last {
            streak += 1;
            if streak >= DIVERGENCE_STREAK {
                return Err(Error::InnerDivergence {
                    streak,
                    last: j.as_f64(),
                    best: best.1.as_f64(),
                });
            }
        } else {
            streak = 0;
        }
        last = j;
        if dot(&grad, &grad) == T::zero() {
            break;
        }
    }
    let (cloud, j_final, energy, transport) = best;
    let identity_coupling_optimal = match cfg.coupling {
        Coupling::Identity => None,
        Coupling::Assignment => Some(identity_is_optimal(&cloud, prev)),
    };
    Ok(JkoStep {
        cloud,
        j_initial: j0,
        j_final,
        energy,
        transport,
        iterations,
        identity_coupling_optimal,
    })
}

fn identity_is_optimal<T: Scalar>(u: &TokenCloud<T>, prev: &TokenCloud<T>) -> bool {
    let n = u.len();
    let mut cost = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            cost.push(
                u.point(i)
                    .iter()
                    .zip(prev.point(j))
                    .map(|(a, b)| (*a - *b) * (*a - *b))
                    .sum::<T>(),
            );
        }
    }
    let (_, optimal) = assignment::solve(n, &cost);
    let identity: T = (0..n).map(|i| cost[i * n + i]).sum();
    identity <= optimal + T::lit(1e-12) * (T::one() + optimal.abs())
}

/// A JKO run with its per-step reports.
#[derive(Clone, Debug)]
pub struct JkoRun<T> {
    /// Piecewise-constant interpolation: `clouds[k]` holds on `[kτ, (k+1)τ)`.
    pub trajectory: Trajectory<T>,
    pub steps: Vec<JkoStep<T>>,
}

/// Iterates [`jko_step`] on the grid `t_k = kτ` up to `t_final`, advancing
/// the weights by one Euler–Maruyama step of size `τ` after each token step.
pub fn jko_trajectory<T: Scalar>(
    cloud0: TokenCloud<T>,
    ens0: HeadEnsemble<T>,
    spec: &WeightProcessSpec<T>,
    cfg: &JkoConfig<T>,
    t_final: T,
    mut streams: Vec<RngStream>,
) -> Result<JkoRun<T>> {
    cfg.validate()?;
    let steps = grid_steps(cfg.tau, t_final)?;
    let mut traj = Trajectory::new(cfg.tau, 1);
    let mut reports = Vec::with_capacity(steps);
    let mut cloud = cloud0;
    let mut ens = ens0;
    traj.push(0, T::zero(), &cloud, &ens);
    for k in 0..steps {
        let t = T::of_usize(k) * cfg.tau;
        let step = jko_step(&cloud, &ens, cfg).context("jko_solver", "jko_step")?;
        let (drifts, incs) = weights::weight_transition(&ens, spec, t, cfg.tau, &mut streams)
            .context("weight_process", "step_weights")?;
        weights::apply_transition(&mut ens, spec, cfg.tau, &drifts, &incs);
        cloud = step.cloud.clone();
        reports.push(step);
        traj.push(k + 1, T::of_usize(k + 1) * cfg.tau, &cloud, &ens);
    }
    Ok(JkoRun {
        trajectory: traj,
        steps: reports,
    })
}

fn grid_steps<T: Scalar>(h: T, t_final: T) -> Result<usize> {
    if !(t_final > T::zero()) {
        return Err(Error::invalid("t_final", format!("must be > 0, got {t_final}")));
    }
    let steps = (t_final / h).round().to_usize().unwrap_or(0);
    if steps == 0 || (T::of_usize(steps) * h - t_final).abs() > h * T::lit(1e-6) {
        return Err(Error::invalid(
            "t_final",
            format!("{t_final} is not a whole number of steps of {h}"),
        ));
    }
    Ok(steps)
}

/// Forward Euler of the gradient flow that the JKO scheme approximates:
/// `ẋ_i = −∫ DK dΘ` for constant mobility and `−b(x_i) ∫ DK dΘ` for the
/// softmax surrogate, i.e. the attention field with the sign reversed so the
/// energy decreases. Records every `record_every` time units.
#[allow(clippy::too_many_arguments)]
pub fn gradient_flow_reference<T: Scalar>(
    cloud0: TokenCloud<T>,
    ens0: HeadEnsemble<T>,
    spec: &WeightProcessSpec<T>,
    mode: MobilityMode,
    dt: T,
    t_final: T,
    record_every: T,
    mut streams: Vec<RngStream>,
) -> Result<Trajectory<T>> {
    let steps = grid_steps(dt, t_final)?;
    let stride = grid_steps(dt, record_every)?;
    let mut traj = Trajectory::new(dt, stride);
    let mut eval = FieldEvaluator::new();
    let (mut cloud, mut ens) = (cloud0, ens0);
    let dim = cloud.dim();
    let req = FieldRequest {
        mobility: true,
        kernel_moments: false,
    };
    traj.push(0, T::zero(), &cloud, &ens);
    for k in 0..steps {
        let t = T::of_usize(k) * dt;
        let field = eval.evaluate(&cloud, &ens, req)?;
        let x = cloud.as_flat_mut();
        for (i, (xi, gi)) in x.chunks_exact_mut(dim).zip(field.energy_gradient.chunks_exact(dim)).enumerate() {
            let b = match mode {
                MobilityMode::Constant => T::one(),
                MobilityMode::Softmax => field.effective_mobility(i),
            };
            for (a, g) in xi.iter_mut().zip(gi) {
                *a -= dt * b * *g;
            }
            sphere::normalize_in_place(xi).context("jko_solver", "reference")?;
        }
        let (drifts, incs) = weights::weight_transition(&ens, spec, t, dt, &mut streams)?;
        weights::apply_transition(&mut ens, spec, dt, &drifts, &incs);
        if (k + 1) % stride == 0 || k + 1 == steps {
            traj.push(k + 1, T::of_usize(k + 1) * dt, &cloud, &ens);
        }
    }
    Ok(traj)
}

/// Distance of a JKO run to the forward gradient flow for one `τ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JkoComparison<T> {
    pub tau: T,
    /// JKO grid times `kτ`.
    pub times: Vec<T>,
    /// `W2` between the JKO cloud and the reference at each grid time.
    pub w2: Vec<T>,
    pub sup_w2: T,
    /// Smallest `E(u_{k−1}) − E(u_k) − W2²(u_k, u_{k−1})/(2τ)` over the steps.
    pub min_slack: T,
}

/// Runs the JKO scheme for each `τ` in `taus` and compares it on its grid
/// with a forward reference of step `ref_dt`. Weights must be deterministic
/// so that all runs see the same weight path; every `τ` must be a multiple
/// of the smallest one.
#[allow(clippy::too_many_arguments)]
pub fn jko_convergence<T: Scalar>(
    cloud0: &TokenCloud<T>,
    ens0: &HeadEnsemble<T>,
    spec: &WeightProcessSpec<T>,
    base: &JkoConfig<T>,
    taus: &[T],
    t_final: T,
    ref_dt: T,
) -> Result<Vec<JkoComparison<T>>> {
    if spec.is_stochastic() {
        return Err(Error::invalid("process", "the comparison needs deterministic weights"));
    }
    let tau_min = taus
        .iter()
        .copied()
        .fold(None, |m: Option<T>, t| Some(m.map_or(t, |m| m.min(t))))
        .ok_or_else(|| Error::invalid("taus", "empty"))?;
    let reference = gradient_flow_reference(
        cloud0.clone(),
        ens0.clone(),
        spec,
        base.mobility_mode,
        ref_dt,
        t_final,
        tau_min,
        Vec::new(),
    )
    .context("jko_solver", "reference")?;
    taus.iter()
        .map(|&tau| {
            let ratio = grid_steps(tau_min, tau)?;
            let cfg = JkoConfig {
                tau,
                inner_lr: base.inner_lr * tau / base.tau,
                ..*base
            };
            let run = jko_trajectory(cloud0.clone(), ens0.clone(), spec, &cfg, t_final, Vec::new())?;
            let mut w2 = Vec::with_capacity(run.trajectory.len());
            for (k, cloud) in run.trajectory.clouds.iter().enumerate() {
                w2.push(diagnostics::w2_squared(cloud, &reference.clouds[k * ratio])?.sqrt());
            }
            let mut min_slack = T::infinity();
            for (k, step) in run.steps.iter().enumerate() {
                let moved = diagnostics::w2_squared(&step.cloud, &run.trajectory.clouds[k])?;
                min_slack = min_slack.min(step.j_initial - step.energy - moved / (T::lit(2.0) * tau));
            }
            Ok(JkoComparison {
                tau,
                times: run.trajectory.times.clone(),
                sup_w2: w2.iter().copied().fold(T::zero(), T::max),
                w2,
                min_slack,
            })
        })
        .collect()
}
