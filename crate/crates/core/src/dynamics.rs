//! Projected explicit Euler integration of the token ODE, coupled to the
//! Euler–Maruyama weight process.

use serde::{Deserialize, Serialize};

use crate::attention::{FieldEval, FieldEvaluator, FieldRequest, HeadEnsemble, TokenCloud};
use crate::error::{Error, Result, ResultExt};
use crate::linalg::SymMatrix;
use crate::scalar::Scalar;
use crate::sphere;
use crate::weights::{self, RngStream, StreamRole, WeightProcessSpec};

/// Which state the token update reads its weights from within one grid step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    /// Weights advance first; tokens then move with the weights at `t_{k+1}`.
    WeightsFirst,
    /// Tokens move with the weights at `t_k`, then the weights advance.
    #[default]
    TokensFirst,
}

/// Time grid and recording options.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationConfig<T> {
    pub dt: T,
    pub t_final: T,
    pub record_stride: usize,
    pub update_order: UpdateOrder,
}

impl<T: Scalar> SimulationConfig<T> {
    /// Uses the default stride `max(1, ⌊0.1 / dt⌋)`.
    pub fn new(dt: T, t_final: T) -> Self {
        Self {
            dt,
            t_final,
            record_stride: default_stride(dt),
            update_order: UpdateOrder::default(),
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn with_order(mut self, order: UpdateOrder) -> Self {
        self.update_order = order;
        self
    }

    /// Number of grid steps `round(T / dt)`.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round().to_usize().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(Error::invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.t_final > T::zero()) || !self.t_final.is_finite() {
            return Err(Error::invalid("t_final", format!("must be > 0, got {}", self.t_final)));
        }
        if self.dt > self.t_final * (T::one() + T::lit(1e-12)) {
            return Err(Error::invalid("dt", "must not exceed t_final"));
        }
        if self.record_stride == 0 {
            return Err(Error::invalid("record_stride", "must be >= 1"));
        }
        let steps = self.steps();
        let mismatch = (T::of_usize(steps) * self.dt - self.t_final).abs();
        if mismatch > self.dt * T::lit(1e-6) {
            return Err(Error::invalid(
                "t_final",
                format!("{} is not a whole number of steps of {}", self.t_final, self.dt),
            ));
        }
        Ok(())
    }
}

pub fn default_stride<T: Scalar>(dt: T) -> usize {
    (T::lit(0.1) / dt).floor().to_usize().unwrap_or(1).max(1)
}

/// Recorded snapshots of a simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    pub dt: T,
    pub record_stride: usize,
    /// Grid index of each snapshot.
    pub steps: Vec<usize>,
    pub times: Vec<T>,
    pub clouds: Vec<TokenCloud<T>>,
    pub ensembles: Vec<HeadEnsemble<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub(crate) fn new(dt: T, record_stride: usize) -> Self {
        Self {
            dt,
            record_stride,
            steps: Vec::new(),
            times: Vec::new(),
            clouds: Vec::new(),
            ensembles: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, step: usize, t: T, cloud: &TokenCloud<T>, ens: &HeadEnsemble<T>) {
        self.steps.push(step);
        self.times.push(t);
        self.clouds.push(cloud.clone());
        self.ensembles.push(ens.clone());
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_cloud(&self) -> &TokenCloud<T> {
        self.clouds.last().expect("trajectory has at least one snapshot")
    }
}

/// The weight update taken during one grid step.
#[derive(Debug)]
pub struct Transition<'a, T> {
    pub dt: T,
    /// Scalar diffusion `g = √(2σ²)`.
    pub diffusion: T,
    pub drifts: &'a [SymMatrix<T>],
    pub increments: &'a [SymMatrix<T>],
}

type Observer<'o, T> = dyn FnMut(&StepView<'_, T>) + 'o;

/// The state at grid point `t_k` as seen by an observer, with the field
/// evaluated at `(x_k, D_k)`. `transition` is `None` at the final grid point.
#[derive(Debug)]
pub struct StepView<'a, T> {
    pub index: usize,
    pub time: T,
    pub cloud: &'a TokenCloud<T>,
    pub ensemble: &'a HeadEnsemble<T>,
    pub field: &'a FieldEval<T>,
    pub transition: Option<Transition<'a, T>>,
}

/// Stepper for the coupled token/weight system.
pub struct Simulator<T: Scalar> {
    cloud: TokenCloud<T>,
    ens: HeadEnsemble<T>,
    spec: WeightProcessSpec<T>,
    dt: T,
    order: UpdateOrder,
    step: usize,
    streams: Vec<RngStream>,
    request: FieldRequest,
    observed: FieldEvaluator<T>,
    moving: FieldEvaluator<T>,
}

impl<T: Scalar> Simulator<T> {
    pub fn new(
        cloud: TokenCloud<T>,
        ens: HeadEnsemble<T>,
        spec: WeightProcessSpec<T>,
        dt: T,
        order: UpdateOrder,
        streams: Vec<RngStream>,
    ) -> Result<Self> {
        if cloud.dim() != ens.dim() {
            return Err(Error::DimensionMismatch {
                expected: cloud.dim(),
                found: ens.dim(),
            });
        }
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::invalid("dt", format!("must be > 0, got {dt}")));
        }
        if spec.is_stochastic() && streams.len() < ens.len() {
            return Err(Error::IncrementCount {
                expected: ens.len(),
                found: streams.len(),
            });
        }
        spec.drift(&ens.heads()[0], T::zero(), 0, ens.len())
            .context("weight_process", "drift")?;
        Ok(Self {
            cloud,
            ens,
            spec,
            dt,
            order,
            step: 0,
            streams,
            request: FieldRequest::VELOCITY,
            observed: FieldEvaluator::new(),
            moving: FieldEvaluator::new(),
        })
    }

    /// Field quantities computed for observers at every grid point.
    pub fn with_request(mut self, request: FieldRequest) -> Self {
        self.request = request;
        self
    }

    pub fn cloud(&self) -> &TokenCloud<T> {
        &self.cloud
    }

    pub fn ensemble(&self) -> &HeadEnsemble<T> {
        &self.ens
    }

    pub fn time(&self) -> T {
        T::of_usize(self.step) * self.dt
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn into_state(self) -> (TokenCloud<T>, HeadEnsemble<T>) {
        (self.cloud, self.ens)
    }

    /// Advances one grid step without evaluating anything beyond the velocity.
    pub fn advance(&mut self) -> Result<()> {
        self.advance_inner(None)
    }

    /// Advances one grid step, first showing `observer` the pre-step state.
    pub fn advance_observed(&mut self, observer: &mut dyn FnMut(&StepView<'_, T>)) -> Result<()> {
        self.advance_inner(Some(observer))
    }

    /// Shows `observer` the current state with no pending transition.
    pub fn observe(&mut self, observer: &mut dyn FnMut(&StepView<'_, T>)) -> Result<()> {
        let time = self.time();
        let field = self
            .observed
            .evaluate(&self.cloud, &self.ens, self.request)
            .context("attention_core", "evaluate")?;
        observer(&StepView {
            index: self.step,
            time,
            cloud: &self.cloud,
            ensemble: &self.ens,
            field,
            transition: None,
        });
        Ok(())
    }

    fn advance_inner(&mut self, observer: Option<&mut Observer<'_, T>>) -> Result<()> {
        let t = self.time();
        let (drifts, incs) =
            weights::weight_transition(&self.ens, &self.spec, t, self.dt, &mut self.streams)
                .context("weight_process", "step_weights")?;
        let dim = self.cloud.dim();
        let mut moved = false;
        if let Some(observer) = observer {
            let field = self
                .observed
                .evaluate(&self.cloud, &self.ens, self.request)
                .context("attention_core", "evaluate")?;
            observer(&StepView {
                index: self.step,
                time: t,
                cloud: &self.cloud,
                ensemble: &self.ens,
                field,
                transition: Some(Transition {
                    dt: self.dt,
                    diffusion: self.spec.diffusion(),
                    drifts: &drifts,
                    increments: &incs,
                }),
            });
            if self.order == UpdateOrder::TokensFirst {
                // The observed field already holds the velocity at (x_k, D_k).
                euler_update(self.cloud.as_flat_mut(), dim, &field.velocity, self.dt)
                    .context("token_dynamics", "step_tokens")?;
                moved = true;
            }
        }
        if self.order == UpdateOrder::WeightsFirst {
            weights::apply_transition(&mut self.ens, &self.spec, self.dt, &drifts, &incs);
        }
        if !moved {
            let field = self
                .moving
                .evaluate(&self.cloud, &self.ens, FieldRequest::VELOCITY)
                .context("attention_core", "multihead_velocity")?;
            euler_update(self.cloud.as_flat_mut(), dim, &field.velocity, self.dt)
                .context("token_dynamics", "step_tokens")?;
        }
        if self.order == UpdateOrder::TokensFirst {
            weights::apply_transition(&mut self.ens, &self.spec, self.dt, &drifts, &incs);
        }
        self.step += 1;
        Ok(())
    }
}

/// `x_i ← Π(x_i + dt v_i)` for every token, in place.
fn euler_update<T: Scalar>(x: &mut [T], dim: usize, velocity: &[T], dt: T) -> Result<()> {
    for (xi, vi) in x.chunks_exact_mut(dim).zip(velocity.chunks_exact(dim)) {
        for (a, b) in xi.iter_mut().zip(vi) {
            *a += dt * *b;
        }
        sphere::normalize_in_place(xi)?;
    }
    Ok(())
}

/// One synchronous projected Euler step of the tokens with the weights held
/// at `ens`.
pub fn step_tokens<T: Scalar>(cloud: &TokenCloud<T>, ens: &HeadEnsemble<T>, dt: T) -> Result<TokenCloud<T>> {
    if !(dt > T::zero()) {
        return Err(Error::invalid("dt", format!("must be > 0, got {dt}")));
    }
    let mut eval = FieldEvaluator::new();
    let field = eval.evaluate(cloud, ens, FieldRequest::VELOCITY)?;
    let mut next = cloud.clone();
    let dim = next.dim();
    euler_update(next.as_flat_mut(), dim, &field.velocity, dt).context("token_dynamics", "step_tokens")?;
    Ok(next)
}

/// Initial cloud of `n` tokens drawn uniformly on `S^{d-1}` from the token
/// stream of `trajectory`.
pub fn initial_cloud<T: Scalar>(n: usize, dim: usize, seed: u64, trajectory: u64) -> TokenCloud<T> {
    let mut rng = RngStream::for_role(seed, trajectory, StreamRole::Tokens, 0);
    TokenCloud::random_uniform(n, dim, &mut rng)
}

/// Integrates the coupled system on `[0, T]`, recording every
/// `record_stride`-th grid state and the final one.
pub fn simulate<T: Scalar>(
    cloud0: TokenCloud<T>,
    ens0: HeadEnsemble<T>,
    spec: WeightProcessSpec<T>,
    config: &SimulationConfig<T>,
    streams: Vec<RngStream>,
) -> Result<Trajectory<T>> {
    config.validate()?;
    let mut sim = Simulator::new(cloud0, ens0, spec, config.dt, config.update_order, streams)?;
    let steps = config.steps();
    let mut traj = Trajectory::new(config.dt, config.record_stride);
    traj.push(0, T::zero(), sim.cloud(), sim.ensemble());
    for k in 1..=steps {
        sim.advance()?;
        if k % config.record_stride == 0 || k == steps {
            traj.push(k, sim.time(), sim.cloud(), sim.ensemble());
        }
    }
    Ok(traj)
}
