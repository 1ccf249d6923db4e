//! Interaction energy, strong upper gradient, the discrete energy-balance
//! ledger, exact W2 between equal-size clouds and the variance decomposition
//! of the squared gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::attention::{FieldEval, FieldEvaluator, FieldRequest, HeadEnsemble, TokenCloud};
use crate::dynamics::{SimulationConfig, Simulator, StepView, UpdateOrder};
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::scalar::{norm_sq, Scalar};
use crate::weights::{HeadLaw, RngStream, WeightProcessSpec};

/// `(1/(2Hn²)) Σ_{i,j,h} exp(⟨x_i, D_h x_j⟩)`.
pub fn interaction_energy<T: Scalar>(cloud: &TokenCloud<T>, ens: &HeadEnsemble<T>) -> Result<T> {
    Ok(FieldEvaluator::new().evaluate(cloud, ens, FieldRequest::VELOCITY)?.energy)
}

/// `(1/n) Σ_i ‖v_i‖²`, or `(1/n) Σ_i b(x_i) ‖v_i‖²` with the effective
/// mobility `b` when `weighted`.
pub fn strong_upper_gradient_sq<T: Scalar>(
    cloud: &TokenCloud<T>,
    ens: &HeadEnsemble<T>,
    weighted: bool,
) -> Result<T> {
    let req = if weighted { FieldRequest::ALL } else { FieldRequest::VELOCITY };
    let mut eval = FieldEvaluator::new();
    let field = eval.evaluate(cloud, ens, req)?;
    Ok(if weighted { field.g2_weighted() } else { field.g2_unweighted() })
}

/// Time series of the squared gradient along a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientStats<T> {
    pub times: Vec<T>,
    pub g2_series: Vec<T>,
    /// Trapezoidal time average of `g2_series`.
    pub time_mean: T,
    /// Per-token velocity norms at the last recorded time.
    pub velocity_norms: Vec<T>,
}

impl<T: Scalar> GradientStats<T> {
    pub fn new(times: Vec<T>, g2_series: Vec<T>, velocity_norms: Vec<T>) -> Self {
        let time_mean = time_average(&times, &g2_series);
        Self {
            times,
            g2_series,
            time_mean,
            velocity_norms,
        }
    }
}

/// Trapezoidal mean of `ys` over the span of `ts`; the single value if there
/// is only one sample.
pub fn time_average<T: Scalar>(ts: &[T], ys: &[T]) -> T {
    match ys.len() {
        0 => T::zero(),
        1 => ys[0],
        _ => {
            let mut acc = T::zero();
            for k in 1..ys.len() {
                acc += (ts[k] - ts[k - 1]) * (ys[k] + ys[k - 1]) * T::lit(0.5);
            }
            acc / (ts[ts.len() - 1] - ts[0])
        }
    }
}

/// Which token-side rate the ledger books as dissipation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerDissipation {
    /// `(1/n) Σ_i ‖v_i‖²`.
    Unweighted,
    /// `(1/n) Σ_i b(x_i) ‖v_i‖²`.
    Weighted,
    /// `(1/n) Σ_i ⟨(1/H) Σ_h m_h V_i^{(h)}, v_i⟩`, the exact first-order
    /// energy change produced by the token step. Equals `Weighted` for `H = 1`.
    #[default]
    Power,
}

/// Sign with which the dissipation enters the balance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DissipationSign {
    /// `E` decreases along the token flow: `ΔE = ... − Σ G² Δt`.
    Descending,
    /// `E` increases along the token flow: `ΔE = ... + Σ G² Δt`.
    #[default]
    Ascending,
}

impl DissipationSign {
    /// Coefficient of the cumulative dissipation in the residual.
    pub fn residual_coefficient<T: Scalar>(self) -> T {
        match self {
            Self::Descending => T::one(),
            Self::Ascending => -T::one(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerConfig {
    pub dissipation: LedgerDissipation,
    pub sign: DissipationSign,
}

/// Term-by-term discrete energy balance of one trajectory.
///
/// State arrays (`times`, `energy`, `residual` and the three rates) have one
/// entry per grid point; increment arrays have one entry per completed step,
/// evaluated at the pre-step state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger<T> {
    pub config: LedgerConfig,
    pub times: Vec<T>,
    pub energy: Vec<T>,
    pub residual: Vec<T>,
    pub drift: Vec<T>,
    pub ito: Vec<T>,
    /// `G² Δt` for the configured dissipation variant.
    pub dissipation: Vec<T>,
    pub martingale: Vec<T>,
    /// `(1/n) Σ_i ‖v_i‖²`.
    pub g2_unweighted: Vec<T>,
    /// `(1/n) Σ_i b(x_i) ‖v_i‖²`.
    pub g2_weighted: Vec<T>,
    /// `(1/n) Σ_i ⟨(1/H) Σ_h m_h V_i^{(h)}, v_i⟩`.
    pub power: Vec<T>,
    cum: [T; 4],
}

impl<T: Scalar> EnergyLedger<T> {
    pub fn new(config: LedgerConfig) -> Self {
        Self {
            config,
            times: Vec::new(),
            energy: Vec::new(),
            residual: Vec::new(),
            drift: Vec::new(),
            ito: Vec::new(),
            dissipation: Vec::new(),
            martingale: Vec::new(),
            g2_unweighted: Vec::new(),
            g2_weighted: Vec::new(),
            power: Vec::new(),
            cum: [T::zero(); 4],
        }
    }

    /// Number of completed steps.
    pub fn steps(&self) -> usize {
        self.drift.len()
    }

    pub fn final_residual(&self) -> T {
        *self.residual.last().unwrap_or(&T::zero())
    }

    /// Books the state shown by a simulator observer. The field must have
    /// been evaluated with [`FieldRequest::ALL`].
    pub fn record(&mut self, view: &StepView<'_, T>) -> Result<()> {
        self.push_state(view.time, view.field)?;
        if let Some(tr) = &view.transition {
            self.push_step(view.field, view.ensemble.len(), tr.dt, tr.diffusion, tr.drifts, tr.increments)?;
        }
        Ok(())
    }

    /// Books the pre-step state `(x, D)` at time `t` and the step taken from it
    /// with the given increments.
    pub fn step(
        &mut self,
        cloud: &TokenCloud<T>,
        ens: &HeadEnsemble<T>,
        spec: &WeightProcessSpec<T>,
        t: T,
        dt: T,
        increments: &[SymMatrix<T>],
    ) -> Result<()> {
        if increments.len() != ens.len() {
            return Err(Error::IncrementCount {
                expected: ens.len(),
                found: increments.len(),
            });
        }
        let drifts = ens
            .heads()
            .iter()
            .enumerate()
            .map(|(h, d)| spec.drift(d, t, h, ens.len()))
            .collect::<Result<Vec<_>>>()?;
        let mut eval = FieldEvaluator::new();
        let field = eval.evaluate(cloud, ens, FieldRequest::ALL)?;
        self.push_state(t, field)?;
        self.push_step(field, ens.len(), dt, spec.diffusion(), &drifts, increments)
    }

    /// Books a state with no following step (the end of a run).
    pub fn finish(&mut self, cloud: &TokenCloud<T>, ens: &HeadEnsemble<T>, t: T) -> Result<()> {
        let mut eval = FieldEvaluator::new();
        let field = eval.evaluate(cloud, ens, FieldRequest::ALL)?;
        self.push_state(t, field)
    }

    fn push_state(&mut self, t: T, field: &FieldEval<T>) -> Result<()> {
        if self.energy.len() != self.drift.len() {
            return Err(Error::invalid("ledger", "state recorded twice without a step in between"));
        }
        if field.energy_gradient.len() != field.velocity.len() {
            return Err(Error::invalid("field", "ledger needs FieldRequest::ALL"));
        }
        let e0 = self.energy.first().copied().unwrap_or(field.energy);
        let [drift, ito, diss, mart] = self.cum;
        let s: T = self.config.sign.residual_coefficient();
        self.times.push(t);
        self.energy.push(field.energy);
        self.residual.push((field.energy - e0) - drift - ito + s * diss - mart);
        self.g2_unweighted.push(field.g2_unweighted());
        self.g2_weighted.push(field.g2_weighted());
        self.power.push(field.energy_power());
        Ok(())
    }

    fn push_step(
        &mut self,
        field: &FieldEval<T>,
        heads: usize,
        dt: T,
        g: T,
        drifts: &[SymMatrix<T>],
        increments: &[SymMatrix<T>],
    ) -> Result<()> {
        if increments.len() != heads || drifts.len() != heads {
            return Err(Error::IncrementCount {
                expected: heads,
                found: increments.len().min(drifts.len()),
            });
        }
        if field.kernel_moments.len() != heads {
            return Err(Error::invalid("field", "ledger needs FieldRequest::ALL"));
        }
        let half_h = T::lit(0.5) / T::of_usize(heads);
        let mut drift = T::zero();
        let mut mart = T::zero();
        let mut noise = T::zero();
        for h in 0..heads {
            let s = &field.kernel_moments[h];
            drift += s.frobenius_dot(&drifts[h]);
            mart += s.frobenius_dot(&increments[h]);
            noise += field.noise_moments[h];
        }
        let drift = drift * half_h * dt;
        let mart = mart * half_h * g;
        let ito = noise * half_h * T::lit(0.5) * g * g * dt;
        let last = self.energy.len() - 1;
        let rate = match self.config.dissipation {
            LedgerDissipation::Unweighted => self.g2_unweighted[last],
            LedgerDissipation::Weighted => self.g2_weighted[last],
            LedgerDissipation::Power => self.power[last],
        };
        let diss = rate * dt;
        self.drift.push(drift);
        self.ito.push(ito);
        self.martingale.push(mart);
        self.dissipation.push(diss);
        for (c, v) in self.cum.iter_mut().zip([drift, ito, diss, mart]) {
            *c += v;
        }
        Ok(())
    }

    /// Running sums of the increment arrays, aligned with `times`.
    pub fn cumulative(&self) -> [Vec<T>; 4] {
        let mut out: [Vec<T>; 4] = Default::default();
        for (o, xs) in out
            .iter_mut()
            .zip([&self.drift, &self.ito, &self.dissipation, &self.martingale])
        {
            let mut acc = T::zero();
            o.push(acc);
            for x in xs.iter().take(self.times.len().saturating_sub(1)) {
                acc += *x;
                o.push(acc);
            }
        }
        out
    }
}

/// Everything a ledger run returns.
#[derive(Clone, Debug)]
pub struct LedgerRun<T> {
    pub ledger: EnergyLedger<T>,
    pub gradient: GradientStats<T>,
    pub cloud: TokenCloud<T>,
    pub ensemble: HeadEnsemble<T>,
}

/// Simulates on `[0, T]` and books every step in an [`EnergyLedger`].
pub fn ledger_run<T: Scalar>(
    cloud: TokenCloud<T>,
    ens: HeadEnsemble<T>,
    spec: WeightProcessSpec<T>,
    config: &SimulationConfig<T>,
    streams: Vec<RngStream>,
    ledger_config: LedgerConfig,
) -> Result<LedgerRun<T>> {
    config.validate()?;
    let mut sim = Simulator::new(cloud, ens, spec, config.dt, config.update_order, streams)?
        .with_request(FieldRequest::ALL);
    let mut ledger = EnergyLedger::new(ledger_config);
    let mut err = None;
    let mut book = |v: &StepView<'_, T>| {
        if err.is_none() {
            err = ledger.record(v).err();
        }
    };
    for _ in 0..config.steps() {
        sim.advance_observed(&mut book)?;
    }
    let mut norms = Vec::new();
    sim.observe(&mut |v| {
        book(v);
        norms = v.field.velocity_norms();
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let gradient = GradientStats::new(ledger.times.clone(), ledger.g2_unweighted.clone(), norms);
    let (cloud, ensemble) = sim.into_state();
    Ok(LedgerRun {
        ledger,
        gradient,
        cloud,
        ensemble,
    })
}

/// Runs the frozen-weight flow from `(cloud, ens)` for `steps` steps of `dt`
/// under both sign conventions and returns the one with the smaller final
/// residual, together with the two residuals `[descending, ascending]`.
pub fn calibrate_dissipation_sign<T: Scalar>(
    cloud: &TokenCloud<T>,
    ens: &HeadEnsemble<T>,
    dt: T,
    steps: usize,
    dissipation: LedgerDissipation,
) -> Result<(DissipationSign, [T; 2])> {
    let config = SimulationConfig::new(dt, dt * T::of_usize(steps.max(1))).with_order(UpdateOrder::TokensFirst);
    let run = |sign| {
        ledger_run(
            cloud.clone(),
            ens.clone(),
            WeightProcessSpec::Frozen,
            &config,
            Vec::new(),
            LedgerConfig { dissipation, sign },
        )
        .map(|r| r.ledger.final_residual())
    };
    let desc = run(DissipationSign::Descending)?;
    let asc = run(DissipationSign::Ascending)?;
    let sign = if asc.abs() <= desc.abs() {
        DissipationSign::Ascending
    } else {
        DissipationSign::Descending
    };
    Ok((sign, [desc, asc]))
}

/// `min_π (1/n) Σ_i ‖a_i − b_{π(i)}‖²` with the chordal ground distance.
pub fn w2_squared<T: Scalar>(a: &TokenCloud<T>, b: &TokenCloud<T>) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let n = a.len();
    if n == 0 {
        return Ok(T::zero());
    }
    let mut cost = Vec::with_capacity(n * n);
    for i in 0..n {
        let ai = a.point(i);
        for j in 0..n {
            let mut c = T::zero();
            for (x, y) in ai.iter().zip(b.point(j)) {
                c += (*x - *y) * (*x - *y);
            }
            cost.push(c);
        }
    }
    let (_, total) = assignment::solve(n, &cost);
    Ok((total / T::of_usize(n)).max(T::zero()))
}

/// Monte Carlo estimate of the decomposition
/// `E[G²_H] = Var[V^{(1)}] / H + ‖E V^{(1)}‖²` over i.i.d. heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition<T> {
    pub samples: usize,
    /// Token average of the trace of the sample covariance of `V_i^{(1)}`.
    pub var_term: T,
    /// Token average of `‖E V_i^{(1)}‖²`, bias-corrected.
    pub mean_term: T,
    /// `(var_term, mean_term)` from disjoint batches, for standard errors.
    pub batches: Vec<(T, T)>,
}

impl<T: Scalar> VarianceDecomposition<T> {
    /// Predicted mean of `G²` for `heads` i.i.d. heads.
    pub fn predicted_g2(&self, heads: usize) -> T {
        self.var_term / T::of_usize(heads) + self.mean_term
    }

    /// Batch-means standard error of [`Self::predicted_g2`]; `NaN` with fewer
    /// than two batches.
    pub fn predicted_g2_se(&self, heads: usize) -> T {
        let b = self.batches.len();
        if b < 2 {
            return T::nan();
        }
        let h = T::of_usize(heads);
        let preds: Vec<T> = self.batches.iter().map(|(v, m)| *v / h + *m).collect();
        let mean = preds.iter().copied().sum::<T>() / T::of_usize(b);
        let var = preds.iter().map(|p| (*p - mean) * (*p - mean)).sum::<T>() / T::of_usize(b - 1);
        (var / T::of_usize(b)).sqrt()
    }
}

const VARIANCE_BATCHES: usize = 20;

/// Running per-token mean vector and sum of squared deviations (Welford),
/// so identical samples give exactly zero variance.
struct Moments<T> {
    dim: usize,
    count: usize,
    mean: Vec<T>,
    m2: Vec<T>,
}

impl<T: Scalar> Moments<T> {
    fn new(n: usize, dim: usize) -> Self {
        Self {
            dim,
            count: 0,
            mean: vec![T::zero(); n * dim],
            m2: vec![T::zero(); n],
        }
    }

    fn push(&mut self, v: &[T]) {
        self.count += 1;
        let k = T::of_usize(self.count);
        for (i, m2) in self.m2.iter_mut().enumerate() {
            let r = i * self.dim..(i + 1) * self.dim;
            for (m, x) in self.mean[r.clone()].iter_mut().zip(&v[r]) {
                let delta = *x - *m;
                *m += delta / k;
                *m2 += delta * (*x - *m);
            }
        }
    }

    fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            self.count = other.count;
            self.mean.copy_from_slice(&other.mean);
            self.m2.copy_from_slice(&other.m2);
            return;
        }
        let (na, nb) = (T::of_usize(self.count), T::of_usize(other.count));
        let n = na + nb;
        for (i, m2) in self.m2.iter_mut().enumerate() {
            let r = i * self.dim..(i + 1) * self.dim;
            let mut d2 = T::zero();
            for (m, y) in self.mean[r.clone()].iter_mut().zip(&other.mean[r]) {
                let delta = *y - *m;
                d2 += delta * delta;
                *m += delta * (nb / n);
            }
            *m2 += other.m2[i] + d2 * na * nb / n;
        }
        self.count += other.count;
    }

    /// Token averages of the unbiased covariance trace and of the unbiased
    /// estimate of `‖E V‖²`.
    fn terms(&self) -> (T, T) {
        let m = T::of_usize(self.count);
        let mut var_acc = T::zero();
        let mut mean_acc = T::zero();
        for (i, m2) in self.m2.iter().enumerate() {
            let var = *m2 / (m - T::one());
            var_acc += var;
            mean_acc += norm_sq(&self.mean[i * self.dim..(i + 1) * self.dim]) - var / m;
        }
        let n = T::of_usize(self.m2.len());
        (var_acc / n, mean_acc / n)
    }
}

/// Samples `n_samples` single heads from `law` and decomposes the squared
/// single-head velocity on `cloud` into variance and mean parts.
pub fn variance_decomposition<T: Scalar, R: Rng + ?Sized>(
    cloud: &TokenCloud<T>,
    law: &HeadLaw<T>,
    n_samples: usize,
    rng: &mut R,
) -> Result<VarianceDecomposition<T>> {
    if n_samples < 2 {
        return Err(Error::invalid("n_samples", "must be >= 2"));
    }
    if law.dim() != cloud.dim() {
        return Err(Error::DimensionMismatch {
            expected: cloud.dim(),
            found: law.dim(),
        });
    }
    let batches = (n_samples / 2).clamp(1, VARIANCE_BATCHES);
    let mut eval = FieldEvaluator::new();
    let mut stats: Vec<Moments<T>> = (0..batches).map(|_| Moments::new(cloud.len(), cloud.dim())).collect();
    for s in 0..n_samples {
        let head = HeadEnsemble::new(vec![law.sample(rng)])?;
        let field = eval.evaluate(cloud, &head, FieldRequest::VELOCITY)?;
        stats[s * batches / n_samples].push(&field.velocity);
    }
    let mut total = Moments::new(cloud.len(), cloud.dim());
    for b in &stats {
        total.merge(b);
    }
    let (var_term, mean_term) = total.terms();
    let batch_terms = if batches >= 2 {
        stats.iter().map(Moments::terms).collect()
    } else {
        Vec::new()
    };
    Ok(VarianceDecomposition {
        samples: n_samples,
        var_term,
        mean_term,
        batches: batch_terms,
    })
}
