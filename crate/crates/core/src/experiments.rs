//! Monte Carlo sweeps over the head count, power-law fits, Grönwall
//! robustness, weight-perturbation stability and clustering metrics.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::attention::{FieldRequest, HeadEnsemble, TokenCloud};
use crate::diagnostics::{time_average, w2_squared, EnergyLedger, LedgerConfig};
use crate::dynamics::{initial_cloud, SimulationConfig, Simulator, StepView, Trajectory, UpdateOrder};
use crate::error::{Error, Result, ResultExt};
use crate::linalg::SymMatrix;
use crate::scalar::{dot, Scalar};
use crate::sphere;
use crate::weights::{head_streams, sample_initial_ensemble, HeadLaw, RngStream, StreamRole, WeightProcessSpec};

/// Everything needed to run one family of trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario<T> {
    pub name: String,
    pub n: usize,
    pub dim: usize,
    pub dt: T,
    pub t_final: T,
    pub record_stride: usize,
    pub update_order: UpdateOrder,
    pub process: WeightProcessSpec<T>,
    /// Law of every head at `t = 0`.
    pub initial_law: HeadLaw<T>,
    pub seed: u64,
    pub n_mc: usize,
    pub ledger: LedgerConfig,
    /// Use the mobility-weighted `G²` for time averages and fits.
    pub g2_weighted: bool,
    /// Time-average window as fractions of `[0, T]`.
    pub average_window: (T, T),
    /// Times at which clouds are kept for clustering metrics.
    pub snapshot_times: Vec<T>,
    /// Bootstrap resamples for the SE of the time-averaged `G²`; 0 keeps
    /// the sample standard deviation over `√N_MC`.
    pub bootstrap: usize,
}

impl<T: Scalar> Scenario<T> {
    /// OU weights with `F = I`, `σ² = 1`, `D_0` entrywise `N(0, 1)`, `n = 300`
    /// tokens on `S²`, `dt = 0.01`, `T = 20`, 20 trajectories.
    pub fn ou_paper() -> Self {
        Self {
            name: "ou_s2".into(),
            n: 300,
            dim: 3,
            dt: T::lit(0.01),
            t_final: T::lit(20.0),
            record_stride: 10,
            update_order: UpdateOrder::TokensFirst,
            process: WeightProcessSpec::Ou {
                target: SymMatrix::identity(3),
                sigma2: T::one(),
            },
            initial_law: HeadLaw::isotropic(SymMatrix::zeros(3), T::one()),
            seed: 20250101,
            n_mc: 20,
            ledger: LedgerConfig::default(),
            g2_weighted: false,
            average_window: (T::zero(), T::one()),
            snapshot_times: vec![T::zero(), T::lit(16.0), T::lit(18.0), T::lit(20.0)],
            bootstrap: 0,
        }
    }

    /// Deterministic oscillating targets with phases spread over the heads,
    /// `n = 500`, otherwise as [`Scenario::ou_paper`] with 2 trajectories.
    pub fn oscillating_paper() -> Self {
        Self {
            name: "oscillating_s2".into(),
            n: 500,
            process: WeightProcessSpec::Oscillating {
                phase_spread: true,
                sigma2: T::zero(),
            },
            n_mc: 2,
            ..Self::ou_paper()
        }
    }

    pub fn sim_config(&self) -> SimulationConfig<T> {
        SimulationConfig::new(self.dt, self.t_final)
            .with_stride(self.record_stride)
            .with_order(self.update_order)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim_config().validate()?;
        if self.n == 0 {
            return Err(Error::invalid("n", "must be >= 1"));
        }
        if self.dim < 2 {
            return Err(Error::invalid("d", "must be >= 2"));
        }
        if self.initial_law.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: self.initial_law.dim(),
            });
        }
        let (a, b) = self.average_window;
        if !(T::zero() <= a && a < b && b <= T::one()) {
            return Err(Error::invalid("average_window", "need 0 <= start < end <= 1"));
        }
        Ok(())
    }

    /// Initial tokens, heads and noise streams of trajectory `traj`.
    pub fn initial_state(&self, heads: usize, traj: u64) -> (TokenCloud<T>, HeadEnsemble<T>, Vec<RngStream>) {
        (
            initial_cloud(self.n, self.dim, self.seed, traj),
            sample_initial_ensemble(&self.initial_law, heads, self.seed, traj),
            head_streams(self.seed, traj, heads),
        )
    }

    fn snapshot_steps(&self) -> Vec<usize> {
        let steps = self.sim_config().steps();
        self.snapshot_times
            .iter()
            .map(|t| ((*t / self.dt).round().to_usize().unwrap_or(0)).min(steps))
            .collect()
    }
}

/// One finished trajectory of a sweep.
#[derive(Clone, Debug)]
pub struct TrajectoryOutcome<T> {
    pub heads: usize,
    pub trajectory: u64,
    pub ledger: EnergyLedger<T>,
    /// Clouds at the scenario's snapshot times.
    pub snapshots: Vec<TokenCloud<T>>,
}

/// Runs trajectory `traj` of `scenario` with `heads` heads, booking every
/// step in an energy ledger.
pub fn run_trajectory<T: Scalar>(scenario: &Scenario<T>, heads: usize, traj: u64) -> Result<TrajectoryOutcome<T>> {
    run_inner(scenario, heads, traj, None)
}

/// As [`run_trajectory`], also keeping every `record_stride`-th state.
pub fn record_trajectory<T: Scalar>(
    scenario: &Scenario<T>,
    heads: usize,
    traj: u64,
) -> Result<(Trajectory<T>, TrajectoryOutcome<T>)> {
    let mut path = Trajectory::new(scenario.dt, scenario.record_stride);
    let outcome = run_inner(scenario, heads, traj, Some(&mut path))?;
    Ok((path, outcome))
}

fn run_inner<T: Scalar>(
    scenario: &Scenario<T>,
    heads: usize,
    traj: u64,
    mut path: Option<&mut Trajectory<T>>,
) -> Result<TrajectoryOutcome<T>> {
    scenario.validate()?;
    let (cloud, ens, streams) = scenario.initial_state(heads, traj);
    let mut sim = Simulator::new(cloud, ens, scenario.process.clone(), scenario.dt, scenario.update_order, streams)?
        .with_request(FieldRequest::ALL);
    let steps = scenario.sim_config().steps();
    let snap_steps = scenario.snapshot_steps();
    let mut snapshots: Vec<Option<TokenCloud<T>>> = vec![None; snap_steps.len()];
    let mut ledger = EnergyLedger::new(scenario.ledger);
    let mut err = None;
    let mut observe = |v: &StepView<'_, T>| {
        if err.is_none() {
            err = ledger.record(v).err();
        }
        for (slot, s) in snapshots.iter_mut().zip(&snap_steps) {
            if *s == v.index {
                *slot = Some(v.cloud.clone());
            }
        }
        if let Some(p) = path.as_deref_mut() {
            if v.index.is_multiple_of(scenario.record_stride) || v.index == steps {
                p.push(v.index, v.time, v.cloud, v.ensemble);
            }
        }
    };
    for _ in 0..steps {
        sim.advance_observed(&mut observe)?;
    }
    sim.observe(&mut observe)?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(TrajectoryOutcome {
        heads,
        trajectory: traj,
        ledger,
        snapshots: snapshots.into_iter().map(|s| s.expect("snapshot step within run")).collect(),
    })
}

/// Pointwise Monte Carlo mean and standard error of equally long series.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesStat<T> {
    pub mean: Vec<T>,
    pub se: Vec<T>,
}

impl<T: Scalar> SeriesStat<T> {
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a [T]>) -> Self {
        let rows: Vec<&[T]> = rows.into_iter().collect();
        let len = rows.first().map_or(0, |r| r.len());
        let mut mean = Vec::with_capacity(len);
        let mut se = Vec::with_capacity(len);
        let mut col = Vec::with_capacity(rows.len());
        for k in 0..len {
            col.clear();
            col.extend(rows.iter().map(|r| r[k]));
            let (m, s) = mean_se(&col);
            mean.push(m);
            se.push(s);
        }
        Self { mean, se }
    }
}

/// Sample mean and `sd / √N`; the SE is `NaN` for fewer than two values.
pub fn mean_se<T: Scalar>(xs: &[T]) -> (T, T) {
    let n = xs.len();
    if n == 0 {
        return (T::nan(), T::nan());
    }
    let mean = xs.iter().copied().sum::<T>() / T::of_usize(n);
    if n < 2 {
        return (mean, T::nan());
    }
    let var = xs.iter().map(|x| (*x - mean) * (*x - mean)).sum::<T>() / T::of_usize(n - 1);
    (mean, (var / T::of_usize(n)).sqrt())
}

/// Standard deviation of the mean over `resamples` bootstrap draws of `xs`.
pub fn bootstrap_se<T: Scalar>(xs: &[T], resamples: usize, rng: &mut RngStream) -> T {
    if xs.len() < 2 || resamples < 2 {
        return T::nan();
    }
    let means: Vec<T> = (0..resamples)
        .map(|_| {
            let total = (0..xs.len()).map(|_| xs[rng.random_range(0..xs.len())]).sum::<T>();
            total / T::of_usize(xs.len())
        })
        .collect();
    let (m, _) = mean_se(&means);
    let var = means.iter().map(|x| (*x - m) * (*x - m)).sum::<T>() / T::of_usize(resamples - 1);
    var.sqrt()
}

/// Aggregates for one head count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSweep<T> {
    pub heads: usize,
    pub n_mc: usize,
    /// Recorded grid times (every `record_stride` steps and the final one).
    pub times: Vec<T>,
    pub g2: SeriesStat<T>,
    pub g2_weighted: SeriesStat<T>,
    pub energy: SeriesStat<T>,
    pub cum_drift: SeriesStat<T>,
    pub cum_ito: SeriesStat<T>,
    pub cum_dissipation: SeriesStat<T>,
    pub cum_martingale: SeriesStat<T>,
    pub residual: SeriesStat<T>,
    /// MC mean and SE of the per-trajectory time average of `G²`.
    pub g2_time_mean: (T, T),
    /// Mean of the MC-mean `G²` over the first and the last quarter of `[0, T]`.
    pub g2_first_quarter: T,
    pub g2_final_quarter: T,
    pub snapshot_times: Vec<T>,
    /// MC mean and SE of the clustering metric at each snapshot time.
    pub clustering: Vec<(T, T)>,
}

/// Result of a power-law fit `mean ≈ a H^b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub ci_a: (f64, f64),
    pub ci_b: (f64, f64),
    pub pearson_r: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport<T> {
    pub scenario: String,
    pub per_heads: Vec<HeadSweep<T>>,
    /// Fit of the time-averaged `G²` against `H` (three or more head counts).
    pub fit: Option<FitResult>,
}

/// Runs `scenario.n_mc` trajectories for every head count and aggregates
/// them. Trajectories run in parallel; the reduction is sequential in
/// `(H, trajectory)` order, so the report does not depend on scheduling.
pub fn mc_sweep<T: Scalar>(scenario: &Scenario<T>, heads: &[usize]) -> Result<SweepReport<T>> {
    scenario.validate()?;
    if scenario.n_mc < 2 {
        return Err(Error::invalid("n_mc", "must be >= 2"));
    }
    if heads.is_empty() || heads.contains(&0) {
        return Err(Error::invalid("heads", "need at least one positive head count"));
    }
    let jobs: Vec<(usize, u64)> = heads
        .iter()
        .flat_map(|&h| (0..scenario.n_mc as u64).map(move |m| (h, m)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(h, m)| run_trajectory(scenario, h, m).context("experiments", "mc_sweep"))
        .collect::<Result<Vec<_>>>()?;
    let per_heads: Vec<HeadSweep<T>> = outcomes
        .chunks(scenario.n_mc)
        .map(|chunk| aggregate(scenario, chunk))
        .collect();
    let fit = if per_heads.len() >= 3 {
        let hs: Vec<f64> = per_heads.iter().map(|p| p.heads as f64).collect();
        let ys: Vec<f64> = per_heads.iter().map(|p| p.g2_time_mean.0.as_f64()).collect();
        Some(fit_power_law(&hs, &ys)?)
    } else {
        None
    };
    Ok(SweepReport {
        scenario: scenario.name.clone(),
        per_heads,
        fit,
    })
}

fn aggregate<T: Scalar>(scenario: &Scenario<T>, runs: &[TrajectoryOutcome<T>]) -> HeadSweep<T> {
    let first = &runs[0].ledger;
    let steps = first.steps();
    let stride = scenario.record_stride;
    let recorded: Vec<usize> = (0..=steps).filter(|k| k % stride == 0 || *k == steps).collect();
    let pick = |xs: &[T]| -> Vec<T> { recorded.iter().map(|k| xs[*k]).collect() };
    let times = pick(&first.times);
    let stat = |f: &dyn Fn(&EnergyLedger<T>) -> Vec<T>| {
        let rows: Vec<Vec<T>> = runs.iter().map(|r| pick(&f(&r.ledger))).collect();
        SeriesStat::from_rows(rows.iter().map(|r| r.as_slice()))
    };
    let g2_of = |l: &EnergyLedger<T>| {
        if scenario.g2_weighted {
            l.g2_weighted.clone()
        } else {
            l.g2_unweighted.clone()
        }
    };
    let cum = |i: usize| move |l: &EnergyLedger<T>| l.cumulative()[i].clone();

    let (w0, w1) = scenario.average_window;
    let averages: Vec<T> = runs
        .iter()
        .map(|r| {
            let g2 = g2_of(&r.ledger);
            let (ts, ys) = window(&r.ledger.times, &g2, w0, w1, scenario.t_final);
            time_average(ts, ys)
        })
        .collect();
    let g2_full = SeriesStat::from_rows(runs.iter().map(|r| {
        if scenario.g2_weighted {
            r.ledger.g2_weighted.as_slice()
        } else {
            r.ledger.g2_unweighted.as_slice()
        }
    }));
    let quarter = |a: f64, b: f64| {
        let (ts, ys) = window(&first.times, &g2_full.mean, T::lit(a), T::lit(b), scenario.t_final);
        time_average(ts, ys)
    };
    let clustering = (0..scenario.snapshot_times.len())
        .map(|s| {
            let vals: Vec<T> = runs.iter().map(|r| clustering_metric(&r.snapshots[s])).collect();
            mean_se(&vals)
        })
        .collect();
    HeadSweep {
        heads: runs[0].heads,
        n_mc: runs.len(),
        times,
        g2: stat(&|l| l.g2_unweighted.clone()),
        g2_weighted: stat(&|l| l.g2_weighted.clone()),
        energy: stat(&|l| l.energy.clone()),
        cum_drift: stat(&cum(0)),
        cum_ito: stat(&cum(1)),
        cum_dissipation: stat(&cum(2)),
        cum_martingale: stat(&cum(3)),
        residual: stat(&|l| l.residual.clone()),
        g2_time_mean: if scenario.bootstrap > 0 {
            let mut rng = RngStream::for_role(scenario.seed, runs[0].heads as u64, StreamRole::Sampling, 1);
            (mean_se(&averages).0, bootstrap_se(&averages, scenario.bootstrap, &mut rng))
        } else {
            mean_se(&averages)
        },
        g2_first_quarter: quarter(0.0, 0.25),
        g2_final_quarter: quarter(0.75, 1.0),
        snapshot_times: scenario.snapshot_times.clone(),
        clustering,
    }
}

/// The samples of `(ts, ys)` with `ts` in `[a T, b T]`.
fn window<'a, T: Scalar>(ts: &'a [T], ys: &'a [T], a: T, b: T, t_final: T) -> (&'a [T], &'a [T]) {
    let eps = t_final * T::lit(1e-9);
    let lo = ts.iter().position(|t| *t >= a * t_final - eps).unwrap_or(ts.len());
    let hi = ts.iter().rposition(|t| *t <= b * t_final + eps).map_or(lo, |i| i + 1);
    let hi = hi.max(lo);
    (&ts[lo..hi], &ys[lo..hi])
}

/// Ordinary least squares of `ln y` on `ln H` with 95% t-intervals.
pub fn fit_power_law(hs: &[f64], ys: &[f64]) -> Result<FitResult> {
    if hs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: hs.len(),
            found: ys.len(),
        });
    }
    if hs.len() < 3 {
        return Err(Error::invalid("points", format!("need at least 3, got {}", hs.len())));
    }
    if let Some(bad) = hs.iter().chain(ys).find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("points", format!("values must be positive and finite, got {bad}")));
    }
    let x: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let y: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("points", "all H values are equal"));
    }
    let b = sxy / sxx;
    let intercept = my - b * mx;
    let sse: f64 = x.iter().zip(&y).map(|(a, c)| (c - intercept - b * a).powi(2)).sum();
    let dof = n - 2.0;
    let s2 = sse / dof;
    let se_b = (s2 / sxx).sqrt();
    let se_int = (s2 * (1.0 / n + mx * mx / sxx)).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::invalid("points", e.to_string()))?
        .inverse_cdf(0.975);
    let pearson_r = if syy == 0.0 { 0.0 } else { sxy / (sxx * syy).sqrt() };
    Ok(FitResult {
        a: intercept.exp(),
        b,
        ci_a: ((intercept - t * se_int).exp(), (intercept + t * se_int).exp()),
        ci_b: (b - t * se_b, b + t * se_b),
        pearson_r,
        points: hs.len(),
    })
}

/// Mean geodesic distance from each token to its nearest neighbour, in
/// radians. Zero for a single token.
pub fn clustering_metric<T: Scalar>(cloud: &TokenCloud<T>) -> T {
    let n = cloud.len();
    if n < 2 {
        return T::zero();
    }
    // Nearest in angle is largest in cosine.
    let mut best = vec![-T::infinity(); n];
    for i in 0..n {
        for j in i + 1..n {
            let c = dot(cloud.point(i), cloud.point(j));
            if c > best[i] {
                best[i] = c;
            }
            if c > best[j] {
                best[j] = c;
            }
        }
    }
    best.iter().map(|c| c.max(-T::one()).min(T::one()).acos()).sum::<T>() / T::of_usize(n)
}

/// MC mean and SE of [`clustering_metric`] for `samples` clouds of `n`
/// uniform tokens on `S^{dim-1}`.
pub fn uniform_clustering_baseline<T: Scalar>(n: usize, dim: usize, samples: usize, seed: u64) -> (T, T) {
    let vals: Vec<T> = (0..samples as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::for_role(seed, k, StreamRole::Sampling, 0);
            clustering_metric(&TokenCloud::random_uniform(n, dim, &mut rng))
        })
        .collect();
    mean_se(&vals)
}

/// Initial-data robustness runs for one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GronwallReport<T> {
    pub heads: usize,
    pub times: Vec<T>,
    /// `M_θ(t) = ∫_0^t (1/H) Σ_h ‖D_h‖_F² ds` (left Riemann sum).
    pub m_theta: Vec<T>,
    pub runs: Vec<GronwallRun<T>>,
    /// Envelope `W2(t) ≤ C₁ W2(0) exp(C₂ M_θ(t))`, fitted jointly over all `η`.
    pub c1: T,
    pub c2: T,
    pub envelope_holds: bool,
    /// Window `[0, t]` of the halving check.
    pub early_time: T,
    /// Largest `|W2_{η/2}(t) / W2_η(t) − 1/2| / (1/2)` over the early window
    /// and all `η`.
    pub halving_max_deviation: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GronwallRun<T> {
    pub eta: T,
    pub w2: Vec<T>,
    /// Same direction of perturbation with size `η/2`.
    pub w2_half: Vec<T>,
}

/// `x_i ← Π(x_i + η ξ_i)` with `ξ_i` unit tangent directions from the
/// perturbation stream of `traj`.
pub fn perturb_cloud<T: Scalar>(cloud: &TokenCloud<T>, eta: T, seed: u64, traj: u64) -> Result<TokenCloud<T>> {
    if eta == T::zero() {
        return Ok(cloud.clone());
    }
    let mut rng = RngStream::for_role(seed, traj, StreamRole::Perturbation, 0);
    let d = cloud.dim();
    let mut out = Vec::with_capacity(cloud.len() * d);
    for i in 0..cloud.len() {
        let x = cloud.unit_vector(i);
        let dir = loop {
            let z: Vec<T> = (0..d).map(|_| rng.normal()).collect();
            let mut t = sphere::project_tangent(&x, &z)?.vec;
            if sphere::normalize_in_place(&mut t).is_ok() {
                break t;
            }
        };
        let moved: Vec<T> = x.as_slice().iter().zip(&dir).map(|(a, b)| *a + eta * *b).collect();
        out.extend(sphere::radial_normalize(&moved)?.into_inner());
    }
    TokenCloud::from_flat(d, out)
}

/// Runs the unperturbed flow and, for each `η`, flows from clouds perturbed
/// by `η` and `η/2`, all sharing one weight path. Records `W2` to the
/// unperturbed cloud every `record_stride` steps.
pub fn gronwall_experiment<T: Scalar>(
    scenario: &Scenario<T>,
    heads: usize,
    etas: &[T],
    early_time: T,
    traj: u64,
) -> Result<GronwallReport<T>> {
    scenario.validate()?;
    let (cloud, ens, _) = scenario.initial_state(heads, traj);
    let mut starts = vec![cloud.clone()];
    for &eta in etas {
        starts.push(perturb_cloud(&cloud, eta, scenario.seed, traj)?);
        starts.push(perturb_cloud(&cloud, eta * T::lit(0.5), scenario.seed, traj)?);
    }
    let mut sims = starts
        .into_iter()
        .map(|c| {
            Simulator::new(
                c,
                ens.clone(),
                scenario.process.clone(),
                scenario.dt,
                scenario.update_order,
                head_streams(scenario.seed, traj, heads),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let steps = scenario.sim_config().steps();
    let mut times = Vec::new();
    let mut m_theta = Vec::new();
    let mut dists: Vec<Vec<T>> = vec![Vec::new(); sims.len() - 1];
    let mut m = T::zero();
    for k in 0..=steps {
        if k % scenario.record_stride == 0 || k == steps {
            times.push(T::of_usize(k) * scenario.dt);
            m_theta.push(m);
            let base = sims[0].cloud();
            for (dist, sim) in dists.iter_mut().zip(&sims[1..]) {
                dist.push(w2_squared(sim.cloud(), base)?.sqrt());
            }
        }
        if k == steps {
            break;
        }
        m += sims[0].ensemble().mean_frobenius_sq() * scenario.dt;
        for sim in sims.iter_mut() {
            sim.advance().context("experiments", "gronwall")?;
        }
    }
    let runs: Vec<GronwallRun<T>> = etas
        .iter()
        .zip(dists.chunks(2))
        .map(|(&eta, pair)| GronwallRun {
            eta,
            w2: pair[0].clone(),
            w2_half: pair[1].clone(),
        })
        .collect();
    let (c1, c2) = fit_envelope(&runs, &m_theta);
    let envelope_holds = runs.iter().all(|r| {
        r.w2.iter()
            .chain(&r.w2_half)
            .zip(m_theta.iter().chain(&m_theta))
            .enumerate()
            .all(|(k, (w, mt))| {
                let w0 = if k < m_theta.len() { r.w2[0] } else { r.w2_half[0] };
                *w <= c1 * w0 * (c2 * *mt).exp() * (T::one() + T::lit(1e-12))
            })
    });
    let mut halving_max_deviation = T::zero();
    for r in &runs {
        for (k, t) in times.iter().enumerate() {
            if *t <= early_time && r.w2[k] > T::zero() {
                let dev = (r.w2_half[k] / r.w2[k] - T::lit(0.5)).abs() / T::lit(0.5);
                halving_max_deviation = halving_max_deviation.max(dev);
            }
        }
    }
    Ok(GronwallReport {
        heads,
        times,
        m_theta,
        runs,
        c1,
        c2,
        envelope_holds,
        early_time,
        halving_max_deviation,
    })
}

/// `C₁ = 1` (the bound is tight at `t = 0`) and the smallest `C₂ ≥ 0` with
/// `W2(t) ≤ W2(0) exp(C₂ M_θ(t))` for every run and grid point.
fn fit_envelope<T: Scalar>(runs: &[GronwallRun<T>], m_theta: &[T]) -> (T, T) {
    let mut c2 = T::zero();
    for r in runs {
        for series in [&r.w2, &r.w2_half] {
            let w0 = series[0];
            if !(w0 > T::zero()) {
                continue;
            }
            for (w, m) in series.iter().zip(m_theta).skip(1) {
                if *m > T::zero() && *w > T::zero() {
                    c2 = c2.max((*w / w0).ln() / *m);
                }
            }
        }
    }
    (T::one(), c2)
}

/// Weight-perturbation stability runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport<T> {
    pub reference_heads: usize,
    pub heads: Vec<usize>,
    /// MC mean and SE of `W2(u^H_T, u^ref_T)` per head count.
    pub w2: Vec<(T, T)>,
    /// Per trajectory, per head count.
    pub samples: Vec<Vec<T>>,
    pub strictly_decreasing: bool,
}

/// Flows driven by the first `H` heads of a `reference_heads`-head pool,
/// compared at `T` with the flow driven by the whole pool. Each head keeps
/// its own initial draw and noise path in every run.
pub fn stability_experiment<T: Scalar>(
    scenario: &Scenario<T>,
    heads: &[usize],
    reference_heads: usize,
) -> Result<StabilityReport<T>> {
    scenario.validate()?;
    if let Some(h) = heads.iter().find(|h| **h == 0 || **h > reference_heads) {
        return Err(Error::invalid("heads", format!("{h} is not in 1..={reference_heads}")));
    }
    if scenario.n_mc < 2 {
        return Err(Error::invalid("n_mc", "must be >= 2"));
    }
    let steps = scenario.sim_config().steps();
    let run = |h: usize, traj: u64| -> Result<TokenCloud<T>> {
        let (cloud, pool, _) = scenario.initial_state(reference_heads, traj);
        let mut sim = Simulator::new(
            cloud,
            pool.truncated(h),
            scenario.process.clone(),
            scenario.dt,
            scenario.update_order,
            head_streams(scenario.seed, traj, h),
        )?;
        for _ in 0..steps {
            sim.advance()?;
        }
        Ok(sim.into_state().0)
    };
    let samples = (0..scenario.n_mc as u64)
        .into_par_iter()
        .map(|traj| {
            let reference = run(reference_heads, traj)?;
            heads
                .iter()
                .map(|&h| Ok(w2_squared(&run(h, traj)?, &reference)?.sqrt()))
                .collect::<Result<Vec<T>>>()
        })
        .collect::<Result<Vec<_>>>()
        .context("experiments", "stability")?;
    let w2: Vec<(T, T)> = (0..heads.len())
        .map(|k| mean_se(&samples.iter().map(|s| s[k]).collect::<Vec<_>>()))
        .collect();
    let strictly_decreasing = w2.windows(2).all(|p| p[1].0 < p[0].0);
    Ok(StabilityReport {
        reference_heads,
        heads: heads.to_vec(),
        w2,
        samples,
        strictly_decreasing,
    })
}
