//! Stochastic evolution of the head weights.
//!
//! Each head follows `dD = f(D, t) dt + g dW` with `W` a symmetrized matrix
//! Brownian motion, discretized by Euler–Maruyama. All randomness comes from
//! [`RngStream`]s keyed by `(seed, stream_id)`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::HeadEnsemble;
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::scalar::Scalar;

/// Purpose tag folded into a stream id so that different consumers of one
/// trajectory never share random numbers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamRole {
    Tokens = 1,
    InitialWeights = 2,
    Increments = 3,
    Perturbation = 4,
    Sampling = 5,
}

/// Stream id for `(trajectory, role, index)`:
/// bits 32..64 hold the trajectory, 24..32 the role, 0..24 the index
/// (usually a head number).
pub fn stream_id(trajectory: u64, role: StreamRole, index: u64) -> u64 {
    (trajectory << 32) | ((role as u64) << 24) | (index & 0x00FF_FFFF)
}

/// A reproducible random stream: ChaCha8 keyed by `seed`, on stream `stream_id`.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn for_role(seed: u64, trajectory: u64, role: StreamRole, index: u64) -> Self {
        Self::new(seed, stream_id(trajectory, role, index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn normal<T: Scalar>(&mut self) -> T {
        T::lit(self.rng.sample::<f64, _>(StandardNormal))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// One independent increment stream per head.
pub fn head_streams(seed: u64, trajectory: u64, heads: usize) -> Vec<RngStream> {
    (0..heads)
        .map(|h| RngStream::for_role(seed, trajectory, StreamRole::Increments, h as u64))
        .collect()
}

/// `W = (Z + Zᵀ)/2` with `Z` a `d × d` matrix of i.i.d. `N(0, dt)` entries.
///
/// Diagonal entries have variance `dt`, off-diagonal ones `dt / 2`.
pub fn symmetrized_increment<T: Scalar, R: Rng + ?Sized>(rng: &mut R, d: usize, dt: T) -> SymMatrix<T> {
    let sd = dt.sqrt();
    let z: Vec<T> = (0..d * d)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)) * sd)
        .collect();
    let half = T::lit(0.5);
    SymMatrix::from_upper_fn(d, |a, b| (z[a * d + b] + z[b * d + a]) * half)
}

/// Time-sampled target `F(t_k)`, linearly interpolated and held constant
/// outside the sampled range.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSchedule<T> {
    times: Vec<T>,
    targets: Vec<SymMatrix<T>>,
}

impl<T: Scalar> TargetSchedule<T> {
    pub fn new(times: Vec<T>, targets: Vec<SymMatrix<T>>) -> Result<Self> {
        if times.is_empty() || times.len() != targets.len() {
            return Err(Error::invalid(
                "schedule",
                format!("{} times for {} targets", times.len(), targets.len()),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("schedule", "times must be strictly increasing"));
        }
        let dim = targets[0].dim();
        if let Some(bad) = targets.iter().find(|m| m.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        Ok(Self { times, targets })
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn targets(&self) -> &[SymMatrix<T>] {
        &self.targets
    }

    pub fn dim(&self) -> usize {
        self.targets[0].dim()
    }

    pub fn at(&self, t: T) -> SymMatrix<T> {
        let k = self.times.partition_point(|s| *s <= t);
        if k == 0 {
            return self.targets[0].clone();
        }
        if k == self.times.len() {
            return self.targets[k - 1].clone();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        let mut out = self.targets[k - 1].scale(T::one() - w);
        out.axpy(w, &self.targets[k]);
        out
    }
}

/// Drift/diffusion law of the head weights.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightProcessSpec<T> {
    /// `f = F − D`, `g = √(2σ²)`.
    Ou { target: SymMatrix<T>, sigma2: T },
    /// `f = F^{(h)}(t) − D` with the 3×3 periodic targets, `g = √(2σ²)`
    /// (σ² = 0 is the deterministic case).
    Oscillating { phase_spread: bool, sigma2: T },
    /// `f = g = 0`.
    Frozen,
    /// `f = F(t) − D` with a sampled schedule, `g = √(2σ²)`.
    CustomSchedule {
        schedule: TargetSchedule<T>,
        sigma2: T,
    },
}

fn check_sigma2<T: Scalar>(sigma2: T) -> Result<()> {
    if !(sigma2 >= T::zero()) || !sigma2.is_finite() {
        return Err(Error::invalid("sigma2", format!("must be finite and >= 0, got {sigma2}")));
    }
    Ok(())
}

impl<T: Scalar> WeightProcessSpec<T> {
    pub fn ou(target: SymMatrix<T>, sigma2: T) -> Result<Self> {
        check_sigma2(sigma2)?;
        Ok(Self::Ou { target, sigma2 })
    }

    pub fn oscillating(phase_spread: bool, sigma2: T) -> Result<Self> {
        check_sigma2(sigma2)?;
        Ok(Self::Oscillating {
            phase_spread,
            sigma2,
        })
    }

    pub fn custom(schedule: TargetSchedule<T>, sigma2: T) -> Result<Self> {
        check_sigma2(sigma2)?;
        Ok(Self::CustomSchedule { schedule, sigma2 })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Ou { .. } => "ou",
            Self::Oscillating { .. } => "oscillating",
            Self::Frozen => "frozen",
            Self::CustomSchedule { .. } => "custom",
        }
    }

    pub fn sigma2(&self) -> T {
        match self {
            Self::Ou { sigma2, .. }
            | Self::Oscillating { sigma2, .. }
            | Self::CustomSchedule { sigma2, .. } => *sigma2,
            Self::Frozen => T::zero(),
        }
    }

    /// The scalar diffusion coefficient `g = √(2σ²)`.
    pub fn diffusion(&self) -> T {
        (T::lit(2.0) * self.sigma2()).sqrt()
    }

    pub fn is_stochastic(&self) -> bool {
        self.sigma2() > T::zero()
    }

    /// Target `F^{(h)}(t)` for head `h` (0-based) of `heads`, if the process has one.
    pub fn target(&self, t: T, h: usize, heads: usize) -> Option<SymMatrix<T>> {
        match self {
            Self::Ou { target, .. } => Some(target.clone()),
            Self::Oscillating { phase_spread, .. } => {
                let phase = if *phase_spread {
                    T::TAU() * T::of_usize(h) / T::of_usize(heads.max(1))
                } else {
                    T::zero()
                };
                Some(oscillating_target(t, phase))
            }
            Self::Frozen => None,
            Self::CustomSchedule { schedule, .. } => Some(schedule.at(t)),
        }
    }

    /// Drift `f(D, t)` for head `h` (0-based) of `heads`.
    pub fn drift(&self, d: &SymMatrix<T>, t: T, h: usize, heads: usize) -> Result<SymMatrix<T>> {
        if let Self::Oscillating { .. } = self {
            if d.dim() != 3 {
                return Err(Error::OscillatingDimension { dim: d.dim() });
            }
        }
        if let Self::CustomSchedule { schedule, .. } = self {
            if schedule.dim() != d.dim() {
                return Err(Error::DimensionMismatch {
                    expected: schedule.dim(),
                    found: d.dim(),
                });
            }
        }
        if let Self::Ou { target, .. } = self {
            if target.dim() != d.dim() {
                return Err(Error::DimensionMismatch {
                    expected: target.dim(),
                    found: d.dim(),
                });
            }
        }
        Ok(match self.target(t, h, heads) {
            Some(f) => f.sub(d),
            None => SymMatrix::zeros(d.dim()),
        })
    }

    /// Mean of an OU head at time `t` started from mean `d0`:
    /// `F + e^{-t}(D_0 − F)`. `None` for other processes.
    pub fn ou_mean(&self, d0: &SymMatrix<T>, t: T) -> Option<SymMatrix<T>> {
        match self {
            Self::Ou { target, .. } => {
                let mut m = target.clone();
                m.axpy((-t).exp(), &d0.sub(target));
                Some(m)
            }
            _ => None,
        }
    }
}

/// The periodic 3×3 target with phase offset `phase`.
pub fn oscillating_target<T: Scalar>(t: T, phase: T) -> SymMatrix<T> {
    let two = T::lit(2.0);
    let amp = T::lit(1.5);
    let a = t + phase;
    let b = two * t + phase;
    let mut f = SymMatrix::zeros(3);
    f.set(0, 0, two + amp * a.cos());
    f.set(0, 1, b.sin());
    f.set(0, 2, a.sin());
    f.set(1, 1, two + amp * a.sin());
    f.set(1, 2, b.cos());
    f.set(2, 2, two + amp * (a + T::FRAC_PI_4()).cos());
    f
}

/// One Euler–Maruyama step for every head:
/// `D ← D + f(D, t) dt + √(2σ²) W`.
///
/// Returns the new ensemble together with the increments `W` consumed (zero
/// matrices, and no random draws, when the process is deterministic).
pub fn step_weights<T: Scalar>(
    ens: &HeadEnsemble<T>,
    spec: &WeightProcessSpec<T>,
    t: T,
    dt: T,
    streams: &mut [RngStream],
) -> Result<(HeadEnsemble<T>, Vec<SymMatrix<T>>)> {
    let mut next = ens.clone();
    let incs = step_weights_in_place(&mut next, spec, t, dt, streams)?;
    Ok((next, incs))
}

pub(crate) fn step_weights_in_place<T: Scalar>(
    ens: &mut HeadEnsemble<T>,
    spec: &WeightProcessSpec<T>,
    t: T,
    dt: T,
    streams: &mut [RngStream],
) -> Result<Vec<SymMatrix<T>>> {
    let (drifts, incs) = weight_transition(ens, spec, t, dt, streams)?;
    apply_transition(ens, spec, dt, &drifts, &incs);
    Ok(incs)
}

/// Per-head drifts and noise increments of one step.
pub(crate) type Transition<T> = (Vec<SymMatrix<T>>, Vec<SymMatrix<T>>);

/// Drifts `f(D_h, t)` and increments `W_h` for one Euler–Maruyama step,
/// without applying them.
pub(crate) fn weight_transition<T: Scalar>(
    ens: &HeadEnsemble<T>,
    spec: &WeightProcessSpec<T>,
    t: T,
    dt: T,
    streams: &mut [RngStream],
) -> Result<Transition<T>> {
    if !(dt > T::zero()) {
        return Err(Error::invalid("dt", format!("must be > 0, got {dt}")));
    }
    let heads = ens.len();
    let dim = ens.dim();
    if matches!(spec, WeightProcessSpec::Frozen) {
        let zeros = vec![SymMatrix::zeros(dim); heads];
        return Ok((zeros.clone(), zeros));
    }
    let stochastic = spec.is_stochastic();
    if stochastic && streams.len() < heads {
        return Err(Error::IncrementCount {
            expected: heads,
            found: streams.len(),
        });
    }
    let mut drifts = Vec::with_capacity(heads);
    let mut incs = Vec::with_capacity(heads);
    for (h, d) in ens.heads().iter().enumerate() {
        drifts.push(spec.drift(d, t, h, heads)?);
        incs.push(if stochastic {
            symmetrized_increment(&mut streams[h], dim, dt)
        } else {
            SymMatrix::zeros(dim)
        });
    }
    Ok((drifts, incs))
}

pub(crate) fn apply_transition<T: Scalar>(
    ens: &mut HeadEnsemble<T>,
    spec: &WeightProcessSpec<T>,
    dt: T,
    drifts: &[SymMatrix<T>],
    incs: &[SymMatrix<T>],
) {
    if matches!(spec, WeightProcessSpec::Frozen) {
        return;
    }
    let g = spec.diffusion();
    let stochastic = spec.is_stochastic();
    for ((d, f), w) in ens.heads_mut().iter_mut().zip(drifts).zip(incs) {
        d.axpy(dt, f);
        if stochastic {
            d.axpy(g, w);
        }
    }
}

/// Running left Riemann sum `M(t_k) = Σ_{j<k} (1/H) Σ_h ‖D_h(t_j)‖_F² dt`,
/// with `M(t_0) = 0`. `dt` is the spacing between consecutive ensembles.
pub fn m_theta_integral<T: Scalar>(trajectory: &[HeadEnsemble<T>], dt: T) -> Vec<T> {
    let mut out = Vec::with_capacity(trajectory.len());
    let mut acc = T::zero();
    for (k, _) in trajectory.iter().enumerate() {
        if k > 0 {
            acc += trajectory[k - 1].mean_frobenius_sq() * dt;
        }
        out.push(acc);
    }
    out
}

/// Law of a single head's weight matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum HeadLaw<T> {
    /// A fixed matrix.
    Atom(SymMatrix<T>),
    /// Independent Gaussian upper-triangular entries around `mean`.
    Gaussian {
        mean: SymMatrix<T>,
        diag_var: T,
        offdiag_var: T,
    },
}

impl<T: Scalar> HeadLaw<T> {
    /// Entrywise `N(mean, var)` on every upper-triangular entry.
    pub fn isotropic(mean: SymMatrix<T>, var: T) -> Self {
        Self::Gaussian {
            mean,
            diag_var: var,
            offdiag_var: var,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Atom(m) => m.dim(),
            Self::Gaussian { mean, .. } => mean.dim(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SymMatrix<T> {
        match self {
            Self::Atom(m) => m.clone(),
            Self::Gaussian {
                mean,
                diag_var,
                offdiag_var,
            } => {
                let (sd_d, sd_o) = (diag_var.sqrt(), offdiag_var.sqrt());
                SymMatrix::from_upper_fn(mean.dim(), |a, b| {
                    let z = T::lit(rng.sample::<f64, _>(StandardNormal));
                    mean.get(a, b) + z * if a == b { sd_d } else { sd_o }
                })
            }
        }
    }

    /// `count` i.i.d. draws as an ensemble.
    pub fn sample_ensemble<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> HeadEnsemble<T> {
        HeadEnsemble::new((0..count.max(1)).map(|_| self.sample(rng)).collect())
            .expect("non-empty ensemble of equal dimensions")
    }

    /// Law of one head at time `t` when started from `self` and evolved by
    /// `spec` in continuous time. Exact for OU and frozen processes; for the
    /// others the deterministic part is integrated numerically from the mean.
    pub fn evolve(&self, spec: &WeightProcessSpec<T>, t: T) -> HeadLaw<T> {
        let (mean0, dv0, ov0) = match self {
            Self::Atom(m) => (m.clone(), T::zero(), T::zero()),
            Self::Gaussian {
                mean,
                diag_var,
                offdiag_var,
            } => (mean.clone(), *diag_var, *offdiag_var),
        };
        if let WeightProcessSpec::Frozen = spec {
            return self.clone();
        }
        let decay = (-t).exp();
        let decay2 = decay * decay;
        let mean = match spec.ou_mean(&mean0, t) {
            Some(m) => m,
            None => {
                // E[D] solves dm/dt = F(t) − m for the head-0 target.
                let steps = 2000usize.max((t.as_f64() * 400.0) as usize);
                let h = t / T::of_usize(steps);
                let mut m = mean0.clone();
                for k in 0..steps {
                    let f = spec
                        .target(h * T::of_usize(k), 0, 1)
                        .unwrap_or_else(|| m.clone());
                    let mut next = m.clone();
                    next.axpy(h, &f.sub(&m));
                    m = next;
                }
                m
            }
        };
        let s2 = spec.sigma2();
        let diag_var = dv0 * decay2 + s2 * (T::one() - decay2);
        let offdiag_var = ov0 * decay2 + s2 * T::lit(0.5) * (T::one() - decay2);
        if diag_var == T::zero() && offdiag_var == T::zero() {
            Self::Atom(mean)
        } else {
            Self::Gaussian {
                mean,
                diag_var,
                offdiag_var,
            }
        }
    }
}

/// Initial ensemble for trajectory `trajectory`: head `h` draws from its own
/// stream, so the first `H` heads do not depend on the total head count.
pub fn sample_initial_ensemble<T: Scalar>(
    law: &HeadLaw<T>,
    heads: usize,
    seed: u64,
    trajectory: u64,
) -> HeadEnsemble<T> {
    let mats = (0..heads.max(1))
        .map(|h| {
            let mut rng = RngStream::for_role(seed, trajectory, StreamRole::InitialWeights, h as u64);
            law.sample(&mut rng)
        })
        .collect();
    HeadEnsemble::new(mats).expect("non-empty ensemble of equal dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let mut c = RngStream::new(7, 4);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        assert_ne!(
            stream_id(1, StreamRole::Increments, 0),
            stream_id(0, StreamRole::Increments, 1)
        );
    }

    #[test]
    fn increment_is_exactly_symmetric() {
        let mut rng = RngStream::new(1, 1);
        for _ in 0..100 {
            let w = symmetrized_increment::<f64, _>(&mut rng, 4, 0.01);
            assert!(w.is_exactly_symmetric());
        }
    }

    #[test]
    fn increment_variances() {
        let mut rng = RngStream::new(2024, 0);
        let dt = 0.3;
        let n = 100_000;
        let (mut sd, mut sdd, mut so, mut soo) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let w = symmetrized_increment::<f64, _>(&mut rng, 2, dt);
            sd += w.get(0, 0);
            sdd += w.get(0, 0) * w.get(0, 0);
            so += w.get(0, 1);
            soo += w.get(0, 1) * w.get(0, 1);
        }
        let nf = n as f64;
        let var_d = sdd / nf - (sd / nf).powi(2);
        let var_o = soo / nf - (so / nf).powi(2);
        // SE of a Gaussian sample variance: var * sqrt(2 / n).
        let se = |v: f64| v * (2.0 / nf).sqrt();
        assert!((var_d - dt).abs() < 3.0 * se(dt), "diag var {var_d}");
        assert!((var_o - dt / 2.0).abs() < 3.0 * se(dt / 2.0), "off var {var_o}");
    }

    #[test]
    fn drift_examples() {
        let ou = WeightProcessSpec::ou(SymMatrix::<f64>::identity(3), 1.0).unwrap();
        assert_eq!(ou.drift(&SymMatrix::zeros(3), 0.0, 0, 1).unwrap(), SymMatrix::identity(3));

        let osc = WeightProcessSpec::<f64>::oscillating(true, 0.0).unwrap();
        let f = osc.drift(&SymMatrix::zeros(3), 0.0, 0, 10).unwrap();
        let want = [[3.5, 0.0, 0.0], [0.0, 2.0, 1.0], [0.0, 1.0, 3.06066]];
        for a in 0..3 {
            for b in 0..3 {
                assert!((f.get(a, b) - want[a][b]).abs() < 1e-5, "({a},{b})");
            }
        }
        let d = SymMatrix::scalar(3, 0.5);
        let f2 = osc.drift(&d, 0.0, 0, 10).unwrap();
        assert!((f2.get(0, 0) - 3.0).abs() < 1e-15);
        assert!(matches!(
            osc.drift(&SymMatrix::zeros(2), 0.0, 0, 1),
            Err(Error::OscillatingDimension { dim: 2 })
        ));

        let frozen = WeightProcessSpec::<f64>::Frozen;
        assert_eq!(frozen.drift(&d, 3.0, 1, 2).unwrap(), SymMatrix::zeros(3));
    }

    #[test]
    fn phase_spread_shifts_heads() {
        let osc = WeightProcessSpec::<f64>::oscillating(true, 0.0).unwrap();
        let f1 = osc.target(0.0, 1, 4).unwrap();
        // Head 2 of 4 has phase π/2.
        assert!((f1.get(0, 0) - (2.0 + 1.5 * std::f64::consts::FRAC_PI_2.cos())).abs() < 1e-15);
        let same = WeightProcessSpec::<f64>::oscillating(false, 0.0).unwrap();
        assert_eq!(same.target(0.7, 0, 4), same.target(0.7, 3, 4));
    }

    #[test]
    fn negative_sigma2_rejected() {
        assert!(WeightProcessSpec::ou(SymMatrix::<f64>::identity(2), -1.0).is_err());
    }

    #[test]
    fn frozen_step_is_identity() {
        let ens = HeadEnsemble::new(vec![SymMatrix::<f64>::diagonal(&[1.0, -2.0])]).unwrap();
        let (next, incs) =
            step_weights(&ens, &WeightProcessSpec::Frozen, 0.0, 0.1, &mut []).unwrap();
        assert_eq!(next, ens);
        assert_eq!(incs.len(), 1);
    }

    #[test]
    fn deterministic_ou_closed_form() {
        let spec = WeightProcessSpec::ou(SymMatrix::<f64>::identity(3), 0.0).unwrap();
        let mut ens = HeadEnsemble::replicated(SymMatrix::zeros(3), 1);
        let dt = 0.05;
        for k in 1..=40 {
            ens = step_weights(&ens, &spec, dt * (k - 1) as f64, dt, &mut []).unwrap().0;
            let want = 1.0 - (1.0 - dt).powi(k);
            let got = &ens.heads()[0];
            assert!((got.get(0, 0) - want).abs() < 1e-14);
            assert_eq!(got.get(0, 1), 0.0);
        }
    }

    #[test]
    fn stochastic_step_needs_streams() {
        let spec = WeightProcessSpec::ou(SymMatrix::<f64>::identity(2), 1.0).unwrap();
        let ens = HeadEnsemble::replicated(SymMatrix::zeros(2), 3);
        let mut streams = head_streams(1, 0, 2);
        assert!(matches!(
            step_weights(&ens, &spec, 0.0, 0.1, &mut streams),
            Err(Error::IncrementCount { expected: 3, found: 2 })
        ));
        assert!(step_weights(&ens, &spec, 0.0, 0.0, &mut streams).is_err());
    }

    #[test]
    fn stochastic_steps_stay_symmetric_and_reproducible() {
        let spec = WeightProcessSpec::ou(SymMatrix::<f64>::identity(3), 1.0).unwrap();
        let run = || {
            let mut ens = HeadEnsemble::replicated(SymMatrix::zeros(3), 4);
            let mut streams = head_streams(99, 2, 4);
            for k in 0..200 {
                ens = step_weights(&ens, &spec, 0.01 * k as f64, 0.01, &mut streams)
                    .unwrap()
                    .0;
                assert!(ens.heads().iter().all(|m| m.is_exactly_symmetric()));
            }
            ens
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn m_theta_examples() {
        let zero = vec![HeadEnsemble::replicated(SymMatrix::<f64>::zeros(3), 2); 5];
        assert!(m_theta_integral(&zero, 0.1).iter().all(|m| *m == 0.0));
        let eye = vec![HeadEnsemble::replicated(SymMatrix::<f64>::identity(3), 1); 101];
        let m = m_theta_integral(&eye, 0.01);
        assert_eq!(m[0], 0.0);
        assert!((m[100] - 3.0).abs() < 1e-9);
        assert!(m.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn schedule_interpolates_linearly() {
        let s = TargetSchedule::new(
            vec![0.0, 1.0],
            vec![SymMatrix::<f64>::zeros(2), SymMatrix::identity(2)],
        )
        .unwrap();
        assert!((s.at(0.25).get(0, 0) - 0.25).abs() < 1e-15);
        assert_eq!(s.at(-1.0), SymMatrix::zeros(2));
        assert_eq!(s.at(5.0), SymMatrix::identity(2));
        assert!(TargetSchedule::new(vec![1.0, 1.0], vec![SymMatrix::<f64>::zeros(2); 2]).is_err());
    }

    #[test]
    fn evolved_law_of_ou_relaxes() {
        let spec = WeightProcessSpec::ou(SymMatrix::<f64>::identity(2), 1.0).unwrap();
        let law = HeadLaw::isotropic(SymMatrix::zeros(2), 1.0).evolve(&spec, 30.0);
        match law {
            HeadLaw::Gaussian {
                mean,
                diag_var,
                offdiag_var,
            } => {
                assert!(mean.max_abs_diff(&SymMatrix::identity(2)) < 1e-12);
                assert!((diag_var - 1.0).abs() < 1e-12);
                assert!((offdiag_var - 0.5).abs() < 1e-12);
            }
            _ => panic!("expected a Gaussian law"),
        }
    }
}
