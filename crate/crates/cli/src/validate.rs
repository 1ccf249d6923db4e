//! Fast self-checks of the numerical core.

use mfattn_core::attention::{attention_row, multihead_velocity};
use mfattn_core::dynamics::initial_cloud;
use mfattn_core::sphere::{kernel_gradient, project_tangent, radial_normalize};
use mfattn_core::weights::{head_streams, sample_initial_ensemble};
use mfattn_core::{
    interaction_energy, simulate, w2_squared, HeadLaw, RngStream, SimulationConfig, StreamRole, SymMatrix,
    TokenCloud, UnitVector, WeightProcessSpec,
};

use crate::CliError;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const SEED: u64 = 0x5eed;

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn rng(k: u64) -> RngStream {
    RngStream::for_role(SEED, k, StreamRole::Sampling, 0)
}

fn random_weight(rng: &mut RngStream, dim: usize, norm: Option<f64>) -> SymMatrix<f64> {
    let d = HeadLaw::isotropic(SymMatrix::zeros(dim), 1.0).sample(rng);
    match norm {
        Some(target) => d.scale(target / d.spectral_norm()),
        None => d,
    }
}

fn softmax_rows() -> mfattn_core::Result<Check> {
    let mut worst = 0.0f64;
    for k in 0..200 {
        let mut r = rng(k);
        let cloud = TokenCloud::<f64>::random_uniform(16, 3, &mut r);
        let d = random_weight(&mut r, 3, (k % 2 == 0).then_some(50.0));
        for i in 0..cloud.len() {
            let row = attention_row(&cloud, &d, i)?;
            if row.iter().any(|a| *a < 0.0) {
                worst = f64::INFINITY;
            }
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    Ok(Check {
        name: "softmax rows sum to one",
        passed: worst <= 1e-12,
        detail: format!("max |Σ_j A_ij − 1| = {worst:.2e}"),
    })
}

fn tangency_and_norm() -> mfattn_core::Result<Check> {
    let law = HeadLaw::isotropic(SymMatrix::zeros(3), 1.0);
    let cloud = initial_cloud::<f64>(20, 3, SEED, 0);
    let ens = sample_initial_ensemble(&law, 3, SEED, 0);
    let mut tangency = 0.0f64;
    for i in 0..cloud.len() {
        let v = multihead_velocity(&cloud, &ens, i)?;
        tangency = tangency.max(dot(&v.vec, cloud.point(i)).abs());
    }
    let spec = WeightProcessSpec::ou(SymMatrix::identity(3), 1.0)?;
    let traj = simulate(cloud, ens, spec, &SimulationConfig::new(0.01, 2.0), head_streams(SEED, 0, 3))?;
    let norm = traj.clouds.iter().map(|c| c.max_norm_error()).fold(0.0, f64::max);
    Ok(Check {
        name: "velocities tangent, tokens unit norm",
        passed: tangency <= 1e-10 && norm <= 1e-9,
        detail: format!("max |⟨v_i, x_i⟩| = {tangency:.2e}, max ||x_i| − 1| = {norm:.2e}"),
    })
}

fn kernel_gradient_fd() -> mfattn_core::Result<Check> {
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..100 {
        let mut r = rng(1000 + k);
        let x = UnitVector::<f64>::random(3, &mut r);
        let y = UnitVector::<f64>::random(3, &mut r);
        let d = random_weight(&mut r, 3, None);
        let z: Vec<f64> = (0..3).map(|_| r.normal()).collect();
        let u = project_tangent(&x, &z)?.vec;
        let kernel = |p: &[f64]| -> mfattn_core::Result<f64> {
            let q = radial_normalize(p)?;
            Ok(d.bilinear(q.as_slice(), y.as_slice()).exp())
        };
        let shifted = |s: f64| -> Vec<f64> { x.as_slice().iter().zip(&u).map(|(a, b)| a + s * b).collect() };
        let fd = (kernel(&shifted(eps))? - kernel(&shifted(-eps))?) / (2.0 * eps);
        let exact = dot(&kernel_gradient(&x, &y, &d)?.vec, &u);
        worst = worst.max((fd - exact).abs() / exact.abs().max(1e-8));
    }
    Ok(Check {
        name: "kernel gradient matches finite differences",
        passed: worst < 1e-4,
        detail: format!("max relative error = {worst:.2e}"),
    })
}

fn brute_w2(a: &TokenCloud<f64>, b: &TokenCloud<f64>) -> f64 {
    fn rec(a: &TokenCloud<f64>, b: &TokenCloud<f64>, i: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        let n = a.len();
        if i == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                let c: f64 = a.point(i).iter().zip(b.point(j)).map(|(p, q)| (p - q) * (p - q)).sum();
                rec(a, b, i + 1, used, acc + c, best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(a, b, 0, &mut vec![false; a.len()], 0.0, &mut best);
    best / a.len() as f64
}

fn w2_assignment() -> mfattn_core::Result<Check> {
    let mut worst = 0.0f64;
    for k in 0..50 {
        let mut r = rng(2000 + k);
        let n = 1 + (k as usize % 6);
        let a = TokenCloud::<f64>::random_uniform(n, 3, &mut r);
        let b = TokenCloud::<f64>::random_uniform(n, 3, &mut r);
        worst = worst.max((w2_squared(&a, &b)? - brute_w2(&a, &b)).abs());
    }
    Ok(Check {
        name: "W2 assignment equals exhaustive minimum",
        passed: worst <= 1e-10,
        detail: format!("max gap = {worst:.2e}"),
    })
}

fn permutation_invariance() -> mfattn_core::Result<Check> {
    let law = HeadLaw::isotropic(SymMatrix::zeros(3), 1.0);
    let cloud = initial_cloud::<f64>(12, 3, SEED, 1);
    let ens = sample_initial_ensemble(&law, 4, SEED, 1);
    let perm: Vec<usize> = (0..12).rev().collect();
    let a = interaction_energy(&cloud, &ens)?;
    let b = interaction_energy(&cloud.permuted(&perm), &ens)?;
    let gap = (a - b).abs() / a.abs();
    Ok(Check {
        name: "energy invariant under token permutation",
        passed: gap <= 1e-12,
        detail: format!("relative gap = {gap:.2e}"),
    })
}

fn determinism() -> mfattn_core::Result<Check> {
    let run = || {
        let law = HeadLaw::isotropic(SymMatrix::zeros(3), 1.0);
        let spec = WeightProcessSpec::ou(SymMatrix::identity(3), 1.0)?;
        simulate(
            initial_cloud::<f64>(10, 3, 7, 0),
            sample_initial_ensemble(&law, 2, 7, 0),
            spec,
            &SimulationConfig::new(0.05, 1.0),
            head_streams(7, 0, 2),
        )
    };
    let same = run()? == run()?;
    Ok(Check {
        name: "same seed, same trajectory",
        passed: same,
        detail: String::new(),
    })
}

pub fn run() -> Result<(), CliError> {
    let checks = [
        softmax_rows()?,
        tangency_and_norm()?,
        kernel_gradient_fd()?,
        w2_assignment()?,
        permutation_invariance()?,
        determinism()?,
    ];
    let mut failed = Vec::new();
    for c in &checks {
        println!("{} {}  {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        if !c.passed {
            failed.push(c.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("failed checks: {}", failed.join(", "))))
    }
}
