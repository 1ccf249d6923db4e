//! Softmax self-attention on a token cloud, per-head and multi-head velocity
//! fields, and the Boltzmann mobilities they induce.
//!
//! The single-token functions ([`attention_row`], [`head_velocity`], ...) are
//! direct transcriptions used by tests and small diagnostics. Whole-cloud
//! evaluation goes through [`FieldEvaluator`], which makes one pass over the
//! `(i, j)` pairs per head and reuses its buffers between calls.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::scalar::{dot, exp_nonpositive_slice, norm_sq, Scalar};
use crate::sphere::{self, TangentVector, UnitVector, UNIT_NORM_TOL};

/// `n` unit vectors in `R^d`, stored contiguously.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenCloud<T> {
    dim: usize,
    coords: Vec<T>,
}

impl<T: Scalar> TokenCloud<T> {
    pub fn new(points: Vec<UnitVector<T>>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::invalid("points", "a cloud needs at least one token"))?;
        let dim = first.dim();
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.dim(),
                });
            }
            coords.extend_from_slice(p.as_slice());
        }
        Ok(Self { dim, coords })
    }

    /// Builds a cloud from flat coordinates, checking every point is unit norm.
    pub fn from_flat(dim: usize, coords: Vec<T>) -> Result<Self> {
        if dim == 0 || coords.is_empty() || !coords.len().is_multiple_of(dim) {
            return Err(Error::invalid(
                "coords",
                format!("{} coordinates do not form points of dimension {dim}", coords.len()),
            ));
        }
        let cloud = Self { dim, coords };
        for i in 0..cloud.len() {
            let norm = norm_sq(cloud.point(i)).sqrt();
            if !((norm - T::one()).abs() <= T::lit(UNIT_NORM_TOL)) {
                return Err(Error::NotUnitNorm { norm: norm.as_f64() });
            }
        }
        Ok(cloud)
    }

    /// `n` i.i.d. uniform points on `S^{dim-1}`.
    pub fn random_uniform<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Self {
        let mut coords = Vec::with_capacity(n * dim);
        for _ in 0..n {
            coords.extend(UnitVector::<T>::random(dim, rng).into_inner());
        }
        Self { dim, coords }
    }

    #[inline(always)]
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline(always)]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline(always)]
    pub fn point(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn unit_vector(&self, i: usize) -> UnitVector<T> {
        UnitVector::from_normalized_unchecked(self.point(i).to_vec())
    }

    pub fn as_flat(&self) -> &[T] {
        &self.coords
    }

    pub(crate) fn as_flat_mut(&mut self) -> &mut [T] {
        &mut self.coords
    }

    /// Largest deviation of a point norm from 1.
    pub fn max_norm_error(&self) -> T {
        (0..self.len())
            .map(|i| (norm_sq(self.point(i)).sqrt() - T::one()).abs())
            .fold(T::zero(), T::max)
    }

    /// The cloud with point `perm[k]` moved to slot `k`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(self.coords.len());
        for &p in perm {
            coords.extend_from_slice(self.point(p));
        }
        Self {
            dim: self.dim,
            coords,
        }
    }

    /// Largest chordal distance between corresponding points.
    pub fn max_pointwise_distance(&self, other: &Self) -> T {
        (0..self.len())
            .map(|i| {
                self.point(i)
                    .iter()
                    .zip(other.point(i))
                    .map(|(a, b)| (*a - *b) * (*a - *b))
                    .sum::<T>()
                    .sqrt()
            })
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Scalar>(&self) -> TokenCloud<U> {
        TokenCloud {
            dim: self.dim,
            coords: self.coords.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }
}

/// `H` symmetric weight matrices, one per attention head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadEnsemble<T> {
    dim: usize,
    heads: Vec<SymMatrix<T>>,
}

impl<T: Scalar> HeadEnsemble<T> {
    pub fn new(heads: Vec<SymMatrix<T>>) -> Result<Self> {
        let dim = heads
            .first()
            .ok_or_else(|| Error::invalid("heads", "an ensemble needs at least one head"))?
            .dim();
        if let Some(bad) = heads.iter().find(|h| h.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        Ok(Self { dim, heads })
    }

    /// `count` copies of the same matrix.
    pub fn replicated(d: SymMatrix<T>, count: usize) -> Self {
        Self {
            dim: d.dim(),
            heads: vec![d; count.max(1)],
        }
    }

    #[inline(always)]
    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn heads(&self) -> &[SymMatrix<T>] {
        &self.heads
    }

    pub(crate) fn heads_mut(&mut self) -> &mut [SymMatrix<T>] {
        &mut self.heads
    }

    /// First `count` heads as a new ensemble.
    pub fn truncated(&self, count: usize) -> Self {
        Self {
            dim: self.dim,
            heads: self.heads[..count.clamp(1, self.heads.len())].to_vec(),
        }
    }

    /// Average squared Frobenius norm `(1/H) Σ_h ‖D_h‖²`.
    pub fn mean_frobenius_sq(&self) -> T {
        self.heads.iter().map(|h| h.frobenius_sq()).sum::<T>() / T::of_usize(self.len())
    }

    pub fn max_spectral_norm(&self) -> T {
        self.heads
            .iter()
            .map(|h| h.spectral_norm())
            .fold(T::zero(), T::max)
    }
}

fn check_index(i: usize, n: usize) -> Result<()> {
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, len: n });
    }
    Ok(())
}

fn check_dims<T: Scalar>(cloud: &TokenCloud<T>, d: &SymMatrix<T>) -> Result<()> {
    if cloud.dim() != d.dim() {
        return Err(Error::DimensionMismatch {
            expected: cloud.dim(),
            found: d.dim(),
        });
    }
    Ok(())
}

/// Row `i` of the softmax attention matrix `A_ij ∝ exp(⟨x_i, D x_j⟩)`.
pub fn attention_row<T: Scalar>(cloud: &TokenCloud<T>, d: &SymMatrix<T>, i: usize) -> Result<Vec<T>> {
    check_index(i, cloud.len())?;
    check_dims(cloud, d)?;
    let dxi = d.mul_vec(cloud.point(i));
    let mut row: Vec<T> = (0..cloud.len()).map(|j| dot(&dxi, cloud.point(j))).collect();
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for a in row.iter_mut() {
        *a = (*a - max).exp();
        total += *a;
    }
    for a in row.iter_mut() {
        *a /= total;
    }
    Ok(row)
}

/// Tangential single-head velocity `P⊥_{x_i}(Σ_j A_ij D x_j)`.
pub fn head_velocity<T: Scalar>(
    cloud: &TokenCloud<T>,
    d: &SymMatrix<T>,
    i: usize,
) -> Result<TangentVector<T>> {
    let row = attention_row(cloud, d, i)?;
    let mut mean = vec![T::zero(); cloud.dim()];
    for (j, a) in row.iter().enumerate() {
        for (m, x) in mean.iter_mut().zip(cloud.point(j)) {
            *m += *a * *x;
        }
    }
    let y = d.mul_vec(&mean);
    sphere::project_tangent(&cloud.unit_vector(i), &y)
}

/// Head-averaged velocity `(1/H) Σ_h V_i^{(h)}`.
pub fn multihead_velocity<T: Scalar>(
    cloud: &TokenCloud<T>,
    ens: &HeadEnsemble<T>,
    i: usize,
) -> Result<TangentVector<T>> {
    check_index(i, cloud.len())?;
    let mut acc = vec![T::zero(); cloud.dim()];
    for d in ens.heads() {
        let v = head_velocity(cloud, d, i)?;
        for (a, b) in acc.iter_mut().zip(&v.vec) {
            *a += *b;
        }
    }
    let inv_h = T::one() / T::of_usize(ens.len());
    for a in acc.iter_mut() {
        *a *= inv_h;
    }
    Ok(TangentVector {
        base: cloud.unit_vector(i),
        vec: acc,
    })
}

/// Boltzmann mobility `m(x, D) = (1/n) Σ_j exp(⟨x, D x_j⟩)`.
///
/// Panics if `x` and the cloud differ in dimension.
pub fn mobility<T: Scalar>(cloud: &TokenCloud<T>, d: &SymMatrix<T>, x: &UnitVector<T>) -> T {
    assert_eq!(x.dim(), cloud.dim(), "mobility: dimension mismatch");
    let dx = d.mul_vec(x.as_slice());
    let total: T = (0..cloud.len())
        .map(|j| dot(&dx, cloud.point(j)).exp())
        .sum();
    total / T::of_usize(cloud.len())
}

/// Harmonic mean over heads of [`mobility`].
pub fn effective_mobility<T: Scalar>(
    cloud: &TokenCloud<T>,
    ens: &HeadEnsemble<T>,
    x: &UnitVector<T>,
) -> T {
    let inv: T = ens
        .heads()
        .iter()
        .map(|d| T::one() / mobility(cloud, d, x))
        .sum();
    T::of_usize(ens.len()) / inv
}

/// Which optional quantities [`FieldEvaluator::evaluate`] should produce.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FieldRequest {
    /// Mobility-weighted gradient `(1/H) Σ_h m_h V^{(h)}` and the harmonic-mean
    /// effective mobility per token.
    pub mobility: bool,
    /// Per-head kernel moments `(1/n²) Σ_ij e^{s_ij} x_i x_jᵀ` and the
    /// symmetrized-noise second moments used by the energy ledger.
    pub kernel_moments: bool,
}

impl FieldRequest {
    pub const VELOCITY: Self = Self {
        mobility: false,
        kernel_moments: false,
    };
    pub const ALL: Self = Self {
        mobility: true,
        kernel_moments: true,
    };
}

/// Output of one whole-cloud field evaluation.
#[derive(Clone, Debug, Default)]
pub struct FieldEval<T> {
    pub n: usize,
    pub dim: usize,
    /// `n × d` head-averaged tangential velocities.
    pub velocity: Vec<T>,
    /// Interaction energy `(1/(2Hn²)) Σ_{i,j,h} exp(⟨x_i, D_h x_j⟩)`.
    pub energy: T,
    /// `n × d`: `(1/H) Σ_h m_h(x_i) V_i^{(h)}`, which is `n` times the tangential
    /// Euclidean gradient of the energy with respect to `x_i`.
    pub energy_gradient: Vec<T>,
    /// `(1/H) Σ_h 1 / m_h(x_i)`; the effective mobility is its reciprocal.
    pub inv_mobility_mean: Vec<T>,
    /// Per head `(1/n²) Σ_ij e^{s_ij} x_i x_jᵀ`.
    pub kernel_moments: Vec<SymMatrix<T>>,
    /// Per head `(1/n²) Σ_ij e^{s_ij} ‖sym(x_i x_jᵀ)‖_F²`.
    pub noise_moments: Vec<T>,
}

impl<T: Scalar> FieldEval<T> {
    pub fn velocity_of(&self, i: usize) -> &[T] {
        &self.velocity[i * self.dim..(i + 1) * self.dim]
    }

    /// `(1/n) Σ_i ‖v_i‖²`.
    pub fn g2_unweighted(&self) -> T {
        norm_sq(&self.velocity) / T::of_usize(self.n)
    }

    /// `(1/n) Σ_i b(x_i) ‖v_i‖²`. Requires [`FieldRequest::mobility`].
    pub fn g2_weighted(&self) -> T {
        assert_eq!(self.inv_mobility_mean.len(), self.n, "mobility not requested");
        let mut acc = T::zero();
        for i in 0..self.n {
            acc += norm_sq(self.velocity_of(i)) / self.inv_mobility_mean[i];
        }
        acc / T::of_usize(self.n)
    }

    /// Rate of change of the energy under the velocity field with the weights
    /// held fixed: `(1/n) Σ_i ⟨(1/H) Σ_h m_h V_i^{(h)}, v_i⟩`.
    pub fn energy_power(&self) -> T {
        assert_eq!(self.energy_gradient.len(), self.velocity.len(), "mobility not requested");
        dot(&self.energy_gradient, &self.velocity) / T::of_usize(self.n)
    }

    pub fn effective_mobility(&self, i: usize) -> T {
        T::one() / self.inv_mobility_mean[i]
    }

    /// Per-token velocity norms.
    pub fn velocity_norms(&self) -> Vec<T> {
        (0..self.n).map(|i| norm_sq(self.velocity_of(i)).sqrt()).collect()
    }
}

/// Reusable scratch space for whole-cloud field evaluations.
///
/// Coordinates and accumulators are stored by column (`k * n + j`) so that
/// every inner loop runs over contiguous memory.
#[derive(Debug, Default)]
pub struct FieldEvaluator<T> {
    xt: Vec<T>,
    dxt: Vec<T>,
    wmt: Vec<T>,
    row_sum: Vec<T>,
    row_shift: Vec<T>,
    noise_acc: Vec<T>,
    buf: Vec<T>,
    cos: Vec<T>,
    out: FieldEval<T>,
}

impl<T: Scalar> FieldEvaluator<T> {
    pub fn new() -> Self {
        Self {
            xt: Vec::new(),
            dxt: Vec::new(),
            wmt: Vec::new(),
            row_sum: Vec::new(),
            row_shift: Vec::new(),
            noise_acc: Vec::new(),
            buf: Vec::new(),
            cos: Vec::new(),
            out: FieldEval::default(),
        }
    }

    /// Evaluates the multi-head field on `cloud`. Cost `O(H n² d)`; no
    /// allocation once the buffers have grown to size.
    pub fn evaluate(
        &mut self,
        cloud: &TokenCloud<T>,
        ens: &HeadEnsemble<T>,
        req: FieldRequest,
    ) -> Result<&FieldEval<T>> {
        let n = cloud.len();
        let d = cloud.dim();
        if ens.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: ens.dim(),
            });
        }
        let heads = ens.len();
        let inv_h = T::one() / T::of_usize(heads);
        let inv_n = T::one() / T::of_usize(n);

        let x = cloud.as_flat();
        reset(&mut self.xt, n * d);
        for i in 0..n {
            for k in 0..d {
                self.xt[k * n + i] = x[i * d + k];
            }
        }
        reset(&mut self.dxt, n * d);
        reset(&mut self.wmt, n * d);
        reset(&mut self.row_sum, n);
        reset(&mut self.row_shift, n);
        reset(&mut self.noise_acc, n);
        reset(&mut self.buf, n);
        reset(&mut self.cos, n);
        let out = &mut self.out;
        out.n = n;
        out.dim = d;
        reset(&mut out.velocity, n * d);
        if req.mobility {
            reset(&mut out.energy_gradient, n * d);
            reset(&mut out.inv_mobility_mean, n);
        } else {
            out.energy_gradient.clear();
            out.inv_mobility_mean.clear();
        }
        out.kernel_moments.clear();
        out.noise_moments.clear();
        let mut energy = T::zero();

        let mut y = vec![T::zero(); d];
        let mut mean = vec![T::zero(); d];
        let mut xi = vec![T::zero(); d];
        for dmat in ens.heads() {
            for i in 0..n {
                dmat.mul_vec_into(&x[i * d..(i + 1) * d], &mut y);
                for k in 0..d {
                    self.dxt[k * n + i] = y[k];
                }
            }
            self.wmt.iter_mut().for_each(|v| *v = T::zero());
            self.row_sum.iter_mut().for_each(|v| *v = T::zero());
            self.noise_acc.iter_mut().for_each(|v| *v = T::zero());

            let mut pass = Pass {
                n,
                d,
                xt: &self.xt,
                dxt: &self.dxt,
                noise: req.kernel_moments,
                wmt: &mut self.wmt,
                row_sum: &mut self.row_sum,
                row_shift: &mut self.row_shift,
                noise_acc: &mut self.noise_acc,
                buf: &mut self.buf,
                cos: &mut self.cos,
            };
            // |⟨x_i, D x_j⟩| ≤ ‖D‖_2 ≤ ‖D‖_F, so shifting every logit by the
            // Frobenius norm keeps all exponentials in (0, 1] and lets one
            // triangular pass serve both rows of each symmetric pair.
            let bound = dmat.frobenius_sq().sqrt();
            if bound + bound <= T::safe_exp_range() {
                pass.row_shift.iter_mut().for_each(|s| *s = bound);
                pass.run(bound);
            } else {
                pass.run_per_row();
            }

            let mut moment = if req.kernel_moments {
                Some(vec![T::zero(); d * d])
            } else {
                None
            };
            let mut noise = T::zero();
            for i in 0..n {
                for k in 0..d {
                    xi[k] = self.xt[k * n + i];
                }
                let scale = self.row_shift[i].exp();
                energy += scale * self.row_sum[i];
                if let Some(m) = moment.as_mut() {
                    for a in 0..d {
                        for b in 0..d {
                            m[a * d + b] += scale * xi[a] * self.wmt[b * n + i];
                        }
                    }
                    noise += scale * self.noise_acc[i];
                }
                // Attention-weighted mean of the tokens, mapped by D and projected.
                let inv_r = T::one() / self.row_sum[i];
                for k in 0..d {
                    mean[k] = self.wmt[k * n + i] * inv_r;
                }
                dmat.mul_vec_into(&mean, &mut y);
                sphere::project_tangent_in_place(&xi, &mut y);
                let v = &mut out.velocity[i * d..(i + 1) * d];
                for k in 0..d {
                    v[k] += y[k] * inv_h;
                }
                if req.mobility {
                    let m_h = scale * self.row_sum[i] * inv_n;
                    let g = &mut out.energy_gradient[i * d..(i + 1) * d];
                    for k in 0..d {
                        g[k] += m_h * y[k] * inv_h;
                    }
                    out.inv_mobility_mean[i] += inv_h / m_h;
                }
            }
            if let Some(m) = moment {
                let inv_n2 = inv_n * inv_n;
                let half = T::lit(0.5);
                out.kernel_moments.push(SymMatrix::from_upper_fn(d, |a, b| {
                    (m[a * d + b] + m[b * d + a]) * half * inv_n2
                }));
                out.noise_moments.push(noise * inv_n2);
            }
        }
        out.energy = energy * inv_h * inv_n * inv_n * T::lit(0.5);
        Ok(&self.out)
    }
}

fn reset<T: Scalar>(v: &mut Vec<T>, len: usize) {
    v.clear();
    v.resize(len, T::zero());
}

/// Sum with eight independent accumulators, so the loop vectorizes without
/// reassociating floating-point additions.
#[inline(always)]
fn lane_sum<T: Scalar>(a: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.chunks_exact(8);
    let rest = chunks.remainder();
    for c in chunks {
        for l in 0..8 {
            acc[l] += c[l];
        }
    }
    let mut s = T::zero();
    for r in rest {
        s += *r;
    }
    for l in acc {
        s += l;
    }
    s
}

#[inline(always)]
fn lane_dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    for l in acc {
        s += l;
    }
    s
}

/// One head's pairwise accumulation: for every row `i`, `Σ_j ê_ij` and
/// `Σ_j ê_ij x_j` with `ê_ij = exp(s_ij − shift_i)`.
struct Pass<'a, T> {
    n: usize,
    d: usize,
    xt: &'a [T],
    dxt: &'a [T],
    noise: bool,
    wmt: &'a mut [T],
    row_sum: &'a mut [T],
    row_shift: &'a mut [T],
    noise_acc: &'a mut [T],
    buf: &'a mut [T],
    cos: &'a mut [T],
}

impl<T: Scalar> Pass<'_, T> {
    /// Shared shift for all rows; each unordered pair is visited once.
    fn run(&mut self, shift: T) {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") {
                // SAFETY: the required CPU features were just detected.
                unsafe { self.symmetric_avx512(shift) };
                return;
            }
            if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
                // SAFETY: the required CPU features were just detected.
                unsafe { self.symmetric_avx2(shift) };
                return;
            }
        }
        self.symmetric(shift);
    }

    fn run_per_row(&mut self) {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") {
                // SAFETY: the required CPU features were just detected.
                unsafe { self.per_row_avx512() };
                return;
            }
            if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
                // SAFETY: the required CPU features were just detected.
                unsafe { self.per_row_avx2() };
                return;
            }
        }
        self.per_row();
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f,avx2,fma")]
    unsafe fn symmetric_avx512(&mut self, shift: T) {
        self.symmetric(shift);
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f,avx2,fma")]
    unsafe fn per_row_avx512(&mut self) {
        self.per_row();
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn symmetric_avx2(&mut self, shift: T) {
        self.symmetric(shift);
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn per_row_avx2(&mut self) {
        self.per_row();
    }

    /// Logits `⟨D x_i, x_j⟩ − shift` for `j ∈ [lo, n)` into `buf[..n − lo]`.
    #[inline(always)]
    fn logits(&mut self, i: usize, lo: usize, shift: T) {
        let n = self.n;
        let m = n - lo;
        let buf = &mut self.buf[..m];
        let c0 = self.dxt[i];
        for (b, x) in buf.iter_mut().zip(&self.xt[lo..n]) {
            *b = c0 * *x;
        }
        for k in 1..self.d {
            let c = self.dxt[k * n + i];
            for (b, x) in buf.iter_mut().zip(&self.xt[k * n + lo..k * n + n]) {
                *b += c * *x;
            }
        }
        exp_nonpositive_slice(buf, shift);
        if self.noise {
            let cos = &mut self.cos[..m];
            let c0 = self.xt[i];
            for (c, x) in cos.iter_mut().zip(&self.xt[lo..n]) {
                *c = c0 * *x;
            }
            for k in 1..self.d {
                let ck = self.xt[k * n + i];
                for (c, x) in cos.iter_mut().zip(&self.xt[k * n + lo..k * n + n]) {
                    *c += ck * *x;
                }
            }
            // e · ‖sym(x_i x_jᵀ)‖² = e (1 + ⟨x_i, x_j⟩²) / 2
            let half = T::lit(0.5);
            for (c, e) in cos.iter_mut().zip(buf.iter()) {
                *c = *e * (T::one() + *c * *c) * half;
            }
        }
    }

    #[inline(always)]
    fn symmetric(&mut self, shift: T) {
        let (n, d) = (self.n, self.d);
        for i in 0..n {
            // Row i against j >= i; the diagonal is the first entry.
            self.logits(i, i, shift);
            let m = n - i;
            let buf = &self.buf[..m];
            self.row_sum[i] += lane_sum(buf);
            for k in 0..d {
                let xik = self.xt[k * n + i];
                let col = &self.xt[k * n + i..k * n + n];
                self.wmt[k * n + i] += lane_dot(buf, col);
                // Mirror contributions to rows j > i.
                let w = &mut self.wmt[k * n + i + 1..k * n + n];
                for (wj, e) in w.iter_mut().zip(&buf[1..]) {
                    *wj += *e * xik;
                }
            }
            for (r, e) in self.row_sum[i + 1..n].iter_mut().zip(&buf[1..]) {
                *r += *e;
            }
            if self.noise {
                let cos = &self.cos[..m];
                self.noise_acc[i] += lane_sum(cos);
                for (a, c) in self.noise_acc[i + 1..n].iter_mut().zip(&cos[1..]) {
                    *a += *c;
                }
            }
        }
    }

    /// Exact per-row max subtraction, for logit spreads beyond the range of a
    /// single shared shift.
    #[inline(always)]
    fn per_row(&mut self) {
        let (n, d) = (self.n, self.d);
        for i in 0..n {
            let mut max = T::neg_infinity();
            for j in 0..n {
                let mut s = T::zero();
                for k in 0..d {
                    s += self.dxt[k * n + i] * self.xt[k * n + j];
                }
                max = max.max(s);
            }
            self.row_shift[i] = max;
            self.logits(i, 0, max);
            let buf = &self.buf[..n];
            self.row_sum[i] = lane_sum(buf);
            for k in 0..d {
                self.wmt[k * n + i] = lane_dot(buf, &self.xt[k * n..k * n + n]);
            }
            if self.noise {
                self.noise_acc[i] = lane_sum(&self.cos[..n]);
            }
        }
    }
}
