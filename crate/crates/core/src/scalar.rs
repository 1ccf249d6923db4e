//! Floating-point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the dynamics are generic over: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Every finite `f64` is representable (possibly rounded).
    #[inline(always)]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    /// Converts a count or index.
    #[inline(always)]
    fn of_usize(k: usize) -> Self {
        Self::from_usize(k).expect("count fits in the scalar type")
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Largest logit spread that can be exponentiated after a single shift
    /// without the smallest term underflowing to zero.
    fn safe_exp_range() -> Self {
        // ln(min_positive) is about -708 for f64 and -87 for f32; keep a margin.
        -Self::min_positive_value().ln() * Self::lit(0.9)
    }

    /// Branch-free `exp` for arguments `≤ 0` that the compiler can vectorize.
    /// Results below the smallest normal flush to zero; accuracy is within a
    /// few ulps of `exp` elsewhere.
    #[inline(always)]
    fn exp_nonpositive(self) -> Self {
        self.exp()
    }
}

impl Scalar for f32 {
    #[inline(always)]
    fn exp_nonpositive(self) -> Self {
        const LO: f32 = -87.0;
        const SHIFTER: f32 = 12_582_912.0; // 1.5 * 2^23
        const LN2_HI: f32 = 0.693_359_4;
        const LN2_LO: f32 = -2.121_944_4e-4;
        let x = self.clamp(LO, 80.0);
        let t = x * std::f32::consts::LOG2_E + SHIFTER;
        let k = t - SHIFTER;
        let r = x - k * LN2_HI - k * LN2_LO;
        let r2 = r * r;
        let r4 = r2 * r2;
        let q0 = 1.0 + r;
        let q1 = 0.5 + r * (1.0 / 6.0);
        let q2 = 1.0 / 24.0 + r * (1.0 / 120.0);
        let q3 = 1.0 / 720.0 + r * (1.0 / 5040.0);
        let p = (q0 + q1 * r2) + (q2 + q3 * r2) * r4;
        let ki = t.to_bits().wrapping_sub(SHIFTER.to_bits()) as i32;
        let scale = f32::from_bits((ki.wrapping_add(127) as u32) << 23);
        let y = if self < LO { 0.0 } else { p * scale };
        if self.is_nan() {
            self
        } else {
            y
        }
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn exp_nonpositive(self) -> Self {
        const LO: f64 = -708.0;
        const SHIFTER: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
        const LN2_HI: f64 = 6.931_471_803_691_238e-1;
        const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
        let x = self.clamp(LO, 700.0);
        let t = x * std::f64::consts::LOG2_E + SHIFTER;
        let k = t - SHIFTER;
        let r = x - k * LN2_HI - k * LN2_LO;
        // Taylor polynomial of degree 13 on |r| <= ln2 / 2, in Estrin form.
        let r2 = r * r;
        let r4 = r2 * r2;
        let r8 = r4 * r4;
        let q0 = 1.0 + r;
        let q1 = 0.5 + r * (1.0 / 6.0);
        let q2 = 1.0 / 24.0 + r * (1.0 / 120.0);
        let q3 = 1.0 / 720.0 + r * (1.0 / 5_040.0);
        let q4 = 1.0 / 40_320.0 + r * (1.0 / 362_880.0);
        let q5 = 1.0 / 3_628_800.0 + r * (1.0 / 39_916_800.0);
        let q6 = 1.0 / 479_001_600.0 + r * (1.0 / 6_227_020_800.0);
        let u0 = (q0 + q1 * r2) + (q2 + q3 * r2) * r4;
        let u1 = (q4 + q5 * r2) + q6 * r4;
        let p = u0 + u1 * r8;
        let ki = t.to_bits().wrapping_sub(SHIFTER.to_bits()) as i64;
        let scale = f64::from_bits((ki.wrapping_add(1023) as u64) << 52);
        let y = if self < LO { 0.0 } else { p * scale };
        if self.is_nan() {
            self
        } else {
            y
        }
    }
}

/// Applies [`Scalar::exp_nonpositive`] to every element, eight at a time.
#[inline(always)]
pub(crate) fn exp_nonpositive_slice<T: Scalar>(buf: &mut [T], shift: T) {
    let mut chunks = buf.chunks_exact_mut(8);
    for c in &mut chunks {
        for l in 0..8 {
            c[l] = (c[l] - shift).exp_nonpositive();
        }
    }
    for v in chunks.into_remainder() {
        *v = (*v - shift).exp_nonpositive();
    }
}

#[inline(always)]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

#[inline(always)]
pub(crate) fn norm_sq<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}
