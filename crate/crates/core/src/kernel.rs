//! Dense row-major matrix products used by the forward and backward passes.
//!
//! Activations are stored as `rows × features` with contiguous rows; a layer
//! weight is `outputs × inputs`.

/// `z = a · wᵀ + bias` for `a: n×k`, `w: m×k`, `z: n×m`.
pub(crate) fn affine(a: &[f64], n: usize, k: usize, w: &[f64], bias: &[f64], z: &mut [f64]) {
    let m = bias.len();
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(w.len(), m * k);
    debug_assert_eq!(z.len(), n * m);
    for row in z.chunks_exact_mut(m) {
        row.copy_from_slice(bias);
    }
    // SAFETY: the slice lengths checked above cover every index addressed by
    // these dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            w.as_ptr(),
            1,
            k as isize,
            1.0,
            z.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}

/// `da = dz · w` for `dz: n×m`, `w: m×k`, `da: n×k`.
pub(crate) fn backprop_input(dz: &[f64], n: usize, m: usize, w: &[f64], da: &mut [f64]) {
    let k = w.len() / m;
    debug_assert_eq!(dz.len(), n * m);
    debug_assert_eq!(da.len(), n * k);
    // SAFETY: see `affine`.
    unsafe {
        matrixmultiply::dgemm(
            n,
            m,
            k,
            1.0,
            dz.as_ptr(),
            m as isize,
            1,
            w.as_ptr(),
            k as isize,
            1,
            0.0,
            da.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

/// `dw += dzᵀ · a` for `dz: n×m`, `a: n×k`, `dw: m×k`.
pub(crate) fn accumulate_weight_grad(dz: &[f64], a: &[f64], n: usize, m: usize, dw: &mut [f64]) {
    let k = a.len() / n;
    debug_assert_eq!(dz.len(), n * m);
    debug_assert_eq!(dw.len(), m * k);
    // SAFETY: see `affine`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            n,
            k,
            1.0,
            dz.as_ptr(),
            1,
            m as isize,
            a.as_ptr(),
            k as isize,
            1,
            1.0,
            dw.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

// π/2 split into pieces with trailing zero bits so that `n * piece` is exact
// for |n| < 2^20.
const PIO2_1: f64 = 1.570_796_326_734_125_614_17e0;
const PIO2_2: f64 = 6.077_100_506_303_965_976_60e-11;
const PIO2_3: f64 = 2.022_266_248_711_166_455_80e-21;
const TWO_OVER_PI: f64 = 6.366_197_723_675_813_824_33e-1;
/// Adding and subtracting 1.5·2^52 rounds to the nearest integer.
const ROUNDER: f64 = 6_755_399_441_055_744.0;
/// Beyond this magnitude the three-piece reduction loses accuracy.
const REDUCTION_LIMIT: f64 = 1.0e5;

const S1: f64 = -1.666_666_666_666_663_243_48e-1;
const S2: f64 = 8.333_333_333_322_489_461_24e-3;
const S3: f64 = -1.984_126_982_985_794_931_34e-4;
const S4: f64 = 2.755_731_370_707_006_767_89e-6;
const S5: f64 = -2.505_076_025_340_686_341_95e-8;
const S6: f64 = 1.589_690_995_211_550_102_21e-10;

const C1: f64 = 4.166_666_666_666_660_190_37e-2;
const C2: f64 = -1.388_888_888_887_410_957_49e-3;
const C3: f64 = 2.480_158_728_947_672_941_78e-5;
const C4: f64 = -2.755_731_435_139_066_330_35e-7;
const C5: f64 = 2.087_572_321_298_174_827_90e-9;
const C6: f64 = -1.135_964_755_778_819_482_65e-11;

/// `(sin x, cos x)` for `|x| < REDUCTION_LIMIT` with a branch-free polynomial
/// kernel that the compiler can vectorize. Accurate to about one ulp.
#[inline(always)]
pub(crate) fn sin_cos(x: f64) -> (f64, f64) {
    let shifted = x * TWO_OVER_PI + ROUNDER;
    let quadrant = shifted.to_bits();
    let n = shifted - ROUNDER;
    let r = ((x - n * PIO2_1) - n * PIO2_2) - n * PIO2_3;
    let z = r * r;
    let s = r + r * z * (S1 + z * (S2 + z * (S3 + z * (S4 + z * (S5 + z * S6)))));
    let h = 0.5 * z;
    let w = 1.0 - h;
    let c = w + (((1.0 - w) - h) + z * z * (C1 + z * (C2 + z * (C3 + z * (C4 + z * (C5 + z * C6))))));
    let (sin, cos) = if quadrant & 1 == 0 { (s, c) } else { (c, -s) };
    let sin = if quadrant & 2 == 0 { sin } else { -sin };
    let cos = if quadrant & 2 == 0 { cos } else { -cos };
    (sin, cos)
}

fn fast_path_ok(z: &[f64], omega: f64) -> bool {
    z.iter().all(|v| (omega * v).abs() < REDUCTION_LIMIT)
}

/// Replaces every `z` with `sin(ω z)` and stores `ω cos(ω z)` in `deriv`.
pub(crate) fn sine_activation(z: &mut [f64], deriv: &mut [f64], omega: f64) {
    debug_assert_eq!(z.len(), deriv.len());
    let fast = fast_path_ok(z, omega);
    for (v, d) in z.iter_mut().zip(deriv.iter_mut()) {
        let (s, c) = if fast {
            sin_cos(omega * *v)
        } else {
            (omega * *v).sin_cos()
        };
        *v = s;
        *d = omega * c;
    }
}

/// Replaces every `z` with `sin(ω z)`.
pub(crate) fn sine_in_place(z: &mut [f64], omega: f64) {
    if fast_path_ok(z, omega) {
        for v in z.iter_mut() {
            *v = sin_cos(omega * *v).0;
        }
    } else {
        for v in z.iter_mut() {
            *v = (omega * *v).sin();
        }
    }
}
