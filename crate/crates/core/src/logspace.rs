//! Log-space arithmetic helpers.
//!
//! Every reduction shifts by its maximum before exponentiating. A reduction
//! over an empty set, or over values that are all `-inf`, yields `-inf`.

/// `log(sum(exp(xs)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `log(exp(a) + exp(b))`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum_k exp(a[k] + b[k]))` over the common prefix of the two slices,
/// without materializing the sums.
#[inline]
pub fn log_sum_exp_pairwise(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut max = f64::NEG_INFINITY;
    for (x, y) in a.iter().zip(b) {
        let s = x + y;
        if s > max {
            max = s;
        }
    }
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        sum += (x + y - max).exp();
    }
    max + sum.ln()
}

/// Maximum of `a[k] + b[k]` and the smallest `k` attaining it.
///
/// Returns `(-inf, None)` when every sum is `-inf` or the slices are empty.
#[inline]
pub fn max_pairwise(a: &[f64], b: &[f64]) -> (f64, Option<usize>) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = None;
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        let s = x + y;
        if s > best {
            best = s;
            arg = Some(k);
        }
    }
    (best, arg)
}

/// Index of the maximum, smallest index on ties. `None` for an empty slice
/// or an all-`-inf` slice.
pub fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best = f64::NEG_INFINITY;
    let mut arg = None;
    for (i, &x) in xs.iter().enumerate() {
        if x > best {
            best = x;
            arg = Some(i);
        }
    }
    arg
}
