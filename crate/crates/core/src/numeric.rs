//! Small numerical kernels shared by the metric, fitting and statistics code.

/// Block size below which [`pairwise_sum`] falls back to a left-to-right loop.
pub const PAIRWISE_BLOCK: usize = 8;

/// Pairwise (cascade) summation.
///
/// Slices of length at most [`PAIRWISE_BLOCK`] are summed left to right;
/// longer slices are split at `len / 2` and the two halves summed
/// recursively. The order is fixed, so the result is bitwise reproducible
/// for a given input ordering.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Pairwise sum of `f(i)` for `i in 0..len`, evaluated into a scratch buffer.
pub fn pairwise_sum_by(len: usize, buf: &mut Vec<f64>, f: impl FnMut(usize) -> f64) -> f64 {
    buf.clear();
    buf.extend((0..len).map(f));
    pairwise_sum(buf)
}

/// Empirical quantile of already-sorted data, linear interpolation of order
/// statistics (Hyndman-Fan type 7): `h = (n - 1) p`, interpolate between
/// `x[floor h]` and `x[floor h + 1]`.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let n = sorted.len();
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Sorts a copy of `xs` (total order, NaNs last) and returns the type-7 quantile.
pub fn quantile(xs: &[f64], prob: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, prob)
}

/// Sample mean and unbiased sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, (pairwise_sum(&dev) / (n - 1) as f64).sqrt())
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Root of a monotonically decreasing scalar function on the whole real line.
///
/// The function may return `+inf` / `-inf` near the ends of its domain. A
/// bracket is grown geometrically from `x0`, then refined with the Illinois
/// variant of regula falsi, falling back to bisection whenever the secant
/// point is not strictly inside the bracket. Iteration stops when
/// `|f(x)| <= ftol` or the bracket can no longer be split.
pub fn solve_decreasing<F: FnMut(f64) -> f64>(mut f: F, x0: f64, ftol: f64) -> Option<f64> {
    let mut x = if x0.is_finite() { x0 } else { 0.0 };
    let mut fx = f(x);
    if fx.is_nan() {
        return None;
    }
    if fx.abs() <= ftol {
        return Some(x);
    }
    // Grow a bracket [lo, hi] with f(lo) > 0 > f(hi).
    let (mut lo, mut flo, mut hi, mut fhi);
    let mut step = 1.0;
    if fx > 0.0 {
        lo = x;
        flo = fx;
        loop {
            let next = lo + step;
            let fnext = f(next);
            if fnext.is_nan() {
                return None;
            }
            if fnext <= 0.0 {
                hi = next;
                fhi = fnext;
                break;
            }
            lo = next;
            flo = fnext;
            step *= 2.0;
            if step > 1e6 {
                return None;
            }
        }
    } else {
        hi = x;
        fhi = fx;
        loop {
            let next = hi - step;
            let fnext = f(next);
            if fnext.is_nan() {
                return None;
            }
            if fnext >= 0.0 {
                lo = next;
                flo = fnext;
                break;
            }
            hi = next;
            fhi = fnext;
            step *= 2.0;
            if step > 1e6 {
                return None;
            }
        }
    }
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }

    let mut last_side = 0i8;
    for _ in 0..400 {
        let mut cand = if flo.is_finite() && fhi.is_finite() { hi - fhi * (hi - lo) / (fhi - flo) } else { f64::NAN };
        if !(cand > lo && cand < hi) {
            cand = 0.5 * (lo + hi);
        }
        if !(cand > lo && cand < hi) {
            // Bracket exhausted at floating-point resolution.
            return Some(if flo.abs() < fhi.abs() { lo } else { hi });
        }
        x = cand;
        fx = f(x);
        if fx.is_nan() {
            return None;
        }
        if fx.abs() <= ftol {
            return Some(x);
        }
        if fx > 0.0 {
            lo = x;
            flo = fx;
            if last_side == 1 {
                fhi *= 0.5;
            }
            last_side = 1;
        } else {
            hi = x;
            fhi = fx;
            if last_side == -1 {
                flo *= 0.5;
            }
            last_side = -1;
        }
    }
    Some(x)
}
