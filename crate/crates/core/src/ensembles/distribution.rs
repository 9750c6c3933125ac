//! Law of a single matrix entry under a maximum-entropy ensemble.
//!
//! Entries are parameterized by `theta > 0` with `t = exp(-theta)`, the
//! ratio of consecutive geometric probabilities, so that `1 - t` can be
//! formed as `-expm1(-theta)` without cancellation when the mean is large.

use rand::RngCore;
use serde::{Deserialize, Serialize};

/// Uniform on `[0, 1)` from the top 53 bits of one `u64`.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntryDistribution {
    /// Point mass at zero.
    Zero,
    /// `P(x) = (1 - t) t^x` for `x >= 0`, with mean `t / (1 - t)`.
    Geometric { mean: f64, theta: f64 },
    /// `P(0) = 1 - p` and `P(x) = p (1 - t) t^(x - 1)` for `x >= 1`:
    /// a Bernoulli(p) gate in front of a one-shifted geometric.
    ZeroInflated { p: f64, theta: f64 },
}

impl EntryDistribution {
    /// Geometric law with the given mean (`mean = 0` is a point mass).
    pub fn geometric_with_mean(mean: f64) -> Self {
        if mean > 0.0 {
            EntryDistribution::Geometric { mean, theta: (1.0 / mean).ln_1p() }
        } else {
            EntryDistribution::Zero
        }
    }

    pub fn geometric_with_theta(theta: f64) -> Self {
        EntryDistribution::Geometric { mean: 1.0 / theta.exp_m1(), theta }
    }

    /// Law with `P(0) = (1 - t) / (1 - t (1 - u))` and
    /// `P(x) = (1 - t) t^x u / (1 - t (1 - u))` for `x >= 1`.
    pub fn from_t_u(t: f64, u: f64) -> Self {
        let theta = -t.ln();
        let p = t * u / (1.0 - t * (1.0 - u));
        EntryDistribution::ZeroInflated { p, theta }
    }

    /// `1 - t`.
    fn s(theta: f64) -> f64 {
        -(-theta).exp_m1()
    }

    pub fn pmf(&self, x: u64) -> f64 {
        match *self {
            EntryDistribution::Zero => (x == 0) as u8 as f64,
            EntryDistribution::Geometric { theta, .. } => Self::s(theta) * (-theta * x as f64).exp(),
            EntryDistribution::ZeroInflated { p, theta } => {
                if x == 0 {
                    1.0 - p
                } else {
                    p * Self::s(theta) * (-theta * (x - 1) as f64).exp()
                }
            }
        }
    }

    /// `P(X > 0)`.
    pub fn p_positive(&self) -> f64 {
        match *self {
            EntryDistribution::Zero => 0.0,
            EntryDistribution::Geometric { theta, .. } => (-theta).exp(),
            EntryDistribution::ZeroInflated { p, .. } => p,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            EntryDistribution::Zero => 0.0,
            EntryDistribution::Geometric { mean, .. } => mean,
            EntryDistribution::ZeroInflated { p, theta } => p / Self::s(theta),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            EntryDistribution::Zero => 0.0,
            EntryDistribution::Geometric { mean, .. } => mean * (1.0 + mean),
            EntryDistribution::ZeroInflated { p, theta } => {
                let s = Self::s(theta);
                let t = (-theta).exp();
                (p * (1.0 + t) - p * p) / (s * s)
            }
        }
    }

    /// Smallest `x` with `P(X > x) < eps`.
    pub fn tail_bound(&self, eps: f64) -> u64 {
        let (scale, theta) = match *self {
            EntryDistribution::Zero => return 0,
            EntryDistribution::Geometric { theta, .. } => (1.0, theta),
            EntryDistribution::ZeroInflated { p, theta } => (p, theta),
        };
        // P(X > x) = scale * t^x for the shifted law, t^(x+1) for the plain one.
        let x = ((scale / eps).ln() / theta).ceil().max(0.0);
        x as u64 + 1
    }

    /// Draws one value from two `u64`s of `rng`. Exactly two words are
    /// consumed for every variant, so entry streams stay aligned.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        let gate = unit_f64(rng.next_u64());
        let u = unit_f64(rng.next_u64());
        match *self {
            EntryDistribution::Zero => 0.0,
            EntryDistribution::Geometric { theta, .. } => geometric_floor(u, theta),
            EntryDistribution::ZeroInflated { p, theta } => {
                if gate < p {
                    1.0 + geometric_floor(u, theta)
                } else {
                    0.0
                }
            }
        }
    }
}

/// `floor(E / theta)` with `E = -ln(1 - u)` exponential; geometric with
/// `P(G >= x) = exp(-theta x)`.
#[inline]
fn geometric_floor(u: f64, theta: f64) -> f64 {
    (-(-u).ln_1p() / theta).floor()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_mean_one() {
        let d = EntryDistribution::geometric_with_mean(1.0);
        assert!((d.pmf(0) - 0.5).abs() < 1e-15);
        assert!((d.pmf(1) - 0.25).abs() < 1e-15);
        assert!((d.pmf(2) - 0.125).abs() < 1e-15);
        assert_eq!(d.variance(), 2.0);
        let d = EntryDistribution::geometric_with_mean(2.0);
        assert_eq!((d.mean(), d.variance()), (2.0, 6.0));
    }

    #[test]
    fn zero_mean_is_point_mass() {
        let d = EntryDistribution::geometric_with_mean(0.0);
        assert_eq!(d, EntryDistribution::Zero);
        assert_eq!(d.pmf(0), 1.0);
        assert_eq!(d.pmf(3), 0.0);
    }

    #[test]
    fn half_half_zero_inflated() {
        let d = EntryDistribution::from_t_u(0.5, 0.5);
        assert!((d.pmf(0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.pmf(1) - 1.0 / 6.0).abs() < 1e-15);
        assert!((d.pmf(2) - 1.0 / 12.0).abs() < 1e-15);
        let n = d.tail_bound(1e-16);
        let mean: f64 = (0..=n).map(|x| x as f64 * d.pmf(x)).sum();
        assert!((mean - d.mean()).abs() < 1e-13);
        assert!((d.mean() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unit_interval_edges() {
        assert_eq!(unit_f64(0), 0.0);
        assert!(unit_f64(u64::MAX) < 1.0);
    }
}
