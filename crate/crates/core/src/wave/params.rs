use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of `dU = [ρ U_xx + f(U)] dt + σ g(U) dW^Q` with the bistable
/// cubic `f(u) = u(1-u)(u-a)` and `g(u) = u(1-u) χ(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NagumoParams {
    pub rho: f64,
    pub a: f64,
    pub sigma: f64,
    /// χ = 1 on this interval.
    pub chi_plateau: (f64, f64),
    /// χ = 0 outside this interval.
    pub chi_support: (f64, f64),
}

impl Default for NagumoParams {
    fn default() -> Self {
        Self {
            rho: 1.0,
            a: 0.25,
            sigma: 0.0,
            chi_plateau: (-1.0, 2.0),
            chi_support: (-2.0, 3.0),
        }
    }
}

impl NagumoParams {
    pub fn new(rho: f64, a: f64, sigma: f64) -> Result<Self> {
        let p = Self {
            rho,
            a,
            sigma,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        let p = Self { sigma, ..*self };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if !(self.a > 0.0 && self.a < 1.0) {
            return bad(format!("a must lie in (0, 1), got {}", self.a));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad(format!("sigma must be non-negative, got {}", self.sigma));
        }
        let (p0, p1) = self.chi_plateau;
        let (s0, s1) = self.chi_support;
        if !(s0.is_finite() && s1.is_finite() && s0 < p0 && p0 < p1 && p1 < s1) {
            return bad(format!(
                "chi plateau {:?} must sit strictly inside a bounded support {:?}",
                self.chi_plateau, self.chi_support
            ));
        }
        Ok(())
    }

    /// Closed-form front speed `sqrt(2ρ)(1/2 - a)` of the cubic nonlinearity.
    pub fn exact_speed(&self) -> f64 {
        (2.0 * self.rho).sqrt() * (0.5 - self.a)
    }

    /// Closed-form front `1 / (1 + exp(ξ / sqrt(2ρ)))`.
    pub fn exact_front(&self, xi: f64) -> f64 {
        1.0 / (1.0 + (xi / (2.0 * self.rho).sqrt()).exp())
    }

    #[inline]
    pub fn f(&self, u: f64) -> f64 {
        u * (1.0 - u) * (u - self.a)
    }

    #[inline]
    pub fn df(&self, u: f64) -> f64 {
        -3.0 * u * u + 2.0 * (1.0 + self.a) * u - self.a
    }

    /// `(f(u) - f(w)) / (u - w)`, written out so it stays exact when `u ≈ w`.
    #[inline]
    pub fn f_divided_difference(&self, u: f64, w: f64) -> f64 {
        -(u * u + u * w + w * w) + (1.0 + self.a) * (u + w) - self.a
    }

    #[inline]
    pub fn chi(&self, u: f64) -> f64 {
        smoothstep_window(u, self.chi_plateau, self.chi_support).0
    }

    #[inline]
    pub fn g(&self, u: f64) -> f64 {
        u * (1.0 - u) * self.chi(u)
    }

    #[inline]
    pub fn dg(&self, u: f64) -> f64 {
        let (chi, dchi) = smoothstep_window(u, self.chi_plateau, self.chi_support);
        (1.0 - 2.0 * u) * chi + u * (1.0 - u) * dchi
    }
}

/// Quintic smoothstep window and its derivative.
fn smoothstep_window(u: f64, plateau: (f64, f64), support: (f64, f64)) -> (f64, f64) {
    let step = |t: f64| t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
    let dstep = |t: f64| 30.0 * t * t * (1.0 - t) * (1.0 - t);
    if u <= support.0 || u >= support.1 {
        (0.0, 0.0)
    } else if u < plateau.0 {
        let w = plateau.0 - support.0;
        let t = (u - support.0) / w;
        (step(t), dstep(t) / w)
    } else if u <= plateau.1 {
        (1.0, 0.0)
    } else {
        let w = support.1 - plateau.1;
        let t = (support.1 - u) / w;
        (step(t), -dstep(t) / w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cubic_roots_and_values() {
        let p = NagumoParams::default();
        assert_eq!(p.f(0.0), 0.0);
        assert_eq!(p.f(p.a), 0.0);
        assert_eq!(p.f(1.0), 0.0);
        assert_eq!(p.f(0.5), 0.0625);
        assert_eq!(p.g(0.5), 0.25);
    }

    #[test]
    fn chi_shape() {
        let p = NagumoParams::default();
        for u in [-1.0, 0.0, 0.5, 1.0, 2.0] {
            assert_eq!(p.chi(u), 1.0);
        }
        for u in [-5.0, -2.0, 3.0, 10.0] {
            assert_eq!(p.chi(u), 0.0);
        }
        let mut prev = 0.0;
        for k in 0..=100 {
            let u = -2.0 + k as f64 * 0.01;
            assert!(p.chi(u) >= prev);
            prev = p.chi(u);
        }
    }

    #[test]
    fn validation() {
        assert!(NagumoParams::new(1.0, 1.5, 0.0).is_err());
        assert!(NagumoParams::new(0.0, 0.25, 0.0).is_err());
        assert!(NagumoParams::new(1.0, 0.25, -0.1).is_err());
        let bad = NagumoParams {
            chi_plateau: (-3.0, 2.0),
            ..NagumoParams::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(u in -2.5..3.5f64) {
            let p = NagumoParams::default();
            let h = 1e-6;
            let fd = (p.f(u + h) - p.f(u - h)) / (2.0 * h);
            prop_assert!((fd - p.df(u)).abs() < 1e-6);
            let gd = (p.g(u + h) - p.g(u - h)) / (2.0 * h);
            prop_assert!((gd - p.dg(u)).abs() < 1e-5);
            // g is bounded and Lipschitz everywhere
            prop_assert!(p.g(u).abs() <= 8.0);
        }

        #[test]
        fn divided_difference_is_exact(u in -1.0..2.0f64, w in -1.0..2.0f64) {
            let p = NagumoParams::default();
            prop_assume!((u - w).abs() > 1e-3);
            let dd = (p.f(u) - p.f(w)) / (u - w);
            prop_assert!((dd - p.f_divided_difference(u, w)).abs() < 1e-9);
        }
    }
}
