//! Half-space model primitives: points, distance, balls, translations,
//! hyperbolic gradient and the p₃⁻³ volume weight.

use crate::error::{Error, Result};
use crate::quad::BallRule;
use crate::tolerances::ACOSH_CLAMP;
use serde::{Deserialize, Serialize};

pub type Vec3 = nalgebra::Vector3<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicPoint {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl HyperbolicPoint {
    pub fn new(p1: f64, p2: f64, p3: f64) -> Result<Self> {
        if !(p3 > 0.0) || !p1.is_finite() || !p2.is_finite() || !p3.is_finite() {
            return Err(Error::Domain(format!("({p1}, {p2}, {p3}) is not in the half-space")));
        }
        Ok(HyperbolicPoint { p1, p2, p3 })
    }

    pub fn from_vec(v: Vec3) -> Result<Self> {
        Self::new(v.x, v.y, v.z)
    }

    pub fn vec(&self) -> Vec3 {
        Vec3::new(self.p1, self.p2, self.p3)
    }

    pub fn e3() -> Self {
        HyperbolicPoint { p1: 0.0, p2: 0.0, p3: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EuclideanBall {
    pub center: Vec3,
    pub radius: f64,
}

impl EuclideanBall {
    pub fn contains(&self, p: Vec3) -> bool {
        (p - self.center).norm() < self.radius
    }
}

/// arccosh with the clamp window: arguments within `ACOSH_CLAMP` below 1 are
/// treated as 1, anything lower is a numeric fault.
pub fn acosh_clamped(x: f64) -> Result<f64> {
    if x >= 1.0 {
        Ok(x.acosh())
    } else if x >= 1.0 - ACOSH_CLAMP {
        Ok(0.0)
    } else {
        Err(Error::Numeric(format!("arccosh argument {x} below 1")))
    }
}

/// cosh of the hyperbolic distance, 1 + |p−q|²/(2p₃q₃).
pub fn cosh_dist(p: &HyperbolicPoint, q: &HyperbolicPoint) -> f64 {
    1.0 + (p.vec() - q.vec()).norm_squared() / (2.0 * p.p3 * q.p3)
}

/// Hyperbolic distance. Evaluated through sinh(d/2) = |p−q|/(2√(p₃q₃)),
/// which is the same quantity without cancellation at small d.
pub fn dist(p: &HyperbolicPoint, q: &HyperbolicPoint) -> f64 {
    let e = (p.vec() - q.vec()).norm();
    2.0 * (e / (2.0 * (p.p3 * q.p3).sqrt())).asinh()
}

/// The hyperbolic ball B_ρ(p) as a Euclidean ball.
pub fn ball_to_euclidean(p: &HyperbolicPoint, rho: f64) -> Result<EuclideanBall> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Invalid(format!("ball radius must be positive, got {rho}")));
    }
    Ok(EuclideanBall {
        center: Vec3::new(p.p1, p.p2, p.p3 * rho.cosh()),
        radius: p.p3 * rho.sinh(),
    })
}

/// x ↦ q₃x + q − (q·e₃)e₃: dilation by q₃ followed by a horizontal shift.
pub fn translate_vec(x: Vec3, q: &HyperbolicPoint) -> Vec3 {
    Vec3::new(q.p3 * x.x + q.p1, q.p3 * x.y + q.p2, q.p3 * x.z)
}

pub fn translate(p: &HyperbolicPoint, q: &HyperbolicPoint) -> HyperbolicPoint {
    let v = translate_vec(p.vec(), q);
    HyperbolicPoint { p1: v.x, p2: v.y, p3: v.z }
}

/// Parameter of the composite: translate(translate(x, q), q2) = translate(x, compose(q, q2)).
pub fn compose(q: &HyperbolicPoint, q2: &HyperbolicPoint) -> HyperbolicPoint {
    translate(q, q2)
}

pub fn inverse(q: &HyperbolicPoint) -> HyperbolicPoint {
    HyperbolicPoint { p1: -q.p1 / q.p3, p2: -q.p2 / q.p3, p3: 1.0 / q.p3 }
}

/// ∇^H F = p₃² ∇F.
pub fn hyp_gradient(euclidean_grad: Vec3, p: &HyperbolicPoint) -> Vec3 {
    euclidean_grad * (p.p3 * p.p3)
}

/// ∫ over a Euclidean ball of p₃⁻³ f(p) dp.
pub fn hyp_volume_integral<F: Fn(Vec3) -> f64>(rule: &BallRule, ball: &EuclideanBall, f: F) -> f64 {
    rule.integrate(ball.center, ball.radius, |p| f(p) / (p.z * p.z * p.z))
}

/// Closed-form hyperbolic volume of a ball of radius ρ.
pub fn ball_volume(rho: f64) -> f64 {
    std::f64::consts::PI * ((2.0 * rho).sinh() - 2.0 * rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(a: f64, b: f64, c: f64) -> HyperbolicPoint {
        HyperbolicPoint::new(a, b, c).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(dist(&hp(0.3, -1.0, 2.0), &hp(0.3, -1.0, 2.0)), 0.0);
        let d = dist(&hp(0.0, 0.0, 1.0), &hp(0.0, 0.0, 2.0));
        assert!((d - 2f64.ln()).abs() < 1e-15);
        assert!((d - 1.25f64.acosh()).abs() < 1e-15);
    }

    #[test]
    fn acosh_form_agrees() {
        let p = hp(0.1, 0.4, 0.7);
        let q = hp(-1.0, 2.0, 3.5);
        let d = dist(&p, &q);
        assert!((d - acosh_clamped(cosh_dist(&p, &q)).unwrap()).abs() < 1e-14);
        assert!(acosh_clamped(1.0 - 1e-15).unwrap() == 0.0);
        assert!(acosh_clamped(1.0 - 1e-12).is_err());
    }

    #[test]
    fn rejects_lower_half_space() {
        assert!(HyperbolicPoint::new(0.0, 0.0, 0.0).is_err());
        assert!(HyperbolicPoint::new(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn ball_example() {
        let rho = 0.5f64.atanh();
        let b = ball_to_euclidean(&HyperbolicPoint::e3(), rho).unwrap();
        assert!((b.center.z - 2.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((b.radius - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        let b2 = ball_to_euclidean(&hp(0.0, 0.0, 3.0), rho).unwrap();
        assert!((b2.center.z - 3.0 * b.center.z).abs() < 1e-15);
        assert!((b2.radius - 3.0 * b.radius).abs() < 1e-15);
        assert!(ball_to_euclidean(&HyperbolicPoint::e3(), 0.0).is_err());
    }

    #[test]
    fn translate_examples() {
        let u = Vec3::new(0.2, -0.3, 1.7);
        assert_eq!(translate_vec(u, &HyperbolicPoint::e3()), u);
        let t = translate(&HyperbolicPoint::e3(), &hp(1.0, 2.0, 3.0));
        assert_eq!(t, hp(1.0, 2.0, 3.0));
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(hyp_gradient(Vec3::zeros(), &hp(1.0, 1.0, 3.0)), Vec3::zeros());
        assert_eq!(hyp_gradient(Vec3::z(), &hp(0.0, 0.0, 2.0)), Vec3::new(0.0, 0.0, 4.0));
        assert_eq!(hyp_gradient(Vec3::x(), &hp(1.0, 1.0, 3.0)), Vec3::new(9.0, 0.0, 0.0));
    }

    #[test]
    fn ball_volume_by_quadrature() {
        let rule = BallRule::default_order();
        let rho = 0.5f64.atanh();
        let b = ball_to_euclidean(&hp(0.4, -0.2, 1.3), rho).unwrap();
        let v = hyp_volume_integral(&rule, &b, |_| 1.0);
        assert!((v - ball_volume(rho)).abs() < 1e-10);
        assert!((ball_volume(rho) - std::f64::consts::PI * (4.0 / 3.0 - 3f64.ln())).abs() < 1e-14);
    }
}
