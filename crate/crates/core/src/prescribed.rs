//! Prescribed scalar functions on the half-space, with Euclidean gradients.

use crate::hyp_geom::Vec3;
use std::sync::Arc;

/// A scalar function φ on H³ (in model coordinates) with its Euclidean
/// gradient.
pub trait PrescribedFunction: Send + Sync {
    fn value(&self, p: Vec3) -> f64;
    /// Euclidean gradient; `None` when no gradient evaluator is available.
    fn gradient(&self, p: Vec3) -> Option<Vec3>;
    fn descriptor(&self) -> String;
}

pub type Phi = Arc<dyn PrescribedFunction>;

/// Hyperbolic distance to `c` and its Euclidean gradient in p (zero at p = c).
pub fn hypdist_with_grad(p: Vec3, c: Vec3) -> (f64, Vec3) {
    let diff = p - c;
    let r = diff.norm();
    let den = 2.0 * (p.z * c.z).sqrt();
    let s = r / den;
    let d = 2.0 * s.asinh();
    if r == 0.0 {
        return (0.0, Vec3::zeros());
    }
    let ds = diff / (r * den) - Vec3::z() * (s / (2.0 * p.z));
    (d, ds * (2.0 / (1.0 + s * s).sqrt()))
}

#[derive(Clone, Debug)]
pub struct Constant(pub f64);

impl PrescribedFunction for Constant {
    fn value(&self, _: Vec3) -> f64 {
        self.0
    }
    fn gradient(&self, _: Vec3) -> Option<Vec3> {
        Some(Vec3::zeros())
    }
    fn descriptor(&self) -> String {
        format!("{}", self.0)
    }
}

/// φ(p) = a·p + b.
#[derive(Clone, Debug)]
pub struct Affine {
    pub a: Vec3,
    pub b: f64,
}

impl PrescribedFunction for Affine {
    fn value(&self, p: Vec3) -> f64 {
        self.a.dot(&p) + self.b
    }
    fn gradient(&self, _: Vec3) -> Option<Vec3> {
        Some(self.a)
    }
    fn descriptor(&self) -> String {
        format!("affine({}, {}, {}; {})", self.a.x, self.a.y, self.a.z, self.b)
    }
}

/// φ(p) = |p| (Euclidean norm).
#[derive(Clone, Debug)]
pub struct EuclideanNorm;

impl PrescribedFunction for EuclideanNorm {
    fn value(&self, p: Vec3) -> f64 {
        p.norm()
    }
    fn gradient(&self, p: Vec3) -> Option<Vec3> {
        Some(p / p.norm())
    }
    fn descriptor(&self) -> String {
        "norm".into()
    }
}

/// φ(p) = d_H(p, c)².
#[derive(Clone, Debug)]
pub struct HypDistSq {
    pub center: Vec3,
}

impl PrescribedFunction for HypDistSq {
    fn value(&self, p: Vec3) -> f64 {
        hypdist_with_grad(p, self.center).0.powi(2)
    }
    fn gradient(&self, p: Vec3) -> Option<Vec3> {
        let (d, g) = hypdist_with_grad(p, self.center);
        Some(g * (2.0 * d))
    }
    fn descriptor(&self) -> String {
        format!("hypdist2({}, {}, {})", self.center.x, self.center.y, self.center.z)
    }
}

/// φ(p) = amp·exp(−d_H(p, c)²/w²).
#[derive(Clone, Debug)]
pub struct HypBump {
    pub center: Vec3,
    pub width: f64,
    pub amp: f64,
}

impl HypBump {
    pub fn unit(center: Vec3) -> Self {
        HypBump { center, width: 1.0, amp: 1.0 }
    }
}

impl PrescribedFunction for HypBump {
    fn value(&self, p: Vec3) -> f64 {
        let d = hypdist_with_grad(p, self.center).0 / self.width;
        self.amp * (-d * d).exp()
    }
    fn gradient(&self, p: Vec3) -> Option<Vec3> {
        let (d, g) = hypdist_with_grad(p, self.center);
        let w2 = self.width * self.width;
        Some(g * (-2.0 * d / w2 * self.amp * (-d * d / w2).exp()))
    }
    fn descriptor(&self) -> String {
        format!("{}*exp(-hypdist({}, {}, {})^2/{})", self.amp, self.center.x, self.center.y, self.center.z, self.width * self.width)
    }
}

/// Sum of Euclidean Gaussians Σ aᵢ exp(−|p − cᵢ|²/sᵢ²) plus a constant.
#[derive(Clone, Debug)]
pub struct GaussianSum {
    pub offset: f64,
    pub terms: Vec<(f64, Vec3, f64)>,
}

impl PrescribedFunction for GaussianSum {
    fn value(&self, p: Vec3) -> f64 {
        self.offset + self.terms.iter().map(|(a, c, s)| a * (-(p - c).norm_squared() / (s * s)).exp()).sum::<f64>()
    }
    fn gradient(&self, p: Vec3) -> Option<Vec3> {
        Some(self.terms.iter().fold(Vec3::zeros(), |acc, (a, c, s)| {
            let d = p - c;
            acc + d * (-2.0 * a / (s * s) * (-d.norm_squared() / (s * s)).exp())
        }))
    }
    fn descriptor(&self) -> String {
        format!("gaussian-sum[{}]", self.terms.len())
    }
}

/// Closure-backed function.
pub struct FnPhi<F, G> {
    pub f: F,
    pub g: Option<G>,
    pub name: String,
}

impl<F, G> PrescribedFunction for FnPhi<F, G>
where
    F: Fn(Vec3) -> f64 + Send + Sync,
    G: Fn(Vec3) -> Vec3 + Send + Sync,
{
    fn value(&self, p: Vec3) -> f64 {
        (self.f)(p)
    }
    fn gradient(&self, p: Vec3) -> Option<Vec3> {
        self.g.as_ref().map(|g| g(p))
    }
    fn descriptor(&self) -> String {
        self.name.clone()
    }
}

/// Composition φ ∘ T with a hyperbolic translation T(p) = q₃p + (q₁, q₂, 0).
pub struct Translated {
    pub inner: Phi,
    pub q: Vec3,
}

impl PrescribedFunction for Translated {
    fn value(&self, p: Vec3) -> f64 {
        self.inner.value(p * self.q.z + Vec3::new(self.q.x, self.q.y, 0.0))
    }
    fn gradient(&self, p: Vec3) -> Option<Vec3> {
        self.inner.gradient(p * self.q.z + Vec3::new(self.q.x, self.q.y, 0.0)).map(|g| g * self.q.z)
    }
    fn descriptor(&self) -> String {
        format!("({}) translated by ({}, {}, {})", self.inner.descriptor(), self.q.x, self.q.y, self.q.z)
    }
}

/// Central-difference gradient, used as an independent check.
pub fn fd_gradient(phi: &dyn PrescribedFunction, p: Vec3, h: f64) -> Vec3 {
    let mut g = Vec3::zeros();
    for i in 0..3 {
        let mut e = Vec3::zeros();
        e[i] = h;
        g[i] = (phi.value(p + e) - phi.value(p - e)) / (2.0 * h);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(phi: &dyn PrescribedFunction, p: Vec3) {
        let g = phi.gradient(p).unwrap();
        let fd = fd_gradient(phi, p, 1e-6);
        assert!((g - fd).norm() <= 1e-6 * (1.0 + g.norm()), "{} at {p:?}: {g:?} vs {fd:?}", phi.descriptor());
    }

    #[test]
    fn gradients_match_differences() {
        let c = Vec3::new(0.1, -0.2, 1.3);
        let pts = [Vec3::new(0.3, 0.2, 0.9), Vec3::new(-1.0, 0.5, 2.0), Vec3::new(0.11, -0.19, 1.31)];
        for p in pts {
            check(&Constant(2.0), p);
            check(&Affine { a: Vec3::new(1.0, -2.0, 0.5), b: 3.0 }, p);
            check(&EuclideanNorm, p);
            check(&HypDistSq { center: c }, p);
            check(&HypBump { center: c, width: 0.7, amp: 1.5 }, p);
            check(&GaussianSum { offset: 0.2, terms: vec![(1.0, c, 0.8), (-0.5, Vec3::new(1.0, 0.0, 2.0), 1.2)] }, p);
        }
    }

    #[test]
    fn hypdist_matches_model_distance() {
        let (d, _) = hypdist_with_grad(Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 0.0, 1.0));
        assert!((d - 2f64.ln()).abs() < 1e-15);
    }
}
