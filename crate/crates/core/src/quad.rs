//! Quadrature building blocks: Gauss–Legendre rules, a product rule on the
//! unit ball, and a compensated sum with fixed evaluation order.

use crate::Vec3;
use gauss_quad::GaussLegendre;

/// Gauss–Legendre nodes and weights on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let g = GaussLegendre::new(n.try_into().expect("nonzero order"));
    let mut pairs: Vec<(f64, f64)> = g.nodes().copied().zip(g.weights().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Gauss–Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let h = 0.5 * (b - a);
    let c = 0.5 * (b + a);
    (x.iter().map(|t| c + h * t).collect(), w.iter().map(|v| v * h).collect())
}

/// Neumaier-compensated sum; order of accumulation is the iterator order.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for v in it {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

/// Product rule on the closed unit ball: Gauss–Legendre in the radius (with
/// r² absorbed), Gauss–Legendre in cos θ, trapezoid in the azimuth.
#[derive(Clone, Debug)]
pub struct BallRule {
    pub nodes: Vec<Vec3>,
    pub weights: Vec<f64>,
}

impl BallRule {
    pub fn new(n_radial: usize, n_polar: usize, n_azimuth: usize) -> Self {
        let (r, wr) = gauss_legendre_on(n_radial, 0.0, 1.0);
        let (ct, wt) = gauss_legendre(n_polar);
        let dphi = 2.0 * std::f64::consts::PI / n_azimuth as f64;
        let mut nodes = Vec::with_capacity(n_radial * n_polar * n_azimuth);
        let mut weights = Vec::with_capacity(nodes.capacity());
        for (ri, wri) in r.iter().zip(&wr) {
            for (ci, wci) in ct.iter().zip(&wt) {
                let si = (1.0 - ci * ci).max(0.0).sqrt();
                for a in 0..n_azimuth {
                    let phi = (a as f64 + 0.5) * dphi;
                    nodes.push(Vec3::new(ri * si * phi.cos(), ri * si * phi.sin(), ri * ci));
                    weights.push(wri * ri * ri * wci * dphi);
                }
            }
        }
        BallRule { nodes, weights }
    }

    /// Default order used by the Melnikov layer.
    pub fn default_order() -> Self {
        BallRule::new(24, 24, 48)
    }

    /// ∫ over the Euclidean ball B_radius(center) of f.
    pub fn integrate<F: Fn(Vec3) -> f64>(&self, center: Vec3, radius: f64, f: F) -> f64 {
        let jac = radius * radius * radius;
        jac * kahan_sum(self.nodes.iter().zip(&self.weights).map(|(p, w)| w * f(center + p * radius)))
    }

    /// Vector-valued version of [`BallRule::integrate`].
    pub fn integrate_vec<F: Fn(Vec3) -> Vec3>(&self, center: Vec3, radius: f64, f: F) -> Vec3 {
        let jac = radius * radius * radius;
        let mut acc = [Vec::new(), Vec::new(), Vec::new()];
        for (p, w) in self.nodes.iter().zip(&self.weights) {
            let v = f(center + p * radius) * *w;
            for c in 0..3 {
                acc[c].push(v[c]);
            }
        }
        Vec3::new(
            kahan_sum(acc[0].iter().copied()),
            kahan_sum(acc[1].iter().copied()),
            kahan_sum(acc[2].iter().copied()),
        ) * jac
    }
}
