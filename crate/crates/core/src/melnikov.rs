//! The reduced function F(q) = ∫ φ dH³ over the hyperbolic ball of radius
//! ρ_k about q, its gradient, critical points and monotonicity obstructions.
//!
//! With q^k = (q₁, q₂, k r_k q₃) the ball is the Euclidean ball of radius
//! q₃r_k about q^k, and
//! F(q) = ∫_{B_{r_k}(0)} (p₃ + kr_k)⁻³ φ(q₃p + q^k) dp,
//! which puts every q on the same reference quadrature.

use crate::bubble_family::CurvatureParams;
use crate::error::{Error, Result};
use crate::hyp_geom::{ball_to_euclidean, dist, hyp_volume_integral, HyperbolicPoint, Vec3};
use crate::prescribed::PrescribedFunction;
use crate::quad::BallRule;
use crate::tolerances::{DEDUP_DIST, HESSIAN_SIGN, OBSTRUCTION_SIGN};
use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

fn center_k(params: &CurvatureParams, q: &HyperbolicPoint) -> Vec3 {
    Vec3::new(q.p1, q.p2, params.k() * params.r() * q.p3)
}

/// F(q) by quadrature of p₃⁻³φ over the Euclidean image of the ball.
pub fn f_value_with(rule: &BallRule, phi: &dyn PrescribedFunction, params: &CurvatureParams, q: &HyperbolicPoint) -> Result<f64> {
    let ball = ball_to_euclidean(q, params.rho())?;
    if ball.center.z <= ball.radius {
        return Err(Error::Numeric("ball image reaches the boundary plane".into()));
    }
    Ok(hyp_volume_integral(rule, &ball, |p| phi.value(p)))
}

pub fn f_value(phi: &dyn PrescribedFunction, params: &CurvatureParams, q: &HyperbolicPoint) -> Result<f64> {
    f_value_with(&BallRule::default_order(), phi, params, q)
}

/// ∇F(q): ∂_{q_j}F = ∫(p₃+kr)⁻³∂_jφ(q₃p+q^k) dp (j = 1, 2),
/// ∂_{q₃}F = ∫(p₃+kr)⁻³∇φ(q₃p+q^k)·(p+kr e₃) dp.
pub fn f_gradient_with(rule: &BallRule, phi: &dyn PrescribedFunction, params: &CurvatureParams, q: &HyperbolicPoint) -> Result<Vec3> {
    let kr = params.k() * params.r();
    let c = center_k(params, q);
    // probe once so a missing evaluator is an error, not a panic
    phi.gradient(c).ok_or_else(|| Error::Invalid(format!("no gradient evaluator for {}", phi.descriptor())))?;
    let r = params.r();
    let g = rule.integrate_vec(Vec3::zeros(), r, |p| {
        let w = (p.z + kr).powi(-3);
        let gp = phi.gradient(c + p * q.p3).unwrap_or_else(Vec3::zeros);
        Vec3::new(gp.x, gp.y, gp.dot(&(p + Vec3::z() * kr))) * w
    });
    Ok(g)
}

pub fn f_gradient(phi: &dyn PrescribedFunction, params: &CurvatureParams, q: &HyperbolicPoint) -> Result<Vec3> {
    f_gradient_with(&BallRule::default_order(), phi, params, q)
}

/// Symmetrized central differences of ∇F with step h·q₃.
pub fn hessian_estimate(phi: &dyn PrescribedFunction, params: &CurvatureParams, q: &HyperbolicPoint, rule: &BallRule, h: f64) -> Result<Matrix3<f64>> {
    let step = h * q.p3;
    let mut m = Matrix3::zeros();
    for j in 0..3 {
        let mut e = Vec3::zeros();
        e[j] = step;
        let qp = HyperbolicPoint::from_vec(q.vec() + e)?;
        let qm = HyperbolicPoint::from_vec(q.vec() - e)?;
        let d = (f_gradient_with(rule, phi, params, &qp)? - f_gradient_with(rule, phi, params, &qm)?) / (2.0 * step);
        m.set_column(j, &d);
    }
    Ok((m + m.transpose()) * 0.5)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    NondegenerateMin,
    NondegenerateMax,
    Saddle,
    Degenerate,
}

/// Signs of the Hessian eigenvalues; any |λ| ≤ tol·max(1, ‖H‖) is degenerate.
pub fn classify(h: &Matrix3<f64>, tol: f64) -> Classification {
    let ev = h.symmetric_eigenvalues();
    let cut = tol * h.norm().max(1.0);
    if ev.iter().any(|l| l.abs() <= cut) {
        Classification::Degenerate
    } else if ev.iter().all(|l| *l > 0.0) {
        Classification::NondegenerateMin
    } else if ev.iter().all(|l| *l < 0.0) {
        Classification::NondegenerateMax
    } else {
        Classification::Saddle
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MelnikovResult {
    pub q: HyperbolicPoint,
    pub value: f64,
    pub gradient: [f64; 3],
    pub hessian_estimate: [[f64; 3]; 3],
    pub classification: Classification,
    /// Which stability proxy holds: "nondegenerate hessian" or "none".
    pub stability: String,
}

fn result_at(phi: &dyn PrescribedFunction, params: &CurvatureParams, q: HyperbolicPoint, rule: &BallRule) -> Result<MelnikovResult> {
    let value = f_value_with(rule, phi, params, &q)?;
    let g = f_gradient_with(rule, phi, params, &q)?;
    let h = hessian_estimate(phi, params, &q, rule, 1e-4)?;
    let classification = classify(&h, HESSIAN_SIGN);
    let stability = if classification == Classification::Degenerate { "none" } else { "nondegenerate hessian" };
    Ok(MelnikovResult {
        q,
        value,
        gradient: [g.x, g.y, g.z],
        hessian_estimate: [[h[(0, 0)], h[(0, 1)], h[(0, 2)]], [h[(1, 0)], h[(1, 1)], h[(1, 2)]], [h[(2, 0)], h[(2, 1)], h[(2, 2)]]],
        classification,
        stability: stability.into(),
    })
}

/// Axis-aligned box of q values, strictly inside the half-space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QBox {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl QBox {
    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Result<Self> {
        if !(lo[2] > 0.0) || (0..3).any(|i| !(lo[i] <= hi[i]) || !lo[i].is_finite() || !hi[i].is_finite()) {
            return Err(Error::Invalid(format!("bad box {lo:?}–{hi:?} (need lo ≤ hi and lo₃ > 0)")));
        }
        Ok(QBox { lo, hi })
    }

    /// Box of half-width w around q (third coordinate scaled by q₃).
    pub fn around(q: &HyperbolicPoint, w: f64) -> Result<Self> {
        QBox::new([q.p1 - w, q.p2 - w, q.p3 * (1.0 - w).max(0.05)], [q.p1 + w, q.p2 + w, q.p3 * (1.0 + w)])
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.lo[i] - 1e-12 && p[i] <= self.hi[i] + 1e-12)
    }

    fn point(&self, u: [f64; 3]) -> Vec3 {
        Vec3::from_fn(|i, _| self.lo[i] + u[i] * (self.hi[i] - self.lo[i]))
    }

    /// Tensor lattice with n points per axis (midpoint for n = 1).
    pub fn lattice(&self, n: usize) -> Vec<HyperbolicPoint> {
        let t = |i: usize| if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
        let mut out = Vec::with_capacity(n * n * n);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let p = self.point([t(a), t(b), t(c)]);
                    out.push(HyperbolicPoint { p1: p.x, p2: p.y, p3: p.z });
                }
            }
        }
        out
    }
}

fn halton(i: usize, base: usize) -> f64 {
    let (mut f, mut r, mut n) = (1.0, 0.0, i);
    while n > 0 {
        f /= base as f64;
        r += f * (n % base) as f64;
        n /= base;
    }
    r
}

/// Seed points: the box center followed by a Halton sequence.
pub fn seed_points(b: &QBox, count: usize) -> Vec<HyperbolicPoint> {
    (0..count)
        .map(|i| {
            let u = if i == 0 { [0.5; 3] } else { [halton(i, 2), halton(i, 3), halton(i, 5)] };
            let p = b.point(u);
            HyperbolicPoint { p1: p.x, p2: p.y, p3: p.z }
        })
        .collect()
}

/// Damped Newton on ∇F with a finite-difference Hessian; None when the
/// iteration leaves the box or stalls.
fn newton_from(phi: &dyn PrescribedFunction, params: &CurvatureParams, b: &QBox, q0: HyperbolicPoint, rule: &BallRule) -> Option<HyperbolicPoint> {
    let mut q = q0.vec();
    let scale = (0..3).map(|i| b.hi[i] - b.lo[i]).fold(0.0, f64::max).max(1e-3);
    for _ in 0..60 {
        let hq = HyperbolicPoint::from_vec(q).ok()?;
        let g = f_gradient_with(rule, phi, params, &hq).ok()?;
        let gn = g.norm();
        if gn <= 1e-13 {
            return Some(hq);
        }
        let h = hessian_estimate(phi, params, &hq, rule, 1e-4).ok()?;
        // Levenberg-style fallback when the Hessian is singular
        let step = h.try_inverse().map(|hi| -(hi * g)).unwrap_or(-g);
        let step = if step.norm() > 0.25 * scale { step * (0.25 * scale / step.norm()) } else { step };
        let mut t = 1.0;
        let mut next = q + step;
        while t > 1e-4 {
            next = q + step * t;
            if next.z > 0.0 {
                let gn2 = HyperbolicPoint::from_vec(next).ok().and_then(|p| f_gradient_with(rule, phi, params, &p).ok()).map(|v| v.norm());
                if gn2.map(|v| v < gn).unwrap_or(false) {
                    break;
                }
            }
            t *= 0.5;
        }
        if t <= 1e-4 || !b.contains(next) {
            return None;
        }
        let moved = (next - q).norm();
        q = next;
        if moved <= 1e-12 * q.norm().max(1.0) {
            return HyperbolicPoint::from_vec(q).ok();
        }
    }
    None
}

/// Critical points of F in the box from `seeds` starting points, deduplicated
/// and classified, sorted by value then coordinates.
pub fn find_critical(phi: &dyn PrescribedFunction, params: &CurvatureParams, b: &QBox, seeds: usize) -> Result<Vec<MelnikovResult>> {
    if phi.gradient(Vec3::new(0.5 * (b.lo[0] + b.hi[0]), 0.5 * (b.lo[1] + b.hi[1]), 0.5 * (b.lo[2] + b.hi[2]))).is_none() {
        return Err(Error::Invalid(format!("no gradient evaluator for {}", phi.descriptor())));
    }
    let rule = BallRule::default_order();
    let found: Vec<HyperbolicPoint> = seed_points(b, seeds)
        .into_par_iter()
        .filter_map(|s| newton_from(phi, params, b, s, &rule))
        .collect();
    let mut uniq: Vec<HyperbolicPoint> = Vec::new();
    for q in found {
        if !uniq.iter().any(|u| dist(u, &q) < DEDUP_DIST) {
            uniq.push(q);
        }
    }
    let mut out = uniq.into_par_iter().map(|q| result_at(phi, params, q, &rule)).collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then(a.q.p1.total_cmp(&b.q.p1))
            .then(a.q.p2.total_cmp(&b.q.p2))
            .then(a.q.p3.total_cmp(&b.q.p3))
    });
    Ok(out)
}

/// Sign summary of one directional derivative of F over a lattice.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DirectionSigns {
    pub direction: String,
    pub min: f64,
    pub max: f64,
    /// +1 or −1 when every value is beyond the sign tolerance, else 0.
    pub uniform_sign: i32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObstructionReport {
    pub directions: Vec<DirectionSigns>,
    pub obstructed: bool,
    /// "obstructed along <direction>" entries.
    pub messages: Vec<String>,
}

/// Signs of ∂_{q₁}F, ∂_{q₂}F and the radial pairing q·∇F (the derivative of
/// F along dilations) over an n³ lattice in the box.
pub fn monotone_obstruction(phi: &dyn PrescribedFunction, params: &CurvatureParams, b: &QBox, n: usize) -> Result<ObstructionReport> {
    let rule = BallRule::default_order();
    let grads = b
        .lattice(n)
        .into_par_iter()
        .map(|q| Ok((q, f_gradient_with(&rule, phi, params, &q)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut directions = Vec::new();
    let mut messages = Vec::new();
    for (name, f) in [
        ("e1", Box::new(|_: &HyperbolicPoint, g: &Vec3| g.x) as Box<dyn Fn(&HyperbolicPoint, &Vec3) -> f64>),
        ("e2", Box::new(|_: &HyperbolicPoint, g: &Vec3| g.y)),
        ("radial", Box::new(|q: &HyperbolicPoint, g: &Vec3| q.vec().dot(g))),
    ] {
        let vals: Vec<f64> = grads.iter().map(|(q, g)| f(q, g)).collect();
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let uniform_sign = if min > OBSTRUCTION_SIGN {
            1
        } else if max < -OBSTRUCTION_SIGN {
            -1
        } else {
            0
        };
        if uniform_sign != 0 {
            messages.push(format!("obstructed along {name}"));
        }
        directions.push(DirectionSigns { direction: name.into(), min, max, uniform_sign });
    }
    Ok(ObstructionReport { obstructed: !messages.is_empty(), directions, messages })
}

/// One lattice row of a scan.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanRow {
    pub q: [f64; 3],
    pub value: f64,
    pub gradient: [f64; 3],
}

pub fn scan(phi: &dyn PrescribedFunction, params: &CurvatureParams, b: &QBox, n: usize) -> Result<Vec<ScanRow>> {
    let rule = BallRule::default_order();
    b.lattice(n)
        .into_par_iter()
        .map(|q| {
            let value = f_value_with(&rule, phi, params, &q)?;
            let g = f_gradient_with(&rule, phi, params, &q)?;
            Ok(ScanRow { q: [q.p1, q.p2, q.p3], value, gradient: [g.x, g.y, g.z] })
        })
        .collect()
}

pub fn scan_csv(rows: &[ScanRow]) -> String {
    let mut s = String::from("q1,q2,q3,F,dF1,dF2,dF3\n");
    for r in rows {
        s.push_str(&format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            r.q[0], r.q[1], r.q[2], r.value, r.gradient[0], r.gradient[1], r.gradient[2]
        ));
    }
    s
}

/// |3/(4πr_k³)·F(q) − φ(q)| for each k, with the least-squares C in C/k.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub ks: Vec<f64>,
    pub defects: Vec<f64>,
    pub fitted_c: f64,
}

pub fn large_k_asymptotics(phi: &dyn PrescribedFunction, q: &HyperbolicPoint, ks: &[f64]) -> Result<AsymptoticsReport> {
    let mut defects = Vec::with_capacity(ks.len());
    for &k in ks {
        let p = crate::bubble_family::make_params(k)?;
        let f = f_value(phi, &p, q)?;
        defects.push((3.0 / (4.0 * std::f64::consts::PI * p.r().powi(3)) * f - phi.value(q.vec())).abs());
    }
    let num: f64 = ks.iter().zip(&defects).map(|(k, d)| d / k).sum();
    let den: f64 = ks.iter().map(|k| 1.0 / (k * k)).sum();
    Ok(AsymptoticsReport { ks: ks.to_vec(), defects, fitted_c: num / den })
}
