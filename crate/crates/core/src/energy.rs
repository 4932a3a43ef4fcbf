//! Energies of parametrized spheres: the weighted volume V_K through a
//! vertical antiderivative Q_K, the functional E, its first variation,
//! the horosphere family and the conformality residual.
//!
//! With W = ∂xu∧∂yu,
//! E_K(u) = ½∫u₃⁻²|∇u|² dz + 2V_K(u),  V_K(u) = ∫Q_K(u)·W dz,  div Q_K = p₃⁻³K,
//! so E′_K(u)φ = ∫J_K(u)·φ dz. For K = k + εφ this is
//! E_ε = ½∫u₃⁻²|∇u|² − k∫u₃⁻²e₃·W + 2εV_φ (the gauge term ∫e₃·W vanishes on
//! closed surfaces).

use crate::error::{Error, Result};
use crate::hyp_geom::Vec3;
use crate::linop::{j_residual, Curvature};
use crate::prescribed::PrescribedFunction;
use crate::quad::{gauss_legendre, kahan_sum};
use crate::sphere_chart::{ScalarField, SphereField, SphereGrid, VectorField};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// Largest log-height span of one Gauss panel in the vertical antiderivative.
const PANEL: f64 = 0.25;
const PANEL_ORDER: usize = 20;

/// A field Q on the half-space with div Q = p₃⁻³K, of the form (0, 0, Q₃).
pub enum VolumeVectorField<'a> {
    /// K ≡ k: Q₃ = −(k/2)(p₃⁻² − a⁻²).
    Constant { k: f64, anchor: f64 },
    /// Q₃(p) = ∫ₐ^{p₃} t⁻³K(p₁, p₂, t) dt by panel Gauss rules in log t.
    Vertical { k: &'a dyn PrescribedFunction, anchor: f64, nodes: Vec<f64>, weights: Vec<f64> },
}

pub fn build_q(k: &dyn PrescribedFunction, anchor: f64) -> Result<VolumeVectorField<'_>> {
    if !(anchor > 0.0) {
        return Err(Error::Invalid(format!("anchor height must be positive, got {anchor}")));
    }
    let (nodes, weights) = gauss_legendre(PANEL_ORDER);
    Ok(VolumeVectorField::Vertical { k, anchor, nodes, weights })
}

pub fn build_q_constant(k: f64, anchor: f64) -> Result<VolumeVectorField<'static>> {
    if !(anchor > 0.0) {
        return Err(Error::Invalid(format!("anchor height must be positive, got {anchor}")));
    }
    Ok(VolumeVectorField::Constant { k, anchor })
}

impl VolumeVectorField<'_> {
    pub fn anchor(&self) -> f64 {
        match self {
            VolumeVectorField::Constant { anchor, .. } | VolumeVectorField::Vertical { anchor, .. } => *anchor,
        }
    }

    pub fn eval(&self, p: Vec3) -> Result<Vec3> {
        if !(p.z > 0.0) {
            return Err(Error::Domain(format!("height {} ≤ 0", p.z)));
        }
        let q3 = match self {
            VolumeVectorField::Constant { k, anchor } => -0.5 * k * (p.z.powi(-2) - anchor.powi(-2)),
            VolumeVectorField::Vertical { k, anchor, nodes, weights } => {
                // t = a·eˢ, dt/t = ds: ∫ t⁻²K ds over s ∈ [0, ln(p₃/a)]
                let span = (p.z / anchor).ln();
                let panels = ((span.abs() / PANEL).ceil() as usize).max(1);
                let h = span / panels as f64;
                let mut acc = Vec::with_capacity(panels * nodes.len());
                for j in 0..panels {
                    let s0 = j as f64 * h;
                    for (x, w) in nodes.iter().zip(weights) {
                        let s = s0 + 0.5 * h * (x + 1.0);
                        let t = anchor * s.exp();
                        let v = k.value(Vec3::new(p.x, p.y, t));
                        if !v.is_finite() {
                            return Err(Error::Numeric(format!("K not finite at height {t}")));
                        }
                        acc.push(0.5 * h * w * v / (t * t));
                    }
                }
                kahan_sum(acc)
            }
        };
        Ok(Vec3::new(0.0, 0.0, q3))
    }

    /// Central-difference divergence, for checking div Q = p₃⁻³K.
    pub fn divergence_fd(&self, p: Vec3, h: f64) -> Result<f64> {
        let up = self.eval(p + Vec3::z() * h)?;
        let dn = self.eval(p - Vec3::z() * h)?;
        Ok((up.z - dn.z) / (2.0 * h))
    }
}

fn check_surface(u: &VectorField) -> Result<()> {
    if !u.has_derivs() {
        return Err(Error::Invalid("energy needs chart derivatives of u".into()));
    }
    if let Some(i) = u.values.iter().position(|v| !(v.z > 0.0)) {
        return Err(Error::Domain(format!("third component {} ≤ 0 at node {i}", u.values[i].z)));
    }
    Ok(())
}

/// ∫ g dz from node values g (the weights carry μ²).
pub fn integrate_dz(grid: &SphereGrid, g: &[f64]) -> f64 {
    kahan_sum((0..grid.len()).map(|i| grid.weight[i] * g[i] / (grid.mu[i] * grid.mu[i])))
}

/// V(u) = ∫ Q(u)·∂xu∧∂yu dz.
pub fn volume_v(q: &VolumeVectorField, u: &VectorField) -> Result<f64> {
    check_surface(u)?;
    let w = u.wedge();
    let vals = (0..u.grid.len()).map(|i| Ok(q.eval(u.values[i])?.dot(&w[i]))).collect::<Result<Vec<_>>>()?;
    Ok(integrate_dz(&u.grid, &vals))
}

/// ½∫ u₃⁻²|∇u|² dz.
pub fn dirichlet_term(u: &VectorField) -> Result<f64> {
    check_surface(u)?;
    let d = u.derivs.as_ref().unwrap();
    let vals: Vec<f64> = (0..u.grid.len())
        .map(|i| 0.5 * (d.dx[i].norm_squared() + d.dy[i].norm_squared()) / u.values[i].z.powi(2))
        .collect();
    Ok(integrate_dz(&u.grid, &vals))
}

/// E_ε(u) = ½∫u₃⁻²|∇u|² − k∫u₃⁻²e₃·∂xu∧∂yu + 2εV_φ(u).
pub fn energy_e(u: &VectorField, k: f64, eps: f64, phi: Option<&dyn PrescribedFunction>) -> Result<f64> {
    let d = dirichlet_term(u)?;
    let w = u.wedge();
    let vals: Vec<f64> = (0..u.grid.len()).map(|i| w[i].z / u.values[i].z.powi(2)).collect();
    let mut e = d - k * integrate_dz(&u.grid, &vals);
    if eps != 0.0 {
        let f = phi.ok_or_else(|| Error::Invalid("ε ≠ 0 needs φ".into()))?;
        e += 2.0 * eps * volume_v(&build_q(f, 1.0)?, u)?;
    }
    Ok(e)
}

/// E′(u)φ = ∫ J(u)·φ dz.
pub fn first_variation(u: &VectorField, curv: &Curvature, test: &VectorField) -> Result<f64> {
    if !u.same_grid(test) {
        return Err(Error::GridMismatch);
    }
    let j = j_residual(u, curv)?;
    let vals: Vec<f64> = j.values.iter().zip(&test.values).map(|(a, b)| a.dot(b)).collect();
    Ok(integrate_dz(&u.grid, &vals))
}

/// Infinitesimal Möbius reparametrizations of u: ∂xu, ∂yu, z∇u, iz∇u,
/// z²∇u, iz²∇u (real and imaginary parts of z^h acting on ∇u).
pub fn reparametrization_fields(u: &VectorField) -> Result<Vec<VectorField>> {
    let d = u.derivs.as_ref().ok_or_else(|| Error::Invalid("reparametrization fields need derivatives".into()))?;
    let g = &u.grid;
    let mut out = Vec::with_capacity(6);
    for h in 0..3 {
        for rot in [false, true] {
            out.push(VectorField::from_fn(g, |i| {
                let (x, y) = (g.x[i], g.y[i]);
                let (mut a, mut b) = match h {
                    0 => (1.0, 0.0),
                    1 => (x, y),
                    _ => (x * x - y * y, 2.0 * x * y),
                };
                if rot {
                    (a, b) = (-b, a);
                }
                d.dx[i] * a + d.dy[i] * b
            }));
        }
    }
    Ok(out)
}

/// First variations along the reparametrization fields and along e₁, e₂, u.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub reparametrization: Vec<f64>,
    pub translations: [f64; 3],
}

pub fn invariance_residuals(u: &VectorField, curv: &Curvature) -> Result<InvarianceReport> {
    let reparametrization = reparametrization_fields(u)?
        .iter()
        .map(|t| first_variation(u, curv, t))
        .collect::<Result<Vec<_>>>()?;
    let g = &u.grid;
    let e1 = VectorField::from_fn(g, |_| Vec3::x());
    let e2 = VectorField::from_fn(g, |_| Vec3::y());
    let translations = [first_variation(u, curv, &e1)?, first_variation(u, curv, &e2)?, first_variation(u, curv, u)?];
    Ok(InvarianceReport { reparametrization, translations })
}

/// α = ½u₃⁻²(|∂xu|² − |∂yu|²), β = −u₃⁻²∂xu·∂yu.
#[derive(Clone, Debug)]
pub struct ConformalityReport {
    pub sup_abs: f64,
    pub alpha: ScalarField,
    pub beta: ScalarField,
    /// Nodes where |∂xu| < 1e−8 times the largest |∂xu|.
    pub branch_suspects: Vec<usize>,
}

pub fn conformality_residual(u: &VectorField) -> Result<ConformalityReport> {
    check_surface(u)?;
    let d = u.derivs.as_ref().unwrap();
    let g = &u.grid;
    let alpha = ScalarField::from_fn(g, |i| 0.5 * (d.dx[i].norm_squared() - d.dy[i].norm_squared()) / u.values[i].z.powi(2));
    let beta = ScalarField::from_fn(g, |i| -d.dx[i].dot(&d.dy[i]) / u.values[i].z.powi(2));
    let sup_abs = (0..g.len()).map(|i| alpha.values[i].hypot(beta.values[i])).fold(0.0, f64::max);
    let scale = d.dx.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let branch_suspects = (0..g.len()).filter(|&i| d.dx[i].norm() < crate::tolerances::BRANCH_POINT * scale).collect();
    Ok(ConformalityReport { sup_abs, alpha, beta, branch_suspects })
}

/// Closed form of E₀(ω + te₃), t > 1.
pub fn horosphere_energy(k: f64, t: f64) -> Result<f64> {
    if !(t > 1.0) {
        return Err(Error::Invalid(format!("horosphere family needs t > 1, got {t}")));
    }
    Ok(4.0 * PI * (-(k * t - 1.0) / (t * t - 1.0) + 0.5 * k * ((t + 1.0) / (t - 1.0)).ln()))
}

/// ω + te₃ with analytic derivatives.
pub fn horosphere_field(grid: &Arc<SphereGrid>, t: f64) -> VectorField {
    let om = crate::sphere_chart::omega_field(grid);
    SphereField { values: om.values.iter().map(|v| v + Vec3::z() * t).collect(), ..om }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EnergyCurvePoint {
    pub t: f64,
    pub energy: f64,
    pub closed_form: f64,
}

/// t ↦ E₀(ω + te₃) by quadrature, with the closed form alongside.
pub fn energy_curve(k: f64, ts: &[f64], grid: &Arc<SphereGrid>) -> Result<Vec<EnergyCurvePoint>> {
    ts.iter()
        .map(|&t| {
            let closed_form = horosphere_energy(k, t)?;
            let energy = energy_e(&horosphere_field(grid, t), k, 0.0, None)?;
            Ok(EnergyCurvePoint { t, energy, closed_form })
        })
        .collect()
}

/// Geometric sequence of heights accumulating at 1 from above.
pub fn horosphere_heights(t_max: f64, t_min: f64, count: usize) -> Result<Vec<f64>> {
    if !(t_max > t_min && t_min > 1.0) || count < 2 {
        return Err(Error::Invalid("need t_max > t_min > 1 and at least two points".into()));
    }
    let (a, b) = ((t_max - 1.0).ln(), (t_min - 1.0).ln());
    Ok((0..count).map(|i| 1.0 + (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect())
}

pub fn energy_curve_csv(points: &[EnergyCurvePoint]) -> String {
    let mut s = String::from("t,energy,closed_form\n");
    for p in points {
        s.push_str(&format!("{:.17e},{:.17e},{:.17e}\n", p.t, p.energy, p.closed_form));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubble_family::{bubble, make_params};
    use crate::prescribed::Constant;
    use crate::sphere_chart::build_grid;
    use crate::HyperbolicPoint;

    #[test]
    fn constant_q_matches_quadrature() {
        let k = Constant(2.0);
        let q = build_q(&k, 1.0).unwrap();
        let qc = build_q_constant(2.0, 1.0).unwrap();
        for h in [0.1, 0.7, 1.0, 3.0, 40.0] {
            let p = Vec3::new(0.3, -1.0, h);
            assert!((q.eval(p).unwrap().z - qc.eval(p).unwrap().z).abs() < 1e-13 * (1.0 + h.powi(-2)));
        }
        let zero = build_q(&Constant(0.0), 1.0).unwrap();
        assert_eq!(zero.eval(Vec3::new(1.0, 2.0, 3.0)).unwrap(), Vec3::zeros());
    }

    #[test]
    fn horosphere_closed_form_value() {
        assert!((horosphere_energy(2.0, 2.0).unwrap() - 4.0 * PI * (3f64.ln() - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn bubble_is_conformal() {
        let g = build_grid(12).unwrap();
        let p = make_params(3.0).unwrap();
        let u = bubble(&p, &HyperbolicPoint::new(0.5, 0.2, 0.4).unwrap(), &g);
        let c = conformality_residual(&u).unwrap();
        assert!(c.sup_abs <= 1e-10);
        assert!(c.branch_suspects.is_empty());
    }
}
