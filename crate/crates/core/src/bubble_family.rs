//! The explicit solutions: curvature parameters, the bubbles U and U_q,
//! Möbius reparametrizations and the 9-dimensional tangent frame.

use crate::error::{Error, Result};
use crate::hyp_geom::{HyperbolicPoint, Vec3};
use crate::sphere_chart::{
    omega_field, omega_laplacian, omega_mu, ChartMap, FieldValue, Jet, ScalarField, SphereField, SphereGrid, VectorField,
};
use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// k > 1 with ρ_k = artanh(1/k), r_k = 1/√(k²−1), c_k = e^{ρ_k}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvatureParams {
    k: f64,
    rho: f64,
    r: f64,
    c: f64,
}

impl CurvatureParams {
    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn r(&self) -> f64 {
        self.r
    }
    pub fn c(&self) -> f64 {
        self.c
    }
}

pub fn make_params(k: f64) -> Result<CurvatureParams> {
    if !k.is_finite() {
        return Err(Error::Invalid(format!("k must be finite, got {k}")));
    }
    if k <= 1.0 {
        return Err(Error::NoBubble);
    }
    let rho = 0.5 * ((k + 1.0) / (k - 1.0)).ln();
    // (k−1)(k+1) keeps precision near k = 1
    let r = 1.0 / ((k - 1.0) * (k + 1.0)).sqrt();
    let c = ((k + 1.0) / (k - 1.0)).sqrt();
    Ok(CurvatureParams { k, rho, r, c })
}

/// c₀ = √(3/(16π)).
pub fn c0() -> f64 {
    (3.0 / (16.0 * PI)).sqrt()
}

/// U_q = q₃ r_k(ω + k e₃) + (q₁, q₂, 0) as a closed-form chart map.
#[derive(Clone, Copy, Debug)]
pub struct BubbleMap {
    pub params: CurvatureParams,
    pub q: HyperbolicPoint,
}

impl ChartMap<Vec3> for BubbleMap {
    fn jet(&self, x: f64, y: f64) -> Jet<Vec3> {
        let o = omega_mu(x, y);
        let s = self.q.p3 * self.params.r;
        let shift = Vec3::new(self.q.p1, self.q.p2, self.q.p3 * self.params.r * self.params.k);
        Jet { val: o.omega * s + shift, dx: o.omega_x * s, dy: o.omega_y * s, lap: omega_laplacian(x, y) * s }
    }
}

pub fn bubble(params: &CurvatureParams, q: &HyperbolicPoint, grid: &Arc<SphereGrid>) -> VectorField {
    SphereField::from_map(grid, &BubbleMap { params: *params, q: *q })
}

/// g(z) = (az + b)/(cz + d).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoebiusMap {
    pub a: Complex<f64>,
    pub b: Complex<f64>,
    pub c: Complex<f64>,
    pub d: Complex<f64>,
}

impl MoebiusMap {
    pub fn new(a: Complex<f64>, b: Complex<f64>, c: Complex<f64>, d: Complex<f64>) -> Result<Self> {
        let det = a * d - b * c;
        if det.norm() < 1e-14 * (a.norm() * d.norm() + b.norm() * c.norm()).max(1e-300) {
            return Err(Error::Invalid("Möbius map with ad − bc = 0".into()));
        }
        Ok(MoebiusMap { a, b, c, d })
    }

    pub fn identity() -> Self {
        let (o, z) = (Complex::new(1.0, 0.0), Complex::new(0.0, 0.0));
        MoebiusMap { a: o, b: z, c: z, d: o }
    }

    pub fn rotation(theta: f64) -> Self {
        MoebiusMap { a: Complex::from_polar(1.0, theta), ..Self::identity() }
    }

    /// g(z) and g′(z).
    pub fn apply(&self, z: Complex<f64>) -> (Complex<f64>, Complex<f64>) {
        let den = self.c * z + self.d;
        ((self.a * z + self.b) / den, (self.a * self.d - self.b * self.c) / (den * den))
    }
}

/// Closed-form pullback M ∘ g of a chart map by a Möbius map.
pub struct Pullback<'a, T> {
    pub map: &'a dyn ChartMap<T>,
    pub g: MoebiusMap,
}

fn chain<T: FieldValue>(j: Jet<T>, gp: Complex<f64>) -> Jet<T> {
    let (p, q) = (gp.re, gp.im);
    Jet { val: j.val, dx: j.dx * p + j.dy * q, dy: j.dx * (-q) + j.dy * p, lap: j.lap * gp.norm_sqr() }
}

impl<T: FieldValue> ChartMap<T> for Pullback<'_, T> {
    fn jet(&self, x: f64, y: f64) -> Jet<T> {
        let (w, gp) = self.g.apply(Complex::new(x, y));
        chain(self.map.jet(w.re, w.im), gp)
    }
}

/// u ∘ g for a sampled field: the band-limited expansion of u is evaluated
/// at g(zᵢ), with chart derivatives by the chain rule.
pub fn moebius_pullback<T: FieldValue>(u: &SphereField<T>, g: &MoebiusMap) -> SphereField<T> {
    let grid = &u.grid;
    let coefs = u.to_coefs();
    let n = grid.len();
    let mut vals = Vec::with_capacity(n);
    let mut dx = Vec::with_capacity(n);
    let mut dy = Vec::with_capacity(n);
    let mut lap = Vec::with_capacity(n);
    for i in 0..n {
        let (w, gp) = g.apply(Complex::new(grid.x[i], grid.y[i]));
        let js: Vec<Jet<f64>> = coefs.iter().map(|c| grid.eval_expansion(c, w.re, w.im)).collect();
        let pick = |f: &dyn Fn(&Jet<f64>) -> f64| T::from_comps(&js.iter().map(f).collect::<Vec<_>>());
        let j = chain(Jet { val: pick(&|j| j.val), dx: pick(&|j| j.dx), dy: pick(&|j| j.dy), lap: pick(&|j| j.lap) }, gp);
        vals.push(j.val);
        dx.push(j.dx);
        dy.push(j.dy);
        lap.push(j.lap);
    }
    SphereField { grid: grid.clone(), values: vals, derivs: Some(crate::sphere_chart::Derivs { dx, dy, lap }) }
}

/// Analytic pullback of a chart map, sampled on a grid.
pub fn moebius_pullback_map<T: FieldValue>(map: &dyn ChartMap<T>, g: &MoebiusMap, grid: &Arc<SphereGrid>) -> SphereField<T> {
    SphereField::from_map(grid, &Pullback { map, g: *g })
}

/// τ₁…τ₆ built from ∂xω, ∂yω with polynomial coefficients.
struct TauMap(usize);

impl ChartMap<Vec3> for TauMap {
    fn jet(&self, x: f64, y: f64) -> Jet<Vec3> {
        let w = Omega2::at(x, y);
        let s2 = 2f64.sqrt();
        // coefficient pairs (a, b) with τ = c₀(a ∂xω + b ∂yω); a, b polynomial in x, y
        let (a, ax, ay, al, b, bx, by, bl) = match self.0 {
            0 => (1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            1 => (0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0),
            2 => (s2 * x, s2, 0.0, 0.0, s2 * y, 0.0, s2, 0.0),
            3 => (-s2 * y, 0.0, -s2, 0.0, s2 * x, s2, 0.0, 0.0),
            4 => (x * x - y * y, 2.0 * x, -2.0 * y, 0.0, 2.0 * x * y, 2.0 * y, 2.0 * x, 0.0),
            5 => (-2.0 * x * y, -2.0 * y, -2.0 * x, 0.0, x * x - y * y, 2.0 * x, -2.0 * y, 0.0),
            _ => unreachable!(),
        };
        let c = c0();
        let val = (w.wx * a + w.wy * b) * c;
        let dx = (w.wxx * a + w.wx * ax + w.wxy * b + w.wy * bx) * c;
        let dy = (w.wxy * a + w.wx * ay + w.wyy * b + w.wy * by) * c;
        // Δ(a∂xω) = Δa ∂xω + 2∇a·∇∂xω + a ∂xΔω
        let lap = (w.wx * al
            + (w.wxx * ax + w.wxy * ay) * 2.0
            + w.lap_x * a
            + w.wy * bl
            + (w.wxy * bx + w.wyy * by) * 2.0
            + w.lap_y * b)
            * c;
        Jet { val, dx, dy, lap }
    }
}

/// Second derivatives of ω and derivatives of Δω, in closed form.
struct Omega2 {
    wx: Vec3,
    wy: Vec3,
    wxx: Vec3,
    wxy: Vec3,
    wyy: Vec3,
    lap_x: Vec3,
    lap_y: Vec3,
}

impl Omega2 {
    fn at(x: f64, y: f64) -> Self {
        let o = omega_mu(x, y);
        let mu = o.mu;
        let (m2, m3) = (mu * mu, mu * mu * mu);
        // μ_x = −μ²x, μ_y = −μ²y
        let mx = -m2 * x;
        let my = -m2 * y;
        let mxx = 2.0 * m3 * x * x - m2;
        let myy = 2.0 * m3 * y * y - m2;
        let mxy = 2.0 * m3 * x * y;
        // ω = (μx, μy, 1 − μ)
        let wxx = Vec3::new(mxx * x + 2.0 * mx, mxx * y, -mxx);
        let wxy = Vec3::new(mxy * x + my, mxy * y + mx, -mxy);
        let wyy = Vec3::new(myy * x, myy * y + 2.0 * my, -myy);
        // Δω = −2μ²ω, so ∂x Δω = −4μμ_x ω − 2μ²∂xω
        let lap_x = o.omega * (-4.0 * mu * mx) - o.omega_x * (2.0 * m2);
        let lap_y = o.omega * (-4.0 * mu * my) - o.omega_y * (2.0 * m2);
        Omega2 { wx: o.omega_x, wy: o.omega_y, wxx, wxy, wyy, lap_x, lap_y }
    }
}

/// γ_ℓ = 2c₀(kω_ℓ + δ_ℓ3) as a closed-form scalar map.
struct GammaMap {
    k: f64,
    l: usize,
}

impl ChartMap<f64> for GammaMap {
    fn jet(&self, x: f64, y: f64) -> Jet<f64> {
        let o = omega_mu(x, y);
        let s = 2.0 * c0();
        let l = self.l;
        let add = if l == 2 { 1.0 } else { 0.0 };
        Jet {
            val: s * (self.k * o.omega[l] + add),
            dx: s * self.k * o.omega_x[l],
            dy: s * self.k * o.omega_y[l],
            lap: s * self.k * omega_laplacian(x, y)[l],
        }
    }
}

/// τ₁…τ₆, γ and the nine kernel generators τ₁…τ₆, γ₁ω, γ₂ω, γ₃ω.
#[derive(Clone, Debug)]
pub struct TangentFrame {
    pub params: CurvatureParams,
    pub c0: f64,
    pub tau: Vec<VectorField>,
    pub gamma: Vec<ScalarField>,
    pub generators: Vec<VectorField>,
}

pub fn tangent_frame(params: &CurvatureParams, grid: &Arc<SphereGrid>) -> TangentFrame {
    let tau: Vec<VectorField> = (0..6).map(|j| SphereField::from_map(grid, &TauMap(j))).collect();
    let gamma: Vec<ScalarField> = (0..3).map(|l| SphereField::from_map(grid, &GammaMap { k: params.k(), l })).collect();
    let om = omega_field(grid);
    let mut generators = tau.clone();
    for g in &gamma {
        generators.push(g.times_vec(&om));
    }
    TangentFrame { params: *params, c0: c0(), tau, gamma, generators }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L2,
    Star,
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" | "L2" => Ok(Metric::L2),
            "star" => Ok(Metric::Star),
            _ => Err(Error::Invalid(format!("unknown metric '{s}'"))),
        }
    }
}

/// ∫ f·ψ μ²dz (L2) or the star product
/// ∫ Pf·Pψ μ²/(ω₃+k)² dz + ∫ (f·ω)(ψ·ω) μ²/(ω₃+k)³ dz.
pub fn inner(f: &VectorField, g: &VectorField, metric: Metric, k: f64) -> f64 {
    let grid = &f.grid;
    match metric {
        Metric::L2 => f.inner(g),
        Metric::Star => crate::quad::kahan_sum((0..grid.len()).map(|i| {
            let o = grid.omega[i];
            let (a, b) = (f.values[i], g.values[i]);
            let (an, bn) = (a.dot(&o), b.dot(&o));
            let t = o.z + k;
            grid.weight[i] * ((a - o * an).dot(&(b - o * bn)) / (t * t) + an * bn / (t * t * t))
        })),
    }
}

#[derive(Clone, Debug)]
pub struct Projection {
    pub coefficients: [f64; 9],
    pub remainder: VectorField,
    pub condition: f64,
}

/// Splits f into its component along the nine generators (in the chosen
/// metric) and the orthogonal remainder. Coefficients refer to the
/// generators τ₁…τ₆, γ₁ω, γ₂ω, γ₃ω.
pub fn tangent_project(f: &VectorField, frame: &TangentFrame, metric: Metric) -> Result<Projection> {
    if !f.same_grid(&frame.generators[0]) {
        return Err(Error::GridMismatch);
    }
    let k = frame.params.k();
    let gens = &frame.generators;
    let gram = DMatrix::from_fn(9, 9, |i, j| inner(&gens[i], &gens[j], metric, k));
    let rhs = DVector::from_fn(9, |i, _| inner(f, &gens[i], metric, k));
    let ev = gram.clone().symmetric_eigenvalues();
    let condition = ev.max() / ev.min();
    let chol = gram.cholesky().ok_or_else(|| Error::Numeric("singular frame Gram matrix".into()))?;
    let c = chol.solve(&rhs);
    let mut values = f.values.clone();
    for (j, g) in gens.iter().enumerate() {
        for (v, gv) in values.iter_mut().zip(&g.values) {
            *v -= gv * c[j];
        }
    }
    let mut coefficients = [0.0; 9];
    coefficients.copy_from_slice(c.as_slice());
    Ok(Projection { coefficients, remainder: VectorField::from_values(&f.grid, values), condition })
}

/// The generators s − (s·ω)ω, t∧ω (s, t ∈ {e₁, e₂, e₃}) and (α·(kω+e₃))ω.
pub fn tuz_generators(params: &CurvatureParams, grid: &Arc<SphereGrid>) -> Vec<VectorField> {
    let e = [Vec3::x(), Vec3::y(), Vec3::z()];
    let mut out = Vec::new();
    for s in e {
        out.push(VectorField::from_fn(grid, |i| s - grid.omega[i] * s.dot(&grid.omega[i])));
    }
    for t in e {
        out.push(VectorField::from_fn(grid, |i| t.cross(&grid.omega[i])));
    }
    for a in e {
        out.push(VectorField::from_fn(grid, |i| grid.omega[i] * a.dot(&(grid.omega[i] * params.k() + Vec3::z()))));
    }
    out
}

/// z^h∇ω and iz^h∇ω (h = 0, 1, 2), then e₁, e₂ and U.
pub fn tangbasis_generators(params: &CurvatureParams, grid: &Arc<SphereGrid>) -> Vec<VectorField> {
    let mut out = Vec::new();
    for h in 0..3 {
        for rot in [false, true] {
            out.push(VectorField::from_fn(grid, |i| {
                let z = Complex::new(grid.x[i], grid.y[i]);
                let mut c = z.powu(h);
                if rot {
                    c *= Complex::i();
                }
                grid.omega_x[i] * c.re + grid.omega_y[i] * c.im
            }));
        }
    }
    out.push(VectorField::from_fn(grid, |_| Vec3::x()));
    out.push(VectorField::from_fn(grid, |_| Vec3::y()));
    out.push(bubble(params, &HyperbolicPoint::e3(), grid));
    out
}

/// L2 norm of the part of `f` outside the frame span.
pub fn span_residual(f: &VectorField, frame: &TangentFrame) -> Result<f64> {
    let p = tangent_project(f, frame, Metric::L2)?;
    Ok(p.remainder.inner(&p.remainder).max(0.0).sqrt())
}
