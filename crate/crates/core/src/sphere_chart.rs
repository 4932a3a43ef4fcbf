//! Discretization of S² through the stereographic chart
//! ω(z) = (μx, μy, 1 − μ), μ = 2/(1 + |z|²).
//!
//! Nodes are Gauss–Legendre rings in ω₃ times equispaced azimuths. Weights are
//! stored pre-multiplied so that Σ wᵢ f(zᵢ) ≈ ∫ f μ² dz. General fields are
//! differentiated spectrally through real spherical harmonics up to degree
//! `lmax`; catalog fields carry analytic chart derivatives.

use crate::error::{Error, Result};
use crate::quad::{gauss_legendre, kahan_sum};
use crate::tolerances::OVERLAP_MISMATCH;
use crate::Vec3;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

/// Radius separating the main chart from the inverted chart z ↦ 1/z.
pub const R_CUT: f64 = 1.5;

/// ω, μ and the first chart derivatives of ω at a chart point.
#[derive(Clone, Copy, Debug)]
pub struct OmegaMu {
    pub omega: Vec3,
    pub mu: f64,
    pub omega_x: Vec3,
    pub omega_y: Vec3,
}

pub fn omega_mu(x: f64, y: f64) -> OmegaMu {
    let mu = 2.0 / (1.0 + x * x + y * y);
    let m2 = mu * mu;
    OmegaMu {
        omega: Vec3::new(mu * x, mu * y, 1.0 - mu),
        mu,
        omega_x: Vec3::new(mu - m2 * x * x, -m2 * x * y, m2 * x),
        omega_y: Vec3::new(-m2 * x * y, mu - m2 * y * y, m2 * y),
    }
}

/// Chart Laplacian of ω from explicit second derivatives.
pub fn omega_laplacian(x: f64, y: f64) -> Vec3 {
    let mu = 2.0 / (1.0 + x * x + y * y);
    let (m2, m3) = (mu * mu, mu * mu * mu);
    // ∂xx + ∂yy of μx, μy and 1 − μ, term by term
    let lx = (-3.0 * m2 * x + 2.0 * m3 * x * x * x) + (2.0 * m3 * x * y * y - m2 * x);
    let ly = (-3.0 * m2 * y + 2.0 * m3 * y * y * y) + (2.0 * m3 * x * x * y - m2 * y);
    let lmu = (2.0 * m3 * x * x - m2) + (2.0 * m3 * y * y - m2);
    Vec3::new(lx, ly, -lmu)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChartTag {
    Main,
    Inverted,
}

/// Value and chart derivatives of a field at one point.
#[derive(Clone, Copy, Debug)]
pub struct Jet<T> {
    pub val: T,
    pub dx: T,
    pub dy: T,
    pub lap: T,
}

/// A field given in closed form on the chart; supplies analytic derivatives.
pub trait ChartMap<T>: Sync {
    fn jet(&self, x: f64, y: f64) -> Jet<T>;
}

/// The map ω itself.
pub struct Omega;

impl ChartMap<Vec3> for Omega {
    fn jet(&self, x: f64, y: f64) -> Jet<Vec3> {
        let o = omega_mu(x, y);
        Jet { val: o.omega, dx: o.omega_x, dy: o.omega_y, lap: omega_laplacian(x, y) }
    }
}

/// Field values: reals or 3-vectors.
pub trait FieldValue:
    Copy + Default + Send + Sync + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> + std::fmt::Debug
{
    const DIM: usize;
    fn comp(&self, i: usize) -> f64;
    fn from_comps(c: &[f64]) -> Self;
    fn norm(&self) -> f64;
}

impl FieldValue for f64 {
    const DIM: usize = 1;
    fn comp(&self, _: usize) -> f64 {
        *self
    }
    fn from_comps(c: &[f64]) -> Self {
        c[0]
    }
    fn norm(&self) -> f64 {
        self.abs()
    }
}

impl FieldValue for Vec3 {
    const DIM: usize = 3;
    fn comp(&self, i: usize) -> f64 {
        self[i]
    }
    fn from_comps(c: &[f64]) -> Self {
        Vec3::new(c[0], c[1], c[2])
    }
    fn norm(&self) -> f64 {
        nalgebra::Vector3::norm(self)
    }
}

/// Normalized associated Legendre functions on a set of abscissae, with
/// ∫₋₁¹ P̄ₗᵐ(t)² dt = 1/(2π), plus dP̄/dθ and m P̄/sin θ (t = cos θ).
#[derive(Clone, Debug)]
pub struct AlfTable {
    pub m: usize,
    pub lmax: usize,
    pub nt: usize,
    vals: Vec<f64>,
    dth: Vec<f64>,
    msin: Vec<f64>,
}

impl AlfTable {
    pub fn new(m: usize, lmax: usize, t: &[f64]) -> Self {
        let nl = lmax + 1 - m;
        let nt = t.len();
        let mut vals = vec![0.0; nt * nl];
        let mut dth = vec![0.0; nt * nl];
        let mut msin = vec![0.0; nt * nl];
        for (j, &tj) in t.iter().enumerate() {
            let s = ((1.0 - tj) * (1.0 + tj)).max(0.0).sqrt();
            let p = alf_column(m, lmax, tj, s);
            for l in m..=lmax {
                let i = l - m;
                vals[j * nl + i] = p[i];
                msin[j * nl + i] = if m == 0 { 0.0 } else { m as f64 * p[i] / s };
                let prev = if l > m { p[i - 1] } else { 0.0 };
                let lf = l as f64;
                let c = ((2.0 * lf + 1.0) * (lf * lf - (m * m) as f64) / (2.0 * lf - 1.0)).max(0.0).sqrt();
                dth[j * nl + i] = (lf * tj * p[i] - c * prev) / s;
            }
        }
        AlfTable { m, lmax, nt, vals, dth, msin }
    }

    #[inline]
    pub fn nl(&self) -> usize {
        self.lmax + 1 - self.m
    }
    #[inline]
    pub fn val(&self, j: usize, l: usize) -> f64 {
        self.vals[j * self.nl() + l - self.m]
    }
    #[inline]
    pub fn dth(&self, j: usize, l: usize) -> f64 {
        self.dth[j * self.nl() + l - self.m]
    }
    #[inline]
    pub fn msin(&self, j: usize, l: usize) -> f64 {
        self.msin[j * self.nl() + l - self.m]
    }
}

/// P̄ₗᵐ(t) for l = m..=lmax by the standard stable recurrences.
pub fn alf_column(m: usize, lmax: usize, t: f64, s: f64) -> Vec<f64> {
    let mut pmm = 1.0 / (4.0 * PI).sqrt();
    for k in 1..=m {
        let kf = k as f64;
        pmm *= ((2.0 * kf + 1.0) / (2.0 * kf)).sqrt() * s;
    }
    let mut out = Vec::with_capacity(lmax + 1 - m);
    out.push(pmm);
    if lmax == m {
        return out;
    }
    let mf = m as f64;
    let p1 = (2.0 * mf + 3.0).sqrt() * t * pmm;
    out.push(p1);
    for l in (m + 2)..=lmax {
        let lf = l as f64;
        let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
        let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
        let v = a * (t * out[l - m - 1] - b * out[l - m - 2]);
        out.push(v);
    }
    out
}

/// Node set and spectral machinery.
#[derive(Debug)]
pub struct SphereGrid {
    pub n: usize,
    pub lmax: usize,
    pub nlat: usize,
    pub nlon: usize,
    pub ring_t: Vec<f64>,
    pub ring_w: Vec<f64>,
    pub azimuth: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub weight: Vec<f64>,
    pub tag: Vec<ChartTag>,
    pub omega: Vec<Vec3>,
    pub mu: Vec<f64>,
    pub omega_x: Vec<Vec3>,
    pub omega_y: Vec<Vec3>,
    // chart derivative = fθ·gθ + (f_ϑ/sinθ)·gϑ
    g_th_x: Vec<f64>,
    g_ph_x: Vec<f64>,
    g_th_y: Vec<f64>,
    g_ph_y: Vec<f64>,
    alf: Vec<AlfTable>,
    cos_tab: Vec<f64>,
    sin_tab: Vec<f64>,
    offsets: Vec<usize>,
}

/// Default spectral degree for a grid of resolution n.
pub fn default_lmax(n: usize) -> usize {
    n / 2
}

pub fn build_grid(n: usize) -> Result<Arc<SphereGrid>> {
    build_grid_with_lmax(n, default_lmax(n))
}

pub fn build_grid_with_lmax(n: usize, lmax: usize) -> Result<Arc<SphereGrid>> {
    if n < 4 {
        return Err(Error::Invalid(format!("grid resolution must be at least 4, got {n}")));
    }
    if lmax + 1 > n || lmax < 2 {
        return Err(Error::Invalid(format!("spectral degree {lmax} incompatible with n = {n}")));
    }
    let nlat = n;
    let nlon = 2 * n;
    let (t, w) = gauss_legendre(nlat);
    let dphi = 2.0 * PI / nlon as f64;
    let azimuth: Vec<f64> = (0..nlon).map(|k| k as f64 * dphi).collect();
    let nn = nlat * nlon;
    let mut g = SphereGrid {
        n,
        lmax,
        nlat,
        nlon,
        ring_t: t.clone(),
        ring_w: w.clone(),
        azimuth: azimuth.clone(),
        x: Vec::with_capacity(nn),
        y: Vec::with_capacity(nn),
        weight: Vec::with_capacity(nn),
        tag: Vec::with_capacity(nn),
        omega: Vec::with_capacity(nn),
        mu: Vec::with_capacity(nn),
        omega_x: Vec::with_capacity(nn),
        omega_y: Vec::with_capacity(nn),
        g_th_x: Vec::with_capacity(nn),
        g_ph_x: Vec::with_capacity(nn),
        g_th_y: Vec::with_capacity(nn),
        g_ph_y: Vec::with_capacity(nn),
        alf: Vec::new(),
        cos_tab: vec![0.0; nlon * (lmax + 1)],
        sin_tab: vec![0.0; nlon * (lmax + 1)],
        offsets: Vec::new(),
    };
    for j in 0..nlat {
        let tj = t[j];
        let s = ((1.0 - tj) * (1.0 + tj)).sqrt();
        let r = ((1.0 + tj) / (1.0 - tj)).sqrt();
        for &ph in &azimuth {
            let (x, y) = (r * ph.cos(), r * ph.sin());
            let o = omega_mu(x, y);
            g.x.push(x);
            g.y.push(y);
            g.weight.push(w[j] * dphi);
            g.tag.push(if r <= R_CUT { ChartTag::Main } else { ChartTag::Inverted });
            let e_th = Vec3::new(tj * ph.cos(), tj * ph.sin(), -s);
            let e_ph = Vec3::new(-ph.sin(), ph.cos(), 0.0);
            g.g_th_x.push(e_th.dot(&o.omega_x));
            g.g_ph_x.push(e_ph.dot(&o.omega_x));
            g.g_th_y.push(e_th.dot(&o.omega_y));
            g.g_ph_y.push(e_ph.dot(&o.omega_y));
            g.omega.push(o.omega);
            g.mu.push(o.mu);
            g.omega_x.push(o.omega_x);
            g.omega_y.push(o.omega_y);
        }
    }
    for m in 0..=lmax {
        g.alf.push(AlfTable::new(m, lmax, &t));
        for (k, &ph) in azimuth.iter().enumerate() {
            g.cos_tab[k * (lmax + 1) + m] = (m as f64 * ph).cos();
            g.sin_tab[k * (lmax + 1) + m] = (m as f64 * ph).sin();
        }
    }
    let mut off = vec![0usize; lmax + 2];
    off[1] = lmax + 1;
    for m in 1..=lmax {
        off[m + 1] = off[m] + 2 * (lmax + 1 - m);
    }
    g.offsets = off;
    Ok(Arc::new(g))
}

/// Real spherical-harmonic slot: degree l, order m, cosine (or m = 0) or sine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Harmonic {
    pub l: usize,
    pub m: usize,
    pub sine: bool,
}

impl SphereGrid {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Number of real harmonics up to degree lmax.
    pub fn ncoef(&self) -> usize {
        (self.lmax + 1) * (self.lmax + 1)
    }

    pub fn coef_index(&self, h: Harmonic) -> usize {
        let cnt = self.lmax + 1 - h.m;
        if h.m == 0 {
            h.l
        } else {
            self.offsets[h.m] + if h.sine { cnt } else { 0 } + h.l - h.m
        }
    }

    pub fn harmonic(&self, idx: usize) -> Harmonic {
        let lm = self.lmax;
        if idx <= lm {
            return Harmonic { l: idx, m: 0, sine: false };
        }
        for m in 1..=lm {
            if idx < self.offsets[m + 1] {
                let cnt = lm + 1 - m;
                let r = idx - self.offsets[m];
                return if r < cnt {
                    Harmonic { l: m + r, m, sine: false }
                } else {
                    Harmonic { l: m + r - cnt, m, sine: true }
                };
            }
        }
        panic!("coefficient index out of range")
    }

    /// Factors turning (∂θf, ∂ϑf/sinθ) into (∂xf, ∂yf) at node i:
    /// ∂xf = a·∂θf + b·∂ϑf/sinθ, ∂yf = c·∂θf + d·∂ϑf/sinθ.
    pub fn chart_factors(&self, i: usize) -> (f64, f64, f64, f64) {
        (self.g_th_x[i], self.g_ph_x[i], self.g_th_y[i], self.g_ph_y[i])
    }

    pub fn node_index(&self, ring: usize, k: usize) -> usize {
        ring * self.nlon + k
    }

    pub fn alf(&self, m: usize) -> &AlfTable {
        &self.alf[m]
    }

    /// Spectral coefficients by the grid quadrature (exact for degree ≤ lmax).
    pub fn analyze(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.len());
        let lm = self.lmax;
        let dphi = 2.0 * PI / self.nlon as f64;
        let mut a = vec![0.0; self.nlat * (lm + 1)];
        let mut b = vec![0.0; self.nlat * (lm + 1)];
        for j in 0..self.nlat {
            let row = &f[j * self.nlon..(j + 1) * self.nlon];
            for m in 0..=lm {
                let (mut sa, mut sb) = (0.0, 0.0);
                for (k, v) in row.iter().enumerate() {
                    sa += v * self.cos_tab[k * (lm + 1) + m];
                    sb += v * self.sin_tab[k * (lm + 1) + m];
                }
                a[j * (lm + 1) + m] = sa * dphi;
                b[j * (lm + 1) + m] = sb * dphi;
            }
        }
        let mut c = vec![0.0; self.ncoef()];
        for m in 0..=lm {
            let tab = &self.alf[m];
            let nm = if m == 0 { 1.0 } else { 2f64.sqrt() };
            for l in m..=lm {
                let (mut sc, mut ss) = (0.0, 0.0);
                for j in 0..self.nlat {
                    let p = tab.val(j, l) * self.ring_w[j];
                    sc += p * a[j * (lm + 1) + m];
                    ss += p * b[j * (lm + 1) + m];
                }
                c[self.coef_index(Harmonic { l, m, sine: false })] = nm * sc;
                if m > 0 {
                    c[self.coef_index(Harmonic { l, m, sine: true })] = nm * ss;
                }
            }
        }
        c
    }

    /// Node values of a band-limited expansion.
    pub fn synthesize(&self, c: &[f64]) -> Vec<f64> {
        self.synth_impl(c, false).0
    }

    /// Node values, chart derivatives and chart Laplacian of an expansion.
    pub fn synthesize_jets(&self, c: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let (val, th, ph, lap) = self.synth_impl(c, true);
        let th = th.unwrap();
        let ph = ph.unwrap();
        let lap = lap.unwrap();
        let mut dx = vec![0.0; self.len()];
        let mut dy = vec![0.0; self.len()];
        let mut lc = vec![0.0; self.len()];
        for i in 0..self.len() {
            dx[i] = th[i] * self.g_th_x[i] + ph[i] * self.g_ph_x[i];
            dy[i] = th[i] * self.g_th_y[i] + ph[i] * self.g_ph_y[i];
            lc[i] = self.mu[i] * self.mu[i] * lap[i];
        }
        (val, dx, dy, lc)
    }

    #[allow(clippy::type_complexity)]
    fn synth_impl(&self, c: &[f64], jets: bool) -> (Vec<f64>, Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
        assert_eq!(c.len(), self.ncoef());
        let lm = self.lmax;
        let nn = self.len();
        let mut val = vec![0.0; nn];
        let mut th = if jets { vec![0.0; nn] } else { Vec::new() };
        let mut ph = if jets { vec![0.0; nn] } else { Vec::new() };
        let mut lap = if jets { vec![0.0; nn] } else { Vec::new() };
        let s2 = 2f64.sqrt();
        for j in 0..self.nlat {
            // per-m ring coefficients: value, θ-derivative, ϑ-derivative/sinθ, Laplacian
            let mut ac = vec![[0.0f64; 4]; lm + 1];
            let mut bs = vec![[0.0f64; 4]; lm + 1];
            for m in 0..=lm {
                let tab = &self.alf[m];
                let nm = if m == 0 { 1.0 } else { s2 };
                for l in m..=lm {
                    let ll = -((l * (l + 1)) as f64);
                    let cc = c[self.coef_index(Harmonic { l, m, sine: false })] * nm;
                    let p = tab.val(j, l);
                    ac[m][0] += cc * p;
                    if jets {
                        ac[m][1] += cc * tab.dth(j, l);
                        ac[m][2] += cc * tab.msin(j, l);
                        ac[m][3] += cc * ll * p;
                    }
                    if m > 0 {
                        let cs = c[self.coef_index(Harmonic { l, m, sine: true })] * nm;
                        bs[m][0] += cs * p;
                        if jets {
                            bs[m][1] += cs * tab.dth(j, l);
                            bs[m][2] += cs * tab.msin(j, l);
                            bs[m][3] += cs * ll * p;
                        }
                    }
                }
            }
            for k in 0..self.nlon {
                let i = j * self.nlon + k;
                let (mut v, mut vt, mut vp, mut vl) = (0.0, 0.0, 0.0, 0.0);
                for m in 0..=lm {
                    let cm = self.cos_tab[k * (lm + 1) + m];
                    let sm = self.sin_tab[k * (lm + 1) + m];
                    v += ac[m][0] * cm + bs[m][0] * sm;
                    if jets {
                        vt += ac[m][1] * cm + bs[m][1] * sm;
                        vp += -ac[m][2] * sm + bs[m][2] * cm;
                        vl += ac[m][3] * cm + bs[m][3] * sm;
                    }
                }
                val[i] = v;
                if jets {
                    th[i] = vt;
                    ph[i] = vp;
                    lap[i] = vl;
                }
            }
        }
        if jets {
            (val, Some(th), Some(ph), Some(lap))
        } else {
            (val, None, None, None)
        }
    }

    /// Evaluate an expansion at an arbitrary chart point: value, chart
    /// derivatives and chart Laplacian.
    pub fn eval_expansion(&self, c: &[f64], x: f64, y: f64) -> Jet<f64> {
        let o = omega_mu(x, y);
        let t = o.omega.z;
        let s = (o.omega.x * o.omega.x + o.omega.y * o.omega.y).sqrt();
        let ph = o.omega.y.atan2(o.omega.x);
        let lm = self.lmax;
        let s2 = 2f64.sqrt();
        let (mut v, mut vt, mut vp, mut vl) = (0.0, 0.0, 0.0, 0.0);
        for m in 0..=lm {
            let p = alf_column(m, lm, t, s);
            let nm = if m == 0 { 1.0 } else { s2 };
            let (cm, sm) = ((m as f64 * ph).cos(), (m as f64 * ph).sin());
            for l in m..=lm {
                let i = l - m;
                let lf = l as f64;
                let prev = if l > m { p[i - 1] } else { 0.0 };
                let cc = ((2.0 * lf + 1.0) * (lf * lf - (m * m) as f64) / (2.0 * lf - 1.0)).max(0.0).sqrt();
                let dth = if s > 0.0 { (lf * t * p[i] - cc * prev) / s } else { 0.0 };
                let msin = if m == 0 || s == 0.0 { 0.0 } else { m as f64 * p[i] / s };
                let ll = -(lf * (lf + 1.0));
                let a = c[self.coef_index(Harmonic { l, m, sine: false })] * nm;
                let b = if m > 0 { c[self.coef_index(Harmonic { l, m, sine: true })] * nm } else { 0.0 };
                v += p[i] * (a * cm + b * sm);
                vt += dth * (a * cm + b * sm);
                vp += msin * (-a * sm + b * cm);
                vl += ll * p[i] * (a * cm + b * sm);
            }
        }
        let e_th = Vec3::new(t * ph.cos(), t * ph.sin(), -s);
        let e_ph = Vec3::new(-ph.sin(), ph.cos(), 0.0);
        let grad = e_th * vt + e_ph * vp;
        Jet { val: v, dx: grad.dot(&o.omega_x), dy: grad.dot(&o.omega_y), lap: o.mu * o.mu * vl }
    }
}

/// Chart derivatives and Laplacian of a sampled field.
#[derive(Clone, Debug)]
pub struct Derivs<T> {
    pub dx: Vec<T>,
    pub dy: Vec<T>,
    pub lap: Vec<T>,
}

/// Sampled field on a grid, optionally with chart derivatives.
#[derive(Clone, Debug)]
pub struct SphereField<T> {
    pub grid: Arc<SphereGrid>,
    pub values: Vec<T>,
    pub derivs: Option<Derivs<T>>,
}

pub type ScalarField = SphereField<f64>;
pub type VectorField = SphereField<Vec3>;

impl<T: FieldValue> SphereField<T> {
    pub fn from_values(grid: &Arc<SphereGrid>, values: Vec<T>) -> Self {
        assert_eq!(values.len(), grid.len());
        SphereField { grid: grid.clone(), values, derivs: None }
    }

    pub fn from_fn<F: Fn(usize) -> T>(grid: &Arc<SphereGrid>, f: F) -> Self {
        Self::from_values(grid, (0..grid.len()).map(f).collect())
    }

    pub fn zeros(grid: &Arc<SphereGrid>) -> Self {
        let z = T::default();
        SphereField { grid: grid.clone(), values: vec![z; grid.len()], derivs: Some(Derivs { dx: vec![z; grid.len()], dy: vec![z; grid.len()], lap: vec![z; grid.len()] }) }
    }

    /// Samples a closed-form map with its analytic derivatives.
    pub fn from_map<M: ChartMap<T> + ?Sized>(grid: &Arc<SphereGrid>, map: &M) -> Self {
        let n = grid.len();
        let mut v = Vec::with_capacity(n);
        let mut dx = Vec::with_capacity(n);
        let mut dy = Vec::with_capacity(n);
        let mut lap = Vec::with_capacity(n);
        for i in 0..n {
            let j = map.jet(grid.x[i], grid.y[i]);
            v.push(j.val);
            dx.push(j.dx);
            dy.push(j.dy);
            lap.push(j.lap);
        }
        SphereField { grid: grid.clone(), values: v, derivs: Some(Derivs { dx, dy, lap }) }
    }

    /// Band-limited field from per-component spectral coefficients, with
    /// spectral derivatives.
    pub fn from_coefs(grid: &Arc<SphereGrid>, coefs: &[Vec<f64>]) -> Self {
        assert_eq!(coefs.len(), T::DIM);
        let n = grid.len();
        let mut parts = Vec::with_capacity(T::DIM);
        for c in coefs {
            parts.push(grid.synthesize_jets(c));
        }
        let build = |sel: &dyn Fn(&(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<T> {
            (0..n)
                .map(|i| {
                    let c: Vec<f64> = parts.iter().map(|p| sel(p)[i]).collect();
                    T::from_comps(&c)
                })
                .collect()
        };
        let values = build(&|p| &p.0);
        let dx = build(&|p| &p.1);
        let dy = build(&|p| &p.2);
        let lap = build(&|p| &p.3);
        SphereField { grid: grid.clone(), values, derivs: Some(Derivs { dx, dy, lap }) }
    }

    /// Spectral coefficients of each component.
    pub fn to_coefs(&self) -> Vec<Vec<f64>> {
        (0..T::DIM)
            .map(|c| {
                let comp: Vec<f64> = self.values.iter().map(|v| v.comp(c)).collect();
                let mut co = self.grid.analyze(&comp);
                // drop pure roundoff so that derivatives of constants stay clean
                let cut = 64.0 * f64::EPSILON * co.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                co.iter_mut().filter(|v| v.abs() < cut).for_each(|v| *v = 0.0);
                co
            })
            .collect()
    }

    pub fn has_derivs(&self) -> bool {
        self.derivs.is_some()
    }

    pub fn jet(&self, i: usize) -> Jet<T> {
        let d = self.derivs.as_ref().expect("field has no derivatives");
        Jet { val: self.values[i], dx: d.dx[i], dy: d.dy[i], lap: d.lap[i] }
    }

    pub fn same_grid<S>(&self, other: &SphereField<S>) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid)
    }

    /// Spectral chart derivatives. Fails when the field is not resolved by
    /// the grid: the out-of-band part on the chart-overlap band exceeds
    /// the mismatch tolerance relative to the field scale.
    pub fn differentiate(&self) -> Result<Self> {
        let coefs = self.to_coefs();
        let out = Self::from_coefs(&self.grid, &coefs);
        let scale = self.values.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
        let mut worst = 0.0f64;
        for i in 0..self.grid.len() {
            let r = self.grid.x[i].hypot(self.grid.y[i]);
            if (1.0 / R_CUT..=R_CUT).contains(&r) {
                worst = worst.max((self.values[i] - out.values[i]).norm());
            }
        }
        if worst > OVERLAP_MISMATCH * scale {
            return Err(Error::TooCoarse(format!("relative chart-overlap mismatch {:.3e}", worst / scale)));
        }
        Ok(SphereField { grid: self.grid.clone(), values: self.values.clone(), derivs: out.derivs })
    }

    /// Like [`SphereField::differentiate`] but also replaces the values by
    /// their band-limited projection.
    pub fn project_bandlimited(&self) -> Self {
        Self::from_coefs(&self.grid, &self.to_coefs())
    }

    /// Derivatives with respect to the inverted chart w = 1/z at node i.
    pub fn inverted_chart_derivatives(&self, i: usize) -> (T, T) {
        let d = self.derivs.as_ref().expect("field has no derivatives");
        let (x, y) = (self.grid.x[i], self.grid.y[i]);
        // z = 1/w, dz/dw = −z²
        let (gr, gi) = (-(x * x - y * y), -(2.0 * x * y));
        (d.dx[i] * gr + d.dy[i] * gi, d.dx[i] * (-gi) + d.dy[i] * gr)
    }

    pub fn map_values<S: FieldValue, F: Fn(usize, T) -> S>(&self, f: F) -> SphereField<S> {
        SphereField::from_values(&self.grid, self.values.iter().enumerate().map(|(i, v)| f(i, *v)).collect())
    }

    pub fn scale(&self, a: f64) -> Self {
        SphereField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| *v * a).collect(),
            derivs: self.derivs.as_ref().map(|d| Derivs {
                dx: d.dx.iter().map(|v| *v * a).collect(),
                dy: d.dy.iter().map(|v| *v * a).collect(),
                lap: d.lap.iter().map(|v| *v * a).collect(),
            }),
        }
    }

    /// Linear combination a·self + b·other; derivatives kept when both have them.
    pub fn axpby(&self, a: f64, other: &Self, b: f64) -> Self {
        assert!(self.same_grid(other));
        let lin = |u: &Vec<T>, v: &Vec<T>| -> Vec<T> { u.iter().zip(v).map(|(p, q)| *p * a + *q * b).collect() };
        SphereField {
            grid: self.grid.clone(),
            values: lin(&self.values, &other.values),
            derivs: match (&self.derivs, &other.derivs) {
                (Some(d), Some(e)) => Some(Derivs { dx: lin(&d.dx, &e.dx), dy: lin(&d.dy, &e.dy), lap: lin(&d.lap, &e.lap) }),
                _ => None,
            },
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

impl ScalarField {
    /// ∫ f μ² dz.
    pub fn integrate(&self) -> f64 {
        integrate_values(&self.grid, &self.values)
    }

    /// Scalar times vector, with the product rule applied to derivatives.
    pub fn times_vec(&self, v: &VectorField) -> VectorField {
        assert!(self.same_grid(v));
        let values = self.values.iter().zip(&v.values).map(|(a, b)| b * *a).collect();
        let derivs = match (&self.derivs, &v.derivs) {
            (Some(d), Some(e)) => {
                let n = self.values.len();
                let mut dx = Vec::with_capacity(n);
                let mut dy = Vec::with_capacity(n);
                let mut lap = Vec::with_capacity(n);
                for i in 0..n {
                    let (f, w) = (self.values[i], v.values[i]);
                    dx.push(e.dx[i] * f + w * d.dx[i]);
                    dy.push(e.dy[i] * f + w * d.dy[i]);
                    lap.push(w * d.lap[i] + (e.dx[i] * d.dx[i] + e.dy[i] * d.dy[i]) * 2.0 + e.lap[i] * f);
                }
                Some(Derivs { dx, dy, lap })
            }
            _ => None,
        };
        SphereField { grid: self.grid.clone(), values, derivs }
    }
}

impl VectorField {
    /// Componentwise ∫ u·v μ² dz.
    pub fn inner(&self, other: &VectorField) -> f64 {
        assert!(self.same_grid(other));
        let g = &self.grid;
        kahan_sum((0..g.len()).map(|i| g.weight[i] * self.values[i].dot(&other.values[i])))
    }

    pub fn component(&self, c: usize) -> ScalarField {
        SphereField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v[c]).collect(),
            derivs: self.derivs.as_ref().map(|d| Derivs {
                dx: d.dx.iter().map(|v| v[c]).collect(),
                dy: d.dy.iter().map(|v| v[c]).collect(),
                lap: d.lap.iter().map(|v| v[c]).collect(),
            }),
        }
    }

    /// Pointwise dot with ω, with derivatives when available.
    pub fn dot_omega(&self) -> ScalarField {
        let g = &self.grid;
        let values: Vec<f64> = (0..g.len()).map(|i| self.values[i].dot(&g.omega[i])).collect();
        let derivs = self.derivs.as_ref().map(|d| {
            let n = g.len();
            let mut dx = Vec::with_capacity(n);
            let mut dy = Vec::with_capacity(n);
            let mut lap = Vec::with_capacity(n);
            for i in 0..n {
                let (v, o) = (self.values[i], g.omega[i]);
                let (ox, oy) = (g.omega_x[i], g.omega_y[i]);
                let ol = o * (-2.0 * g.mu[i] * g.mu[i]);
                dx.push(d.dx[i].dot(&o) + v.dot(&ox));
                dy.push(d.dy[i].dot(&o) + v.dot(&oy));
                lap.push(d.lap[i].dot(&o) + 2.0 * (d.dx[i].dot(&ox) + d.dy[i].dot(&oy)) + v.dot(&ol));
            }
            Derivs { dx, dy, lap }
        });
        SphereField { grid: g.clone(), values, derivs }
    }

    /// The scalar field ∂xu ∧ ∂yu · e, per node (requires derivatives).
    pub fn wedge(&self) -> Vec<Vec3> {
        let d = self.derivs.as_ref().expect("field has no derivatives");
        d.dx.iter().zip(&d.dy).map(|(a, b)| a.cross(b)).collect()
    }
}

/// ∫ f μ² dz for node values.
pub fn integrate_values(grid: &SphereGrid, f: &[f64]) -> f64 {
    assert_eq!(f.len(), grid.len());
    kahan_sum(grid.weight.iter().zip(f).map(|(w, v)| w * v))
}

pub fn integrate(f: &ScalarField) -> f64 {
    f.integrate()
}

pub fn differentiate<T: FieldValue>(f: &SphereField<T>) -> Result<SphereField<T>> {
    f.differentiate()
}

/// The field ω on a grid, with analytic derivatives.
pub fn omega_field(grid: &Arc<SphereGrid>) -> VectorField {
    SphereField::from_map(grid, &Omega)
}

/// Pφ = φ − (φ·ω)ω and the normal component φ·ω.
pub fn project_p(phi: &VectorField) -> (VectorField, ScalarField) {
    let eta = phi.dot_omega();
    let om = omega_field(&phi.grid);
    let normal_part = eta.times_vec(&om);
    let p = phi.axpby(1.0, &normal_part, -1.0);
    (p, eta)
}

/// ‖u‖_∞ (m = 0) or ‖u‖_∞ + ‖μ⁻¹∇u‖_∞ (m = 1).
pub fn cm_norm<T: FieldValue>(u: &SphereField<T>, m: u32) -> Result<f64> {
    let sup = u.sup_norm();
    match m {
        0 => Ok(sup),
        1 => {
            let d = u.derivs.as_ref().ok_or_else(|| Error::Invalid("C¹ norm needs derivatives".into()))?;
            let mut s1 = 0.0f64;
            for i in 0..u.grid.len() {
                let g = (d.dx[i].norm().powi(2) + d.dy[i].norm().powi(2)).sqrt() / u.grid.mu[i];
                s1 = s1.max(g);
            }
            Ok(sup + s1)
        }
        _ => Err(Error::Invalid(format!("only m ∈ {{0, 1}} is supported, got {m}"))),
    }
}

/// Maximum defects of the chart identities over the nodes of a grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentityReport {
    pub n: usize,
    pub nodes: usize,
    pub unit_norm: f64,
    pub conformal: f64,
    pub wedge: f64,
    pub laplacian: f64,
    pub cross_relations: f64,
    pub tangent_fields: f64,
    pub grad_omega3: f64,
    pub max: f64,
}

/// Checks, at every node, |ω| = 1, |∂xω|² = |∂yω|² = μ², ∂xω·∂yω = 0,
/// ∂xω∧∂yω = −μ²ω, Δω = −2μ²ω, ∂xω∧ω = ∂yω, ω∧∂yω = ∂xω, the six
/// expressions of z^h∇ω and iz^h∇ω through e₁, e₂, e₃ and ω, and ∇ω₃ = μ²z.
pub fn identity_suite(grid: &SphereGrid) -> IdentityReport {
    let (e1, e2, e3) = (Vec3::x(), Vec3::y(), Vec3::z());
    let mut r = IdentityReport {
        n: grid.n,
        nodes: grid.len(),
        unit_norm: 0.0,
        conformal: 0.0,
        wedge: 0.0,
        laplacian: 0.0,
        cross_relations: 0.0,
        tangent_fields: 0.0,
        grad_omega3: 0.0,
        max: 0.0,
    };
    for i in 0..grid.len() {
        let (x, y) = (grid.x[i], grid.y[i]);
        let o = omega_mu(x, y);
        let (w, mu, wx, wy) = (o.omega, o.mu, o.omega_x, o.omega_y);
        let m2 = mu * mu;
        r.unit_norm = r.unit_norm.max((w.norm_squared() - 1.0).abs());
        r.conformal = r
            .conformal
            .max((wx.norm_squared() - m2).abs())
            .max((wy.norm_squared() - m2).abs())
            .max(wx.dot(&wy).abs());
        r.wedge = r.wedge.max((wx.cross(&wy) + w * m2).norm());
        r.laplacian = r.laplacian.max((omega_laplacian(x, y) + w * (2.0 * m2)).norm());
        r.cross_relations = r.cross_relations.max((wx.cross(&w) - wy).norm()).max((w.cross(&wy) - wx).norm());
        let z1 = wx * x + wy * y;
        let iz1 = wx * (-y) + wy * x;
        let (a, b) = (x * x - y * y, 2.0 * x * y);
        let z2 = wx * a + wy * b;
        let iz2 = wx * (-b) + wy * a;
        let t = [
            (wx - (e1 - w * w.x - e2.cross(&w))).norm(),
            (wy - (e2 - w * w.y + e1.cross(&w))).norm(),
            (z1 - (e3 - w * w.z)).norm(),
            (iz1 - e3.cross(&w)).norm(),
            (z2 + (e1 - w * w.x + e2.cross(&w))).norm(),
            (iz2 - (e2 - w * w.y - e1.cross(&w))).norm(),
        ];
        r.tangent_fields = t.iter().fold(r.tangent_fields, |a, b| a.max(*b));
        r.grad_omega3 = r.grad_omega3.max((wx.z - m2 * x).abs()).max((wy.z - m2 * y).abs());
    }
    r.max = [r.unit_norm, r.conformal, r.wedge, r.laplacian, r.cross_relations, r.tangent_fields, r.grad_omega3]
        .iter()
        .fold(0.0, |a, b| a.max(*b));
    r
}

/// CSV export: x, y, chart tag, then value components.
pub fn field_to_csv<T: FieldValue>(f: &SphereField<T>) -> String {
    let mut s = String::from("x,y,chart");
    for c in 0..T::DIM {
        let _ = write!(s, ",v{}", c + 1);
    }
    s.push('\n');
    for i in 0..f.grid.len() {
        let tag = match f.grid.tag[i] {
            ChartTag::Main => "main",
            ChartTag::Inverted => "inverted",
        };
        let _ = write!(s, "{:.17e},{:.17e},{}", f.grid.x[i], f.grid.y[i], tag);
        for c in 0..T::DIM {
            let _ = write!(s, ",{:.17e}", f.values[i].comp(c));
        }
        s.push('\n');
    }
    s
}

#[derive(Serialize, Deserialize)]
pub struct FieldDump {
    pub n: usize,
    pub lmax: usize,
    pub dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub chart: Vec<ChartTag>,
    pub values: Vec<Vec<f64>>,
}

pub fn field_to_json<T: FieldValue>(f: &SphereField<T>) -> String {
    let d = FieldDump {
        n: f.grid.n,
        lmax: f.grid.lmax,
        dim: T::DIM,
        x: f.grid.x.clone(),
        y: f.grid.y.clone(),
        chart: f.grid.tag.clone(),
        values: f.values.iter().map(|v| (0..T::DIM).map(|c| v.comp(c)).collect()).collect(),
    };
    serde_json::to_string(&d).expect("serializable")
}

/// Rebuild a field from its JSON dump on a matching grid.
pub fn field_from_json<T: FieldValue>(grid: &Arc<SphereGrid>, s: &str) -> Result<SphereField<T>> {
    let d: FieldDump = serde_json::from_str(s).map_err(|e| Error::Invalid(e.to_string()))?;
    if d.n != grid.n || d.dim != T::DIM || d.values.len() != grid.len() {
        return Err(Error::GridMismatch);
    }
    Ok(SphereField::from_values(grid, d.values.iter().map(|v| T::from_comps(v)).collect()))
}
