//! The operator J, its linearization at bubbles and at general surfaces,
//! the split normal/tangential forms, the normal eigenproblem, kernel
//! counting and the constrained (Fredholm) solve.
//!
//! Linear operators act on band-limited vector fields, represented by real
//! spherical-harmonic coefficients per component (index c·ncoef + a). The
//! Galerkin matrix of a pointwise operator 𝒜 is
//! A[(d,b),(c,a)] = ∫ (𝒜(Y_a e_c))_d Y_b dz, so that A is the matrix of
//! the bilinear form (φ, ψ) ↦ ∫ 𝒜φ·ψ dz in an L²(μ²dz)-orthonormal basis.

use crate::bubble_family::{inner, CurvatureParams, Metric, TangentFrame};
use crate::error::{Error, Result};
use crate::hyp_geom::{HyperbolicPoint, Vec3};
use crate::prescribed::PrescribedFunction;
use crate::quad::kahan_sum;
use crate::sphere_chart::{omega_mu, Derivs, Harmonic, Jet, ScalarField, SphereField, SphereGrid, VectorField};
use nalgebra::{Complex, DMatrix, DVector, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

type C64 = Complex<f64>;

/// Mean curvature K(p) = k + εφ(p).
#[derive(Clone, Copy)]
pub struct Curvature<'a> {
    pub k: f64,
    pub eps: f64,
    pub phi: Option<&'a dyn PrescribedFunction>,
}

impl<'a> Curvature<'a> {
    pub fn constant(k: f64) -> Self {
        Curvature { k, eps: 0.0, phi: None }
    }

    pub fn perturbed(k: f64, eps: f64, phi: &'a dyn PrescribedFunction) -> Self {
        Curvature { k, eps, phi: Some(phi) }
    }

    pub fn value(&self, p: Vec3) -> f64 {
        match self.phi {
            Some(f) if self.eps != 0.0 => self.k + self.eps * f.value(p),
            _ => self.k,
        }
    }

    /// K(p) and its Euclidean gradient.
    pub fn value_grad(&self, p: Vec3) -> Result<(f64, Vec3)> {
        match self.phi {
            Some(f) if self.eps != 0.0 => {
                let g = f.gradient(p).ok_or_else(|| Error::Invalid("φ has no gradient evaluator".into()))?;
                Ok((self.k + self.eps * f.value(p), g * self.eps))
            }
            _ => Ok((self.k, Vec3::zeros())),
        }
    }
}

/// J(u) at one point from the jet of u:
/// −u₃⁻²Δu + 2u₃⁻³(∇u₃·∇)u − u₃⁻³|∇u|²e₃ + 2K u₃⁻³ ∂xu∧∂yu.
pub fn j_pointwise(u: &Jet<Vec3>, kk: f64) -> Vec3 {
    let u3 = u.val.z;
    let (i2, i3) = (1.0 / (u3 * u3), 1.0 / (u3 * u3 * u3));
    let g = u.dx * u.dx.z + u.dy * u.dy.z;
    let grad2 = u.dx.norm_squared() + u.dy.norm_squared();
    -u.lap * i2 + g * (2.0 * i3) - Vec3::z() * (grad2 * i3) + u.dx.cross(&u.dy) * (2.0 * kk * i3)
}

fn check_half_space(u: &VectorField) -> Result<()> {
    if let Some(i) = u.values.iter().position(|v| !(v.z > 0.0)) {
        return Err(Error::Domain(format!("third component {} ≤ 0 at node {i}", u.values[i].z)));
    }
    Ok(())
}

/// Nodewise J_ε(u) (chart form, not divided by μ²).
pub fn j_residual(u: &VectorField, curv: &Curvature) -> Result<VectorField> {
    check_half_space(u)?;
    if !u.has_derivs() {
        return Err(Error::Invalid("J needs chart derivatives of u".into()));
    }
    let vals = (0..u.grid.len()).map(|i| j_pointwise(&u.jet(i), curv.value(u.values[i]))).collect();
    Ok(VectorField::from_values(&u.grid, vals))
}

/// Directional derivative of J at u along ψ, pointwise; `kk`, `gk` are K(u)
/// and ∇K(u) at the point.
pub fn dj_pointwise(u: &Jet<Vec3>, psi: &Jet<Vec3>, kk: f64, gk: Vec3) -> Vec3 {
    let u3 = u.val.z;
    let s = psi.val.z;
    let (i2, i3, i4) = (u3.powi(-2), u3.powi(-3), u3.powi(-4));
    let g = u.dx * u.dx.z + u.dy * u.dy.z;
    let grad2 = u.dx.norm_squared() + u.dy.norm_squared();
    let w = u.dx.cross(&u.dy);
    let lap_part = u.lap * (2.0 * i3 * s) - psi.lap * i2;
    let g_part = g * (-6.0 * i4 * s) + (u.dx * psi.dx.z + u.dy * psi.dy.z + psi.dx * u.dx.z + psi.dy * u.dy.z) * (2.0 * i3);
    let e3_part = Vec3::z() * (3.0 * i4 * s * grad2 - 2.0 * i3 * (u.dx.dot(&psi.dx) + u.dy.dot(&psi.dy)));
    let w_part = w * (2.0 * gk.dot(&psi.val) * i3 - 6.0 * kk * i4 * s)
        + (psi.dx.cross(&u.dy) + u.dx.cross(&psi.dy)) * (2.0 * kk * i3);
    lap_part + g_part + e3_part + w_part
}

/// A pointwise linear operator ψ ↦ C₀ψ + C_x∂xψ + C_y∂yψ + C_ΔΔψ.
pub type PointOp = [Matrix3<f64>; 4];

/// Coefficient matrices of a pointwise linear map, read off from unit jets.
pub fn point_op_from<F: Fn(&Jet<Vec3>) -> Vec3>(f: F) -> PointOp {
    let mut op = [Matrix3::zeros(); 4];
    for (slot, m) in op.iter_mut().enumerate() {
        for c in 0..3 {
            let mut e = Vec3::zeros();
            e[c] = 1.0;
            let z = Vec3::zeros();
            let j = match slot {
                0 => Jet { val: e, dx: z, dy: z, lap: z },
                1 => Jet { val: z, dx: e, dy: z, lap: z },
                2 => Jet { val: z, dx: z, dy: e, lap: z },
                _ => Jet { val: z, dx: z, dy: z, lap: e },
            };
            m.set_column(c, &f(&j));
        }
    }
    op
}

pub fn apply_point_op(op: &PointOp, psi: &Jet<Vec3>) -> Vec3 {
    op[0] * psi.val + op[1] * psi.dx + op[2] * psi.dy + op[3] * psi.lap
}

/// r_k²J′₀(U)ψ at the chart point (x, y), with U = r_k(ω + ke₃):
/// −div((ω₃+k)⁻²∇ψ) + 2(ω₃+k)⁻³[∇ψ₃∇ω − (∇ψ·∇ω)e₃ + μ²ψ₃ω + k(∂xψ∧∂yω + ∂xω∧∂yψ)].
pub fn jsimpl_pointwise(x: f64, y: f64, k: f64, psi: &Jet<Vec3>) -> Vec3 {
    let o = omega_mu(x, y);
    let t = o.omega.z + k;
    let (a, b) = (1.0 / (t * t), 1.0 / (t * t * t));
    let m2 = o.mu * o.mu;
    let div = -psi.lap * a + (psi.dx * x + psi.dy * y) * (2.0 * b * m2);
    let bracket = o.omega_x * psi.dx.z + o.omega_y * psi.dy.z - Vec3::z() * (psi.dx.dot(&o.omega_x) + psi.dy.dot(&o.omega_y))
        + o.omega * (m2 * psi.val.z)
        + (psi.dx.cross(&o.omega_y) + o.omega_x.cross(&psi.dy)) * k;
    div + bracket * (2.0 * b)
}

/// Node values of J′(u)ψ for a general surface u.
pub fn apply_linearized(u: &VectorField, curv: &Curvature, psi: &VectorField) -> Result<VectorField> {
    check_half_space(u)?;
    let vals = (0..u.grid.len())
        .map(|i| {
            let (kk, gk) = curv.value_grad(u.values[i])?;
            Ok(dj_pointwise(&u.jet(i), &psi.jet(i), kk, gk))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VectorField::from_values(&u.grid, vals))
}

/// Node values of J′₀(U_q)ψ = q₃⁻² J′₀(U)ψ.
pub fn apply_linearized_bubble(params: &CurvatureParams, q: &HyperbolicPoint, psi: &VectorField) -> VectorField {
    let g = &psi.grid;
    let s = 1.0 / (params.r() * params.r() * q.p3 * q.p3);
    VectorField::from_fn(g, |i| jsimpl_pointwise(g.x[i], g.y[i], params.k(), &psi.jet(i)) * s)
}

/// ∫ f·g dz for node values (weights carry μ², hence the division).
pub fn integrate_dz(grid: &SphereGrid, f: &[Vec3], g: &[Vec3]) -> f64 {
    kahan_sum((0..grid.len()).map(|i| grid.weight[i] / (grid.mu[i] * grid.mu[i]) * f[i].dot(&g[i])))
}

/// Synthesized harmonics: values, chart derivatives and Laplacians at the
/// nodes, one column per real harmonic.
#[derive(Debug)]
pub struct SpectralBasis {
    pub grid: Arc<SphereGrid>,
    pub y: DMatrix<f64>,
    pub dx: DMatrix<f64>,
    pub dy: DMatrix<f64>,
    pub lap: DMatrix<f64>,
}

impl SpectralBasis {
    pub fn new(grid: &Arc<SphereGrid>) -> Self {
        let (n, nc) = (grid.len(), grid.ncoef());
        let cols: Vec<_> = (0..nc)
            .into_par_iter()
            .map(|a| {
                let mut c = vec![0.0; nc];
                c[a] = 1.0;
                grid.synthesize_jets(&c)
            })
            .collect();
        let mk = |sel: &dyn Fn(&(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)) -> &Vec<f64>| {
            DMatrix::from_fn(n, nc, |i, a| sel(&cols[a])[i])
        };
        SpectralBasis { grid: grid.clone(), y: mk(&|c| &c.0), dx: mk(&|c| &c.1), dy: mk(&|c| &c.2), lap: mk(&|c| &c.3) }
    }

    pub fn ncoef(&self) -> usize {
        self.grid.ncoef()
    }

    /// Galerkin matrix of a nodewise operator, scaled by `scale`.
    pub fn galerkin(&self, ops: &[PointOp], scale: f64) -> DMatrix<f64> {
        let g = &self.grid;
        let (n, nc) = (g.len(), self.ncoef());
        assert_eq!(ops.len(), n);
        let wd: Vec<f64> = (0..n).map(|i| scale * g.weight[i] / (g.mu[i] * g.mu[i])).collect();
        let blocks: Vec<((usize, usize), DMatrix<f64>)> = (0..9)
            .into_par_iter()
            .map(|dc| {
                let (d, c) = (dc / 3, dc % 3);
                let mut m = DMatrix::zeros(n, nc);
                for i in 0..n {
                    let (c0, cx, cy, cl) = (ops[i][0][(d, c)], ops[i][1][(d, c)], ops[i][2][(d, c)], ops[i][3][(d, c)]);
                    if c0 == 0.0 && cx == 0.0 && cy == 0.0 && cl == 0.0 {
                        continue;
                    }
                    for a in 0..nc {
                        m[(i, a)] = wd[i]
                            * (c0 * self.y[(i, a)] + cx * self.dx[(i, a)] + cy * self.dy[(i, a)] + cl * self.lap[(i, a)]);
                    }
                }
                ((d, c), self.y.tr_mul(&m))
            })
            .collect();
        let mut a = DMatrix::zeros(3 * nc, 3 * nc);
        for ((d, c), b) in blocks {
            a.view_mut((d * nc, c * nc), (nc, nc)).copy_from(&b);
        }
        a
    }

    /// Coefficients ∫ f·(Y_b e_d) μ²dz.
    pub fn project(&self, f: &[Vec3]) -> DVector<f64> {
        let g = &self.grid;
        let nc = self.ncoef();
        let mut out = DVector::zeros(3 * nc);
        for d in 0..3 {
            let w = DVector::from_fn(g.len(), |i, _| g.weight[i] * f[i][d]);
            out.rows_mut(d * nc, nc).copy_from(&self.y.tr_mul(&w));
        }
        out
    }

    /// Band-limited field with spectral derivatives from stacked coefficients.
    pub fn field(&self, c: &DVector<f64>) -> VectorField {
        let nc = self.ncoef();
        let n = self.grid.len();
        let comp = |m: &DMatrix<f64>, d: usize| m * c.rows(d * nc, nc);
        let mut parts = Vec::new();
        for m in [&self.y, &self.dx, &self.dy, &self.lap] {
            let p: Vec<DVector<f64>> = (0..3).map(|d| comp(m, d)).collect();
            parts.push((0..n).map(|i| Vec3::new(p[0][i], p[1][i], p[2][i])).collect::<Vec<_>>());
        }
        let lap = parts.pop().unwrap();
        let dy = parts.pop().unwrap();
        let dx = parts.pop().unwrap();
        let values = parts.pop().unwrap();
        SphereField { grid: self.grid.clone(), values, derivs: Some(Derivs { dx, dy, lap }) }
    }
}

/// Basis function kinds of an azimuthal block: ψ₃ ∼ P̄e^{iMϑ},
/// ψ₁ + iψ₂ ∼ √2P̄e^{i(M+1)ϑ}, ψ₁ − iψ₂ ∼ √2P̄e^{i(M−1)ϑ}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeKind {
    Vertical,
    Plus,
    Minus,
}

/// One rotation-invariant block of a linearized operator at a bubble.
#[derive(Clone, Debug)]
pub struct ModeBlock {
    pub m: i64,
    pub labels: Vec<(ModeKind, usize)>,
    pub matrix: DMatrix<C64>,
}

fn block_labels(m: i64, lmax: usize) -> Vec<(ModeKind, usize)> {
    let mut v = Vec::new();
    for (kind, mm) in [(ModeKind::Vertical, m), (ModeKind::Plus, m + 1), (ModeKind::Minus, m - 1)] {
        let a = mm.unsigned_abs() as usize;
        for l in a..=lmax {
            v.push((kind, l));
        }
    }
    v
}

/// Complex jet (components) of basis function `lab` of block m on the
/// ϑ = 0 meridian at ring j.
fn block_jet(grid: &SphereGrid, m: i64, lab: (ModeKind, usize), j: usize) -> [[C64; 3]; 4] {
    let (kind, l) = lab;
    let mm = match kind {
        ModeKind::Vertical => m,
        ModeKind::Plus => m + 1,
        ModeKind::Minus => m - 1,
    };
    let am = mm.unsigned_abs() as usize;
    let tab = grid.alf(am);
    let node = grid.node_index(j, 0);
    let (a, b, c, d) = grid.chart_factors(node);
    let p = tab.val(j, l);
    let th = tab.dth(j, l);
    let ph = C64::new(0.0, mm.signum() as f64 * tab.msin(j, l));
    let mu2 = grid.mu[node] * grid.mu[node];
    let f = [C64::new(p, 0.0), th * a + ph * b, th * c + ph * d, C64::new(-((l * (l + 1)) as f64) * p * mu2, 0.0)];
    let z = C64::new(0.0, 0.0);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = [[z; 3]; 4];
    for (slot, fv) in f.iter().enumerate() {
        out[slot] = match kind {
            ModeKind::Vertical => [z, z, *fv],
            // ψ₁ = F/2, ψ₂ = ∓iF/2 with F = √2 f
            ModeKind::Plus => [fv * s, fv * C64::new(0.0, -s), z],
            ModeKind::Minus => [fv * s, fv * C64::new(0.0, s), z],
        };
    }
    out
}

/// Galerkin blocks of a rotation-equivariant pointwise operator given by
/// its coefficients on the ϑ = 0 meridian (one per ring).
pub fn assemble_blocks(grid: &SphereGrid, ops: &[PointOp], scale: f64) -> Vec<ModeBlock> {
    let lmax = grid.lmax as i64;
    ((-lmax - 1)..=(lmax + 1))
        .into_par_iter()
        .map(|m| {
            let labels = block_labels(m, grid.lmax);
            let nb = labels.len();
            // rows: (ring, component ±/3), columns: basis index
            let nr = grid.nlat;
            let mut out = DMatrix::<C64>::zeros(3 * nr, nb);
            let mut test = DMatrix::<C64>::zeros(3 * nr, nb);
            for (col, lab) in labels.iter().enumerate() {
                for j in 0..nr {
                    let jet = block_jet(grid, m, *lab, j);
                    let op = &ops[j];
                    let mut o = [C64::new(0.0, 0.0); 3];
                    for slot in 0..4 {
                        for dd in 0..3 {
                            for cc in 0..3 {
                                o[dd] += jet[slot][cc] * op[slot][(dd, cc)];
                            }
                        }
                    }
                    let node = grid.node_index(j, 0);
                    let wgt = scale * 2.0 * PI * grid.ring_w[j] / (grid.mu[node] * grid.mu[node]);
                    out[(3 * j, col)] = (o[0] + o[1] * C64::i()) * wgt;
                    out[(3 * j + 1, col)] = (o[0] - o[1] * C64::i()) * wgt;
                    out[(3 * j + 2, col)] = o[2] * wgt;
                    // test functions on the meridian are real: (F₊/2, F₋/2, ψ₃) pairing
                    let v = block_jet(grid, m, *lab, j)[0];
                    let tp = v[0] + v[1] * C64::i();
                    let tm = v[0] - v[1] * C64::i();
                    test[(3 * j, col)] = tp.conj() * 0.5;
                    test[(3 * j + 1, col)] = tm.conj() * 0.5;
                    test[(3 * j + 2, col)] = v[2].conj();
                }
            }
            ModeBlock { m, labels, matrix: test.transpose() * out }
        })
        .collect()
}

/// J′₀(U_q) in assembled form.
#[derive(Clone, Debug)]
pub struct LinearizedSystem {
    pub params: CurvatureParams,
    pub q: HyperbolicPoint,
    pub grid: Arc<SphereGrid>,
    pub blocks: Vec<ModeBlock>,
    pub dense: Option<DMatrix<f64>>,
}

fn jsimpl_op(x: f64, y: f64, k: f64) -> PointOp {
    point_op_from(|j| jsimpl_pointwise(x, y, k, j))
}

/// Per-mode assembly of J′₀(U_q) (no dense matrix).
pub fn assemble_linearized(params: &CurvatureParams, q: &HyperbolicPoint, grid: &Arc<SphereGrid>) -> LinearizedSystem {
    let ops: Vec<PointOp> = (0..grid.nlat)
        .map(|j| {
            let i = grid.node_index(j, 0);
            jsimpl_op(grid.x[i], grid.y[i], params.k())
        })
        .collect();
    let scale = 1.0 / (params.r() * params.r() * q.p3 * q.p3);
    LinearizedSystem { params: *params, q: *q, grid: grid.clone(), blocks: assemble_blocks(grid, &ops, scale), dense: None }
}

/// Per-mode and dense assembly of J′₀(U_q).
pub fn assemble_linearized_dense(
    params: &CurvatureParams,
    q: &HyperbolicPoint,
    basis: &SpectralBasis,
) -> LinearizedSystem {
    let grid = &basis.grid;
    let mut sys = assemble_linearized(params, q, grid);
    let ops: Vec<PointOp> = (0..grid.len()).map(|i| jsimpl_op(grid.x[i], grid.y[i], params.k())).collect();
    sys.dense = Some(basis.galerkin(&ops, 1.0 / (params.r() * params.r() * q.p3 * q.p3)));
    sys
}

impl LinearizedSystem {
    /// Node values of J′₀(U_q)ψ.
    pub fn apply(&self, psi: &VectorField) -> VectorField {
        apply_linearized_bubble(&self.params, &self.q, psi)
    }

    /// ∫ J′₀(U_q)φ·ψ dz.
    pub fn form(&self, phi: &VectorField, psi: &VectorField) -> f64 {
        integrate_dz(&self.grid, &self.apply(phi).values, &psi.values)
    }

    /// |∫J′φ·ψ dz − ∫J′ψ·φ dz|.
    pub fn self_adjoint_defect(&self, phi: &VectorField, psi: &VectorField) -> f64 {
        (self.form(phi, psi) - self.form(psi, phi)).abs()
    }

    /// Largest deviation of the blocks from Hermitian, relative to their size.
    pub fn hermitian_defect(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let d = &b.matrix - b.matrix.adjoint();
                d.norm() / b.matrix.norm().max(1e-300)
            })
            .fold(0.0, f64::max)
    }
}

/// Kernel of an assembled operator.
#[derive(Clone, Debug, Serialize)]
pub struct KernelReport {
    pub dimension: usize,
    pub gap: f64,
    pub threshold: f64,
    pub smallest_singular_values: Vec<f64>,
    /// (M, complex dimension) for blocks carrying kernel directions.
    pub mode_dimensions: Vec<(i64, usize)>,
    #[serde(skip)]
    pub basis: Vec<VectorField>,
}

/// Kernel by singular-value gap over all azimuthal blocks. Singular values
/// below 100·ε·σ_max are floored there; the dimension sits at the largest
/// ratio between consecutive sorted values, which must reach `gap_factor`.
pub fn kernel(sys: &LinearizedSystem, gap_factor: f64) -> Result<KernelReport> {
    let svds: Vec<(i64, DVector<f64>, DMatrix<C64>)> = sys
        .blocks
        .par_iter()
        .map(|b| {
            let svd = b.matrix.clone().svd(false, true);
            (b.m, svd.singular_values.clone(), svd.v_t.unwrap())
        })
        .collect();
    let mut all: Vec<(f64, usize, usize)> = Vec::new();
    for (bi, (_, s, _)) in svds.iter().enumerate() {
        for (si, v) in s.iter().enumerate() {
            all.push((*v, bi, si));
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let smax = all.last().map(|a| a.0).unwrap_or(0.0);
    let floor = 100.0 * f64::EPSILON * smax;
    let look = all.len().min(50);
    let mut best = (0.0, 0usize);
    for i in 0..look.saturating_sub(1) {
        let r = all[i + 1].0 / all[i].0.max(floor);
        if r > best.0 {
            best = (r, i + 1);
        }
    }
    let (gap, dim) = best;
    if gap < gap_factor {
        let (lo, hi) = if dim > 0 { (all[dim - 1].0, all[dim].0) } else { (0.0, all.first().map(|a| a.0).unwrap_or(0.0)) };
        return Err(Error::AmbiguousKernel { lo, hi });
    }
    let mut per_block: Vec<Vec<usize>> = vec![Vec::new(); svds.len()];
    for &(_, bi, si) in &all[..dim] {
        per_block[bi].push(si);
    }
    let mut mode_dimensions = Vec::new();
    let mut raw: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut m0: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut m0_dim = 0;
    for (bi, sis) in per_block.iter().enumerate() {
        if sis.is_empty() {
            continue;
        }
        let (m, _, vt) = &svds[bi];
        mode_dimensions.push((*m, sis.len()));
        if *m < 0 {
            continue;
        }
        let labels = &sys.blocks[bi].labels;
        for &si in sis {
            let v: Vec<C64> = vt.row(si).iter().map(|c| c.conj()).collect();
            let (re, im) = block_vector_to_real(&sys.grid, *m, labels, &v);
            if *m == 0 {
                m0.push(re);
                m0.push(im);
                m0_dim += 1;
            } else {
                raw.push(re);
                raw.push(im);
            }
        }
    }
    let mut basis: Vec<VectorField> = raw.iter().map(|c| SphereField::from_coefs(&sys.grid, c)).collect();
    // M = 0: real and imaginary parts span a real space of the complex dimension
    if m0_dim > 0 {
        let fields: Vec<VectorField> = m0.iter().map(|c| SphereField::from_coefs(&sys.grid, c)).collect();
        basis.extend(dominant_span(&fields, m0_dim));
    }
    let basis = orthonormalize(basis);
    Ok(KernelReport {
        dimension: dim,
        gap,
        threshold: all[dim - 1].0,
        smallest_singular_values: all.iter().take(look.min(20)).map(|a| a.0).collect(),
        mode_dimensions,
        basis,
    })
}

/// Real SH coefficients (per component) of the real and imaginary parts of
/// the complex field Σ v_α ψ_α of block m.
pub fn block_vector_to_real(grid: &SphereGrid, m: i64, labels: &[(ModeKind, usize)], v: &[C64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let nc = grid.ncoef();
    let mut re = vec![vec![0.0; nc]; 3];
    let mut im = vec![vec![0.0; nc]; 3];
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut add = |comp: usize, mm: i64, l: usize, c: C64| {
        let am = mm.unsigned_abs() as usize;
        if am == 0 {
            let i = grid.coef_index(Harmonic { l, m: 0, sine: false });
            re[comp][i] += c.re;
            im[comp][i] += c.im;
            return;
        }
        let ic = grid.coef_index(Harmonic { l, m: am, sine: false });
        let is = grid.coef_index(Harmonic { l, m: am, sine: true });
        let sg = mm.signum() as f64;
        // c·P̄e^{iMϑ}, P̄cos = Y_c/√2, P̄sin = Y_s/√2
        re[comp][ic] += c.re * s2;
        re[comp][is] -= sg * c.im * s2;
        im[comp][ic] += c.im * s2;
        im[comp][is] += sg * c.re * s2;
    };
    for (lab, c) in labels.iter().zip(v) {
        let (kind, l) = *lab;
        match kind {
            ModeKind::Vertical => add(2, m, l, *c),
            ModeKind::Plus => {
                add(0, m + 1, l, c * s2);
                add(1, m + 1, l, c * C64::new(0.0, -s2));
            }
            ModeKind::Minus => {
                add(0, m - 1, l, c * s2);
                add(1, m - 1, l, c * C64::new(0.0, s2));
            }
        }
    }
    (re, im)
}

fn dominant_span(fields: &[VectorField], dim: usize) -> Vec<VectorField> {
    let n = fields.len();
    let g = DMatrix::from_fn(n, n, |i, j| fields[i].inner(&fields[j]));
    let eig = g.symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    idx.into_iter()
        .take(dim)
        .map(|e| {
            let mut f = fields[0].scale(0.0);
            for (i, fi) in fields.iter().enumerate() {
                f = f.axpby(1.0, fi, eig.eigenvectors[(i, e)]);
            }
            f
        })
        .collect()
}

/// Modified Gram–Schmidt in L²(μ²dz).
pub fn orthonormalize(fields: Vec<VectorField>) -> Vec<VectorField> {
    let mut out: Vec<VectorField> = Vec::new();
    for f in fields {
        let mut g = f;
        for _ in 0..2 {
            for b in &out {
                let c = g.inner(b);
                g = g.axpby(1.0, b, -c);
            }
        }
        let n = g.inner(&g).sqrt();
        if n > 1e-10 {
            out.push(g.scale(1.0 / n));
        }
    }
    out
}

/// Largest L² distance from a generator of the tangent frame to the span
/// of an orthonormal basis.
pub fn frame_reconstruction_residual(basis: &[VectorField], frame: &TangentFrame) -> f64 {
    frame
        .generators
        .iter()
        .map(|g| {
            let mut r = g.clone();
            for b in basis {
                let c = g.inner(b);
                r = r.axpby(1.0, b, -c);
            }
            r.inner(&r).max(0.0).sqrt() / g.inner(g).sqrt()
        })
        .fold(0.0, f64::max)
}

/// The scalar normal operator
/// η ↦ −div(∇η/(ω₃+k)²) − 2kμ²η/(ω₃+k)³, equal to r_k²(J′₀(U)(ηω))·ω.
#[derive(Clone, Debug)]
pub struct NormalOperator {
    pub params: CurvatureParams,
    pub grid: Arc<SphereGrid>,
}

pub fn normal_operator(params: &CurvatureParams, grid: &Arc<SphereGrid>) -> NormalOperator {
    NormalOperator { params: *params, grid: grid.clone() }
}

/// −div(a∇f) with a = (ω₃+k)⁻², using ∇ω₃ = μ²z.
fn weighted_div_scalar(k: f64, x: f64, y: f64, j: &Jet<f64>) -> f64 {
    let o = omega_mu(x, y);
    let t = o.omega.z + k;
    -j.lap / (t * t) + 2.0 * o.mu * o.mu * (x * j.dx + y * j.dy) / (t * t * t)
}

impl NormalOperator {
    pub fn apply(&self, eta: &ScalarField) -> ScalarField {
        let g = &self.grid;
        let k = self.params.k();
        ScalarField::from_fn(g, |i| {
            let j = eta.jet(i);
            let t = g.omega[i].z + k;
            weighted_div_scalar(k, g.x[i], g.y[i], &j) - 2.0 * k * g.mu[i] * g.mu[i] * j.val / (t * t * t)
        })
    }
}

/// Tangential part by the split formula:
/// P(−div(∇Pφ/(ω₃+k)²)) + 2μ²(ω₃+k)⁻³(iz∇Pφ)∧ω − 2μ²(ω₃+k)⁻²Pφ
/// (equals r_k²P(J′₀(U)φ)); `pphi` must carry derivatives.
pub fn split_tangential(params: &CurvatureParams, pphi: &VectorField) -> VectorField {
    let g = &pphi.grid;
    let k = params.k();
    VectorField::from_fn(g, |i| {
        let (x, y) = (g.x[i], g.y[i]);
        let o = g.omega[i];
        let j = pphi.jet(i);
        let t = o.z + k;
        let m2 = g.mu[i] * g.mu[i];
        let div = -j.lap / (t * t) + (j.dx * x + j.dy * y) * (2.0 * m2 / (t * t * t));
        let pdiv = div - o * div.dot(&o);
        let rot = (j.dx * (-y) + j.dy * x).cross(&o);
        pdiv + rot * (2.0 * m2 / (t * t * t)) - j.val * (2.0 * m2 / (t * t))
    })
}

/// Normal part by the split formula (equals r_k²(J′₀(U)φ)·ω); `eta` = φ·ω
/// with derivatives.
pub fn split_normal(params: &CurvatureParams, eta: &ScalarField) -> ScalarField {
    normal_operator(params, &eta.grid).apply(eta)
}

/// Both sides of the nonnegativity identity for the tangential form.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadraticFormReport {
    /// ∫ J′₀(U)ψ·ψ dz.
    pub form: f64,
    /// r_k⁻² ∫ [(∂xψ·∂xω − ∂yψ·∂yω)² + (∂xψ·∂yω + ∂yψ·∂xω)²]/(μ²(ω₃+k)²) dz.
    pub explicit: f64,
    /// r_k⁻² ∫ (|∇ψ|² + 2ω·∂xψ∧∂yψ − μ²|ψ|²)/(ω₃+k)² dz.
    pub b_form: f64,
    pub difference: f64,
}

pub fn tangential_quadratic_form(params: &CurvatureParams, psi: &VectorField) -> Result<QuadraticFormReport> {
    let g = &psi.grid;
    let off = (0..g.len()).map(|i| psi.values[i].dot(&g.omega[i]).abs()).fold(0.0, f64::max);
    if off > 1e-10 {
        return Err(Error::Invalid(format!("ψ is not pointwise orthogonal to ω (defect {off:e})")));
    }
    let k = params.k();
    let r2 = params.r() * params.r();
    let jp = apply_linearized_bubble(params, &HyperbolicPoint::e3(), psi);
    let form = integrate_dz(g, &jp.values, &psi.values);
    let mut e = Vec::with_capacity(g.len());
    let mut b = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        let j = psi.jet(i);
        let (wx, wy, o) = (g.omega_x[i], g.omega_y[i], g.omega[i]);
        let t = o.z + k;
        let m2 = g.mu[i] * g.mu[i];
        let a1 = j.dx.dot(&wx) - j.dy.dot(&wy);
        let a2 = j.dx.dot(&wy) + j.dy.dot(&wx);
        // node values of the dz-integrands times μ² (weights divide it back out)
        e.push(g.weight[i] * (a1 * a1 + a2 * a2) / (m2 * m2 * t * t));
        let bpsi = j.dx.norm_squared() + j.dy.norm_squared() + 2.0 * o.dot(&j.dx.cross(&j.dy)) - m2 * j.val.norm_squared();
        b.push(g.weight[i] * bpsi / (m2 * t * t));
    }
    let explicit = kahan_sum(e) / r2;
    let b_form = kahan_sum(b) / r2;
    Ok(QuadraticFormReport { form, explicit, b_form, difference: form - explicit })
}

/// Both sides of B_ψ = 2∫ψ·(iz∇ψ)∧ω μ²/(ω₃+k)³ dz
/// = 2∫ω·∂xψ∧∂yψ/(ω₃+k)² dz + ∫|ψ|²μ²/(ω₃+k)² dz.
pub fn b_identity(params: &CurvatureParams, psi: &VectorField) -> (f64, f64) {
    let g = &psi.grid;
    let k = params.k();
    let mut l = Vec::new();
    let mut r = Vec::new();
    for i in 0..g.len() {
        let j = psi.jet(i);
        let o = g.omega[i];
        let t = o.z + k;
        let m2 = g.mu[i] * g.mu[i];
        let (x, y) = (g.x[i], g.y[i]);
        let izg = j.dx * (-y) + j.dy * x;
        l.push(g.weight[i] * 2.0 * j.val.dot(&izg.cross(&o)) / (t * t * t));
        r.push(g.weight[i] * (2.0 * o.dot(&j.dx.cross(&j.dy)) / (m2 * t * t) + j.val.norm_squared() / (t * t)));
    }
    (kahan_sum(l), kahan_sum(r))
}

/// Spectrum of −div(∇η/(ω₃+k)²) = λμ²η/(ω₃+k)³.
#[derive(Clone, Debug, Serialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub multiplicities: Vec<(f64, usize)>,
    pub residuals: Vec<f64>,
    /// Azimuthal order of each eigenpair (cosine and sine partners repeat m).
    pub orders: Vec<usize>,
    #[serde(skip)]
    pub eigenfields: Vec<ScalarField>,
}

pub fn spectrum_normal(params: &CurvatureParams, grid: &Arc<SphereGrid>, count: usize) -> Result<SpectrumReport> {
    if count < 5 {
        return Err(Error::Invalid(format!("spectrum needs count ≥ 5, got {count}")));
    }
    let k = params.k();
    let lmax = grid.lmax;
    let mut pairs: Vec<(f64, usize, DVector<f64>, f64)> = Vec::new();
    for m in 0..=lmax {
        let tab = grid.alf(m);
        let nl = lmax + 1 - m;
        let mut kk = DMatrix::<f64>::zeros(nl, nl);
        let mut mm = DMatrix::<f64>::zeros(nl, nl);
        for j in 0..grid.nlat {
            let t = grid.ring_t[j] + k;
            let (a, b) = (2.0 * PI * grid.ring_w[j] / (t * t), 2.0 * PI * grid.ring_w[j] / (t * t * t));
            for p in 0..nl {
                for q in 0..nl {
                    let (lp, lq) = (m + p, m + q);
                    kk[(p, q)] += a * (tab.dth(j, lp) * tab.dth(j, lq) + tab.msin(j, lp) * tab.msin(j, lq));
                    mm[(p, q)] += b * tab.val(j, lp) * tab.val(j, lq);
                }
            }
        }
        let chol = mm.clone().cholesky().ok_or_else(|| Error::Numeric("mass matrix not positive definite".into()))?;
        let l = chol.l();
        let linv = l.clone().try_inverse().ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
        let c = &linv * &kk * linv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let eig = c.symmetric_eigen();
        for e in 0..nl {
            let lam = eig.eigenvalues[e];
            let v: DVector<f64> = linv.transpose() * eig.eigenvectors.column(e);
            let res = (&kk * &v - &mm * &v * lam).norm() / (1.0 + lam.abs());
            pairs.push((lam, m, v, res));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut report = SpectrumReport { eigenvalues: Vec::new(), multiplicities: Vec::new(), residuals: Vec::new(), orders: Vec::new(), eigenfields: Vec::new() };
    for (lam, m, v, res) in pairs {
        if report.eigenvalues.len() >= count {
            break;
        }
        let reps: &[bool] = if m == 0 { &[false] } else { &[false, true] };
        for &sine in reps {
            if report.eigenvalues.len() >= count {
                break;
            }
            let mut c = vec![0.0; grid.ncoef()];
            for (p, vp) in v.iter().enumerate() {
                c[grid.coef_index(Harmonic { l: m + p, m, sine })] = *vp;
            }
            report.eigenvalues.push(lam);
            report.residuals.push(res);
            report.orders.push(m);
            report.eigenfields.push(SphereField::from_coefs(grid, &[c]));
        }
    }
    for &lam in &report.eigenvalues {
        match report.multiplicities.last_mut() {
            Some((l0, n)) if (lam - *l0).abs() <= 1e-6 * (1.0 + l0.abs()) => *n += 1,
            _ => report.multiplicities.push((lam, 1)),
        }
    }
    Ok(report)
}

/// Star-product functionals φ ↦ (φ, g)_* as rows over stacked coefficients.
fn star_rows(basis: &SpectralBasis, gens: &[VectorField], k: f64) -> DMatrix<f64> {
    let g = &basis.grid;
    let rows: Vec<DVector<f64>> = gens
        .iter()
        .map(|gen| {
            let h: Vec<Vec3> = (0..g.len())
                .map(|i| {
                    let o = g.omega[i];
                    let v = gen.values[i];
                    let vn = v.dot(&o);
                    let t = o.z + k;
                    (v - o * vn) / (t * t) + o * (vn / (t * t * t))
                })
                .collect();
            basis.project(&h)
        })
        .collect();
    DMatrix::from_fn(gens.len(), 3 * basis.ncoef(), |r, c| rows[r][c])
}

#[derive(Clone, Debug)]
pub struct FredholmSolution {
    pub phi: VectorField,
    pub coefficients: DVector<f64>,
    /// ‖A c − v̂‖ for the Galerkin system.
    pub equation_residual: f64,
    /// max |(φ, g)_*| over the nine generators.
    pub constraint_defect: f64,
    pub multipliers: Vec<f64>,
    /// (φ, ω)_*, reported separately.
    pub star_omega: f64,
}

/// Solves J′₀(U_q)φ = vμ² with φ star-orthogonal to the tangent frame,
/// through the bordered system [[A, −G], [S, 0]] (G: generator
/// coefficients, S: star functionals).
pub fn solve_orthogonal(sys: &LinearizedSystem, basis: &SpectralBasis, frame: &TangentFrame, v: &VectorField) -> Result<FredholmSolution> {
    let a = sys.dense.as_ref().ok_or_else(|| Error::Invalid("solve_orthogonal needs the dense assembly".into()))?;
    if !v.same_grid(&frame.generators[0]) || !Arc::ptr_eq(&basis.grid, &v.grid) {
        return Err(Error::GridMismatch);
    }
    let proj = crate::bubble_family::tangent_project(v, frame, Metric::L2)?;
    let off = proj.coefficients.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if off > 1e-8 {
        return Err(Error::Invalid(format!("v is not orthogonal to the tangent space (largest coefficient {off:e})")));
    }
    let n = a.nrows();
    let k = sys.params.k();
    let gcols: Vec<DVector<f64>> = frame.generators.iter().map(|g| basis.project(&g.values)).collect();
    let s = star_rows(basis, &frame.generators, k);
    let mut big = DMatrix::zeros(n + 9, n + 9);
    big.view_mut((0, 0), (n, n)).copy_from(a);
    for (j, gc) in gcols.iter().enumerate() {
        big.view_mut((0, n + j), (n, 1)).copy_from(&(-gc));
    }
    big.view_mut((n, 0), (9, n)).copy_from(&s);
    let rhs_v = basis.project(&v.values);
    let mut rhs = DVector::zeros(n + 9);
    rhs.rows_mut(0, n).copy_from(&rhs_v);
    let lu = big.lu();
    let sol = lu.solve(&rhs).ok_or_else(|| Error::Numeric("singular bordered matrix".into()))?;
    let c = sol.rows(0, n).into_owned();
    let multipliers: Vec<f64> = sol.rows(n, 9).iter().copied().collect();
    let equation_residual = (a * &c - &rhs_v).norm();
    let phi = basis.field(&c);
    let constraint_defect = (&s * &c).amax();
    let om = crate::sphere_chart::omega_field(&v.grid);
    let star_omega = inner(&phi, &om, Metric::Star, k);
    Ok(FredholmSolution { phi, coefficients: c, equation_residual, constraint_defect, multipliers, star_omega })
}
