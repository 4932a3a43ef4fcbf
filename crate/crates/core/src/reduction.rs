//! Finite-dimensional reduction: for fixed (ε, q) solve
//! μ⁻²J_ε(U_q + ν) = Σ ξ_jτ_j + (α·γ)ω with ν orthogonal to the nine kernel
//! generators, then move q until Mξ + Θα = 2c₀∇_qE_ε(U_q + ν) vanishes.
//!
//! ν is band-limited (coefficients per component), the equation is imposed
//! in Galerkin form and the constraints enter a bordered Newton system, so
//! every iterate satisfies them exactly.

use crate::bubble_family::{bubble, c0, tangent_frame, CurvatureParams, TangentFrame};
use crate::energy::{conformality_residual, energy_e, reparametrization_fields};
use crate::error::{Error, Result};
use crate::hyp_geom::{dist, HyperbolicPoint, Vec3};
use crate::linop::{dj_pointwise, j_residual, kernel, assemble_linearized, point_op_from, Curvature, PointOp, SpectralBasis};
use crate::melnikov::{find_critical, Classification, MelnikovResult, QBox};
use crate::prescribed::PrescribedFunction;
use crate::quad::kahan_sum;
use crate::sphere_chart::{cm_norm, SphereGrid, VectorField};
use crate::tolerances::NEWTON_RESIDUAL;
use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReductionConfig {
    pub max_newton: usize,
    /// Stop when the Galerkin residual is below this.
    pub newton_tol: f64,
    pub max_outer: usize,
    /// Stop the q-search when |Mξ + Θα| is below this.
    pub outer_tol: f64,
    /// Relative step for finite differences in q.
    pub fd_step: f64,
    /// |ε| above this is refused (None: no check).
    pub eps_max: Option<f64>,
    pub seeds: usize,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        ReductionConfig { max_newton: 30, newton_tol: NEWTON_RESIDUAL, max_outer: 30, outer_tol: 1e-11, fd_step: 1e-5, eps_max: None, seeds: 8 }
    }
}

/// Everything that depends only on (k, grid).
pub struct ReductionContext {
    pub params: CurvatureParams,
    pub grid: Arc<SphereGrid>,
    pub basis: SpectralBasis,
    pub frame: TangentFrame,
    /// L² coefficients of τ₁…τ₆, γ₁ω, γ₂ω, γ₃ω (one column each).
    pub generators: DMatrix<f64>,
    pub config: ReductionConfig,
}

impl ReductionContext {
    pub fn new(params: &CurvatureParams, grid: &Arc<SphereGrid>, config: ReductionConfig) -> Self {
        let basis = SpectralBasis::new(grid);
        let frame = tangent_frame(params, grid);
        let cols: Vec<DVector<f64>> = frame.generators.iter().map(|g| basis.project(&g.values)).collect();
        let generators = DMatrix::from_columns(&cols);
        ReductionContext { params: *params, grid: grid.clone(), basis, frame, generators, config }
    }

    pub fn dim(&self) -> usize {
        3 * self.basis.ncoef()
    }
}

#[derive(Clone, Debug)]
pub struct ReductionState {
    pub eps: f64,
    pub q: HyperbolicPoint,
    pub nu: VectorField,
    pub nu_coef: DVector<f64>,
    pub xi: [f64; 6],
    pub alpha: [f64; 3],
    /// Galerkin residual of F₁.
    pub residual_norm: f64,
    /// max_j |∫ν·g_j μ²dz| over the nine generators (nodal quadrature).
    pub constraint_defect: f64,
    pub iterations: usize,
}

impl ReductionState {
    pub fn surface(&self, ctx: &ReductionContext) -> VectorField {
        bubble(&ctx.params, &self.q, &ctx.grid).axpby(1.0, &self.nu, 1.0)
    }
}

fn curvature<'a>(k: f64, eps: f64, phi: Option<&'a dyn PrescribedFunction>) -> Result<Curvature<'a>> {
    match phi {
        Some(f) => Ok(Curvature { k, eps, phi: Some(f) }),
        None if eps == 0.0 => Ok(Curvature::constant(k)),
        None => Err(Error::Invalid("ε ≠ 0 needs φ".into())),
    }
}

/// ∫ J(u)·Y dz for every basis function.
fn galerkin_residual(ctx: &ReductionContext, j: &VectorField) -> DVector<f64> {
    let g = &ctx.grid;
    let jd: Vec<Vec3> = (0..g.len()).map(|i| j.values[i] / (g.mu[i] * g.mu[i])).collect();
    ctx.basis.project(&jd)
}

fn jacobian(ctx: &ReductionContext, u: &VectorField, curv: &Curvature) -> Result<DMatrix<f64>> {
    let ops = (0..ctx.grid.len())
        .into_par_iter()
        .map(|i| {
            let (kk, gk) = curv.value_grad(u.values[i])?;
            let uj = u.jet(i);
            Ok(point_op_from(|psi| dj_pointwise(&uj, psi, kk, gk)))
        })
        .collect::<Result<Vec<PointOp>>>()?;
    Ok(ctx.basis.galerkin(&ops, 1.0))
}

fn constraint_defect(ctx: &ReductionContext, nu: &VectorField) -> f64 {
    let g = &ctx.grid;
    ctx.frame
        .generators
        .iter()
        .map(|gen| kahan_sum((0..g.len()).map(|i| g.weight[i] * nu.values[i].dot(&gen.values[i]))).abs())
        .fold(0.0, f64::max)
}

/// Solves the projected problem at fixed (ε, q), warm-started from `warm`.
pub fn correct(ctx: &ReductionContext, eps: f64, q: &HyperbolicPoint, phi: Option<&dyn PrescribedFunction>, warm: Option<&ReductionState>) -> Result<ReductionState> {
    if let Some(m) = ctx.config.eps_max {
        if eps.abs() > m {
            return Err(Error::Invalid(format!("|ε| = {} exceeds ε_max = {m:.3e}", eps.abs())));
        }
    }
    let curv = curvature(ctx.params.k(), eps, phi)?;
    let n = ctx.dim();
    let base = bubble(&ctx.params, q, &ctx.grid);
    let mut c = warm.map(|w| w.nu_coef.clone()).unwrap_or_else(|| DVector::zeros(n));
    let mut lam = DVector::<f64>::zeros(9);
    if let Some(w) = warm {
        lam.rows_mut(0, 6).copy_from_slice(&w.xi);
        lam.rows_mut(6, 3).copy_from_slice(&w.alpha);
    }
    let gm = &ctx.generators;
    let eval = |c: &DVector<f64>, lam: &DVector<f64>| -> Result<(VectorField, DVector<f64>)> {
        let nu = ctx.basis.field(c);
        let u = base.axpby(1.0, &nu, 1.0);
        let j = j_residual(&u, &curv)?;
        Ok((u, galerkin_residual(ctx, &j) - gm * lam))
    };
    let (mut u, mut r) = eval(&c, &lam)?;
    let mut iterations = 0;
    let cons = |c: &DVector<f64>| (gm.transpose() * c).amax();
    while r.norm() > ctx.config.newton_tol || cons(&c) > 1e-14 {
        if iterations >= ctx.config.max_newton {
            return Err(Error::NoConvergence(format!("projected Newton stalled at residual {:.3e} (ε = {eps}, q = {q:?})", r.norm())));
        }
        iterations += 1;
        let a = jacobian(ctx, &u, &curv)?;
        let mut big = DMatrix::zeros(n + 9, n + 9);
        big.view_mut((0, 0), (n, n)).copy_from(&a);
        big.view_mut((0, n), (n, 9)).copy_from(&(-gm));
        big.view_mut((n, 0), (9, n)).copy_from(&gm.transpose());
        let mut rhs = DVector::zeros(n + 9);
        rhs.rows_mut(0, n).copy_from(&(-&r));
        rhs.rows_mut(n, 9).copy_from(&(-(gm.transpose() * &c)));
        let d = big.lu().solve(&rhs).ok_or_else(|| Error::Numeric("singular bordered Jacobian".into()))?;
        let (dc, dl) = (d.rows(0, n).into_owned(), d.rows(n, 9).into_owned());
        let r0 = r.norm();
        let mut t = 1.0;
        loop {
            let cn = &c + &dc * t;
            let ln = &lam + &dl * t;
            match eval(&cn, &ln) {
                Ok((un, rn)) if rn.norm() < r0 || t < 1e-3 || r0 <= ctx.config.newton_tol => {
                    c = cn;
                    lam = ln;
                    u = un;
                    r = rn;
                    break;
                }
                Ok(_) if t >= 1e-3 => t *= 0.5,
                Ok(_) => unreachable!(),
                Err(Error::Domain(_)) if t >= 1e-3 => t *= 0.5,
                Err(e) => return Err(e),
            }
        }
        if dc.norm() * t <= 1e-15 * (1.0 + c.norm()) && r.norm() <= 1e3 * ctx.config.newton_tol {
            break;
        }
    }
    let nu = ctx.basis.field(&c);
    let mut xi = [0.0; 6];
    xi.copy_from_slice(lam.rows(0, 6).as_slice());
    let mut alpha = [0.0; 3];
    alpha.copy_from_slice(lam.rows(6, 3).as_slice());
    let _ = u;
    Ok(ReductionState { eps, q: *q, constraint_defect: constraint_defect(ctx, &nu), nu, nu_coef: c, xi, alpha, residual_norm: r.norm(), iterations })
}

/// The constant matrices of the gradient relation 2c₀∇_qE = Mξ + Θα, read
/// off from 2c₀e₁ = τ₁ − τ₅ + k⁻¹γ₁ω, 2c₀e₂ = τ₂ + τ₆ + k⁻¹γ₂ω and
/// 2c₀U = kr(√2τ₃ + k⁻¹γ₃ω). Note the + on τ₆: with τ₆ = c₀iz²∇ω the
/// translation e₂ carries +τ₆.
pub fn m_matrix(params: &CurvatureParams) -> SMatrix<f64, 3, 6> {
    let s = std::f64::consts::SQRT_2 * params.k() * params.r();
    SMatrix::<f64, 3, 6>::from_row_slice(&[1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, s, 0.0, 0.0, 0.0])
}

pub fn theta_matrix(params: &CurvatureParams) -> Matrix3<f64> {
    let k = params.k();
    Matrix3::from_diagonal(&Vector3::new(k, k, (k * k + 3.0) * params.r()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReducedGradientData {
    pub m: [[f64; 6]; 3],
    pub theta: [f64; 3],
    pub a_eps: [[f64; 6]; 6],
    /// (Mξ + Θα)/(2c₀).
    pub grad_q: [f64; 3],
    /// Central differences of E_ε(U_q + ν_q) in q, when requested.
    pub grad_fd: Option<[f64; 3]>,
    /// max_j |q₃r_kξ_j + Σ_hξ_h∫τ_h·τ^ε_j μ² + Σ_lα_l∫γ_l(ω·τ^ε_j)μ²|.
    pub reparametrization_defect: f64,
    pub a_eps_norm: f64,
}

fn grad_from(ctx: &ReductionContext, s: &ReductionState) -> Vector3<f64> {
    let xi = SMatrix::<f64, 6, 1>::from_row_slice(&s.xi);
    let al = Vector3::from_row_slice(&s.alpha);
    (m_matrix(&ctx.params) * xi + theta_matrix(&ctx.params) * al) / (2.0 * c0())
}

/// τ^ε_j: the reparametrization fields of ν scaled like the frame.
pub fn tau_eps(nu: &VectorField) -> Result<Vec<VectorField>> {
    let c = c0();
    let s = [c, c, c * std::f64::consts::SQRT_2, c * std::f64::consts::SQRT_2, c, c];
    Ok(reparametrization_fields(nu)?.into_iter().zip(s).map(|(f, a)| f.scale(a)).collect())
}

pub fn reduced_gradient(ctx: &ReductionContext, state: &ReductionState, phi: Option<&dyn PrescribedFunction>, with_fd: bool) -> Result<ReducedGradientData> {
    let g = &ctx.grid;
    let grad = grad_from(ctx, state);
    let te = tau_eps(&state.nu)?;
    let mu2 = |f: &VectorField, h: &VectorField| kahan_sum((0..g.len()).map(|i| g.weight[i] * f.values[i].dot(&h.values[i])));
    // b[j][h] = ∫τ_h·τ^ε_j μ², cgam[j][l] = ∫γ_l(ω·τ^ε_j)μ²
    let b: Vec<Vec<f64>> = te.iter().map(|tj| ctx.frame.tau.iter().map(|th| mu2(th, tj)).collect()).collect();
    let cgam: Vec<Vec<f64>> = te.iter().map(|tj| (6..9).map(|l| mu2(&ctx.frame.generators[l], tj)).collect()).collect();
    let th = theta_matrix(&ctx.params);
    let sigma = th.try_inverse().expect("Θ is invertible for k > 1") * m_matrix(&ctx.params);
    let mut a_eps = [[0.0; 6]; 6];
    for j in 0..6 {
        for h in 0..6 {
            a_eps[j][h] = b[j][h] - (0..3).map(|l| sigma[(l, h)] * cgam[j][l]).sum::<f64>();
        }
    }
    let qr = state.q.p3 * ctx.params.r();
    let reparametrization_defect = (0..6)
        .map(|j| (qr * state.xi[j] + (0..6).map(|h| state.xi[h] * b[j][h]).sum::<f64>() + (0..3).map(|l| state.alpha[l] * cgam[j][l]).sum::<f64>()).abs())
        .fold(0.0, f64::max);
    let a_eps_norm = DMatrix::from_fn(6, 6, |i, j| a_eps[i][j]).svd(false, false).singular_values.max();
    let grad_fd = if with_fd { Some(fd_energy_gradient(ctx, state, phi)?) } else { None };
    let m = m_matrix(&ctx.params);
    Ok(ReducedGradientData {
        m: [0, 1, 2].map(|r| [0, 1, 2, 3, 4, 5].map(|c| m[(r, c)])),
        theta: [th[(0, 0)], th[(1, 1)], th[(2, 2)]],
        a_eps,
        grad_q: [grad.x, grad.y, grad.z],
        grad_fd,
        reparametrization_defect,
        a_eps_norm,
    })
}

fn shifted(q: &HyperbolicPoint, j: usize, h: f64) -> Result<HyperbolicPoint> {
    let mut v = q.vec();
    v[j] += h;
    HyperbolicPoint::from_vec(v)
}

/// Central differences of q ↦ E_ε(U_q + ν^ε_q).
pub fn fd_energy_gradient(ctx: &ReductionContext, state: &ReductionState, phi: Option<&dyn PrescribedFunction>) -> Result<[f64; 3]> {
    let h = ctx.config.fd_step * state.q.p3;
    let mut out = [0.0; 3];
    for (j, o) in out.iter_mut().enumerate() {
        let mut e = [0.0; 2];
        for (s, sign) in [1.0, -1.0].iter().enumerate() {
            let qs = shifted(&state.q, j, sign * h)?;
            let st = correct(ctx, state.eps, &qs, phi, Some(state))?;
            e[s] = energy_e(&st.surface(ctx), ctx.params.k(), state.eps, phi)?;
        }
        *o = (e[0] - e[1]) / (2.0 * h);
    }
    Ok(out)
}

/// V′_φ(u)ψ = ∫ u₃⁻³φ(u) ψ·∂xu∧∂yu dz.
pub fn volume_first_variation(u: &VectorField, phi: &dyn PrescribedFunction, psi: &VectorField) -> f64 {
    let g = &u.grid;
    let w = u.wedge();
    kahan_sum((0..g.len()).map(|i| {
        let p = u.values[i];
        g.weight[i] / (g.mu[i] * g.mu[i]) * phi.value(p) / p.z.powi(3) * psi.values[i].dot(&w[i])
    }))
}

/// First variations along e₁, e₂ and u: of V_φ (vanish at solutions with
/// ε ≠ 0) and of E₀ (vanish for every u).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Side1Report {
    pub volume_pairings: [f64; 3],
    pub e0_pairings: [f64; 3],
    pub max_abs: f64,
}

pub fn verify_side1(u: &VectorField, phi: &dyn PrescribedFunction, params: &CurvatureParams) -> Result<Side1Report> {
    let g = &u.grid;
    let e1 = VectorField::from_fn(g, |_| Vec3::x());
    let e2 = VectorField::from_fn(g, |_| Vec3::y());
    let volume_pairings = [volume_first_variation(u, phi, &e1), volume_first_variation(u, phi, &e2), volume_first_variation(u, phi, u)];
    let curv = Curvature::constant(params.k());
    let e0 = |t: &VectorField| crate::energy::first_variation(u, &curv, t);
    let e0_pairings = [e0(&e1)?, e0(&e2)?, e0(u)?];
    let max_abs = volume_pairings.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(Side1Report { volume_pairings, e0_pairings, max_abs })
}

/// Diagnostics of a converged (k + εφ)-bubble.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionReport {
    pub eps: f64,
    pub q: HyperbolicPoint,
    pub outer_iterations: usize,
    pub reduced_gradient: [f64; 3],
    pub xi: [f64; 6],
    pub alpha: [f64; 3],
    pub galerkin_residual: f64,
    /// sup |J_ε(u)| over the nodes (chart form).
    pub full_residual: f64,
    /// sup |μ⁻²J_ε(u)| over the nodes.
    pub full_residual_intrinsic: f64,
    pub constraint_defect: f64,
    pub conformality: f64,
    pub c0_distance: f64,
    pub c1_distance: f64,
    /// c0_distance/|ε| (0 at ε = 0).
    pub c0_ratio: f64,
    pub energy: f64,
    pub energy_bubble: f64,
    pub melnikov_critical_point: Option<HyperbolicPoint>,
    pub distance_to_critical_point: Option<f64>,
    pub side1: Side1Report,
}

#[derive(Clone, Debug)]
pub struct BubbleSolution {
    pub state: ReductionState,
    pub u: VectorField,
    pub report: SolutionReport,
}

/// Newton in q on Mξ(q) + Θα(q) = 0 from q0, with inner corrections.
pub fn solve_from(ctx: &ReductionContext, eps: f64, phi: Option<&dyn PrescribedFunction>, q0: &HyperbolicPoint, warm: Option<&ReductionState>) -> Result<(ReductionState, usize)> {
    let mut state = correct(ctx, eps, q0, phi, warm)?;
    if eps == 0.0 {
        return Ok((state, 0));
    }
    let mut outer = 0;
    loop {
        let gq = grad_from(ctx, &state);
        if gq.norm() <= ctx.config.outer_tol {
            break;
        }
        if outer >= ctx.config.max_outer {
            return Err(Error::NoConvergence(format!("reduced gradient stalled at {:.3e}", gq.norm())));
        }
        outer += 1;
        let h = ctx.config.fd_step * state.q.p3;
        let mut jac = Matrix3::zeros();
        for j in 0..3 {
            let sp = correct(ctx, eps, &shifted(&state.q, j, h)?, phi, Some(&state))?;
            let sm = correct(ctx, eps, &shifted(&state.q, j, -h)?, phi, Some(&state))?;
            jac.set_column(j, &((grad_from(ctx, &sp) - grad_from(ctx, &sm)) / (2.0 * h)));
        }
        let step = jac.try_inverse().ok_or_else(|| Error::Numeric("singular reduced Hessian".into()))? * (-gq);
        // trust region: at most a quarter of the bubble radius per step
        let cap = 0.25 * ctx.params.r() * state.q.p3;
        let step = if step.norm() > cap { step * (cap / step.norm()) } else { step };
        let q1 = HyperbolicPoint::from_vec(state.q.vec() + step)?;
        state = correct(ctx, eps, &q1, phi, Some(&state))?;
    }
    Ok((state, outer))
}

fn report_for(ctx: &ReductionContext, state: &ReductionState, phi: Option<&dyn PrescribedFunction>, outer: usize, crit: Option<&MelnikovResult>) -> Result<(VectorField, SolutionReport)> {
    let k = ctx.params.k();
    let u = state.surface(ctx);
    let curv = curvature(k, state.eps, phi)?;
    let j = j_residual(&u, &curv)?;
    let g = &ctx.grid;
    let full_residual_intrinsic = (0..g.len()).map(|i| j.values[i].norm() / (g.mu[i] * g.mu[i])).fold(0.0, f64::max);
    let c0_distance = state.nu.sup_norm();
    let gq = grad_from(ctx, state);
    let side1 = match phi {
        Some(f) => verify_side1(&u, f, &ctx.params)?,
        None => Side1Report { volume_pairings: [0.0; 3], e0_pairings: [0.0; 3], max_abs: 0.0 },
    };
    let report = SolutionReport {
        eps: state.eps,
        q: state.q,
        outer_iterations: outer,
        reduced_gradient: [gq.x, gq.y, gq.z],
        xi: state.xi,
        alpha: state.alpha,
        galerkin_residual: state.residual_norm,
        full_residual: j.sup_norm(),
        full_residual_intrinsic,
        constraint_defect: state.constraint_defect,
        conformality: conformality_residual(&u)?.sup_abs,
        c0_distance,
        c1_distance: cm_norm(&state.nu, 1)?,
        c0_ratio: if state.eps == 0.0 { 0.0 } else { c0_distance / state.eps.abs() },
        energy: energy_e(&u, k, state.eps, phi)?,
        energy_bubble: energy_e(&bubble(&ctx.params, &state.q, g), k, state.eps, phi)?,
        melnikov_critical_point: crit.map(|c| c.q),
        distance_to_critical_point: crit.map(|c| dist(&c.q, &state.q)),
        side1,
    };
    Ok((u, report))
}

/// Stable critical points of F in the box (nondegenerate Hessian).
pub fn stable_critical_points(ctx: &ReductionContext, phi: &dyn PrescribedFunction, b: &QBox) -> Result<Vec<MelnikovResult>> {
    let all = find_critical(phi, &ctx.params, b, ctx.config.seeds)?;
    let stable: Vec<_> = all.into_iter().filter(|c| c.classification != Classification::Degenerate).collect();
    if stable.is_empty() {
        return Err(Error::NoCriticalPoint("no stable critical point of the reduced function in the box".into()));
    }
    Ok(stable)
}

/// A (k + εφ)-bubble near the first stable critical point of F in the box.
pub fn solve_bubble(ctx: &ReductionContext, eps: f64, phi: &dyn PrescribedFunction, b: &QBox) -> Result<BubbleSolution> {
    let crit = stable_critical_points(ctx, phi, b)?.remove(0);
    let (state, outer) = solve_from(ctx, eps, Some(phi), &crit.q, None)?;
    let (u, report) = report_for(ctx, &state, Some(phi), outer, Some(&crit))?;
    Ok(BubbleSolution { state, u, report })
}

/// Warm-started solves along a schedule; stops at the first failure and
/// returns what was reached together with the error.
pub struct ContinuationResult {
    pub solutions: Vec<BubbleSolution>,
    pub failure: Option<(f64, Error)>,
    pub critical_point: MelnikovResult,
}

pub fn continuation(ctx: &ReductionContext, schedule: &[f64], phi: &dyn PrescribedFunction, b: &QBox) -> Result<ContinuationResult> {
    if schedule.is_empty() {
        return Err(Error::Invalid("empty ε schedule".into()));
    }
    let up = schedule.windows(2).all(|w| w[1].abs() >= w[0].abs());
    let down = schedule.windows(2).all(|w| w[1].abs() <= w[0].abs());
    if !(up || down) || schedule.windows(2).any(|w| w[0] * w[1] < 0.0) {
        return Err(Error::Invalid("ε schedule must be monotone in |ε| with one sign".into()));
    }
    let crit = stable_critical_points(ctx, phi, b)?.remove(0);
    let mut solutions: Vec<BubbleSolution> = Vec::new();
    for &eps in schedule {
        let (q0, warm) = match solutions.last() {
            Some(s) => (s.state.q, Some(&s.state)),
            None => (crit.q, None),
        };
        let step = solve_from(ctx, eps, Some(phi), &q0, warm).and_then(|(st, outer)| {
            let (u, report) = report_for(ctx, &st, Some(phi), outer, Some(&crit))?;
            Ok(BubbleSolution { state: st, u, report })
        });
        match step {
            Ok(s) => solutions.push(s),
            Err(e) => return Ok(ContinuationResult { solutions, failure: Some((eps, e)), critical_point: crit }),
        }
    }
    Ok(ContinuationResult { solutions, failure: None, critical_point: crit })
}

/// Heuristic bound 0.05·gap/‖φ‖_{C¹}: `gap` is the smallest nonzero singular
/// value of J′₀ at the bubble, the norm is sampled over the box lattice
/// widened by the bubble radius.
pub fn eps_max_heuristic(params: &CurvatureParams, grid: &Arc<SphereGrid>, phi: &dyn PrescribedFunction, b: &QBox) -> Result<f64> {
    let sys = assemble_linearized(params, &HyperbolicPoint::e3(), grid);
    let rep = kernel(&sys, crate::tolerances::KERNEL_GAP_FACTOR)?;
    let gap = rep.smallest_singular_values.get(rep.dimension).copied().unwrap_or(0.0);
    let r = params.r();
    let wide = QBox::new([b.lo[0] - r * b.hi[2], b.lo[1] - r * b.hi[2], b.lo[2] * (params.k() * r - r)], [b.hi[0] + r * b.hi[2], b.hi[1] + r * b.hi[2], b.hi[2] * (params.k() * r + r)])?;
    let mut norm = 0.0f64;
    for p in wide.lattice(5) {
        let v = p.vec();
        let gr = phi.gradient(v).unwrap_or_else(Vec3::zeros);
        norm = norm.max(phi.value(v).abs() + gr.norm() * v.z);
    }
    Ok(0.05 * gap / norm.max(1e-300))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubble_family::make_params;
    use crate::sphere_chart::build_grid;

    #[test]
    fn constant_matrices_at_k2() {
        let p = make_params(2.0).unwrap();
        let m = m_matrix(&p);
        assert!((m[(2, 2)] - 2.0 * 2f64.sqrt() / 3f64.sqrt()).abs() < 1e-15);
        let t = theta_matrix(&p);
        assert!((t[(0, 0)] - 2.0).abs() < 1e-15 && (t[(1, 1)] - 2.0).abs() < 1e-15);
        assert!((t[(2, 2)] - 7.0 / 3f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn zero_eps_is_exact_bubble() {
        let g = build_grid(8).unwrap();
        let p = make_params(2.0).unwrap();
        let ctx = ReductionContext::new(&p, &g, ReductionConfig::default());
        let s = correct(&ctx, 0.0, &HyperbolicPoint::new(0.2, 0.0, 1.1).unwrap(), None, None).unwrap();
        assert!(s.iterations <= 1);
        assert!(s.nu.sup_norm() <= 1e-14 && s.xi.iter().chain(&s.alpha).all(|v| v.abs() <= 1e-14));
    }
}
