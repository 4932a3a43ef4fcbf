use cmc_core::bubble_family::{bubble, make_params, moebius_pullback, MoebiusMap};
use cmc_core::energy::*;
use cmc_core::hyp_geom::{ball_volume, translate, translate_vec};
use cmc_core::linop::Curvature;
use cmc_core::melnikov::*;
use cmc_core::prescribed::*;
use cmc_core::sphere_chart::{build_grid, Omega, SphereField, SphereGrid, VectorField};
use cmc_core::{HyperbolicPoint, Vec3};
use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn bump() -> HypBump {
    HypBump::unit(Vec3::new(0.0, 0.0, 1.0))
}

fn smooth_phi() -> GaussianSum {
    GaussianSum { offset: 0.3, terms: vec![(1.0, Vec3::new(0.2, -0.1, 1.2), 0.9), (-0.4, Vec3::new(-0.5, 0.3, 0.8), 0.6)] }
}

fn random_surface(g: &Arc<SphereGrid>, rng: &mut ChaCha8Rng) -> VectorField {
    let p = make_params(rng.gen_range(1.5..4.0)).unwrap();
    let q = HyperbolicPoint::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(0.8..1.5)).unwrap();
    let u = bubble(&p, &q, g);
    let nc = g.ncoef();
    let coefs: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..nc).map(|a| if g.harmonic(a).l <= 4 { rng.gen_range(-0.05..0.05) * p.r() * q.p3 } else { 0.0 }).collect())
        .collect();
    u.axpby(1.0, &SphereField::from_coefs(g, &coefs), 1.0)
}

#[test]
fn divergence_of_q() {
    let phi = smooth_phi();
    let q = build_q(&phi, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let p = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.3..3.0));
        let d = q.divergence_fd(p, 1e-4 * p.z).unwrap();
        let want = phi.value(p) / p.z.powi(3);
        assert!((d - want).abs() <= 1e-6 * (1.0 + want.abs()), "{d} {want}");
    }
}

#[test]
fn volume_of_bubble_and_gauge() {
    let g = build_grid(24).unwrap();
    let p = make_params(2.0).unwrap();
    let u = bubble(&p, &HyperbolicPoint::new(0.3, 0.1, 1.7).unwrap(), &g);
    let one = Constant(1.0);
    let v = volume_v(&build_q(&one, 1.0).unwrap(), &u).unwrap();
    assert!((v + ball_volume(p.rho())).abs() <= 1e-6, "{v}");
    let phi = smooth_phi();
    let v1 = volume_v(&build_q(&phi, 1.0).unwrap(), &u).unwrap();
    let v2 = volume_v(&build_q(&phi, 2.0).unwrap(), &u).unwrap();
    assert!((v1 - v2).abs() <= 1e-8);
    assert_eq!(volume_v(&build_q(&Constant(0.0), 1.0).unwrap(), &u).unwrap(), 0.0);
}

#[test]
fn volume_equals_minus_melnikov() {
    let g = build_grid(24).unwrap();
    for k in [1.5, 2.0, 4.0] {
        let p = make_params(k).unwrap();
        for q in [HyperbolicPoint::e3(), HyperbolicPoint::new(0.4, -0.3, 0.8).unwrap()] {
            let u = bubble(&p, &q, &g);
            for phi in [&smooth_phi() as &dyn PrescribedFunction, &bump()] {
                let v = volume_v(&build_q(phi, 1.0).unwrap(), &u).unwrap();
                let f = f_value(phi, &p, &q).unwrap();
                assert!((v + f).abs() <= 1e-6, "k={k}: {v} vs {f}");
            }
        }
    }
}

#[test]
fn horosphere_energies() {
    let g = build_grid(48).unwrap();
    for (k, t) in [(2.0, 2.0), (2.0, 1.1), (3.0, 1.5)] {
        let e = energy_e(&horosphere_field(&g, t), k, 0.0, None).unwrap();
        let c = horosphere_energy(k, t).unwrap();
        assert!((e - c).abs() <= 1e-6 * c.abs(), "({k},{t}): {e} vs {c}");
    }
    assert!((horosphere_energy(2.0, 2.0).unwrap() - 4.0 * std::f64::consts::PI * (3f64.ln() - 1.0)).abs() < 1e-12);
    assert!((horosphere_energy(2.0, 2.0).unwrap() - 1.2391986).abs() < 1e-7);
    let ts = [1.05, 1.01, 1.001];
    let es: Vec<f64> = ts.iter().map(|t| horosphere_energy(2.0, *t).unwrap()).collect();
    assert!(es[0] > es[1] && es[1] > es[2]);
    let curve = energy_curve(2.0, &horosphere_heights(1.5, 1.01, 6).unwrap(), &g).unwrap();
    assert!(curve.windows(2).all(|w| w[1].energy < w[0].energy));
    assert!(energy_curve_csv(&curve).lines().count() == 7);
}

#[test]
fn perturbed_energy_of_bubbles() {
    let g = build_grid(24).unwrap();
    let p = make_params(2.0).unwrap();
    let phi = bump();
    let e0 = energy_e(&bubble(&p, &HyperbolicPoint::e3(), &g), 2.0, 0.0, None).unwrap();
    for q in [HyperbolicPoint::new(0.2, 0.0, 1.3).unwrap(), HyperbolicPoint::new(-0.4, 0.5, 0.7).unwrap()] {
        let u = bubble(&p, &q, &g);
        let eps = 0.05;
        let e = energy_e(&u, 2.0, eps, Some(&phi)).unwrap();
        let f = f_value(&phi, &p, &q).unwrap();
        assert!((e - (e0 - 2.0 * eps * f)).abs() <= 1e-6);
    }
}

#[test]
fn first_variation_matches_energy_differences() {
    let g = build_grid(16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let phi = smooth_phi();
    let (k, eps) = (2.0, 0.2);
    let curv = Curvature::perturbed(k, eps, &phi);
    let u = random_surface(&g, &mut rng);
    let nc = g.ncoef();
    let coefs: Vec<Vec<f64>> = (0..3).map(|_| (0..nc).map(|a| if g.harmonic(a).l <= 3 { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect()).collect();
    let t = SphereField::from_coefs(&g, &coefs);
    let fv = first_variation(&u, &curv, &t).unwrap();
    let mut errs = Vec::new();
    for h in [1e-2, 5e-3, 2.5e-3] {
        let ep = energy_e(&u.axpby(1.0, &t, h), k, eps, Some(&phi)).unwrap();
        let em = energy_e(&u.axpby(1.0, &t, -h), k, eps, Some(&phi)).unwrap();
        errs.push(((ep - em) / (2.0 * h) - fv).abs());
    }
    // second order: halving h cuts the error by about four
    assert!(errs[1] < 0.35 * errs[0] && errs[2] < 0.35 * errs[1], "{errs:?}");
}

#[test]
fn invariances_at_random_surfaces() {
    let g = build_grid(24).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let phi = smooth_phi();
    for _ in 0..5 {
        let u = random_surface(&g, &mut rng);
        let r0 = invariance_residuals(&u, &Curvature::constant(2.0)).unwrap();
        assert!(r0.reparametrization.iter().all(|v| v.abs() <= 1e-7), "{r0:?}");
        assert!(r0.translations.iter().all(|v| v.abs() <= 1e-7), "{r0:?}");
        let r1 = invariance_residuals(&u, &Curvature::perturbed(2.0, 0.3, &phi)).unwrap();
        assert!(r1.reparametrization.iter().all(|v| v.abs() <= 1e-7), "{r1:?}");
    }
}

#[test]
fn translation_pairings_are_melnikov_derivatives() {
    // E′(U_q)e_j = −2ε∂_{q_j}F and E′(U_q)U_q = −2ε q·∇F
    let g = build_grid(24).unwrap();
    let p = make_params(2.0).unwrap();
    let phi = smooth_phi();
    let eps = 0.1;
    let q = HyperbolicPoint::new(0.1, 0.2, 1.1).unwrap();
    let u = bubble(&p, &q, &g);
    let r = invariance_residuals(&u, &Curvature::perturbed(2.0, eps, &phi)).unwrap();
    let gf = f_gradient(&phi, &p, &q).unwrap();
    assert!((r.translations[0] + 2.0 * eps * gf.x).abs() <= 1e-6);
    assert!((r.translations[1] + 2.0 * eps * gf.y).abs() <= 1e-6);
    assert!((r.translations[2] + 2.0 * eps * q.vec().dot(&gf)).abs() <= 1e-6);
    let r0 = invariance_residuals(&u, &Curvature::constant(2.0)).unwrap();
    assert!(r0.translations.iter().all(|v| v.abs() <= 1e-6));
}

#[test]
fn conformality_examples() {
    let g = build_grid(16).unwrap();
    let stretched = VectorField::from_map(&g, &StretchedOmega);
    let shifted = SphereField { values: stretched.values.iter().map(|v| v + Vec3::z() * 3.0).collect(), ..stretched };
    assert!(conformality_residual(&shifted).unwrap().sup_abs >= 0.1);
    let p = make_params(2.0).unwrap();
    let u = bubble(&p, &HyperbolicPoint::e3(), &g);
    let m = MoebiusMap::new(Complex::new(1.0, 0.0), Complex::new(0.3, 0.0), Complex::new(0.1, 0.0), Complex::new(1.0, 0.0)).unwrap();
    let w = moebius_pullback(&u, &m);
    let c = conformality_residual(&w).unwrap();
    assert!(c.sup_abs <= 1e-8, "{}", c.sup_abs);
}

struct StretchedOmega;

impl cmc_core::sphere_chart::ChartMap<Vec3> for StretchedOmega {
    fn jet(&self, x: f64, y: f64) -> cmc_core::sphere_chart::Jet<Vec3> {
        let j = Omega.jet(2.0 * x, y);
        // only first derivatives enter the residual
        cmc_core::sphere_chart::Jet { val: j.val, dx: j.dx * 2.0, dy: j.dy, lap: Vec3::zeros() }
    }
}

#[test]
fn melnikov_constant_and_invariance() {
    let p = make_params(2.0).unwrap();
    let want = std::f64::consts::PI * (4.0 / 3.0 - 3f64.ln());
    assert!((want - 0.7373979).abs() < 1e-7);
    let mut vals = Vec::new();
    for a in [-1.0, 0.0, 1.0] {
        for b in [-1.0, 0.0, 1.0] {
            for c in [0.5, 1.0, 2.0] {
                let f = f_value(&Constant(1.0), &p, &HyperbolicPoint::new(a, b, c).unwrap()).unwrap();
                assert!((f - want).abs() <= 1e-8);
                vals.push(f);
            }
        }
    }
    let spread = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max) - vals.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(spread <= 1e-10, "{spread}");
    let g = f_gradient(&Constant(1.0), &p, &HyperbolicPoint::e3()).unwrap();
    assert!(g.norm() <= 1e-10);
}

#[test]
fn affine_shift() {
    let p = make_params(2.0).unwrap();
    let phi = Affine { a: Vec3::x(), b: 0.0 };
    let q = HyperbolicPoint::new(0.2, 0.1, 1.3).unwrap();
    let d = 0.37;
    let q2 = HyperbolicPoint::new(0.2 + d, 0.1, 1.3).unwrap();
    let diff = f_value(&phi, &p, &q2).unwrap() - f_value(&phi, &p, &q).unwrap();
    let vol = f_value(&Constant(1.0), &p, &q).unwrap();
    assert!((diff - d * vol).abs() <= 1e-8);
}

#[test]
fn gradient_matches_differences() {
    let p = make_params(2.5).unwrap();
    let phi = smooth_phi();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let q = HyperbolicPoint::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..2.0)).unwrap();
        let g = f_gradient(&phi, &p, &q).unwrap();
        let h = 1e-5 * q.p3;
        let mut fd = Vec3::zeros();
        for j in 0..3 {
            let mut e = Vec3::zeros();
            e[j] = h;
            let a = f_value(&phi, &p, &HyperbolicPoint::from_vec(q.vec() + e).unwrap()).unwrap();
            let b = f_value(&phi, &p, &HyperbolicPoint::from_vec(q.vec() - e).unwrap()).unwrap();
            fd[j] = (a - b) / (2.0 * h);
        }
        assert!((g - fd).norm() <= 1e-6f64.max(1e-4 * g.norm()), "{g:?} {fd:?}");
    }
}

#[test]
fn hyperbolic_equivariance() {
    let p = make_params(2.0).unwrap();
    let phi: Phi = Arc::new(smooth_phi());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..5 {
        let t = HyperbolicPoint::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..2.0)).unwrap();
        let q = HyperbolicPoint::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..2.0)).unwrap();
        let composed = Translated { inner: phi.clone(), q: t.vec() };
        // F^{φ∘T}(T⁻¹q) = F^φ(q)
        let tinv_q = cmc_core::hyp_geom::translate(&q, &cmc_core::hyp_geom::inverse(&t));
        let a = f_value(phi.as_ref(), &p, &q).unwrap();
        let b = f_value(&composed, &p, &tinv_q).unwrap();
        assert!((a - b).abs() <= 1e-8, "{a} {b}");
        assert!((translate_vec(tinv_q.vec(), &t) - q.vec()).norm() < 1e-12);
        let _ = translate(&q, &t);
    }
}

#[test]
fn large_k_defect_decreases() {
    let phi = smooth_phi();
    let rep = large_k_asymptotics(&phi, &HyperbolicPoint::new(0.1, 0.0, 1.0).unwrap(), &[5.0, 10.0, 20.0]).unwrap();
    assert!(rep.defects[0] > rep.defects[1] && rep.defects[1] > rep.defects[2], "{rep:?}");
    for (k, d) in rep.ks.iter().zip(&rep.defects) {
        assert!(*d <= 2.0 * rep.fitted_c / k, "{rep:?}");
    }
}

#[test]
fn critical_point_of_radial_function() {
    let p = make_params(2.0).unwrap();
    let phi = HypDistSq { center: Vec3::new(0.0, 0.0, 1.0) };
    let b = QBox::around(&HyperbolicPoint::new(0.0, 0.0, 1.0).unwrap(), 0.4).unwrap();
    let res = find_critical(&phi, &p, &b, 6).unwrap();
    assert_eq!(res.len(), 1, "{res:?}");
    let c = &res[0];
    assert!((c.q.vec() - Vec3::new(0.0, 0.0, 1.0)).norm() <= 1e-8, "{:?}", c.q);
    assert_eq!(c.classification, Classification::NondegenerateMin);
}

#[test]
fn no_critical_points_for_monotone_data() {
    let p = make_params(2.0).unwrap();
    let b = QBox::new([-0.5, -0.5, 0.8], [0.5, 0.5, 1.5]).unwrap();
    let lin = Affine { a: Vec3::x(), b: 0.0 };
    assert!(find_critical(&lin, &p, &b, 8).unwrap().is_empty());
    let ob = monotone_obstruction(&lin, &p, &b, 3).unwrap();
    assert!(ob.obstructed && ob.directions[0].uniform_sign == 1);
    let b2 = QBox::new([1.0, 1.0, 0.8], [2.0, 2.0, 1.5]).unwrap();
    let norm = EuclideanNorm;
    assert!(find_critical(&norm, &p, &b2, 8).unwrap().is_empty());
    let ob2 = monotone_obstruction(&norm, &p, &b2, 3).unwrap();
    assert!(ob2.directions[2].uniform_sign == 1);
    let ob3 = monotone_obstruction(&Constant(1.0), &p, &b, 3).unwrap();
    assert!(!ob3.obstructed);
}

#[test]
fn constant_data_is_degenerate() {
    let p = make_params(2.0).unwrap();
    let b = QBox::around(&HyperbolicPoint::e3(), 0.3).unwrap();
    let res = find_critical(&Constant(1.0), &p, &b, 3).unwrap();
    assert!(!res.is_empty());
    assert!(res.iter().all(|r| r.classification == Classification::Degenerate));
}

#[test]
fn scan_rows() {
    let p = make_params(2.0).unwrap();
    let b = QBox::new([-0.5, -0.5, 0.8], [0.5, 0.5, 1.5]).unwrap();
    let rows = scan(&bump(), &p, &b, 2).unwrap();
    assert_eq!(rows.len(), 8);
    assert_eq!(scan_csv(&rows).lines().count(), 9);
}
