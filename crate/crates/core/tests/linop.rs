use cmc_core::bubble_family::{bubble, make_params, moebius_pullback, tangent_frame, tangent_project, Metric, MoebiusMap};
use cmc_core::linop::*;
use cmc_core::prescribed::HypBump;
use cmc_core::sphere_chart::{build_grid, omega_field, project_p, Harmonic, ScalarField, SphereField, SphereGrid, VectorField};
use cmc_core::{HyperbolicPoint, Vec3};
use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Random band-limited vector field with coefficients decaying in l.
fn random_field(g: &Arc<SphereGrid>, lmax: usize, rng: &mut ChaCha8Rng) -> VectorField {
    let nc = g.ncoef();
    let coefs: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            (0..nc)
                .map(|a| {
                    let h = g.harmonic(a);
                    if h.l <= lmax {
                        rng.gen_range(-1.0..1.0) / (1.0 + h.l as f64)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    SphereField::from_coefs(g, &coefs)
}

fn random_scalar(g: &Arc<SphereGrid>, lmax: usize, rng: &mut ChaCha8Rng) -> ScalarField {
    random_field(g, lmax, rng).component(0)
}

#[test]
fn perturbed_bubble_is_detected() {
    let g = build_grid(12).unwrap();
    let p = make_params(2.0).unwrap();
    let u = bubble(&p, &HyperbolicPoint::e3(), &g);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v = random_field(&g, 3, &mut rng);
    let w = u.axpby(1.0, &v, 0.1);
    let r = j_residual(&w, &Curvature::constant(2.0)).unwrap();
    assert!(r.sup_norm() > 1e-3);
}

#[test]
fn nonpositive_height_is_rejected() {
    let g = build_grid(8).unwrap();
    let u = omega_field(&g);
    assert!(matches!(j_residual(&u, &Curvature::constant(2.0)), Err(cmc_core::Error::Domain(_))));
}

#[test]
fn moebius_pullback_of_bubble_solves() {
    let g = build_grid(24).unwrap();
    let p = make_params(2.0).unwrap();
    let u = bubble(&p, &HyperbolicPoint::new(0.1, 0.0, 1.2).unwrap(), &g);
    let m = MoebiusMap::new(Complex::new(1.0, 0.0), Complex::new(0.2, 0.1), Complex::new(0.0, 0.0), Complex::new(1.0, 0.0)).unwrap();
    let w = moebius_pullback(&u, &m);
    let r = j_residual(&w, &Curvature::constant(2.0)).unwrap();
    assert!(r.sup_norm() <= 1e-6, "{}", r.sup_norm());
}

#[test]
fn linearization_matches_finite_differences() {
    let g = build_grid(12).unwrap();
    let p = make_params(2.0).unwrap();
    let phi = HypBump { center: Vec3::new(0.0, 0.2, 1.1), width: 0.8, amp: 1.0 };
    let curv = Curvature::perturbed(2.0, 0.3, &phi);
    let u = bubble(&p, &HyperbolicPoint::new(0.1, -0.1, 1.1).unwrap(), &g);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let psi = random_field(&g, 4, &mut rng);
    let lin = apply_linearized(&u, &curv, &psi).unwrap();
    let j0 = j_residual(&u, &curv).unwrap();
    let mut errs = Vec::new();
    for h in [1e-3, 1e-4, 1e-5] {
        let jh = j_residual(&u.axpby(1.0, &psi, h), &curv).unwrap();
        let fd = jh.axpby(1.0 / h, &j0, -1.0 / h);
        errs.push(fd.axpby(1.0, &lin, -1.0).sup_norm());
    }
    // first-order decay
    assert!(errs[1] < 0.2 * errs[0] && errs[2] < 0.2 * errs[1], "{errs:?}");
    assert!(errs[2] < 1e-4 * lin.sup_norm().max(1.0), "{errs:?}");
}

#[test]
fn kernel_generators_annihilated_at_several_k() {
    let g = build_grid(16).unwrap();
    for k in [1.5, 2.0, 5.0] {
        let p = make_params(k).unwrap();
        let f = tangent_frame(&p, &g);
        let sys = assemble_linearized(&p, &HyperbolicPoint::e3(), &g);
        for t in &f.generators {
            assert!(sys.apply(t).sup_norm() <= 1e-7, "k={k}");
        }
    }
}

#[test]
fn self_adjoint_on_random_pairs() {
    let g = build_grid(24).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in [1.5, 2.0, 5.0] {
        let p = make_params(k).unwrap();
        let sys = assemble_linearized(&p, &HyperbolicPoint::new(0.3, 0.1, 0.7).unwrap(), &g);
        for _ in 0..5 {
            let a = random_field(&g, 5, &mut rng);
            let b = random_field(&g, 5, &mut rng);
            let d = sys.self_adjoint_defect(&a, &b);
            assert!(d <= 1e-8, "k={k}: {d:e}");
        }
        // whole-block check, including the top harmonics
        assert!(sys.hermitian_defect() <= 1e-8, "k={k}");
    }
}

#[test]
fn split_formulas_match_direct_operator() {
    let g = build_grid(16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in [1.5, 2.0, 5.0] {
        let p = make_params(k).unwrap();
        let r2 = p.r() * p.r();
        for _ in 0..10 {
            let phi = random_field(&g, 5, &mut rng);
            let direct = apply_linearized_bubble(&p, &HyperbolicPoint::e3(), &phi);
            let (pphi, eta) = project_p(&phi);
            let tang = split_tangential(&p, &pphi);
            let norm = split_normal(&p, &eta);
            let scale = direct.sup_norm() * r2;
            for i in 0..g.len() {
                let o = g.omega[i];
                let d = direct.values[i] * r2;
                let dn = d.dot(&o);
                assert!((dn - norm.values[i]).abs() <= 1e-6 * scale, "normal at {i}");
                assert!(((d - o * dn) - tang.values[i]).norm() <= 1e-6 * scale, "tangential at {i}");
            }
        }
    }
}

#[test]
fn normal_operator_examples() {
    let g = build_grid(16).unwrap();
    let p = make_params(2.0).unwrap();
    let op = normal_operator(&p, &g);
    let one = ScalarField::zeros(&g).map_values(|_, _| 1.0).differentiate().unwrap();
    let out = op.apply(&one);
    for i in 0..g.len() {
        let t = g.omega[i].z + 2.0;
        let want = -4.0 * g.mu[i] * g.mu[i] / (t * t * t);
        assert!((out.values[i] - want).abs() < 1e-14);
    }
    let f = tangent_frame(&p, &g);
    // γ₃ ∝ kω₃ + 1
    assert!(op.apply(&f.gamma[2]).sup_norm() <= 1e-7);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let eta = random_scalar(&g, 5, &mut rng);
    let om = omega_field(&g);
    let full = apply_linearized_bubble(&p, &HyperbolicPoint::e3(), &eta.times_vec(&om));
    let sc = op.apply(&eta);
    for i in 0..g.len() {
        let v = full.values[i].dot(&g.omega[i]) * p.r() * p.r();
        assert!((v - sc.values[i]).abs() <= 1e-7 * (1.0 + sc.sup_norm()));
    }
}

#[test]
fn tangential_form_is_nonnegative_and_explicit() {
    let g = build_grid(24).unwrap();
    let p = make_params(2.0).unwrap();
    let f = tangent_frame(&p, &g);
    let rep = tangential_quadratic_form(&p, &f.tau[0]).unwrap();
    assert!(rep.form.abs() <= 1e-7 && rep.explicit.abs() <= 1e-7, "{rep:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let (psi, _) = project_p(&random_field(&g, 4, &mut rng));
        let r = tangential_quadratic_form(&p, &psi).unwrap();
        assert!(r.form >= -1e-8 && r.explicit >= 0.0);
        assert!((r.form - r.explicit).abs() <= 1e-6 * r.explicit.abs().max(1e-12), "{r:?}");
        assert!((r.form - r.b_form).abs() <= 1e-6 * r.explicit.abs().max(1e-12), "{r:?}");
        let r2 = tangential_quadratic_form(&p, &psi.scale(2.0)).unwrap();
        assert!((r2.form - 4.0 * r.form).abs() <= 1e-10 * r.form.abs().max(1.0));
    }
    let bad = random_field(&g, 3, &mut rng);
    assert!(tangential_quadratic_form(&p, &bad).is_err());
}

#[test]
fn rotational_identity_for_tangent_fields() {
    let g = build_grid(24).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for k in [1.5, 2.0, 5.0] {
        let p = make_params(k).unwrap();
        for _ in 0..5 {
            let (psi, _) = project_p(&random_field(&g, 4, &mut rng));
            let (l, r) = b_identity(&p, &psi);
            assert!((l - r).abs() <= 1e-6 * (1.0 + r.abs()), "k={k}: {l} vs {r}");
        }
    }
}

#[test]
fn kernel_dimension_under_refinement() {
    for n in [12, 24] {
        let g = build_grid(n).unwrap();
        for k in [1.5, 5.0] {
            let p = make_params(k).unwrap();
            let sys = assemble_linearized(&p, &HyperbolicPoint::new(0.2, 0.3, 1.5).unwrap(), &g);
            let rep = kernel(&sys, 100.0).unwrap();
            assert_eq!(rep.dimension, 9, "n={n} k={k}");
            let f = tangent_frame(&p, &g);
            assert!(frame_reconstruction_residual(&rep.basis, &f) <= 1e-6);
            for (i, a) in rep.basis.iter().enumerate() {
                for (j, b) in rep.basis.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((a.inner(b) - want).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn spectrum_report_shape() {
    let g = build_grid(16).unwrap();
    let p = make_params(3.0).unwrap();
    let s = spectrum_normal(&p, &g, 8).unwrap();
    assert_eq!(s.eigenvalues.len(), 8);
    assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    assert!(s.residuals.iter().all(|r| *r <= 1e-7));
    assert!((s.eigenvalues[1] - 6.0).abs() < 1e-6);
    assert!(spectrum_normal(&p, &g, 3).is_err());
    let js = serde_json::to_string(&s).unwrap();
    assert!(js.contains("eigenvalues"));
}

fn orthogonal_rhs(g: &Arc<SphereGrid>, p: &cmc_core::bubble_family::CurvatureParams, rng: &mut ChaCha8Rng) -> VectorField {
    let f = tangent_frame(p, g);
    let v = random_field(g, 5, rng);
    tangent_project(&v, &f, Metric::L2).unwrap().remainder
}

#[test]
fn fredholm_solve() {
    let g = build_grid(20).unwrap();
    let p = make_params(2.0).unwrap();
    let basis = SpectralBasis::new(&g);
    let q = HyperbolicPoint::new(0.1, 0.0, 1.3).unwrap();
    let sys = assemble_linearized_dense(&p, &q, &basis);
    let f = tangent_frame(&p, &g);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let v1 = orthogonal_rhs(&g, &p, &mut rng);
    let v2 = orthogonal_rhs(&g, &p, &mut rng);
    let s1 = solve_orthogonal(&sys, &basis, &f, &v1).unwrap();
    let s2 = solve_orthogonal(&sys, &basis, &f, &v2).unwrap();
    let s12 = solve_orthogonal(&sys, &basis, &f, &v1.axpby(1.0, &v2, 1.0)).unwrap();
    assert!(s1.equation_residual <= 1e-8, "{}", s1.equation_residual);
    assert!(s1.constraint_defect <= 1e-10, "{}", s1.constraint_defect);
    assert!(s1.multipliers.iter().all(|m| m.abs() < 1e-8), "{:?}", s1.multipliers);
    let sum = s1.phi.axpby(1.0, &s2.phi, 1.0);
    assert!(sum.axpby(1.0, &s12.phi, -1.0).sup_norm() <= 1e-8);
    let z = solve_orthogonal(&sys, &basis, &f, &VectorField::zeros(&g)).unwrap();
    assert!(z.phi.sup_norm() == 0.0);
    // the solution satisfies the nodal equation in the band it resolves
    let lhs = sys.apply(&s1.phi);
    let lhs_dz: Vec<Vec3> = (0..g.len()).map(|i| lhs.values[i] / (g.mu[i] * g.mu[i])).collect();
    let r = basis.project(&lhs_dz) - basis.project(&v1.values);
    assert!(r.norm() <= 1e-8);
    assert!(solve_orthogonal(&sys, &basis, &f, &f.generators[0]).is_err());
}

#[test]
fn harmonic_layout_round_trip() {
    let g = build_grid(8).unwrap();
    for a in 0..g.ncoef() {
        let h: Harmonic = g.harmonic(a);
        assert_eq!(g.coef_index(h), a);
    }
}

