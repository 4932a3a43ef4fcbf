//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are always printed; exits nonzero if any
//! criterion fails.

use cmc_core::bubble_family::{bubble, make_params, tangent_frame};
use cmc_core::energy::{build_q, energy_curve, horosphere_energy, horosphere_heights, invariance_residuals, volume_v};
use cmc_core::linop::{
    apply_linearized_bubble, assemble_linearized, frame_reconstruction_residual, kernel, spectrum_normal, split_normal, split_tangential,
    tangential_quadratic_form, Curvature,
};
use cmc_core::melnikov::{f_value, find_critical, large_k_asymptotics, monotone_obstruction, QBox};
use cmc_core::prescribed::{Constant, EuclideanNorm, GaussianSum, HypBump, PrescribedFunction};
use cmc_core::reduction::{continuation, ReductionConfig, ReductionContext};
use cmc_core::sphere_chart::{build_grid, identity_suite, project_p, SphereField, SphereGrid, VectorField};
use cmc_core::{HyperbolicPoint, Vec3};
use cmc_hyp::config::{Command, JobConfig, PhiSource};
use cmc_hyp::expr::parse_phi;
use cmc_hyp::run::{run, EXIT_NO_CRITICAL_POINT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use std::time::Instant;

type Outcome = Result<String, String>;

fn hp(a: f64, b: f64, c: f64) -> HyperbolicPoint {
    HyperbolicPoint::new(a, b, c).unwrap()
}

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn random_field(g: &Arc<SphereGrid>, lmax: usize, rng: &mut ChaCha8Rng) -> VectorField {
    let coefs: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            (0..g.ncoef())
                .map(|a| {
                    let l = g.harmonic(a).l;
                    if l <= lmax {
                        rng.gen_range(-1.0..1.0) / (1.0 + l as f64)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    SphereField::from_coefs(g, &coefs)
}

fn c1_identities() -> Outcome {
    let t = Instant::now();
    let g = build_grid(32).map_err(|e| e.to_string())?;
    let r = identity_suite(&g);
    let secs = t.elapsed().as_secs_f64();
    ensure(r.max <= 1e-12 && secs < 1.0, format!("max defect {:.2e} over {} nodes, {secs:.3} s at n = 32", r.max, r.nodes))
}

fn c2_frame() -> Outcome {
    let p = make_params(2.0).unwrap();
    let g = build_grid(24).unwrap();
    let f = tangent_frame(&p, &g);
    let mut gram = 0.0f64;
    for (i, a) in f.tau.iter().enumerate() {
        for (j, b) in f.tau.iter().enumerate() {
            gram = gram.max((a.inner(b) - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let want = [4.0, 4.0, 7.0];
    let gam: Vec<f64> = f.gamma.iter().map(|c| c.map_values(|_, v| v * v).integrate()).collect();
    let gd = gam.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(gram <= 1e-8 && gd <= 1e-8, format!("τ Gram defect {gram:.2e}; ∫γ²μ² = {gam:.10?} (defect {gd:.2e})"))
}

fn c3_spectrum() -> Outcome {
    let p = make_params(2.0).unwrap();
    let mut msg = String::new();
    let mut ok = true;
    for (n, tol) in [(32, 1e-3), (64, 1e-4)] {
        let g = build_grid(n).unwrap();
        let s = spectrum_normal(&p, &g, 8).map_err(|e| e.to_string())?;
        let ev = &s.eigenvalues;
        let scale = ev.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let l0 = ev[0].abs() / scale;
        let triple = ev[1..4].iter().map(|l| (l - 4.0).abs() / 4.0).fold(0.0, f64::max);
        // simple: the next eigenvalue is well away from zero
        let simple = ev[1] > 1.0;
        ok &= l0 <= 1e-8 && simple && triple <= tol && ev[4] > 4.0;
        msg += &format!("n={n}: |λ₀|/scale {l0:.1e}, triple rel {triple:.1e}, λ₄ = {:.6}; ", ev[4]);
    }
    ensure(ok, msg)
}

fn c4_kernel() -> Outcome {
    let mut ok = true;
    let mut worst_gap = f64::INFINITY;
    let mut worst_rec = 0.0f64;
    for n in [24, 32, 48] {
        let g = build_grid(n).unwrap();
        for k in [1.5, 2.0, 5.0] {
            let p = make_params(k).unwrap();
            let sys = assemble_linearized(&p, &HyperbolicPoint::e3(), &g);
            let rep = kernel(&sys, 100.0).map_err(|e| format!("n={n} k={k}: {e}"))?;
            let rec = frame_reconstruction_residual(&rep.basis, &tangent_frame(&p, &g));
            ok &= rep.dimension == 9 && rep.gap >= 100.0 && rec <= 1e-6;
            worst_gap = worst_gap.min(rep.gap);
            worst_rec = worst_rec.max(rec);
            if rep.dimension != 9 {
                return Err(format!("n={n} k={k}: dimension {}", rep.dimension));
            }
        }
    }
    ensure(ok, format!("dimension 9 everywhere, smallest gap {worst_gap:.2e}, worst reconstruction {worst_rec:.2e}"))
}

fn c5_split() -> Outcome {
    let g = build_grid(16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let p = make_params(2.0).unwrap();
    let r2 = p.r() * p.r();
    let mut split = 0.0f64;
    for _ in 0..50 {
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
            split = split.max((dn - norm.values[i]).abs() / scale).max(((d - o * dn) - tang.values[i]).norm() / scale);
        }
    }
    let g24 = build_grid(24).unwrap();
    let mut herm = 0.0f64;
    for k in [1.5, 2.0, 5.0] {
        herm = herm.max(assemble_linearized(&make_params(k).unwrap(), &HyperbolicPoint::e3(), &g24).hermitian_defect());
    }
    let (mut min_form, mut rel) = (f64::INFINITY, 0.0f64);
    for _ in 0..20 {
        let (psi, _) = project_p(&random_field(&g24, 4, &mut rng));
        let r = tangential_quadratic_form(&p, &psi).map_err(|e| e.to_string())?;
        min_form = min_form.min(r.form);
        rel = rel.max((r.form - r.explicit).abs() / r.explicit.abs().max(1e-300));
    }
    ensure(
        split <= 1e-6 && herm <= 1e-8 && min_form >= -1e-8 && rel <= 1e-6,
        format!("split vs direct {split:.1e} (50 fields); Hermitian defect {herm:.1e}; min tangential form {min_form:.3e}; form vs explicit {rel:.1e}"),
    )
}

fn c6_energy() -> Outcome {
    let g = build_grid(48).unwrap();
    let mut worst = 0.0f64;
    for (k, t) in [(2.0, 2.0), (2.0, 1.1), (3.0, 1.5)] {
        let pts = energy_curve(k, &[t], &g).map_err(|e| e.to_string())?;
        let exact = horosphere_energy(k, t).unwrap();
        worst = worst.max(((pts[0].energy - exact) / exact).abs());
    }
    let ts = horosphere_heights(1.5, 1.01, 24).unwrap();
    let curve = energy_curve(2.0, &ts, &g).map_err(|e| e.to_string())?;
    let monotone = curve.windows(2).all(|w| w[1].energy < w[0].energy);
    let last = curve.last().unwrap().energy;
    ensure(worst <= 1e-6 && monotone && last < -100.0, format!("worst relative error {worst:.1e}; curve decreasing as t ↓ 1.01, reaching {last:.3}"))
}

fn random_gaussians(rng: &mut ChaCha8Rng) -> GaussianSum {
    let terms = (0..3)
        .map(|_| (rng.gen_range(-1.0..1.0), Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(0.7..1.5)), rng.gen_range(0.4..1.2)))
        .collect();
    GaussianSum { offset: rng.gen_range(-0.5..0.5), terms }
}

fn c7_melnikov() -> Outcome {
    let p = make_params(2.0).unwrap();
    let want = std::f64::consts::PI * (4.0 / 3.0 - 3f64.ln());
    let mut vals = vec![];
    for q in [hp(0.0, 0.0, 1.0), hp(-1.0, 0.5, 0.4), hp(2.0, -3.0, 2.5), hp(0.3, 0.3, 7.0)] {
        vals.push(f_value(&Constant(1.0), &p, &q).map_err(|e| e.to_string())?);
    }
    let err = vals.iter().map(|v| (v - want).abs()).fold(0.0, f64::max);
    let spread = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max) - vals.iter().copied().fold(f64::INFINITY, f64::min);
    let g = build_grid(24).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut fv = 0.0f64;
    for _ in 0..5 {
        let phi = random_gaussians(&mut rng);
        let q = hp(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(0.7..1.4));
        let v = volume_v(&build_q(&phi, 1.0).unwrap(), &bubble(&p, &q, &g)).map_err(|e| e.to_string())?;
        fv = fv.max((v + f_value(&phi, &p, &q).unwrap()).abs());
    }
    let phi = random_gaussians(&mut rng);
    let rep = large_k_asymptotics(&phi, &hp(0.1, 0.0, 1.0), &[5.0, 10.0, 20.0]).map_err(|e| e.to_string())?;
    let decreasing = rep.defects.windows(2).all(|w| w[1] < w[0]);
    let fit = rep.ks.iter().zip(&rep.defects).all(|(k, d)| *d <= 2.0 * rep.fitted_c / k);
    ensure(
        err <= 1e-8 && spread <= 1e-10 && fv <= 1e-6 && decreasing && fit,
        format!("F(φ≡1) = {:.10} (err {err:.1e}, spread {spread:.1e}); |F + V| ≤ {fv:.1e}; large-k defects {}, fitted C/k with C = {:.3}", vals[0], rep.defects.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>().join(" > "), rep.fitted_c),
    )
}

fn c8_invariance() -> Outcome {
    let g = build_grid(24).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let phi = HypBump::unit(Vec3::new(0.1, -0.2, 1.1));
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = make_params(rng.gen_range(1.5..4.0)).unwrap();
        let q = hp(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(0.8..1.5));
        let s = 0.05 * p.r() * q.p3;
        let coefs: Vec<Vec<f64>> = (0..3).map(|_| (0..g.ncoef()).map(|a| if g.harmonic(a).l <= 4 { rng.gen_range(-s..s) } else { 0.0 }).collect()).collect();
        let u = bubble(&p, &q, &g).axpby(1.0, &SphereField::from_coefs(&g, &coefs), 1.0);
        let r0 = invariance_residuals(&u, &Curvature::constant(2.0)).map_err(|e| e.to_string())?;
        let r1 = invariance_residuals(&u, &Curvature::perturbed(2.0, 0.3, &phi)).map_err(|e| e.to_string())?;
        worst = r0.reparametrization.iter().chain(&r0.translations).chain(&r1.reparametrization).fold(worst, |a, b| a.max(b.abs()));
    }
    ensure(worst <= 1e-7, format!("max first variation {worst:.1e} over 20 random surfaces (n = 24)"))
}

fn c9_end_to_end() -> Outcome {
    let t = Instant::now();
    let p = make_params(2.0).unwrap();
    let g = build_grid(24).unwrap();
    let ctx = ReductionContext::new(&p, &g, ReductionConfig::default());
    let phi = parse_phi("exp(-hypdist(0, 0, 1)^2)").map_err(|e| e.to_string())?;
    let b = QBox::around(&hp(0.0, 0.0, 1.0), 0.3).unwrap();
    let run = continuation(&ctx, &[0.02, 0.01, 0.005], &phi, &b).map_err(|e| e.to_string())?;
    if let Some((eps, e)) = &run.failure {
        return Err(format!("ε = {eps}: {e}"));
    }
    let mut ok = true;
    let mut lines = vec![];
    let mut ratios = vec![];
    for s in &run.solutions {
        let r = &s.report;
        let nat = r.xi.iter().chain(&r.alpha).fold(0.0f64, |a, b| a.max(b.abs()));
        let dq = (s.state.q.vec() - Vec3::new(0.0, 0.0, 1.0)).norm();
        ok &= r.full_residual <= 1e-8 && nat <= 1e-8 && r.conformality <= 1e-6 && dq <= 5.0 * r.eps;
        ratios.push(r.c0_ratio);
        lines.push(format!("ε={}: res {:.1e}, ξα {nat:.1e}, conf {:.1e}, |q−e₃| {dq:.2e}, C⁰/ε {:.4}", r.eps, r.full_residual, r.conformality, r.c0_ratio));
    }
    let bounded = ratios.iter().copied().fold(0.0, f64::max) <= 1.1 * ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let secs = t.elapsed().as_secs_f64();
    ensure(ok && bounded && secs < 600.0, format!("{}; {secs:.1} s", lines.join("; ")))
}

fn c10_obstruction() -> Outcome {
    let p = make_params(2.0).unwrap();
    let cases: [(&str, Arc<dyn PrescribedFunction>, [f64; 6], usize); 2] = [
        ("p1", Arc::new(parse_phi("p1").unwrap()), [-0.5, 0.5, -0.5, 0.5, 0.8, 1.5], 0),
        ("sqrt(p1^2 + p2^2 + p3^2)", Arc::new(EuclideanNorm), [1.0, 2.0, 1.0, 2.0, 0.8, 1.5], 2),
    ];
    let mut msgs = vec![];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (i, (text, phi, bx, signed)) in cases.iter().enumerate() {
        let b = QBox::new([bx[0], bx[2], bx[4]], [bx[1], bx[3], bx[5]]).unwrap();
        let ob = monotone_obstruction(phi.as_ref(), &p, &b, 4).map_err(|e| e.to_string())?;
        let crit = find_critical(phi.as_ref(), &p, &b, 8).map_err(|e| e.to_string())?;
        let cfg = JobConfig {
            command: Some(Command::Solve),
            phi: Some(PhiSource::Expr(text.to_string())),
            qbox: *bx,
            grid_n: 12,
            out: dir.path().join(format!("case{i}")),
            ..Default::default()
        };
        let out = run(&cfg);
        let sign = ob.directions[*signed].uniform_sign;
        if !(ob.obstructed && sign != 0 && crit.is_empty() && out.code == EXIT_NO_CRITICAL_POINT) {
            return Err(format!("φ = {text}: obstructed {} sign {sign} critical points {} exit {}", ob.obstructed, crit.len(), out.code));
        }
        msgs.push(format!("φ = {text}: {} (sign {sign:+}), no critical points, solve exits {}", ob.messages.join(", "), out.code));
    }
    Ok(msgs.join("; "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("identity suite", c1_identities),
        ("frame constants", c2_frame),
        ("normal spectrum", c3_spectrum),
        ("nondegeneracy", c4_kernel),
        ("split formulas and self-adjointness", c5_split),
        ("horosphere energy", c6_energy),
        ("reduced function", c7_melnikov),
        ("invariance identities", c8_invariance),
        ("end-to-end continuation", c9_end_to_end),
        ("nonexistence obstruction", c10_obstruction),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let res = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        match res {
            Ok(m) => println!("criterion {:>2} PASS  {name}: {m}", i + 1),
            Err(m) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {m}", i + 1)
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
