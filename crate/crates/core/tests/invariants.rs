use nalgebra::DVector;
use proptest::prelude::*;

use sinkflow::field::{classify_singularity, diag, hopf, lorenz};
use sinkflow::flow::{self, Tolerance};
use sinkflow::pliss::{self, WeightSequence};
use sinkflow::sinks;
use sinkflow::splitting::{self, cone_contains, region_membership, time_grid, ConeKind, ConeSpec, Decomposition};

fn vec3() -> impl Strategy<Value = DVector<f64>> {
    prop::array::uniform3(-1.0f64..1.0)
        .prop_filter("non-zero", |a| a.iter().map(|x| x * x).sum::<f64>() > 1e-6)
        .prop_map(|a| DVector::from_row_slice(&a))
}

#[test]
fn lorenz_origin_eigenvalues_match_closed_form() {
    let (s, r, b) = (10.0f64, 28.0, 8.0 / 3.0);
    let c = classify_singularity(&lorenz(s, r, b), &DVector::zeros(3), 1e-9).unwrap();
    let disc = ((s + 1.0).powi(2) + 4.0 * s * (r - 1.0)).sqrt();
    let mut want = vec![(-(s + 1.0) + disc) / 2.0, -b, (-(s + 1.0) - disc) / 2.0];
    want.sort_by(|a, b| b.total_cmp(a));
    for (z, w) in c.eigenvalues.iter().zip(&want) {
        assert!((z.re - w).abs() < 1e-9 && z.im.abs() < 1e-9, "{z} vs {w}");
    }
    assert!(c.is_hyperbolic);
    assert!(!c.is_sectionally_dissipative);
}

#[test]
fn hopf_certification_is_monotone_in_alpha() {
    let m = hopf(0.5);
    let o = sinks::refine_orbit(&m, &DVector::from_vec(vec![0.72, 0.0]), 6.28, Tolerance::default()).unwrap();
    let certified: Vec<bool> = [0.2, 0.5, 0.9, 0.99, 1.01, 1.5, 3.0]
        .iter()
        .map(|&a| sinks::certify_sink(&m, &o, a, 1.0, 8, 16, Tolerance::default()).unwrap().certified)
        .collect();
    assert_eq!(certified, vec![true, true, true, true, false, false, false]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pliss_bound_decreases_with_gap(c in 0.0f64..10.0, l1 in -2.0f64..2.0, g in 0.01f64..2.0, dg in 0.0f64..1.0) {
        let a = pliss::pliss_bound(c, l1, l1 + g).unwrap();
        let b = pliss::pliss_bound(c, l1, l1 + g + dg).unwrap();
        prop_assert!(b <= a);
        // minimality: C + n l1 < n l2 holds at N and fails just before
        prop_assert!(c + a as f64 * l1 < a as f64 * (l1 + g) + 1e-9);
        if a > 1 {
            let n = (a - 1) as f64;
            prop_assert!(c + n * l1 >= n * (l1 + g) - 1e-9);
        }
    }

    #[test]
    fn tail_offset_sums_stay_below_slope(values in prop::collection::vec(-3.0f64..1.0, 1..120), l2 in -0.5f64..0.5) {
        let seq = WeightSequence::unit(values.clone());
        if let Some(sel) = pliss::find_tail_offset(&seq, l2) {
            let mut s = 0.0;
            for (j, a) in values[sel.offset..].iter().enumerate() {
                s += a;
                prop_assert!(s <= (j + 1) as f64 * l2 + 1e-9);
            }
        }
    }

    #[test]
    fn f_and_e_cones_are_disjoint(v in vec3(), alpha in 0.01f64..0.99, ortho in any::<bool>()) {
        let e = vec![DVector::from_vec(vec![0.0, 1.0, 0.0]), DVector::from_vec(vec![0.0, 0.3, 1.0])];
        let f = DVector::from_vec(vec![1.0, 0.2, 0.0]);
        let mode = if ortho { Decomposition::Orthogonal } else { Decomposition::Oblique };
        let cf = ConeSpec::new(alpha, ConeKind::F).unwrap().with_decomposition(mode);
        let ce = ConeSpec::new(alpha, ConeKind::E).unwrap().with_decomposition(mode);
        let in_f = cone_contains(&cf, &e, &f, &v).unwrap();
        let in_e = cone_contains(&ce, &e, &f, &v).unwrap();
        prop_assert!(!(in_f && in_e));
    }

    #[test]
    fn region_is_monotone(x in vec3(), a in 0.05f64..2.0, b in 0.05f64..1.5, da in 0.0f64..1.0, db in 0.0f64..1.0) {
        let m = lorenz(10.0, 28.0, 8.0 / 3.0);
        let r = splitting::split_at_singularity(&m, &DVector::zeros(3), &time_grid(0.5, 2.0, 8), Tolerance::default()).unwrap();
        let x = x * 0.5;
        if region_membership(&m, &r, a, b, &x, Decomposition::Oblique).unwrap() {
            prop_assert!(region_membership(&m, &r, a + da, b + db, &x, Decomposition::Oblique).unwrap());
        }
    }

    #[test]
    fn frame_flow_second_vector_is_orthogonal(u in vec3(), w in vec3(), t in 0.05f64..1.0) {
        let m = lorenz(10.0, 28.0, 8.0 / 3.0);
        let phi = flow::tangent_flow(&m, &DVector::from_vec(vec![1.0, 2.0, 20.0]), t, Tolerance::default()).unwrap();
        let u = u.normalize();
        let v = &w - &u * u.dot(&w);
        prop_assume!(v.norm() > 1e-3);
        let v = v.normalize();
        let chi = flow::frame_second_component(&phi, &u, &v).unwrap();
        let pu = &phi * &u;
        prop_assert!(chi.dot(&pu).abs() <= 1e-9 * chi.norm().max(1.0) * pu.norm());
    }

    #[test]
    fn linear_domination_fit_recovers_gap(top in -1.0f64..1.0, gap in 0.2f64..3.0, extra in 0.0f64..2.0) {
        let m = diag("d", &[top, top - gap, top - gap - extra]);
        let r = splitting::split_at_singularity(&m, &DVector::zeros(3), &time_grid(0.5, 3.0, 12), Tolerance::default()).unwrap();
        prop_assert!(r.dominated);
        prop_assert!((r.fitted_lambda - gap).abs() <= 1e-3 * gap.max(1.0), "{} vs {}", r.fitted_lambda, gap);
    }
}
