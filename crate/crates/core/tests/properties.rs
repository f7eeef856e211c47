use std::sync::Arc;

use pgd_certify::adapt::dorfler;
use pgd_certify::disc::Discretization;
use pgd_certify::equil::fe_equilibrium_residual;
use pgd_certify::estimate::{At, Certificate};
use pgd_certify::fem::SpaceOperators;
use pgd_certify::pgd::{extend, SeparatedSolution};
use pgd_certify::time::TimeGrid;
use pgd_certify::{Problem, ProblemSpec};
use proptest::prelude::*;

fn small_1d(elements: usize, steps: usize, k: f64, scale: f64) -> Problem {
    let json = format!(
        r#"{{"domain": {{"kind": "interval", "length": 1.0, "elements": {elements}, "dirichlet": ["left"], "neumann": ["right"]}},
            "time": {{"horizon": 1.0, "steps": {steps}}},
            "coefficients": {{"k": {{"base": {k}, "factors": {{"k": {{"expr": "p"}}}}}}}},
            "loads": [{{"alpha": {{"expr": "t"}}, "body": {scale}}}, {{"alpha": 1.0, "flux": [{{"tags": ["right"], "density": {}}}]}}],
            "parameters": [{{"name": "k", "range": [1, 5], "count": 4}}]}}"#,
        0.5 * scale
    );
    Problem::new(ProblemSpec::from_json_str(&json).unwrap()).unwrap()
}

fn certified(p: &Problem, m: usize) -> (Discretization, Certificate) {
    let disc = Discretization::base(p).unwrap();
    let mut sol = SeparatedSolution::default();
    extend(p, &disc, &mut sol, m).unwrap();
    let cert = Certificate::new(p, &disc, &sol).unwrap();
    (disc, cert)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn case_files_round_trip(name in prop::sample::select(vec!["beam1d.json", "thermal2d.json", "empty.json"])) {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases").join(name);
        let spec = ProblemSpec::from_file(&path).unwrap();
        let back = ProblemSpec::from_json_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        prop_assert_eq!(spec, back);
    }

    #[test]
    fn operators_stay_symmetric_on_refined_meshes(marks in prop::collection::vec(any::<bool>(), 16), seed in 0u64..1000) {
        let p = Problem::new(ProblemSpec::from_json_str(
            r#"{"domain": {"kind": "quads", "cell": [0.25, 0.25], "cells": [4, 4], "dirichlet": ["left"], "neumann": ["right", "top", "bottom"]},
                "time": {"steady": true}, "coefficients": {"k": {"base": 1.0}}, "loads": [{"body": 1.0}]}"#).unwrap()).unwrap();
        let base = Discretization::base(&p).unwrap();
        let mesh = base.mesh().refine(&marks).unwrap();
        let ops = SpaceOperators::new(&p, Arc::new(mesh)).unwrap();
        let n = ops.k.to_dense().nrows();
        let v = |s: u64| -> Vec<f64> { (0..n).map(|i| ((i as u64 * 7919 + s) % 97) as f64 / 97.0 - 0.5).collect() };
        let (x, y) = (v(seed), v(seed + 31));
        for a in [&ops.k, &ops.m] {
            let (xy, yx) = (a.quad(&x, &y), a.quad(&y, &x));
            prop_assert!((xy - yx).abs() <= 1e-12 * (1.0 + xy.abs()));
            prop_assert!(a.quad(&x, &x) > 0.0);
        }
    }

    #[test]
    fn error_splits_add_up(elements in 2usize..8, steps in 2usize..6, k in 0.5f64..3.0, m in 1usize..4) {
        let p = small_1d(elements, steps, k, 1.0);
        let (_, cert) = certified(&p, m);
        for b in cert.sweep(&p, None).rows {
            let s = b.e2.abs().max(1e-300);
            prop_assert!((b.eta_pgd2 + b.eta_dis2 - b.e2).abs() <= 1e-12 * s);
            prop_assert!((b.eta_h2 + b.eta_dt2 - b.eta_dis2).abs() <= 1e-12 * s);
            prop_assert!(b.e2 >= 0.0);
        }
    }

    #[test]
    fn bound_scales_quadratically_with_the_load(elements in 2usize..8, steps in 2usize..6, s in 0.1f64..10.0) {
        let (_, a) = certified(&small_1d(elements, steps, 1.0, 1.0), 2);
        let p = small_1d(elements, steps, 1.0, s);
        let (_, b) = certified(&p, 2);
        for i in 0..4 {
            let (ea, eb) = (a.e2(&p, At::Grid(&[i])), b.e2(&p, At::Grid(&[i])));
            prop_assert!((eb - s * s * ea).abs() <= 1e-8 * eb.abs().max(1e-300), "{} vs {}", eb, s * s * ea);
        }
    }

    #[test]
    fn fe_fluxes_are_equilibrated(elements in 2usize..8, steps in 2usize..6, t in 0.0f64..1.0, i in 0usize..4) {
        let p = small_1d(elements, steps, 1.0, 1.0);
        let (disc, cert) = certified(&p, 3);
        let r = fe_equilibrium_residual(&p, &disc, &cert.lifted, &cert.fe, t, &p.grid_point(&[i]));
        prop_assert!(r <= 1e-10, "residual {}", r);
    }

    #[test]
    fn dorfler_marks_a_minimal_bulk(local in prop::collection::vec(0.0f64..1.0, 1..40), theta in 0.05f64..0.95) {
        let marks = dorfler(&local, theta);
        let total: f64 = local.iter().sum();
        let marked: f64 = local.iter().zip(&marks).filter(|(_, &m)| m).map(|(v, _)| v).sum();
        prop_assert!(marked >= theta * total - 1e-12);
        // Dropping the smallest marked value must break the bulk criterion.
        let smallest = local.iter().zip(&marks).filter(|(_, &m)| m).map(|(v, _)| *v).fold(f64::INFINITY, f64::min);
        if total > 0.0 {
            prop_assert!(marked - smallest < theta * total + 1e-12);
        }
    }

    #[test]
    fn pinned_projection_keeps_moments(steps in 1usize..12, a in -2.0f64..2.0, w in 0.5f64..6.0) {
        let grid = TimeGrid::uniform(1.5, steps).unwrap();
        let g = |t: f64| a + (w * t).sin();
        let v = grid.project_pinned(&g, &[]);
        prop_assert_eq!(v[0], 0.0);
        let want = grid.moments(&g, &[]);
        let got = grid.mass_apply(&v);
        for n in 1..want.len() {
            prop_assert!((want[n] - got[n]).abs() <= 1e-12, "node {}: {} vs {}", n, want[n], got[n]);
        }
    }
}
