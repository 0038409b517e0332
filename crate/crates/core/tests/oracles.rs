mod common;

use common::*;
use nestlab::kneading::{conjugacy_check, straighten, Conjugacy};
use nestlab::maps::MapFamily;
use nestlab::scan::{parameter_window, scan_range, Budgets, ParamWindow};
use rayon::prelude::*;

#[test]
fn branch_tables_match_grid_oracle() {
    let sample = recurrent_sample(20);
    let results: Vec<_> = sample.par_iter().map(|(a, nest)| (*a, compare_tables(&quadratic(*a), nest, 1e-7))).collect();
    for (a, r) in results {
        assert!(r.is_ok(), "a = {a}: {:?}", r.unwrap_err());
    }
}

#[test]
fn first_window_matches_grid_scan() {
    for base in [1.62, 1.68, 1.7951, 1.9, 1.95] {
        let w = parameter_window(MapFamily::Quadratic, &[base], 1, 1e-9).unwrap();
        let (lo, hi) = grid_window(base, 1, 2.5e-4, 1000).unwrap();
        assert!((w.interval.0 - lo).abs() <= 1e-6 && (w.interval.1 - hi).abs() <= 1e-6, "base {base}: {:?} vs ({lo}, {hi})", w.interval);
    }
}

#[test]
fn straighten_perturbed_regression() {
    let f = MapFamily::PerturbedQuadratic.instance(&[1.8, 0.05]).unwrap();
    let s = straighten(&f, 60, 1e-12).unwrap();
    assert!((s.a_star - 1.949_127_717_501_568).abs() < 1e-9, "{}", s.a_star);
    let q = MapFamily::Quadratic.instance(&[s.a_star]).unwrap();
    match conjugacy_check(&f, &q, 30).unwrap() {
        Conjugacy::AgreeToDepth => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn scan_is_independent_of_worker_count() {
    let w = ParamWindow::parse(MapFamily::PerturbedQuadratic, "a=1.5:2,eps=0").unwrap();
    let b = Budgets::default();
    let one = scan_range(&w, 64, &b, 42, 1).unwrap();
    assert_eq!(one, scan_range(&w, 64, &b, 42, 4).unwrap());
    assert_eq!(one, scan_range(&w, 64, &b, 42, 8).unwrap());
}
