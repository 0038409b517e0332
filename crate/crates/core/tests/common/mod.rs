//! Brute-force oracles shared by the integration suites and the acceptance run.
#![allow(dead_code)]

use nestlab::maps::MapFamily;
use nestlab::nest::{build_nest, Nest, NestBudget};
use nestlab::scan::{window_budget, window_signature, WindowSignature};
use nestlab::MapInstance;
use rayon::prelude::*;

pub const ORACLE_POINTS: usize = 1_000_000;
pub const MIN_BRANCH_FRACTION: f64 = 1e-4;
pub const RETURN_CAP: usize = 4000;

pub fn quadratic(a: f64) -> MapInstance {
    MapFamily::Quadratic.instance(&[a]).unwrap()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleBranch {
    pub lo: f64,
    pub hi: f64,
    pub r: usize,
}

/// First return time to `(-p, p)` and the returned point.
pub fn first_return(m: &MapInstance, x: f64, p: f64) -> Option<(usize, f64)> {
    let mut y = x;
    for i in 1..=RETURN_CAP {
        y = m.value(y);
        if y.abs() < p {
            return Some((i, y));
        }
    }
    None
}

/// Non-central branches of the first return map to `(-p, p)` inside `(0, p)`,
/// found by scanning `ORACLE_POINTS` grid points and splitting wherever the
/// return time changes, the returned point jumps, or its direction flips.
/// Runs that cannot reach `min_len` are dropped; the rest have their boundaries
/// located by bisection between the bracketing grid points.
pub fn grid_branches(m: &MapInstance, p: f64, min_len: f64) -> Vec<OracleBranch> {
    let n = ORACLE_POINTS;
    let x = |i: usize| if i == n { p } else { p * i as f64 / n as f64 };
    let data: Vec<Option<(usize, f64)>> = (0..n).into_par_iter().map(|i| first_return(m, x(i), p)).collect();
    let same = |i: usize, dir: f64| -> bool {
        match (data[i], data[i + 1]) {
            (Some((r0, y0)), Some((r1, y1))) => r0 == r1 && (y1 - y0).abs() < p && (dir == 0.0 || (y1 - y0) * dir > 0.0),
            _ => false,
        }
    };
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    let mut dir = 0.0;
    for i in 0..n - 1 {
        if data[i].is_some() && same(i, dir) {
            if dir == 0.0 {
                dir = (data[i + 1].unwrap().1 - data[i].unwrap().1).signum();
            }
            continue;
        }
        runs.push((start, i));
        start = i + 1;
        dir = 0.0;
    }
    runs.push((start, n - 1));
    runs.into_iter()
        .filter(|&(s, e)| s > 0 && data[s].is_some() && x(e + 1) - x(s - 1) >= min_len)
        .map(|(s, e)| {
            let (r, _) = data[s].unwrap();
            let in_branch = |z: f64, anchor: f64| match first_return(m, z, p) {
                Some((rz, yz)) => rz == r && (yz - anchor).abs() < p,
                None => false,
            };
            let edge = |inside: f64, outside: f64| {
                let anchor = first_return(m, inside, p).unwrap().1;
                let (mut a, mut b) = (inside, outside);
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    if mid == a || mid == b {
                        break;
                    }
                    if in_branch(mid, anchor) {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                a
            };
            OracleBranch { lo: edge(x(s), x(s - 1)), hi: edge(x(e), x(e + 1)), r }
        })
        .collect()
}

/// Nest with enumerated branch tables on levels 1 and 2.
pub fn two_level_nest(m: &MapInstance) -> Option<Nest<f64>> {
    let budget =
        NestBudget { max_levels: 2, min_branch_fraction: MIN_BRANCH_FRACTION, max_return_time: RETURN_CAP, ..NestBudget::default() };
    let nest = build_nest::<f64>(m, &budget).ok()?;
    (nest.levels.len() >= 2).then_some(nest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableMismatch {
    pub level: usize,
    pub detail: String,
}

/// Compares the positive half of a level's table with the oracle: equal counts
/// above the length cut-off, boundaries within `tol`, identical return times.
/// Oracle branches within 1% of the cut-off may be present or absent.
pub fn compare_tables(m: &MapInstance, nest: &Nest<f64>, tol: f64) -> Result<usize, TableMismatch> {
    let mut matched = 0;
    for level in nest.levels.iter().take(2) {
        let p = level.half_width;
        let cut = MIN_BRANCH_FRACTION * 2.0 * p;
        let oracle = grid_branches(m, p, 0.98 * cut);
        // branches below the cut-off materialized by the critical orbit are not part of the enumeration
        let ours: Vec<_> = level.branches.iter().filter(|b| b.index > 0 && b.hi - b.lo >= cut).collect();
        let err = |detail: String| TableMismatch { level: level.n, detail };
        for b in &ours {
            let dist = |o: &&OracleBranch| (o.lo - b.lo).abs().max((o.hi - b.hi).abs());
            let o = oracle
                .iter()
                .filter(|o| dist(o) <= tol)
                .min_by(|x, y| dist(x).total_cmp(&dist(y)))
                .ok_or_else(|| err(format!("branch {} [{}, {}] r={} has no oracle match", b.index, b.lo, b.hi, b.return_time)))?;
            if o.r != b.return_time {
                return Err(err(format!("branch {}: return time {} vs oracle {}", b.index, b.return_time, o.r)));
            }
        }
        for o in oracle.iter().filter(|o| o.hi - o.lo >= cut * 1.01) {
            if !ours.iter().any(|b| (o.lo - b.lo).abs() <= tol && (o.hi - b.hi).abs() <= tol) {
                return Err(err(format!("oracle branch [{}, {}] r={} missing", o.lo, o.hi, o.r)));
            }
        }
        let sure = oracle.iter().filter(|o| o.hi - o.lo >= cut * 1.01).count();
        let maybe = oracle.iter().filter(|o| o.hi - o.lo >= cut * 0.99).count();
        if ours.len() < sure || ours.len() > maybe {
            return Err(err(format!("{} branches vs oracle {sure}..={maybe}", ours.len())));
        }
        matched += ours.len();
    }
    Ok(matched)
}

/// Deterministic parameters in `[1.5, 2]` whose critical orbit is recurrent
/// (two resolved nest levels), with their nests.
pub fn recurrent_sample(count: usize) -> Vec<(f64, Nest<f64>)> {
    let mut out = Vec::new();
    let mut k = 0u64;
    while out.len() < count {
        k += 1;
        // golden-ratio sequence: deterministic and equidistributed
        let a = 1.5 + 0.5 * ((k as f64 * 0.618_033_988_749_894_9) % 1.0);
        let m = quadratic(a);
        if let Some(nest) = two_level_nest(&m) {
            if nest.levels[..2].iter().all(|l| l.c.is_some()) {
                out.push((a, nest));
            }
        }
    }
    out
}

/// Level-`n` phase-parameter window of raw `a - x²` by grid scan: a coarse
/// grid finds the connected run of parameters sharing the base signature, then
/// a fine grid inside each boundary cell locates the endpoint.
pub fn grid_window(base: f64, n: usize, coarse: f64, fine_points: usize) -> Option<(f64, f64)> {
    let period = window_signature(&quadratic(base), n, &NestBudget::lite())?.renorm_period;
    let budget = window_budget(period);
    let sig = |a: f64| -> Option<WindowSignature> {
        if !(-0.25..=2.0).contains(&a) {
            return None;
        }
        window_signature(&quadratic(a), n, &budget)
    };
    let s0 = sig(base)?;
    let walk = |dir: f64| -> f64 {
        let mut inside = base;
        loop {
            let next = inside + dir * coarse;
            if sig(next).as_ref() != Some(&s0) {
                // fine scan of the cell (inside, next)
                let pts: Vec<f64> = (1..=fine_points).map(|i| inside + dir * coarse * i as f64 / fine_points as f64).collect();
                let ok: Vec<bool> = pts.par_iter().map(|&a| sig(a).as_ref() == Some(&s0)).collect();
                let last = ok.iter().position(|&b| !b).unwrap_or(fine_points);
                return if last == 0 { inside } else { pts[last - 1] };
            }
            inside = next;
        }
    };
    Some((walk(-1.0), walk(1.0)))
}
