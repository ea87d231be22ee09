//! Helpers shared by the integration tests.
#![allow(dead_code)]

use minilp::{ComparisonOp, OptimizationDirection, Problem};

/// Smallest sup distance between the empirical CDF of sorted `x` and a
/// unimodal CDF, by linear programming.
///
/// Only CDF values at the distinct sample points matter: the empirical CDF is
/// flat in between and a CDF is monotone. A unimodal CDF is convex up to its
/// mode and concave after it, so its piecewise-linear interpolant has slopes
/// that rise then fall, with at most one jump, at the mode. Every placement of
/// the mode (inside a segment, or at a point with a jump) is one LP.
pub fn lp_dip(x: &[f64]) -> f64 {
    let mut pts: Vec<f64> = Vec::new();
    let mut cum: Vec<usize> = Vec::new();
    for (i, &v) in x.iter().enumerate() {
        assert!(i == 0 || x[i - 1] <= v, "input must be sorted");
        if pts.last() == Some(&v) {
            *cum.last_mut().unwrap() += 1;
        } else {
            pts.push(v);
            cum.push(i + 1);
        }
    }
    let k = pts.len();
    let mut best = f64::INFINITY;
    for seg in 0..k.saturating_sub(1) {
        best = best.min(solve(&pts, &cum, x.len(), Mode::Segment(seg)));
    }
    for node in 0..k {
        best = best.min(solve(&pts, &cum, x.len(), Mode::Jump(node)));
    }
    best
}

#[derive(Clone, Copy)]
enum Mode {
    Segment(usize),
    Jump(usize),
}

/// Sum coefficients of repeated variables; the solver wants each once.
fn merge(terms: &[(minilp::Variable, f64)]) -> Vec<(minilp::Variable, f64)> {
    let mut out: Vec<(minilp::Variable, f64)> = Vec::new();
    for &(v, c) in terms {
        match out.iter_mut().find(|(w, _)| *w == v) {
            Some(e) => e.1 += c,
            None => out.push((v, c)),
        }
    }
    out
}

fn solve(pts: &[f64], cum: &[usize], n: usize, mode: Mode) -> f64 {
    let k = pts.len();
    let nf = n as f64;
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let t = p.add_var(1.0, (0.0, 1.0));
    // left and right limits of F at each point; equal except at a jump
    let left: Vec<_> = (0..k).map(|_| p.add_var(0.0, (0.0, 1.0))).collect();
    let right: Vec<_> = (0..k)
        .map(|i| match mode {
            Mode::Jump(m) if m == i => p.add_var(0.0, (0.0, 1.0)),
            _ => left[i],
        })
        .collect();
    let near = |p: &mut Problem, v, target: f64| {
        p.add_constraint(&[(v, 1.0), (t, -1.0)], ComparisonOp::Le, target);
        p.add_constraint(&[(v, 1.0), (t, 1.0)], ComparisonOp::Ge, target);
    };
    for i in 0..k {
        let below = if i == 0 { 0 } else { cum[i - 1] } as f64 / nf;
        near(&mut p, left[i], below);
        near(&mut p, right[i], cum[i] as f64 / nf);
        if let Mode::Jump(m) = mode {
            if m == i {
                p.add_constraint(&[(right[i], 1.0), (left[i], -1.0)], ComparisonOp::Ge, 0.0);
            }
        }
    }
    for j in 0..k.saturating_sub(1) {
        p.add_constraint(&[(left[j + 1], 1.0), (right[j], -1.0)], ComparisonOp::Ge, 0.0);
    }
    // segment j joins right[j] to left[j+1]; compare consecutive slopes
    for j in 0..k.saturating_sub(2) {
        let (wa, wb) = (1.0 / (pts[j + 1] - pts[j]), 1.0 / (pts[j + 2] - pts[j + 1]));
        // slope_{j+1} - slope_j
        let terms = [(left[j + 2], wb), (right[j + 1], -wb), (left[j + 1], -wa), (right[j], wa)];
        let rising = match mode {
            Mode::Segment(s) => j < s,
            Mode::Jump(m) => j + 1 < m,
        };
        if let Mode::Jump(m) = mode {
            if j + 1 == m {
                // the jump separates the convex and concave parts
                continue;
            }
        }
        let op = if rising { ComparisonOp::Ge } else { ComparisonOp::Le };
        p.add_constraint(&merge(&terms), op, 0.0);
    }
    p.solve().map(|s| s.objective()).unwrap_or(f64::INFINITY)
}
