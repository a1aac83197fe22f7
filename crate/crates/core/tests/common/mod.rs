#![allow(dead_code)]

pub mod grad;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use selcal::{LabelBatch, ProbBatch};

/// Euclidean projection of `x` onto the permutahedron of `(1, …, n)`, solved as a
/// QP over the majorization inequalities: every subset `S` sums to at most the
/// `|S|` largest of `1..n`, and the full sum is fixed.
pub fn qp_permutahedron_projection(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert!((1..=12).contains(&n), "subset enumeration is exponential");
    let top = |m: usize| -> f64 { (n - m + 1..=n).map(|v| v as f64).sum() };

    let subsets: Vec<u32> = (1..(1u32 << n) - 1).collect();
    let rows = 1 + subsets.len();
    // column-major incidence: column j has a 1 in row 0 and in every subset containing j
    let mut colptr = vec![0];
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    for j in 0..n {
        rowval.push(0);
        nzval.push(1.0);
        for (r, &s) in subsets.iter().enumerate() {
            if s & (1 << j) != 0 {
                rowval.push(r + 1);
                nzval.push(1.0);
            }
        }
        colptr.push(rowval.len());
    }
    let a = CscMatrix::new(rows, n, colptr, rowval, nzval);
    let mut b = vec![top(n)];
    b.extend(subsets.iter().map(|s| top(s.count_ones() as usize)));
    let p = CscMatrix::identity(n);
    let q: Vec<f64> = x.iter().map(|v| -v).collect();
    let cones = [SupportedConeT::ZeroConeT(1), SupportedConeT::NonnegativeConeT(subsets.len())];
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-12)
        .tol_gap_rel(1e-12)
        .tol_feas(1e-12)
        .max_iter(500)
        .build()
        .unwrap();
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings).unwrap();
    solver.solve();
    assert!(
        matches!(solver.solution.status, SolverStatus::Solved | SolverStatus::AlmostSolved),
        "QP status {:?}",
        solver.solution.status
    );
    solver.solution.x.clone()
}

/// A random point in the interior of the simplex.
pub fn random_simplex<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Random continuous predictions with uniform random labels.
pub fn random_batch<R: Rng>(rng: &mut R, n: usize, k: usize) -> (ProbBatch, LabelBatch) {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| random_simplex(rng, k)).collect();
    let labels = (0..n).map(|_| rng.gen_range(0..k)).collect();
    (ProbBatch::from_rows(&rows).unwrap(), LabelBatch::new(labels, k).unwrap())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
