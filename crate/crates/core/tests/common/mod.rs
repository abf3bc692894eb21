#![allow(dead_code)]

use nalgebra::DMatrix;
use pnkr::cli::preset::{synthesize_templates, Preset, Setup};
use pnkr::grid_basis::{AxisSpec, GridSpec, Smoothness};
use pnkr::linalg::SparseSym;
use rand::Rng;

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// `∫ f` over `[a, b]` split at the sorted interior points of `breaks`.
pub fn integrate_pieces(a: f64, b: f64, breaks: &[f64], gl: &[(f64, f64)], f: impl Fn(f64) -> f64) -> f64 {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    pts.push(a);
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts.windows(2)
        .map(|w| {
            let (m, h) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            gl.iter().map(|&(x, wt)| wt * h * f(m + h * x)).sum::<f64>()
        })
        .sum()
}

pub fn dense(a: &SparseSym<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.dim(), a.dim(), |i, j| a.get(i, j))
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Ω 4² nodes (N = 9) and Θ (4, 3, 3) nodes (L = 12).
pub fn small_setup(s: Smoothness, beta: f64) -> Setup<f64> {
    let p = Preset::Tiny.grid_spec();
    let grid = GridSpec {
        v: AxisSpec::uniform(-1000.0, 1000.0, 4),
        ..p
    };
    let templates = synthesize_templates(&grid, &Preset::Tiny.template_config(3)).unwrap();
    Setup::build(&grid, s, beta, templates).unwrap()
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b).max(f64::MIN_POSITIVE)
}
