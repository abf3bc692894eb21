//! Factored operators against dense matrices assembled by brute-force quadrature.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use pnkr::cli::preset::Setup;
use pnkr::grid_basis::{Basis1d, Smoothness};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GL: usize = 10;

fn breaks(b: &Basis1d<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = (0..b.len()).flat_map(|i| b.breakpoints(i)).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn derivative(b: &Basis1d<f64>, i: usize, x: f64, h: f64) -> f64 {
    (b.value(i, x + h) - b.value(i, x - h)) / (2.0 * h)
}

/// 1D mass and stiffness matrices by Gauss-Legendre on every piece.
fn gram_1d(b: &Basis1d<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let gl = gauss_legendre(GL);
    let br = breaks(b);
    let (lo, hi) = (b.grid().min(), b.grid().max());
    let n = b.len();
    let mass = DMatrix::from_fn(n, n, |i, j| integrate_pieces(lo, hi, &br, &gl, |x| b.value(i, x) * b.value(j, x)));
    let h = 1e-3 * b.grid().nodes().windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let stiff = DMatrix::from_fn(n, n, |i, j| {
        integrate_pieces(lo, hi, &br, &gl, |x| derivative(b, i, x, h) * derivative(b, j, x, h))
    });
    (mass, stiff)
}

/// `⊗_a mass_a + β Σ_a (stiff_a ⊗ others' mass)`, axes slowest first.
fn sobolev(axes: &[&Basis1d<f64>], beta: f64, derivs: bool) -> DMatrix<f64> {
    let g: Vec<_> = axes.iter().map(|b| gram_1d(b)).collect();
    let prod = |k: Option<usize>| {
        g.iter()
            .enumerate()
            .map(|(a, (m, s))| if Some(a) == k { s.clone() } else { m.clone() })
            .reduce(|x, y| x.kronecker(&y))
            .unwrap()
    };
    let mut out = prod(None);
    if derivs {
        for a in 0..axes.len() {
            out += prod(Some(a)) * beta;
        }
    }
    out
}

/// `q_r[l]` by tensor Gauss-Legendre split at basis breakpoints, template
/// nodes and the velocity kinks of the interpolated kernel.
fn kernel_integrals(st: &Setup<f64>, r: usize) -> Vec<f64> {
    let b = &st.basis;
    let tpl = &st.templates;
    let gl = gauss_legendre(GL);
    let lam = tpl.obs_lambdas()[r];
    let (vb, zb, tb) = (b.v(), b.z(), b.t());
    let mut bv = breaks(vb);
    bv.extend(tpl.velocity_kinks(vb.grid().min(), vb.grid().max()));
    let mut bz = breaks(zb);
    bz.extend_from_slice(tpl.z().nodes());
    let mut bt = breaks(tb);
    bt.extend_from_slice(tpl.t().nodes());
    let pts = |lo: f64, hi: f64, br: &[f64]| {
        let mut p: Vec<f64> = br.iter().copied().filter(|&x| x > lo && x < hi).collect();
        p.extend([lo, hi]);
        p.sort_by(f64::total_cmp);
        p.dedup();
        p.windows(2)
            .flat_map(|w| {
                let (m, h) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
                gl.iter().map(move |&(x, wt)| (m + h * x, wt * h)).collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
    };
    let pv = pts(vb.grid().min(), vb.grid().max(), &bv);
    let pz = pts(zb.grid().min(), zb.grid().max(), &bz);
    let pt = pts(tb.grid().min(), tb.grid().max(), &bt);
    let (nv, nz, nt) = (vb.len(), zb.len(), tb.len());
    let mut q = vec![0.0; nv * nz * nt];
    for &(v, wv) in &pv {
        for &(z, wz) in &pz {
            for &(t, wt) in &pt {
                let k = tpl.kernel_eval(v, z, t, lam).unwrap() * wv * wz * wt;
                for a in 0..nv {
                    let fa = vb.value(a, v);
                    if fa == 0.0 {
                        continue;
                    }
                    for c in 0..nz {
                        let fc = zb.value(c, z);
                        for e in 0..nt {
                            q[(a * nz + c) * nt + e] += k * fa * fc * tb.value(e, t);
                        }
                    }
                }
            }
        }
    }
    q
}

fn max_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax()
}

#[test]
fn gauss_legendre_integrates_polynomials() {
    let gl = gauss_legendre(GL);
    let s: f64 = gl.iter().map(|&(x, w)| w * x.powi(18)).sum();
    assert!((s - 2.0 / 19.0).abs() < 1e-14);
}

#[test]
fn gram_matrices_match_quadrature() {
    for (s, beta) in [(Smoothness::Constant, 1.0), (Smoothness::Linear, 1.0), (Smoothness::Linear, 0.01)] {
        let st = small_setup(s, beta);
        let b = &st.basis;
        let derivs = s == Smoothness::Linear;
        let g = sobolev(&[b.x2(), b.x1()], 0.0, false);
        let psi = sobolev(&[b.x2(), b.x1()], beta, derivs);
        let phi = sobolev(&[b.v(), b.z(), b.t()], beta, derivs);
        let grams = st.system.grams();
        assert!(max_rel(&dense(&grams.g), &g) < 1e-12);
        assert!(max_rel(&dense(&grams.psi), &psi) < 1e-12);
        assert!(max_rel(&dense(&grams.phi), &phi) < 1e-12, "{}", max_rel(&dense(&grams.phi), &phi));
    }
}

#[test]
fn kernel_integrals_match_quadrature() {
    for s in [Smoothness::Constant, Smoothness::Linear] {
        let st = small_setup(s, 1.0);
        for r in 0..st.system.n_obs() {
            let oracle = kernel_integrals(&st, r);
            let d = rel_diff(st.system.q().q(r), &oracle);
            assert!(d < 1e-10, "s = {s:?}, r = {r}: {d:e}");
        }
    }
}

/// Dense `H_r`, `H_rᵀ`, `M` and `M⁻¹` built from the quadrature oracles.
#[test]
fn factored_operators_match_dense_assembly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (s, beta) in [(Smoothness::Constant, 1.0), (Smoothness::Linear, 0.01)] {
        let st = small_setup(s, beta);
        let b = &st.basis;
        let sys = &st.system;
        let (n, l) = (sys.n_spatial(), sys.n_theta());
        assert!(n <= 9 && l <= 12);
        let derivs = s == Smoothness::Linear;
        let g = sobolev(&[b.x2(), b.x1()], 0.0, false);
        let m = sobolev(&[b.x2(), b.x1()], beta, derivs).kronecker(&sobolev(&[b.v(), b.z(), b.t()], beta, derivs));
        let m_lu = m.clone().lu();
        for r in 0..sys.n_obs() {
            let q = DMatrix::from_row_slice(1, l, &kernel_integrals(&st, r));
            let h = g.kronecker(&q);
            for _ in 0..5 {
                let u = random_vec(&mut rng, n * l);
                let w = random_vec(&mut rng, n);
                let hu = &h * DVector::from_column_slice(&u);
                let htw = h.transpose() * DVector::from_column_slice(&w);
                let mu = &m * DVector::from_column_slice(&u);
                let minv = m_lu.solve(&DVector::from_column_slice(&u)).unwrap();
                assert!(rel_diff(&sys.apply_hr(&u, r).unwrap(), hu.as_slice()) < 1e-10);
                assert!(rel_diff(&sys.apply_hr_t(&w, r).unwrap(), htw.as_slice()) < 1e-10);
                assert!(rel_diff(&sys.apply_m(&u).unwrap(), mu.as_slice()) < 1e-10);
                assert!(rel_diff(&sys.solve_m(&u).unwrap(), minv.as_slice()) < 1e-10);
            }
        }
    }
}
