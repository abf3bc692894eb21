//! Discrete forward operators in factored Kronecker form.
//!
//! The coefficient vector is position-major: `U[n][l] = u[n * L + l]` (0-based).
//! With that layout
//!
//! * `H_r u = G (U q_r)`,
//! * `H_rᵀ w = vec((G w) q_rᵀ)`,
//! * `M = Ψ ⊗ Φ`, so `M u = vec(Ψ U Φ)` and `M⁻¹ z = vec(Ψ⁻¹ Z Φ⁻¹)`.
//!
//! A datacube slice `y_r` holds the ψ-coefficients of `K_r f` (for both bases
//! these are the values at the pixel centres), so the data moments are
//! `w_r = G y_r` and the data-space norm of a slice is `sqrt(yᵀ G y)`.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid_basis::{DiscreteBasis, GramMatrices};
use crate::io::{BinReader, BinWriter};
use crate::linalg::{BandedCholesky, SparseSym};
use crate::numeric::{dot, Real};
use crate::templates::{kernel_theta_integrals, KernelIntegralTable, TemplateGrid};

/// Immutable operator bundle shared by the solver, the mock generator and diagnostics.
#[derive(Debug, Clone)]
pub struct ForwardSystem<T> {
    grams: GramMatrices<T>,
    q: KernelIntegralTable<T>,
    psi_chol: BandedCholesky<T>,
    phi_chol: BandedCholesky<T>,
    g_chol: BandedCholesky<T>,
    /// `Φ⁻¹ q_r`, wavelength-major.
    phi_inv_q: Vec<T>,
    /// `q_rᵀ Φ⁻¹ q_r`.
    q_phi_norms: Vec<T>,
    /// Largest eigenvalue of `Ψ⁻¹ G`.
    lambda_psi_g: T,
    lattice: [usize; 5],
}

impl<T: Real> ForwardSystem<T> {
    /// Assembles Gram matrices, kernel integrals and factorizations.
    pub fn assemble(basis: &DiscreteBasis<T>, templates: &TemplateGrid<T>) -> Result<Self> {
        let grams = basis.assemble_grams()?;
        let q = kernel_theta_integrals(templates, basis)?;
        Self::from_parts(grams, q, basis.lattice_dims())
    }

    /// `lattice` is the coefficient lattice `[x2, x1, v, z, t]`.
    pub fn from_parts(grams: GramMatrices<T>, q: KernelIntegralTable<T>, lattice: [usize; 5]) -> Result<Self> {
        let n = grams.psi.dim();
        let l = grams.phi.dim();
        if grams.g.dim() != n || q.n_theta() != l || lattice[0] * lattice[1] != n || lattice[2..].iter().product::<usize>() != l {
            return Err(Error::Dimension {
                expected: n * l,
                got: lattice.iter().product(),
            });
        }
        let psi_chol = grams.psi.cholesky()?;
        let phi_chol = grams.phi.cholesky()?;
        let g_chol = grams.g.cholesky()?;
        let cols: Vec<(Vec<T>, T)> = (0..q.n_obs())
            .into_par_iter()
            .map(|r| {
                let p = phi_chol.solve(q.q(r));
                let s = dot(&p, q.q(r));
                (p, s)
            })
            .collect();
        let mut phi_inv_q = Vec::with_capacity(l * q.n_obs());
        let mut q_phi_norms = Vec::with_capacity(q.n_obs());
        for (p, s) in cols {
            phi_inv_q.extend(p);
            q_phi_norms.push(s);
        }
        let lambda_psi_g = generalized_lambda_max(&grams.g, &grams.psi, &psi_chol);
        Ok(Self {
            grams,
            q,
            psi_chol,
            phi_chol,
            g_chol,
            phi_inv_q,
            q_phi_norms,
            lambda_psi_g,
            lattice,
        })
    }

    pub fn n_spatial(&self) -> usize {
        self.grams.psi.dim()
    }

    pub fn n_theta(&self) -> usize {
        self.grams.phi.dim()
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_spatial() * self.n_theta()
    }

    pub fn n_obs(&self) -> usize {
        self.q.n_obs()
    }

    pub fn lattice(&self) -> [usize; 5] {
        self.lattice
    }

    pub fn grams(&self) -> &GramMatrices<T> {
        &self.grams
    }

    pub fn q(&self) -> &KernelIntegralTable<T> {
        &self.q
    }

    /// `c_N` when `G = c_N I`.
    pub fn c_n(&self) -> Option<T> {
        self.grams.c_n
    }

    /// `c_M` with `M = c_M I`, when both Ψ and Φ are constant diagonals.
    pub fn c_m(&self) -> Option<T> {
        Some(constant_diagonal(&self.grams.psi)? * constant_diagonal(&self.grams.phi)?)
    }

    pub fn phi_cholesky(&self) -> &BandedCholesky<T> {
        &self.phi_chol
    }

    /// `Φ⁻¹ q_r`.
    pub fn phi_inv_q(&self, r: usize) -> &[T] {
        let l = self.n_theta();
        &self.phi_inv_q[r * l..(r + 1) * l]
    }

    /// Operator norm of `M⁻¹ H_rᵀ N⁻¹ H_r` in the M-inner product.
    pub fn equation_norm(&self, r: usize) -> T {
        self.lambda_psi_g * self.q_phi_norms[r]
    }

    fn check_len(&self, got: usize, expected: usize) -> Result<()> {
        if got != expected {
            return Err(Error::Dimension { expected, got });
        }
        Ok(())
    }

    fn check_r(&self, r: usize) -> Result<()> {
        if r >= self.n_obs() {
            return Err(Error::Index {
                index: r + 1,
                len: self.n_obs(),
            });
        }
        Ok(())
    }

    /// `U q_r`: ψ-coefficients of `K_r f`, i.e. the model datacube slice.
    pub fn model_slice(&self, u: &[T], r: usize) -> Result<Vec<T>> {
        self.check_len(u.len(), self.n_coeffs())?;
        self.check_r(r)?;
        let q = self.q.q(r);
        Ok(u.par_chunks_exact(self.n_theta()).map(|row| dot(row, q)).collect())
    }

    /// `H_r u = G (U q_r)`; `r` is 0-based.
    pub fn apply_hr(&self, u: &[T], r: usize) -> Result<Vec<T>> {
        Ok(self.grams.g.mul_vec(&self.model_slice(u, r)?))
    }

    /// `H_rᵀ w = vec((G w) q_rᵀ)`.
    pub fn apply_hr_t(&self, w: &[T], r: usize) -> Result<Vec<T>> {
        self.check_len(w.len(), self.n_spatial())?;
        self.check_r(r)?;
        let gw = self.grams.g.mul_vec(w);
        Ok(outer(&gw, self.q.q(r)))
    }

    /// `M u = vec(Ψ U Φ)`.
    pub fn apply_m(&self, u: &[T]) -> Result<Vec<T>> {
        self.check_len(u.len(), self.n_coeffs())?;
        let (n, l) = (self.n_spatial(), self.n_theta());
        let mut x: Vec<T> = vec![T::zero(); n * l];
        x.par_chunks_mut(l)
            .zip(u.par_chunks(l))
            .for_each(|(dst, src)| dst.copy_from_slice(&self.grams.phi.mul_vec(src)));
        let mut xt = transpose(&x, n, l);
        xt.par_chunks_mut(n)
            .for_each(|col| {
                let y = self.grams.psi.mul_vec(col);
                col.copy_from_slice(&y);
            });
        Ok(transpose(&xt, l, n))
    }

    /// `M⁻¹ z = vec(Ψ⁻¹ Z Φ⁻¹)` via the stored Cholesky factors.
    pub fn solve_m(&self, z: &[T]) -> Result<Vec<T>> {
        self.check_len(z.len(), self.n_coeffs())?;
        let (n, l) = (self.n_spatial(), self.n_theta());
        let mut x = z.to_vec();
        x.par_chunks_mut(l).for_each(|row| self.phi_chol.solve_in_place(row));
        let mut xt = transpose(&x, n, l);
        xt.par_chunks_mut(n).for_each(|col| self.psi_chol.solve_in_place(col));
        Ok(transpose(&xt, l, n))
    }

    /// `N⁻¹ w` (`N = G`).
    pub fn apply_n_inv(&self, w: &[T]) -> Result<Vec<T>> {
        self.check_len(w.len(), self.n_spatial())?;
        Ok(self.g_chol.solve(w))
    }

    /// `Ψ⁻¹ x` for a spatial vector.
    pub fn solve_psi(&self, x: &[T]) -> Vec<T> {
        self.psi_chol.solve(x)
    }

    /// `w_r = G y_r`.
    pub fn data_moments(&self, y: &[T]) -> Vec<T> {
        self.grams.g.mul_vec(y)
    }

    /// `sqrt(dᵀ G d)`: data-space norm of a slice, equal to `sqrt(wᵀ N⁻¹ w)` for `w = G d`.
    pub fn data_norm(&self, d: &[T]) -> T {
        dot(d, &self.grams.g.mul_vec(d)).max(T::zero()).sqrt()
    }

    /// Data-space norm of equation `r`'s residual at `u`.
    pub fn equation_residual_norm(&self, u: &[T], r: usize, y: &[T]) -> Result<T> {
        self.check_len(y.len(), self.n_spatial())?;
        let m = self.model_slice(u, r)?;
        let d: Vec<T> = y.iter().zip(&m).map(|(&a, &b)| a - b).collect();
        Ok(self.data_norm(&d))
    }

    /// All `R` model slices `U q_r`.
    pub fn synthesize_datacube(&self, u: &[T]) -> Result<Vec<Vec<T>>> {
        self.check_len(u.len(), self.n_coeffs())?;
        (0..self.n_obs())
            .into_par_iter()
            .map(|r| self.model_slice(u, r))
            .collect()
    }
}

fn constant_diagonal<T: Real>(a: &SparseSym<T>) -> Option<T> {
    if !a.is_diagonal() {
        return None;
    }
    let d = a.diagonal();
    let c = d[0];
    d.iter()
        .all(|&x| (x - c).abs() <= T::lit(1e-12) * c.abs())
        .then_some(c)
}

/// Row-major `a ⊗ b` = `vec(a bᵀ)`.
pub(crate) fn outer<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        out.extend(b.iter().map(|&y| x * y));
    }
    out
}

fn transpose<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// Largest eigenvalue of `B⁻¹ A` (A symmetric PSD, B SPD) by power iteration.
fn generalized_lambda_max<T: Real>(a: &SparseSym<T>, b: &SparseSym<T>, b_chol: &BandedCholesky<T>) -> T {
    let n = a.dim();
    let mut x: Vec<T> = (0..n)
        .map(|i| T::one() + T::lit(0.1) * T::from_usize_lossy(i % 7))
        .collect();
    let mut lam = T::zero();
    for _ in 0..500 {
        let y = b_chol.solve(&a.mul_vec(&x));
        let num = dot(&y, &a.mul_vec(&y));
        let den = dot(&y, &b.mul_vec(&y));
        if !(den > T::zero()) {
            return T::zero();
        }
        let next = num / den;
        let scale = dot(&y, &y).sqrt();
        x = y.into_iter().map(|v| v / scale).collect();
        let done = (next - lam).abs() <= T::lit(1e-12) * next.abs();
        lam = next;
        if done {
            break;
        }
    }
    lam
}

/// Separable 5D stencil on the coefficient lattice, one symmetric odd-length
/// tap vector per axis in `[x1, x2, v, z, t]` order.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingKernel<T> {
    taps: [Vec<T>; 5],
}

impl<T: Real> SmoothingKernel<T> {
    pub fn new(taps: [Vec<T>; 5]) -> Result<Self> {
        for (a, t) in taps.iter().enumerate() {
            if t.len() % 2 == 0 {
                return Err(Error::Config(format!("axis {a}: stencil length must be odd")));
            }
            if t.iter().any(|&x| !(x >= T::zero()) || !x.is_finite()) {
                return Err(Error::Config(format!("axis {a}: stencil taps must be non-negative")));
            }
            let sum: T = t.iter().copied().sum();
            if (sum - T::one()).abs() > T::lit(1e-12) {
                return Err(Error::Config(format!("axis {a}: stencil taps sum to {sum}, not 1")));
            }
            let k = t.len();
            if (0..k / 2).any(|i| t[i] != t[k - 1 - i]) {
                return Err(Error::Config(format!("axis {a}: stencil must be symmetric")));
            }
        }
        Ok(Self { taps })
    }

    pub fn identity() -> Self {
        Self {
            taps: std::array::from_fn(|_| vec![T::one()]),
        }
    }

    /// `[¼, ½, ¼]` on every axis.
    pub fn triangle() -> Self {
        Self {
            taps: std::array::from_fn(|_| vec![T::lit(0.25), T::lit(0.5), T::lit(0.25)]),
        }
    }

    pub fn taps(&self) -> &[Vec<T>; 5] {
        &self.taps
    }

    pub fn is_identity(&self) -> bool {
        self.taps.iter().all(|t| t.len() == 1)
    }
}

/// Separable convolution of `u` on the `[x2, x1, v, z, t]` lattice with replicated edges.
pub fn apply_zs<T: Real>(u: &[T], lattice: [usize; 5], kernel: &SmoothingKernel<T>) -> Result<Vec<T>> {
    let total: usize = lattice.iter().product();
    if u.len() != total {
        return Err(Error::Dimension {
            expected: total,
            got: u.len(),
        });
    }
    // kernel axes are named [x1, x2, v, z, t]; the lattice is [x2, x1, v, z, t]
    let order = [1usize, 0, 2, 3, 4];
    let mut cur = u.to_vec();
    for (axis, &dim) in lattice.iter().enumerate() {
        let taps = &kernel.taps[order[axis]];
        if taps.len() == 1 {
            if taps[0] != T::one() {
                cur.iter_mut().for_each(|x| *x *= taps[0]);
            }
            continue;
        }
        if taps.len() > dim {
            return Err(Error::Config(format!(
                "stencil of length {} wider than lattice axis of size {dim}",
                taps.len()
            )));
        }
        let inner: usize = lattice[axis + 1..].iter().product();
        let outer: usize = lattice[..axis].iter().product();
        let half = (taps.len() / 2) as isize;
        let mut next = vec![T::zero(); total];
        for o in 0..outer {
            let base = o * dim * inner;
            for k in 0..dim {
                let dst = &mut next[base + k * inner..base + (k + 1) * inner];
                for (ti, &w) in taps.iter().enumerate() {
                    let src = (k as isize + ti as isize - half).clamp(0, dim as isize - 1) as usize;
                    let s = &cur[base + src * inner..base + (src + 1) * inner];
                    for (d, &x) in dst.iter_mut().zip(s) {
                        *d += w * x;
                    }
                }
            }
        }
        cur = next;
    }
    Ok(cur)
}

const PNKD_MAGIC: &[u8; 4] = b"PNKD";
const PNKD_VERSION: u32 = 1;

/// Observed or simulated data `y_r(x)` on the Ω pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Datacube<T> {
    /// Pixel edges along x1 / x2 (the Ω grid nodes).
    pub x1_edges: Vec<T>,
    pub x2_edges: Vec<T>,
    pub lambdas: Vec<T>,
    /// `[r][x2][x1]`, one slice of `Nx1 * Nx2` samples per wavelength.
    pub slices: Vec<Vec<T>>,
    /// Per-wavelength noise norms `δ_r` (zero for clean cubes).
    pub delta: Vec<T>,
    pub seed: u64,
}

impl<T: Real> Datacube<T> {
    pub fn nx1(&self) -> usize {
        self.x1_edges.len() - 1
    }

    pub fn nx2(&self) -> usize {
        self.x2_edges.len() - 1
    }

    pub fn n_obs(&self) -> usize {
        self.slices.len()
    }

    /// `sqrt(Σ_r δ_r²)`.
    pub fn total_delta(&self) -> T {
        self.delta.iter().map(|&d| d * d).sum::<T>().sqrt()
    }

    /// Errors unless the cube matches the discretization.
    pub fn check_against(&self, basis: &DiscreteBasis<T>, system: &ForwardSystem<T>) -> Result<()> {
        let tol = T::lit(1e-9);
        let same = |a: &[T], b: &[T]| a.len() == b.len() && a.iter().zip(b).all(|(&x, &y)| (x - y).abs() <= tol * (T::one() + y.abs()));
        if !same(&self.x1_edges, basis.x1().grid().nodes()) || !same(&self.x2_edges, basis.x2().grid().nodes()) {
            return Err(Error::Config(format!(
                "datacube pixel grid {}x{} does not match the spatial grid {}x{}",
                self.nx1(),
                self.nx2(),
                basis.x1().len(),
                basis.x2().len()
            )));
        }
        if self.n_obs() != system.n_obs() {
            return Err(Error::Config(format!(
                "datacube has {} wavelengths, templates provide {}",
                self.n_obs(),
                system.n_obs()
            )));
        }
        if self.delta.len() != self.n_obs() || self.slices.iter().any(|s| s.len() != system.n_spatial()) {
            return Err(Error::Config("datacube payload inconsistent with its header".into()));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::create(path, PNKD_MAGIC, PNKD_VERSION)?;
        w.u64(self.nx1() as u64)?;
        w.u64(self.nx2() as u64)?;
        w.u64(self.n_obs() as u64)?;
        w.axis(&self.x1_edges)?;
        w.axis(&self.x2_edges)?;
        w.axis(&self.lambdas)?;
        for s in &self.slices {
            w.reals(s)?;
        }
        w.reals(&self.delta)?;
        w.u64(self.seed)?;
        w.finish()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BinReader::open(path, PNKD_MAGIC, PNKD_VERSION)?;
        let nx1 = r.count(1 << 24)?;
        let nx2 = r.count(1 << 24)?;
        let n_obs = r.count(1 << 24)?;
        let x1_edges: Vec<T> = r.axis()?;
        let x2_edges: Vec<T> = r.axis()?;
        let lambdas: Vec<T> = r.axis()?;
        if x1_edges.len() != nx1 + 1 || x2_edges.len() != nx2 + 1 || lambdas.len() != n_obs {
            return Err(Error::format(path, "axis lengths disagree with dims"));
        }
        let slices = (0..n_obs)
            .map(|_| r.reals(nx1 * nx2))
            .collect::<Result<Vec<_>>>()?;
        let delta = r.reals(n_obs)?;
        let seed = r.u64()?;
        r.expect_end()?;
        Ok(Self {
            x1_edges,
            x2_edges,
            lambdas,
            slices,
            delta,
            seed,
        })
    }
}
