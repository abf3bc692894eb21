//! Discretization of the spatial domain Ω = (x1, x2) and the population-kinematic
//! domain Θ = (v, z, t): axis grids, tensor-product basis functions, index maps
//! and Gram matrices.
//!
//! Two basis families are supported:
//!
//! * `s = 0`: indicator functions of the grid cells.
//! * `s = 1`: tensor products of 1D hat functions centred on the cell midpoints
//!   of the original grid, so the function count per axis equals the cell count.
//!   The two boundary hats stay at 1 between the domain edge and their centre,
//!   which keeps `Σ_i b_i ≡ 1` on the whole axis.
//!
//! Flat indices are slowest-axis-first. Ω uses axis order `[x2, x1]` (x1 fastest,
//! matching the datacube pixel order), Θ uses `[v, z, t]` (t fastest).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SparseSym;
use crate::numeric::Real;

/// Ordered node coordinates along one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisGrid<T> {
    nodes: Vec<T>,
    uniform: bool,
}

impl<T: Real> AxisGrid<T> {
    pub fn new(nodes: Vec<T>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Grid(format!(
                "need at least 2 nodes, got {}",
                nodes.len()
            )));
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::Grid("non-finite node".into()));
        }
        if let Some(w) = nodes.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Grid(format!(
                "nodes not strictly increasing at index {}",
                w + 1
            )));
        }
        let (hmin, hmax) = nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold((T::infinity(), T::zero()), |(lo, hi), h| (lo.min(h), hi.max(h)));
        let uniform = hmax / hmin - T::one() <= T::lit(1e-12).max(T::epsilon() * T::lit(64.0));
        Ok(Self { nodes, uniform })
    }

    pub fn uniform(min: T, max: T, count: usize) -> Result<Self> {
        if count < 2 || !(max > min) {
            return Err(Error::Grid(format!(
                "uniform grid needs count >= 2 and max > min (count {count})"
            )));
        }
        let h = (max - min) / T::from_usize_lossy(count - 1);
        let mut nodes: Vec<T> = (0..count)
            .map(|i| min + h * T::from_usize_lossy(i))
            .collect();
        nodes[count - 1] = max;
        let mut g = Self::new(nodes)?;
        g.uniform = true;
        Ok(g)
    }

    /// Nodes with a constant ratio between consecutive spacings... precisely,
    /// `x_i = min * (max/min)^(i/(count-1))`. Requires `min > 0`.
    pub fn geometric(min: T, max: T, count: usize) -> Result<Self> {
        if !(min > T::zero()) {
            return Err(Error::Grid("geometric spacing needs min > 0".into()));
        }
        if count < 2 || !(max > min) {
            return Err(Error::Grid(format!(
                "geometric grid needs count >= 2 and max > min (count {count})"
            )));
        }
        let ratio = (max / min).ln();
        let mut nodes: Vec<T> = (0..count)
            .map(|i| {
                min * (ratio * T::from_usize_lossy(i) / T::from_usize_lossy(count - 1)).exp()
            })
            .collect();
        nodes[0] = min;
        nodes[count - 1] = max;
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn min(&self) -> T {
        self.nodes[0]
    }

    pub fn max(&self) -> T {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn contains(&self, x: T) -> bool {
        x >= self.min() && x <= self.max()
    }

    /// Index `i` of the cell `[x_i, x_{i+1}]` holding `x`; the last cell is closed.
    pub fn cell_of(&self, x: T) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let k = self.nodes.partition_point(|&n| n <= x);
        Some(k.saturating_sub(1).min(self.cells() - 1))
    }
}

/// Per-axis quadrature: composite trapezoid rule on every smooth piece of the
/// integrand, optionally sharpened by one Richardson step (trapezoid with
/// `points` and `2 * points - 1` nodes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quadrature {
    pub points: usize,
    pub richardson: bool,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            points: 50,
            richardson: true,
        }
    }
}

impl Quadrature {
    pub fn trapezoid(points: usize) -> Self {
        Self {
            points,
            richardson: false,
        }
    }

    fn trapezoid_sum<T: Real>(a: T, b: T, n: usize, f: &impl Fn(T) -> T) -> T {
        let n = n.max(2);
        let h = (b - a) / T::from_usize_lossy(n - 1);
        let mut s = (f(a) + f(b)) * T::lit(0.5);
        for i in 1..n - 1 {
            s += f(a + h * T::from_usize_lossy(i));
        }
        s * h
    }

    /// Integrates a smooth integrand over `[a, b]`.
    pub fn integrate<T: Real>(&self, a: T, b: T, f: impl Fn(T) -> T) -> T {
        if !(b > a) {
            return T::zero();
        }
        let coarse = Self::trapezoid_sum(a, b, self.points, &f);
        if !self.richardson {
            return coarse;
        }
        let fine = Self::trapezoid_sum(a, b, 2 * self.points.max(2) - 1, &f);
        (T::lit(4.0) * fine - coarse) / T::lit(3.0)
    }

    /// Nodes and weights of the rule over all pieces of `breaks`. Shared piece
    /// endpoints appear twice. With Richardson enabled the weights are those
    /// of composite Simpson on `2 * points - 1` nodes.
    pub fn nodes_weights<T: Real>(&self, breaks: &[T]) -> Vec<(T, T)> {
        let mut out = Vec::new();
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            if !(b > a) {
                continue;
            }
            let n = self.points.max(2);
            if self.richardson {
                let m = 2 * n - 1;
                let h = (b - a) / T::from_usize_lossy(m - 1);
                for j in 0..m {
                    let wt = if j == 0 || j == m - 1 {
                        h / T::lit(3.0)
                    } else if j % 2 == 1 {
                        h * T::lit(4.0) / T::lit(3.0)
                    } else {
                        h * T::lit(2.0) / T::lit(3.0)
                    };
                    let x = if j == m - 1 { b } else { a + h * T::from_usize_lossy(j) };
                    out.push((x, wt));
                }
            } else {
                let h = (b - a) / T::from_usize_lossy(n - 1);
                for j in 0..n {
                    let wt = if j == 0 || j == n - 1 { h * T::lit(0.5) } else { h };
                    let x = if j == n - 1 { b } else { a + h * T::from_usize_lossy(j) };
                    out.push((x, wt));
                }
            }
        }
        out
    }

    /// Integrates over `[breaks[0], breaks[last]]`, applying the rule on each
    /// piece separately. The integrand receives `(x, piece_midpoint)` so that
    /// piecewise-constant factors (slopes) can be resolved unambiguously.
    pub fn integrate_pieces<T: Real>(&self, breaks: &[T], f: impl Fn(T, T) -> T) -> T {
        breaks
            .windows(2)
            .map(|w| {
                let mid = (w[0] + w[1]) * T::lit(0.5);
                self.integrate(w[0], w[1], |x| f(x, mid))
            })
            .sum()
    }
}

/// Smoothness order of the basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Smoothness {
    /// `s = 0`, cell indicators.
    Constant,
    /// `s = 1`, tensor-product hats.
    Linear,
}

impl Smoothness {
    pub fn from_order(s: u8) -> Result<Self> {
        match s {
            0 => Ok(Smoothness::Constant),
            1 => Ok(Smoothness::Linear),
            _ => Err(Error::Config(format!("smoothness order s = {s} unsupported (0 or 1)"))),
        }
    }

    pub fn order(self) -> u8 {
        match self {
            Smoothness::Constant => 0,
            Smoothness::Linear => 1,
        }
    }
}

/// Which inner product a Gram matrix is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerProduct {
    L2,
    /// L² plus β-weighted first-derivative terms (only differs from L² for `s = 1`).
    SobolevBeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Omega,
    Theta,
}

/// The 1D family of basis functions along one axis.
#[derive(Debug, Clone)]
pub struct Basis1d<T> {
    kind: Smoothness,
    grid: AxisGrid<T>,
    centers: Vec<T>,
}

/// Sparse matrix as per-row `(column, value)` lists.
pub type SparseRows<T> = Vec<Vec<(usize, T)>>;

impl<T: Real> Basis1d<T> {
    pub fn new(kind: Smoothness, grid: AxisGrid<T>) -> Self {
        let centers = grid
            .nodes()
            .windows(2)
            .map(|w| (w[0] + w[1]) * T::lit(0.5))
            .collect();
        Self {
            kind,
            grid,
            centers,
        }
    }

    pub fn kind(&self) -> Smoothness {
        self.kind
    }

    pub fn grid(&self) -> &AxisGrid<T> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Cell centres (s=0) or hat centres (s=1); the natural sample point of each function.
    pub fn centers(&self) -> &[T] {
        &self.centers
    }

    pub fn support(&self, i: usize) -> (T, T) {
        let x = self.grid.nodes();
        match self.kind {
            Smoothness::Constant => (x[i], x[i + 1]),
            Smoothness::Linear => {
                let k = self.len();
                let lo = if i == 0 { x[0] } else { self.centers[i - 1] };
                let hi = if i + 1 == k { x[k] } else { self.centers[i + 1] };
                (lo, hi)
            }
        }
    }

    /// Points where the function or its derivative may jump, including the support ends.
    pub fn breakpoints(&self, i: usize) -> Vec<T> {
        let (lo, hi) = self.support(i);
        match self.kind {
            Smoothness::Constant => vec![lo, hi],
            Smoothness::Linear => {
                let c = self.centers[i];
                let mut b = vec![lo];
                if c > lo && c < hi {
                    b.push(c);
                }
                b.push(hi);
                b
            }
        }
    }

    /// Value of function `i` at `x` (closed support for indicators).
    pub fn value(&self, i: usize, x: T) -> T {
        let (lo, hi) = self.support(i);
        if x < lo || x > hi {
            return T::zero();
        }
        match self.kind {
            Smoothness::Constant => T::one(),
            Smoothness::Linear => {
                let c = self.centers[i];
                if x <= c {
                    if i == 0 {
                        T::one()
                    } else {
                        (x - lo) / (c - lo)
                    }
                } else if i + 1 == self.len() {
                    T::one()
                } else {
                    (hi - x) / (hi - c)
                }
            }
        }
    }

    /// Derivative of function `i` on the piece containing `mid` (an interior point of a piece).
    pub fn slope(&self, i: usize, mid: T) -> T {
        match self.kind {
            Smoothness::Constant => T::zero(),
            Smoothness::Linear => {
                let (lo, hi) = self.support(i);
                if mid < lo || mid > hi {
                    return T::zero();
                }
                let c = self.centers[i];
                if mid < c {
                    if i == 0 {
                        T::zero()
                    } else {
                        T::one() / (c - lo)
                    }
                } else if i + 1 == self.len() {
                    T::zero()
                } else {
                    -T::one() / (hi - c)
                }
            }
        }
    }

    /// Non-zero functions at `x` with their values; partition of unity.
    pub fn active(&self, x: T) -> Option<Vec<(usize, T)>> {
        let cell = self.grid.cell_of(x)?;
        Some(match self.kind {
            Smoothness::Constant => vec![(cell, T::one())],
            Smoothness::Linear => {
                let k = self.len();
                let c = &self.centers;
                if x <= c[0] {
                    vec![(0, T::one())]
                } else if x >= c[k - 1] {
                    vec![(k - 1, T::one())]
                } else {
                    let j = c.partition_point(|&m| m <= x).saturating_sub(1).min(k - 2);
                    let w = (x - c[j]) / (c[j + 1] - c[j]);
                    vec![(j, T::one() - w), (j + 1, w)]
                }
            }
        })
    }

    fn overlap_breaks(&self, i: usize, j: usize) -> Option<Vec<T>> {
        let (a0, a1) = self.support(i);
        let (b0, b1) = self.support(j);
        let lo = a0.max(b0);
        let hi = a1.min(b1);
        if !(hi > lo) {
            return None;
        }
        let mut br: Vec<T> = self
            .breakpoints(i)
            .into_iter()
            .chain(self.breakpoints(j))
            .filter(|&x| x >= lo && x <= hi)
            .collect();
        br.push(lo);
        br.push(hi);
        sort_dedup(&mut br);
        Some(br)
    }

    /// Integral of `f · b_i` over the support, split at `extra_breaks` as well.
    pub fn integrate_against(
        &self,
        i: usize,
        quad: &Quadrature,
        extra_breaks: &[T],
        f: impl Fn(T) -> T,
    ) -> T {
        let (lo, hi) = self.support(i);
        let mut br: Vec<T> = self
            .breakpoints(i)
            .into_iter()
            .chain(extra_breaks.iter().copied().filter(|&x| x > lo && x < hi))
            .collect();
        sort_dedup(&mut br);
        quad.integrate_pieces(&br, |x, _| f(x) * self.value(i, x))
    }

    /// `∫ b_i`.
    pub fn integral(&self, i: usize, quad: &Quadrature) -> T {
        self.integrate_against(i, quad, &[], |_| T::one())
    }

    /// `∫ x b_i(x) dx`.
    pub fn first_moment(&self, i: usize, quad: &Quadrature) -> T {
        self.integrate_against(i, quad, &[], |x| x)
    }

    /// 1D mass (`∫ b_i b_j`) and stiffness (`∫ b_i' b_j'`) matrices.
    pub fn gram_1d(&self, quad: &Quadrature) -> Result<(SparseRows<T>, SparseRows<T>)> {
        let k = self.len();
        let mut mass = vec![Vec::new(); k];
        let mut stiff = vec![Vec::new(); k];
        for i in 0..k {
            let (lo, hi) = self.support(i);
            if !(hi > lo) {
                return Err(Error::Assembly(format!("basis function {i} has zero-measure support")));
            }
            let jlo = i.saturating_sub(1);
            let jhi = (i + 1).min(k - 1);
            for j in jlo..=jhi {
                let Some(br) = self.overlap_breaks(i, j) else {
                    continue;
                };
                let m = quad.integrate_pieces(&br, |x, _| self.value(i, x) * self.value(j, x));
                mass[i].push((j, m));
                if self.kind == Smoothness::Linear {
                    let s = quad.integrate_pieces(&br, |_, mid| self.slope(i, mid) * self.slope(j, mid));
                    stiff[i].push((j, s));
                }
            }
        }
        Ok((mass, stiff))
    }
}

fn sort_dedup<T: Real>(v: &mut Vec<T>) {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    v.dedup_by(|a, b| (*a - *b).abs() <= T::epsilon() * (a.abs() + b.abs()));
}

/// Tensor product of 1D families, slowest axis first.
#[derive(Debug, Clone)]
pub struct TensorBasis<T> {
    axes: Vec<Basis1d<T>>,
    strides: Vec<usize>,
}

impl<T: Real> TensorBasis<T> {
    pub fn new(axes: Vec<Basis1d<T>>) -> Self {
        let mut strides = vec![1; axes.len()];
        for a in (0..axes.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * axes[a + 1].len();
        }
        Self { axes, strides }
    }

    pub fn axes(&self) -> &[Basis1d<T>] {
        &self.axes
    }

    pub fn dims(&self) -> Vec<usize> {
        self.axes.iter().map(Basis1d::len).collect()
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Basis1d::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        self.axes
            .iter()
            .zip(&self.strides)
            .map(|(ax, &s)| (flat / s) % ax.len())
            .collect()
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(&i, &s)| i * s).sum()
    }

    /// `∫ b_m` for every tensor function.
    pub fn integrals(&self, quad: &Quadrature) -> Vec<T> {
        let per_axis: Vec<Vec<T>> = self
            .axes
            .iter()
            .map(|ax| (0..ax.len()).map(|i| ax.integral(i, quad)).collect())
            .collect();
        (0..self.len())
            .map(|m| {
                self.multi_index(m)
                    .iter()
                    .zip(&per_axis)
                    .map(|(&i, w)| w[i])
                    .fold(T::one(), |acc, x| acc * x)
            })
            .collect()
    }

    /// Non-zero tensor functions at `point` (axis order) with their values.
    pub fn active(&self, point: &[T]) -> Option<Vec<(usize, T)>> {
        assert_eq!(point.len(), self.axes.len());
        let mut acc: Vec<(usize, T)> = vec![(0, T::one())];
        for ((ax, &x), &stride) in self.axes.iter().zip(point).zip(&self.strides) {
            let act = ax.active(x)?;
            acc = acc
                .iter()
                .flat_map(|&(f, v)| act.iter().map(move |&(i, w)| (f + i * stride, v * w)))
                .collect();
        }
        Some(acc)
    }

    /// Gram matrix with entries
    /// `Π_a mass_a + Σ_a β_a stiff_a Π_{b≠a} mass_b` (derivative terms only for `SobolevBeta`).
    pub fn gram(&self, inner: InnerProduct, betas: &[T], quad: &Quadrature) -> Result<SparseSym<T>> {
        assert_eq!(betas.len(), self.axes.len());
        let factors = self
            .axes
            .iter()
            .map(|ax| ax.gram_1d(quad))
            .collect::<Result<Vec<_>>>()?;
        let with_derivs = inner == InnerProduct::SobolevBeta
            && self.axes.iter().any(|a| a.kind() == Smoothness::Linear);
        let d = self.axes.len();
        let rows = (0..self.len())
            .map(|i| {
                let mi = self.multi_index(i);
                // candidate neighbours per axis come from the 1D mass pattern
                let mut entries: Vec<(usize, Vec<usize>)> = vec![(0, Vec::with_capacity(d))];
                for a in 0..d {
                    let nbrs: Vec<usize> = factors[a].0[mi[a]].iter().map(|&(j, _)| j).collect();
                    entries = entries
                        .into_iter()
                        .flat_map(|(f, path)| {
                            nbrs.iter().map(move |&j| {
                                let mut p = path.clone();
                                p.push(j);
                                (f + j * self.strides[a], p)
                            })
                        })
                        .collect();
                }
                entries
                    .into_iter()
                    .map(|(j, mj)| {
                        let mass: Vec<T> = (0..d).map(|a| lookup(&factors[a].0[mi[a]], mj[a])).collect();
                        let mut v = mass.iter().fold(T::one(), |acc, &x| acc * x);
                        if with_derivs {
                            for a in 0..d {
                                if betas[a] == T::zero() {
                                    continue;
                                }
                                let st = lookup(&factors[a].1[mi[a]], mj[a]);
                                let others = (0..d)
                                    .filter(|&b| b != a)
                                    .fold(T::one(), |acc, b| acc * mass[b]);
                                v += betas[a] * st * others;
                            }
                        }
                        (j, v)
                    })
                    .collect()
            })
            .collect();
        Ok(SparseSym::from_rows(self.len(), rows))
    }
}

fn lookup<T: Real>(row: &[(usize, T)], j: usize) -> T {
    row.iter()
        .find(|&&(c, _)| c == j)
        .map(|&(_, v)| v)
        .unwrap_or_else(T::zero)
}

/// Coefficient layout `u[(n-1)·L + l]`: position-major, θ index fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoefficientLayout {
    pub n_spatial: usize,
    pub n_theta: usize,
}

impl CoefficientLayout {
    pub fn len(&self) -> usize {
        self.n_spatial * self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// 1-based `m ↦ (n, l)` with `n = ⌊(m−1)/L⌋ + 1`, `l = ((m−1) mod L) + 1`.
    pub fn index_maps(&self, m: usize) -> Result<(usize, usize)> {
        if m == 0 || m > self.len() {
            return Err(Error::Index {
                index: m,
                len: self.len(),
            });
        }
        Ok(((m - 1) / self.n_theta + 1, (m - 1) % self.n_theta + 1))
    }

    /// Inverse of [`index_maps`](Self::index_maps): `(n, l) ↦ (n−1)·L + l`.
    pub fn flat(&self, n: usize, l: usize) -> Result<usize> {
        if n == 0 || n > self.n_spatial {
            return Err(Error::Index {
                index: n,
                len: self.n_spatial,
            });
        }
        if l == 0 || l > self.n_theta {
            return Err(Error::Index {
                index: l,
                len: self.n_theta,
            });
        }
        Ok((n - 1) * self.n_theta + l)
    }
}

/// Names of the five axes in `β` / point order.
pub const AXIS_NAMES: [&str; 5] = ["x1", "x2", "v", "z", "t"];

/// The full discretization of Ω × Θ.
#[derive(Debug, Clone)]
pub struct DiscreteBasis<T> {
    smoothness: Smoothness,
    omega: TensorBasis<T>,
    theta: TensorBasis<T>,
    /// First-derivative weights in `[x1, x2, v, z, t]` order.
    beta: [T; 5],
    quadrature: Quadrature,
}

impl<T: Real> DiscreteBasis<T> {
    /// `grids` in `[x1, x2, v, z, t]` order.
    pub fn new(
        smoothness: Smoothness,
        grids: [AxisGrid<T>; 5],
        beta: [T; 5],
        quadrature: Quadrature,
    ) -> Result<Self> {
        if beta.iter().any(|b| !(*b >= T::zero()) || !b.is_finite()) {
            return Err(Error::Config("β weights must be finite and non-negative".into()));
        }
        if quadrature.points < 2 {
            return Err(Error::Config("quadrature needs at least 2 points".into()));
        }
        let [x1, x2, v, z, t] = grids;
        let mk = |g| Basis1d::new(smoothness, g);
        Ok(Self {
            smoothness,
            omega: TensorBasis::new(vec![mk(x2), mk(x1)]),
            theta: TensorBasis::new(vec![mk(v), mk(z), mk(t)]),
            beta,
            quadrature,
        })
    }

    /// Same as [`new`](Self::new) with a scalar β on every axis.
    pub fn with_scalar_beta(
        smoothness: Smoothness,
        grids: [AxisGrid<T>; 5],
        beta: T,
        quadrature: Quadrature,
    ) -> Result<Self> {
        Self::new(smoothness, grids, [beta; 5], quadrature)
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn beta(&self) -> [T; 5] {
        self.beta
    }

    pub fn quadrature(&self) -> &Quadrature {
        &self.quadrature
    }

    pub fn omega(&self) -> &TensorBasis<T> {
        &self.omega
    }

    pub fn theta(&self) -> &TensorBasis<T> {
        &self.theta
    }

    pub fn x1(&self) -> &Basis1d<T> {
        &self.omega.axes()[1]
    }

    pub fn x2(&self) -> &Basis1d<T> {
        &self.omega.axes()[0]
    }

    pub fn v(&self) -> &Basis1d<T> {
        &self.theta.axes()[0]
    }

    pub fn z(&self) -> &Basis1d<T> {
        &self.theta.axes()[1]
    }

    pub fn t(&self) -> &Basis1d<T> {
        &self.theta.axes()[2]
    }

    /// Number of spatial functions ψ_n.
    pub fn n_spatial(&self) -> usize {
        self.omega.len()
    }

    /// Number of θ functions φ_l.
    pub fn n_theta(&self) -> usize {
        self.theta.len()
    }

    pub fn layout(&self) -> CoefficientLayout {
        CoefficientLayout {
            n_spatial: self.n_spatial(),
            n_theta: self.n_theta(),
        }
    }

    /// Lattice shape of the coefficient vector in `[x2, x1, v, z, t]` order (last fastest).
    pub fn lattice_dims(&self) -> [usize; 5] {
        [
            self.x2().len(),
            self.x1().len(),
            self.v().len(),
            self.z().len(),
            self.t().len(),
        ]
    }

    fn betas_for(&self, domain: Domain) -> Vec<T> {
        match domain {
            Domain::Omega => vec![self.beta[1], self.beta[0]],
            Domain::Theta => vec![self.beta[2], self.beta[3], self.beta[4]],
        }
    }

    pub fn assemble_gram(&self, domain: Domain, inner: InnerProduct) -> Result<SparseSym<T>> {
        let basis = match domain {
            Domain::Omega => &self.omega,
            Domain::Theta => &self.theta,
        };
        basis.gram(inner, &self.betas_for(domain), &self.quadrature)
    }

    pub fn assemble_grams(&self) -> Result<GramMatrices<T>> {
        let psi = self.assemble_gram(Domain::Omega, InnerProduct::SobolevBeta)?;
        let phi = self.assemble_gram(Domain::Theta, InnerProduct::SobolevBeta)?;
        let g = self.assemble_gram(Domain::Omega, InnerProduct::L2)?;
        let c_n = if self.smoothness == Smoothness::Constant
            && self.x1().grid().is_uniform()
            && self.x2().grid().is_uniform()
        {
            Some(g.get(0, 0))
        } else {
            None
        };
        Ok(GramMatrices { psi, phi, g, c_n })
    }

    /// Evaluates `f(x, θ) = Σ_m u_m ψ_{n(m)}(x) φ_{l(m)}(θ)` at `point = [x1, x2, v, z, t]`.
    pub fn coefficients_to_function(&self, u: &[T], point: [T; 5]) -> Result<T> {
        let layout = self.layout();
        if u.len() != layout.len() {
            return Err(Error::Dimension {
                expected: layout.len(),
                got: u.len(),
            });
        }
        let outside = || Error::OutsideDomain(point.iter().map(|x| x.to_f64_lossy()).collect());
        let sp = self.omega.active(&[point[1], point[0]]).ok_or_else(outside)?;
        let th = self.theta.active(&[point[2], point[3], point[4]]).ok_or_else(outside)?;
        let l = layout.n_theta;
        Ok(sp
            .iter()
            .map(|&(n, a)| th.iter().map(|&(k, b)| u[n * l + k] * b).sum::<T>() * a)
            .sum())
    }
}

/// Gram matrices of a [`DiscreteBasis`].
#[derive(Debug, Clone)]
pub struct GramMatrices<T> {
    /// `⟨ψ_i, ψ_j⟩_{s,β}` on Ω.
    pub psi: SparseSym<T>,
    /// `⟨φ_i, φ_j⟩_{s,β}` on Θ.
    pub phi: SparseSym<T>,
    /// `⟨ψ_i, ψ_j⟩_{L²(Ω)}`; also the data-space Gram.
    pub g: SparseSym<T>,
    /// Cell area when `g = c_N · I` (s=0 on uniform Ω grids).
    pub c_n: Option<T>,
}

impl<T: Real> GramMatrices<T> {
    pub fn nmat(&self) -> &SparseSym<T> {
        &self.g
    }
}

/// Axis node placement in a grid specification file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Uniform,
    Geometric,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    pub spacing: Spacing,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<f64>>,
}

impl AxisSpec {
    pub fn uniform(min: f64, max: f64, count: usize) -> Self {
        Self {
            min: Some(min),
            max: Some(max),
            count: Some(count),
            spacing: Spacing::Uniform,
            nodes: None,
        }
    }

    pub fn geometric(min: f64, max: f64, count: usize) -> Self {
        Self {
            spacing: Spacing::Geometric,
            ..Self::uniform(min, max, count)
        }
    }

    pub fn build<T: Real>(&self, name: &str) -> Result<AxisGrid<T>> {
        let need = |o: Option<f64>, what: &str| {
            o.ok_or_else(|| Error::Config(format!("axis {name}: missing {what}")))
        };
        let grid = match self.spacing {
            Spacing::Explicit => {
                let nodes = self
                    .nodes
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("axis {name}: explicit spacing needs `nodes`")))?;
                AxisGrid::new(nodes.iter().map(|&x| T::lit(x)).collect())
            }
            Spacing::Uniform | Spacing::Geometric => {
                let min = T::lit(need(self.min, "min")?);
                let max = T::lit(need(self.max, "max")?);
                let count = self
                    .count
                    .ok_or_else(|| Error::Config(format!("axis {name}: missing count")))?;
                if self.spacing == Spacing::Uniform {
                    AxisGrid::uniform(min, max, count)
                } else {
                    AxisGrid::geometric(min, max, count)
                }
            }
        };
        grid.map_err(|e| Error::Config(format!("axis {name}: {e}")))
    }
}

/// Node grids for all five axes; the on-disk grid specification.
///
/// ```toml
/// [v]
/// min = -1000.0
/// max = 1000.0
/// count = 15
/// spacing = "uniform"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x1: AxisSpec,
    pub x2: AxisSpec,
    pub v: AxisSpec,
    pub z: AxisSpec,
    pub t: AxisSpec,
}

impl GridSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(format!("grid spec: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("grid spec serializes")
    }

    pub fn build<T: Real>(&self) -> Result<[AxisGrid<T>; 5]> {
        Ok([
            self.x1.build("x1")?,
            self.x2.build("x2")?,
            self.v.build("v")?,
            self.z.build("z")?,
            self.t.build("t")?,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_basis(s: Smoothness, beta: f64) -> DiscreteBasis<f64> {
        let grids = [
            AxisGrid::uniform(-1.0, 1.0, 4).unwrap(),
            AxisGrid::uniform(-1.0, 1.0, 4).unwrap(),
            AxisGrid::uniform(-1000.0, 1000.0, 5).unwrap(),
            AxisGrid::uniform(-2.0, 0.3, 3).unwrap(),
            AxisGrid::geometric(0.1, 12.0, 4).unwrap(),
        ];
        DiscreteBasis::with_scalar_beta(s, grids, beta, Quadrature::default()).unwrap()
    }

    #[test]
    fn axis_grid_invariants() {
        assert!(AxisGrid::<f64>::new(vec![0.0]).is_err());
        assert!(AxisGrid::<f64>::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(AxisGrid::<f64>::new(vec![0.0, 2.0, 1.0]).is_err());
        let g = AxisGrid::<f64>::uniform(-1.0, 1.0, 26).unwrap();
        assert!(g.is_uniform());
        assert_eq!(g.cells(), 25);
        let h = AxisGrid::<f64>::geometric(0.015, 14.25, 19).unwrap();
        assert!(!h.is_uniform());
        assert_eq!(h.min(), 0.015);
        assert_eq!(h.max(), 14.25);
        assert!(AxisGrid::<f64>::new(vec![0.0, 0.5, 1.0]).unwrap().is_uniform());
    }

    #[test]
    fn cell_lookup_is_closed_at_the_right_end() {
        let g = AxisGrid::<f64>::uniform(0.0, 3.0, 4).unwrap();
        assert_eq!(g.cell_of(0.0), Some(0));
        assert_eq!(g.cell_of(1.0), Some(1));
        assert_eq!(g.cell_of(3.0), Some(2));
        assert_eq!(g.cell_of(3.1), None);
    }

    #[test]
    fn index_map_examples() {
        let paper = CoefficientLayout {
            n_spatial: 625,
            n_theta: 2808,
        };
        assert_eq!(paper.index_maps(1).unwrap(), (1, 1));
        assert_eq!(paper.index_maps(2809).unwrap(), (2, 1));
        assert_eq!(paper.index_maps(1_755_000).unwrap(), (625, 2808));
        assert!(matches!(paper.index_maps(0), Err(Error::Index { .. })));
        assert!(matches!(paper.index_maps(1_755_001), Err(Error::Index { .. })));
    }

    #[test]
    fn index_maps_bijective_small() {
        let layout = CoefficientLayout {
            n_spatial: 3,
            n_theta: 4,
        };
        let mut seen = std::collections::HashSet::new();
        for m in 1..=12 {
            let (n, l) = layout.index_maps(m).unwrap();
            assert!((1..=3).contains(&n) && (1..=4).contains(&l));
            assert!(seen.insert((n, l)));
            assert_eq!(layout.flat(n, l).unwrap(), m);
        }
        assert_eq!(seen.len(), 12);
    }

    #[test]
    fn index_maps_roundtrip_exhaustive() {
        for (n, l) in [(1, 10_000), (100, 100), (7, 13), (625, 16)] {
            let layout = CoefficientLayout {
                n_spatial: n,
                n_theta: l,
            };
            for m in 1..=layout.len() {
                let (a, b) = layout.index_maps(m).unwrap();
                assert_eq!(layout.flat(a, b).unwrap(), m);
            }
        }
    }

    #[test]
    fn piecewise_constant_gram_on_paper_omega_is_cell_area() {
        let grids = [
            AxisGrid::uniform(-1.0, 1.0, 26).unwrap(),
            AxisGrid::uniform(-1.0, 1.0, 26).unwrap(),
            AxisGrid::uniform(-1000.0, 1000.0, 3).unwrap(),
            AxisGrid::uniform(0.0, 1.0, 2).unwrap(),
            AxisGrid::uniform(0.0, 1.0, 2).unwrap(),
        ];
        let basis =
            DiscreteBasis::<f64>::with_scalar_beta(Smoothness::Constant, grids, 1.0, Quadrature::default())
                .unwrap();
        let g = basis.assemble_gram(Domain::Omega, InnerProduct::L2).unwrap();
        assert_eq!(g.dim(), 625);
        assert!(g.is_diagonal());
        for d in g.diagonal() {
            assert!((d - 0.0064).abs() < 1e-15);
        }
        let grams = basis.assemble_grams().unwrap();
        assert!((grams.c_n.unwrap() - 0.0064).abs() < 1e-15);
        assert!(grams.psi.is_diagonal() && grams.phi.is_diagonal());
    }

    #[test]
    fn hat_gram_matches_closed_form() {
        let h = 0.25;
        let grid = AxisGrid::<f64>::uniform(0.0, 2.0, 9).unwrap();
        let basis = Basis1d::new(Smoothness::Linear, grid);
        let (mass, stiff) = basis.gram_1d(&Quadrature::default()).unwrap();
        let i = 3;
        let diag = lookup(&mass[i], i);
        let off = lookup(&mass[i], i + 1);
        assert!((diag - 2.0 * h / 3.0).abs() / (2.0 * h / 3.0) <= 1e-4);
        assert!((off - h / 6.0).abs() / (h / 6.0) <= 1e-4);
        assert!((lookup(&stiff[i], i) - 2.0 / h).abs() < 1e-10);
        assert!((lookup(&stiff[i], i + 1) + 1.0 / h).abs() < 1e-10);
        // boundary hat: flat half cell plus a descending ramp
        assert!((lookup(&mass[0], 0) - (h / 2.0 + h / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn plain_trapezoid_converges_towards_closed_form() {
        let grid = AxisGrid::<f64>::uniform(0.0, 2.0, 9).unwrap();
        let basis = Basis1d::new(Smoothness::Linear, grid);
        let (coarse, _) = basis.gram_1d(&Quadrature::trapezoid(50)).unwrap();
        let (fine, _) = basis.gram_1d(&Quadrature::trapezoid(400)).unwrap();
        let exact = 0.25 / 6.0;
        let e1 = (lookup(&coarse[3], 4) - exact).abs();
        let e2 = (lookup(&fine[3], 4) - exact).abs();
        assert!(e2 < e1 / 10.0);
    }

    #[test]
    fn beta_zero_reduces_to_l2() {
        let basis = small_basis(Smoothness::Linear, 0.0);
        for domain in [Domain::Omega, Domain::Theta] {
            let a = basis.assemble_gram(domain, InnerProduct::SobolevBeta).unwrap();
            let b = basis.assemble_gram(domain, InnerProduct::L2).unwrap();
            for (x, y) in a.to_dense().iter().zip(b.to_dense()) {
                assert!((x - y).abs() <= 1e-10 * y.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn hat_grams_are_symmetric_positive_definite() {
        let basis = small_basis(Smoothness::Linear, 1.0);
        let grams = basis.assemble_grams().unwrap();
        for m in [&grams.psi, &grams.phi, &grams.g] {
            assert!(m.max_asymmetry() < 1e-12 * m.diagonal().iter().cloned().fold(0.0, f64::max));
            m.cholesky().unwrap();
        }
        // tensor neighbours only
        assert!(grams.phi.bandwidth() <= basis.theta().strides()[0] + basis.theta().strides()[1] + 1);
    }

    #[test]
    fn quadrature_doubling_is_stable_for_hats() {
        let basis = small_basis(Smoothness::Linear, 0.5);
        let mut finer = basis.clone();
        finer.quadrature.points = 99;
        for domain in [Domain::Omega, Domain::Theta] {
            let a = basis.assemble_gram(domain, InnerProduct::SobolevBeta).unwrap().to_dense();
            let b = finer.assemble_gram(domain, InnerProduct::SobolevBeta).unwrap().to_dense();
            for (x, y) in a.iter().zip(&b) {
                if *y != 0.0 {
                    assert!(((x - y) / y).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn node_weights_agree_with_integrate() {
        let f = |x: f64| (3.0 * x).sin() + x * x;
        for q in [Quadrature::default(), Quadrature::trapezoid(17)] {
            let br = [0.0, 0.4, 1.3];
            let a = q.integrate_pieces(&br, |x, _| f(x));
            let b: f64 = q.nodes_weights(&br).iter().map(|&(x, w)| w * f(x)).sum();
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn coefficients_to_function_examples() {
        let basis = small_basis(Smoothness::Constant, 1.0);
        let m = basis.layout().len();
        let zero = vec![0.0; m];
        assert_eq!(
            basis.coefficients_to_function(&zero, [0.1, -0.3, 20.0, -1.0, 3.0]).unwrap(),
            0.0
        );
        // unit vector at (n, l): cell centre evaluates to 1
        let n = 4;
        let l = 7;
        let mut u = zero.clone();
        u[n * basis.n_theta() + l] = 1.0;
        let om = basis.omega().multi_index(n);
        let th = basis.theta().multi_index(l);
        let p = [
            basis.x1().centers()[om[1]],
            basis.x2().centers()[om[0]],
            basis.v().centers()[th[0]],
            basis.z().centers()[th[1]],
            basis.t().centers()[th[2]],
        ];
        assert_eq!(basis.coefficients_to_function(&u, p).unwrap(), 1.0);
        assert!(matches!(
            basis.coefficients_to_function(&u, [2.0, 0.0, 0.0, -1.0, 1.0]),
            Err(Error::OutsideDomain(_))
        ));
    }

    #[test]
    fn hats_are_nodal() {
        let basis = small_basis(Smoothness::Linear, 1.0);
        let m = basis.layout().len();
        let u: Vec<f64> = (0..m).map(|i| ((i * 37 % 101) as f64).sin()).collect();
        for (n, l) in [(0usize, 0usize), (4, 5), (8, 15), (2, 9)] {
            let om = basis.omega().multi_index(n);
            let th = basis.theta().multi_index(l);
            let p = [
                basis.x1().centers()[om[1]],
                basis.x2().centers()[om[0]],
                basis.v().centers()[th[0]],
                basis.z().centers()[th[1]],
                basis.t().centers()[th[2]],
            ];
            let f = basis.coefficients_to_function(&u, p).unwrap();
            assert!((f - u[n * basis.n_theta() + l]).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_spec_parses_all_spacings() {
        let text = r#"
            [x1]
            min = -1.0
            max = 1.0
            count = 5
            spacing = "uniform"
            [x2]
            min = -1.0
            max = 1.0
            count = 5
            spacing = "uniform"
            [v]
            min = -1000.0
            max = 1000.0
            count = 9
            spacing = "uniform"
            [z]
            spacing = "explicit"
            nodes = [-2.66, -1.0, 0.36]
            [t]
            min = 0.015
            max = 14.25
            count = 6
            spacing = "geometric"
        "#;
        let spec = GridSpec::from_toml_str(text).unwrap();
        let grids = spec.build::<f64>().unwrap();
        assert_eq!(grids[3].nodes(), &[-2.66, -1.0, 0.36]);
        assert_eq!(grids[4].len(), 6);
        let again = GridSpec::from_toml_str(&spec.to_toml_string()).unwrap();
        assert_eq!(again, spec);
        let bad = text.replace("nodes = [-2.66, -1.0, 0.36]", "");
        assert!(GridSpec::from_toml_str(&bad).unwrap().build::<f64>().is_err());
    }
}
