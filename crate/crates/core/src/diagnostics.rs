//! Marginals, mean population maps, light-weighted LOSVDs and Gauss-Hermite
//! kinematic maps of a coefficient vector.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid_basis::{Basis1d, DiscreteBasis};
use crate::linalg::{Dense, DenseLu};
use crate::numeric::Real;
use crate::templates::{nodal_overlaps, TemplateGrid};

/// Value written to masked or failed map cells.
pub const SENTINEL: f64 = -9999.0;

/// Cells with `p(x) ≤ DENSITY_FLOOR · max p` are masked.
pub const DENSITY_FLOOR: f64 = 1e-6;

/// Mass marginals. Spatial quantities are expansion coefficients on the Ω
/// basis, equal to the values at the Ω basis centres.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals<T> {
    pub total_mass: T,
    /// `p(x)`, length N.
    pub p_x: Vec<T>,
    /// `p(x, z)` as `[n][z]` coefficients.
    pub p_xz: Vec<T>,
    /// `p(x, t)` as `[n][t]` coefficients.
    pub p_xt: Vec<T>,
}

fn check_len<T>(u: &[T], expected: usize) -> Result<()> {
    if u.len() != expected {
        return Err(Error::Dimension {
            expected,
            got: u.len(),
        });
    }
    Ok(())
}

fn integrals<T: Real>(b: &Basis1d<T>, basis: &DiscreteBasis<T>) -> Vec<T> {
    (0..b.len()).map(|i| b.integral(i, basis.quadrature())).collect()
}

fn first_moments<T: Real>(b: &Basis1d<T>, basis: &DiscreteBasis<T>) -> Vec<T> {
    (0..b.len()).map(|i| b.first_moment(i, basis.quadrature())).collect()
}

/// Integrates the expansion of `u` over the indicated axes, exactly for the basis.
pub fn marginals<T: Real>(u: &[T], basis: &DiscreteBasis<T>) -> Result<Marginals<T>> {
    let (n, l) = (basis.n_spatial(), basis.n_theta());
    check_len(u, n * l)?;
    let (iv, iz, it) = (integrals(basis.v(), basis), integrals(basis.z(), basis), integrals(basis.t(), basis));
    let (nz, nt) = (iz.len(), it.len());
    let omega_int = basis.omega().integrals(basis.quadrature());
    let mut p_xz = vec![T::zero(); n * nz];
    let mut p_xt = vec![T::zero(); n * nt];
    p_xz.par_chunks_mut(nz)
        .zip(p_xt.par_chunks_mut(nt))
        .zip(u.par_chunks(l))
        .for_each(|((pz, pt), row)| {
            for (a, &wv) in iv.iter().enumerate() {
                for b in 0..nz {
                    for c in 0..nt {
                        let x = row[(a * nz + b) * nt + c] * wv;
                        pz[b] += x * it[c];
                        pt[c] += x * iz[b];
                    }
                }
            }
        });
    let p_raw: Vec<T> = p_xz
        .chunks(nz)
        .map(|r| r.iter().zip(&iz).map(|(&a, &b)| a * b).sum())
        .collect();
    let total_mass: T = p_raw.iter().zip(&omega_int).map(|(&a, &b)| a * b).sum();
    let scale = if total_mass > T::zero() { T::one() / total_mass } else { T::zero() };
    let norm = |v: Vec<T>| v.into_iter().map(|x| x * scale).collect::<Vec<T>>();
    Ok(Marginals {
        total_mass,
        p_x: norm(p_raw),
        p_xz: norm(p_xz),
        p_xt: norm(p_xt),
    })
}

/// `p(x) > floor · max p` per spatial coefficient.
pub fn density_mask<T: Real>(p_x: &[T]) -> Vec<bool> {
    let max = p_x.iter().copied().fold(T::zero(), T::max);
    let floor = T::lit(DENSITY_FLOOR) * max;
    p_x.iter().map(|&p| max > T::zero() && p > floor).collect()
}

/// Mean metallicity and age maps `(μ_z, μ_t)`, sentinel where masked.
pub fn mean_maps<T: Real>(m: &Marginals<T>, basis: &DiscreteBasis<T>) -> (Vec<T>, Vec<T>) {
    let mask = density_mask(&m.p_x);
    let mean = |p: &[T], b: &Basis1d<T>| -> Vec<T> {
        let (w, mom) = (integrals(b, basis), first_moments(b, basis));
        p.chunks(w.len())
            .zip(&mask)
            .map(|(row, &ok)| {
                if !ok {
                    return T::lit(SENTINEL);
                }
                let num: T = row.iter().zip(&mom).map(|(&a, &b)| a * b).sum();
                let den: T = row.iter().zip(&w).map(|(&a, &b)| a * b).sum();
                num / den
            })
            .collect()
    };
    (mean(&m.p_xz, basis.z()), mean(&m.p_xt, basis.t()))
}

/// `∫∫ L(z, t) φ_z φ_t` for every `(z, t)` basis pair, `[z][t]`, with
/// `L = ∫ S dλ` over the observed window, bilinear between template nodes.
pub fn light_weights<T: Real>(basis: &DiscreteBasis<T>, templates: &TemplateGrid<T>) -> Vec<T> {
    let quad = basis.quadrature();
    let oz = nodal_overlaps(basis.z(), templates.z(), quad);
    let ot = nodal_overlaps(basis.t(), templates.t(), quad);
    let light = templates.light_table();
    let ntt = templates.t().len();
    let mut out = Vec::with_capacity(oz.len() * ot.len());
    for rz in &oz {
        for rt in &ot {
            let mut s = T::zero();
            for &(a, wa) in rz {
                for &(b, wb) in rt {
                    s += light[a * ntt + b] * wa * wb;
                }
            }
            out.push(s);
        }
    }
    out
}

/// `∫φ_z · ∫φ_t`: the weights that give the mass-weighted LOSVD.
pub fn mass_weights<T: Real>(basis: &DiscreteBasis<T>) -> Vec<T> {
    let (iz, it) = (integrals(basis.z(), basis), integrals(basis.t(), basis));
    iz.iter().flat_map(|&a| it.iter().map(move |&b| a * b)).collect()
}

/// Normalized velocity distribution at one position, sampled at the v basis centres.
#[derive(Debug, Clone, PartialEq)]
pub struct LosvdSample<T> {
    pub position: [T; 2],
    pub v: Vec<T>,
    pub p: Vec<T>,
    /// False when there is no weight at the position; `p` is then all zero.
    pub valid: bool,
}

/// Trapezoid integral of samples `p` on nodes `v`.
pub fn trapezoid<T: Real>(v: &[T], p: &[T]) -> T {
    v.windows(2)
        .zip(p.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) * T::lit(0.5))
        .sum()
}

/// LOSVD at `x` with population weights `zt_weights` (`[z][t]`).
pub fn losvd_with_weights<T: Real>(
    u: &[T],
    basis: &DiscreteBasis<T>,
    zt_weights: &[T],
    x: [T; 2],
) -> Result<LosvdSample<T>> {
    let l = basis.n_theta();
    check_len(u, basis.n_spatial() * l)?;
    check_len(zt_weights, basis.z().len() * basis.t().len())?;
    let outside = || Error::OutsideDomain(vec![x[0].to_f64_lossy(), x[1].to_f64_lossy()]);
    let a1 = basis.x1().active(x[0]).ok_or_else(outside)?;
    let a2 = basis.x2().active(x[1]).ok_or_else(outside)?;
    let n1 = basis.x1().len();
    let nzt = zt_weights.len();
    let mut p = vec![T::zero(); basis.v().len()];
    for &(j, w2) in &a2 {
        for &(i, w1) in &a1 {
            let row = &u[(j * n1 + i) * l..(j * n1 + i + 1) * l];
            for (pv, chunk) in p.iter_mut().zip(row.chunks(nzt)) {
                let s: T = chunk.iter().zip(zt_weights).map(|(&a, &b)| a * b).sum();
                *pv += w1 * w2 * s;
            }
        }
    }
    let v = basis.v().centers().to_vec();
    let total = trapezoid(&v, &p);
    let valid = total > T::zero() && p.iter().all(|&x| x >= T::zero());
    let p = if valid {
        p.into_iter().map(|x| x / total).collect()
    } else {
        vec![T::zero(); v.len()]
    };
    Ok(LosvdSample {
        position: x,
        v,
        p,
        valid,
    })
}

/// Light-weighted `p_LW(v | x)`.
pub fn light_weighted_losvd<T: Real>(
    u: &[T],
    basis: &DiscreteBasis<T>,
    templates: &TemplateGrid<T>,
    x: [T; 2],
) -> Result<LosvdSample<T>> {
    losvd_with_weights(u, basis, &light_weights(basis, templates), x)
}

/// 3×3 positions at 1/6, 1/2, 5/6 of each Ω axis.
pub fn default_losvd_positions<T: Real>(basis: &DiscreteBasis<T>) -> Vec<[T; 2]> {
    let at = |b: &Basis1d<T>, f: f64| b.grid().min() + T::lit(f) * (b.grid().max() - b.grid().min());
    let fr = [1.0 / 6.0, 0.5, 5.0 / 6.0];
    fr.iter()
        .flat_map(|&f2| fr.iter().map(move |&f1| [at(basis.x1(), f1), at(basis.x2(), f2)]))
        .collect()
}

/// Gauss-Hermite fit `γ e^{−w²/2} [1 + Σ_{k≥3} h_k H_k(w)]`, `w = (v − μ)/σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GhFit<T> {
    pub gamma: T,
    pub mu: T,
    pub sigma: T,
    /// `h_3 … h_order`.
    pub h: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> GhFit<T> {
    /// `h_k`, or zero beyond the fitted order.
    pub fn h(&self, k: usize) -> T {
        k.checked_sub(3).and_then(|i| self.h.get(i)).copied().unwrap_or(T::zero())
    }

    pub fn evaluate(&self, v: T) -> T {
        let w = (v - self.mu) / self.sigma;
        let hs = hermite(w, self.h.len() + 2);
        let series = T::one() + self.h.iter().zip(&hs[3..]).map(|(&a, &b)| a * b).sum::<T>();
        self.gamma * (-(w * w) * T::lit(0.5)).exp() * series
    }
}

/// Orthonormal Hermite functions' polynomial factors `H_0 … H_order`
/// (`H_1 = √2 w`, `H_2 = (2w² − 1)/√2`, …).
pub fn hermite<T: Real>(w: T, order: usize) -> Vec<T> {
    let s2 = T::lit(std::f64::consts::SQRT_2);
    let mut h = Vec::with_capacity(order + 1);
    h.push(T::one());
    if order >= 1 {
        h.push(s2 * w);
    }
    for k in 1..order {
        let kk = T::from_usize_lossy(k);
        let next = (s2 * w * h[k] - kk.sqrt() * h[k - 1]) / (kk + T::one()).sqrt();
        h.push(next);
    }
    h
}

fn trapezoid_weights<T: Real>(v: &[T]) -> Vec<T> {
    let n = v.len();
    let half = T::lit(0.5);
    (0..n)
        .map(|i| {
            let left = if i > 0 { v[i] - v[i - 1] } else { T::zero() };
            let right = if i + 1 < n { v[i + 1] - v[i] } else { T::zero() };
            half * (left + right)
        })
        .collect()
}

/// Weighted least squares `min Σ w (y − A c)²` via normal equations; `cols` are the columns of A.
fn weighted_lstsq<T: Real>(cols: &[Vec<T>], w: &[T], y: &[T]) -> Result<Vec<T>> {
    let k = cols.len();
    let a = Dense::from_fn(k, k, |i, j| cols[i].iter().zip(&cols[j]).zip(w).map(|((&x, &y), &z)| x * y * z).sum());
    let b: Vec<T> = cols.iter().map(|c| c.iter().zip(y).zip(w).map(|((&x, &y), &z)| x * y * z).sum()).collect();
    Ok(DenseLu::factor(&a)?.solve(&b))
}

/// Levenberg-Marquardt over `(γ, μ, σ)` for the Gaussian, then a linear
/// solve for `(γ, h_3 … h_order)` at fixed `(μ, σ)`. Residuals are weighted by
/// trapezoid weights of the sample grid.
pub fn gauss_hermite_fit<T: Real>(v: &[T], p: &[T], order: usize) -> Result<GhFit<T>> {
    if !(3..=12).contains(&order) {
        return Err(Error::Config(format!("Gauss-Hermite order {order} outside 3..=12")));
    }
    check_len(p, v.len())?;
    if v.len() < order + 1 {
        return Err(Error::Config("too few velocity samples for the requested order".into()));
    }
    let wq = trapezoid_weights(v);
    let failed = |it| GhFit {
        gamma: T::lit(SENTINEL),
        mu: T::lit(SENTINEL),
        sigma: T::lit(SENTINEL),
        h: vec![T::lit(SENTINEL); order - 2],
        iterations: it,
        converged: false,
    };
    let mass = trapezoid(v, p);
    if !(mass > T::zero()) {
        return Ok(failed(0));
    }
    let mean = v.iter().zip(p).zip(&wq).map(|((&a, &b), &c)| a * b * c).sum::<T>() / mass;
    let var = v
        .iter()
        .zip(p)
        .zip(&wq)
        .map(|((&a, &b), &c)| (a - mean) * (a - mean) * b * c)
        .sum::<T>()
        / mass;
    let mut q = [p.iter().copied().fold(T::zero(), T::max), mean, var.sqrt()];
    if !(q[2] > T::zero()) {
        let dv = (v[v.len() - 1] - v[0]) / T::from_usize_lossy(v.len());
        q[2] = dv;
    }
    let cost = |q: &[T; 3]| -> T {
        v.iter()
            .zip(p)
            .zip(&wq)
            .map(|((&x, &y), &c)| {
                let w = (x - q[1]) / q[2];
                let r = y - q[0] * (-(w * w) * T::lit(0.5)).exp();
                c * r * r
            })
            .sum()
    };
    let mut lambda = T::lit(1e-3);
    let mut c0 = cost(&q);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=200 {
        iterations = it;
        let mut jtj = [[T::zero(); 3]; 3];
        let mut jtr = [T::zero(); 3];
        for ((&x, &y), &c) in v.iter().zip(p).zip(&wq) {
            let w = (x - q[1]) / q[2];
            let e = (-(w * w) * T::lit(0.5)).exp();
            let r = y - q[0] * e;
            let j = [e, q[0] * e * w / q[2], q[0] * e * w * w / q[2]];
            for a in 0..3 {
                jtr[a] += c * j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += c * j[a] * j[b];
                }
            }
        }
        let mut stepped = false;
        for _ in 0..40 {
            let a = Dense::from_fn(3, 3, |i, j| {
                if i == j {
                    jtj[i][j] * (T::one() + lambda)
                } else {
                    jtj[i][j]
                }
            });
            let Ok(lu) = DenseLu::factor(&a) else {
                lambda *= T::lit(10.0);
                continue;
            };
            let d = lu.solve(&jtr);
            let trial = [q[0] + d[0], q[1] + d[1], q[2] + d[2]];
            let ct = if trial[2] > T::zero() { cost(&trial) } else { T::infinity() };
            if ct.is_finite() && ct <= c0 {
                let scale = [q[0].abs(), q[2], q[2]];
                let rel = (0..3)
                    .map(|i| d[i].abs() / scale[i].max(T::min_positive_value()))
                    .fold(T::zero(), T::max);
                q = trial;
                c0 = ct;
                lambda = (lambda * T::lit(0.3)).max(T::lit(1e-12));
                stepped = true;
                if rel < T::lit(1e-8) {
                    converged = true;
                }
                break;
            }
            lambda *= T::lit(10.0);
        }
        if !stepped {
            // no descent direction left: already at the minimum to working precision
            converged = c0.is_finite();
        }
        if converged || !stepped {
            break;
        }
    }
    if !converged || !(q[2] > T::zero()) {
        return Ok(failed(iterations));
    }
    let (mu, sigma) = (q[1], q[2]);
    let cols: Vec<Vec<T>> = std::iter::once(0)
        .chain(3..=order)
        .map(|k| {
            v.iter()
                .map(|&x| {
                    let w = (x - mu) / sigma;
                    (-(w * w) * T::lit(0.5)).exp() * hermite(w, order)[k]
                })
                .collect()
        })
        .collect();
    let c = match weighted_lstsq(&cols, &wq, p) {
        Ok(c) if c[0] > T::zero() => c,
        _ => return Ok(failed(iterations)),
    };
    Ok(GhFit {
        gamma: c[0],
        mu,
        sigma,
        h: c[1..].iter().map(|&x| x / c[0]).collect(),
        iterations,
        converged: true,
    })
}

/// Kinematic and population maps on the Ω basis centres, `[x2][x1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMaps<T> {
    pub x1: Vec<T>,
    pub x2: Vec<T>,
    pub mu_t: Vec<T>,
    pub mu_z: Vec<T>,
    pub mu_v: Vec<T>,
    pub sigma_v: Vec<T>,
    pub h3: Vec<T>,
    pub h4: Vec<T>,
    pub h5: Vec<T>,
    pub mask: Vec<bool>,
}

impl<T: Real> MomentMaps<T> {
    pub fn nx1(&self) -> usize {
        self.x1.len()
    }

    pub fn nx2(&self) -> usize {
        self.x2.len()
    }
}

/// Gauss-Hermite order used for the maps, lowered on coarse velocity grids
/// to what the samples support.
pub const MAP_GH_ORDER: usize = 6;

/// Population means from the mass marginals, kinematics from Gauss-Hermite
/// fits of the light-weighted LOSVD at each Ω basis centre.
pub fn moment_maps<T: Real>(u: &[T], basis: &DiscreteBasis<T>, templates: &TemplateGrid<T>) -> Result<MomentMaps<T>> {
    let m = marginals(u, basis)?;
    let (mu_z, mu_t) = mean_maps(&m, basis);
    let dmask = density_mask(&m.p_x);
    let lw = light_weights(basis, templates);
    let (x1, x2) = (basis.x1().centers().to_vec(), basis.x2().centers().to_vec());
    let order = MAP_GH_ORDER.min(basis.v().len().saturating_sub(1));
    let fits: Vec<Option<GhFit<T>>> = (0..basis.n_spatial())
        .into_par_iter()
        .map(|n| -> Result<Option<GhFit<T>>> {
            if !dmask[n] || order < 3 {
                return Ok(None);
            }
            let pos = [x1[n % x1.len()], x2[n / x1.len()]];
            let s = losvd_with_weights(u, basis, &lw, pos)?;
            if !s.valid {
                return Ok(None);
            }
            let f = gauss_hermite_fit(&s.v, &s.p, order)?;
            Ok(f.converged.then_some(f))
        })
        .collect::<Result<_>>()?;
    let sentinel = T::lit(SENTINEL);
    let pick = |g: &dyn Fn(&GhFit<T>) -> T| -> Vec<T> { fits.iter().map(|f| f.as_ref().map_or(sentinel, g)).collect() };
    let mask: Vec<bool> = fits.iter().map(Option::is_some).collect();
    let keep = |v: Vec<T>| -> Vec<T> { v.into_iter().zip(&mask).map(|(x, &ok)| if ok { x } else { sentinel }).collect() };
    Ok(MomentMaps {
        mu_t: keep(mu_t),
        mu_z: keep(mu_z),
        mu_v: pick(&|f| f.mu),
        sigma_v: pick(&|f| f.sigma),
        h3: pick(&|f| f.h(3)),
        h4: pick(&|f| f.h(4)),
        h5: pick(&|f| f.h(5)),
        mask,
        x1,
        x2,
    })
}

/// 4-connected components of the set cells on an `nx1 × nx2` grid (`[x2][x1]`).
pub fn connected_regions(cells: &[bool], nx1: usize, nx2: usize) -> Vec<Vec<usize>> {
    assert_eq!(cells.len(), nx1 * nx2);
    let mut seen = vec![false; cells.len()];
    let mut regions = Vec::new();
    for start in 0..cells.len() {
        if !cells[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut region = Vec::new();
        while let Some(c) = stack.pop() {
            region.push(c);
            let (i, j) = (c % nx1, c / nx1);
            let mut nb = Vec::with_capacity(4);
            if i > 0 {
                nb.push(c - 1);
            }
            if i + 1 < nx1 {
                nb.push(c + 1);
            }
            if j > 0 {
                nb.push(c - nx1);
            }
            if j + 1 < nx2 {
                nb.push(c + nx1);
            }
            for d in nb {
                if cells[d] && !seen[d] {
                    seen[d] = true;
                    stack.push(d);
                }
            }
        }
        region.sort_unstable();
        regions.push(region);
    }
    regions
}

const MAP_HEADER: &str = "x1\tx2\tmu_t\tmu_z\tmu_v\tsigma_v\th3\th4\th5\tmask";

fn fmt_real<T: Real>(x: T) -> String {
    format!("{:.16e}", x.to_f64_lossy())
}

/// Writes `maps.tsv` and one `losvd_<k>.tsv` per sample into `dir`.
pub fn export_maps<T: Real>(maps: &MomentMaps<T>, samples: &[LosvdSample<T>], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut s = String::from(MAP_HEADER);
    s.push('\n');
    let n1 = maps.nx1();
    for c in 0..maps.mask.len() {
        let cols = [
            maps.x1[c % n1],
            maps.x2[c / n1],
            maps.mu_t[c],
            maps.mu_z[c],
            maps.mu_v[c],
            maps.sigma_v[c],
            maps.h3[c],
            maps.h4[c],
            maps.h5[c],
        ];
        let line: Vec<String> = cols.iter().map(|&x| fmt_real(x)).collect();
        let _ = writeln!(s, "{}\t{}", line.join("\t"), u8::from(maps.mask[c]));
    }
    let path = dir.join("maps.tsv");
    fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
    for (k, smp) in samples.iter().enumerate() {
        let mut s = format!(
            "# x1 = {} x2 = {} valid = {}\nv\tp\n",
            fmt_real(smp.position[0]),
            fmt_real(smp.position[1]),
            u8::from(smp.valid)
        );
        for (&v, &p) in smp.v.iter().zip(&smp.p) {
            let _ = writeln!(s, "{}\t{}", fmt_real(v), fmt_real(p));
        }
        let path = dir.join(format!("losvd_{k}.tsv"));
        fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Parses a `maps.tsv` written by [`export_maps`].
pub fn read_maps(path: &Path) -> Result<MomentMaps<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MAP_HEADER) {
        return Err(Error::format(path, "missing map header"));
    }
    let mut rows: Vec<[f64; 10]> = Vec::new();
    for (i, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split('\t')
            .map(|x| x.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, format!("row {}: {e}", i + 1)))?;
        let row: [f64; 10] = vals
            .try_into()
            .map_err(|_| Error::format(path, format!("row {}: expected 10 columns", i + 1)))?;
        rows.push(row);
    }
    let mut x1: Vec<f64> = Vec::new();
    for r in &rows {
        if x1.contains(&r[0]) {
            break;
        }
        x1.push(r[0]);
    }
    if x1.is_empty() || !rows.len().is_multiple_of(x1.len()) {
        return Err(Error::format(path, "rows do not form a grid"));
    }
    let x2: Vec<f64> = rows.iter().step_by(x1.len()).map(|r| r[1]).collect();
    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<f64>>();
    Ok(MomentMaps {
        mu_t: col(2),
        mu_z: col(3),
        mu_v: col(4),
        sigma_v: col(5),
        h3: col(6),
        h4: col(7),
        h5: col(8),
        mask: rows.iter().map(|r| r[9] != 0.0).collect(),
        x1,
        x2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_basis::{AxisGrid, Quadrature, Smoothness};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis(s: Smoothness) -> DiscreteBasis<f64> {
        let grids = [
            AxisGrid::uniform(-1.0, 1.0, 5).unwrap(),
            AxisGrid::uniform(-1.0, 1.0, 4).unwrap(),
            AxisGrid::uniform(-1000.0, 1000.0, 9).unwrap(),
            AxisGrid::uniform(-2.0, 0.0, 5).unwrap(),
            AxisGrid::geometric(0.1, 12.0, 4).unwrap(),
        ];
        DiscreteBasis::with_scalar_beta(s, grids, 1.0, Quadrature::default()).unwrap()
    }

    fn gauss(v: f64, mu: f64, s: f64) -> f64 {
        (-0.5 * ((v - mu) / s).powi(2)).exp()
    }

    #[test]
    fn uniform_density_has_flat_marginal() {
        for s in [Smoothness::Constant, Smoothness::Linear] {
            let b = basis(s);
            let u = vec![1.0; b.n_spatial() * b.n_theta()];
            let m = marginals(&u, &b).unwrap();
            for &p in &m.p_x {
                assert!((p - 0.25).abs() < 1e-12, "{p}");
            }
        }
    }

    #[test]
    fn single_cell_stays_in_its_cell() {
        let b = basis(Smoothness::Constant);
        let mut u = vec![0.0; b.n_spatial() * b.n_theta()];
        u[5 * b.n_theta() + 7] = 2.0;
        let m = marginals(&u, &b).unwrap();
        for (n, &p) in m.p_x.iter().enumerate() {
            assert_eq!(p > 0.0, n == 5);
        }
    }

    #[test]
    fn random_density_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for s in [Smoothness::Constant, Smoothness::Linear] {
            let b = basis(s);
            let u: Vec<f64> = (0..b.n_spatial() * b.n_theta()).map(|_| rng.gen::<f64>()).collect();
            let m = marginals(&u, &b).unwrap();
            let w = b.omega().integrals(b.quadrature());
            let total: f64 = m.p_x.iter().zip(&w).map(|(a, b)| a * b).sum();
            assert!((total - 1.0).abs() < 1e-10);
            let (mz, mt) = mean_maps(&m, &b);
            assert!(mz.iter().all(|&z| (-2.0..=0.0).contains(&z)));
            assert!(mt.iter().all(|&t| (0.1..=12.0).contains(&t)));
        }
    }

    #[test]
    fn zero_density_is_fully_masked() {
        let b = basis(Smoothness::Linear);
        let u = vec![0.0; b.n_spatial() * b.n_theta()];
        let m = marginals(&u, &b).unwrap();
        assert_eq!(m.total_mass, 0.0);
        assert!(density_mask(&m.p_x).iter().all(|&x| !x));
        let (mz, _) = mean_maps(&m, &b);
        assert!(mz.iter().all(|&x| x == SENTINEL));
    }

    #[test]
    fn metallicity_at_one_node_and_symmetric_population() {
        let b = basis(Smoothness::Linear);
        let (nz, nt) = (b.z().len(), b.t().len());
        let l = b.n_theta();
        let mut u = vec![0.0; b.n_spatial() * l];
        for n in 0..b.n_spatial() {
            for v in 0..b.v().len() {
                for t in 0..nt {
                    u[n * l + (v * nz + 1) * nt + t] = 1.0 + n as f64;
                }
            }
        }
        let (mz, _) = mean_maps(&marginals(&u, &b).unwrap(), &b);
        assert!(mz.iter().all(|&z| (z - b.z().centers()[1]).abs() < 1e-12));
        // symmetric about the middle node
        for n in 0..b.n_spatial() {
            for v in 0..b.v().len() {
                for t in 0..nt {
                    for (z, w) in [(1, 0.7), (2, 0.7), (0, 0.2), (3, 0.2)] {
                        u[n * l + (v * nz + z) * nt + t] = w;
                    }
                }
            }
        }
        let (mz, _) = mean_maps(&marginals(&u, &b).unwrap(), &b);
        assert!(mz.iter().all(|&z| (z + 1.0).abs() < 1e-10), "{mz:?}");
    }

    #[test]
    fn hermite_polynomials() {
        let h = hermite(0.7_f64, 4);
        let w: f64 = 0.7;
        let s2 = 2f64.sqrt();
        assert!((h[1] - s2 * w).abs() < 1e-14);
        assert!((h[2] - (2.0 * w * w - 1.0) / s2).abs() < 1e-14);
        assert!((h[3] - (2.0 * s2 * w.powi(3) - 3.0 * s2 * w) / 6f64.sqrt()).abs() < 1e-14);
        assert!((h[4] - (4.0 * w.powi(4) - 12.0 * w * w + 3.0) / 24f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn gaussian_fit_is_exact() {
        let v: Vec<f64> = (0..81).map(|i| -1000.0 + 25.0 * i as f64).collect();
        let p: Vec<f64> = v.iter().map(|&x| gauss(x, 120.0, 80.0)).collect();
        for order in [4, 5, 6] {
            let f = gauss_hermite_fit(&v, &p, order).unwrap();
            assert!(f.converged);
            assert!((f.mu - 120.0).abs() < 0.5 && (f.sigma - 80.0).abs() < 0.5);
            assert!(f.h.iter().all(|h| h.abs() < 1e-4), "{:?}", f.h);
        }
    }

    #[test]
    fn fit_of_a_mirrored_profile_flips_odd_terms() {
        let v: Vec<f64> = (0..41).map(|i| -1000.0 + 50.0 * i as f64).collect();
        let p: Vec<f64> = v.iter().map(|&x| gauss(x, 100.0, 120.0) + 0.4 * gauss(x, -200.0, 90.0)).collect();
        let q: Vec<f64> = p.iter().rev().copied().collect();
        let a = gauss_hermite_fit(&v, &p, 5).unwrap();
        let b = gauss_hermite_fit(&v, &q, 5).unwrap();
        assert!((a.mu + b.mu).abs() < 1e-6 && (a.sigma - b.sigma).abs() < 1e-6);
        assert!((a.h(3) + b.h(3)).abs() < 1e-6 && (a.h(5) + b.h(5)).abs() < 1e-6);
        assert!((a.h(4) - b.h(4)).abs() < 1e-6);
    }

    #[test]
    fn empty_profile_is_flagged() {
        let v: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let f = gauss_hermite_fit(&v, &[0.0; 9], 4).unwrap();
        assert!(!f.converged && f.sigma == SENTINEL);
        assert!(gauss_hermite_fit(&v, &[0.0; 9], 2).is_err());
    }

    #[test]
    fn regions_are_four_connected() {
        #[rustfmt::skip]
        let cells = [
            true, true, false, false,
            false, false, false, true,
            true, false, true, true,
        ];
        let r = connected_regions(&cells, 4, 3);
        assert_eq!(r, vec![vec![0, 1], vec![7, 10, 11], vec![8]]);
    }

    #[test]
    fn losvd_is_normalized_and_mass_weighted_for_flat_light() {
        let b = basis(Smoothness::Linear);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u: Vec<f64> = (0..b.n_spatial() * b.n_theta()).map(|_| rng.gen::<f64>()).collect();
        let w = mass_weights(&b);
        let s = losvd_with_weights(&u, &b, &w, [0.1, -0.3]).unwrap();
        assert!(s.valid && (trapezoid(&s.v, &s.p) - 1.0).abs() < 1e-12);
        // constant light: a scaled copy of the mass weights gives the same sample
        let w2: Vec<f64> = w.iter().map(|x| 3.5 * x).collect();
        let s2 = losvd_with_weights(&u, &b, &w2, [0.1, -0.3]).unwrap();
        for (a, c) in s.p.iter().zip(&s2.p) {
            assert!((a - c).abs() < 1e-12);
        }
        assert!(losvd_with_weights(&u, &b, &w, [1.5, 0.0]).is_err());
    }
}
