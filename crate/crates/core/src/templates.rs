//! Synthetic single-stellar-population spectra, the Doppler-shifted kernel
//! `k(v, z, t, λ)` and its integrals against the θ basis functions.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_basis::{AxisGrid, Basis1d, DiscreteBasis, Quadrature};
use crate::io::{BinReader, BinWriter};
use crate::numeric::{Real, SPEED_OF_LIGHT_KMS};

const PNKT_MAGIC: &[u8; 4] = b"PNKT";
const PNKT_VERSION: u32 = 1;

/// `hc / k_B` in nm·K.
const HC_OVER_K: f64 = 1.438_776_9e7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AgeTrend {
    /// Deepens with age (metal-like lines).
    Rising,
    /// Weakens with age (Balmer-like lines).
    Falling,
}

#[derive(Debug, Clone, PartialEq)]
struct Line {
    ln_center: f64,
    ln_sigma: f64,
    depth: f64,
    z_scale: f64,
    trend: AgeTrend,
}

/// Parametric stand-in for an SSP library: a Planck-like continuum whose
/// temperature drops with age, times a fixed list of Gaussian absorption lines.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumModel {
    lines: Vec<Line>,
    z_range: (f64, f64),
    t_range: (f64, f64),
    lambda_ref: f64,
}

impl SpectrumModel {
    /// Lines are laid out in `ln λ` over `[lambda_lo, lambda_hi]` with a mean spacing
    /// of five line widths; positions, depths and trends are drawn from `seed`.
    pub fn new(
        seed: u64,
        lambda_lo: f64,
        lambda_hi: f64,
        line_sigma_kms: f64,
        z_range: (f64, f64),
        t_range: (f64, f64),
    ) -> Result<Self> {
        if !(lambda_hi > lambda_lo && lambda_lo > 0.0) || !(line_sigma_kms > 0.0) {
            return Err(Error::Config("spectrum model needs 0 < λ_lo < λ_hi and a positive line width".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ln_sigma = (1.0 + line_sigma_kms / SPEED_OF_LIGHT_KMS).ln();
        let spacing = 5.0 * ln_sigma;
        let (a, b) = (lambda_lo.ln(), lambda_hi.ln());
        let mut lines = Vec::new();
        let mut x = a + 0.5 * spacing;
        let mut k = 0usize;
        while x < b {
            let jitter = rng.gen_range(-1.0..1.0) * ln_sigma;
            lines.push(Line {
                ln_center: x + jitter,
                ln_sigma: ln_sigma * rng.gen_range(0.8..1.6),
                depth: rng.gen_range(0.25..0.7),
                z_scale: rng.gen_range(0.5..1.2),
                trend: if k % 3 == 1 {
                    AgeTrend::Falling
                } else {
                    AgeTrend::Rising
                },
            });
            x += spacing;
            k += 1;
        }
        Ok(Self {
            lines,
            z_range,
            t_range,
            lambda_ref: (lambda_lo * lambda_hi).sqrt(),
        })
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    fn check(&self, z: f64, t: f64) -> Result<()> {
        // wide enough for grids rounded to f32
        let tol = 1e-6;
        let (zl, zh) = self.z_range;
        let (tl, th) = self.t_range;
        if !(z >= zl - tol * zl.abs().max(1.0) && z <= zh + tol * zh.abs().max(1.0)) {
            return Err(Error::Domain(format!("metallicity {z} outside [{zl}, {zh}]")));
        }
        if !(t >= tl * (1.0 - tol) && t <= th * (1.0 + tol)) {
            return Err(Error::Domain(format!("age {t} outside [{tl}, {th}]")));
        }
        Ok(())
    }

    fn temperature(t: f64) -> f64 {
        4000.0 + 9000.0 / (1.0 + t / 0.7).sqrt()
    }

    fn planck(lambda: f64, temp: f64) -> f64 {
        lambda.powi(-5) / (HC_OVER_K / (lambda * temp)).exp_m1()
    }

    /// Continuum: Planck shape normalized at the reference wavelength, scaled by
    /// a light-to-mass factor that falls with age.
    pub fn continuum(&self, lambda: f64, z: f64, t: f64) -> f64 {
        let temp = Self::temperature(t);
        let shape = Self::planck(lambda, temp) / Self::planck(self.lambda_ref, temp);
        let amp = (1.0 + t / 0.5).powf(-0.5) * (1.0 - 0.03 * z);
        amp * shape
    }

    /// Peak depth in `(0, 0.7)` of line `i`; strictly increasing in `z`.
    fn depth(&self, line: &Line, z: f64, t: f64) -> f64 {
        let zeta = 0.3 + 0.7 / (1.0 + (-(z + 1.0) / (0.7 * line.z_scale)).exp());
        let s = 1.0 / (1.0 + (-(t / 2.0).ln()).exp());
        let tau = match line.trend {
            AgeTrend::Rising => 0.6 + 0.4 * s,
            AgeTrend::Falling => 1.0 - 0.4 * s,
        };
        line.depth * zeta * tau
    }

    /// Rest-frame flux without domain checks.
    pub fn flux(&self, lambda: f64, z: f64, t: f64) -> f64 {
        let ll = lambda.ln();
        let absorb: f64 = self
            .lines
            .iter()
            .map(|line| {
                let d = (ll - line.ln_center) / line.ln_sigma;
                if d.abs() > 8.0 {
                    1.0
                } else {
                    1.0 - self.depth(line, z, t) * (-0.5 * d * d).exp()
                }
            })
            .product();
        self.continuum(lambda, z, t) * absorb
    }
}

/// Spectrum of the model SSP `(z, t)` sampled at `lambda_nodes`.
pub fn synth_ssp<T: Real>(model: &SpectrumModel, z: f64, t: f64, lambda_nodes: &[T]) -> Result<Vec<T>> {
    model.check(z, t)?;
    Ok(lambda_nodes
        .iter()
        .map(|&l| T::lit(model.flux(l.to_f64_lossy(), z, t)))
        .collect())
}

/// Wavelength sampling and spectrum-model knobs for generated template tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateConfig {
    /// First observed wavelength.
    pub lambda_min: f64,
    /// Number of observed wavelengths R.
    pub n_obs: usize,
    /// Constant log step expressed as a velocity (km/s).
    pub step_kms: f64,
    /// Largest |v| the table must support.
    pub v_max: f64,
    /// Extra nodes beyond the Doppler range on each side.
    pub margin: usize,
    pub line_sigma_kms: f64,
    pub seed: u64,
}

impl TemplateConfig {
    pub fn log_step(&self) -> f64 {
        (1.0 + self.step_kms / SPEED_OF_LIGHT_KMS).ln()
    }

    /// Last observed wavelength.
    pub fn lambda_max(&self) -> f64 {
        self.lambda_min * (self.log_step() * (self.n_obs as f64 - 1.0)).exp()
    }
}

fn hat_weights<T: Real>(grid: &AxisGrid<T>, x: T) -> Option<[(usize, T); 2]> {
    let i = grid.cell_of(x)?;
    let n = grid.nodes();
    let f = (x - n[i]) / (n[i + 1] - n[i]);
    Some([(i, T::one() - f), (i + 1, f)])
}

/// Tabulated spectra `S(λ; z, t)` on a log-uniform wavelength grid extending
/// past the observed window by the Doppler range.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateGrid<T> {
    lambda: AxisGrid<T>,
    z: AxisGrid<T>,
    t: AxisGrid<T>,
    /// `[λ][z][t]`.
    flux: Vec<T>,
    obs_start: usize,
    n_obs: usize,
    ln_lambda0: T,
    log_step: T,
}

impl<T: Real> TemplateGrid<T> {
    /// Samples `model` on the `(z, t)` node grids.
    pub fn synthesize(
        config: &TemplateConfig,
        model: &SpectrumModel,
        z: AxisGrid<T>,
        t: AxisGrid<T>,
    ) -> Result<Self> {
        if config.n_obs < 1 || !(config.step_kms > 0.0) || !(config.v_max >= 0.0) {
            return Err(Error::Config("template config needs n_obs >= 1, step > 0, v_max >= 0".into()));
        }
        let h = config.log_step();
        let pad = ((1.0 + config.v_max / SPEED_OF_LIGHT_KMS).ln() / h).ceil() as usize + config.margin;
        let pad_hi = ((-(1.0 - config.v_max / SPEED_OF_LIGHT_KMS).ln()) / h).ceil() as usize + config.margin;
        let n_lambda = pad + config.n_obs + pad_hi;
        let ln0 = config.lambda_min.ln() - h * pad as f64;
        let lambda_f64: Vec<f64> = (0..n_lambda).map(|i| (ln0 + h * i as f64).exp()).collect();
        let lambda = AxisGrid::new(lambda_f64.iter().map(|&x| T::lit(x)).collect())?;
        let (nz, nt) = (z.len(), t.len());
        let mut flux = vec![T::zero(); n_lambda * nz * nt];
        for (iz, &zv) in z.nodes().iter().enumerate() {
            for (it, &tv) in t.nodes().iter().enumerate() {
                let spec = synth_ssp::<f64>(model, zv.to_f64_lossy(), tv.to_f64_lossy(), &lambda_f64)?;
                for (i, s) in spec.into_iter().enumerate() {
                    flux[(i * nz + iz) * nt + it] = T::lit(s);
                }
            }
        }
        Ok(Self {
            lambda,
            z,
            t,
            flux,
            obs_start: pad,
            n_obs: config.n_obs,
            ln_lambda0: T::lit(ln0),
            log_step: T::lit(h),
        })
    }

    /// Wraps an external table (flux in `[λ][z][t]` order).
    pub fn from_table(
        lambda: AxisGrid<T>,
        z: AxisGrid<T>,
        t: AxisGrid<T>,
        flux: Vec<T>,
        obs_start: usize,
        n_obs: usize,
    ) -> Result<Self> {
        let expected = lambda.len() * z.len() * t.len();
        if flux.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: flux.len(),
            });
        }
        if flux.iter().any(|x| !x.is_finite() || *x < T::zero()) {
            return Err(Error::Domain("template flux must be finite and non-negative".into()));
        }
        if n_obs == 0 || obs_start + n_obs > lambda.len() {
            return Err(Error::Config("observed window exceeds the wavelength table".into()));
        }
        let ln: Vec<T> = lambda.nodes().iter().map(|x| x.ln()).collect();
        let h = (ln[ln.len() - 1] - ln[0]) / T::from_usize_lossy(ln.len() - 1);
        for (i, w) in ln.windows(2).enumerate() {
            if ((w[1] - w[0]) - h).abs() > T::lit(1e-6) * h {
                return Err(Error::Grid(format!("wavelength nodes not log-uniform at index {}", i + 1)));
            }
        }
        Ok(Self {
            ln_lambda0: ln[0],
            log_step: h,
            lambda,
            z,
            t,
            flux,
            obs_start,
            n_obs,
        })
    }

    pub fn lambda(&self) -> &AxisGrid<T> {
        &self.lambda
    }

    pub fn z(&self) -> &AxisGrid<T> {
        &self.z
    }

    pub fn t(&self) -> &AxisGrid<T> {
        &self.t
    }

    pub fn flux(&self) -> &[T] {
        &self.flux
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn obs_start(&self) -> usize {
        self.obs_start
    }

    pub fn log_step(&self) -> T {
        self.log_step
    }

    /// Observed wavelengths `λ_1 … λ_R`.
    pub fn obs_lambdas(&self) -> &[T] {
        &self.lambda.nodes()[self.obs_start..self.obs_start + self.n_obs]
    }

    pub fn obs_range(&self) -> (T, T) {
        let o = self.obs_lambdas();
        (o[0], o[o.len() - 1])
    }

    /// Velocity interval for which every shifted observed wavelength stays in the table.
    pub fn velocity_range(&self) -> (T, T) {
        let c = T::lit(SPEED_OF_LIGHT_KMS);
        let (lo, hi) = self.obs_range();
        let vmax = c * (lo / self.lambda.min() - T::one());
        let vmin = c * (hi / self.lambda.max() - T::one());
        (vmin, vmax)
    }

    #[inline]
    fn at(&self, i: usize, iz: usize, it: usize) -> T {
        self.flux[(i * self.z.len() + iz) * self.t.len() + it]
    }

    fn lambda_weights(&self, ln_lambda: T) -> Result<(usize, T)> {
        let p = (ln_lambda - self.ln_lambda0) / self.log_step;
        let n = self.lambda.len();
        let eps = T::lit(1e-9);
        if !(p >= -eps && p <= T::from_usize_lossy(n - 1) + eps) {
            return Err(Error::Domain(format!(
                "wavelength {} outside template table [{}, {}]",
                ln_lambda.exp(),
                self.lambda.min(),
                self.lambda.max()
            )));
        }
        let p = p.max(T::zero()).min(T::from_usize_lossy(n - 1));
        let i = p.floor().to_usize().unwrap_or(0).min(n - 2);
        Ok((i, p - T::from_usize_lossy(i)))
    }

    /// `S(λ; z, t)`: linear in `ln λ`, bilinear in `(z, t)`.
    pub fn spectrum(&self, lambda: T, z: T, t: T) -> Result<T> {
        let (i, f) = self.lambda_weights(lambda.ln())?;
        let wz = hat_weights(&self.z, z)
            .ok_or_else(|| Error::Domain(format!("metallicity {z} outside template grid")))?;
        let wt = hat_weights(&self.t, t)
            .ok_or_else(|| Error::Domain(format!("age {t} outside template grid")))?;
        let mut s = T::zero();
        for &(a, wa) in &wz {
            for &(b, wb) in &wt {
                let w = wa * wb;
                if w != T::zero() {
                    s += w * ((T::one() - f) * self.at(i, a, b) + f * self.at(i + 1, a, b));
                }
            }
        }
        Ok(s)
    }

    /// `k(v, z, t, λ) = S(λ/(1+v/c); z, t) / (1+v/c)`.
    pub fn kernel_eval(&self, v: T, z: T, t: T, lambda: T) -> Result<T> {
        let d = T::one() + v / T::lit(SPEED_OF_LIGHT_KMS);
        if !(d > T::zero()) {
            return Err(Error::Domain(format!("velocity {v} km/s is not physical")));
        }
        Ok(self.spectrum(lambda / d, z, t)? / d)
    }

    /// Velocities in `[lo, hi]` at which the shifted table nodes cross the
    /// observed nodes, i.e. where `k` has kinks in `v`.
    pub fn velocity_kinks(&self, lo: T, hi: T) -> Vec<T> {
        let c = T::lit(SPEED_OF_LIGHT_KMS);
        let h = self.log_step;
        let jlo = ((T::one() + lo / c).ln() / h).ceil().to_i64().unwrap_or(0);
        let jhi = ((T::one() + hi / c).ln() / h).floor().to_i64().unwrap_or(-1);
        (jlo..=jhi)
            .map(|j| c * ((h * T::lit(j as f64)).exp() - T::one()))
            .filter(|&v| v > lo && v < hi)
            .collect()
    }

    /// `∫ S(λ; z_a, t_b) dλ` over the observed window (trapezoid on the nodes), `[z][t]`.
    pub fn light_table(&self) -> Vec<T> {
        let (nz, nt) = (self.z.len(), self.t.len());
        let lam = self.lambda.nodes();
        let mut out = vec![T::zero(); nz * nt];
        for i in self.obs_start..self.obs_start + self.n_obs - 1 {
            let h = (lam[i + 1] - lam[i]) * T::lit(0.5);
            for a in 0..nz {
                for b in 0..nt {
                    out[a * nt + b] += h * (self.at(i, a, b) + self.at(i + 1, a, b));
                }
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::create(path, PNKT_MAGIC, PNKT_VERSION)?;
        w.axis(self.lambda.nodes())?;
        w.axis(self.z.nodes())?;
        w.axis(self.t.nodes())?;
        w.u64(self.obs_start as u64)?;
        w.u64(self.n_obs as u64)?;
        w.reals(&self.flux)?;
        w.finish()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BinReader::open(path, PNKT_MAGIC, PNKT_VERSION)?;
        let lambda = AxisGrid::new(r.axis()?)?;
        let z = AxisGrid::new(r.axis()?)?;
        let t = AxisGrid::new(r.axis()?)?;
        let obs_start = r.count(1 << 32)?;
        let n_obs = r.count(1 << 32)?;
        let flux = r.reals(lambda.len() * z.len() * t.len())?;
        r.expect_end()?;
        Self::from_table(lambda, z, t, flux, obs_start, n_obs)
            .map_err(|e| Error::format(path, e.to_string()))
    }
}

/// `Q[l][r] = ∫_Θ k(θ, λ_r) φ_l(θ) dθ`, stored wavelength-major so that each
/// `q_r` is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelIntegralTable<T> {
    n_theta: usize,
    n_obs: usize,
    data: Vec<T>,
}

impl<T: Real> KernelIntegralTable<T> {
    pub fn from_fn(n_theta: usize, n_obs: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n_theta * n_obs);
        for r in 0..n_obs {
            for l in 0..n_theta {
                data.push(f(l, r));
            }
        }
        Self {
            n_theta,
            n_obs,
            data,
        }
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Column `q_r` (length L).
    pub fn q(&self, r: usize) -> &[T] {
        &self.data[r * self.n_theta..(r + 1) * self.n_theta]
    }

    pub fn get(&self, l: usize, r: usize) -> T {
        self.data[r * self.n_theta + l]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

/// `I[i][a] = ∫ b_i · w_a` with `w_a` the nodal hats of `grid`.
pub(crate) fn nodal_overlaps<T: Real>(b: &Basis1d<T>, grid: &AxisGrid<T>, quad: &Quadrature) -> Vec<Vec<(usize, T)>> {
    (0..b.len())
        .map(|i| {
            let (lo, hi) = b.support(i);
            let mut br: Vec<T> = b.breakpoints(i);
            br.extend(grid.nodes().iter().copied().filter(|&x| x > lo && x < hi));
            sort_unique(&mut br);
            let mut acc = vec![T::zero(); grid.len()];
            for (x, w) in quad.nodes_weights(&br) {
                if let Some(hw) = hat_weights(grid, x) {
                    let bv = b.value(i, x) * w;
                    for (a, wa) in hw {
                        acc[a] += bv * wa;
                    }
                }
            }
            acc.into_iter()
                .enumerate()
                .filter(|(_, v)| *v != T::zero())
                .collect()
        })
        .collect()
}

fn sort_unique<T: Real>(v: &mut Vec<T>) {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    v.dedup();
}

fn check_within<T: Real>(name: &str, b: &Basis1d<T>, lo: T, hi: T) -> Result<()> {
    let g = b.grid();
    let tol = T::lit(1e-9) * (hi - lo).abs().max(T::one());
    if g.min() < lo - tol || g.max() > hi + tol {
        return Err(Error::Domain(format!(
            "{name} basis range [{}, {}] exceeds template range [{lo}, {hi}]",
            g.min(),
            g.max()
        )));
    }
    Ok(())
}

/// Kernel integrals against the θ basis of `basis`, using the separable
/// structure of the interpolated kernel: the `(z, t)` dependence is bilinear in
/// the template nodes, so only the velocity integral needs the full kernel.
pub fn kernel_theta_integrals<T: Real>(
    templates: &TemplateGrid<T>,
    basis: &DiscreteBasis<T>,
) -> Result<KernelIntegralTable<T>> {
    let quad = basis.quadrature();
    let (vb, zb, tb) = (basis.v(), basis.z(), basis.t());
    let (vlo, vhi) = templates.velocity_range();
    check_within("v", vb, vlo, vhi)?;
    check_within("z", zb, templates.z().min(), templates.z().max())?;
    check_within("t", tb, templates.t().min(), templates.t().max())?;

    let iz = nodal_overlaps(zb, templates.z(), quad);
    let it = nodal_overlaps(tb, templates.t(), quad);
    let (nzt, ntt) = (templates.z().len(), templates.t().len());
    let n_ab = nzt * ntt;
    let n_obs = templates.n_obs();
    let n_lambda = templates.lambda().len();
    let c = T::lit(SPEED_OF_LIGHT_KMS);

    // iv_tab[iv][r][ab] = ∫ φ_v(v) S_ab(λ_r / (1+v/c)) / (1+v/c) dv
    let iv_tab: Vec<Vec<T>> = (0..vb.len())
        .into_par_iter()
        .map(|iv| -> Result<Vec<T>> {
            let (lo, hi) = vb.support(iv);
            let mut br = vb.breakpoints(iv);
            br.extend(templates.velocity_kinks(lo, hi));
            sort_unique(&mut br);
            let nodes: Vec<(i64, T, T)> = quad
                .nodes_weights(&br)
                .into_iter()
                .map(|(v, w)| {
                    let d = T::one() + v / c;
                    let shift = -d.ln() / templates.log_step();
                    let fl = shift.floor();
                    (fl.to_i64().unwrap_or(0), shift - fl, w * vb.value(iv, v) / d)
                })
                .collect();
            let mut out = vec![T::zero(); n_obs * n_ab];
            for r in 0..n_obs {
                let row = &mut out[r * n_ab..(r + 1) * n_ab];
                for &(off, f, w) in &nodes {
                    if w == T::zero() {
                        continue;
                    }
                    let i = (templates.obs_start() + r) as i64 + off;
                    let i1 = if f > T::zero() { i + 1 } else { i };
                    if i < 0 || i1 >= n_lambda as i64 {
                        return Err(Error::Domain("shifted wavelength outside template table".into()));
                    }
                    let (i, i1) = (i as usize, i1 as usize);
                    let s0 = &templates.flux()[i * n_ab..(i + 1) * n_ab];
                    let s1 = &templates.flux()[i1 * n_ab..(i1 + 1) * n_ab];
                    let (w0, w1) = (w * (T::one() - f), w * f);
                    for ((o, &a), &b) in row.iter_mut().zip(s0).zip(s1) {
                        *o += w0 * a + w1 * b;
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let (nz, nt) = (zb.len(), tb.len());
    let n_theta = basis.n_theta();
    let rows: Vec<Vec<T>> = (0..n_obs)
        .into_par_iter()
        .map(|r| {
            let mut q = vec![T::zero(); n_theta];
            for (l, out) in q.iter_mut().enumerate() {
                let (iv, izz, itt) = (l / (nz * nt), (l / nt) % nz, l % nt);
                let ivr = &iv_tab[iv][r * n_ab..(r + 1) * n_ab];
                let mut s = T::zero();
                for &(a, wa) in &iz[izz] {
                    for &(b, wb) in &it[itt] {
                        s += wa * wb * ivr[a * ntt + b];
                    }
                }
                *out = s;
            }
            q
        })
        .collect();
    Ok(KernelIntegralTable {
        n_theta,
        n_obs,
        data: rows.concat(),
    })
}

/// Full tensor quadrature of an arbitrary kernel `k(v, z, t, r)` against every
/// `φ_l`. `extra_breaks` (per axis `v, z, t`) mark kinks of the kernel.
pub fn kernel_theta_integrals_with<T, F>(
    basis: &DiscreteBasis<T>,
    n_obs: usize,
    quad: &Quadrature,
    extra_breaks: [&[T]; 3],
    kernel: F,
) -> KernelIntegralTable<T>
where
    T: Real,
    F: Fn(T, T, T, usize) -> T + Sync,
{
    let axes = basis.theta().axes();
    let rules: Vec<Vec<Vec<(T, T)>>> = axes
        .iter()
        .zip(extra_breaks)
        .map(|(ax, extra)| {
            (0..ax.len())
                .map(|i| {
                    let (lo, hi) = ax.support(i);
                    let mut br = ax.breakpoints(i);
                    br.extend(extra.iter().copied().filter(|&x| x > lo && x < hi));
                    sort_unique(&mut br);
                    quad.nodes_weights(&br)
                        .into_iter()
                        .map(|(x, w)| (x, w * ax.value(i, x)))
                        .filter(|&(_, w)| w != T::zero())
                        .collect()
                })
                .collect()
        })
        .collect();
    let n_theta = basis.n_theta();
    let cols: Vec<Vec<T>> = (0..n_theta)
        .into_par_iter()
        .map(|l| {
            let m = basis.theta().multi_index(l);
            let (rv, rz, rt) = (&rules[0][m[0]], &rules[1][m[1]], &rules[2][m[2]]);
            (0..n_obs)
                .map(|r| {
                    rv.iter()
                        .map(|&(v, wv)| {
                            wv * rz
                                .iter()
                                .map(|&(z, wz)| wz * rt.iter().map(|&(t, wt)| wt * kernel(v, z, t, r)).sum::<T>())
                                .sum::<T>()
                        })
                        .sum::<T>()
                })
                .collect()
        })
        .collect();
    KernelIntegralTable::from_fn(n_theta, n_obs, |l, r| cols[l][r])
}
