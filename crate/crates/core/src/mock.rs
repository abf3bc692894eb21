//! Mock galaxy: a parametric three-component distribution function, its
//! coefficient vector, noisy datacubes and row-space projections for
//! validation runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{Datacube, ForwardSystem};
use crate::grid_basis::{DiscreteBasis, Quadrature};
use crate::linalg::{jacobi_svd, BandedCholesky, Dense};
use crate::numeric::{dot, Real};
use crate::templates::TemplateGrid;

/// Curved spatial ridge of a stream: `x2 = height - curvature * x1²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ridge {
    pub height: f64,
    pub curvature: f64,
    /// Gaussian half-thickness across the ridge.
    pub width: f64,
    /// Gaussian extent along x1.
    pub length: f64,
    /// Mean velocity `= velocity_gradient * x1` along the ridge.
    pub velocity_gradient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub name: String,
    pub mass_fraction: f64,
    /// Exponential scale lengths along x1 and x2 (ignored for ridge components).
    pub scale_lengths: [f64; 2],
    /// `μ_v = rotation_speed · tanh(x1 / rotation_scale)`; negative counter-rotates.
    pub rotation_speed: f64,
    pub rotation_scale: f64,
    /// Velocity dispersion (km/s).
    pub dispersion: f64,
    pub z_mean: f64,
    pub z_sigma: f64,
    pub t_mean: f64,
    pub t_sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<Ridge>,
}

fn gauss(x: f64, mu: f64, sigma: f64) -> f64 {
    let d = (x - mu) / sigma;
    (-0.5 * d * d).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

impl ComponentSpec {
    pub fn surface_density(&self, x1: f64, x2: f64) -> f64 {
        match &self.ridge {
            Some(r) => {
                let c = r.height - r.curvature * x1 * x1;
                let a = (x2 - c) / r.width;
                let b = x1 / r.length;
                (-0.5 * (a * a + b * b)).exp()
            }
            None => {
                let a = x1 / self.scale_lengths[0];
                let b = x2 / self.scale_lengths[1];
                (-(a * a + b * b).sqrt()).exp()
            }
        }
    }

    pub fn mean_velocity(&self, x1: f64, _x2: f64) -> f64 {
        match &self.ridge {
            Some(r) => r.velocity_gradient * x1,
            None => self.rotation_speed * (x1 / self.rotation_scale).tanh(),
        }
    }

    /// Unnormalized density at `[x1, x2, v, z, t]`.
    pub fn density(&self, p: [f64; 5]) -> f64 {
        let [x1, x2, v, z, t] = p;
        self.surface_density(x1, x2)
            * gauss(v, self.mean_velocity(x1, x2), self.dispersion)
            * gauss(z, self.z_mean, self.z_sigma)
            * gauss(t, self.t_mean, self.t_sigma)
    }
}

/// Mixture of components; fractions must sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalaxyModel {
    pub components: Vec<ComponentSpec>,
}

impl GalaxyModel {
    /// Fast-rotating thin disk (70%), counter-rotating thick disk (29%) and a
    /// metal-poor stream on an off-plane arc (1%).
    pub fn default_mixture() -> Self {
        Self {
            components: vec![
                ComponentSpec {
                    name: "thin disk".into(),
                    mass_fraction: 0.70,
                    scale_lengths: [0.45, 0.08],
                    rotation_speed: 250.0,
                    rotation_scale: 0.15,
                    dispersion: 70.0,
                    z_mean: -0.1,
                    z_sigma: 0.3,
                    t_mean: 4.0,
                    t_sigma: 2.5,
                    ridge: None,
                },
                ComponentSpec {
                    name: "thick disk".into(),
                    mass_fraction: 0.29,
                    scale_lengths: [0.6, 0.3],
                    rotation_speed: -150.0,
                    rotation_scale: 0.3,
                    dispersion: 110.0,
                    z_mean: -0.9,
                    z_sigma: 0.35,
                    t_mean: 10.0,
                    t_sigma: 2.0,
                    ridge: None,
                },
                ComponentSpec {
                    name: "stream".into(),
                    mass_fraction: 0.01,
                    scale_lengths: [1.0, 1.0],
                    rotation_speed: 0.0,
                    rotation_scale: 1.0,
                    dispersion: 50.0,
                    z_mean: -1.6,
                    z_sigma: 0.3,
                    t_mean: 12.0,
                    t_sigma: 1.5,
                    ridge: Some(Ridge {
                        height: 0.65,
                        curvature: 0.35,
                        width: 0.07,
                        length: 0.45,
                        velocity_gradient: 500.0,
                    }),
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config("galaxy model has no components".into()));
        }
        let sum: f64 = self.components.iter().map(|c| c.mass_fraction).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mass fractions sum to {sum}, not 1")));
        }
        for c in &self.components {
            if !(0.0..=1.0).contains(&c.mass_fraction) {
                return Err(Error::Config(format!("{}: mass fraction outside [0, 1]", c.name)));
            }
            if !(c.dispersion >= 10.0) {
                return Err(Error::Config(format!("{}: dispersion below 10 km/s", c.name)));
            }
            if !(c.z_sigma > 0.0 && c.t_sigma > 0.0) {
                return Err(Error::Config(format!("{}: population widths must be positive", c.name)));
            }
        }
        Ok(())
    }

    /// Mass-weighted LOSVD of the continuous mixture at `(x1, x2)`, with the
    /// per-component `weights` from [`component_weights`].
    pub fn losvd(&self, weights: &[f64], zt_mass: &[f64], x1: f64, x2: f64, v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|&vv| {
                self.components
                    .iter()
                    .zip(weights)
                    .zip(zt_mass)
                    .map(|((c, &w), &m)| {
                        w * m * c.surface_density(x1, x2) * gauss(vv, c.mean_velocity(x1, x2), c.dispersion)
                    })
                    .sum()
            })
            .collect()
    }
}

fn sample_component<T: Real>(c: &ComponentSpec, basis: &DiscreteBasis<T>) -> Vec<T> {
    let f = |a: &[T]| a.iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
    let (x1, x2) = (f(basis.x1().centers()), f(basis.x2().centers()));
    let (v, z, t) = (f(basis.v().centers()), f(basis.z().centers()), f(basis.t().centers()));
    let mut theta = Vec::with_capacity(v.len() * z.len() * t.len());
    for &vv in &v {
        for &zz in &z {
            for &tt in &t {
                theta.push([vv, zz, tt]);
            }
        }
    }
    x2.iter()
        .flat_map(|&b| x1.iter().map(move |&a| (a, b)))
        .flat_map(|(a, b)| theta.iter().map(move |th| T::lit(c.density([a, b, th[0], th[1], th[2]]))))
        .collect()
}

/// `∫ψ_n · ∫φ_l` for every coefficient.
pub fn coefficient_volumes<T: Real>(basis: &DiscreteBasis<T>) -> Vec<T> {
    let q = basis.quadrature();
    let a = basis.omega().integrals(q);
    let b = basis.theta().integrals(q);
    a.iter().flat_map(|&x| b.iter().map(move |&y| x * y)).collect()
}

/// Scale factors `fraction / discrete mass` that turn each sampled component into its share of `u*`.
pub fn component_weights<T: Real>(model: &GalaxyModel, basis: &DiscreteBasis<T>) -> Result<Vec<f64>> {
    model.validate()?;
    let vol = coefficient_volumes(basis);
    model
        .components
        .iter()
        .map(|c| {
            let u = sample_component(c, basis);
            let mass = dot(&u, &vol).to_f64_lossy();
            if !(mass > 0.0) {
                return Err(Error::Config(format!("{}: no mass on the grid", c.name)));
            }
            Ok(c.mass_fraction / mass)
        })
        .collect()
}

/// `∫∫ N(z) N(t) dz dt` over the grid extent, per component.
pub fn population_mass<T: Real>(model: &GalaxyModel, basis: &DiscreteBasis<T>) -> Vec<f64> {
    let q = Quadrature {
        points: 400,
        richardson: true,
    };
    let (zg, tg) = (basis.z().grid(), basis.t().grid());
    let (z0, z1) = (zg.min().to_f64_lossy(), zg.max().to_f64_lossy());
    let (t0, t1) = (tg.min().to_f64_lossy(), tg.max().to_f64_lossy());
    model
        .components
        .iter()
        .map(|c| {
            q.integrate(z0, z1, |z| gauss(z, c.z_mean, c.z_sigma))
                * q.integrate(t0, t1, |t| gauss(t, c.t_mean, c.t_sigma))
        })
        .collect()
}

/// Ground-truth coefficients: the mixture density sampled at the basis
/// centres, each component scaled to its mass fraction so that
/// `Σ u*_m ∫ψ_n ∫φ_l = 1`.
pub fn evaluate_ground_truth<T: Real>(model: &GalaxyModel, basis: &DiscreteBasis<T>) -> Result<Vec<T>> {
    let w = component_weights(model, basis)?;
    let mut u = vec![T::zero(); basis.layout().len()];
    for (c, &wc) in model.components.iter().zip(&w) {
        for (acc, x) in u.iter_mut().zip(sample_component(c, basis)) {
            *acc += T::lit(wc) * x;
        }
    }
    Ok(u)
}

/// Noise-free datacube `y_r = U q_r` on the Ω pixel grid.
pub fn clean_datacube<T: Real>(
    basis: &DiscreteBasis<T>,
    system: &ForwardSystem<T>,
    templates: &TemplateGrid<T>,
    u: &[T],
) -> Result<Datacube<T>> {
    Ok(Datacube {
        x1_edges: basis.x1().grid().nodes().to_vec(),
        x2_edges: basis.x2().grid().nodes().to_vec(),
        lambdas: templates.obs_lambdas().to_vec(),
        slices: system.synthesize_datacube(u)?,
        delta: vec![T::zero(); system.n_obs()],
        seed: 0,
    })
}

/// Clean and noisy cubes with the realized noise norms.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisySet<T> {
    pub clean: Datacube<T>,
    pub noisy: Datacube<T>,
    /// Per-sample noise standard deviation, `[r][pixel]`.
    pub sigma: Vec<Vec<T>>,
    pub delta_r: Vec<T>,
    pub delta: T,
}

/// `δ_r = ‖y_r^δ − y_r‖` in the data-space norm.
pub fn realized_deltas<T: Real>(clean: &Datacube<T>, noisy: &Datacube<T>, system: &ForwardSystem<T>) -> Vec<T> {
    clean
        .slices
        .iter()
        .zip(&noisy.slices)
        .map(|(c, n)| {
            let e: Vec<T> = n.iter().zip(c).map(|(&a, &b)| a - b).collect();
            system.data_norm(&e)
        })
        .collect()
}

/// Adds Gaussian noise with `σ = level · |clean|` per sample. Wavelength `r`
/// draws from its own ChaCha stream `(seed, r)`, so the result does not depend
/// on scheduling.
pub fn add_noise<T: Real>(clean: &Datacube<T>, system: &ForwardSystem<T>, level: f64, seed: u64) -> Result<NoisySet<T>> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(Error::Config(format!("noise level {level} must be finite and >= 0")));
    }
    let lv = T::lit(level);
    let (sigma, slices): (Vec<Vec<T>>, Vec<Vec<T>>) = clean
        .slices
        .par_iter()
        .enumerate()
        .map(|(r, y)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let sig: Vec<T> = y.iter().map(|&x| lv * x.abs()).collect();
            let noisy = y
                .iter()
                .zip(&sig)
                .map(|(&x, &s)| {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    x + s * T::lit(xi)
                })
                .collect();
            (sig, noisy)
        })
        .unzip();
    let mut noisy = clean.clone();
    noisy.slices = slices;
    noisy.seed = seed;
    let delta_r = realized_deltas(clean, &noisy, system);
    noisy.delta = delta_r.clone();
    let delta = delta_r.iter().map(|&d| d * d).sum::<T>().sqrt();
    Ok(NoisySet {
        clean: clean.clone(),
        noisy,
        sigma,
        delta_r,
        delta,
    })
}

/// Largest `N·L` accepted by [`project_row_space`].
pub const DENSE_PROJECTION_CAP: usize = 20_000;

/// Relative singular-value cut-off for all row-space projections.
pub const RANK_THRESHOLD: f64 = 1e-10;

/// Euclidean projection onto the row space of the stacked operator
/// `[H_1; …; H_R]`, by SVD of the dense stack. Refuses instances with
/// `N·L > size_cap`.
pub fn project_row_space<T: Real>(u: &[T], system: &ForwardSystem<T>, size_cap: usize) -> Result<Vec<T>> {
    let m = system.n_coeffs();
    if u.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: u.len(),
        });
    }
    if m > size_cap {
        return Err(Error::TooLarge { size: m, cap: size_cap });
    }
    let (n, l, r_count) = (system.n_spatial(), system.n_theta(), system.n_obs());
    let g = &system.grams().g;
    let q = system.q();
    // columns of the transposed stack, one per (r, j) row of the stack
    let at = Dense::from_fn(m, r_count * n, |col, row| {
        let (r, j) = (row / n, row % n);
        let (nn, ll) = (col / l, col % l);
        g.get(j, nn) * q.get(ll, r)
    });
    let svd = jacobi_svd(&at);
    let basis = svd.range_basis(T::lit(RANK_THRESHOLD));
    let mut out = vec![T::zero(); m];
    for e in basis {
        let c = dot(e, u);
        for (o, &x) in out.iter_mut().zip(e) {
            *o += c * x;
        }
    }
    Ok(out)
}

/// Inner product the structured projector is orthogonal in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Geometry {
    /// Plain Euclidean inner product on coefficients.
    Euclidean,
    /// `⟨a, b⟩_M = aᵀ M b`; the geometry the preconditioned iteration works in.
    Mass,
}

/// Row-space projection exploiting `H_r = G ⊗ q_rᵀ`.
///
/// The stacked row space is `ℝᴺ ⊗ span{q_r}`, so the Euclidean projector is
/// `I ⊗ P_Q`. The M-orthogonal projector onto `M⁻¹ · rowspace` is `I ⊗ P`,
/// with `P` the Φ-orthogonal projector onto `Φ⁻¹ span{q_r}`, built from the SVD
/// of `C⁻¹Q` where `Φ = C Cᵀ`.
#[derive(Debug, Clone)]
pub struct RowSpaceProjector<T> {
    geometry: Geometry,
    /// Orthonormal columns (length L).
    basis: Vec<Vec<T>>,
    phi_chol: Option<BandedCholesky<T>>,
    n_theta: usize,
}

impl<T: Real> RowSpaceProjector<T> {
    pub fn new(system: &ForwardSystem<T>, geometry: Geometry) -> Self {
        let (l, r) = (system.n_theta(), system.n_obs());
        let chol = system.phi_cholesky().clone();
        let cols: Vec<Vec<T>> = (0..r)
            .map(|k| {
                let mut c = system.q().q(k).to_vec();
                if geometry == Geometry::Mass {
                    chol.forward_in_place(&mut c);
                }
                c
            })
            .collect();
        let a = Dense::from_fn(l, r, |i, j| cols[j][i]);
        let svd = jacobi_svd(&a);
        let basis = svd
            .range_basis(T::lit(RANK_THRESHOLD))
            .into_iter()
            .map(<[T]>::to_vec)
            .collect();
        Self {
            geometry,
            basis,
            phi_chol: (geometry == Geometry::Mass).then_some(chol),
            n_theta: l,
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    /// Dimension of the projected θ subspace.
    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    fn project_theta(&self, x: &[T]) -> Vec<T> {
        let y = match &self.phi_chol {
            Some(c) => c.mul_lt(x),
            None => x.to_vec(),
        };
        let mut out = vec![T::zero(); y.len()];
        for e in &self.basis {
            let c = dot(e, &y);
            for (o, &v) in out.iter_mut().zip(e) {
                *o += c * v;
            }
        }
        if let Some(c) = &self.phi_chol {
            c.backward_in_place(&mut out);
        }
        out
    }

    pub fn project(&self, u: &[T]) -> Result<Vec<T>> {
        if !u.len().is_multiple_of(self.n_theta) {
            return Err(Error::Dimension {
                expected: self.n_theta,
                got: u.len(),
            });
        }
        Ok(u.par_chunks(self.n_theta)
            .flat_map_iter(|row| self.project_theta(row))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_basis::{AxisGrid, Smoothness};
    use crate::numeric::norm2;
    use crate::templates::{KernelIntegralTable, SpectrumModel, TemplateConfig};

    fn tiny(s: Smoothness) -> (DiscreteBasis<f64>, TemplateGrid<f64>, ForwardSystem<f64>) {
        let grids = [
            AxisGrid::uniform(-1.0, 1.0, 4).unwrap(),
            AxisGrid::uniform(-1.0, 1.0, 4).unwrap(),
            AxisGrid::uniform(-1000.0, 1000.0, 5).unwrap(),
            AxisGrid::uniform(-2.66, 0.36, 3).unwrap(),
            AxisGrid::geometric(0.015, 14.25, 3).unwrap(),
        ];
        let cfg = TemplateConfig {
            lambda_min: 480.0,
            n_obs: 8,
            step_kms: 500.0,
            v_max: 1000.0,
            margin: 2,
            line_sigma_kms: 750.0,
            seed: 3,
        };
        let model = SpectrumModel::new(3, 470.0, 500.0, 750.0, (-2.66, 0.36), (0.015, 14.25)).unwrap();
        let tg = TemplateGrid::synthesize(&cfg, &model, grids[3].clone(), grids[4].clone()).unwrap();
        let basis = DiscreteBasis::with_scalar_beta(s, grids, 1.0, Quadrature::default()).unwrap();
        let sys = ForwardSystem::assemble(&basis, &tg).unwrap();
        (basis, tg, sys)
    }

    #[test]
    fn default_mixture_is_valid_and_nonnegative() {
        let model = GalaxyModel::default_mixture();
        model.validate().unwrap();
        let (basis, _, _) = tiny(Smoothness::Constant);
        let u: Vec<f64> = evaluate_ground_truth(&model, &basis).unwrap();
        assert!(u.iter().all(|&x| x >= 0.0));
        let vol = coefficient_volumes(&basis);
        assert!((dot(&u, &vol) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let mut model = GalaxyModel::default_mixture();
        model.components[0].mass_fraction = 0.5;
        let (basis, _, _) = tiny(Smoothness::Constant);
        assert!(matches!(evaluate_ground_truth::<f64>(&model, &basis), Err(Error::Config(_))));
    }

    #[test]
    fn even_component_gives_mirror_symmetric_truth() {
        let mut c = GalaxyModel::default_mixture().components[1].clone();
        c.mass_fraction = 1.0;
        c.rotation_speed = 0.0;
        let model = GalaxyModel { components: vec![c] };
        for s in [Smoothness::Constant, Smoothness::Linear] {
            let (basis, _, _) = tiny(s);
            let u: Vec<f64> = evaluate_ground_truth(&model, &basis).unwrap();
            let l = basis.n_theta();
            let n1 = basis.x1().len();
            for n in 0..basis.n_spatial() {
                let (i2, i1) = (n / n1, n % n1);
                let m = i2 * n1 + (n1 - 1 - i1);
                for k in 0..l {
                    assert!((u[n * l + k] - u[m * l + k]).abs() <= 1e-12 * u[n * l + k].abs().max(1e-300));
                }
            }
        }
    }

    #[test]
    fn stream_keeps_its_mass_fraction() {
        let model = GalaxyModel::default_mixture();
        let (basis, _, _) = tiny(Smoothness::Linear);
        let w = component_weights(&model, &basis).unwrap();
        let vol = coefficient_volumes(&basis);
        let stream: Vec<f64> = sample_component(&model.components[2], &basis);
        let frac = w[2] * dot(&stream, &vol);
        assert!((frac - 0.01).abs() < 1e-12 && frac <= 0.015);
    }

    #[test]
    fn noise_is_deterministic_and_vanishes_at_zero_level() {
        let (basis, tg, sys) = tiny(Smoothness::Constant);
        let u = evaluate_ground_truth(&GalaxyModel::default_mixture(), &basis).unwrap();
        let clean = clean_datacube(&basis, &sys, &tg, &u).unwrap();
        let a = add_noise(&clean, &sys, 0.01, 9).unwrap();
        let b = add_noise(&clean, &sys, 0.01, 9).unwrap();
        assert_eq!(a, b);
        let z = add_noise(&clean, &sys, 0.0, 9).unwrap();
        assert_eq!(z.noisy.slices, clean.slices);
        assert_eq!(z.delta, 0.0);
        assert!(add_noise(&clean, &sys, -1.0, 9).is_err());
        let total = a.delta_r.iter().map(|d| d * d).sum::<f64>().sqrt();
        assert!((total - a.delta).abs() < 1e-15);
    }

    #[test]
    fn dense_projection_fixes_row_space_and_kills_null_space() {
        let (_, _, sys) = tiny(Smoothness::Constant);
        let m = sys.n_coeffs();
        let u: Vec<f64> = (0..m).map(|i| ((i * 13 % 17) as f64).cos()).collect();
        let p = project_row_space(&u, &sys, DENSE_PROJECTION_CAP).unwrap();
        let pp = project_row_space(&p, &sys, DENSE_PROJECTION_CAP).unwrap();
        for (a, b) in p.iter().zip(&pp) {
            assert!((a - b).abs() <= 1e-8 * norm2(&p));
        }
        // in row space: a combination of stacked rows
        let w: Vec<f64> = (0..sys.n_spatial()).map(|j| 1.0 + j as f64).collect();
        let row = sys.apply_hr_t(&w, 2).unwrap();
        let pr = project_row_space(&row, &sys, DENSE_PROJECTION_CAP).unwrap();
        for (a, b) in pr.iter().zip(&row) {
            assert!((a - b).abs() <= 1e-8 * norm2(&row));
        }
        // null-space part
        let null: Vec<f64> = u.iter().zip(&p).map(|(a, b)| a - b).collect();
        let pn = project_row_space(&null, &sys, DENSE_PROJECTION_CAP).unwrap();
        assert!(norm2(&pn) <= 1e-8 * norm2(&null).max(1.0));
        // data unchanged
        for r in 0..sys.n_obs() {
            let (a, b) = (sys.apply_hr(&u, r).unwrap(), sys.apply_hr(&p, r).unwrap());
            let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            assert!(norm2(&d) <= 1e-8 * norm2(&a));
        }
        assert!(matches!(project_row_space(&u, &sys, 10), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn structured_projection_matches_dense() {
        let (_, _, sys) = tiny(Smoothness::Constant);
        let m = sys.n_coeffs();
        let u: Vec<f64> = (0..m).map(|i| 1.0 + ((i * 7 % 11) as f64)).collect();
        let dense = project_row_space(&u, &sys, DENSE_PROJECTION_CAP).unwrap();
        let fast = RowSpaceProjector::new(&sys, Geometry::Euclidean).project(&u).unwrap();
        for (a, b) in dense.iter().zip(&fast) {
            assert!((a - b).abs() <= 1e-9 * norm2(&u));
        }
    }

    #[test]
    fn mass_projection_is_m_orthogonal_and_preserves_data() {
        let (_, _, sys) = tiny(Smoothness::Linear);
        let m = sys.n_coeffs();
        let u: Vec<f64> = (0..m).map(|i| 1.0 + ((i * 5 % 13) as f64)).collect();
        let proj = RowSpaceProjector::new(&sys, Geometry::Mass);
        let p = proj.project(&u).unwrap();
        let pp = proj.project(&p).unwrap();
        for (a, b) in p.iter().zip(&pp) {
            assert!((a - b).abs() <= 1e-8 * norm2(&p));
        }
        for r in 0..sys.n_obs() {
            let (a, b) = (sys.apply_hr(&u, r).unwrap(), sys.apply_hr(&p, r).unwrap());
            let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            assert!(norm2(&d) <= 1e-8 * norm2(&a));
        }
        // residual u - p is M-orthogonal to every preconditioned row M⁻¹H_rᵀw
        let resid: Vec<f64> = u.iter().zip(&p).map(|(a, b)| a - b).collect();
        let mres = sys.apply_m(&resid).unwrap();
        let w: Vec<f64> = (0..sys.n_spatial()).map(|j| (j as f64).sin()).collect();
        let dir = sys.solve_m(&sys.apply_hr_t(&w, 3).unwrap()).unwrap();
        assert!(dot(&mres, &dir).abs() <= 1e-9 * norm2(&mres) * norm2(&dir));
    }

    #[test]
    fn rank_of_a_rank_one_table() {
        let (basis, _, _) = tiny(Smoothness::Constant);
        let grams = basis.assemble_grams().unwrap();
        let q = KernelIntegralTable::from_fn(basis.n_theta(), 4, |l, r| (1.0 + l as f64) * (2.0 + r as f64));
        let sys = ForwardSystem::from_parts(grams, q, basis.lattice_dims()).unwrap();
        assert_eq!(RowSpaceProjector::new(&sys, Geometry::Euclidean).rank(), 1);
    }
}
