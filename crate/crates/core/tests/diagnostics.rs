mod common;

use common::*;
use pnkr::cli::preset::{Preset, Setup};
use pnkr::diagnostics::*;
use pnkr::grid_basis::Smoothness;
use pnkr::mock::{evaluate_ground_truth, ComponentSpec, GalaxyModel};

fn gauss(v: f64, mu: f64, s: f64) -> f64 {
    (-0.5 * ((v - mu) / s).powi(2)).exp()
}

/// Squared L² distance of the best fit in span{e H_0, e H_3 … e H_k} at fixed (μ, σ),
/// from Gram and moment integrals by Gauss-Legendre quadrature.
fn best_truncation(f: &dyn Fn(f64) -> f64, mu: f64, sigma: f64, order: usize, lo: f64, hi: f64) -> f64 {
    let gl = gauss_legendre(20);
    let breaks: Vec<f64> = (1..200).map(|i| lo + (hi - lo) * i as f64 / 200.0).collect();
    let basis = |k: usize, v: f64| {
        let w = (v - mu) / sigma;
        gauss(v, mu, sigma) * hermite(w, order)[k]
    };
    let ks: Vec<usize> = std::iter::once(0).chain(3..=order).collect();
    let n = ks.len();
    let a = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        integrate_pieces(lo, hi, &breaks, &gl, |v| basis(ks[i], v) * basis(ks[j], v))
    });
    let b = nalgebra::DVector::from_fn(n, |i, _| integrate_pieces(lo, hi, &breaks, &gl, |v| basis(ks[i], v) * f(v)));
    let c = a.lu().solve(&b).unwrap();
    integrate_pieces(lo, hi, &breaks, &gl, |v| {
        let g: f64 = ks.iter().zip(c.iter()).map(|(&k, &ci)| ci * basis(k, v)).sum();
        (f(v) - g).powi(2)
    })
}

#[test]
fn two_gaussian_fit_is_the_best_truncation() {
    let f = |v: f64| gauss(v, 80.0, 110.0) + 0.35 * gauss(v, -180.0, 70.0);
    let v: Vec<f64> = (0..401).map(|i| -1000.0 + 5.0 * i as f64).collect();
    let p: Vec<f64> = v.iter().map(|&x| f(x)).collect();
    for order in [4, 5, 6] {
        let fit = gauss_hermite_fit(&v, &p, order).unwrap();
        assert!(fit.converged);
        let gl = gauss_legendre(20);
        let breaks: Vec<f64> = (1..200).map(|i| -1000.0 + 10.0 * i as f64).collect();
        let resid = integrate_pieces(-1000.0, 1000.0, &breaks, &gl, |x| (f(x) - fit.evaluate(x)).powi(2));
        let best = best_truncation(&f, fit.mu, fit.sigma, order, -1000.0, 1000.0);
        // the fit minimizes a trapezoid sum on a 5 km/s grid, not the continuous norm
        assert!(resid <= best * (1.0 + 1e-3) + 1e-12, "order {order}: {resid:e} vs {best:e}");
    }
}

#[test]
fn single_component_losvd_is_its_gaussian() {
    let c = ComponentSpec {
        name: "disk".into(),
        mass_fraction: 1.0,
        scale_lengths: [0.5, 0.3],
        rotation_speed: 200.0,
        rotation_scale: 0.3,
        dispersion: 160.0,
        z_mean: -1.0,
        z_sigma: 0.4,
        t_mean: 6.0,
        t_sigma: 3.0,
        ridge: None,
    };
    let model = GalaxyModel { components: vec![c.clone()] };
    let st = Setup::<f64>::preset(Preset::DeskScale, Smoothness::Linear, 1.0, 1).unwrap();
    let u = evaluate_ground_truth(&model, &st.basis).unwrap();
    // at basis centres the expansion reproduces the sampled density
    let (c1, c2) = (st.basis.x1().centers(), st.basis.x2().centers());
    for x in [[c1[2], c2[5]], [c1[6], c2[6]], [c1[10], c2[1]]] {
        let s = light_weighted_losvd(&u, &st.basis, &st.templates, x).unwrap();
        assert!(s.valid);
        assert!((trapezoid(&s.v, &s.p) - 1.0).abs() < 1e-8);
        let mu = c.mean_velocity(x[0], x[1]);
        let exact: Vec<f64> = s.v.iter().map(|&v| gauss(v, mu, c.dispersion)).collect();
        let z = trapezoid(&s.v, &exact);
        let peak = exact.iter().fold(0.0f64, |a, &b| a.max(b)) / z;
        let worst = s.p.iter().zip(&exact).map(|(a, b)| (a - b / z).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.02 * peak, "{x:?}: {worst:e} vs peak {peak:e}");
    }
}

fn sample_maps() -> (MomentMaps<f64>, Vec<LosvdSample<f64>>) {
    let st = Setup::<f64>::preset(Preset::DeskScale, Smoothness::Constant, 1.0, 1).unwrap();
    let u = evaluate_ground_truth(&GalaxyModel::default_mixture(), &st.basis).unwrap();
    let maps = moment_maps(&u, &st.basis, &st.templates).unwrap();
    let samples = default_losvd_positions(&st.basis)
        .into_iter()
        .map(|x| light_weighted_losvd(&u, &st.basis, &st.templates, x).unwrap())
        .collect();
    (maps, samples)
}

#[test]
fn export_round_trips_and_is_deterministic() {
    let (maps, samples) = sample_maps();
    assert!(maps.mask.iter().any(|&m| m));
    for c in 0..maps.mask.len() {
        if maps.mask[c] {
            assert!(maps.sigma_v[c] > 0.0 && maps.sigma_v[c] <= 1000.0);
        } else {
            assert_eq!(maps.h5[c], SENTINEL);
        }
    }
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    export_maps(&maps, &samples, a.path()).unwrap();
    export_maps(&maps, &samples, b.path()).unwrap();
    for f in ["maps.tsv", "losvd_0.tsv", "losvd_8.tsv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
    let back = read_maps(&a.path().join("maps.tsv")).unwrap();
    assert_eq!(back, maps);
}

#[test]
fn empty_mask_exports_sentinel_rows() {
    let st = Setup::<f64>::preset(Preset::Tiny, Smoothness::Constant, 1.0, 1).unwrap();
    let u = vec![0.0; st.system.n_coeffs()];
    let maps = moment_maps(&u, &st.basis, &st.templates).unwrap();
    assert!(maps.mask.iter().all(|&m| !m));
    let dir = tempfile::tempdir().unwrap();
    export_maps(&maps, &[], dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("maps.tsv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x1\tx2\tmu_t\tmu_z\tmu_v\tsigma_v\th3\th4\th5\tmask");
    for line in lines {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols[9], "0");
        assert!(cols[2..9].iter().all(|c| c.parse::<f64>().unwrap() == SENTINEL));
    }
}

#[test]
fn unwritable_export_path_is_an_io_error() {
    let (maps, _) = sample_maps();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("f");
    std::fs::write(&file, b"x").unwrap();
    assert!(matches!(export_maps(&maps, &[], &file.join("sub")), Err(pnkr::Error::Io { .. })));
}

#[test]
fn truth_h5_map_has_off_plane_structure() {
    let st = Setup::<f64>::preset(Preset::DeskScale, Smoothness::Linear, 0.01, 1).unwrap();
    let u = evaluate_ground_truth(&GalaxyModel::default_mixture(), &st.basis).unwrap();
    let m = moment_maps(&u, &st.basis, &st.templates).unwrap();
    let n1 = m.nx1();
    let cells: Vec<bool> = (0..m.mask.len())
        .map(|c| m.mask[c] && m.x2[c / n1].abs() > 0.2 && m.h5[c].abs() > 0.02)
        .collect();
    assert!(connected_regions(&cells, n1, m.nx2()).len() >= 2);
    // counter-rotation: the mean velocity changes sign across the minor axis in the plane
    let j = m.x2.iter().position(|&x| x.abs() < 0.1).unwrap();
    let row = &m.mu_v[j * n1..(j + 1) * n1];
    assert!(row[n1 - 1] * row[0] < 0.0);
}
