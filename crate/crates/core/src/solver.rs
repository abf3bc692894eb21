//! Projected Nesterov-Kaczmarz reconstruction and its baselines.
//!
//! Every variant works on the factored system: the data for wavelength `r`
//! is the slice `y_r`, and the Kaczmarz direction for `H_r` collapses to the
//! rank-one tensor `(Ψ⁻¹ G d) ⊗ (Φ⁻¹ q_r)` with `d = y_r − U q_r`.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{apply_zs, Datacube, ForwardSystem, SmoothingKernel};
use crate::io::{BinReader, BinWriter};
use crate::numeric::{norm2, sub, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Pnkr,
    ReducedPnkr,
    LandweberKaczmarz,
    Landweber,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pnkr" => Ok(Self::Pnkr),
            "reduced_pnkr" | "reduced-pnkr" => Ok(Self::ReducedPnkr),
            "landweber_kaczmarz" | "landweber-kaczmarz" | "lwk" => Ok(Self::LandweberKaczmarz),
            "landweber" => Ok(Self::Landweber),
            _ => Err(Error::Config(format!("unknown solver variant '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Ordering {
    Cyclic,
    /// Fresh permutation of the equations before every sweep.
    Random { seed: u64 },
}

/// Where the Nesterov extrapolation is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Momentum {
    /// Once per sweep: `u ← T(u + f(k_R)(u − u_prev_sweep))`, then a plain
    /// projected Kaczmarz sweep.
    PerSweep,
    /// Before every accepted update, with `u_{k−1}` the previous iterate.
    PerUpdate,
}

impl std::str::FromStr for Momentum {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_sweep" | "per-sweep" | "sweep" => Ok(Self::PerSweep),
            "per_update" | "per-update" | "update" => Ok(Self::PerUpdate),
            _ => Err(Error::Config(format!("unknown momentum mode '{s}'"))),
        }
    }
}

/// Constant stepsize, either given or derived from the per-equation operator norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Stepsize {
    Fixed(f64),
    /// `relax / max_r ‖M⁻¹H_rᵀN⁻¹H_r‖_M` (summed over `r` for full Landweber).
    Auto(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub variant: Variant,
    pub omega: Stepsize,
    pub tau: f64,
    pub max_loops: usize,
    pub ordering: Ordering,
    #[serde(default = "default_momentum")]
    pub momentum: Momentum,
}

fn default_momentum() -> Momentum {
    Momentum::PerSweep
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Pnkr,
            omega: Stepsize::Auto(0.5),
            tau: 1.2,
            max_loops: 200,
            ordering: Ordering::Cyclic,
            momentum: Momentum::PerSweep,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau = {} must exceed 1", self.tau)));
        }
        let w = match self.omega {
            Stepsize::Fixed(w) | Stepsize::Auto(w) => w,
        };
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::Config(format!("stepsize {w} must be positive")));
        }
        Ok(())
    }

    /// The constant ω actually used by `variant` on `system`.
    pub fn resolve_omega<T: Real>(&self, system: &ForwardSystem<T>) -> Result<T> {
        let relax = match self.omega {
            Stepsize::Fixed(w) => return Ok(T::lit(w)),
            Stepsize::Auto(relax) => T::lit(relax),
        };
        let norms = (0..system.n_obs()).map(|r| system.equation_norm(r));
        let scale = match self.variant {
            Variant::Landweber => norms.sum::<T>(),
            _ => norms.fold(T::zero(), T::max),
        };
        if !(scale > T::zero()) {
            return Err(Error::Config("all equations have zero norm".into()));
        }
        let omega = relax / scale;
        Ok(match self.variant {
            Variant::ReducedPnkr => omega / reduced_constant(system)?,
            _ => omega,
        })
    }
}

/// One row of the convergence history; row 0 describes the initial guess.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub sweep: usize,
    /// Accepted updates in this sweep.
    pub updates: usize,
    pub total_updates: usize,
    /// `sqrt(Σ_r ‖y_r − U q_r‖²)` in the data norm.
    pub data_residual: f64,
    /// `sqrt(Σ_r ‖H_r (u* − u_k)‖²)` in the data norm, when the truth is known.
    pub res: Option<f64>,
    /// `‖u* − u_k‖ / ‖u*‖`.
    pub error: Option<f64>,
    /// Wall time since the start of the run. Not part of reproducibility checks.
    pub seconds: f64,
}

impl HistoryRow {
    /// Everything but the timing column.
    pub fn same_numbers(&self, other: &Self) -> bool {
        let bits = |x: Option<f64>| x.map(f64::to_bits);
        self.sweep == other.sweep
            && self.updates == other.updates
            && self.total_updates == other.total_updates
            && self.data_residual.to_bits() == other.data_residual.to_bits()
            && bits(self.res) == bits(other.res)
            && bits(self.error) == bits(other.error)
    }
}

/// Entrywise `max(u, 0)`.
pub fn threshold<T: Real>(u: &[T]) -> Vec<T> {
    u.iter().map(|&x| x.max(T::zero())).collect()
}

/// Nesterov factor `(k_R − 1) / (k_R + 2)`.
pub fn nesterov_factor<T: Real>(k_r: usize) -> T {
    assert!(k_r >= 1, "loop counter starts at 1");
    T::from_usize_lossy(k_r - 1) / T::from_usize_lossy(k_r + 2)
}

/// `z = u_k + ((k_R − 1)/(k_R + 2)) (u_k − u_{k−1})`.
pub fn nesterov_extrapolate<T: Real>(u_k: &[T], u_km1: &[T], k_r: usize) -> Vec<T> {
    extrapolate(u_k, u_km1, nesterov_factor(k_r))
}

fn extrapolate<T: Real>(u_k: &[T], u_km1: &[T], a: T) -> Vec<T> {
    if a == T::zero() {
        return u_k.to_vec();
    }
    u_k.iter().zip(u_km1).map(|(&x, &y)| x + a * (x - y)).collect()
}

/// `c_N · mean(diag Φ)`: the scalar that turns the reduced update into the
/// plain one for the identity stencil. Needs diagonal Ψ = c_N I and diagonal Φ.
pub fn reduced_constant<T: Real>(system: &ForwardSystem<T>) -> Result<T> {
    let c_n = system.c_n().ok_or_else(|| {
        Error::Config("reduced PNKR needs a piecewise-constant basis on a uniform spatial grid".into())
    })?;
    let psi = &system.grams().psi;
    let phi = &system.grams().phi;
    if !psi.is_diagonal() || !phi.is_diagonal() {
        return Err(Error::Config("reduced PNKR needs the piecewise-constant basis (s = 0)".into()));
    }
    let d = phi.diagonal();
    Ok(c_n * d.iter().copied().sum::<T>() / T::from_usize_lossy(d.len()))
}

/// Iteration state between sweeps.
#[derive(Debug, Clone)]
pub struct SolverState<T> {
    u: Vec<T>,
    u_prev: Vec<T>,
    /// Iterate at the start of the previous sweep.
    anchor: Vec<T>,
    k: usize,
    k_r: usize,
    permutation: Vec<usize>,
    dp_satisfied: Vec<bool>,
    history: Vec<HistoryRow>,
    rng: Option<ChaCha8Rng>,
    norm_ref: T,
}

impl<T: Real> SolverState<T> {
    pub fn new(system: &ForwardSystem<T>, config: &SolverConfig, initial: Option<Vec<T>>) -> Result<Self> {
        let m = system.n_coeffs();
        let u = match initial {
            Some(u) if u.len() != m => return Err(Error::Dimension { expected: m, got: u.len() }),
            Some(u) => threshold(&u),
            None => vec![T::zero(); m],
        };
        let rng = match config.ordering {
            Ordering::Cyclic => None,
            Ordering::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        Ok(Self {
            norm_ref: norm2(&u),
            u_prev: u.clone(),
            anchor: u.clone(),
            u,
            k: 0,
            k_r: 1,
            permutation: (0..system.n_obs()).collect(),
            dp_satisfied: vec![false; system.n_obs()],
            history: Vec::new(),
            rng,
        })
    }

    pub fn u(&self) -> &[T] {
        &self.u
    }

    pub fn u_prev(&self) -> &[T] {
        &self.u_prev
    }

    /// Accepted updates so far.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Loop counter of the Nesterov factor, starting at 1.
    pub fn k_r(&self) -> usize {
        self.k_r
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Gate outcomes from the most recent visit of each equation.
    pub fn dp_satisfied(&self) -> &[bool] {
        &self.dp_satisfied
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    pub fn into_coefficients(self) -> Vec<T> {
        self.u
    }

    fn next_order(&mut self) {
        if let Some(rng) = self.rng.as_mut() {
            self.permutation.sort_unstable();
            self.permutation.shuffle(rng);
        }
    }

    /// Divergence reference: `max(‖u_0‖, largest unit-relaxation step from 0)`.
    fn ensure_reference(&mut self, system: &ForwardSystem<T>, data: &Data<'_, T>) {
        if self.norm_ref > T::zero() {
            return;
        }
        self.norm_ref = (0..system.n_obs())
            .map(|r| {
                let lam = system.equation_norm(r);
                if lam > T::zero() {
                    let a = system.solve_psi(&system.data_moments(&data.y[r]));
                    norm2(&a) * norm2(system.phi_inv_q(r)) / lam
                } else {
                    T::zero()
                }
            })
            .fold(T::zero(), T::max);
    }

    fn accept(&mut self, next: Vec<T>, omega: T) -> Result<()> {
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged(format!("non-finite coefficient; stepsize ω = {omega:e} is too large")));
        }
        let nn = norm2(&next);
        if nn > T::lit(1e6) * self.norm_ref {
            return Err(Error::Diverged(format!(
                "‖u‖ grew by more than 1e6 over its reference; stepsize ω = {omega:e} is too large"
            )));
        }
        self.u_prev = std::mem::replace(&mut self.u, next);
        self.k += 1;
        Ok(())
    }
}

/// Observed slices with their noise levels.
#[derive(Debug, Clone, Copy)]
pub struct Data<'a, T> {
    pub y: &'a [Vec<T>],
    pub delta: &'a [T],
}

impl<'a, T: Real> Data<'a, T> {
    pub fn new(cube: &'a Datacube<T>, system: &ForwardSystem<T>) -> Result<Self> {
        if cube.slices.len() != system.n_obs() || cube.delta.len() != system.n_obs() {
            return Err(Error::Dimension {
                expected: system.n_obs(),
                got: cube.slices.len(),
            });
        }
        if let Some(s) = cube.slices.iter().find(|s| s.len() != system.n_spatial()) {
            return Err(Error::Dimension {
                expected: system.n_spatial(),
                got: s.len(),
            });
        }
        Ok(Self {
            y: &cube.slices,
            delta: &cube.delta,
        })
    }
}

/// Data-norm residual of equation `r` at `u`.
pub fn equation_residual_norm<T: Real>(system: &ForwardSystem<T>, u: &[T], r: usize, y: &[T]) -> Result<T> {
    system.equation_residual_norm(u, r, y)
}

fn slice_residual<T: Real>(system: &ForwardSystem<T>, u: &[T], r: usize, y: &[T]) -> Result<Vec<T>> {
    Ok(sub(y, &system.model_slice(u, r)?))
}

/// `(Ψ⁻¹ G d) ⊗ (Φ⁻¹ q_r)` scaled by ω, added to `z` and thresholded.
fn pnkr_update<T: Real>(system: &ForwardSystem<T>, z: &[T], r: usize, d: &[T], omega: T) -> Vec<T> {
    let a = system.solve_psi(&system.grams().g.mul_vec(d));
    let p = system.phi_inv_q(r);
    let l = p.len();
    let mut out = z.to_vec();
    out.par_chunks_mut(l).zip(a.par_iter()).for_each(|(row, &an)| {
        let s = omega * an;
        for (x, &pl) in row.iter_mut().zip(p) {
            *x = (*x + s * pl).max(T::zero());
        }
    });
    out
}

/// `c_N⁻¹ Z_s((I ⊗ V⁻¹) H_rᵀ d_w)` with `V = diag Φ / mean(diag Φ)`.
fn reduced_direction<T: Real>(
    system: &ForwardSystem<T>,
    r: usize,
    d: &[T],
    kernel: &SmoothingKernel<T>,
) -> Result<Vec<T>> {
    let c_n = system.c_n().ok_or_else(|| Error::Config("reduced PNKR needs c_N".into()))?;
    let w = system.data_moments(d);
    let mut h = system.apply_hr_t(&w, r)?;
    let phi = system.grams().phi.diagonal();
    let mean = phi.iter().copied().sum::<T>() / T::from_usize_lossy(phi.len());
    let l = phi.len();
    h.par_chunks_mut(l).for_each(|row| {
        for (x, &v) in row.iter_mut().zip(&phi) {
            *x = *x * mean / (v * c_n);
        }
    });
    if kernel.is_identity() {
        return Ok(h);
    }
    apply_zs(&h, system.lattice(), kernel)
}

/// Outcome of one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepReport {
    pub updates: usize,
}

fn kaczmarz_sweep<T: Real>(
    state: &mut SolverState<T>,
    config: &SolverConfig,
    data: &Data<'_, T>,
    system: &ForwardSystem<T>,
    omega: T,
    momentum: bool,
    kernel: Option<&SmoothingKernel<T>>,
) -> Result<SweepReport> {
    let tau = T::lit(config.tau);
    let f = if momentum { nesterov_factor(state.k_r) } else { T::zero() };
    let factor = match config.momentum {
        Momentum::PerUpdate => f,
        Momentum::PerSweep => {
            let start = state.u.clone();
            if f > T::zero() {
                let z = threshold(&extrapolate(&state.u, &state.anchor, f));
                if z.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Diverged(format!("non-finite extrapolation; stepsize ω = {omega:e}")));
                }
                state.u = z;
            }
            state.anchor = start;
            T::zero()
        }
    };
    state.ensure_reference(system, data);
    state.next_order();
    let order = state.permutation.clone();
    let mut updates = 0;
    for r in order {
        let y = &data.y[r];
        let d = slice_residual(system, &state.u, r, y)?;
        let ok = system.data_norm(&d) <= tau * data.delta[r];
        state.dp_satisfied[r] = ok;
        if ok {
            continue;
        }
        let (z, d) = if factor == T::zero() {
            (state.u.clone(), d)
        } else {
            let z = extrapolate(&state.u, &state.u_prev, factor);
            let dz = slice_residual(system, &z, r, y)?;
            (z, dz)
        };
        let next = match kernel {
            None => pnkr_update(system, &z, r, &d, omega),
            Some(k) => {
                let dir = reduced_direction(system, r, &d, k)?;
                z.iter().zip(&dir).map(|(&a, &b)| (a + omega * b).max(T::zero())).collect()
            }
        };
        state.accept(next, omega)?;
        updates += 1;
    }
    state.k_r += 1;
    Ok(SweepReport { updates })
}

/// One PNKR sweep over all equations in the configured order.
pub fn pnkr_sweep<T: Real>(
    state: &mut SolverState<T>,
    config: &SolverConfig,
    data: &Data<'_, T>,
    system: &ForwardSystem<T>,
    omega: T,
) -> Result<SweepReport> {
    kaczmarz_sweep(state, config, data, system, omega, true, None)
}

/// Reduced PNKR sweep: `M⁻¹` replaced by the stencil `Z_s`. Requires `s = 0`.
pub fn reduced_pnkr_sweep<T: Real>(
    state: &mut SolverState<T>,
    config: &SolverConfig,
    data: &Data<'_, T>,
    system: &ForwardSystem<T>,
    kernel: &SmoothingKernel<T>,
    omega: T,
) -> Result<SweepReport> {
    reduced_constant(system)?;
    kaczmarz_sweep(state, config, data, system, omega, true, Some(kernel))
}

/// Landweber-Kaczmarz sweep (Nesterov factor pinned to 0), or one full
/// Landweber step summing the gated directions of all equations.
pub fn baseline_step<T: Real>(
    state: &mut SolverState<T>,
    config: &SolverConfig,
    data: &Data<'_, T>,
    system: &ForwardSystem<T>,
    omega: T,
) -> Result<SweepReport> {
    if config.variant != Variant::Landweber {
        return kaczmarz_sweep(state, config, data, system, omega, false, None);
    }
    let tau = T::lit(config.tau);
    state.ensure_reference(system, data);
    let u = &state.u;
    let parts: Vec<Option<Vec<T>>> = (0..system.n_obs())
        .into_par_iter()
        .map(|r| -> Result<Option<Vec<T>>> {
            let d = slice_residual(system, u, r, &data.y[r])?;
            if system.data_norm(&d) <= tau * data.delta[r] {
                return Ok(None);
            }
            Ok(Some(system.solve_psi(&system.grams().g.mul_vec(&d))))
        })
        .collect::<Result<_>>()?;
    let l = system.n_theta();
    let mut dir = vec![T::zero(); system.n_coeffs()];
    let mut updates = 0;
    for (r, part) in parts.iter().enumerate() {
        state.dp_satisfied[r] = part.is_none();
        if let Some(a) = part {
            updates += 1;
            let p = system.phi_inv_q(r);
            for (row, &an) in dir.chunks_mut(l).zip(a) {
                for (x, &pl) in row.iter_mut().zip(p) {
                    *x += an * pl;
                }
            }
        }
    }
    if updates > 0 {
        let next = state.u.iter().zip(&dir).map(|(&a, &b)| (a + omega * b).max(T::zero())).collect();
        state.accept(next, omega)?;
    }
    state.k_r += 1;
    Ok(SweepReport { updates })
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput<T> {
    pub u: Vec<T>,
    pub history: Vec<HistoryRow>,
    /// `max_loops` was reached before every equation passed its gate.
    pub truncated: bool,
    pub omega: T,
    pub dp_satisfied: Vec<bool>,
}

fn record<T: Real>(
    state: &mut SolverState<T>,
    system: &ForwardSystem<T>,
    data: &Data<'_, T>,
    truth: Option<(&[T], T)>,
    sweep: usize,
    updates: usize,
    start: Instant,
) -> Result<()> {
    let u = &state.u;
    let sq = |v: Vec<T>| v.iter().map(|&x| x * x).sum::<T>().sqrt().to_f64_lossy();
    let data_residual = sq((0..system.n_obs())
        .into_par_iter()
        .map(|r| system.equation_residual_norm(u, r, &data.y[r]))
        .collect::<Result<Vec<T>>>()?);
    let (res, error) = match truth {
        Some((t, tn)) => {
            let e = sub(t, u);
            let res = sq((0..system.n_obs())
                .into_par_iter()
                .map(|r| Ok(system.data_norm(&system.model_slice(&e, r)?)))
                .collect::<Result<Vec<T>>>()?);
            let err = if tn > T::zero() { (norm2(&e) / tn).to_f64_lossy() } else { norm2(&e).to_f64_lossy() };
            (Some(res), Some(err))
        }
        None => (None, None),
    };
    state.history.push(HistoryRow {
        sweep,
        updates,
        total_updates: state.k,
        data_residual,
        res,
        error,
        seconds: start.elapsed().as_secs_f64(),
    });
    Ok(())
}

/// Sweeps until one full sweep makes no update (every equation meets
/// `‖y_r − U q_r‖ ≤ τ δ_r` at the final iterate) or `max_loops` is reached.
pub fn run<T: Real>(
    config: &SolverConfig,
    data: &Data<'_, T>,
    system: &ForwardSystem<T>,
    initial: Option<Vec<T>>,
    truth: Option<&[T]>,
    kernel: &SmoothingKernel<T>,
) -> Result<RunOutput<T>> {
    config.validate()?;
    if let Some(t) = truth {
        if t.len() != system.n_coeffs() {
            return Err(Error::Dimension {
                expected: system.n_coeffs(),
                got: t.len(),
            });
        }
    }
    let omega = config.resolve_omega(system)?;
    let mut state = SolverState::new(system, config, initial)?;
    let truth = truth.map(|t| (t, norm2(t)));
    let start = Instant::now();
    record(&mut state, system, data, truth, 0, 0, start)?;
    let mut truncated = true;
    for sweep in 1..=config.max_loops {
        let rep = match config.variant {
            Variant::Pnkr => pnkr_sweep(&mut state, config, data, system, omega)?,
            Variant::ReducedPnkr => reduced_pnkr_sweep(&mut state, config, data, system, kernel, omega)?,
            Variant::LandweberKaczmarz | Variant::Landweber => baseline_step(&mut state, config, data, system, omega)?,
        };
        record(&mut state, system, data, truth, sweep, rep.updates, start)?;
        if rep.updates == 0 {
            truncated = false;
            break;
        }
    }
    Ok(RunOutput {
        dp_satisfied: state.dp_satisfied.clone(),
        history: state.history.clone(),
        u: state.into_coefficients(),
        truncated,
        omega,
    })
}

/// Plain-text history table, one row per sweep.
pub fn format_history(rows: &[HistoryRow]) -> String {
    let opt = |x: Option<f64>| x.map_or_else(|| "nan".to_string(), |v| format!("{v:e}"));
    let mut s = String::from("loop\tupdates\ttotal_updates\tdata_residual\tres_k\terror_k\tseconds\n");
    for h in rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{:e}\t{}\t{}\t{:.3}\n",
            h.sweep,
            h.updates,
            h.total_updates,
            h.data_residual,
            opt(h.res),
            opt(h.error),
            h.seconds
        ));
    }
    s
}

const PNKU_MAGIC: &[u8; 4] = b"PNKU";
const PNKU_VERSION: u32 = 1;

/// Writes a coefficient vector with its `(N, L)` shape.
pub fn write_coefficients<T: Real>(path: &Path, n_spatial: usize, n_theta: usize, u: &[T]) -> Result<()> {
    if u.len() != n_spatial * n_theta {
        return Err(Error::Dimension {
            expected: n_spatial * n_theta,
            got: u.len(),
        });
    }
    let mut w = BinWriter::create(path, PNKU_MAGIC, PNKU_VERSION)?;
    w.u64(n_spatial as u64)?;
    w.u64(n_theta as u64)?;
    w.reals(u)?;
    w.finish()
}

/// Reads `(N, L, u)`.
pub fn read_coefficients<T: Real>(path: &Path) -> Result<(usize, usize, Vec<T>)> {
    let mut r = BinReader::open(path, PNKU_MAGIC, PNKU_VERSION)?;
    let n = r.count(1 << 24)?;
    let l = r.count(1 << 24)?;
    let m = n
        .checked_mul(l)
        .filter(|&m| m <= 1 << 28)
        .ok_or_else(|| Error::format(path, "coefficient count too large"))?;
    let u = r.reals(m)?;
    r.expect_end()?;
    Ok((n, l, u))
}
