//! Named problem sizes and the pipeline setup they expand to.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardSystem;
use crate::grid_basis::{AxisSpec, DiscreteBasis, GridSpec, Quadrature, Smoothness};
use crate::numeric::{Real, SPEED_OF_LIGHT_KMS};
use crate::templates::{SpectrumModel, TemplateConfig, TemplateGrid};

pub const V_MAX: f64 = 1000.0;
pub const Z_RANGE: (f64, f64) = (-2.66, 0.36);
pub const T_RANGE: (f64, f64) = (0.015, 14.25);
pub const LAMBDA_MIN: f64 = 480.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Tiny,
    #[value(aliases = ["desk", "desk_scale"])]
    DeskScale,
    #[value(aliases = ["paper", "paper_scale"])]
    PaperScale,
}

impl Preset {
    /// Node counts `(Ω per side, v, z, t, R)`.
    pub fn counts(self) -> (usize, usize, usize, usize, usize) {
        match self {
            Preset::Tiny => (4, 5, 3, 3, 8),
            Preset::DeskScale => (13, 15, 5, 9, 96),
            Preset::PaperScale => (26, 27, 7, 19, 687),
        }
    }

    pub fn grid_spec(self) -> GridSpec {
        let (nx, nv, nz, nt, _) = self.counts();
        GridSpec {
            x1: AxisSpec::uniform(-1.0, 1.0, nx),
            x2: AxisSpec::uniform(-1.0, 1.0, nx),
            v: AxisSpec::uniform(-V_MAX, V_MAX, nv),
            z: AxisSpec::uniform(Z_RANGE.0, Z_RANGE.1, nz),
            t: AxisSpec::geometric(T_RANGE.0, T_RANGE.1, nt),
        }
    }

    /// Log-λ step equal to the velocity spacing; line width 1.5 steps.
    pub fn template_config(self, seed: u64) -> TemplateConfig {
        let (_, nv, _, _, r) = self.counts();
        let step = 2.0 * V_MAX / (nv - 1) as f64;
        TemplateConfig {
            lambda_min: LAMBDA_MIN,
            n_obs: r,
            step_kms: step,
            v_max: V_MAX,
            margin: 2,
            line_sigma_kms: 1.5 * step,
            seed,
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::Tiny => "tiny",
            Preset::DeskScale => "desk_scale",
            Preset::PaperScale => "paper_scale",
        })
    }
}

/// Spectrum model covering the padded template table of `config`.
pub fn spectrum_model(config: &TemplateConfig) -> Result<SpectrumModel> {
    let slack = 1.0 + 1.5 * config.v_max / SPEED_OF_LIGHT_KMS + 0.01;
    SpectrumModel::new(
        config.seed,
        config.lambda_min / slack,
        config.lambda_max() * slack,
        config.line_sigma_kms,
        Z_RANGE,
        T_RANGE,
    )
}

pub fn synthesize_templates<T: Real>(grid: &GridSpec, config: &TemplateConfig) -> Result<TemplateGrid<T>> {
    let [_, _, _, z, t] = grid.build::<T>()?;
    TemplateGrid::synthesize(config, &spectrum_model(config)?, z, t)
}

/// Basis, templates and assembled operators for one problem.
#[derive(Debug, Clone)]
pub struct Setup<T> {
    pub basis: DiscreteBasis<T>,
    pub templates: TemplateGrid<T>,
    pub system: ForwardSystem<T>,
}

impl<T: Real> Setup<T> {
    pub fn build(grid: &GridSpec, s: Smoothness, beta: f64, templates: TemplateGrid<T>) -> Result<Self> {
        let grids = grid.build::<T>()?;
        if templates.z().nodes() != grids[3].nodes() || templates.t().nodes() != grids[4].nodes() {
            return Err(Error::Config("template (z, t) nodes differ from the grid spec".into()));
        }
        let basis = DiscreteBasis::with_scalar_beta(s, grids, T::lit(beta), Quadrature::default())?;
        let system = ForwardSystem::assemble(&basis, &templates)?;
        Ok(Self {
            basis,
            templates,
            system,
        })
    }

    pub fn preset(preset: Preset, s: Smoothness, beta: f64, template_seed: u64) -> Result<Self> {
        let grid = preset.grid_spec();
        let templates = synthesize_templates(&grid, &preset.template_config(template_seed))?;
        Self::build(&grid, s, beta, templates)
    }
}
