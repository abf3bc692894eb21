//! Command-line pipeline: templates, mocks, solving, maps and the robustness batch.
//!
//! Every subcommand accepts `--config <file>` with `key = value` lines whose
//! keys are the long flag names; flags given on the command line win. Each
//! run writes `manifest.toml` in the same format, so
//! `pnkr <command> --config <dir>/manifest.toml` repeats it.

pub mod preset;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::diagnostics::{default_losvd_positions, export_maps, light_weights, losvd_with_weights, moment_maps};
use crate::error::{Error, Result};
use crate::forward::{Datacube, SmoothingKernel};
use crate::grid_basis::{DiscreteBasis, GridSpec, Quadrature, Smoothness};
use crate::mock::{add_noise, clean_datacube, evaluate_ground_truth, GalaxyModel};
use crate::solver::{
    format_history, read_coefficients, run, write_coefficients, Data, Momentum, Ordering, RunOutput, SolverConfig,
    Stepsize, Variant,
};
use crate::templates::TemplateGrid;

pub use preset::{Preset, Setup};

pub const MANIFEST: &str = "manifest.toml";

/// Keys in a manifest that are not flags.
const RESERVED_KEYS: [&str; 2] = ["command", "version"];

#[derive(Debug, Parser)]
#[command(name = "pnkr", version, about = "Projected Nesterov-Kaczmarz reconstruction of IFU datacubes")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a template table.
    GenTemplates(GenTemplatesArgs),
    /// Evaluate the mock galaxy, its clean and noisy datacubes.
    GenMock(GenMockArgs),
    /// Reconstruct coefficients from a datacube.
    Solve(SolveArgs),
    /// Population and kinematic maps of a coefficient file.
    Maps(MapsArgs),
    /// Repeated gen-mock + solve over noise seeds with a LOSVD error summary.
    Robustness(RobustnessArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenTemplates(_) => "gen-templates",
            Command::GenMock(_) => "gen-mock",
            Command::Solve(_) => "solve",
            Command::Maps(_) => "maps",
            Command::Robustness(_) => "robustness",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GridArgs {
    /// Named problem size; sets every grid count and R.
    #[arg(long, value_enum, default_value_t = Preset::DeskScale)]
    pub preset: Preset,
    /// Grid spec TOML replacing the preset grid.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Key = value file of flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl GridArgs {
    fn spec(&self) -> Result<GridSpec> {
        match &self.grid {
            Some(p) => GridSpec::from_toml_str(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => Ok(self.preset.grid_spec()),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct BasisArgs {
    /// Basis smoothness: 0 piecewise constant, 1 piecewise linear.
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    pub s: u8,
    /// Derivative weight of the Sobolev inner product.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
}

impl BasisArgs {
    fn smoothness(&self) -> Result<Smoothness> {
        Smoothness::from_order(self.s)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SolverArgs {
    /// pnkr, reduced_pnkr, landweber_kaczmarz or landweber.
    #[arg(long, default_value = "pnkr")]
    pub variant: Variant,
    /// Fixed stepsize; without it ω = relax / max_r λ_r.
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub relax: f64,
    #[arg(long, default_value_t = 1.2)]
    pub tau: f64,
    #[arg(long, default_value_t = 200)]
    pub max_loops: usize,
    /// Random equation order with this seed; cyclic without it.
    #[arg(long)]
    pub ordering_seed: Option<u64>,
    /// per_sweep or per_update.
    #[arg(long, default_value = "per_sweep")]
    pub momentum: Momentum,
    /// Smoothing stencil of reduced PNKR: identity or triangle.
    #[arg(long, default_value = "identity")]
    pub stencil: String,
}

impl SolverArgs {
    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            variant: self.variant,
            omega: self.omega.map_or(Stepsize::Auto(self.relax), Stepsize::Fixed),
            tau: self.tau,
            max_loops: self.max_loops,
            ordering: self.ordering_seed.map_or(Ordering::Cyclic, |seed| Ordering::Random { seed }),
            momentum: self.momentum,
        }
    }

    fn kernel(&self) -> Result<SmoothingKernel<f64>> {
        match self.stencil.as_str() {
            "identity" => Ok(SmoothingKernel::identity()),
            "triangle" => Ok(SmoothingKernel::triangle()),
            s => Err(Error::Config(format!("unknown stencil '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenTemplatesArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 1)]
    pub template_seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenMockArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub basis: BasisArgs,
    #[arg(long)]
    pub templates: PathBuf,
    /// Galaxy model TOML; the default three-component mixture without it.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Relative noise level.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 5)]
    pub noise_seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SolveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub templates: PathBuf,
    #[arg(long)]
    pub cube: PathBuf,
    /// Reference coefficients for the error column.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Starting coefficients; zero without it.
    #[arg(long)]
    pub initial: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct MapsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub basis: BasisArgs,
    #[arg(long)]
    pub templates: PathBuf,
    #[arg(long)]
    pub coefficients: PathBuf,
    /// LOSVD position `x1,x2`; repeatable. A 3×3 grid over Ω without it.
    #[arg(long, value_parser = parse_position, allow_hyphen_values = true)]
    #[serde(serialize_with = "ser_positions")]
    pub losvd: Vec<[f64; 2]>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct RobustnessArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    /// Number of noise realizations.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub template_seed: u64,
    /// Run k uses noise seed `base-seed + k`.
    #[arg(long, default_value_t = 100)]
    pub base_seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn parse_position(s: &str) -> std::result::Result<[f64; 2], String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected x1,x2, got '{s}'"))?;
    let p = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}"));
    Ok([p(a)?, p(b)?])
}

fn ser_positions<S: serde::Serializer>(v: &[[f64; 2]], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|p| format!("{:?},{:?}", p[0], p[1])))
}

/// `key = value` lines to flags. Values may be TOML literals; arrays repeat the flag.
pub fn config_to_args(text: &str, origin: &Path) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('[') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(origin, format!("line {}: expected key = value", i + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if RESERVED_KEYS.contains(&key) {
            continue;
        }
        let values: Vec<String> = match format!("x = {value}").parse::<toml::Table>() {
            Ok(t) => match &t["x"] {
                toml::Value::Array(a) => a.iter().map(scalar_text).collect(),
                v => vec![scalar_text(v)],
            },
            Err(_) => vec![value.to_string()],
        };
        for v in values {
            match v.as_str() {
                "true" => out.push(format!("--{key}").into()),
                "false" => {}
                _ => {
                    out.push(format!("--{key}").into());
                    out.push(v.into());
                }
            }
        }
    }
    Ok(out)
}

fn scalar_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Float(f) => format!("{f:?}"),
        other => other.to_string(),
    }
}

/// Splices the `--config` file's flags in right after the subcommand, so
/// later command-line flags override them.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = argv.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let extra = config_to_args(&text, &path)?;
    // argv[0] is the program, argv[1] the subcommand
    if argv.len() < 2 {
        return Ok(argv);
    }
    let mut out = argv[..2].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}

/// Manifest text: version and command, then every resolved flag.
pub fn manifest_text<A: Serialize>(command: &str, args: &A, note: &[(&str, String)]) -> Result<String> {
    let table = toml::Table::try_from(args).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    let mut s = format!(
        "# pnkr run manifest\ncommand = \"{command}\"\nversion = \"{}\"\n",
        env!("CARGO_PKG_VERSION")
    );
    for (k, v) in note {
        s.push_str(&format!("# {k}: {v}\n"));
    }
    for (k, v) in &table {
        s.push_str(&format!("{k} = {v}\n"));
    }
    Ok(s)
}

fn write_manifest<A: Serialize>(dir: &Path, command: &str, args: &A, note: &[(&str, String)]) -> Result<()> {
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest_text(command, args, note)?).map_err(|e| Error::io(&path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_setup(grid: &GridArgs, basis: &BasisArgs, templates: &Path) -> Result<Setup<f64>> {
    let t = TemplateGrid::<f64>::read(templates)?;
    Setup::build(&grid.spec()?, basis.smoothness()?, basis.beta, t)
}

fn load_model(path: Option<&Path>) -> Result<GalaxyModel> {
    let model = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::format(p, e.to_string()))?
        }
        None => GalaxyModel::default_mixture(),
    };
    model.validate()?;
    Ok(model)
}

fn gen_templates(a: &GenTemplatesArgs) -> Result<()> {
    create_dir(&a.out_dir)?;
    let t: TemplateGrid<f64> =
        preset::synthesize_templates(&a.grid.spec()?, &a.grid.preset.template_config(a.template_seed))?;
    t.write(&a.out_dir.join("templates.pnkt"))?;
    write_manifest(&a.out_dir, "gen-templates", a, &[])?;
    println!("templates: R = {}, written to {}", t.n_obs(), a.out_dir.display());
    Ok(())
}

struct Mock {
    truth: Vec<f64>,
    clean: Datacube<f64>,
    noisy: Datacube<f64>,
}

fn make_mock(setup: &Setup<f64>, model: &GalaxyModel, noise: f64, seed: u64) -> Result<Mock> {
    let truth = evaluate_ground_truth(model, &setup.basis)?;
    let clean = clean_datacube(&setup.basis, &setup.system, &setup.templates, &truth)?;
    let set = add_noise(&clean, &setup.system, noise, seed)?;
    Ok(Mock {
        truth,
        clean,
        noisy: set.noisy,
    })
}

fn gen_mock(a: &GenMockArgs) -> Result<()> {
    create_dir(&a.out_dir)?;
    let setup = load_setup(&a.grid, &a.basis, &a.templates)?;
    let m = make_mock(&setup, &load_model(a.model.as_deref())?, a.noise, a.noise_seed)?;
    let (n, l) = (setup.system.n_spatial(), setup.system.n_theta());
    write_coefficients(&a.out_dir.join("truth.pnku"), n, l, &m.truth)?;
    m.clean.write(&a.out_dir.join("clean.pnkd"))?;
    m.noisy.write(&a.out_dir.join("noisy.pnkd"))?;
    write_manifest(
        &a.out_dir,
        "gen-mock",
        a,
        &[("total noise", format!("{:e}", m.noisy.total_delta()))],
    )?;
    println!("mock: N = {n}, L = {l}, delta = {:e}", m.noisy.total_delta());
    Ok(())
}

fn read_matching(path: &Path, setup: &Setup<f64>) -> Result<Vec<f64>> {
    let (n, l, u) = read_coefficients(path)?;
    if (n, l) != (setup.system.n_spatial(), setup.system.n_theta()) {
        return Err(Error::format(
            path,
            format!(
                "coefficients are {n}x{l}, grid needs {}x{}",
                setup.system.n_spatial(),
                setup.system.n_theta()
            ),
        ));
    }
    Ok(u)
}

fn solve_cube(
    setup: &Setup<f64>,
    solver: &SolverArgs,
    cube: &Datacube<f64>,
    initial: Option<Vec<f64>>,
    truth: Option<&[f64]>,
) -> Result<RunOutput<f64>> {
    cube.check_against(&setup.basis, &setup.system)?;
    let data = Data::new(cube, &setup.system)?;
    run(&solver.config(), &data, &setup.system, initial, truth, &solver.kernel()?)
}

fn write_run(dir: &Path, setup: &Setup<f64>, out: &RunOutput<f64>) -> Result<()> {
    let (n, l) = (setup.system.n_spatial(), setup.system.n_theta());
    write_coefficients(&dir.join("coefficients.pnku"), n, l, &out.u)?;
    let hp = dir.join("history.tsv");
    fs::write(&hp, format_history(&out.history)).map_err(|e| Error::io(&hp, e))
}

fn solve(a: &SolveArgs) -> Result<()> {
    let setup = load_setup(&a.grid, &a.basis, &a.templates)?;
    let cube = Datacube::<f64>::read(&a.cube)?;
    let truth = a.truth.as_deref().map(|p| read_matching(p, &setup)).transpose()?;
    let initial = a.initial.as_deref().map(|p| read_matching(p, &setup)).transpose()?;
    let out = solve_cube(&setup, &a.solver, &cube, initial, truth.as_deref())?;
    create_dir(&a.out_dir)?;
    write_run(&a.out_dir, &setup, &out)?;
    write_manifest(&a.out_dir, "solve", a, &[("omega", format!("{:e}", out.omega))])?;
    let last = out.history.last().expect("history has the initial row");
    println!(
        "solve: {} sweeps, {} updates, data residual {:e}, {}",
        last.sweep,
        last.total_updates,
        last.data_residual,
        if out.truncated { "stopped at max-loops" } else { "discrepancy principle met" }
    );
    Ok(())
}

fn maps(a: &MapsArgs) -> Result<()> {
    let t = TemplateGrid::<f64>::read(&a.templates)?;
    let grids = a.grid.spec()?.build::<f64>()?;
    let basis = DiscreteBasis::with_scalar_beta(a.basis.smoothness()?, grids, a.basis.beta, Quadrature::default())?;
    let (n, l, u) = read_coefficients::<f64>(&a.coefficients)?;
    if (n, l) != (basis.n_spatial(), basis.n_theta()) {
        return Err(Error::format(&a.coefficients, "coefficient dimensions do not match the grid"));
    }
    let mm = moment_maps(&u, &basis, &t)?;
    let positions = if a.losvd.is_empty() {
        default_losvd_positions(&basis)
    } else {
        a.losvd.clone()
    };
    let lw = light_weights(&basis, &t);
    let samples = positions
        .iter()
        .map(|&x| losvd_with_weights(&u, &basis, &lw, x))
        .collect::<Result<Vec<_>>>()?;
    export_maps(&mm, &samples, &a.out_dir)?;
    write_manifest(&a.out_dir, "maps", a, &[])?;
    println!(
        "maps: {} of {} cells valid, {} LOSVD samples",
        mm.mask.iter().filter(|&&m| m).count(),
        mm.mask.len(),
        samples.len()
    );
    Ok(())
}

/// Absolute differences of the light-weighted LOSVDs of `u` and `truth` at `positions`.
pub fn losvd_errors(
    u: &[f64],
    truth: &[f64],
    basis: &DiscreteBasis<f64>,
    templates: &TemplateGrid<f64>,
    positions: &[[f64; 2]],
) -> Result<Vec<f64>> {
    let lw = light_weights(basis, templates);
    let mut out = Vec::new();
    for &x in positions {
        let a = losvd_with_weights(u, basis, &lw, x)?;
        let b = losvd_with_weights(truth, basis, &lw, x)?;
        out.extend(a.p.iter().zip(&b.p).map(|(p, q)| (p - q).abs()));
    }
    Ok(out)
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn robustness(a: &RobustnessArgs) -> Result<()> {
    if a.n == 0 {
        return Err(Error::Config("robustness needs --n >= 1".into()));
    }
    create_dir(&a.out_dir)?;
    let spec = a.grid.spec()?;
    let templates = preset::synthesize_templates(&spec, &a.grid.preset.template_config(a.template_seed))?;
    let setup = Setup::build(&spec, a.basis.smoothness()?, a.basis.beta, templates)?;
    let model = GalaxyModel::default_mixture();
    let positions = default_losvd_positions(&setup.basis);
    let mut medians = Vec::with_capacity(a.n);
    let mut rows = String::from("run\tnoise_seed\tsweeps\ttruncated\tmedian_abs_losvd_error\n");
    for k in 0..a.n {
        let seed = a.base_seed + k as u64;
        let dir = a.out_dir.join(format!("run_{k}"));
        create_dir(&dir)?;
        let mock = make_mock(&setup, &model, a.noise, seed)?;
        let start = Instant::now();
        let out = solve_cube(&setup, &a.solver, &mock.noisy, None, Some(&mock.truth))?;
        let err = median(&losvd_errors(&out.u, &mock.truth, &setup.basis, &setup.templates, &positions)?);
        write_run(&dir, &setup, &out)?;
        mock.noisy.write(&dir.join("noisy.pnkd"))?;
        let mut run_args = a.clone();
        run_args.n = 1;
        run_args.base_seed = seed;
        run_args.out_dir = dir.clone();
        write_manifest(
            &dir,
            "robustness",
            &run_args,
            &[("run", k.to_string()), ("noise seed", seed.to_string())],
        )?;
        let sweeps = out.history.last().map_or(0, |h| h.sweep);
        rows.push_str(&format!("{k}\t{seed}\t{sweeps}\t{}\t{err:e}\n", out.truncated));
        eprintln!("run {k}: seed {seed}, {sweeps} sweeps, {:.1} s", start.elapsed().as_secs_f64());
        medians.push(err);
    }
    let (lo, hi) = medians
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let summary = format!(
        "runs\tbase_seed\tmedian_abs_losvd_error\tmin_run\tmax_run\n{}\t{}\t{:e}\t{lo:e}\t{hi:e}\n",
        a.n,
        a.base_seed,
        median(&medians)
    );
    let p = a.out_dir.join("summary.tsv");
    fs::write(&p, &summary).map_err(|e| Error::io(&p, e))?;
    let p = a.out_dir.join("runs.tsv");
    fs::write(&p, rows).map_err(|e| Error::io(&p, e))?;
    write_manifest(&a.out_dir, "robustness", a, &[])?;
    print!("{summary}");
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenTemplates(a) => gen_templates(a),
        Command::GenMock(a) => gen_mock(a),
        Command::Solve(a) => solve(a),
        Command::Maps(a) => maps(a),
        Command::Robustness(a) => robustness(a),
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// code. Failures print one line to stderr.
pub fn main_with(argv: impl IntoIterator<Item = impl Into<OsString>>) -> i32 {
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return 2;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {e}", cli.command.name());
            1
        }
    }
}
