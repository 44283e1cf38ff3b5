//! Configuration, rock fields and run outputs.
//!
//! All files are plain text: TOML for configuration, a whitespace grid for
//! rock fields, CSV for production and comparisons, legacy ASCII VTK for
//! space-time meshes, and JSON for the runtime report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, LogNormal, Normal};

use crate::adapt::{MarkingMode, Problem, RunOutcome, ANALYSIS_RANGE};
use crate::discretization::{Well, WellKind};
use crate::error::{Error, Result};
use crate::mesh::{LeafIndex, SpaceTimeBox, SpatialDim};
use crate::petrophysics::{CapPressureParams, FluidPhaseParams, FluidRockModel, RelPermParams, RockField};
use crate::solver::NewtonConfig;

pub const PRODUCTION_HEADER: &str = "time_days,well,water_rate_ft3_day,oil_rate_ft3_day,bhp_psi";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Relative paths are taken from the config file's directory.
    pub output_dir: PathBuf,
    /// Gravity vector `(g_x, g_y)` in psi/ft per lb/ft^3.
    #[serde(default)]
    pub gravity: [f64; 2],
    pub domain: DomainConfig,
    pub mesh: MeshConfig,
    pub fluid: FluidConfig,
    pub relperm: RelPermConfig,
    pub capillary: CapillaryConfig,
    pub rock: RockConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub newton: NewtonSection,
    #[serde(default)]
    pub adapt: AdaptConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub wells: Vec<WellConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    /// Spatial dimension, 1 or 2.
    pub dim: usize,
    pub x: [f64; 2],
    /// Defaults to `[0, 1]` in one dimension.
    #[serde(default)]
    pub y: Option<[f64; 2]>,
    pub t: [f64; 2],
    #[serde(default = "one")]
    pub thickness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Root cells `[nx, ny, nt]` over the whole horizon.
    pub roots: [usize; 3],
    #[serde(default)]
    pub ratios: Vec<usize>,
    /// Defaults to the whole horizon.
    #[serde(default)]
    pub slab_length: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub rho_ref: f64,
    pub p_ref: f64,
    pub c_f: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidConfig {
    pub water: PhaseConfig,
    pub oil: PhaseConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelPermConfig {
    pub s_wirr: f64,
    pub s_or: f64,
    #[serde(default = "one")]
    pub krw0: f64,
    #[serde(default = "one")]
    pub kro0: f64,
    #[serde(default = "two")]
    pub n_w: f64,
    #[serde(default = "two")]
    pub n_o: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapillaryConfig {
    pub p_en: f64,
    pub l_cow: f64,
    #[serde(default = "default_delta_reg")]
    pub delta_reg: f64,
}

/// Either a field file or uniform values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RockConfig {
    #[serde(default)]
    pub field: Option<PathBuf>,
    #[serde(default)]
    pub permeability: Option<f64>,
    #[serde(default)]
    pub porosity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub p_o: f64,
    pub s_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonSection {
    pub tol_rel: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_abs: Option<f64>,
    pub max_iter: usize,
    pub max_sat_step: f64,
}

impl Default for NewtonSection {
    fn default() -> Self {
        let d = NewtonConfig::default();
        NewtonSection {
            tol_rel: d.tol_rel,
            tol_abs: d.tol_abs,
            max_iter: d.max_iter,
            max_sat_step: d.max_sat_step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub marking: MarkingMode,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            marking: MarkingMode::Union,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Length per day used for the time axis of mesh files; defaults to the
    /// largest spatial extent divided by the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_scale: Option<f64>,
    /// Write `cdf_level<l>.csv` indicator distributions.
    #[serde(default)]
    pub cdf: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WellKindConfig {
    Injector,
    Producer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellConfig {
    pub name: String,
    pub kind: WellKindConfig,
    pub x: f64,
    pub y: f64,
    /// Injection rate (ft^3/day), injectors only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    /// Bottom-hole pressure (psi), producers only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bhp: Option<f64>,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default)]
    pub skin: f64,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn default_delta_reg() -> f64 {
    1e-6
}

fn default_radius() -> f64 {
    0.25
}

impl SimulationConfig {
    /// Parses a configuration and fills in the defaults that depend on other keys.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: SimulationConfig =
            toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string() + &span_hint(text, e.span())))?;
        cfg.apply_defaults();
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    /// Makes relative paths absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let abs = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        self.output_dir = abs(&self.output_dir);
        if let Some(f) = &self.rock.field {
            self.rock.field = Some(abs(f));
        }
    }

    /// Fills defaults that depend on other values.
    fn apply_defaults(&mut self) {
        if self.domain.dim == 1 && self.domain.y.is_none() {
            self.domain.y = Some([0.0, 1.0]);
        }
        if self.mesh.slab_length.is_none() {
            self.mesh.slab_length = Some(self.domain.t[1] - self.domain.t[0]);
        }
    }

    pub fn spatial_dim(&self) -> Result<SpatialDim> {
        SpatialDim::from_count(self.domain.dim).ok_or_else(|| Error::config("domain.dim", "must be 1 or 2"))
    }

    pub fn domain_box(&self) -> Result<SpaceTimeBox> {
        let y = self.domain.y.ok_or_else(|| Error::config("domain.y", "required for two-dimensional domains"))?;
        SpaceTimeBox::new(self.domain.x, y, self.domain.t)
    }

    pub fn finest_spatial_dims(&self) -> (usize, usize) {
        let r: usize = self.mesh.ratios.iter().product();
        let ny = if self.domain.dim == 1 { 1 } else { self.mesh.roots[1] * r };
        (self.mesh.roots[0] * r, ny)
    }

    fn rock_field(&self) -> Result<RockField> {
        let (nx, ny) = self.finest_spatial_dims();
        match (&self.rock.field, self.rock.permeability, self.rock.porosity) {
            (Some(path), None, None) => load_field(path, nx, ny),
            (None, Some(k), Some(phi)) => {
                let f = RockField::uniform(nx, ny, k, phi);
                f.validate()?;
                Ok(f)
            }
            _ => Err(Error::config(
                "rock",
                "give either `field` or both `permeability` and `porosity`",
            )),
        }
    }

    fn wells(&self) -> Result<Vec<Well>> {
        self.wells
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let kind = match (w.kind, w.rate, w.bhp) {
                    (WellKindConfig::Injector, Some(rate), None) => WellKind::RateInjector { rate },
                    (WellKindConfig::Producer, None, Some(bhp)) => WellKind::BhpProducer { bhp },
                    (WellKindConfig::Injector, _, _) => {
                        return Err(Error::config(format!("wells[{i}].rate"), "injectors need `rate` and no `bhp`"))
                    }
                    (WellKindConfig::Producer, _, _) => {
                        return Err(Error::config(format!("wells[{i}].bhp"), "producers need `bhp` and no `rate`"))
                    }
                };
                Ok(Well {
                    name: w.name.clone(),
                    kind,
                    x: w.x,
                    y: w.y,
                    radius: w.radius,
                    skin: w.skin,
                })
            })
            .collect()
    }

    /// Builds and validates the solver problem, loading the rock field.
    pub fn to_problem(&self) -> Result<Problem> {
        let phase = |p: &PhaseConfig| FluidPhaseParams {
            rho_ref: p.rho_ref,
            p_ref: p.p_ref,
            c_f: p.c_f,
            mu: p.mu,
        };
        let r = &self.relperm;
        let model = FluidRockModel {
            water: phase(&self.fluid.water),
            oil: phase(&self.fluid.oil),
            relperm: RelPermParams {
                s_wirr: r.s_wirr,
                s_or: r.s_or,
                krw0: r.krw0,
                kro0: r.kro0,
                n_w: r.n_w,
                n_o: r.n_o,
            },
            capillary: CapPressureParams {
                p_en: self.capillary.p_en,
                l_cow: self.capillary.l_cow,
                delta_reg: self.capillary.delta_reg,
            },
            rock: self.rock_field()?,
            gravity: self.gravity,
        };
        let n = &self.newton;
        let problem = Problem {
            dim: self.spatial_dim()?,
            domain: self.domain_box()?,
            thickness: self.domain.thickness,
            roots: self.mesh.roots,
            ratios: self.mesh.ratios.clone(),
            slab_length: self.mesh.slab_length.unwrap_or(self.domain.t[1] - self.domain.t[0]),
            model,
            wells: self.wells()?,
            initial: (self.initial.p_o, self.initial.s_w),
            newton: NewtonConfig {
                tol_rel: n.tol_rel,
                tol_abs: n.tol_abs,
                max_iter: n.max_iter,
                max_sat_step: n.max_sat_step,
            },
            marking: self.adapt.marking,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn t_scale(&self) -> f64 {
        self.output.t_scale.unwrap_or_else(|| {
            let y = self.domain.y.unwrap_or([0.0, 1.0]);
            let l = (self.domain.x[1] - self.domain.x[0]).max(y[1] - y[0]);
            l / (self.domain.t[1] - self.domain.t[0])
        })
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(s) => {
            let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}

/// Reads, resolves and validates a configuration file.
pub fn load_config(path: &Path) -> Result<SimulationConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = SimulationConfig::from_toml_str(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    if let Some(f) = &cfg.rock.field {
        if !f.is_file() {
            return Err(Error::config("rock.field", format!("file {} does not exist", f.display())));
        }
    }
    cfg.to_problem()?;
    Ok(cfg)
}

/// Writes `resolved.toml` (absolute paths, all defaults) into `dir`.
pub fn write_resolved_config(cfg: &SimulationConfig, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("resolved.toml");
    write_atomic(&path, &cfg.to_toml_string()?)?;
    Ok(path)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn field_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Field {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Parses a field file: header `nx ny`, then one `i j Kx Ky phi` row per cell.
pub fn parse_field(text: &str, path: &Path, nx: usize, ny: usize) -> Result<RockField> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (_, header) = lines.next().ok_or_else(|| field_error(path, "empty file"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|v| v.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| field_error(path, format!("bad header `{header}`")))?;
    if dims.len() != 2 {
        return Err(field_error(path, format!("bad header `{header}`")));
    }
    if dims[0] != nx || dims[1] != ny {
        return Err(field_error(
            path,
            format!("field is {}x{} but the finest grid is {nx}x{ny}", dims[0], dims[1]),
        ));
    }
    let mut seen = vec![false; nx * ny];
    let mut field = RockField {
        nx,
        ny,
        kx: vec![0.0; nx * ny],
        ky: vec![0.0; nx * ny],
        phi: vec![0.0; nx * ny],
    };
    for (line_no, line) in lines {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 5 {
            return Err(field_error(path, format!("line {line_no}: expected `i j Kx Ky phi`")));
        }
        let bad = || field_error(path, format!("line {line_no}: cannot parse `{line}`"));
        let i: usize = cols[0].parse().map_err(|_| bad())?;
        let j: usize = cols[1].parse().map_err(|_| bad())?;
        let v: Vec<f64> = cols[2..]
            .iter()
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        if i >= nx || j >= ny {
            return Err(field_error(path, format!("cell ({i},{j}) outside {nx}x{ny}")));
        }
        let k = j * nx + i;
        if seen[k] {
            return Err(field_error(path, format!("cell ({i},{j}) given twice")));
        }
        if !(v[0] > 0.0 && v[1] > 0.0) || !v[0].is_finite() || !v[1].is_finite() {
            return Err(field_error(path, format!("cell ({i},{j}): permeability must be positive")));
        }
        if !(v[2] > 0.0 && v[2] <= 1.0) {
            return Err(field_error(path, format!("cell ({i},{j}): porosity must be in (0, 1]")));
        }
        seen[k] = true;
        field.kx[k] = v[0];
        field.ky[k] = v[1];
        field.phi[k] = v[2];
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(field_error(path, format!("missing cell ({},{})", k % nx, k / nx)));
    }
    Ok(field)
}

pub fn load_field(path: &Path, nx: usize, ny: usize) -> Result<RockField> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_field(&text, path, nx, ny)
}

/// Field file text; values use shortest round-trip formatting.
pub fn format_field(field: &RockField) -> String {
    let mut out = format!("{} {}\n", field.nx, field.ny);
    for j in 0..field.ny {
        for i in 0..field.nx {
            let k = j * field.nx + i;
            let _ = writeln!(out, "{i} {j} {} {} {}", field.kx[k], field.ky[k], field.phi[k]);
        }
    }
    out
}

pub fn write_field(field: &RockField, path: &Path) -> Result<()> {
    write_atomic(path, &format_field(field))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    /// Smooth Gaussian bumps on a uniform background.
    Gaussian,
    /// Meandering high-permeability channels along y.
    Channel,
}

/// Parameters of a synthetic rock field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSpec {
    pub kind: FieldKind,
    pub nx: usize,
    pub ny: usize,
    pub k_background: f64,
    /// Peak (or channel) permeability divided by the background.
    pub k_ratio: f64,
    pub phi_background: f64,
    pub phi_ratio: f64,
    /// Number of bumps or channels.
    pub features: usize,
    /// Bump standard deviation or channel half-width, as a fraction of nx.
    pub width: f64,
    pub seed: u64,
}

impl FieldSpec {
    pub fn gaussian(nx: usize, ny: usize, seed: u64) -> Self {
        FieldSpec {
            kind: FieldKind::Gaussian,
            nx,
            ny,
            k_background: 50.0,
            k_ratio: 10.0,
            phi_background: 0.1,
            phi_ratio: 2.0,
            features: 1,
            width: 0.25,
            seed,
        }
    }

    pub fn channel(nx: usize, ny: usize, seed: u64) -> Self {
        FieldSpec {
            kind: FieldKind::Channel,
            features: 2,
            width: 0.1,
            k_ratio: 20.0,
            ..FieldSpec::gaussian(nx, ny, seed)
        }
    }
}

/// Deterministic synthetic field for `spec`.
pub fn generate_field(spec: &FieldSpec) -> Result<RockField> {
    if spec.nx == 0 || spec.ny == 0 {
        return Err(Error::config("gen-field", "grid dimensions must be >= 1"));
    }
    if !(spec.k_background > 0.0 && spec.k_ratio > 0.0 && spec.phi_ratio > 0.0 && spec.width > 0.0) {
        return Err(Error::config("gen-field", "background, ratios and width must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (nx, ny) = (spec.nx as f64, spec.ny as f64);
    let w = spec.width * nx;
    let shape: Vec<f64> = match spec.kind {
        FieldKind::Gaussian => {
            let bumps: Vec<(f64, f64)> = (0..spec.features)
                .map(|_| (rng.random_range(0.25..0.75) * nx, rng.random_range(0.25..0.75) * ny))
                .collect();
            (0..spec.nx * spec.ny)
                .map(|k| {
                    let (x, y) = ((k % spec.nx) as f64 + 0.5, (k / spec.nx) as f64 + 0.5);
                    bumps
                        .iter()
                        .map(|(cx, cy)| (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * w * w)).exp())
                        .fold(0.0, f64::max)
                })
                .collect()
        }
        FieldKind::Channel => {
            let channels: Vec<(f64, f64, f64)> = (0..spec.features)
                .map(|_| {
                    (
                        rng.random_range(0.15..0.85) * nx,
                        rng.random_range(0.05..0.15) * nx,
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            (0..spec.nx * spec.ny)
                .map(|k| {
                    let (x, y) = ((k % spec.nx) as f64 + 0.5, (k / spec.nx) as f64 + 0.5);
                    let inside = channels.iter().any(|(c, amp, phase)| {
                        let centre = c + amp * (std::f64::consts::TAU * y / ny + phase).sin();
                        (x - centre).abs() <= w
                    });
                    if inside { 1.0 } else { 0.0 }
                })
                .collect()
        }
    };
    let k: Vec<f64> = shape.iter().map(|g| spec.k_background * spec.k_ratio.powf(*g)).collect();
    let phi: Vec<f64> = shape
        .iter()
        .map(|g| (spec.phi_background * spec.phi_ratio.powf(*g)).min(1.0))
        .collect();
    let field = RockField {
        nx: spec.nx,
        ny: spec.ny,
        kx: k.clone(),
        ky: k,
        phi,
    };
    field.validate()?;
    Ok(field)
}

/// One production row.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductionRecord {
    /// End of the finest time interval (days).
    pub time: f64,
    pub well: String,
    /// Reference-density volumetric rates (ft^3/day).
    pub water_rate: f64,
    pub oil_rate: f64,
    pub bhp: f64,
}

/// Production rows of the finest level of every slab, ordered by time then
/// well; injection is negative production.
pub fn production_records(problem: &Problem, outcome: &RunOutcome) -> Vec<ProductionRecord> {
    let mut out = Vec::new();
    let mut entries: Vec<_> = Vec::new();
    for slab in &outcome.slabs {
        let mut per: BTreeMap<(u64, usize), (f64, f64, f64, f64, f64)> = BTreeMap::new();
        for src in &slab.well_sources {
            let e = per
                .entry((src.t_hi.to_bits(), src.well))
                .or_insert((src.t_lo, src.t_hi, 0.0, 0.0, src.bhp));
            e.2 += src.water;
            e.3 += src.oil;
        }
        entries.extend(per.into_iter().map(|((_, w), v)| (v.1, w, v)));
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let rho_w = problem.model.water.rho_ref;
    let rho_o = problem.model.oil.rho_ref;
    for (_, w, (t_lo, t_hi, water, oil, bhp)) in entries {
        let dt = t_hi - t_lo;
        out.push(ProductionRecord {
            time: t_hi,
            well: problem.wells[w].name.clone(),
            water_rate: 0.0 - water / (rho_w * dt),
            oil_rate: 0.0 - oil / (rho_o * dt),
            bhp,
        });
    }
    out
}

pub fn format_production(records: &[ProductionRecord]) -> String {
    let mut s = String::from(PRODUCTION_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{},{},{},{},{}", r.time, r.well, r.water_rate, r.oil_rate, r.bhp);
    }
    s
}

pub fn parse_production(text: &str, path: &Path) -> Result<Vec<ProductionRecord>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(PRODUCTION_HEADER) {
        return Err(field_error(path, "unexpected production header"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| {
            let c: Vec<&str> = l.split(',').collect();
            let bad = || field_error(path, format!("row {}: cannot parse `{l}`", n + 1));
            if c.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
            Ok(ProductionRecord {
                time: num(c[0])?,
                well: c[1].to_string(),
                water_rate: num(c[2])?,
                oil_rate: num(c[3])?,
                bhp: num(c[4])?,
            })
        })
        .collect()
}

/// Leaf hexahedron with its cell data as read back from a mesh file.
#[derive(Debug, Clone, PartialEq)]
pub struct VtkCell {
    pub bounds: SpaceTimeBox,
    pub p_o: f64,
    pub s_w: f64,
    pub level: usize,
    pub residual_indicator: f64,
    pub error_indicator: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VtkMesh {
    pub t_scale: f64,
    pub cells: Vec<VtkCell>,
}

impl VtkMesh {
    /// Cell containing `(x, y)` at time `t`; at a slab boundary the cell
    /// ending at `t` is preferred.
    pub fn sample(&self, x: f64, y: f64, t: f64) -> Option<&VtkCell> {
        self.cells.iter().find(|c| {
            let b = &c.bounds;
            x >= b.x_lo && x < b.x_hi && y >= b.y_lo && y < b.y_hi && t > b.t_lo && t <= b.t_hi
        })
    }
}

/// Legacy ASCII unstructured grid of `cells`, time scaled by `t_scale`.
pub fn format_vtk(level: usize, t_scale: f64, cells: &[VtkCell]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "spacetime-flow level {level} t_scale={t_scale}");
    let _ = writeln!(s, "ASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", 8 * cells.len());
    for c in cells {
        let b = &c.bounds;
        let (t0, t1) = (b.t_lo * t_scale, b.t_hi * t_scale);
        for (t, y, x) in [
            (t0, b.y_lo, b.x_lo),
            (t0, b.y_lo, b.x_hi),
            (t0, b.y_hi, b.x_hi),
            (t0, b.y_hi, b.x_lo),
            (t1, b.y_lo, b.x_lo),
            (t1, b.y_lo, b.x_hi),
            (t1, b.y_hi, b.x_hi),
            (t1, b.y_hi, b.x_lo),
        ] {
            let _ = writeln!(s, "{x} {y} {t}");
        }
    }
    let _ = writeln!(s, "CELLS {} {}", cells.len(), 9 * cells.len());
    for k in 0..cells.len() {
        let b = 8 * k;
        let _ = writeln!(s, "8 {} {} {} {} {} {} {} {}", b, b + 1, b + 2, b + 3, b + 4, b + 5, b + 6, b + 7);
    }
    let _ = writeln!(s, "CELL_TYPES {}", cells.len());
    for _ in cells {
        s.push_str("12\n");
    }
    let _ = writeln!(s, "CELL_DATA {}", cells.len());
    let fields: [(&str, &str, fn(&VtkCell) -> String); 5] = [
        ("P_o", "double", |c| c.p_o.to_string()),
        ("S_w", "double", |c| c.s_w.to_string()),
        ("level", "int", |c| c.level.to_string()),
        ("residual_indicator", "double", |c| c.residual_indicator.to_string()),
        ("error_indicator", "double", |c| c.error_indicator.to_string()),
    ];
    for (name, ty, get) in fields {
        let _ = writeln!(s, "SCALARS {name} {ty} 1\nLOOKUP_TABLE default");
        for c in cells {
            s.push_str(&get(c));
            s.push('\n');
        }
    }
    s
}

/// Reads a mesh file written by [`format_vtk`].
pub fn parse_vtk(text: &str, path: &Path) -> Result<VtkMesh> {
    let bad = |m: &str| field_error(path, m.to_string());
    let title = text.lines().nth(1).ok_or_else(|| bad("truncated header"))?;
    let t_scale: f64 = title
        .split("t_scale=")
        .nth(1)
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad("missing t_scale in header"))?;
    let body: Vec<&str> = text.lines().skip(2).flat_map(str::split_whitespace).collect();
    let pos = |word: &str| body.iter().position(|t| *t == word).ok_or_else(|| bad(&format!("missing {word}")));
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number `{s}`")));
    let p0 = pos("POINTS")?;
    let np: usize = body[p0 + 1].parse().map_err(|_| bad("bad point count"))?;
    let pts: Vec<f64> = body[p0 + 3..p0 + 3 + 3 * np].iter().map(|v| num(v)).collect::<Result<_>>()?;
    let c0 = pos("CELLS")?;
    let nc: usize = body[c0 + 1].parse().map_err(|_| bad("bad cell count"))?;
    let mut cells = Vec::with_capacity(nc);
    let mut k = c0 + 3;
    for _ in 0..nc {
        if body.get(k) != Some(&"8") {
            return Err(bad("only hexahedra are supported"));
        }
        let ids: Vec<usize> = body[k + 1..k + 9]
            .iter()
            .map(|v| v.parse::<usize>().map_err(|_| bad("bad connectivity")))
            .collect::<Result<_>>()?;
        if ids.iter().any(|&i| i >= np) {
            return Err(bad("connectivity out of range"));
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &ids {
            for a in 0..3 {
                lo[a] = lo[a].min(pts[3 * i + a]);
                hi[a] = hi[a].max(pts[3 * i + a]);
            }
        }
        cells.push(VtkCell {
            bounds: SpaceTimeBox {
                x_lo: lo[0],
                x_hi: hi[0],
                y_lo: lo[1],
                y_hi: hi[1],
                t_lo: lo[2] / t_scale,
                t_hi: hi[2] / t_scale,
            },
            p_o: 0.0,
            s_w: 0.0,
            level: 0,
            residual_indicator: 0.0,
            error_indicator: 0.0,
        });
        k += 9;
    }
    let d0 = pos("CELL_DATA")?;
    if body[d0 + 1].parse::<usize>().ok() != Some(nc) {
        return Err(bad("cell data length mismatch"));
    }
    for name in ["P_o", "S_w", "level", "residual_indicator", "error_indicator"] {
        let s0 = body
            .iter()
            .enumerate()
            .skip(d0)
            .find(|(i, t)| **t == "SCALARS" && body.get(i + 1) == Some(&name))
            .map(|(i, _)| i)
            .ok_or_else(|| bad(&format!("missing {name} data")))?;
        let vals = body.get(s0 + 6..s0 + 6 + nc).ok_or_else(|| bad(&format!("truncated {name} data")))?;
        for (c, v) in cells.iter_mut().zip(vals) {
            let x = num(v)?;
            match name {
                "P_o" => c.p_o = x,
                "S_w" => c.s_w = x,
                "level" => c.level = x as usize,
                "residual_indicator" => c.residual_indicator = x,
                _ => c.error_indicator = x,
            }
        }
    }
    Ok(VtkMesh { t_scale, cells })
}

pub fn read_vtk(path: &Path) -> Result<VtkMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vtk(&text, path)
}

/// Leaves of level `level` over all slabs (the last level of a slab stands
/// in for any deeper level it did not reach).
pub fn level_cells(outcome: &RunOutcome, level: usize) -> Vec<VtkCell> {
    let mut cells = Vec::new();
    for slab in &outcome.slabs {
        let Some(lr) = slab.levels.iter().find(|l| l.level == level) else {
            continue;
        };
        let index = LeafIndex::new(&lr.tree);
        for (i, &id) in index.leaves().iter().enumerate() {
            let node = lr.tree.node(id);
            cells.push(VtkCell {
                bounds: node.bounds,
                p_o: lr.state.p(i),
                s_w: lr.state.s(i),
                level: node.level,
                residual_indicator: lr.residual_indicator.values[i],
                error_indicator: lr.error_indicator.values[i],
            });
        }
    }
    cells
}

/// Indicator samples inside the analysis range with empirical and fitted
/// normal / log-normal CDFs.
pub fn format_cdf(samples_by_kind: &[(&str, &[f64])]) -> Result<String> {
    let mut s = String::from("indicator,value,empirical_cdf,normal_cdf,lognormal_cdf\n");
    for (kind, samples) in samples_by_kind {
        let (lo, hi) = ANALYSIS_RANGE;
        let mut v: Vec<f64> = samples.iter().copied().filter(|&x| x >= lo && x <= hi).collect();
        if v.len() < 2 {
            continue;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let lmean = v.iter().map(|x| x.ln()).sum::<f64>() / n;
        let lsd = (v.iter().map(|x| (x.ln() - lmean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let normal = Normal::new(mean, sd.max(f64::MIN_POSITIVE)).map_err(|e| Error::Integrity(e.to_string()))?;
        let lognormal = LogNormal::new(lmean, lsd.max(f64::MIN_POSITIVE)).map_err(|e| Error::Integrity(e.to_string()))?;
        for (i, x) in v.iter().enumerate() {
            let _ = writeln!(
                s,
                "{kind},{x},{},{},{}",
                (i + 1) as f64 / n,
                normal.cdf(*x),
                lognormal.cdf(*x)
            );
        }
    }
    Ok(s)
}

/// Writes all run outputs into `dir`.
///
/// `production.csv`, `mesh_level<l>.vtk` for every level reached,
/// `report.json`, optionally `cdf_level<l>.csv`, and on failure
/// `failure_state.csv` with the unconverged finest-level state.
pub fn write_outputs(problem: &Problem, outcome: &RunOutcome, dir: &Path, output: &OutputConfig, t_scale: f64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(
        &dir.join("production.csv"),
        &format_production(&production_records(problem, outcome)),
    )?;
    let mut levels: Vec<usize> = outcome.slabs.iter().flat_map(|s| s.levels.iter().map(|l| l.level)).collect();
    levels.sort_unstable();
    levels.dedup();
    for &level in &levels {
        let cells = level_cells(outcome, level);
        write_atomic(
            &dir.join(format!("mesh_level{level}.vtk")),
            &format_vtk(level, output.t_scale.unwrap_or(t_scale), &cells),
        )?;
        if output.cdf {
            let res: Vec<f64> = cells.iter().map(|c| c.residual_indicator).collect();
            let err: Vec<f64> = cells.iter().map(|c| c.error_indicator).collect();
            write_atomic(
                &dir.join(format!("cdf_level{level}.csv")),
                &format_cdf(&[("residual", &res), ("error", &err)])?,
            )?;
        }
    }
    let json = serde_json::to_string_pretty(&outcome.report).map_err(|e| Error::Integrity(e.to_string()))?;
    write_atomic(&dir.join("report.json"), &json)?;
    if let Some((slab, _)) = outcome.report.failure {
        let lr = outcome.slabs[slab].finest();
        let index = LeafIndex::new(&lr.tree);
        let mut s = String::from("x_lo,x_hi,y_lo,y_hi,t_lo,t_hi,level,p_o,s_w\n");
        for (i, &id) in index.leaves().iter().enumerate() {
            let n = lr.tree.node(id);
            let b = n.bounds;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                b.x_lo,
                b.x_hi,
                b.y_lo,
                b.y_hi,
                b.t_lo,
                b.t_hi,
                n.level,
                lr.state.p(i),
                lr.state.s(i)
            );
        }
        write_atomic(&dir.join("failure_state.csv"), &s)?;
    }
    Ok(())
}

pub fn read_report(path: &Path) -> Result<crate::adapt::RunReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| field_error(path, e.to_string()))
}

/// Saturation difference at one time on the finest grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaturationDiff {
    pub time: f64,
    pub l2: f64,
    pub linf: f64,
    /// L2 norm of the second (reference) solution.
    pub l2_reference: f64,
}

/// Production-rate RMS difference of one well.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateDiff {
    pub well: String,
    pub water_rms: f64,
    pub oil_rms: f64,
    /// RMS of the reference water and oil rates.
    pub water_rms_reference: f64,
    pub oil_rms_reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub saturation: Vec<SaturationDiff>,
    pub rates: Vec<RateDiff>,
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,time_days,well,value,reference\n");
        for d in &self.saturation {
            let _ = writeln!(s, "saturation_l2,{},,{},{}", d.time, d.l2, d.l2_reference);
            let _ = writeln!(s, "saturation_linf,{},,{},", d.time, d.linf);
        }
        for r in &self.rates {
            let _ = writeln!(s, "water_rate_rms,,{},{},{}", r.well, r.water_rms, r.water_rms_reference);
            let _ = writeln!(s, "oil_rate_rms,,{},{},{}", r.well, r.oil_rms, r.oil_rms_reference);
        }
        s
    }
}

/// Finest sampling grid of a mesh: the smallest cell extents over the
/// bounding box of all cells.
fn finest_grid(mesh: &VtkMesh) -> Option<(SpaceTimeBox, usize, usize)> {
    let first = mesh.cells.first()?;
    let mut bb = first.bounds;
    let (mut dx, mut dy) = (f64::INFINITY, f64::INFINITY);
    for c in &mesh.cells {
        let b = &c.bounds;
        bb.x_lo = bb.x_lo.min(b.x_lo);
        bb.x_hi = bb.x_hi.max(b.x_hi);
        bb.y_lo = bb.y_lo.min(b.y_lo);
        bb.y_hi = bb.y_hi.max(b.y_hi);
        dx = dx.min(b.x_hi - b.x_lo);
        dy = dy.min(b.y_hi - b.y_lo);
    }
    let nx = ((bb.x_hi - bb.x_lo) / dx).round() as usize;
    let ny = ((bb.y_hi - bb.y_lo) / dy).round() as usize;
    Some((bb, nx, ny))
}

/// Compares two meshes at `times`; `b` is the reference. Both are sampled
/// at the centres of the finer of the two finest grids.
pub fn compare_meshes(a: &VtkMesh, b: &VtkMesh, times: &[f64]) -> Result<Vec<SaturationDiff>> {
    let (ga, gb) = match (finest_grid(a), finest_grid(b)) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::Integrity("cannot compare empty meshes".into())),
    };
    let (bb, nx, ny) = if ga.1 * ga.2 >= gb.1 * gb.2 { ga } else { gb };
    let (dx, dy) = ((bb.x_hi - bb.x_lo) / nx as f64, (bb.y_hi - bb.y_lo) / ny as f64);
    let mut out = Vec::new();
    for &t in times {
        let (mut l2, mut linf, mut norm) = (0.0, 0.0_f64, 0.0);
        for j in 0..ny {
            for i in 0..nx {
                let x = bb.x_lo + (i as f64 + 0.5) * dx;
                let y = bb.y_lo + (j as f64 + 0.5) * dy;
                let (ca, cb) = match (a.sample(x, y, t), b.sample(x, y, t)) {
                    (Some(ca), Some(cb)) => (ca, cb),
                    _ => return Err(Error::Integrity(format!("time {t} is not covered by both meshes at ({x}, {y})"))),
                };
                let d = ca.s_w - cb.s_w;
                l2 += d * d * dx * dy;
                norm += cb.s_w * cb.s_w * dx * dy;
                linf = linf.max(d.abs());
            }
        }
        out.push(SaturationDiff {
            time: t,
            l2: l2.sqrt(),
            linf,
            l2_reference: norm.sqrt(),
        });
    }
    Ok(out)
}

/// Per-well RMS rate differences over matching report times.
pub fn compare_production(a: &[ProductionRecord], b: &[ProductionRecord]) -> Result<Vec<RateDiff>> {
    let mut wells: Vec<String> = b.iter().map(|r| r.well.clone()).collect();
    wells.dedup();
    wells.sort();
    wells.dedup();
    let mut out = Vec::new();
    for well in wells {
        let rb: Vec<&ProductionRecord> = b.iter().filter(|r| r.well == well).collect();
        let ra: Vec<&ProductionRecord> = a.iter().filter(|r| r.well == well).collect();
        if ra.len() != rb.len() || ra.iter().zip(&rb).any(|(x, y)| (x.time - y.time).abs() > 1e-9 * y.time.abs().max(1.0)) {
            return Err(Error::Integrity(format!("production times of well {well} differ")));
        }
        let n = rb.len().max(1) as f64;
        let rms = |f: &dyn Fn(&ProductionRecord) -> f64, g: &dyn Fn(&ProductionRecord) -> f64| {
            (ra.iter().zip(&rb).map(|(x, y)| (f(x) - g(y)).powi(2)).sum::<f64>() / n).sqrt()
        };
        let norm = |f: &dyn Fn(&ProductionRecord) -> f64| (rb.iter().map(|y| f(y).powi(2)).sum::<f64>() / n).sqrt();
        out.push(RateDiff {
            well: well.clone(),
            water_rms: rms(&|r| r.water_rate, &|r| r.water_rate),
            oil_rms: rms(&|r| r.oil_rate, &|r| r.oil_rate),
            water_rms_reference: norm(&|r| r.water_rate),
            oil_rms_reference: norm(&|r| r.oil_rate),
        });
    }
    Ok(out)
}

/// Highest-level mesh file in an output directory.
pub fn finest_mesh_file(dir: &Path) -> Result<PathBuf> {
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(level) = name
            .strip_prefix("mesh_level")
            .and_then(|r| r.strip_suffix(".vtk"))
            .and_then(|l| l.parse::<usize>().ok())
        {
            if best.as_ref().is_none_or(|(b, _)| level > *b) {
                best = Some((level, path));
            }
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| Error::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no mesh_level*.vtk file"),
        })
}

/// Compares two output directories; `b` is the reference.
pub fn compare_dirs(a: &Path, b: &Path, times: &[f64]) -> Result<ComparisonReport> {
    let ma = read_vtk(&finest_mesh_file(a)?)?;
    let mb = read_vtk(&finest_mesh_file(b)?)?;
    let read_prod = |d: &Path| -> Result<Vec<ProductionRecord>> {
        let p = d.join("production.csv");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        parse_production(&text, &p)
    };
    Ok(ComparisonReport {
        saturation: compare_meshes(&ma, &mb, times)?,
        rates: compare_production(&read_prod(a)?, &read_prod(b)?)?,
    })
}
