//! Run configuration and on-disk formats.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::{gibbs_from_mass, gibbs_plus_coherence};
use crate::evolution::{EvolutionConfig, Scheme, StepDiagnostics};
use crate::moment::{Potential, SolveOptions};
use crate::spectral::{HermitianOperator, SpectralSpace, C64};
use crate::state::{DensityField, DensityOperator};

pub const STATE_FORMAT: &str = "qlbk-state";
pub const STATE_VERSION: u32 = 1;

pub const TRAJECTORY_COLUMNS: [&str; 9] = [
    "t",
    "trace",
    "free_energy",
    "entropy_production",
    "min_density",
    "dist_J1_gibbs",
    "dist_J2_gibbs",
    "solver_iters",
    "solver_residual",
];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("{}: density must be strictly positive (row {row}, n = {value:e})", path.display())]
    NonPositiveDensity { path: PathBuf, row: usize, value: f64 },

    #[error(transparent)]
    Core(#[from] crate::Error),
}

pub type IoResult<T> = std::result::Result<T, IoError>;

/// Formats a float with 17 significant digits; `-0.0` is written as `0`.
pub fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x + 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Gibbs,
    GibbsPlusCoherence,
    File,
}

fn default_tau() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    1e-2
}
fn default_scheme() -> Scheme {
    Scheme::ExponentialIntegrator
}
fn default_picard_iters() -> usize {
    3
}
fn default_tol_inf() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    100
}
fn default_damping() -> f64 {
    1.0
}
fn default_density_floor() -> f64 {
    1e-8
}
fn default_initial() -> InitialKind {
    InitialKind::Gibbs
}
fn default_mass() -> f64 {
    1.0
}
fn default_amplitude() -> f64 {
    0.1
}
fn default_coherence_modes() -> [i64; 2] {
    [0, 1]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_target() -> f64 {
    1e-4
}

/// Flat TOML run description. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "M")]
    pub modes: usize,
    #[serde(rename = "Nx", default)]
    pub grid: Option<usize>,
    #[serde(rename = "T")]
    pub temperature: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Defaults to `20·tau`.
    #[serde(default)]
    pub t_end: Option<f64>,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_picard_iters")]
    pub picard_iters: usize,
    #[serde(default)]
    pub snapshot_stride: usize,
    #[serde(default = "default_tol_inf")]
    pub tol_inf: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_density_floor")]
    pub density_floor: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_initial")]
    pub initial: InitialKind,
    #[serde(default = "default_mass")]
    pub mass: f64,
    #[serde(default = "default_amplitude")]
    pub coherence_amplitude: f64,
    #[serde(default = "default_coherence_modes")]
    pub coherence_modes: [i64; 2],
    #[serde(default)]
    pub initial_file: Option<PathBuf>,
    #[serde(default)]
    pub density_file: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_target")]
    pub convergence_target: f64,
    #[serde(default)]
    pub record_runtime: bool,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn positive(name: &str, x: f64) -> IoResult<()> {
    if x > 0.0 && !x.is_nan() {
        Ok(())
    } else {
        Err(IoError::Config(format!("{name} must be positive, got {x}")))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> IoResult<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| IoError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> IoResult<Self> {
        let text = fs::read_to_string(path).map_err(|source| IoError::File {
            path: path.into(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            IoError::Config(msg) => IoError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> IoResult<()> {
        if self.modes == 0 {
            return Err(IoError::Config("M must be at least 1".into()));
        }
        positive("T", self.temperature)?;
        if !self.temperature.is_finite() {
            return Err(IoError::Config("T must be finite".into()));
        }
        self.space()?;
        positive("tau", self.tau)?;
        positive("dt", self.dt)?;
        positive("tol_inf", self.tol_inf)?;
        positive("density_floor", self.density_floor)?;
        positive("mass", self.mass)?;
        positive("convergence_target", self.convergence_target)?;
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(IoError::Config(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if self.max_iter == 0 {
            return Err(IoError::Config("max_iter must be at least 1".into()));
        }
        if !(self.coherence_amplitude >= 0.0 && self.coherence_amplitude.is_finite()) {
            return Err(IoError::Config("coherence_amplitude must be nonnegative".into()));
        }
        let m = self.modes as i64;
        let [p, q] = self.coherence_modes;
        if p == q || p.abs() > m || q.abs() > m {
            return Err(IoError::Config(format!(
                "coherence_modes must be two distinct modes in [-{m}, {m}], got [{p}, {q}]"
            )));
        }
        if self.initial == InitialKind::File && self.initial_file.is_none() {
            return Err(IoError::Config("initial = \"file\" requires initial_file".into()));
        }
        self.evolution()?.validate().map_err(|e| IoError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn space(&self) -> IoResult<SpectralSpace> {
        let grid = self.grid.unwrap_or(8 * self.modes + 4);
        SpectralSpace::with_grid(self.modes, grid, self.temperature)
            .map_err(|e| IoError::Config(e.to_string()))
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol_inf: self.tol_inf,
            max_iter: self.max_iter,
            damping: self.damping,
            max_step: None,
        }
    }

    pub fn evolution(&self) -> IoResult<EvolutionConfig> {
        let t_end = match self.t_end {
            Some(t) => t,
            None if self.tau.is_finite() => 20.0 * self.tau,
            None => return Err(IoError::Config("t_end is required when tau is infinite".into())),
        };
        Ok(EvolutionConfig {
            tau: self.tau,
            dt: self.dt,
            t_end,
            scheme: self.scheme,
            picard_iters: self.picard_iters,
            snapshot_stride: self.snapshot_stride,
            density_floor: self.density_floor,
            solve: self.solve_options(),
            ..EvolutionConfig::default()
        })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.into()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Builds the configured initial state.
    pub fn initial_state(&self) -> IoResult<DensityOperator> {
        let space = self.space()?;
        match self.initial {
            InitialKind::Gibbs => Ok(gibbs_from_mass(self.mass, space)?.state),
            InitialKind::GibbsPlusCoherence => {
                let [p, q] = self.coherence_modes;
                Ok(gibbs_plus_coherence(self.mass, space, self.coherence_amplitude, (p, q))?)
            }
            InitialKind::File => {
                let path = self.resolve(self.initial_file.as_deref().expect("validated"));
                let (file_space, op) = read_state(&path)?;
                if file_space != space {
                    return Err(IoError::Config(format!(
                        "{}: state space (M={}, Nx={}, T={}) differs from config",
                        path.display(),
                        file_space.modes(),
                        file_space.grid(),
                        file_space.temperature()
                    )));
                }
                Ok(DensityOperator::new(op)?)
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateDocument {
    format: String,
    version: u32,
    #[serde(rename = "M")]
    modes: usize,
    #[serde(rename = "Nx")]
    grid: usize,
    #[serde(rename = "T")]
    temperature: f64,
    matrix: Vec<Vec<[f64; 2]>>,
}

/// Serializes an operator as a self-describing JSON document, one matrix row per line.
pub fn state_to_string(op: &HermitianOperator) -> String {
    let s = op.space();
    let m = op.matrix();
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            let cells: Vec<String> = (0..m.ncols())
                .map(|j| format!("[{}, {}]", fmt_f64(m[(i, j)].re), fmt_f64(m[(i, j)].im)))
                .collect();
            format!("    [{}]", cells.join(", "))
        })
        .collect();
    format!(
        "{{\n  \"format\": \"{STATE_FORMAT}\",\n  \"version\": {STATE_VERSION},\n  \"M\": {},\n  \"Nx\": {},\n  \"T\": {},\n  \"matrix\": [\n{}\n  ]\n}}\n",
        s.modes(),
        s.grid(),
        fmt_f64(s.temperature()),
        rows.join(",\n")
    )
}

pub fn state_from_str(text: &str) -> std::result::Result<(SpectralSpace, HermitianOperator), String> {
    let doc: StateDocument = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if doc.format != STATE_FORMAT {
        return Err(format!("unexpected format {:?}", doc.format));
    }
    if doc.version != STATE_VERSION {
        return Err(format!("unsupported version {}", doc.version));
    }
    let space = SpectralSpace::with_grid(doc.modes, doc.grid, doc.temperature).map_err(|e| e.to_string())?;
    let n = space.dim();
    if doc.matrix.len() != n || doc.matrix.iter().any(|r| r.len() != n) {
        return Err(format!("matrix must be {n}×{n}"));
    }
    let mat = DMatrix::from_fn(n, n, |i, j| {
        let [re, im] = doc.matrix[i][j];
        C64::new(re, im)
    });
    let op = HermitianOperator::new(space, mat).map_err(|e| e.to_string())?;
    Ok((space, op))
}

pub fn write_state(path: &Path, op: &HermitianOperator) -> IoResult<()> {
    write_text(path, &state_to_string(op))
}

pub fn read_state(path: &Path) -> IoResult<(SpectralSpace, HermitianOperator)> {
    let text = read_text(path)?;
    state_from_str(&text).map_err(|msg| IoError::Format { path: path.into(), msg })
}

pub fn write_text(path: &Path, text: &str) -> IoResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| IoError::File { path: dir.into(), source })?;
    }
    fs::write(path, text).map_err(|source| IoError::File { path: path.into(), source })
}

fn read_text(path: &Path) -> IoResult<String> {
    fs::read_to_string(path).map_err(|source| IoError::File { path: path.into(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> IoResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    write_text(path, &text)
}

fn csv_string(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
}

pub fn trajectory_csv(rows: &[StepDiagnostics]) -> String {
    csv_string(
        &TRAJECTORY_COLUMNS,
        rows.iter().map(|r| {
            vec![
                fmt_f64(r.t),
                fmt_f64(r.trace),
                fmt_f64(r.free_energy),
                fmt_f64(r.entropy_production),
                fmt_f64(r.min_density),
                fmt_f64(r.dist_j1_gibbs),
                fmt_f64(r.dist_j2_gibbs),
                r.solver_iters.to_string(),
                fmt_f64(r.solver_residual),
            ]
        }),
    )
}

/// Two columns `x,<name>` on the grid.
pub fn grid_csv(space: SpectralSpace, name: &str, values: &[f64]) -> String {
    csv_string(
        &["x", name],
        space
            .grid_points()
            .into_iter()
            .zip(values)
            .map(|(x, v)| vec![fmt_f64(x), fmt_f64(*v)]),
    )
}

pub fn potential_csv(a: &Potential) -> String {
    grid_csv(a.space(), "A", a.values())
}

pub fn density_csv(n: &DensityField) -> String {
    grid_csv(n.space(), "n", n.values())
}

/// Reads a two-column `x,n` file with an optional header; `x` must match the grid.
pub fn read_density_csv(path: &Path, space: SpectralSpace) -> IoResult<DensityField> {
    let text = read_text(path)?;
    let format = |msg: String| IoError::Format { path: path.into(), msg };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::with_capacity(space.grid());
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| format(e.to_string()))?;
        if rec.len() != 2 {
            return Err(format(format!("line {}: expected 2 columns, got {}", line + 1, rec.len())));
        }
        let parsed = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
        let (x, n) = match parsed {
            (Ok(x), Ok(n)) => (x, n),
            _ if line == 0 => continue,
            _ => return Err(format(format!("line {}: non-numeric entry", line + 1))),
        };
        let row = values.len();
        if row >= space.grid() {
            return Err(format(format!("more than Nx = {} rows", space.grid())));
        }
        let xj = row as f64 / space.grid() as f64;
        if (x - xj).abs() > 1e-9 {
            return Err(format(format!("row {row}: x = {x} does not match grid point {xj}")));
        }
        if !n.is_finite() {
            return Err(format(format!("row {row}: non-finite density")));
        }
        if n <= 0.0 {
            return Err(IoError::NonPositiveDensity { path: path.into(), row, value: n });
        }
        values.push(n);
    }
    if values.len() != space.grid() {
        return Err(format(format!("expected Nx = {} rows, got {}", space.grid(), values.len())));
    }
    Ok(DensityField::new(space, values)?)
}
