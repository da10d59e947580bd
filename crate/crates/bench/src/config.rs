//! Experiment configuration and the flat `key = value` file format.
//!
//! Blank lines and lines starting with `#` are skipped. Matrices are written
//! row by row, rows separated by `;`, entries by whitespace or `,`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ctmap::element::Integrator;
use ctmap::{LinearAffineModel, Matrix, Vector};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ModelChoice {
    Wiener,
    CoordinatedTurn,
    /// Linear time-invariant model read from a file, see [`load_custom_model`].
    Custom(PathBuf),
}

impl FromStr for ModelChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "wiener" => Ok(ModelChoice::Wiener),
            "coordinated-turn" | "ct" => Ok(ModelChoice::CoordinatedTurn),
            other if other.ends_with(".model") || other.contains('/') => Ok(ModelChoice::Custom(other.into())),
            other => Err(format!(
                "unknown model `{other}` (wiener, coordinated-turn, or a path to a .model file)"
            )),
        }
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelChoice::Wiener => f.write_str("wiener"),
            ModelChoice::CoordinatedTurn => f.write_str("coordinated-turn"),
            ModelChoice::Custom(path) => write!(f, "{}", path.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    SeqRts,
    ParRts,
    SeqTf,
    ParTf,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::SeqRts, Method::ParRts, Method::SeqTf, Method::ParTf];

    pub fn is_sequential(self) -> bool {
        matches!(self, Method::SeqRts | Method::SeqTf)
    }

    /// The sequential method of the same family.
    pub fn sequential(self) -> Method {
        match self {
            Method::SeqRts | Method::ParRts => Method::SeqRts,
            Method::SeqTf | Method::ParTf => Method::SeqTf,
        }
    }

    pub fn backend(self) -> ctmap::Backend {
        match self {
            Method::SeqRts => ctmap::Backend::SeqRts,
            Method::ParRts => ctmap::Backend::ParRts,
            Method::SeqTf => ctmap::Backend::SeqTf,
            Method::ParTf => ctmap::Backend::ParTf,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::SeqRts => "seq-rts",
            Method::ParRts => "par-rts",
            Method::SeqTf => "seq-tf",
            Method::ParTf => "par-tf",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}` (seq-rts, par-rts, seq-tf, par-tf)"))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelChoice,
    pub method: Method,
    /// Number of blocks.
    pub blocks: usize,
    /// Euler substeps per block.
    pub substeps: usize,
    pub seed: u64,
    pub repeats: usize,
    /// Worker count, `None` for the rayon default.
    pub threads: Option<usize>,
    pub out: PathBuf,
    /// Iterations for nonlinear models.
    pub iterations: usize,
    pub integrator: Integrator,
    /// Multiplies the model's diffusion density.
    pub w_scale: f64,
    /// Multiplies the model's measurement noise density.
    pub r_scale: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelChoice::Wiener,
            method: Method::ParRts,
            blocks: 100,
            substeps: 10,
            seed: 0,
            repeats: 5,
            threads: None,
            out: PathBuf::from("out"),
            iterations: ctmap::ieks::DEFAULT_ITERATIONS,
            integrator: Integrator::Euler,
            w_scale: 1.0,
            r_scale: 1.0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(BenchError::Invalid("repeats must be at least 1".into()));
        }
        if self.blocks == 0 || self.substeps == 0 {
            return Err(BenchError::Invalid("T and n must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(BenchError::Invalid("iterations must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(BenchError::Invalid("threads must be at least 1 or auto".into()));
        }
        for (name, v) in [("w_scale", self.w_scale), ("r_scale", self.r_scale)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(BenchError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Reads a config file; keys not set keep their defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = read(path)?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for entry in entries(text, path)? {
            let err = |what: String| BenchError::Config {
                path: path.to_owned(),
                line: entry.line,
                what,
            };
            let v = entry.value.as_str();
            match entry.key.as_str() {
                "model" => cfg.model = v.parse().map_err(err)?,
                "method" => cfg.method = v.parse().map_err(err)?,
                "T" => cfg.blocks = number(v).map_err(err)?,
                "n" => cfg.substeps = number(v).map_err(err)?,
                "seed" => cfg.seed = number(v).map_err(err)?,
                "repeats" => cfg.repeats = number(v).map_err(err)?,
                "threads" => {
                    cfg.threads = if v == "auto" { None } else { Some(number(v).map_err(err)?) }
                }
                "out" => cfg.out = PathBuf::from(v),
                "iterations" => cfg.iterations = number(v).map_err(err)?,
                "integrator" => {
                    cfg.integrator = match v {
                        "euler" => Integrator::Euler,
                        "rk4" => Integrator::Rk4,
                        _ => return Err(err(format!("unknown integrator `{v}` (euler, rk4)"))),
                    }
                }
                "w_scale" => cfg.w_scale = number(v).map_err(err)?,
                "r_scale" => cfg.r_scale = number(v).map_err(err)?,
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        if let ModelChoice::Custom(p) = &cfg.model {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.model = ModelChoice::Custom(dir.join(p));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

struct Entry {
    line: usize,
    key: String,
    value: String,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_owned(),
        source,
    })
}

fn entries(text: &str, path: &Path) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |what: String| BenchError::Config {
            path: path.to_owned(),
            line: i + 1,
            what,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(err("empty key".into()));
        }
        if out.iter().any(|e| e.key == key) {
            return Err(err(format!("key `{key}` given twice")));
        }
        out.push(Entry {
            line: i + 1,
            key: key.to_owned(),
            value: value.trim().to_owned(),
        });
    }
    Ok(out)
}

fn number<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}` as a number"))
}

fn parse_matrix(v: &str) -> std::result::Result<Matrix, String> {
    let rows: Vec<Vec<f64>> = v
        .split(';')
        .map(|row| {
            row.split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(number)
                .collect()
        })
        .collect::<std::result::Result<_, _>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(format!("`{v}` is not a rectangular matrix"));
    }
    Ok(Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn parse_vector(v: &str) -> std::result::Result<Vector, String> {
    let m = parse_matrix(v)?;
    if m.nrows() == 1 {
        Ok(m.row(0).transpose())
    } else if m.ncols() == 1 {
        Ok(m.column(0).into_owned())
    } else {
        Err(format!("`{v}` is not a vector"))
    }
}

/// A custom linear model and its time span.
#[derive(Debug, Clone)]
pub struct CustomModel {
    pub model: LinearAffineModel,
    pub span: (f64, f64),
}

/// Reads a time-invariant linear model. Required keys: `F L W H R m0 P0`;
/// optional `c`, `r` (offsets, zero by default), `t0` (0) and `tf` (5).
pub fn load_custom_model(path: &Path) -> Result<CustomModel> {
    let text = read(path)?;
    parse_custom_model(&text, path)
}

pub fn parse_custom_model(text: &str, path: &Path) -> Result<CustomModel> {
    let entries = entries(text, path)?;
    let cfg_err = |line: usize, what: String| BenchError::Config {
        path: path.to_owned(),
        line,
        what,
    };
    const KEYS: [&str; 11] = ["F", "L", "W", "H", "R", "m0", "P0", "c", "r", "t0", "tf"];
    for e in &entries {
        if !KEYS.contains(&e.key.as_str()) {
            return Err(cfg_err(e.line, format!("unknown key `{}`", e.key)));
        }
    }
    let find = |key: &str| entries.iter().find(|e| e.key == key);
    let matrix = |key: &str| -> Result<Matrix> {
        let e = find(key).ok_or_else(|| cfg_err(0, format!("missing key `{key}`")))?;
        parse_matrix(&e.value).map_err(|w| cfg_err(e.line, w))
    };
    let vector = |key: &str, default: Option<Vector>| -> Result<Vector> {
        match (find(key), default) {
            (Some(e), _) => parse_vector(&e.value).map_err(|w| cfg_err(e.line, w)),
            (None, Some(d)) => Ok(d),
            (None, None) => Err(cfg_err(0, format!("missing key `{key}`"))),
        }
    };
    let scalar = |key: &str, default: f64| -> Result<f64> {
        match find(key) {
            Some(e) => number(&e.value).map_err(|w| cfg_err(e.line, w)),
            None => Ok(default),
        }
    };
    let f = matrix("F")?;
    let h = matrix("H")?;
    let mut model = LinearAffineModel::time_invariant(
        f.clone(),
        matrix("L")?,
        matrix("W")?,
        h.clone(),
        matrix("R")?,
        vector("m0", None)?,
        matrix("P0")?,
    );
    model.drift_offset = vector("c", Some(Vector::zeros(f.nrows())))?.into();
    model.obs_offset = vector("r", Some(Vector::zeros(h.nrows())))?.into();
    let nx = f.nrows();
    if f.ncols() != nx || h.ncols() != nx || model.m0.len() != nx {
        return Err(cfg_err(
            0,
            format!("F must be square and match the columns of H and the length of m0 ({nx})"),
        ));
    }
    let span = (scalar("t0", 0.0)?, scalar("tf", 5.0)?);
    if !(span.1 > span.0) {
        return Err(cfg_err(0, format!("t0 = {} must be below tf = {}", span.0, span.1)));
    }
    let grid = ctmap::build_time_grid(span.0, span.1, 1, 1).map_err(|e| cfg_err(0, e.to_string()))?;
    ctmap::validate_model(&model, &grid)
        .into_result()
        .map_err(|e| cfg_err(0, e.to_string()))?;
    Ok(CustomModel { model, span })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_key() {
        let text = "# run\nmodel = coordinated-turn\nmethod = seq-tf\nT = 64\nn = 20\nseed = 3\n\
                    repeats = 2\nthreads = 4\nout = results\niterations = 3\nintegrator = rk4\n\
                    w_scale = 2\nr_scale = 0.5\n";
        let cfg = ExperimentConfig::parse(text, Path::new("x.cfg")).unwrap();
        assert_eq!(cfg.model, ModelChoice::CoordinatedTurn);
        assert_eq!(cfg.method, Method::SeqTf);
        assert_eq!((cfg.blocks, cfg.substeps, cfg.seed, cfg.repeats), (64, 20, 3, 2));
        assert_eq!(cfg.threads, Some(4));
        assert_eq!(cfg.integrator, Integrator::Rk4);
        assert_eq!((cfg.w_scale, cfg.r_scale), (2.0, 0.5));
    }

    #[test]
    fn unknown_key_names_the_line() {
        let err = ExperimentConfig::parse("T = 4\nspeed = 9\n", Path::new("x.cfg")).unwrap_err();
        match err {
            BenchError::Config { line, what, .. } => {
                assert_eq!(line, 2);
                assert!(what.contains("speed"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn zero_repeats_rejected() {
        assert!(ExperimentConfig::parse("repeats = 0", Path::new("x.cfg")).is_err());
    }

    #[test]
    fn duplicate_key_rejected() {
        assert!(ExperimentConfig::parse("T = 4\nT = 5", Path::new("x.cfg")).is_err());
    }

    #[test]
    fn matrix_rows() {
        let m = parse_matrix("0 1; 0, 0").unwrap();
        assert_eq!(m, Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert!(parse_matrix("1 2; 3").is_err());
    }

    #[test]
    fn custom_model_round_trip() {
        let text = "F = 0 1; 0 0\nL = 0; 1\nW = 4\nH = 1 0\nR = 0.01\nm0 = 5 0\nP0 = 0.01 0; 0 0.01\ntf = 2\n";
        let custom = parse_custom_model(text, Path::new("m.model")).unwrap();
        assert_eq!(custom.span, (0.0, 2.0));
        assert_eq!(custom.model.m0, Vector::from_row_slice(&[5.0, 0.0]));
        assert!(custom.model.is_time_invariant());
    }

    #[test]
    fn custom_model_checked() {
        let text = "F = 0 1; 0 0\nL = 0; 1\nW = 4\nH = 1 0\nR = -1\nm0 = 5 0\nP0 = 0.01 0; 0 0.01\n";
        assert!(parse_custom_model(text, Path::new("m.model")).is_err());
        let missing = "F = 0\n";
        assert!(parse_custom_model(missing, Path::new("m.model")).is_err());
    }
}
