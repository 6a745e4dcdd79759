//! `key = value` experiment configuration with section headers. Parse errors
//! carry the offending line number so batch scripts fail loudly and early.

use ndarray::{Array1, Array2};
use roughsko_core::gaussian::CovModel;
use roughsko_core::grid::Partition;
use roughsko_core::rde::VectorField;
use roughsko_core::variation::GridFunction2D;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "{}:{}: {}", self.path.display(), self.line, self.message)
        } else {
            write!(f, "{}: {}", self.path.display(), self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

/// Raw parsed file: `section.key` -> (value, line). Sections only group and
/// validate key placement; key names are unique per section.
#[derive(Debug)]
pub struct RawConfig {
    pub path: PathBuf,
    pub text: String,
    entries: BTreeMap<String, (String, usize)>,
}

const SECTIONS: &[&str] = &["model", "grids", "field", "run", "output", "cm", "report"];

const KNOWN_KEYS: &[(&str, &str)] = &[
    ("model", "kind"),
    ("model", "hurst"),
    ("model", "horizon"),
    ("model", "components"),
    ("model", "table"),
    ("grids", "fine_exponent"),
    ("grids", "coarse_exponents"),
    ("grids", "correction_exponent"),
    ("grids", "relax_grid_gap"),
    ("field", "kind"),
    ("field", "state_dim"),
    ("field", "scale"),
    ("field", "y0"),
    ("field", "constant"),
    ("field", "matrix_1"),
    ("field", "matrix_2"),
    ("field", "matrix_3"),
    ("field", "matrix_4"),
    ("run", "experiment"),
    ("run", "samples"),
    ("run", "seed"),
    ("run", "p"),
    ("output", "dir"),
    ("cm", "component_1"),
    ("cm", "upto_1"),
    ("cm", "component_2"),
    ("cm", "upto_2"),
    ("cm", "rho"),
    ("report", "inputs"),
];

impl RawConfig {
    pub fn load(path: &Path) -> Result<RawConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: 0,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(path, text)
    }

    pub fn parse(path: &Path, text: String) -> Result<RawConfig, ConfigError> {
        let err = |line: usize, message: String| ConfigError {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut entries = BTreeMap::new();
        let mut section: Option<&str> = None;
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                match SECTIONS.iter().find(|s| **s == name) {
                    Some(s) => section = Some(s),
                    None => return Err(err(lineno, format!("unknown section [{name}]"))),
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(lineno, format!("expected `key = value`, got `{line}`")));
            };
            let key = key.trim();
            let value = value.trim();
            let Some(sec) = section else {
                return Err(err(lineno, format!("key `{key}` appears before any [section] header")));
            };
            if !KNOWN_KEYS.iter().any(|(s, k)| *s == sec && *k == key) {
                if let Some((home, _)) = KNOWN_KEYS.iter().find(|(_, k)| *k == key) {
                    return Err(err(lineno, format!("key `{key}` belongs in [{home}], not [{sec}]")));
                }
                return Err(err(lineno, format!("unknown key `{key}` in [{sec}]")));
            }
            let full = format!("{sec}.{key}");
            if let Some((_, first)) = entries.get(&full) {
                return Err(err(lineno, format!("duplicate key `{key}` (first set on line {first})")));
            }
            entries.insert(full, (value.to_string(), lineno));
        }
        Ok(RawConfig { path: path.to_path_buf(), text, entries })
    }

    fn err(&self, line: usize, message: String) -> ConfigError {
        ConfigError { path: self.path.clone(), line, message }
    }

    fn missing(&self, full: &str) -> ConfigError {
        let (section, key) = full.split_once('.').unwrap_or(("", full));
        self.err(0, format!("missing required key `{key}` in [{section}]"))
    }

    pub fn get(&self, full: &str) -> Option<(&str, usize)> {
        self.entries.get(full).map(|(v, l)| (v.as_str(), *l))
    }

    pub fn require(&self, full: &str) -> Result<(&str, usize), ConfigError> {
        self.get(full).ok_or_else(|| self.missing(full))
    }

    fn parse_with<T>(&self, full: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Result<Option<(T, usize)>, ConfigError> {
        match self.get(full) {
            None => Ok(None),
            Some((v, line)) => match f(v) {
                Some(t) => Ok(Some((t, line))),
                None => Err(self.err(line, format!("expected {what} for `{full}`, got `{v}`"))),
            },
        }
    }

    pub fn f64_opt(&self, full: &str) -> Result<Option<f64>, ConfigError> {
        Ok(self.parse_with(full, "a number", |v| v.parse().ok())?.map(|(t, _)| t))
    }

    pub fn f64_req(&self, full: &str) -> Result<f64, ConfigError> {
        self.require(full)?;
        Ok(self.f64_opt(full)?.unwrap())
    }

    pub fn usize_req(&self, full: &str) -> Result<usize, ConfigError> {
        self.require(full)?;
        Ok(self
            .parse_with(full, "a nonnegative integer", |v| v.parse().ok())?
            .map(|(t, _)| t)
            .unwrap())
    }

    pub fn u64_opt(&self, full: &str) -> Result<Option<u64>, ConfigError> {
        Ok(self.parse_with(full, "a nonnegative integer", |v| v.parse().ok())?.map(|(t, _)| t))
    }

    pub fn u32_req(&self, full: &str) -> Result<u32, ConfigError> {
        self.require(full)?;
        Ok(self
            .parse_with(full, "a nonnegative integer", |v| v.parse().ok())?
            .map(|(t, _)| t)
            .unwrap())
    }

    pub fn bool_opt(&self, full: &str) -> Result<Option<bool>, ConfigError> {
        Ok(self.parse_with(full, "true or false", |v| v.parse().ok())?.map(|(t, _)| t))
    }

    pub fn f64_list(&self, full: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        Ok(self
            .parse_with(full, "a comma-separated list of numbers", |v| {
                v.split(',').map(|x| x.trim().parse().ok()).collect::<Option<Vec<f64>>>()
            })?
            .map(|(t, _)| t))
    }

    pub fn u32_list_req(&self, full: &str) -> Result<(Vec<u32>, usize), ConfigError> {
        self.require(full)?;
        Ok(self
            .parse_with(full, "a comma-separated list of integers", |v| {
                v.split(',').map(|x| x.trim().parse().ok()).collect::<Option<Vec<u32>>>()
            })?
            .unwrap())
    }

    /// Deterministic echo of the parsed keys for the run manifest.
    pub fn echo(&self) -> BTreeMap<String, String> {
        self.entries.iter().map(|(k, (v, _))| (k.clone(), v.clone())).collect()
    }
}

/// Covariance model selection.
#[derive(Debug)]
pub enum ModelSpec {
    Brownian,
    Fbm { hurst: f64 },
    Custom { table: PathBuf },
}

/// Vector field selection; matrices are parsed row-major with `;` between
/// rows and `,` within a row.
#[derive(Debug)]
pub enum FieldSpec {
    Zero,
    Constant(Array2<f64>),
    Linear(Vec<Array2<f64>>),
    Rotation,
    Tanh { scale: f64 },
}

/// Fully validated experiment description.
#[derive(Debug)]
pub struct ExperimentConfig {
    pub raw: RawConfig,
    pub model: ModelSpec,
    pub horizon: f64,
    pub d: usize,
    pub fine_exponent: u32,
    pub coarse_exponents: Vec<u32>,
    pub correction_exponent: u32,
    pub samples: usize,
    pub seed: u64,
    pub p: f64,
    pub out_dir: PathBuf,
    pub field: Option<FieldSpec>,
    pub state_dim: Option<usize>,
    pub y0: Option<Vec<f64>>,
}

fn parse_matrix(v: &str) -> Option<Array2<f64>> {
    let rows: Vec<Vec<f64>> = v
        .split(';')
        .map(|row| row.split(',').map(|x| x.trim().parse().ok()).collect::<Option<Vec<f64>>>())
        .collect::<Option<Vec<_>>>()?;
    let r = rows.len();
    let c = rows.first()?.len();
    if c == 0 || rows.iter().any(|row| row.len() != c) {
        return None;
    }
    Array2::from_shape_vec((r, c), rows.concat()).ok()
}

impl ExperimentConfig {
    pub fn from_raw(raw: RawConfig, subcommand: &str, seed_override: Option<u64>) -> Result<ExperimentConfig, ConfigError> {
        let (experiment, exp_line) = raw.require("run.experiment").map(|(v, l)| (v.to_string(), l))?;
        if experiment != subcommand {
            return Err(raw.err(
                exp_line,
                format!("config declares experiment `{experiment}` but the `{subcommand}` subcommand was invoked"),
            ));
        }
        let (model_kind, model_line) = raw.require("model.kind")?;
        let model = match model_kind {
            "bm" => ModelSpec::Brownian,
            "fbm" => {
                let h = raw.f64_req("model.hurst")?;
                let line = raw.get("model.hurst").map(|(_, l)| l).unwrap_or(model_line);
                if !(h > 1.0 / 3.0 && h <= 1.0) {
                    return Err(raw.err(line, format!("hurst must lie in (1/3, 1], got {h}")));
                }
                ModelSpec::Fbm { hurst: h }
            }
            "custom" => {
                let (table, _) = raw.require("model.table")?;
                ModelSpec::Custom { table: PathBuf::from(table) }
            }
            other => return Err(raw.err(model_line, format!("model kind must be bm, fbm or custom, got `{other}`"))),
        };
        let horizon = raw.f64_opt("model.horizon")?.unwrap_or(1.0);
        if horizon <= 0.0 || horizon.is_nan() {
            let line = raw.get("model.horizon").map(|(_, l)| l).unwrap_or(model_line);
            return Err(raw.err(line, format!("horizon must be positive, got {horizon}")));
        }
        let d = raw.usize_req("model.components")?;
        if d == 0 {
            let line = raw.get("model.components").map(|(_, l)| l).unwrap_or(model_line);
            return Err(raw.err(line, "components must be at least 1".into()));
        }

        let fine_exponent = raw.u32_req("grids.fine_exponent")?;
        let (coarse_exponents, coarse_line) = raw.u32_list_req("grids.coarse_exponents")?;
        if coarse_exponents.is_empty() {
            return Err(raw.err(coarse_line, "coarse_exponents must not be empty".into()));
        }
        let max_coarse = *coarse_exponents.iter().max().unwrap();
        let relax = raw.bool_opt("grids.relax_grid_gap")?.unwrap_or(false);
        let min_gap = if relax { 0 } else { 4 };
        if fine_exponent < max_coarse + min_gap {
            return Err(raw.err(
                coarse_line,
                format!(
                    "fine_exponent {fine_exponent} must exceed the largest coarse exponent {max_coarse} by at least {min_gap} (set relax_grid_gap = true to allow closer grids)"
                ),
            ));
        }
        let correction_exponent = match raw.get("grids.correction_exponent") {
            Some(_) => {
                let c = raw.u32_req("grids.correction_exponent")?;
                let line = raw.get("grids.correction_exponent").unwrap().1;
                if c > fine_exponent {
                    return Err(raw.err(line, format!("correction_exponent {c} exceeds fine_exponent {fine_exponent}")));
                }
                if (1usize << c) + 1 > roughsko_core::conversion::CORRECTION_GRID_LIMIT {
                    return Err(raw.err(
                        line,
                        format!(
                            "correction_exponent {c} exceeds the 2D evaluation guard ({} points)",
                            roughsko_core::conversion::CORRECTION_GRID_LIMIT
                        ),
                    ));
                }
                c
            }
            None => fine_exponent.min(11),
        };

        let samples = raw.usize_req("run.samples")?;
        if samples == 0 {
            let line = raw.get("run.samples").unwrap().1;
            return Err(raw.err(line, "samples must be at least 1".into()));
        }
        let seed = match seed_override {
            Some(s) => s,
            None => raw.u64_opt("run.seed")?.ok_or_else(|| raw.missing("run.seed"))?,
        };

        let p = match raw.f64_opt("run.p")? {
            Some(p) => p,
            None => match &model {
                ModelSpec::Brownian => 2.1,
                ModelSpec::Fbm { hurst } => (1.0 / hurst + 0.1).max(1.0),
                ModelSpec::Custom { .. } => {
                    return Err(raw.missing("run.p"));
                }
            },
        };
        if !(1.0..3.0).contains(&p) {
            let line = raw.get("run.p").map(|(_, l)| l).unwrap_or(0);
            return Err(raw.err(line, format!("p must lie in [1, 3), got {p}")));
        }

        let out_dir = PathBuf::from(raw.require("output.dir")?.0);

        let field = match raw.get("field.kind") {
            None => None,
            Some((kind, line)) => Some(match kind {
                "zero" => FieldSpec::Zero,
                "rotation" => FieldSpec::Rotation,
                "tanh" => FieldSpec::Tanh { scale: raw.f64_opt("field.scale")?.unwrap_or(1.0) },
                "constant" => {
                    let (v, vline) = raw.require("field.constant")?;
                    let m = parse_matrix(v)
                        .ok_or_else(|| raw.err(vline, format!("expected a `;`-separated matrix, got `{v}`")))?;
                    FieldSpec::Constant(m)
                }
                "linear" => {
                    let mut mats = Vec::new();
                    for k in 1..=d {
                        let full = format!("field.matrix_{k}");
                        let (v, vline) = raw.require(&full)?;
                        let m = parse_matrix(v)
                            .ok_or_else(|| raw.err(vline, format!("expected a `;`-separated matrix, got `{v}`")))?;
                        mats.push(m);
                    }
                    FieldSpec::Linear(mats)
                }
                other => return Err(raw.err(line, format!("field kind must be zero, constant, linear, rotation or tanh, got `{other}`"))),
            }),
        };
        let state_dim = match raw.get("field.state_dim") {
            Some(_) => Some(raw.usize_req("field.state_dim")?),
            None => None,
        };
        let y0 = raw.f64_list("field.y0")?;

        Ok(ExperimentConfig {
            raw,
            model,
            horizon,
            d,
            fine_exponent,
            coarse_exponents,
            correction_exponent,
            samples,
            seed,
            p,
            out_dir,
            field,
            state_dim,
            y0,
        })
    }

    /// SHA-256 over the raw config bytes, extended by the seed override when
    /// one is in effect (the hash identifies the effective inputs).
    pub fn hash(&self, seed_override: Option<u64>) -> String {
        let mut h = Sha256::new();
        h.update(self.raw.text.as_bytes());
        if let Some(s) = seed_override {
            h.update(b"\x00seed-override");
            h.update(s.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_model(&self) -> anyhow::Result<CovModel> {
        Ok(match &self.model {
            ModelSpec::Brownian => CovModel::brownian(self.horizon)?,
            ModelSpec::Fbm { hurst } => CovModel::fbm(*hurst, self.horizon)?,
            ModelSpec::Custom { table } => {
                let table = load_covariance_table(table)?;
                CovModel::from_table(table)?
            }
        })
    }

    pub fn fine_grid(&self) -> anyhow::Result<Partition> {
        Ok(Partition::dyadic(self.horizon, self.fine_exponent)?)
    }

    /// Build the configured vector field; `d` columns, `state_dim` rows
    /// (defaulting to square when omitted).
    pub fn build_field(&self) -> anyhow::Result<VectorField<'static>> {
        let spec = self
            .field
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("this experiment needs a [field] section"))?;
        let e = self.state_dim.unwrap_or(self.d);
        Ok(match spec {
            FieldSpec::Zero => VectorField::zero(e, self.d),
            FieldSpec::Rotation => VectorField::rotation(e, self.d)?,
            FieldSpec::Tanh { scale } => VectorField::tanh_demo(e, self.d, *scale)?,
            FieldSpec::Constant(m) => {
                anyhow::ensure!(
                    m.nrows() == e && m.ncols() == self.d,
                    "constant field matrix is {}x{}, expected {e}x{}",
                    m.nrows(),
                    m.ncols(),
                    self.d
                );
                VectorField::constant(m.clone())
            }
            FieldSpec::Linear(mats) => {
                anyhow::ensure!(
                    mats.iter().all(|m| m.nrows() == e && m.ncols() == e),
                    "linear field matrices must be {e}x{e}"
                );
                VectorField::linear(mats.clone())?
            }
        })
    }

    pub fn initial_state(&self, e: usize) -> anyhow::Result<Array1<f64>> {
        let y0 = self
            .y0
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("this experiment needs `y0` in [field]"))?;
        anyhow::ensure!(y0.len() == e, "y0 has {} entries, the state dimension is {e}", y0.len());
        Ok(Array1::from_vec(y0.clone()))
    }
}

/// Covariance table file: one comment-or-blank-tolerant CSV whose first data
/// line lists the grid times and whose following lines give the rows of
/// R(t_i, t_j).
pub fn load_covariance_table(path: &Path) -> anyhow::Result<GridFunction2D> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read covariance table {}: {e}", path.display()))?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let times: Vec<f64> = lines
        .next()
        .ok_or_else(|| anyhow::anyhow!("covariance table {} is empty", path.display()))?
        .split(',')
        .map(|x| x.trim().parse())
        .collect::<Result<_, _>>()?;
    let n = times.len();
    let mut values = Array2::zeros((n, n));
    for (i, line) in lines.enumerate() {
        anyhow::ensure!(i < n, "covariance table {} has more rows than grid times", path.display());
        let row: Vec<f64> = line.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>()?;
        anyhow::ensure!(row.len() == n, "covariance table row {i} has {} entries, expected {n}", row.len());
        for (j, v) in row.into_iter().enumerate() {
            values[(i, j)] = v;
        }
    }
    let grid = Partition::new(times)?;
    Ok(GridFunction2D::new(grid.clone(), grid, values)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RawConfig, ConfigError> {
        RawConfig::parse(Path::new("t.conf"), text.to_string())
    }

    const BASE: &str = "\
[model]
kind = bm
components = 2
[grids]
fine_exponent = 10
coarse_exponents = 4, 5
[run]
experiment = convert
samples = 3
seed = 1
[output]
dir = out
";

    #[test]
    fn rejects_unknown_section() {
        let e = parse("[models]\nkind = bm\n").unwrap_err();
        assert_eq!(e.line, 1);
        assert!(e.message.contains("unknown section"));
    }

    #[test]
    fn rejects_key_outside_any_section() {
        let e = parse("kind = bm\n").unwrap_err();
        assert!(e.message.contains("before any [section]"));
    }

    #[test]
    fn rejects_misplaced_key_with_hint() {
        let e = parse("[run]\nhurst = 0.4\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("belongs in [model]"), "{}", e.message);
    }

    #[test]
    fn rejects_duplicates_citing_first_line() {
        let e = parse("[model]\nkind = bm\nkind = fbm\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.message.contains("first set on line 2"));
    }

    #[test]
    fn rejects_lines_without_equals() {
        let e = parse("[model]\nkind bm\n").unwrap_err();
        assert!(e.message.contains("expected `key = value`"));
    }

    #[test]
    fn display_carries_path_and_line() {
        let e = parse("[model]\nwat = 1\n").unwrap_err();
        assert_eq!(e.to_string(), "t.conf:2: unknown key `wat` in [model]");
    }

    #[test]
    fn defaults_fill_in_for_brownian() {
        let cfg = ExperimentConfig::from_raw(parse(BASE).unwrap(), "convert", None).unwrap();
        assert_eq!(cfg.horizon, 1.0);
        assert_eq!(cfg.p, 2.1);
        assert_eq!(cfg.correction_exponent, 10);
        assert!(cfg.field.is_none());
    }

    #[test]
    fn fbm_p_default_tracks_hurst() {
        let text = BASE.replace("kind = bm", "kind = fbm\nhurst = 0.5");
        let cfg = ExperimentConfig::from_raw(parse(&text).unwrap(), "convert", None).unwrap();
        assert!((cfg.p - 2.1).abs() < 1e-12);
    }

    #[test]
    fn hurst_below_third_is_rejected() {
        let text = BASE.replace("kind = bm", "kind = fbm\nhurst = 0.3");
        let e = ExperimentConfig::from_raw(parse(&text).unwrap(), "convert", None).unwrap_err();
        assert!(e.message.contains("hurst"));
    }

    #[test]
    fn grid_gap_guard_allows_opt_out() {
        let text = BASE.replace("coarse_exponents = 4, 5", "coarse_exponents = 9");
        let e = ExperimentConfig::from_raw(parse(&text).unwrap(), "convert", None).unwrap_err();
        assert!(e.message.contains("relax_grid_gap"));
        let relaxed = format!("{text}[grids2]");
        let relaxed = relaxed.replace("fine_exponent = 10", "fine_exponent = 10\nrelax_grid_gap = true");
        let relaxed = relaxed.replace("[grids2]", "");
        ExperimentConfig::from_raw(parse(&relaxed).unwrap(), "convert", None).unwrap();
    }

    #[test]
    fn seed_override_wins_and_changes_hash() {
        let raw = parse(BASE).unwrap();
        let a = ExperimentConfig::from_raw(raw, "convert", Some(9)).unwrap();
        assert_eq!(a.seed, 9);
        assert_ne!(a.hash(None), a.hash(Some(9)));
        assert_eq!(a.hash(Some(9)), a.hash(Some(9)));
    }

    #[test]
    fn matrix_parsing_is_row_major() {
        let m = parse_matrix("1, 2; 3, 4").unwrap();
        assert_eq!(m.shape(), &[2, 2]);
        assert_eq!(m[(1, 0)], 3.0);
        assert!(parse_matrix("1, 2; 3").is_none());
    }

    #[test]
    fn experiment_kind_mismatch_is_an_error() {
        let e = ExperimentConfig::from_raw(parse(BASE).unwrap(), "solve", None).unwrap_err();
        assert!(e.message.contains("declares experiment `convert`"));
    }

    #[test]
    fn covariance_table_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cov.csv");
        std::fs::write(&path, "# R(s,t) = min(s,t)\n0.0, 0.5, 1.0\n0,0,0\n0,0.5,0.5\n0,0.5,1\n").unwrap();
        let table = load_covariance_table(&path).unwrap();
        assert_eq!(table.values[(2, 1)], 0.5);
    }
}
