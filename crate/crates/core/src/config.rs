//! TOML experiment configuration.
//!
//! A configuration is parsed into a TOML table first so that `--set`
//! overrides can be merged before typed deserialization. The hash is taken
//! over the merged table in its canonical (key-sorted) serialization, which
//! is also what gets echoed next to every output.

use std::path::{Path, PathBuf};

use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::EstimateFlavor;
use crate::dynamics::{FractionalOperator, TimeStep};
use crate::error::{Error, Result};
use crate::experiments::{ConsistencyConfig, DataPreset, EpsilonNet, LabSetup, SolverConfig, DEFAULT_K_MAX};
use crate::mass::{MassSpec, PerturbationKind, MODERATE_RESIDUAL_CEILING};
use crate::spectral::RocklandSymbol;
use crate::structure::{BoxGrid, DilationStructure};

/// A dilation weight: an integer or a `"p/q"` string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightValue {
    Integer(i64),
    Fraction(String),
}

impl WeightValue {
    fn to_rational(&self) -> Result<Rational64> {
        match self {
            WeightValue::Integer(n) => Ok(Rational64::from_integer(*n)),
            WeightValue::Fraction(s) => {
                let parse = |t: &str| {
                    t.trim().parse::<i64>().map_err(|_| Error::Config(format!("weight '{s}' is not p/q or an integer")))
                };
                match s.split_once('/') {
                    Some((p, q)) => {
                        let q = parse(q)?;
                        if q == 0 {
                            return Err(Error::Config(format!("weight '{s}' has zero denominator")));
                        }
                        Ok(Rational64::new(parse(p)?, q))
                    }
                    None => Ok(Rational64::from_integer(parse(s)?)),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSection {
    pub weights: Vec<WeightValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub extents: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateChoice {
    /// Both flavors where admissible.
    #[default]
    Auto,
    Prop31,
    Prop32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSection {
    /// `m_j` in `a(xi) = sum xi_j^{2 m_j}`.
    pub exponents: Vec<u32>,
    pub s: f64,
    /// Optional `nu`; rejected when it disagrees with `2 m_j v_j`.
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default)]
    pub estimate: EstimateChoice,
}

/// `dt = "auto"` or a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DtValue {
    Fixed(f64),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_final: f64,
    #[serde(default = "auto_dt")]
    pub dt: DtValue,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn auto_dt() -> DtValue {
    DtValue::Keyword("auto".into())
}

fn default_stride() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_k_max")]
    pub k_max: u32,
    #[serde(default = "default_max_count")]
    pub max_count: usize,
    #[serde(default = "default_ceiling")]
    pub residual_ceiling: f64,
}

fn default_eps0() -> f64 {
    0.5
}
fn default_rho() -> f64 {
    std::f64::consts::FRAC_1_SQRT_2
}
fn default_n() -> usize {
    12
}
fn default_k_max() -> u32 {
    DEFAULT_K_MAX
}
fn default_max_count() -> usize {
    4096
}
fn default_ceiling() -> f64 {
    MODERATE_RESIDUAL_CEILING
}

impl Default for NetSection {
    fn default() -> Self {
        Self {
            eps0: default_eps0(),
            rho: default_rho(),
            n: default_n(),
            k_max: default_k_max(),
            max_count: default_max_count(),
            residual_ceiling: default_ceiling(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    /// Regularization parameter for the single `solve` run.
    #[serde(default = "default_solve_eps")]
    pub epsilon: f64,
}

fn default_solve_eps() -> f64 {
    0.25
}

impl Default for SolveSection {
    fn default() -> Self {
        Self { epsilon: default_solve_eps() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniquenessSection {
    #[serde(default)]
    pub perturbation: PerturbationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencySection {
    #[serde(default = "two")]
    pub spatial_factor: usize,
    #[serde(default = "four")]
    pub temporal_factor: usize,
}

fn two() -> usize {
    2
}
fn four() -> usize {
    4
}

impl Default for ConsistencySection {
    fn default() -> Self {
        Self { spatial_factor: 2, temporal_factor: 4 }
    }
}

/// An exponent `p`: a number or `"inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PValue {
    Finite(f64),
    Keyword(String),
}

impl PValue {
    fn value(&self) -> Result<f64> {
        match self {
            PValue::Finite(p) if *p >= 1.0 => Ok(*p),
            PValue::Keyword(s) if s == "inf" => Ok(f64::INFINITY),
            other => Err(Error::Config(format!("mollifier.p entries must be >= 1 or \"inf\", got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifierSection {
    #[serde(default = "default_ps")]
    pub p: Vec<PValue>,
}

fn default_ps() -> Vec<PValue> {
    vec![PValue::Finite(1.0), PValue::Finite(2.0), PValue::Finite(4.0), PValue::Keyword("inf".into())]
}

impl Default for MollifierSection {
    fn default() -> Self {
        Self { p: default_ps() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

fn default_dir() -> PathBuf {
    PathBuf::from("kglab-out")
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

/// Typed view of a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub structure: StructureSection,
    pub grid: GridSection,
    pub operator: OperatorSection,
    pub mass: MassSpec,
    pub data: DataPreset,
    pub time: TimeSection,
    #[serde(default)]
    pub net: NetSection,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub uniqueness: UniquenessSection,
    #[serde(default)]
    pub consistency: ConsistencySection,
    #[serde(default)]
    pub mollifier: MollifierSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// A validated configuration together with its canonical text and hash.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub canonical: String,
    pub hash: String,
}

/// Built-in configuration used when no file is given: 1D Laplacian, `s = 1`,
/// delta mass, Gaussian data, default net.
pub const DEFAULT_CONFIG: &str = r#"[structure]
weights = [1]

[grid]
extents = [20.0]
counts = [256]

[operator]
exponents = [1]
s = 1.0

[mass]
kind = "dirac_delta"
weight = 1.0

[data]
preset = "gaussian"
width = 1.0

[time]
t_final = 1.0
dt = "auto"
stride = 10

[net]
eps0 = 0.5
n = 12
k_max = 10
max_count = 4096
"#;

/// Merges a `section.key=value` override into the table. The value is read
/// as a TOML literal, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not of the form section.key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override key '{path}' must be section.key")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = table;
    for key in &keys[..keys.len() - 1] {
        let entry = node.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{path}': '{key}' is not a section")))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Hex SHA-256 of a string.
pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl LoadedConfig {
    /// Parses, applies overrides, validates and hashes.
    pub fn from_str_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::Config(format!("config parse error: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let canonical = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
        let config: ExperimentConfig = toml::from_str(&canonical).map_err(|e| {
            let location = if overrides.is_empty() { "" } else { " (after overrides; positions refer to the merged config)" };
            Error::Config(format!("invalid config{location}: {e}"))
        })?;
        config.validate()?;
        let hash = sha256_hex(&canonical);
        Ok(Self { config, canonical, hash })
    }

    pub fn from_path(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str_with(&text, overrides)
    }
}

impl ExperimentConfig {
    pub fn structure(&self) -> Result<DilationStructure> {
        let weights = self.structure.weights.iter().map(WeightValue::to_rational).collect::<Result<Vec<_>>>()?;
        DilationStructure::new(weights).map_err(as_config)
    }

    pub fn grid(&self) -> Result<BoxGrid> {
        let st = self.structure()?;
        if self.grid.extents.len() != st.dim() || self.grid.counts.len() != st.dim() {
            return Err(Error::Config(format!(
                "grid.extents and grid.counts need {} entries (one per weight)",
                st.dim()
            )));
        }
        BoxGrid::new(st, self.grid.extents.clone(), self.grid.counts.clone()).map_err(as_config)
    }

    pub fn operator(&self) -> Result<FractionalOperator> {
        let st = self.structure()?;
        if self.operator.exponents.len() != st.dim() {
            return Err(Error::Config(format!("operator.exponents needs {} entries", st.dim())));
        }
        let symbol = RocklandSymbol::new(&st, &self.operator.exponents).map_err(as_config)?;
        if let Some(nu) = self.operator.nu {
            if (nu - symbol.nu()).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "operator.nu = {nu} disagrees with 2 m_j v_j = {}",
                    symbol.nu()
                )));
            }
        }
        FractionalOperator::new(symbol, self.operator.s)
    }

    pub fn setup(&self) -> Result<LabSetup> {
        LabSetup::new(self.grid()?, self.operator()?, self.data.clone())
    }

    pub fn time_step(&self) -> Result<TimeStep> {
        match &self.time.dt {
            DtValue::Fixed(dt) if *dt > 0.0 => Ok(TimeStep::Fixed(*dt)),
            DtValue::Keyword(k) if k == "auto" => Ok(TimeStep::Auto),
            other => Err(Error::Config(format!("time.dt must be positive or \"auto\", got {other:?}"))),
        }
    }

    pub fn net(&self) -> Result<EpsilonNet> {
        EpsilonNet::new(self.net.eps0, self.net.rho, self.net.n)
    }

    pub fn solver(&self) -> Result<SolverConfig> {
        if self.time.stride == 0 {
            return Err(Error::Config("time.stride must be at least 1".into()));
        }
        if !(self.time.t_final > 0.0) {
            return Err(Error::Config(format!("time.t_final must be positive, got {}", self.time.t_final)));
        }
        Ok(SolverConfig {
            t_final: self.time.t_final,
            time_step: self.time_step()?,
            stride: self.time.stride,
            max_count: self.net.max_count,
            residual_ceiling: self.net.residual_ceiling,
            k_max: self.net.k_max,
        })
    }

    pub fn reference(&self) -> ConsistencyConfig {
        ConsistencyConfig {
            spatial_factor: self.consistency.spatial_factor,
            temporal_factor: self.consistency.temporal_factor,
        }
    }

    pub fn mollifier_ps(&self) -> Result<Vec<f64>> {
        self.mollifier.p.iter().map(PValue::value).collect()
    }

    /// Estimate flavors this run reports.
    pub fn flavors(&self) -> Result<Vec<EstimateFlavor>> {
        let q = self.structure()?.q();
        let nu_s = self.operator()?.nu_s();
        let subcritical = q > nu_s;
        match self.operator.estimate {
            EstimateChoice::Prop31 => Ok(vec![EstimateFlavor::Prop31]),
            EstimateChoice::Prop32 if subcritical => Ok(vec![EstimateFlavor::Prop32]),
            EstimateChoice::Prop32 => Err(Error::Config(format!(
                "operator.estimate = \"prop32\" requires Q > nu s, but Q = {q} and nu s = {nu_s}"
            ))),
            EstimateChoice::Auto if subcritical => Ok(vec![EstimateFlavor::Prop31, EstimateFlavor::Prop32]),
            EstimateChoice::Auto => Ok(vec![EstimateFlavor::Prop31]),
        }
    }

    /// Cross-section checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.operator()?;
        self.flavors()?;
        self.solver()?;
        self.net()?;
        self.mollifier_ps()?;
        self.mass.validate(grid.dim())?;
        if !(self.solve.epsilon > 0.0 && self.solve.epsilon <= 1.0) {
            return Err(Error::Config(format!("solve.epsilon must lie in (0, 1], got {}", self.solve.epsilon)));
        }
        if self.consistency.spatial_factor == 0 || self.consistency.temporal_factor == 0 {
            return Err(Error::Config("consistency factors must be positive".into()));
        }
        Ok(())
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(overrides: &[&str]) -> Result<LoadedConfig> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        LoadedConfig::from_str_with(DEFAULT_CONFIG, &o)
    }

    #[test]
    fn default_config_is_valid() {
        let c = load(&[]).unwrap();
        assert_eq!(c.config.net.n, 12);
        assert_eq!(c.config.time_step().unwrap(), TimeStep::Auto);
        assert_eq!(c.config.flavors().unwrap(), vec![EstimateFlavor::Prop31]);
        assert_eq!(c.hash.len(), 64);
        assert_eq!(c.hash, load(&[]).unwrap().hash);
    }

    #[test]
    fn overrides_merge_and_change_hash() {
        let base = load(&[]).unwrap();
        let c = load(&["time.t_final=2.5", "mass.weight = 3", "data.preset=plane_wave", "data.mode=[2]"]).unwrap();
        assert_eq!(c.config.time.t_final, 2.5);
        assert_eq!(c.config.mass, MassSpec::DiracDelta { weight: 3.0 });
        assert_eq!(c.config.data, DataPreset::PlaneWave { mode: vec![2] });
        assert_ne!(c.hash, base.hash);
        let fixed = load(&["time.dt=0.01"]).unwrap();
        assert_eq!(fixed.config.time_step().unwrap(), TimeStep::Fixed(0.01));
        let bare = load(&["output.dir=some/where"]).unwrap();
        assert_eq!(bare.config.output.dir, PathBuf::from("some/where"));
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            &["time.dt=-1"][..],
            &["operator.exponents=[2]", "operator.nu=2"][..],
            &["net.n=3"][..],
            &["net.eps0=2"][..],
            &["operator.estimate=prop32"][..],
            &["grid.counts=[255]"][..],
            &["structure.weights=[\"1/0\"]"][..],
            &["mass.kind=unknown"][..],
            &["nonsense"][..],
            &["time.stride=0"][..],
        ] {
            assert!(matches!(load(bad), Err(Error::Config(_))), "{bad:?}");
        }
        let e = LoadedConfig::from_str_with("[structure]\nweights = [1\n", &[]).unwrap_err();
        assert!(e.to_string().contains("line"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn nu_and_critical_condition() {
        let c = load(&["structure.weights=[1, \"1/2\"]", "grid.extents=[10.0, 10.0]", "grid.counts=[32, 32]",
            "operator.exponents=[1, 2]", "operator.nu=2", "mass.kind=zero"]).unwrap();
        assert_eq!(c.config.structure().unwrap().q(), 1.5);
        // On the line Q = 1 > nu s = 0.8 for s = 0.4 admits the critical-Lebesgue flavor.
        let sub = load(&["operator.s=0.4", "operator.estimate=prop32"]).unwrap();
        assert_eq!(sub.config.flavors().unwrap(), vec![EstimateFlavor::Prop32]);
        let msg = load(&["operator.estimate=prop32"]).unwrap_err().to_string();
        assert!(msg.contains("Q > nu s"), "{msg}");
    }
}
