//! Scenario configuration files, trajectory archives, CSV series and JSON
//! reports. Every output carries the resolved config, the code version and
//! the seed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{HeadEnsemble, TokenCloud};
use crate::diagnostics::LedgerConfig;
use crate::dynamics::{default_stride, Trajectory, UpdateOrder};
use crate::error::{Error, Result};
use crate::experiments::Scenario;
use crate::jko::{Coupling, JkoConfig, MobilityMode};
use crate::linalg::SymMatrix;
use crate::scalar::Scalar;
use crate::weights::{HeadLaw, WeightProcessSpec};

/// Crate version embedded in every output.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// First 16 bytes of a trajectory archive.
pub const ARCHIVE_MAGIC: [u8; 16] = *b"MFATTN\0TRAJv1\0\0\0";

/// A scenario file: TOML with the sections below. Unknown keys are errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub weights: WeightsSection,
    #[serde(default)]
    pub ledger: LedgerConfig,
    #[serde(default)]
    pub jko: JkoSection,
    #[serde(default)]
    pub gronwall: GronwallSection,
    #[serde(default)]
    pub stability: StabilitySection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(default = "default_name")]
    pub name: String,
    pub n: usize,
    #[serde(default = "default_dim")]
    pub d: usize,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(rename = "H_list", default, skip_serializing_if = "Option::is_none")]
    pub head_list: Option<Vec<usize>>,
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(rename = "N_MC", default = "default_n_mc")]
    pub n_mc: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub update_order: UpdateOrder,
    #[serde(default)]
    pub g2_weighted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<usize>,
    #[serde(default = "default_window")]
    pub average_window: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_times: Option<Vec<f64>>,
    /// Entrywise variance of the initial weights around zero.
    #[serde(default = "one")]
    pub init_var: f64,
    /// Bootstrap resamples for the SE of time-averaged `G²`; 0 disables.
    #[serde(default)]
    pub bootstrap: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    #[default]
    Ou,
    Oscillating,
    Frozen,
}

/// `"identity"`, `"zero"`, `"scalar:<c>"` or explicit rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Named(String),
    Rows(Vec<Vec<f64>>),
}

impl Default for MatrixSpec {
    fn default() -> Self {
        Self::Named("identity".into())
    }
}

impl MatrixSpec {
    pub fn build(&self, dim: usize) -> std::result::Result<SymMatrix<f64>, String> {
        let m = match self {
            Self::Named(name) => match name.as_str() {
                "identity" => SymMatrix::identity(dim),
                "zero" => SymMatrix::zeros(dim),
                other => {
                    let c = other
                        .strip_prefix("scalar:")
                        .and_then(|c| c.trim().parse::<f64>().ok())
                        .ok_or_else(|| format!("unknown matrix `{other}` (identity, zero, scalar:<c> or rows)"))?;
                    SymMatrix::scalar(dim, c)
                }
            },
            Self::Rows(rows) => SymMatrix::from_rows(rows).map_err(|e| e.to_string())?,
        };
        if m.dim() != dim {
            return Err(format!("is {0}×{0}, expected {dim}×{dim}", m.dim()));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    #[serde(default)]
    pub kind: ProcessKind,
    #[serde(rename = "F", default)]
    pub target: MatrixSpec,
    #[serde(default = "one")]
    pub sigma2: f64,
    #[serde(default = "yes")]
    pub phase_spread: bool,
}

impl Default for WeightsSection {
    fn default() -> Self {
        Self {
            kind: ProcessKind::Ou,
            target: MatrixSpec::default(),
            sigma2: 1.0,
            phase_spread: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JkoSection {
    pub tau_list: Vec<f64>,
    pub ref_dt: f64,
    pub inner_iters: usize,
    /// Inner step size as a multiple of `τ`.
    pub inner_lr_factor: f64,
    pub mobility_mode: MobilityMode,
    pub coupling: Coupling,
}

impl Default for JkoSection {
    fn default() -> Self {
        Self {
            tau_list: vec![0.1, 0.05, 0.025],
            ref_dt: 1e-4,
            inner_iters: 50,
            inner_lr_factor: 0.5,
            mobility_mode: MobilityMode::Constant,
            coupling: Coupling::Identity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GronwallSection {
    pub eta_list: Vec<f64>,
    pub early_time: f64,
}

impl Default for GronwallSection {
    fn default() -> Self {
        Self {
            eta_list: vec![1e-3, 1e-2, 1e-1],
            early_time: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    #[serde(rename = "H_list")]
    pub head_list: Vec<usize>,
    #[serde(rename = "reference_H")]
    pub reference_heads: usize,
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self {
            head_list: vec![1, 4, 16, 64],
            reference_heads: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

fn default_name() -> String {
    "scenario".into()
}
fn default_dim() -> usize {
    3
}
fn default_n_mc() -> usize {
    1
}
fn default_window() -> [f64; 2] {
    [0.0, 1.0]
}
fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

fn value_error(field: &str, reason: impl Into<String>) -> Error {
    Error::ConfigValue {
        field: field.into(),
        reason: reason.into(),
    }
}

fn parse_error(text: &str, err: &toml::de::Error) -> Error {
    let offset = err.span().map_or(0, |s| s.start).min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    Error::ConfigParse {
        line,
        column,
        message: err.message().trim().to_string(),
    }
}

impl ScenarioConfig {
    /// Parses and validates a config; defaults are filled in.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides(text, &[])
    }

    /// Parses `text`, applies `key.path=value` overrides, then validates.
    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let parsed: Self = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
        if overrides.is_empty() {
            return parsed.resolve();
        }
        let mut table: toml::Table = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let keys = overrides.iter().map(|o| o.split('=').next().unwrap_or("").trim()).collect::<Vec<_>>();
        let merged: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| value_error(&keys.join(","), e.message().trim()))?;
        merged.resolve()
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        Self::parse_with_overrides(&fs::read_to_string(path)?, overrides)
    }

    /// The resolved config as TOML; parsing it yields `self` again.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Head counts of the sweep.
    pub fn heads(&self) -> Vec<usize> {
        match (&self.scenario.head_list, self.scenario.heads) {
            (Some(list), _) => list.clone(),
            (None, Some(h)) => vec![h],
            (None, None) => Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.scenario.seed
    }

    pub fn process(&self) -> Result<WeightProcessSpec<f64>> {
        let w = &self.weights;
        let spec = match w.kind {
            ProcessKind::Ou => {
                let f = w.target.build(self.scenario.d).map_err(|r| value_error("weights.F", r))?;
                WeightProcessSpec::ou(f, w.sigma2)
            }
            ProcessKind::Oscillating => WeightProcessSpec::oscillating(w.phase_spread, w.sigma2),
            ProcessKind::Frozen => Ok(WeightProcessSpec::Frozen),
        };
        spec.map_err(|e| value_error("weights.sigma2", e.to_string()))
    }

    pub fn to_scenario(&self) -> Result<Scenario<f64>> {
        let s = &self.scenario;
        Ok(Scenario {
            name: s.name.clone(),
            n: s.n,
            dim: s.d,
            dt: s.dt,
            t_final: s.t_final,
            record_stride: s.record_stride.unwrap_or_else(|| default_stride(s.dt)),
            update_order: s.update_order,
            process: self.process()?,
            initial_law: HeadLaw::isotropic(SymMatrix::zeros(s.d), s.init_var),
            seed: s.seed,
            n_mc: s.n_mc,
            ledger: self.ledger,
            g2_weighted: s.g2_weighted,
            average_window: (s.average_window[0], s.average_window[1]),
            snapshot_times: s.snapshot_times.clone().unwrap_or_else(|| vec![0.0, s.t_final]),
            bootstrap: s.bootstrap,
        })
    }

    /// JKO settings for step size `tau`.
    pub fn jko_config(&self, tau: f64) -> JkoConfig<f64> {
        JkoConfig {
            tau,
            inner_iters: self.jko.inner_iters,
            inner_lr: self.jko.inner_lr_factor * tau,
            coupling: self.jko.coupling,
            mobility_mode: self.jko.mobility_mode,
        }
    }

    fn resolve(mut self) -> Result<Self> {
        let s = &mut self.scenario;
        if s.record_stride.is_none() {
            s.record_stride = Some(default_stride(s.dt.max(f64::MIN_POSITIVE)));
        }
        if s.snapshot_times.is_none() {
            s.snapshot_times = Some(vec![0.0, s.t_final]);
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        let pos = |field: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(value_error(field, format!("must be positive and finite, got {v}")))
            }
        };
        if s.n == 0 {
            return Err(value_error("scenario.n", "must be >= 1"));
        }
        if s.d < 2 {
            return Err(value_error("scenario.d", format!("must be >= 2, got {}", s.d)));
        }
        pos("scenario.dt", s.dt)?;
        pos("scenario.T", s.t_final)?;
        let steps = (s.t_final / s.dt).round();
        if steps < 1.0 || (steps * s.dt - s.t_final).abs() > 1e-9 * s.t_final {
            return Err(value_error("scenario.T", format!("{} is not a whole number of steps of dt = {}", s.t_final, s.dt)));
        }
        if s.n_mc == 0 {
            return Err(value_error("scenario.N_MC", "must be >= 1"));
        }
        match (s.heads, &s.head_list) {
            (Some(_), Some(_)) => return Err(value_error("scenario.H", "give either H or H_list, not both")),
            (None, None) => return Err(value_error("scenario.H", "missing; give H or H_list")),
            (Some(0), _) => return Err(value_error("scenario.H", "must be >= 1")),
            (_, Some(list)) if list.is_empty() || list.contains(&0) => {
                return Err(value_error("scenario.H_list", "needs at least one entry, all >= 1"));
            }
            _ => {}
        }
        if s.record_stride == Some(0) {
            return Err(value_error("scenario.record_stride", "must be >= 1"));
        }
        let [a, b] = s.average_window;
        if !(0.0 <= a && a < b && b <= 1.0) {
            return Err(value_error("scenario.average_window", "need 0 <= start < end <= 1"));
        }
        if let Some(bad) = s
            .snapshot_times
            .iter()
            .flatten()
            .find(|t| !(**t >= 0.0 && **t <= s.t_final))
        {
            return Err(value_error("scenario.snapshot_times", format!("{bad} is outside [0, T]")));
        }
        if !(s.init_var >= 0.0 && s.init_var.is_finite()) {
            return Err(value_error("scenario.init_var", "must be >= 0"));
        }
        let w = &self.weights;
        if !(w.sigma2 >= 0.0 && w.sigma2.is_finite()) {
            return Err(value_error("weights.sigma2", format!("must be >= 0, got {}", w.sigma2)));
        }
        if w.kind == ProcessKind::Oscillating && s.d != 3 {
            return Err(value_error("weights.kind", format!("oscillating targets need d = 3, got {}", s.d)));
        }
        self.process()?;
        let j = &self.jko;
        if j.tau_list.is_empty() {
            return Err(value_error("jko.tau_list", "needs at least one entry"));
        }
        for t in &j.tau_list {
            pos("jko.tau_list", *t)?;
        }
        pos("jko.ref_dt", j.ref_dt)?;
        pos("jko.inner_lr_factor", j.inner_lr_factor)?;
        if j.inner_iters == 0 {
            return Err(value_error("jko.inner_iters", "must be >= 1"));
        }
        let g = &self.gronwall;
        if let Some(bad) = g.eta_list.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return Err(value_error("gronwall.eta_list", format!("{bad} is not >= 0")));
        }
        pos("gronwall.early_time", g.early_time)?;
        let st = &self.stability;
        if st.reference_heads == 0 {
            return Err(value_error("stability.reference_H", "must be >= 1"));
        }
        if st.head_list.is_empty() || st.head_list.iter().any(|h| *h == 0 || *h > st.reference_heads) {
            return Err(value_error(
                "stability.H_list",
                format!("entries must lie in 1..={}", st.reference_heads),
            ));
        }
        Ok(())
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| value_error(item, "override must look like section.key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(value_error(key, "empty key segment"));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| value_error(key, format!("`{p}` is not a section")))?;
    }
    // Setting one of H / H_list replaces the other.
    if parents == ["scenario"] {
        match *last {
            "H" => {
                cur.remove("H_list");
            }
            "H_list" => {
                cur.remove("H");
            }
            _ => {}
        }
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Version, seed and resolved config of one output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub seed: u64,
    pub config: String,
}

impl Provenance {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        Self {
            version: VERSION.into(),
            seed: cfg.seed(),
            config: cfg.to_toml(),
        }
    }

    /// Re-parses the embedded config.
    pub fn scenario_config(&self) -> Result<ScenarioConfig> {
        ScenarioConfig::parse(&self.config)
    }

    fn comment_block(&self) -> String {
        let mut out = format!("# version: {}\n# seed: {}\n# config:\n", self.version, self.seed);
        for line in self.config.lines() {
            if line.is_empty() {
                out.push_str("#\n");
            } else {
                out.push_str("# ");
                out.push_str(line);
                out.push('\n');
            }
        }
        out
    }

    fn from_comment_block(text: &str) -> Result<Self> {
        let mut lines = text.lines().map_while(|l| l.strip_prefix('#'));
        let mut field = |name: &str| -> Result<String> {
            lines
                .next()
                .and_then(|l| l.trim().strip_prefix(name))
                .map(|v| v.trim().to_string())
                .ok_or_else(|| Error::Series(format!("missing `# {name}` provenance line")))
        };
        let version = field("version:")?;
        let seed = field("seed:")?
            .parse()
            .map_err(|_| Error::Series("seed is not an integer".into()))?;
        field("config:")?;
        let mut config = String::new();
        for l in lines {
            config.push_str(l.strip_prefix(' ').unwrap_or(l));
            config.push('\n');
        }
        Ok(Self { version, seed, config })
    }
}

/// Shortest round-trip text of `x`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Writes a CSV preceded by `#` provenance lines.
pub fn write_csv(path: &Path, prov: &Provenance, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = prov.comment_block().into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// A CSV written by [`write_csv`].
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub provenance: Provenance,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let provenance = Provenance::from_comment_block(&text)?;
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self {
            provenance,
            header,
            rows,
        })
    }

    /// Column `name` parsed as floats.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Series(format!("no column `{name}` (have {})", self.header.join(", "))))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.get(k)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Series(format!("row {}: `{name}` is not a number", i + 1)))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct ReportOut<'a, R> {
    #[serde(flatten)]
    provenance: &'a Provenance,
    kind: &'a str,
    result: &'a R,
}

/// Pretty JSON `{version, seed, config, kind, result}`.
pub fn report_json<R: Serialize>(prov: &Provenance, kind: &str, result: &R) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&ReportOut {
        provenance: prov,
        kind,
        result,
    })?;
    s.push('\n');
    Ok(s)
}

pub fn write_report<R: Serialize>(path: &Path, prov: &Provenance, kind: &str, result: &R) -> Result<()> {
    fs::write(path, report_json(prov, kind, result)?)?;
    Ok(())
}

/// Provenance of a report written by [`write_report`].
pub fn read_report_provenance(path: &Path) -> Result<Provenance> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Binary trajectory archive: magic, then little-endian `u64` fields
/// `n, d, H, snapshots, record_stride`, `f64` `dt`, `u64` provenance length
/// and provenance JSON; then per snapshot `u64` step, `f64` time, `n·d`
/// coordinates and `H·d·d` weight entries (row-major), all `f64`.
pub fn encode_archive<T: Scalar>(prov: &Provenance, traj: &Trajectory<T>) -> Result<Vec<u8>> {
    let first = traj
        .clouds
        .first()
        .ok_or_else(|| Error::Archive("trajectory has no snapshots".into()))?;
    let (n, d, h) = (first.len(), first.dim(), traj.ensembles[0].len());
    let meta = serde_json::to_vec(prov)?;
    let per = 16 + 8 * (n * d + h * d * d);
    let mut out = Vec::with_capacity(16 + 56 + meta.len() + per * traj.len());
    out.extend_from_slice(&ARCHIVE_MAGIC);
    for v in [n, d, h, traj.len(), traj.record_stride] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&traj.dt.as_f64().to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    for k in 0..traj.len() {
        let (cloud, ens) = (&traj.clouds[k], &traj.ensembles[k]);
        if cloud.len() != n || cloud.dim() != d || ens.len() != h {
            return Err(Error::Archive(format!("snapshot {k} changes shape")));
        }
        out.extend_from_slice(&(traj.steps[k] as u64).to_le_bytes());
        out.extend_from_slice(&traj.times[k].as_f64().to_le_bytes());
        for x in cloud.as_flat() {
            out.extend_from_slice(&x.as_f64().to_le_bytes());
        }
        for m in ens.heads() {
            for x in m.as_slice() {
                out.extend_from_slice(&x.as_f64().to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, len: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(len).filter(|e| *e <= self.bytes.len()).ok_or_else(|| {
            Error::Archive(format!("truncated: need {len} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Archive("size field overflows".into()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count.checked_mul(8).ok_or_else(|| Error::Archive("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_archive(bytes: &[u8]) -> Result<(Provenance, Trajectory<f64>)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(16)? != ARCHIVE_MAGIC {
        return Err(Error::Archive("bad magic".into()));
    }
    let (n, d, h, count, stride) = (c.usize()?, c.usize()?, c.usize()?, c.usize()?, c.usize()?);
    let dt = c.f64s(1)?[0];
    let meta_len = c.usize()?;
    let prov: Provenance = serde_json::from_slice(c.take(meta_len)?)?;
    let mut traj = Trajectory::new(dt, stride);
    for _ in 0..count {
        let step = c.usize()?;
        let t = c.f64s(1)?[0];
        let cloud = TokenCloud::from_flat(d, c.f64s(n * d)?).map_err(|e| Error::Archive(e.to_string()))?;
        let heads = (0..h)
            .map(|_| SymMatrix::from_row_major(d, c.f64s(d * d)?))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Archive(e.to_string()))?;
        traj.push(step, t, &cloud, &HeadEnsemble::new(heads)?);
    }
    if c.pos != bytes.len() {
        return Err(Error::Archive(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok((prov, traj))
}

pub fn write_archive<T: Scalar>(path: &Path, prov: &Provenance, traj: &Trajectory<T>) -> Result<()> {
    fs::write(path, encode_archive(prov, traj)?)?;
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<(Provenance, Trajectory<f64>)> {
    decode_archive(&fs::read(path)?)
}
