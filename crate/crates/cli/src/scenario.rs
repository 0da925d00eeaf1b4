use crate::ops::{self, Context, StepOutcome};
use bjl_core::RadiusProfile;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const TOL_SCALE_VAR: &str = "BJL_TOL_SCALE";

#[derive(Debug)]
pub enum HarnessError {
    /// Malformed scenario: unknown operation, bad parameters, unreadable domain.
    Schema(String),
    Io(std::io::Error),
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Schema(m) => write!(f, "scenario schema violation: {m}"),
            HarnessError::Io(e) => write!(f, "i/o failure: {e}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e)
    }
}

pub fn schema(msg: impl Into<String>) -> HarnessError {
    HarnessError::Schema(msg.into())
}

/// Where a domain comes from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainSpec {
    /// `ρ(θ) = ρ̄ (1 + Σ a_k cos kθ + b_k sin kθ)`, entries `[k, a_k, b_k]`.
    Harmonics { harmonics: Vec<(u32, f64, f64)> },
    EllipseLike { ellipse_like: f64 },
    Circle { circle: bool },
    File { file: PathBuf },
    Profile(RadiusProfile),
}

impl DomainSpec {
    pub fn load(&self, base: &Path) -> Result<RadiusProfile, HarnessError> {
        match self {
            DomainSpec::Harmonics { harmonics } => Ok(RadiusProfile::from_relative_harmonics(harmonics)),
            DomainSpec::EllipseLike { ellipse_like } => Ok(RadiusProfile::ellipse_like(*ellipse_like)),
            DomainSpec::Circle { .. } => Ok(RadiusProfile::circle()),
            DomainSpec::File { file } => load_domain_file(&base.join(file)),
            DomainSpec::Profile(p) => Ok(p.clone()),
        }
    }
}

pub fn load_domain_file(path: &Path) -> Result<RadiusProfile, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| schema(format!("cannot read domain {}: {e}", path.display())))?;
    if let Ok(p) = RadiusProfile::from_json(&text) {
        return Ok(p);
    }
    let spec: DomainSpec =
        serde_json::from_str(&text).map_err(|e| schema(format!("domain {} is not a profile or domain spec: {e}", path.display())))?;
    if let DomainSpec::File { .. } = spec {
        return Err(schema("domain files may not point to other files"));
    }
    spec.load(path.parent().unwrap_or(Path::new(".")))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Step {
    pub op: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    #[serde(default)]
    pub pipeline: Vec<Step>,
    /// Overrides of named tolerances, applied to every step.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        for (i, step) in self.pipeline.iter().enumerate() {
            if !ops::OPERATIONS.contains(&step.op.as_str()) {
                return Err(schema(format!("step {i}: unknown operation '{}'", step.op)));
            }
            if !(step.params.is_null() || step.params.is_object()) {
                return Err(schema(format!("step {i} ({}): params must be an object", step.op)));
            }
        }
        for (k, v) in &self.tolerances {
            if !(v.is_finite() && *v > 0.0) {
                return Err(schema(format!("tolerance '{k}' must be positive and finite")));
            }
        }
        Ok(())
    }
}

/// How a measured value is compared against its tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
    Within(f64, f64),
}

impl Bound {
    pub fn holds(&self, x: f64) -> bool {
        match *self {
            Bound::AtMost(t) => x <= t,
            Bound::AtLeast(t) => x >= t,
            Bound::Within(lo, hi) => x >= lo && x <= hi,
        }
    }

    /// Loosens (`scale > 1`) or tightens the bound.
    pub fn scaled(&self, scale: f64) -> Bound {
        match *self {
            Bound::AtMost(t) => Bound::AtMost(t * scale),
            Bound::AtLeast(t) => Bound::AtLeast(t / scale),
            Bound::Within(lo, hi) => {
                let (m, h) = (0.5 * (lo + hi), 0.5 * (hi - lo) * scale);
                Bound::Within(m - h, m + h)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub bound: Bound,
    pub oracle: String,
    pub passed: bool,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = match self.bound {
            Bound::AtMost(t) => format!("<= {t:e}"),
            Bound::AtLeast(t) => format!(">= {t:e}"),
            Bound::Within(lo, hi) => format!("in [{lo}, {hi}]"),
        };
        write!(f, "{}: measured {:e}, required {b} ({})", self.name, self.measured, self.oracle)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepReport {
    pub index: usize,
    pub op: String,
    pub status: Status,
    pub checks: Vec<Check>,
    pub values: Value,
    pub artifacts: Vec<String>,
    /// Failing checks and errors, each naming the operation.
    pub failures: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub domain_hash: Option<String>,
    pub seed: u64,
    pub tolerance_scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub passed: bool,
    pub steps: Vec<StepReport>,
    pub provenance: Provenance,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Record wall-clock time per step; off for byte-identical reports.
    pub timing: bool,
    pub tolerance_scale: f64,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { timing: false, tolerance_scale: 1.0, output_dir: None }
    }
}

/// Tolerance multiplier from the environment; 1 when unset.
pub fn env_tolerance_scale() -> Result<f64, HarnessError> {
    match std::env::var(TOL_SCALE_VAR) {
        Err(_) => Ok(1.0),
        Ok(v) => match v.trim().parse::<f64>() {
            Ok(x) if x.is_finite() && x > 0.0 => Ok(x),
            _ => Err(schema(format!("{TOL_SCALE_VAR} must be a positive number, got '{v}'"))),
        },
    }
}

pub fn domain_hash(p: &RadiusProfile) -> String {
    let bytes = serde_json::to_vec(p).expect("profile serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads a scenario file and runs it; artifacts and `report.json` go to
/// `opts.output_dir` when given.
pub fn run_scenario(path: &Path, opts: &RunOptions) -> Result<Report, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| schema(format!("cannot read scenario {}: {e}", path.display())))?;
    let scenario = Scenario::from_json(&text)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    run(&scenario, &base, opts)
}

pub fn run(scenario: &Scenario, base: &Path, opts: &RunOptions) -> Result<Report, HarnessError> {
    scenario.validate()?;
    let domain = match &scenario.domain {
        Some(spec) => Some(spec.load(base)?),
        None => None,
    };
    if let Some(dir) = &opts.output_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut steps = vec![];
    for (index, step) in scenario.pipeline.iter().enumerate() {
        let ctx = Context {
            domain: domain.as_ref(),
            base,
            tolerances: &scenario.tolerances,
            scale: opts.tolerance_scale,
            seed: scenario.seed.wrapping_add(index as u64),
            output_dir: opts.output_dir.as_deref(),
            prefix: format!("{index:02}_{}", step.op),
        };
        let start = Instant::now();
        let outcome = ops::run_op(&step.op, &step.params, &ctx);
        let seconds = opts.timing.then(|| start.elapsed().as_secs_f64());
        steps.push(step_report(index, &step.op, outcome, seconds)?);
    }
    let report = Report {
        scenario: scenario.name.clone(),
        passed: steps.iter().all(|s| s.status == Status::Pass),
        steps,
        provenance: Provenance {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            domain_hash: domain.as_ref().map(domain_hash),
            seed: scenario.seed,
            tolerance_scale: opts.tolerance_scale,
        },
    };
    if let Some(dir) = &opts.output_dir {
        std::fs::write(dir.join("report.json"), report.to_json())?;
    }
    Ok(report)
}

fn step_report(
    index: usize,
    op: &str,
    outcome: Result<StepOutcome, ops::OpError>,
    seconds: Option<f64>,
) -> Result<StepReport, HarnessError> {
    match outcome {
        Ok(o) => {
            let failures: Vec<String> = o.checks.iter().filter(|c| !c.passed).map(|c| format!("{op}: {c}")).collect();
            Ok(StepReport {
                index,
                op: op.into(),
                status: if failures.is_empty() { Status::Pass } else { Status::Fail },
                checks: o.checks,
                values: o.values,
                artifacts: o.artifacts,
                failures,
                seconds,
            })
        }
        Err(ops::OpError::Schema(m)) => Err(schema(format!("step {index} ({op}): {m}"))),
        Err(ops::OpError::Io(e)) => Err(HarnessError::Io(e)),
        Err(ops::OpError::Numeric(e)) => Ok(StepReport {
            index,
            op: op.into(),
            status: Status::Error,
            checks: vec![],
            values: Value::Null,
            artifacts: vec![],
            failures: vec![format!("{op}: {e}")],
            seconds,
        }),
    }
}

/// Operations backing the twelve acceptance criteria, in order.
pub const ACCEPTANCE_OPS: [&str; 12] = [
    "circle_suite",
    "area_twist",
    "jet_fd",
    "slope_law",
    "m_determinant",
    "independence",
    "phi_recovery",
    "rotation",
    "lift_scaling",
    "length_identities",
    "lazutkin",
    "tangency_family",
];

pub fn acceptance_scenario() -> Scenario {
    Scenario {
        name: "acceptance".into(),
        domain: None,
        pipeline: ACCEPTANCE_OPS.iter().map(|op| Step { op: (*op).into(), params: Value::Null }).collect(),
        tolerances: BTreeMap::new(),
        seed: 0,
    }
}
