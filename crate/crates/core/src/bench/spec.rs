use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::BenchError;
use crate::orchestrator::DeploymentPlan;

/// One sweep point: a label, its x coordinate and the plan fields it sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPoint {
    pub label: String,
    pub x: f64,
    /// Dotted plan paths to values, e.g. `"workload.payload_bytes_per_rank"`.
    #[serde(default)]
    pub set: serde_json::Map<String, Value>,
    /// Extra overrides applied under `--paper-scale`.
    #[serde(default)]
    pub paper_set: serde_json::Map<String, Value>,
}

/// A model blob the bench writes before the sweep starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelGen {
    pub file: String,
    /// Layer widths, input first; one entry writes an identity model.
    pub dims: Vec<u32>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Mean seconds per call, pooled over the listed components.
    #[default]
    OpMean,
    /// Mean across ranks of each rank's total seconds in the listed components.
    RankTotal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Operand {
    pub point: String,
    pub component: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckKind {
    /// Every run exited cleanly, left no processes behind and wrote the
    /// expected number of rows.
    CleanTeardown,
    /// Co-located runs kept every key on its owner's node.
    Locality,
    /// `t(small) >= factor * t(large) / size_ratio`.
    SmallMessageFloor {
        small: String,
        large: String,
        size_ratio: f64,
        factor: f64,
    },
    /// Metric non-decreasing along the sweep, tolerating a few small dips.
    Monotone {
        max_inversions: usize,
        inversion_tolerance: f64,
    },
    /// `t(reference) / t(target) >= min`.
    MinEfficiency {
        reference: String,
        target: String,
        min: f64,
    },
    /// `t(numerator) / t(denominator) >= min`.
    MinRatio {
        numerator: String,
        denominator: String,
        min: f64,
    },
    /// `(max - min) / min <= max` over the listed points.
    MaxSpread { points: Vec<String>, max: f64 },
    /// Metric strictly decreasing along the listed points, each carrying at
    /// least `min_payload_bytes` per rank.
    StrictlyDecreasing {
        points: Vec<String>,
        #[serde(default)]
        min_payload_bytes: u64,
    },
    /// `|sum(parts) - total| <= tolerance * total` on per-call means.
    SumOfParts {
        parts: Vec<String>,
        total: String,
        tolerance: f64,
        #[serde(default)]
        points: Vec<String>,
    },
    /// `lhs <= rhs` on per-call means.
    AtMost { lhs: Operand, rhs: Operand },
    /// Repetition means differ by at most `max` relative to their minimum.
    Reproducible { max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub name: String,
    pub rule: CheckKind,
    /// Components the metric pools; empty means the experiment's components.
    #[serde(default)]
    pub components: Vec<String>,
    #[serde(default)]
    pub metric: Metric,
    /// Reported but never fails the experiment.
    #[serde(default)]
    pub advisory: bool,
}

fn one() -> u32 {
    1
}
fn default_timeout() -> u64 {
    600
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    pub x_label: String,
    #[serde(default)]
    pub log_x: bool,
    #[serde(default)]
    pub log_y: bool,
    #[serde(default = "one")]
    pub repetitions: u32,
    /// Per-run timeout.
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Components tabulated and plotted.
    pub components: Vec<String>,
    #[serde(default)]
    pub models: Vec<ModelGen>,
    pub plan: Value,
    #[serde(default)]
    pub paper_set: serde_json::Map<String, Value>,
    pub points: Vec<SweepPoint>,
    #[serde(default)]
    pub checks: Vec<Check>,
}

const BUILTIN: [(&str, &str); 7] = [
    ("E1", include_str!("../../../../experiments/E1.json")),
    ("E2", include_str!("../../../../experiments/E2.json")),
    ("E3", include_str!("../../../../experiments/E3.json")),
    ("E4", include_str!("../../../../experiments/E4.json")),
    ("E5", include_str!("../../../../experiments/E5.json")),
    ("E6", include_str!("../../../../experiments/E6.json")),
    ("E7", include_str!("../../../../experiments/E7.json")),
];

pub fn builtin_ids() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(id, _)| *id)
}

/// The experiment shipped with the crate under `id` (case-insensitive).
pub fn builtin_spec(id: &str) -> Result<ExperimentSpec, BenchError> {
    let (name, text) = BUILTIN
        .iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(id))
        .ok_or_else(|| BenchError::Spec(format!("unknown experiment {id}")))?;
    ExperimentSpec::from_json(text, name)
}

/// Writes `value` at a dotted path, creating objects along the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), BenchError> {
    let mut cur = root;
    let mut parts = path.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| BenchError::Spec(format!("{path}: `{part}` is not inside an object")))?;
        if parts.peek().is_none() {
            obj.insert(part.to_owned(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_owned())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(BenchError::Spec("empty path".into()))
}

impl ExperimentSpec {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, BenchError> {
        let spec: ExperimentSpec = serde_json::from_str(text)
            .map_err(|e| BenchError::Spec(format!("{origin}: line {}: {e}", e.line())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
        ExperimentSpec::from_json(&text, &path.display().to_string())
    }

    pub fn point(&self, label: &str) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.label == label)
    }

    /// The plan for `point`; relative model paths resolve against `model_dir`.
    pub fn expand(
        &self,
        point: &SweepPoint,
        paper_scale: bool,
        model_dir: &Path,
    ) -> Result<DeploymentPlan, BenchError> {
        let mut plan = self.plan.clone();
        let mut sets: Vec<(&String, &Value)> = point.set.iter().collect();
        if paper_scale {
            sets.extend(&self.paper_set);
            sets.extend(&point.paper_set);
        }
        for (path, value) in sets {
            set_path(&mut plan, path, value.clone())?;
        }
        if let Some(Value::String(m)) = plan.pointer("/workload/model_file").cloned() {
            if Path::new(&m).is_relative() {
                let abs = model_dir.join(m).display().to_string();
                set_path(&mut plan, "workload.model_file", abs.into())?;
            }
        }
        let plan: DeploymentPlan = serde_json::from_value(plan)
            .map_err(|e| BenchError::Spec(format!("{} point {}: {e}", self.id, point.label)))?;
        Ok(plan)
    }

    /// Structural validation: every point expands, labels are unique and
    /// every check names existing points.
    pub fn validate(&self) -> Result<(), BenchError> {
        let err = |m: String| Err(BenchError::Spec(format!("{}: {m}", self.id)));
        if self.points.is_empty() {
            return err("no sweep points".into());
        }
        if self.repetitions == 0 {
            return err("repetitions must be >= 1".into());
        }
        for (i, p) in self.points.iter().enumerate() {
            if self.points[..i].iter().any(|q| q.label == p.label) {
                return err(format!("duplicate point label {}", p.label));
            }
            for full in [false, true] {
                self.expand(p, full, Path::new("/"))?
                    .validate()
                    .map_err(|e| BenchError::Spec(format!("{} point {}: {e}", self.id, p.label)))?;
            }
        }
        for c in &self.checks {
            for label in c.rule.point_labels() {
                if self.point(label).is_none() {
                    return err(format!("check {} names unknown point {label}", c.name));
                }
            }
        }
        Ok(())
    }
}

impl CheckKind {
    pub fn point_labels(&self) -> Vec<&str> {
        match self {
            CheckKind::SmallMessageFloor { small, large, .. } => vec![small, large],
            CheckKind::MinEfficiency { reference, target, .. } => vec![reference, target],
            CheckKind::MinRatio {
                numerator,
                denominator,
                ..
            } => vec![numerator, denominator],
            CheckKind::MaxSpread { points, .. }
            | CheckKind::StrictlyDecreasing { points, .. }
            | CheckKind::SumOfParts { points, .. } => points.iter().map(String::as_str).collect(),
            CheckKind::AtMost { lhs, rhs } => vec![&lhs.point, &rhs.point],
            _ => Vec::new(),
        }
    }
}
