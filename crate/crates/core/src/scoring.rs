//! Normalizing metric values and aggregating them into benchmark scores.
//!
//! Three schemes are computed side by side: a weighted sum of normalized
//! metrics, a weighted count of threshold violations, and a lexicographic
//! hierarchy of metric groups.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::metrics::{MetricSet, MetricValue};
use crate::ValidationError;

const BUILTIN_REGISTRY: &str = include_str!("../data/registry.json");
const DEFAULT_POLICY: &str = include_str!("../data/default_policy.json");

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScoringError {
    #[error("metric `{0}` is not in the registry")]
    UnknownMetric(String),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerBetter,
    HigherBetter,
    /// A 0/1 flag where 1 is a violation.
    BooleanViolation,
    /// A ratio whose ideal value is 1.
    TargetOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricGroup {
    Safety,
    Rule,
    Comfort,
    Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    pub direction: Direction,
    pub scale: f64,
    pub group: MetricGroup,
    /// Counts towards the similarity-to-expert score.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub similarity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Registry {
    pub version: String,
    pub metrics: BTreeMap<String, MetricSpec>,
}

impl Registry {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_REGISTRY).expect("builtin registry is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, ValidationError> {
        let r: Registry = serde_json::from_str(text).map_err(|e| ValidationError::new(format!("registry: {e}")))?;
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        for (name, m) in &self.metrics {
            if !(m.scale.is_finite() && m.scale > 0.0) {
                return Err(ValidationError::new(format!("registry: scale of {name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn spec(&self, name: &str) -> Result<&MetricSpec, ScoringError> {
        self.metrics.get(name).ok_or_else(|| ScoringError::UnknownMetric(name.to_string()))
    }

    /// Maps a metric onto [0, 1], 1 being best. Absent values stay absent.
    pub fn normalize(&self, name: &str, metric: &MetricValue) -> Result<Option<f64>, ScoringError> {
        let spec = self.spec(name)?;
        Ok(metric.value.map(|v| normalize_value(spec, v)))
    }

    /// Whether a value is on the wrong side of `threshold`.
    pub fn violates(&self, name: &str, value: f64, threshold: f64) -> Result<bool, ScoringError> {
        Ok(match self.spec(name)?.direction {
            Direction::LowerBetter | Direction::BooleanViolation => value > threshold,
            Direction::HigherBetter => value < threshold,
            Direction::TargetOne => (value - 1.0).abs() > threshold,
        })
    }

    /// Mean normalized value of the similarity metrics present in `metrics`.
    pub fn similarity_score(&self, metrics: &MetricSet) -> Option<f64> {
        let vals: Vec<f64> = self
            .metrics
            .iter()
            .filter(|(_, s)| s.similarity)
            .filter_map(|(n, s)| metrics.value(n).map(|v| normalize_value(s, v)))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

pub fn normalize_value(spec: &MetricSpec, v: f64) -> f64 {
    let s = spec.scale;
    let x = match spec.direction {
        Direction::LowerBetter => 1.0 - v / s,
        Direction::HigherBetter => v / s,
        Direction::BooleanViolation => {
            if v > 0.0 {
                0.0
            } else {
                1.0
            }
        }
        Direction::TargetOne => 1.0 - (v - 1.0).abs() / s,
    };
    x.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    WeightedSum,
    ThresholdViolations,
    Hierarchy,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::WeightedSum => "weighted_sum",
            PolicyKind::ThresholdViolations => "threshold_violations",
            PolicyKind::Hierarchy => "hierarchy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyLevel {
    pub name: String,
    pub metrics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringPolicy {
    /// The scheme used to rank planners; all three are always reported.
    pub kind: PolicyKind,
    pub weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub thresholds: BTreeMap<String, f64>,
    /// Levels from most to least important.
    pub hierarchy: Vec<HierarchyLevel>,
}

impl Default for ScoringPolicy {
    fn default() -> Self {
        Self::from_json(DEFAULT_POLICY).expect("default policy is valid")
    }
}

impl ScoringPolicy {
    pub fn from_json(text: &str) -> Result<Self, ValidationError> {
        serde_json::from_str(text).map_err(|e| ValidationError::new(format!("policy: {e}")))
    }

    pub fn with_kind(kind: PolicyKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self, registry: &Registry) -> Result<(), ScoringError> {
        let mut sum = 0.0;
        for (name, w) in &self.weights {
            registry.spec(name)?;
            if !(w.is_finite() && *w >= 0.0) {
                return Err(ValidationError::new(format!("policy: weight of {name} must be finite and non-negative")).into());
            }
            sum += w;
        }
        if sum <= 0.0 {
            return Err(ValidationError::new("policy: weights sum to zero").into());
        }
        for (name, t) in &self.thresholds {
            registry.spec(name)?;
            if !t.is_finite() {
                return Err(ValidationError::new(format!("policy: threshold of {name} must be finite")).into());
            }
        }
        if self.hierarchy.is_empty() {
            return Err(ValidationError::new("policy: hierarchy is empty").into());
        }
        let mut seen: Vec<&str> = Vec::new();
        for level in &self.hierarchy {
            for m in &level.metrics {
                registry.spec(m)?;
                if seen.contains(&m.as_str()) {
                    return Err(ValidationError::new(format!("policy: {m} appears in two hierarchy levels")).into());
                }
                seen.push(m);
            }
        }
        for (name, w) in &self.weights {
            if *w > 0.0 && !seen.contains(&name.as_str()) {
                return Err(ValidationError::new(format!("policy: hierarchy does not cover {name}")).into());
            }
        }
        Ok(())
    }
}

/// Metrics of one scenario run, as fed into aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMetrics {
    pub scenario_id: String,
    /// The planner failed; the scenario scores worst on every scheme.
    pub failed: bool,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioScore {
    pub scenario_id: String,
    pub failed: bool,
    pub weighted_sum: Option<f64>,
    pub threshold_violations: f64,
    pub hierarchy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelScore {
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub policy: PolicyKind,
    pub registry_version: String,
    pub scenarios: usize,
    pub failed: usize,
    pub weighted_sum: f64,
    pub threshold_violations: f64,
    pub hierarchy: Vec<LevelScore>,
    pub per_scenario: Vec<ScenarioScore>,
}

impl ScoreReport {
    pub fn hierarchy_tuple(&self) -> Vec<f64> {
        self.hierarchy.iter().map(|l| l.score).collect()
    }

    /// Orders two reports under this report's policy; `Greater` is better.
    pub fn compare(&self, other: &ScoreReport) -> Ordering {
        match self.policy {
            PolicyKind::WeightedSum => self.weighted_sum.total_cmp(&other.weighted_sum),
            PolicyKind::ThresholdViolations => other.threshold_violations.total_cmp(&self.threshold_violations),
            PolicyKind::Hierarchy => compare_hierarchy(&self.hierarchy_tuple(), &other.hierarchy_tuple()),
        }
    }
}

/// Lexicographic comparison of level scores, most important level first.
pub fn compare_hierarchy(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Weighted mean of the normalized metrics present among `names`.
fn weighted_mean<'a>(
    names: impl Iterator<Item = (&'a String, f64)>,
    metrics: &MetricSet,
    registry: &Registry,
) -> Result<Option<f64>, ScoringError> {
    let (mut num, mut den) = (0.0, 0.0);
    for (name, w) in names {
        if w <= 0.0 {
            continue;
        }
        let Some(m) = metrics.get(name) else { continue };
        if let Some(x) = registry.normalize(name, m)? {
            num += w * x;
            den += w;
        }
    }
    Ok((den > 0.0).then(|| num / den))
}

pub fn score_scenario(s: &ScenarioMetrics, policy: &ScoringPolicy, registry: &Registry) -> Result<ScenarioScore, ScoringError> {
    if s.failed {
        return Ok(ScenarioScore {
            scenario_id: s.scenario_id.clone(),
            failed: true,
            weighted_sum: Some(0.0),
            threshold_violations: policy.thresholds.keys().map(|n| policy.weights.get(n).copied().unwrap_or(0.0)).sum(),
            hierarchy: vec![0.0; policy.hierarchy.len()],
        });
    }
    let weighted_sum = weighted_mean(policy.weights.iter().map(|(n, w)| (n, *w)), &s.metrics, registry)?;
    let mut violations = 0.0;
    for (name, thr) in &policy.thresholds {
        let w = policy.weights.get(name).copied().unwrap_or(0.0);
        if let Some(v) = s.metrics.value(name) {
            if registry.violates(name, v, *thr)? {
                violations += w;
            }
        }
    }
    let mut levels = Vec::with_capacity(policy.hierarchy.len());
    for level in &policy.hierarchy {
        // Metrics without a weight count once; a level with nothing
        // measured has nothing wrong with it.
        let names = level.metrics.iter().map(|n| (n, policy.weights.get(n).copied().unwrap_or(1.0)));
        levels.push(weighted_mean(names, &s.metrics, registry)?.unwrap_or(1.0));
    }
    Ok(ScenarioScore {
        scenario_id: s.scenario_id.clone(),
        failed: false,
        weighted_sum,
        threshold_violations: violations,
        hierarchy: levels,
    })
}

/// Scores every scenario and averages each scheme over scenarios.
pub fn aggregate(reports: &[ScenarioMetrics], policy: &ScoringPolicy, registry: &Registry) -> Result<ScoreReport, ScoringError> {
    policy.validate(registry)?;
    if reports.is_empty() {
        return Err(ValidationError::new("nothing to aggregate").into());
    }
    let mut per: Vec<ScenarioScore> = reports
        .iter()
        .map(|r| score_scenario(r, policy, registry))
        .collect::<Result<_, _>>()?;
    per.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    let n = per.len() as f64;
    let ws: Vec<f64> = per.iter().filter_map(|s| s.weighted_sum).collect();
    let weighted_sum = if ws.is_empty() { 0.0 } else { ws.iter().sum::<f64>() / ws.len() as f64 };
    let threshold_violations = per.iter().map(|s| s.threshold_violations).sum::<f64>() / n;
    let hierarchy = policy
        .hierarchy
        .iter()
        .enumerate()
        .map(|(i, l)| LevelScore {
            name: l.name.clone(),
            score: per.iter().map(|s| s.hierarchy[i]).sum::<f64>() / n,
        })
        .collect();
    Ok(ScoreReport {
        policy: policy.kind,
        registry_version: registry.version.clone(),
        scenarios: per.len(),
        failed: per.iter().filter(|s| s.failed).count(),
        weighted_sum,
        threshold_violations,
        hierarchy,
        per_scenario: per,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(pairs: &[(&str, f64)]) -> MetricSet {
        let mut m = MetricSet::default();
        for (n, v) in pairs {
            m.insert(n, MetricValue::new(*v, ""));
        }
        m
    }

    #[test]
    fn normalization_examples() {
        let r = Registry::builtin();
        let n = |name: &str, v: f64| r.normalize(name, &MetricValue::new(v, "")).unwrap().unwrap();
        assert_eq!(n("collision", 0.0), 1.0);
        assert_eq!(n("collision", 1.0), 0.0);
        let scale = r.spec("lat_pos_err").unwrap().scale;
        assert_eq!(n("lat_pos_err", scale), 0.0);
        assert_eq!(n("lat_pos_err", scale / 2.0), 0.5);
        assert_eq!(n("jerk_ratio", 1.0), 1.0);
        assert_eq!(n("progress", 1.0), 1.0);
        assert_eq!(r.normalize("lat_pos_err", &MetricValue::maybe(None, "m")).unwrap(), None);
        assert_eq!(
            r.normalize("made_up", &MetricValue::new(1.0, "")),
            Err(ScoringError::UnknownMetric("made_up".into()))
        );
    }

    fn single_weight(name: &str) -> ScoringPolicy {
        ScoringPolicy {
            kind: PolicyKind::WeightedSum,
            weights: [(name.to_string(), 1.0)].into(),
            thresholds: BTreeMap::new(),
            hierarchy: vec![HierarchyLevel {
                name: "all".into(),
                metrics: vec![name.to_string()],
            }],
        }
    }

    #[test]
    fn mean_over_scenarios() {
        let r = Registry::builtin();
        let scale = r.spec("lat_pos_err").unwrap().scale;
        let reports = [0.6, 0.2].map(|k| ScenarioMetrics {
            scenario_id: format!("s{k}"),
            failed: false,
            metrics: set(&[("lat_pos_err", k * scale), ("collision", 1.0)]),
        });
        let out = aggregate(&reports, &single_weight("lat_pos_err"), &r).unwrap();
        assert!((out.weighted_sum - 0.6).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_and_unknown_names_are_rejected() {
        let r = Registry::builtin();
        let mut p = single_weight("lat_pos_err");
        p.weights.insert("lat_pos_err".into(), 0.0);
        assert!(matches!(p.validate(&r), Err(ScoringError::Invalid(_))));
        let mut p = single_weight("lat_pos_err");
        p.weights.insert("bogus".into(), 1.0);
        assert_eq!(p.validate(&r), Err(ScoringError::UnknownMetric("bogus".into())));
        assert!(ScoringPolicy::default().validate(&r).is_ok());
    }

    #[test]
    fn failed_scenarios_score_worst() {
        let r = Registry::builtin();
        let p = ScoringPolicy::default();
        let s = score_scenario(
            &ScenarioMetrics {
                scenario_id: "x".into(),
                failed: true,
                metrics: MetricSet::default(),
            },
            &p,
            &r,
        )
        .unwrap();
        assert_eq!(s.weighted_sum, Some(0.0));
        assert!(s.hierarchy.iter().all(|&x| x == 0.0));
        let total: f64 = p.thresholds.keys().map(|k| p.weights[k]).sum();
        assert_eq!(s.threshold_violations, total);
    }
}
