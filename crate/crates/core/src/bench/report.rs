use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::spec::{Check, CheckKind, Metric};
use super::BenchError;
use crate::timing::{latency_stats, op_stats, TimingRecord};

/// Aggregates of one component at one sweep point, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub count: usize,
    pub ranks: usize,
    pub op_mean_sec: f64,
    pub op_std_sec: f64,
    pub p50_sec: f64,
    pub p99_sec: f64,
    pub mean_bytes: f64,
    /// Total bytes over total time, MB/s.
    pub throughput_mbs: f64,
    pub rank_total_mean_sec: f64,
    pub rank_total_std_sec: f64,
}

pub fn summarize(rows: &[TimingRecord]) -> BTreeMap<String, ComponentSummary> {
    let totals: BTreeMap<String, _> = op_stats(rows)
        .into_iter()
        .map(|s| (s.component.clone(), s))
        .collect();
    latency_stats(rows)
        .into_iter()
        .map(|l| {
            let t = &totals[&l.component];
            let summary = ComponentSummary {
                count: l.count,
                ranks: t.ranks,
                op_mean_sec: l.mean_us * 1e-6,
                op_std_sec: l.std_us * 1e-6,
                p50_sec: l.p50_us * 1e-6,
                p99_sec: l.p99_us * 1e-6,
                mean_bytes: l.mean_bytes,
                throughput_mbs: l.throughput_mbs,
                rank_total_mean_sec: t.mean_sec,
                rank_total_std_sec: t.std_sec,
            };
            (l.component, summary)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run_id: String,
    pub dir: PathBuf,
    pub ok: bool,
    pub rows: usize,
    pub expected_rows: Option<usize>,
    /// Every launched process listed once, all statuses terminal, row count exact.
    pub accounting_ok: bool,
    pub orphans: usize,
    pub non_local_keys: Option<i64>,
    pub failed: Vec<String>,
    pub errors: Vec<String>,
    pub elapsed_sec: f64,
    /// Per-call mean of each component in this repetition alone.
    pub op_means: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub label: String,
    pub x: f64,
    pub payload_bytes_per_rank: u64,
    pub producer_ranks: u32,
    pub ok: bool,
    pub runs: Vec<RunOutcome>,
    pub components: BTreeMap<String, ComponentSummary>,
    /// `t_ref / t` on per-call means, first point as reference.
    pub efficiency: BTreeMap<String, f64>,
    /// `t_ref / t` on per-rank totals, first point as reference.
    pub speedup: BTreeMap<String, f64>,
}

impl PointResult {
    pub fn metric(&self, metric: Metric, components: &[String]) -> Option<f64> {
        let parts: Vec<&ComponentSummary> = components
            .iter()
            .map(|c| self.components.get(c))
            .collect::<Option<_>>()?;
        if parts.is_empty() {
            return None;
        }
        match metric {
            Metric::OpMean => {
                let n: usize = parts.iter().map(|p| p.count).sum();
                let total: f64 = parts.iter().map(|p| p.op_mean_sec * p.count as f64).sum();
                (n > 0).then(|| total / n as f64)
            }
            Metric::RankTotal => Some(parts.iter().map(|p| p.rank_total_mean_sec).sum()),
        }
    }

    fn op_mean(&self, component: &str) -> Option<f64> {
        self.components.get(component).map(|c| c.op_mean_sec)
    }
}

/// Fills efficiency and speedup relative to the first point.
pub fn derive_metrics(points: &mut [PointResult]) {
    let Some(reference) = points.first().map(|p| p.components.clone()) else {
        return;
    };
    for p in points.iter_mut() {
        p.efficiency.clear();
        p.speedup.clear();
        for (name, c) in &p.components {
            if let Some(r) = reference.get(name) {
                if c.op_mean_sec > 0.0 {
                    p.efficiency.insert(name.clone(), r.op_mean_sec / c.op_mean_sec);
                }
                if c.rank_total_mean_sec > 0.0 {
                    p.speedup
                        .insert(name.clone(), r.rank_total_mean_sec / c.rank_total_mean_sec);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VerdictStatus {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub status: VerdictStatus,
    pub measured: Option<f64>,
    pub threshold: Option<f64>,
    pub detail: String,
    pub advisory: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub id: String,
    pub title: String,
    pub x_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub paper_scale: bool,
    pub components: Vec<String>,
    pub points: Vec<PointResult>,
    pub checks: Vec<Check>,
    pub verdicts: Vec<Verdict>,
    pub elapsed_sec: f64,
}

impl ScalingReport {
    pub fn read(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BenchError::Report(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<(), BenchError> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))
    }

    pub fn point(&self, label: &str) -> Option<&PointResult> {
        self.points.iter().find(|p| p.label == label)
    }

    /// True when no non-advisory verdict failed or was inconclusive.
    pub fn passed(&self) -> bool {
        self.verdicts
            .iter()
            .all(|v| v.advisory || v.status == VerdictStatus::Pass)
    }
}

struct Eval<'a> {
    report: &'a ScalingReport,
    check: &'a Check,
}

impl Eval<'_> {
    fn components(&self) -> Vec<String> {
        if self.check.components.is_empty() {
            self.report.components.clone()
        } else {
            self.check.components.clone()
        }
    }

    fn verdict(&self, status: VerdictStatus, measured: Option<f64>, threshold: Option<f64>, detail: String) -> Verdict {
        Verdict {
            name: self.check.name.clone(),
            status,
            measured,
            threshold,
            detail,
            advisory: self.check.advisory,
        }
    }

    fn inconclusive(&self, detail: String) -> Verdict {
        self.verdict(VerdictStatus::Inconclusive, None, None, detail)
    }

    fn judged(&self, ok: bool, measured: f64, threshold: f64, detail: String) -> Verdict {
        let status = if ok { VerdictStatus::Pass } else { VerdictStatus::Fail };
        self.verdict(status, Some(measured), Some(threshold), detail)
    }

    /// Metric at a labelled point; `Err` carries an inconclusive verdict.
    fn at(&self, label: &str) -> Result<f64, Verdict> {
        let Some(point) = self.report.point(label) else {
            return Err(self.inconclusive(format!("point {label} missing")));
        };
        if !point.ok {
            return Err(self.inconclusive(format!("point {label} did not complete cleanly")));
        }
        point
            .metric(self.check.metric, &self.components())
            .ok_or_else(|| self.inconclusive(format!("point {label} lacks {:?}", self.components())))
    }

    fn run(&self) -> Result<Verdict, Verdict> {
        let report = self.report;
        Ok(match &self.check.rule {
            CheckKind::CleanTeardown => {
                let runs: Vec<&RunOutcome> = report.points.iter().flat_map(|p| &p.runs).collect();
                if runs.is_empty() {
                    return Err(self.inconclusive("no runs".into()));
                }
                let bad: Vec<String> = runs
                    .iter()
                    .filter(|r| !r.ok || !r.accounting_ok || r.orphans > 0)
                    .map(|r| r.run_id.clone())
                    .collect();
                let orphans: usize = runs.iter().map(|r| r.orphans).sum();
                self.judged(
                    bad.is_empty(),
                    bad.len() as f64,
                    0.0,
                    format!("{} runs, {orphans} orphans, unclean: {bad:?}", runs.len()),
                )
            }
            CheckKind::Locality => {
                let counts: Vec<i64> = report
                    .points
                    .iter()
                    .flat_map(|p| &p.runs)
                    .filter_map(|r| r.non_local_keys)
                    .collect();
                if counts.is_empty() {
                    return Err(self.inconclusive("no co-located runs".into()));
                }
                let total: i64 = counts.iter().sum();
                self.judged(total == 0, total as f64, 0.0, format!("{} runs audited", counts.len()))
            }
            CheckKind::SmallMessageFloor {
                small,
                large,
                size_ratio,
                factor,
            } => {
                let (s, l) = (self.at(small)?, self.at(large)?);
                let ratio = s / (l / size_ratio);
                self.judged(
                    ratio >= *factor,
                    ratio,
                    *factor,
                    format!("t({small})={s:.3e}s, t({large})/{size_ratio}={:.3e}s", l / size_ratio),
                )
            }
            CheckKind::Monotone {
                max_inversions,
                inversion_tolerance,
            } => {
                let values = report
                    .points
                    .iter()
                    .map(|p| self.at(&p.label))
                    .collect::<Result<Vec<f64>, _>>()?;
                let mut inversions = 0;
                let mut worst: f64 = 0.0;
                let mut ok = true;
                for w in values.windows(2) {
                    if w[1] < w[0] {
                        let dip = (w[0] - w[1]) / w[0];
                        inversions += 1;
                        worst = worst.max(dip);
                        ok &= dip <= *inversion_tolerance;
                    }
                }
                ok &= inversions <= *max_inversions;
                self.judged(
                    ok,
                    inversions as f64,
                    *max_inversions as f64,
                    format!("largest dip {:.1}% (allowed {:.1}%)", worst * 100.0, inversion_tolerance * 100.0),
                )
            }
            CheckKind::MinEfficiency { reference, target, min } => {
                let (r, t) = (self.at(reference)?, self.at(target)?);
                let eff = r / t;
                self.judged(eff >= *min, eff, *min, format!("t({reference})={r:.3e}s, t({target})={t:.3e}s"))
            }
            CheckKind::MinRatio {
                numerator,
                denominator,
                min,
            } => {
                let (n, d) = (self.at(numerator)?, self.at(denominator)?);
                let ratio = n / d;
                self.judged(ratio >= *min, ratio, *min, format!("t({numerator})={n:.3e}s, t({denominator})={d:.3e}s"))
            }
            CheckKind::MaxSpread { points, max } => {
                let values = points
                    .iter()
                    .map(|l| self.at(l))
                    .collect::<Result<Vec<f64>, _>>()?;
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = values.iter().copied().fold(0.0, f64::max);
                let spread = (hi - lo) / lo;
                let listed: Vec<String> = points
                    .iter()
                    .zip(&values)
                    .map(|(l, v)| format!("{l}={v:.3e}s"))
                    .collect();
                self.judged(spread <= *max, spread, *max, listed.join(", "))
            }
            CheckKind::StrictlyDecreasing {
                points,
                min_payload_bytes,
            } => {
                for l in points {
                    let p = report.point(l).ok_or_else(|| self.inconclusive(format!("point {l} missing")))?;
                    if p.payload_bytes_per_rank < *min_payload_bytes {
                        return Err(self.inconclusive(format!(
                            "point {l} carries {} bytes per rank, below {min_payload_bytes}",
                            p.payload_bytes_per_rank
                        )));
                    }
                }
                let values = points
                    .iter()
                    .map(|l| self.at(l))
                    .collect::<Result<Vec<f64>, _>>()?;
                let worst = values
                    .windows(2)
                    .map(|w| w[1] / w[0])
                    .fold(0.0, f64::max);
                let listed: Vec<String> = points
                    .iter()
                    .zip(&values)
                    .map(|(l, v)| format!("{l}={v:.3e}s"))
                    .collect();
                self.judged(worst < 1.0, worst, 1.0, format!("largest step ratio {worst:.3}; {}", listed.join(", ")))
            }
            CheckKind::SumOfParts {
                parts,
                total,
                tolerance,
                points,
            } => {
                let labels: Vec<&str> = if points.is_empty() {
                    report
                        .points
                        .iter()
                        .filter(|p| p.components.contains_key(total))
                        .map(|p| p.label.as_str())
                        .collect()
                } else {
                    points.iter().map(String::as_str).collect()
                };
                if labels.is_empty() {
                    return Err(self.inconclusive(format!("no point records {total}")));
                }
                let mut worst: f64 = 0.0;
                for l in &labels {
                    let p = report.point(l).ok_or_else(|| self.inconclusive(format!("point {l} missing")))?;
                    let t = p
                        .op_mean(total)
                        .ok_or_else(|| self.inconclusive(format!("point {l} lacks {total}")))?;
                    let sum = parts
                        .iter()
                        .map(|c| p.op_mean(c))
                        .sum::<Option<f64>>()
                        .ok_or_else(|| self.inconclusive(format!("point {l} lacks a part")))?;
                    worst = worst.max((sum - t).abs() / t);
                }
                self.judged(worst <= *tolerance, worst, *tolerance, format!("{} points", labels.len()))
            }
            CheckKind::AtMost { lhs, rhs } => {
                let get = |o: &super::spec::Operand| {
                    report
                        .point(&o.point)
                        .filter(|p| p.ok)
                        .and_then(|p| p.op_mean(&o.component))
                        .ok_or_else(|| self.inconclusive(format!("{}/{} missing", o.point, o.component)))
                };
                let (a, b) = (get(lhs)?, get(rhs)?);
                self.judged(
                    a <= b,
                    a / b,
                    1.0,
                    format!(
                        "{}/{}={a:.3e}s vs {}/{}={b:.3e}s",
                        lhs.point, lhs.component, rhs.point, rhs.component
                    ),
                )
            }
            CheckKind::Reproducible { max } => {
                let comps = self.components();
                let mut worst: f64 = 0.0;
                let mut compared = 0;
                for p in &report.points {
                    for c in &comps {
                        let means: Vec<f64> = p.runs.iter().filter_map(|r| r.op_means.get(c).copied()).collect();
                        if means.len() < 2 {
                            continue;
                        }
                        compared += 1;
                        let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
                        let hi = means.iter().copied().fold(0.0, f64::max);
                        worst = worst.max((hi - lo) / lo);
                    }
                }
                if compared == 0 {
                    return Err(self.inconclusive("needs at least two repetitions".into()));
                }
                self.judged(worst <= *max, worst, *max, format!("{compared} point/component pairs"))
            }
        })
    }
}

/// Evaluates every check carried by the report.
pub fn check_properties(report: &ScalingReport) -> Vec<Verdict> {
    report
        .checks
        .iter()
        .map(|check| {
            let e = Eval { report, check };
            e.run().unwrap_or_else(|v| v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::spec::Operand;

    fn comp(mean: f64, count: usize) -> ComponentSummary {
        ComponentSummary {
            count,
            ranks: 1,
            op_mean_sec: mean,
            op_std_sec: 0.0,
            p50_sec: mean,
            p99_sec: mean,
            mean_bytes: 0.0,
            throughput_mbs: 0.0,
            rank_total_mean_sec: mean * count as f64,
            rank_total_std_sec: 0.0,
        }
    }

    fn point(label: &str, x: f64, send: f64) -> PointResult {
        let mut components = BTreeMap::new();
        components.insert("send".to_owned(), comp(send, 10));
        components.insert("retrieve".to_owned(), comp(send, 10));
        PointResult {
            label: label.into(),
            x,
            payload_bytes_per_rank: 1 << 20,
            producer_ranks: 1,
            ok: true,
            runs: Vec::new(),
            components,
            efficiency: BTreeMap::new(),
            speedup: BTreeMap::new(),
        }
    }

    fn report(points: Vec<PointResult>, rule: CheckKind) -> ScalingReport {
        ScalingReport {
            id: "T".into(),
            title: String::new(),
            x_label: String::new(),
            log_x: false,
            log_y: false,
            paper_scale: false,
            components: vec!["send".into(), "retrieve".into()],
            points,
            checks: vec![Check {
                name: "c".into(),
                rule,
                components: Vec::new(),
                metric: Metric::OpMean,
                advisory: false,
            }],
            verdicts: Vec::new(),
            elapsed_sec: 0.0,
        }
    }

    fn status(r: &ScalingReport) -> VerdictStatus {
        check_properties(r)[0].status
    }

    #[test]
    fn ratio_and_spread() {
        let pts = vec![point("a", 1.0, 1.0), point("b", 2.0, 1.3), point("c", 4.0, 2.0)];
        let rule = CheckKind::MinRatio {
            numerator: "c".into(),
            denominator: "a".into(),
            min: 1.5,
        };
        assert_eq!(status(&report(pts.clone(), rule)), VerdictStatus::Pass);
        let rule = CheckKind::MaxSpread {
            points: vec!["a".into(), "b".into()],
            max: 0.35,
        };
        assert_eq!(status(&report(pts.clone(), rule)), VerdictStatus::Pass);
        let rule = CheckKind::MaxSpread {
            points: vec!["a".into(), "c".into()],
            max: 0.35,
        };
        assert_eq!(status(&report(pts, rule)), VerdictStatus::Fail);
    }

    #[test]
    fn missing_point_is_inconclusive() {
        let rule = CheckKind::MinEfficiency {
            reference: "a".into(),
            target: "zz".into(),
            min: 0.75,
        };
        let r = report(vec![point("a", 1.0, 1.0)], rule);
        assert_eq!(status(&r), VerdictStatus::Inconclusive);
        assert!(!r.passed() || r.verdicts.is_empty());
    }

    #[test]
    fn monotone_allows_one_small_dip() {
        let rule = CheckKind::Monotone {
            max_inversions: 1,
            inversion_tolerance: 0.05,
        };
        let ok = vec![point("a", 1.0, 1.0), point("b", 2.0, 0.97), point("c", 3.0, 2.0)];
        assert_eq!(status(&report(ok, rule.clone())), VerdictStatus::Pass);
        let bad = vec![point("a", 1.0, 1.0), point("b", 2.0, 0.8), point("c", 3.0, 2.0)];
        assert_eq!(status(&report(bad, rule)), VerdictStatus::Fail);
    }

    #[test]
    fn at_most_and_floor() {
        let pts = vec![point("small", 1.0, 1e-4), point("big", 2.0, 1e-3)];
        let floor = CheckKind::SmallMessageFloor {
            small: "small".into(),
            large: "big".into(),
            size_ratio: 256.0,
            factor: 10.0,
        };
        assert_eq!(status(&report(pts.clone(), floor)), VerdictStatus::Pass);
        let le = CheckKind::AtMost {
            lhs: Operand {
                point: "small".into(),
                component: "send".into(),
            },
            rhs: Operand {
                point: "big".into(),
                component: "send".into(),
            },
        };
        assert_eq!(status(&report(pts, le)), VerdictStatus::Pass);
    }

    #[test]
    fn pooled_metric_weights_by_count() {
        let mut p = point("a", 1.0, 1.0);
        p.components.insert("retrieve".into(), comp(4.0, 30));
        let v = p.metric(Metric::OpMean, &["send".into(), "retrieve".into()]).unwrap();
        assert!((v - (10.0 + 120.0) / 40.0).abs() < 1e-12);
        assert_eq!(p.metric(Metric::RankTotal, &["send".into(), "retrieve".into()]), Some(130.0));
    }
}
