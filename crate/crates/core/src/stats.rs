//! Outcome statistics over trial tables: success proportions with Wilson
//! score intervals, gap summaries with percentile bootstrap intervals, and
//! paired 2x2 success tables.

use crate::simulator::{Policy, Site, TrialRow, TrialTable, VisionClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt::Write as _;
use thiserror::Error;

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 10_000;
pub const DEFAULT_BOOTSTRAP_SEED: u64 = 0x5EED;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no trials in group {0}")]
    EmptyGroup(String),
    #[error("no successful trials with a gap in group {0}")]
    NoGaps(String),
    #[error("bootstrap needs at least one resample")]
    NoResamples,
}

/// Which rows a statistic is computed over. `None` fields match anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct TrialFilter {
    pub site: Option<Site>,
    pub vision: Option<VisionClass>,
}

impl TrialFilter {
    pub const ALL: TrialFilter = TrialFilter {
        site: None,
        vision: None,
    };

    pub fn site(site: Site) -> Self {
        TrialFilter {
            site: Some(site),
            vision: None,
        }
    }

    pub fn matches(&self, row: &TrialRow) -> bool {
        self.site.is_none_or(|s| s == row.site) && self.vision.is_none_or(|v| v == row.vision_class)
    }

    pub fn site_label(&self) -> &'static str {
        self.site.map_or("Both", Site::as_str)
    }

    pub fn vision_label(&self) -> &'static str {
        self.vision.map_or("All", VisionClass::as_str)
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.site_label(), self.vision_label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProportionCI {
    pub successes: u64,
    pub total: u64,
    pub p_hat: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Wilson score interval at the given two-sided z.
///
/// # Panics
/// If `total == 0` or `successes > total`.
pub fn wilson_interval(successes: u64, total: u64, z: f64) -> ProportionCI {
    assert!(total > 0 && successes <= total);
    let n = total as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // The closed form is exact at the boundaries; clamp away rounding.
    let lo = if successes == 0 {
        0.0
    } else {
        (centre - half).clamp(0.0, p)
    };
    let hi = if successes == total {
        1.0
    } else {
        (centre + half).clamp(p, 1.0)
    };
    ProportionCI {
        successes,
        total,
        p_hat: p,
        lo,
        hi,
    }
}

pub fn success_rate_ci(trials: &TrialTable, policy: Policy, filter: TrialFilter) -> Result<ProportionCI, StatsError> {
    let rows = trials.rows.iter().filter(|r| filter.matches(r));
    let (mut total, mut successes) = (0u64, 0u64);
    for r in rows {
        total += 1;
        successes += u64::from(r.outcome(policy).is_success());
    }
    if total == 0 {
        return Err(StatsError::EmptyGroup(format!("{policy} {}", filter.label())));
    }
    Ok(wilson_interval(successes, total, Z_95))
}

/// How a signed gap enters the summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GapMeasure {
    /// Signed, overshoot negative.
    Signed,
    /// Distance from the sign regardless of side.
    Magnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BootstrapSpec {
    pub n_resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        BootstrapSpec {
            n_resamples: DEFAULT_BOOTSTRAP_RESAMPLES,
            seed: DEFAULT_BOOTSTRAP_SEED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapSummary {
    pub n: usize,
    pub mean_m: f64,
    /// Sample sd (n - 1); 0 for a single value.
    pub sd_m: f64,
    pub ci_lo_m: f64,
    pub ci_hi_m: f64,
}

/// Mean, sd and percentile-bootstrap 95% interval of `values`.
pub fn summarize(values: &[f64], boot: BootstrapSpec) -> Option<GapSummary> {
    if values.is_empty() || boot.n_resamples == 0 {
        return None;
    }
    let n = values.len();
    let mean_m = mean(values);
    let sd_m = sample_sd(values, mean_m);

    let mut rng = ChaCha8Rng::seed_from_u64(boot.seed);
    let mut means: Vec<f64> = (0..boot.n_resamples)
        .map(|_| {
            let mut s = 0.0;
            for _ in 0..n {
                s += values[rng.random_range(0..n)];
            }
            s / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let (lo, hi) = percentile_bounds(&means, 0.025, 0.975);
    Some(GapSummary {
        n,
        mean_m,
        sd_m,
        // Percentile intervals from a heavily skewed tiny sample can exclude the
        // point estimate; widen to keep it inside.
        ci_lo_m: lo.min(mean_m),
        ci_hi_m: hi.max(mean_m),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64], m: f64) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Linear-interpolated percentiles of a sorted slice.
fn percentile_bounds(sorted: &[f64], lo_q: f64, hi_q: f64) -> (f64, f64) {
    let at = |q: f64| {
        let pos = q * (sorted.len() - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 < sorted.len() {
            sorted[i] + frac * (sorted[i + 1] - sorted[i])
        } else {
            sorted[i]
        }
    };
    (at(lo_q), at(hi_q))
}

/// Gaps of the successful trials of `policy` within `filter`.
pub fn gaps(trials: &TrialTable, policy: Policy, filter: TrialFilter, measure: GapMeasure) -> Vec<f64> {
    trials
        .rows
        .iter()
        .filter(|r| filter.matches(r))
        .filter_map(|r| r.outcome(policy).gap_m())
        .map(|g| match measure {
            GapMeasure::Signed => g,
            GapMeasure::Magnitude => g.abs(),
        })
        .collect()
}

pub fn gap_summary(
    trials: &TrialTable,
    policy: Policy,
    filter: TrialFilter,
    measure: GapMeasure,
    boot: BootstrapSpec,
) -> Result<GapSummary, StatsError> {
    if boot.n_resamples == 0 {
        return Err(StatsError::NoResamples);
    }
    let values = gaps(trials, policy, filter, measure);
    summarize(&values, boot).ok_or_else(|| StatsError::NoGaps(format!("{policy} {}", filter.label())))
}

/// Fraction of successful trials that stopped past the sign.
pub fn overshoot_fraction(
    trials: &TrialTable,
    policy: Policy,
    filter: TrialFilter,
) -> Result<ProportionCI, StatsError> {
    let g = gaps(trials, policy, filter, GapMeasure::Signed);
    if g.is_empty() {
        return Err(StatsError::NoGaps(format!("{policy} {}", filter.label())));
    }
    let neg = g.iter().filter(|&&x| x < 0.0).count() as u64;
    Ok(wilson_interval(neg, g.len() as u64, Z_95))
}

/// Paired outcome counts; "a" is vision-guided, "g" is GPS-follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct JointTable2x2 {
    pub both_success: u64,
    pub a_only: u64,
    pub g_only: u64,
    pub both_fail: u64,
}

impl JointTable2x2 {
    pub fn total(&self) -> u64 {
        self.both_success + self.a_only + self.g_only + self.both_fail
    }
}

/// Rows are paired by construction of [`TrialRow`]; an unpaired table cannot
/// be represented and is rejected when read from CSV.
pub fn joint_table(trials: &TrialTable, filter: TrialFilter) -> JointTable2x2 {
    let mut t = JointTable2x2::default();
    for r in trials.rows.iter().filter(|r| filter.matches(r)) {
        match (r.vision.is_success(), r.gps.is_success()) {
            (true, true) => t.both_success += 1,
            (true, false) => t.a_only += 1,
            (false, true) => t.g_only += 1,
            (false, false) => t.both_fail += 1,
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRow {
    pub site: &'static str,
    pub vision: &'static str,
    pub policy: Policy,
    pub success: ProportionCI,
    /// Absolute gap, the headline figure.
    pub gap: Option<GapSummary>,
    pub signed_gap: Option<GapSummary>,
    pub overshoot: Option<ProportionCI>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointRow {
    pub site: &'static str,
    pub table: JointTable2x2,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub total_trials: usize,
    pub groups: Vec<GroupRow>,
    pub joint: Vec<JointRow>,
    pub warnings: Vec<String>,
}

/// Every site x vision-class x policy group plus per-site joint tables.
/// Groups with no trials are skipped and noted in `warnings`.
pub fn report(trials: &TrialTable, boot: BootstrapSpec) -> Result<Report, StatsError> {
    if trials.is_empty() {
        return Err(StatsError::EmptyGroup("whole table".into()));
    }
    let sites = [None, Some(Site::City), Some(Site::Suburb)];
    let visions = [None, Some(VisionClass::Residual), Some(VisionClass::NoResidual)];
    let mut groups = Vec::new();
    let mut joint = Vec::new();
    let mut warnings = Vec::new();
    for site in sites {
        for vision in visions {
            let filter = TrialFilter { site, vision };
            for policy in Policy::ALL {
                let success = match success_rate_ci(trials, policy, filter) {
                    Ok(s) => s,
                    Err(_) => {
                        if policy == Policy::ALL[0] {
                            warnings.push(format!("warning: no trials for {}, group omitted", filter.label()));
                        }
                        continue;
                    }
                };
                groups.push(GroupRow {
                    site: filter.site_label(),
                    vision: filter.vision_label(),
                    policy,
                    success,
                    gap: gap_summary(trials, policy, filter, GapMeasure::Magnitude, boot).ok(),
                    signed_gap: gap_summary(trials, policy, filter, GapMeasure::Signed, boot).ok(),
                    overshoot: overshoot_fraction(trials, policy, filter).ok(),
                });
            }
        }
        let filter = TrialFilter { site, vision: None };
        let table = joint_table(trials, filter);
        if table.total() > 0 {
            joint.push(JointRow {
                site: filter.site_label(),
                table,
            });
        }
    }
    Ok(Report {
        total_trials: trials.len(),
        groups,
        joint,
        warnings,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Report {
    /// One CSV: `group` records carry per-group rates and gaps, `joint`
    /// records carry the paired 2x2 counts in the last four columns.
    pub fn to_csv(&self) -> String {
        const HEADER: [&str; 20] = [
            "record",
            "site",
            "vision_class",
            "policy",
            "n",
            "successes",
            "success_rate",
            "success_lo",
            "success_hi",
            "gap_n",
            "gap_mean_m",
            "gap_sd_m",
            "gap_ci_lo_m",
            "gap_ci_hi_m",
            "signed_gap_mean_m",
            "overshoot_fraction",
            "both_success",
            "vision_only",
            "gps_only",
            "both_fail",
        ];
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory csv");
        for g in &self.groups {
            let mut rec = vec![
                "group".to_string(),
                g.site.to_string(),
                g.vision.to_string(),
                g.policy.to_string(),
                g.success.total.to_string(),
                g.success.successes.to_string(),
                g.success.p_hat.to_string(),
                g.success.lo.to_string(),
                g.success.hi.to_string(),
                g.gap.map_or(0, |s| s.n).to_string(),
                opt(g.gap.map(|s| s.mean_m)),
                opt(g.gap.map(|s| s.sd_m)),
                opt(g.gap.map(|s| s.ci_lo_m)),
                opt(g.gap.map(|s| s.ci_hi_m)),
                opt(g.signed_gap.map(|s| s.mean_m)),
                opt(g.overshoot.map(|o| o.p_hat)),
            ];
            rec.resize(HEADER.len(), String::new());
            w.write_record(&rec).expect("in-memory csv");
        }
        for j in &self.joint {
            let t = j.table;
            let mut rec = vec!["joint".to_string(), j.site.to_string()];
            rec.resize(HEADER.len() - 4, String::new());
            rec.extend([t.both_success, t.a_only, t.g_only, t.both_fail].map(|c| c.to_string()));
            w.write_record(&rec).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Fixed-width tables shaped like the usual per-app, per-site summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Trials: {}", self.total_trials);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<7} {:<19} {:<13} {:>9} {:>8} {:>17} {:>16} {:>15}",
            "Site", "Vision", "App", "Success", "Rate %", "95% CI", "Gap mean [SD]", "Gap 95% CI"
        );
        for g in &self.groups {
            let (gap, ci) = match g.gap {
                Some(s) => (
                    format!("{:.2} [{:.2}]", s.mean_m, s.sd_m),
                    format!("{:.2}-{:.2}", s.ci_lo_m, s.ci_hi_m),
                ),
                None => ("-".into(), "-".into()),
            };
            let _ = writeln!(
                out,
                "{:<7} {:<19} {:<13} {:>9} {:>8.1} {:>17} {:>16} {:>15}",
                g.site,
                g.vision,
                g.policy.as_str(),
                format!("{}/{}", g.success.successes, g.success.total),
                100.0 * g.success.p_hat,
                format!("{:.1}-{:.1}", 100.0 * g.success.lo, 100.0 * g.success.hi),
                gap,
                ci
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Joint outcomes (VisionGuided rows x GpsFollow columns)");
        for j in &self.joint {
            let t = j.table;
            let _ = writeln!(out, "{}:", j.site);
            let _ = writeln!(out, "  {:<22} {:>12} {:>12}", "", "GPS success", "GPS failure");
            let _ = writeln!(
                out,
                "  {:<22} {:>12} {:>12}",
                "Vision success", t.both_success, t.a_only
            );
            let _ = writeln!(out, "  {:<22} {:>12} {:>12}", "Vision failure", t.g_only, t.both_fail);
        }
        if let Some(o) = self
            .groups
            .iter()
            .find(|g| g.site == "Both" && g.vision == "All" && g.policy == Policy::GpsFollow)
            .and_then(|g| g.overshoot)
        {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "GpsFollow arrivals past the sign: {} of {} ({:.1}%)",
                o.successes,
                o.total,
                100.0 * o.p_hat
            );
        }
        for w in &self.warnings {
            let _ = writeln!(out, "{w}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{FailureReason, TrialOutcome};

    fn row(id: u64, site: Site, vision_gap: Option<f64>, gps_gap: Option<f64>) -> TrialRow {
        let out = |p, g: Option<f64>| match g {
            Some(g) => TrialOutcome::success(p, g),
            None => TrialOutcome::failure(p, FailureReason::Timeout),
        };
        TrialRow {
            trial_id: id,
            stop_id: format!("S{id}"),
            site,
            vision_class: VisionClass::NoResidual,
            seed: id,
            vision: out(Policy::VisionGuided, vision_gap),
            gps: out(Policy::GpsFollow, gps_gap),
        }
    }

    #[test]
    fn wilson_at_401_of_432() {
        let a = wilson_interval(401, 432, Z_95);
        assert!((a.p_hat - 0.928).abs() < 5e-4);
        assert!((a.lo - 0.899).abs() < 1e-3 && (a.hi - 0.949).abs() < 1e-3, "{a:?}");
        let g = wilson_interval(225, 432, Z_95);
        assert!((g.p_hat - 0.521).abs() < 5e-4);
        let z = wilson_interval(0, 10, Z_95);
        assert_eq!((z.p_hat, z.lo), (0.0, 0.0));
        let f = wilson_interval(10, 10, Z_95);
        assert_eq!((f.p_hat, f.hi), (1.0, 1.0));
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[1.0, 2.0, 3.0], BootstrapSpec::default()).unwrap();
        assert_eq!((s.mean_m, s.sd_m), (2.0, 1.0));
        let c = summarize(&[5.0; 4], BootstrapSpec::default()).unwrap();
        assert_eq!((c.sd_m, c.ci_lo_m, c.ci_hi_m), (0.0, 5.0, 5.0));
        let boot = BootstrapSpec {
            n_resamples: 500,
            seed: 9,
        };
        let data = [0.3, 1.9, 2.2, 0.0, 4.1, 1.0];
        assert_eq!(summarize(&data, boot), summarize(&data, boot));
        assert!(summarize(&[], boot).is_none());
    }

    #[test]
    fn empty_groups_error() {
        let t = TrialTable {
            rows: vec![row(0, Site::City, None, Some(3.0))],
        };
        assert!(matches!(
            success_rate_ci(&t, Policy::GpsFollow, TrialFilter::site(Site::Suburb)),
            Err(StatsError::EmptyGroup(_))
        ));
        assert!(matches!(
            gap_summary(
                &t,
                Policy::VisionGuided,
                TrialFilter::ALL,
                GapMeasure::Signed,
                BootstrapSpec::default()
            ),
            Err(StatsError::NoGaps(_))
        ));
    }

    #[test]
    fn joint_counts() {
        let t = TrialTable {
            rows: vec![
                row(0, Site::City, Some(1.0), Some(3.0)),
                row(1, Site::City, Some(1.0), None),
                row(2, Site::Suburb, None, Some(-2.0)),
                row(3, Site::Suburb, None, None),
                row(4, Site::Suburb, Some(0.5), None),
            ],
        };
        let j = joint_table(&t, TrialFilter::ALL);
        assert_eq!(
            j,
            JointTable2x2 {
                both_success: 1,
                a_only: 2,
                g_only: 1,
                both_fail: 1
            }
        );
        assert_eq!(j.total(), 5);
        let o = overshoot_fraction(&t, Policy::GpsFollow, TrialFilter::ALL).unwrap();
        assert_eq!((o.successes, o.total), (1, 2));
        let m = gaps(&t, Policy::GpsFollow, TrialFilter::ALL, GapMeasure::Magnitude);
        assert_eq!(m, vec![3.0, 2.0]);
    }

    #[test]
    fn joint_table_counts() {
        let mut rows = Vec::new();
        let mut id = 0;
        for (n, v, g) in [
            (212, true, true),
            (189, true, false),
            (13, false, true),
            (18, false, false),
        ] {
            for _ in 0..n {
                rows.push(row(id, Site::City, v.then_some(1.0), g.then_some(5.0)));
                id += 1;
            }
        }
        let t = TrialTable { rows };
        let j = joint_table(&t, TrialFilter::ALL);
        assert_eq!((j.both_success, j.a_only, j.g_only, j.both_fail), (212, 189, 13, 18));
        assert_eq!(
            success_rate_ci(&t, Policy::VisionGuided, TrialFilter::ALL)
                .unwrap()
                .successes,
            401
        );
        assert_eq!(
            success_rate_ci(&t, Policy::GpsFollow, TrialFilter::ALL)
                .unwrap()
                .successes,
            225
        );
    }

    #[test]
    fn report_omits_empty_site_with_warning() {
        let t = TrialTable {
            rows: vec![
                row(0, Site::City, Some(1.0), Some(3.0)),
                row(1, Site::City, None, Some(4.0)),
            ],
        };
        let r = report(
            &t,
            BootstrapSpec {
                n_resamples: 100,
                seed: 1,
            },
        )
        .unwrap();
        assert!(r.groups.iter().all(|g| g.site != "Suburb"));
        assert!(r.warnings.iter().any(|w| w.contains("Suburb")));
        assert!(r.to_text().contains("warning: no trials for Suburb"));
        assert!(r.joint.iter().all(|j| j.site != "Suburb"));
    }

    #[test]
    fn wilson_width_shrinks_with_n() {
        for p in [0.1, 0.25, 0.5, 0.9] {
            let mut prev = f64::INFINITY;
            for n in (20..2000).step_by(20) {
                let k = (p * n as f64).round() as u64;
                if (k as f64 / n as f64 - p).abs() > 1e-12 {
                    continue;
                }
                let ci = wilson_interval(k, n, Z_95);
                assert!(ci.lo <= ci.p_hat && ci.p_hat <= ci.hi);
                let w = ci.hi - ci.lo;
                assert!(w < prev, "p={p} n={n}");
                prev = w;
            }
        }
    }
}
