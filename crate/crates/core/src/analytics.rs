//! Descriptive reports over frame-labeled messages: the overall frame
//! split, group-normalized distribution per grade and the per-trimester
//! distribution.
//!
//! Percentages and ratios are rounded half-up to two decimals with exact
//! integer arithmetic, so `66 / 7` is reported as `9.43` on every platform.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SentenceRef;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("group census has no entry for grade(s) {0:?}")]
    MissingCensus(Vec<u8>),
    #[error("group census for grade {0} is zero")]
    ZeroGroups(u8),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Gain,
    Loss,
}

impl Frame {
    pub fn as_str(self) -> &'static str {
        match self {
            Frame::Gain => "gain",
            Frame::Loss => "loss",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageObservation {
    pub text: String,
    pub frame: Frame,
    pub grade: u8,
    /// Untagged observations are left out of the trimester breakdown.
    pub trimester: Option<u8>,
    pub group_id: String,
    pub reference: Option<SentenceRef>,
}

/// Number of distinct class groups per grade.
pub type GroupCensus = BTreeMap<u8, u32>;

/// Census counted from the observations' own group ids.
pub fn census_from_groups<'a>(groups: impl IntoIterator<Item = (u8, &'a str)>) -> GroupCensus {
    let mut sets: BTreeMap<u8, BTreeSet<&str>> = BTreeMap::new();
    for (grade, group) in groups {
        sets.entry(grade).or_default().insert(group);
    }
    sets.into_iter().map(|(g, s)| (g, s.len() as u32)).collect()
}

/// `round_half_up(100 * num / den, 2)`, exact.
pub fn percent_2dp(num: u64, den: u64) -> f64 {
    ratio_2dp(100 * num, den)
}

/// `round_half_up(num / den, 2)`, exact.
pub fn ratio_2dp(num: u64, den: u64) -> f64 {
    assert!(den > 0, "ratio with zero denominator");
    let hundredths = (200 * num as u128 + den as u128) / (2 * den as u128);
    hundredths as f64 / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameShare {
    pub frame: Frame,
    pub count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallDistribution {
    pub total: u64,
    pub shares: Vec<FrameShare>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeDistribution {
    pub grade: u8,
    pub groups: u32,
    pub total: u64,
    /// Messages per group over both frames.
    pub total_ratio: f64,
    pub shares: Vec<FrameShare>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimesterDistribution {
    pub trimester: u8,
    pub total: u64,
    /// Share of this trimester among all trimester-tagged observations.
    pub percent_of_tagged: f64,
    /// Frame split within the trimester.
    pub shares: Vec<FrameShare>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub overall: Option<OverallDistribution>,
    pub by_grade: Vec<GradeDistribution>,
    pub by_trimester: Vec<TrimesterDistribution>,
}

fn frame_counts<'a>(obs: impl IntoIterator<Item = &'a MessageObservation>) -> (u64, u64) {
    obs.into_iter().fold((0, 0), |(g, l), o| match o.frame {
        Frame::Gain => (g + 1, l),
        Frame::Loss => (g, l + 1),
    })
}

fn shares(gain: u64, loss: u64, groups: Option<u32>) -> Vec<FrameShare> {
    let total = gain + loss;
    [(Frame::Gain, gain), (Frame::Loss, loss)]
        .into_iter()
        .map(|(frame, count)| FrameShare {
            frame,
            count,
            ratio: groups.map(|g| ratio_2dp(count, g as u64)),
            percent: percent_2dp(count, total),
        })
        .collect()
}

/// Frame counts and percentages over all observations; `None` when empty.
pub fn overall_distribution(obs: &[MessageObservation]) -> Option<OverallDistribution> {
    let (gain, loss) = frame_counts(obs);
    let total = gain + loss;
    (total > 0).then(|| OverallDistribution {
        total,
        shares: shares(gain, loss, None),
    })
}

/// Per grade: `count / groups` for each frame, and the within-grade
/// percentages (the group count cancels, so they equal count shares).
pub fn grade_normalized(
    obs: &[MessageObservation],
    census: &GroupCensus,
) -> Result<Vec<GradeDistribution>, AnalyticsError> {
    let mut by_grade: BTreeMap<u8, Vec<&MessageObservation>> = BTreeMap::new();
    for o in obs {
        by_grade.entry(o.grade).or_default().push(o);
    }
    let missing: Vec<u8> = by_grade.keys().filter(|g| !census.contains_key(g)).copied().collect();
    if !missing.is_empty() {
        return Err(AnalyticsError::MissingCensus(missing));
    }
    by_grade
        .into_iter()
        .map(|(grade, items)| {
            let groups = census[&grade];
            if groups == 0 {
                return Err(AnalyticsError::ZeroGroups(grade));
            }
            let (gain, loss) = frame_counts(items);
            Ok(GradeDistribution {
                grade,
                groups,
                total: gain + loss,
                total_ratio: ratio_2dp(gain + loss, groups as u64),
                shares: shares(gain, loss, Some(groups)),
            })
        })
        .collect()
}

/// Per-trimester totals as a share of all trimester-tagged observations.
pub fn trimester_distribution(obs: &[MessageObservation]) -> Vec<TrimesterDistribution> {
    let mut by_trimester: BTreeMap<u8, Vec<&MessageObservation>> = BTreeMap::new();
    for o in obs {
        if let Some(t) = o.trimester {
            by_trimester.entry(t).or_default().push(o);
        }
    }
    let tagged: u64 = by_trimester.values().map(|v| v.len() as u64).sum();
    by_trimester
        .into_iter()
        .map(|(trimester, items)| {
            let (gain, loss) = frame_counts(items);
            TrimesterDistribution {
                trimester,
                total: gain + loss,
                percent_of_tagged: percent_2dp(gain + loss, tagged),
                shares: shares(gain, loss, None),
            }
        })
        .collect()
}

pub fn aggregate(obs: &[MessageObservation], census: &GroupCensus) -> Result<AggregateReport, AnalyticsError> {
    Ok(AggregateReport {
        overall: overall_distribution(obs),
        by_grade: grade_normalized(obs, census)?,
        by_trimester: trimester_distribution(obs),
    })
}

/// One row of the flat report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub breakdown: String,
    pub key: String,
    pub frame: String,
    pub count: u64,
    pub ratio: Option<String>,
    pub percent: Option<String>,
}

fn row(breakdown: &str, key: String, frame: &str, count: u64, ratio: Option<f64>, percent: Option<f64>) -> ReportRow {
    ReportRow {
        breakdown: breakdown.into(),
        key,
        frame: frame.into(),
        count,
        ratio: ratio.map(|r| format!("{r:.2}")),
        percent: percent.map(|p| format!("{p:.2}")),
    }
}

impl AggregateReport {
    /// Flattens the report: breakdowns in the order overall, grade,
    /// trimester; keys ascending; `gain` before `loss`, then a `total` row
    /// for grades and trimesters.
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = Vec::new();
        if let Some(o) = &self.overall {
            for s in &o.shares {
                rows.push(row(
                    "overall",
                    "all".into(),
                    s.frame.as_str(),
                    s.count,
                    None,
                    Some(s.percent),
                ));
            }
        }
        for g in &self.by_grade {
            for s in &g.shares {
                rows.push(row(
                    "grade",
                    g.grade.to_string(),
                    s.frame.as_str(),
                    s.count,
                    s.ratio,
                    Some(s.percent),
                ));
            }
            rows.push(row(
                "grade",
                g.grade.to_string(),
                "total",
                g.total,
                Some(g.total_ratio),
                None,
            ));
        }
        for t in &self.by_trimester {
            for s in &t.shares {
                rows.push(row(
                    "trimester",
                    t.trimester.to_string(),
                    s.frame.as_str(),
                    s.count,
                    None,
                    Some(s.percent),
                ));
            }
            rows.push(row(
                "trimester",
                t.trimester.to_string(),
                "total",
                t.total,
                None,
                Some(t.percent_of_tagged),
            ));
        }
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

pub fn write_report_csv<W: Write>(out: W, report: &AggregateReport) -> Result<(), AnalyticsError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["breakdown", "key", "frame", "count", "ratio", "percent"])?;
    for r in report.rows() {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes `report.csv` or `report.json` into `dir`; returns the path.
pub fn emit_report(report: &AggregateReport, format: ReportFormat, dir: &Path) -> Result<PathBuf, AnalyticsError> {
    let path = dir.join(match format {
        ReportFormat::Csv => "report.csv",
        ReportFormat::Json => "report.json",
    });
    let io = |source| AnalyticsError::Io {
        path: path.clone(),
        source,
    };
    let mut out = BufWriter::new(File::create(&path).map_err(io)?);
    match format {
        ReportFormat::Csv => write_report_csv(&mut out, report)?,
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, report)?;
            out.write_all(b"\n").map_err(io)?;
        }
    }
    out.flush().map_err(io)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(frame: Frame, grade: u8, trimester: Option<u8>, group: &str) -> MessageObservation {
        MessageObservation {
            text: "m".into(),
            frame,
            grade,
            trimester,
            group_id: group.into(),
            reference: None,
        }
    }

    fn many(n: usize, frame: Frame, grade: u8, trimester: Option<u8>) -> Vec<MessageObservation> {
        (0..n).map(|_| obs(frame, grade, trimester, "g")).collect()
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(percent_2dp(136, 202), 67.33);
        assert_eq!(percent_2dp(66, 202), 32.67);
        assert_eq!(ratio_2dp(66, 7), 9.43);
        assert_eq!(ratio_2dp(1, 8), 0.13); // 0.125 rounds up
        assert_eq!(percent_2dp(1, 3), 33.33);
    }

    #[test]
    fn overall_edge_cases() {
        assert_eq!(overall_distribution(&[]), None);
        let all_gain = overall_distribution(&many(5, Frame::Gain, 10, None)).unwrap();
        assert_eq!((all_gain.shares[0].percent, all_gain.shares[1].percent), (100.0, 0.0));
        let mut half = many(1, Frame::Gain, 10, None);
        half.extend(many(1, Frame::Loss, 10, None));
        let d = overall_distribution(&half).unwrap();
        assert_eq!((d.shares[0].percent, d.shares[1].percent), (50.0, 50.0));
    }

    #[test]
    fn one_grade_one_group() {
        let mut o = many(3, Frame::Gain, 9, None);
        o.extend(many(1, Frame::Loss, 9, None));
        let d = grade_normalized(&o, &GroupCensus::from([(9, 1)])).unwrap();
        assert_eq!(d[0].shares[0].ratio, Some(3.0));
        assert_eq!(d[0].shares[1].ratio, Some(1.0));
        assert_eq!((d[0].shares[0].percent, d[0].shares[1].percent), (75.0, 25.0));
    }

    #[test]
    fn missing_census_grade() {
        let o = many(1, Frame::Gain, 11, None);
        assert!(matches!(
            grade_normalized(&o, &GroupCensus::from([(9, 1)])),
            Err(AnalyticsError::MissingCensus(g)) if g == vec![11]
        ));
    }

    #[test]
    fn trimester_cases() {
        let d = trimester_distribution(&many(4, Frame::Gain, 9, Some(2)));
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].percent_of_tagged, 100.0);

        let mut o = Vec::new();
        for t in 1..=3 {
            o.extend(many(10, Frame::Loss, 9, Some(t)));
        }
        o.extend(many(7, Frame::Gain, 9, None));
        let d = trimester_distribution(&o);
        let sum: f64 = d.iter().map(|t| t.percent_of_tagged).sum();
        assert!(d.iter().all(|t| t.percent_of_tagged == 33.33));
        assert!((sum - 100.0).abs() <= 0.01 + 1e-9);
        assert_eq!(d.iter().map(|t| t.total).sum::<u64>(), 30);
    }

    #[test]
    fn census_counts_distinct_groups() {
        let c = census_from_groups([(9, "a"), (9, "b"), (9, "a"), (12, "z")]);
        assert_eq!(c, GroupCensus::from([(9, 2), (12, 1)]));
    }

    #[test]
    fn empty_report_is_header_only() {
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &AggregateReport::default()).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "breakdown,key,frame,count,ratio,percent\n"
        );
    }

    #[test]
    fn row_ordering() {
        let mut o = many(2, Frame::Loss, 12, Some(3));
        o.extend(many(1, Frame::Gain, 9, Some(1)));
        let census = GroupCensus::from([(9, 1), (12, 2)]);
        let rows = aggregate(&o, &census).unwrap().rows();
        let keys: Vec<String> = rows
            .iter()
            .map(|r| format!("{}/{}/{}", r.breakdown, r.key, r.frame))
            .collect();
        assert_eq!(
            keys,
            [
                "overall/all/gain",
                "overall/all/loss",
                "grade/9/gain",
                "grade/9/loss",
                "grade/9/total",
                "grade/12/gain",
                "grade/12/loss",
                "grade/12/total",
                "trimester/1/gain",
                "trimester/1/loss",
                "trimester/1/total",
                "trimester/3/gain",
                "trimester/3/loss",
                "trimester/3/total",
            ]
        );
    }
}
