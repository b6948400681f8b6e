//! Mann-Whitney and Pearson tests, and the marker-behaviour association.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::chat::SessionRecord;
use crate::label::{Cohort, ParseEnumError};
use crate::markers::{delta_long, mean, MarkerSeries, MeanStd};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("sample is empty")]
    EmptySample,
    #[error("samples have different lengths ({0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("correlation is undefined: a variable has zero variance")]
    ZeroVariance,
    #[error("non-finite value in sample")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    MannWhitneyExact,
    MannWhitneyNormalApprox,
    Pearson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
    pub n: usize,
}

fn check_finite(xs: &[f64]) -> Result<(), StatsError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

/// Midranks (1-based) of `values` and the tie group sizes.
pub fn rank(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Null distribution of U for samples of sizes `m` and `n` without ties, as
/// probabilities indexed by U in `0..=m*n`.
pub fn mann_whitney_null(m: usize, n: usize) -> Vec<f64> {
    // counts[i][u]: arrangements of i first-sample and j second-sample values
    // with statistic u, rolled over j. At j = 0 only u = 0 is possible.
    let mut counts: Vec<Vec<f64>> = vec![vec![1.0]; m + 1];
    for j in 1..=n {
        let mut next: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        next.push(vec![1.0]);
        for i in 1..=m {
            let mut row = vec![0.0; i * j + 1];
            // largest value from the second sample adds nothing
            for (u, c) in counts[i].iter().enumerate() {
                row[u] += c;
            }
            // largest value from the first sample exceeds all j others
            for (u, c) in next[i - 1].iter().enumerate() {
                row[u + j] += c;
            }
            next.push(row);
        }
        counts = next;
    }
    let row = &counts[m];
    let total: f64 = row.iter().sum();
    let mut out = vec![0.0; m * n + 1];
    for (u, c) in row.iter().enumerate() {
        out[u] = c / total;
    }
    out
}

/// Two-sided Mann-Whitney U test. `statistic` is U of `a`: the number of
/// pairs with the `a` value above the `b` value, ties counting one half.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    check_finite(a)?;
    check_finite(b)?;
    let (na, nb) = (a.len(), b.len());
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = rank(&all);
    let ra: f64 = ranks[..na].iter().sum();
    let u = ra - (na * (na + 1)) as f64 / 2.0;
    let n_total = (na + nb) as f64;
    if na.min(nb) <= 8 && ties.is_empty() {
        let dist = mann_whitney_null(na, nb);
        let k = u.round() as usize;
        let lower: f64 = dist[..=k].iter().sum();
        let upper: f64 = dist[k..].iter().sum();
        return Ok(TestResult {
            statistic: u,
            p_value: (2.0 * lower.min(upper)).min(1.0),
            method: TestMethod::MannWhitneyExact,
            n: na + nb,
        });
    }
    let mu = (na * nb) as f64 / 2.0;
    let tie_term: f64 =
        ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n_total * (n_total - 1.0));
    let var = (na * nb) as f64 / 12.0 * ((n_total + 1.0) - tie_term);
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).unwrap();
        (2.0 * (1.0 - normal.cdf(z))).min(1.0)
    };
    Ok(TestResult {
        statistic: u,
        p_value: p,
        method: TestMethod::MannWhitneyNormalApprox,
        n: na + nb,
    })
}

/// Pearson correlation with a two-sided Student-t p-value on `n - 2` degrees
/// of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFewPoints(n));
    }
    check_finite(x)?;
    check_finite(y)?;
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if 1.0 - r.abs() <= f64::EPSILON {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).unwrap();
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(TestResult {
        statistic: r,
        p_value: p,
        method: TestMethod::Pearson,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behaviour {
    Mmse,
    Cdr,
}

impl Behaviour {
    fn score(self, s: &SessionRecord) -> Option<f64> {
        match self {
            Behaviour::Mmse => s.mmse.map(f64::from),
            Behaviour::Cdr => s.cdr,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Behaviour::Mmse => "mmse",
            Behaviour::Cdr => "cdr",
        }
    }

    /// +1 when higher scores mean better function, -1 otherwise.
    pub fn orientation(self) -> f64 {
        match self {
            Behaviour::Mmse => 1.0,
            Behaviour::Cdr => -1.0,
        }
    }
}

impl fmt::Display for Behaviour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Behaviour {
    type Err = ParseEnumError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mmse" => Ok(Behaviour::Mmse),
            "cdr" => Ok(Behaviour::Cdr),
            _ => Err(ParseEnumError::new("behaviour", s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationPoint {
    pub subject_id: String,
    pub cohort: Cohort,
    /// Mean behaviour score over the subject's scored sessions.
    pub x: f64,
    /// Mean adjacent-session marker change.
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub subject_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub behaviour: Behaviour,
    pub points: Vec<AssociationPoint>,
    pub excluded: Vec<Exclusion>,
    pub test: TestResult,
    /// `r` multiplied by the behaviour orientation, so that a positive value
    /// always means better function goes with less decline.
    pub sign_adjusted_r: f64,
}

/// Correlates each subject's mean behaviour score with its mean
/// adjacent-session marker change. Subjects with fewer than two sessions or
/// no behaviour score are excluded with a warning.
pub fn behaviour_association(
    series: &[MarkerSeries],
    sessions: &[SessionRecord],
    behaviour: Behaviour,
) -> Result<Association, StatsError> {
    let mut scores: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in sessions {
        if let Some(v) = behaviour.score(s) {
            scores.entry(s.subject_id.as_str()).or_default().push(v);
        }
    }
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for s in series {
        let y = match delta_long(s) {
            Ok(y) => y,
            Err(_) => {
                excluded.push(Exclusion {
                    subject_id: s.subject_id.clone(),
                    reason: format!("{} session(s); at least 2 needed", s.values.len()),
                });
                continue;
            }
        };
        match scores.get(s.subject_id.as_str()).and_then(|v| mean(v)) {
            Some(x) => points.push(AssociationPoint {
                subject_id: s.subject_id.clone(),
                cohort: s.cohort,
                x,
                y,
            }),
            None => {
                log::warn!(
                    "subject {} has no {behaviour} score; excluded",
                    s.subject_id
                );
                excluded.push(Exclusion {
                    subject_id: s.subject_id.clone(),
                    reason: format!("no {behaviour} score"),
                });
            }
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let test = pearson(&xs, &ys)?;
    Ok(Association {
        behaviour,
        sign_adjusted_r: behaviour.orientation() * test.statistic,
        points,
        excluded,
        test,
    })
}

/// Per-cohort description of marker and behaviour at the first visit next to
/// the subsequent change. Descriptive only; no test is run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnsetRow {
    pub cohort: Cohort,
    pub subjects: usize,
    pub onset_marker: Option<MeanStd>,
    pub onset_behaviour: Option<MeanStd>,
    pub delta_long: Option<MeanStd>,
}

pub fn onset_table(
    series: &[MarkerSeries],
    sessions: &[SessionRecord],
    behaviour: Behaviour,
) -> Vec<OnsetRow> {
    let mut first_score: BTreeMap<&str, (u32, f64)> = BTreeMap::new();
    for s in sessions {
        if let Some(v) = behaviour.score(s) {
            let e = first_score
                .entry(s.subject_id.as_str())
                .or_insert((s.visit_index, v));
            if s.visit_index < e.0 {
                *e = (s.visit_index, v);
            }
        }
    }
    Cohort::ALL
        .iter()
        .filter_map(|&cohort| {
            let members: Vec<&MarkerSeries> =
                series.iter().filter(|s| s.cohort == cohort).collect();
            if members.is_empty() {
                return None;
            }
            let onset: Vec<f64> = members
                .iter()
                .filter_map(|s| s.values.first().map(|v| v.1))
                .collect();
            let beh: Vec<f64> = members
                .iter()
                .filter_map(|s| first_score.get(s.subject_id.as_str()).map(|v| v.1))
                .collect();
            let dl: Vec<f64> = members.iter().filter_map(|s| delta_long(s).ok()).collect();
            Some(OnsetRow {
                cohort,
                subjects: members.len(),
                onset_marker: MeanStd::of(&onset),
                onset_behaviour: MeanStd::of(&beh),
                delta_long: MeanStd::of(&dl),
            })
        })
        .collect()
}

/// Minimal SVG scatter plot of association points, one colour per cohort,
/// with the least-squares line.
pub fn scatter_svg(
    points: &[AssociationPoint],
    x_label: &str,
    y_label: &str,
    title: &str,
) -> String {
    let (w, h, pad) = (640.0, 480.0, 60.0);
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let range = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            let m = 0.05 * (hi - lo);
            (lo - m, hi + m)
        }
    };
    let (x0, x1) = range(&xs);
    let (y0, y1) = range(&ys);
    let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n\
         <line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n\
         <text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        w / 2.0,
        xml_escape(title),
        h - pad,
        w - pad,
        h - pad,
        h - pad,
        w / 2.0,
        h - 16.0,
        xml_escape(x_label),
        h / 2.0,
        h / 2.0,
        xml_escape(y_label),
    );
    for (v, pos) in [(x0, 0.0), (x1, 1.0)] {
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{v:.2}</text>\n",
            pad + pos * (w - 2.0 * pad),
            h - pad + 16.0
        ));
    }
    for (v, pos) in [(y0, 0.0), (y1, 1.0)] {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{v:.3}</text>\n",
            pad - 4.0,
            h - pad - pos * (h - 2.0 * pad)
        ));
    }
    let colour = |c: Cohort| match c {
        Cohort::Healthy => "#1b9e77",
        Cohort::Mci => "#d95f02",
        Cohort::Ad => "#7570b3",
    };
    for p in points {
        svg.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"{}\" fill-opacity=\"0.8\"><title>{}</title></circle>\n",
            px(p.x),
            py(p.y),
            colour(p.cohort),
            xml_escape(&p.subject_id)
        ));
    }
    if let (Some(mx), Some(my)) = (mean(&xs), mean(&ys)) {
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        if sxx > 0.0 {
            let slope = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| (x - mx) * (y - my))
                .sum::<f64>()
                / sxx;
            let line = |x: f64| my + slope * (x - mx);
            svg.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"grey\" stroke-dasharray=\"4 3\"/>\n",
                px(x0),
                py(line(x0)),
                px(x1),
                py(line(x1))
            ));
        }
    }
    for (i, c) in Cohort::ALL.iter().enumerate() {
        let y = pad + 16.0 * i as f64;
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{y}\" r=\"4\" fill=\"{}\"/><text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{c}</text>\n",
            w - pad - 60.0,
            colour(*c),
            w - pad - 52.0,
            y + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markers::MarkerKind;
    use proptest::prelude::*;

    /// Exhaustive two-sided p: every way of choosing which positions of the
    /// pooled sample belong to the first group.
    fn brute_force_p(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        let u_of = |mask: u32| {
            let mut u = 0.0;
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    for j in 0..n {
                        if mask >> j & 1 == 0 && pooled[i] > pooled[j] {
                            u += 1.0;
                        }
                    }
                }
            }
            u
        };
        let observed = u_of((1u32 << a.len()) - 1);
        let (mut le, mut ge, mut total) = (0.0, 0.0, 0.0);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != a.len() {
                continue;
            }
            let u = u_of(mask);
            total += 1.0;
            le += (u <= observed) as u8 as f64;
            ge += (u >= observed) as u8 as f64;
        }
        (2.0 * (le.min(ge) / total)).min(1.0)
    }

    #[test]
    fn mann_whitney_examples() {
        let r = mann_whitney(&[1.0, 2.0, 3.0], &[10.0, 11.0, 12.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.method, TestMethod::MannWhitneyExact);
        // one extreme arrangement of 20, doubled
        assert!((r.p_value - 0.1).abs() < 1e-12);
        let same = mann_whitney(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(same.method, TestMethod::MannWhitneyNormalApprox);
        assert!(same.p_value > 0.9);
        assert_eq!(
            mann_whitney(&[], &[1.0]).unwrap_err(),
            StatsError::EmptySample
        );
    }

    #[test]
    fn exact_matches_enumeration() {
        let values: Vec<f64> = (0..12)
            .map(|i| ((i * 7) % 12) as f64 + 0.25 * i as f64)
            .collect();
        for na in 1..12 {
            for nb in 1..=(12 - na) {
                let a = &values[..na];
                let b = &values[na..na + nb];
                let r = mann_whitney(a, b).unwrap();
                assert_eq!(r.method, TestMethod::MannWhitneyExact);
                assert!((r.p_value - brute_force_p(a, b)).abs() < 1e-12, "{na} {nb}");
            }
        }
    }

    #[test]
    fn null_distribution_sums_to_one() {
        let d = mann_whitney_null(4, 5);
        assert_eq!(d.len(), 21);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // C(9,4) = 126 arrangements, one with U = 0
        assert!((d[0] - 1.0 / 126.0).abs() < 1e-15);
    }

    #[test]
    fn normal_approximation_for_large_samples() {
        let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..30).map(|i| i as f64 + 20.5).collect();
        let r = mann_whitney(&a, &b).unwrap();
        assert_eq!(r.method, TestMethod::MannWhitneyNormalApprox);
        assert!(r.p_value < 1e-4);
    }

    #[test]
    fn moving_apart_never_raises_p() {
        let a = [1.0, 3.0, 4.5, 7.0, 8.0, 9.5, 11.0, 12.0, 13.0, 15.0];
        let base = [2.0, 5.0, 6.0, 10.0, 14.0, 16.0, 17.0, 18.0, 19.0, 20.0];
        let mut last = 1.0;
        for shift in 0..10 {
            let b: Vec<f64> = base.iter().map(|x| x + shift as f64 * 1.5).collect();
            let p = mann_whitney(&a, &b).unwrap().p_value;
            assert!(p <= last + 1e-15);
            last = p;
        }
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let r = pearson(&x, &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r.statistic - 0.6).abs() < 1e-12);
        // t = 0.6 * sqrt(2 / 0.64) = 1.0607; with 2 dof F(t) = 1/2 + t / (2 sqrt(2 + t^2))
        let t: f64 = 0.6 * (2.0f64 / 0.64).sqrt();
        let p = 2.0 * (0.5 - t / (2.0 * (2.0 + t * t).sqrt()));
        assert!((r.p_value - p).abs() < 1e-9);
        assert!((r.p_value - 0.4).abs() < 1e-9);
        assert!((pearson(&x, &x.map(|v| 2.0 * v + 1.0)).unwrap().statistic - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &x.map(|v| -v)).unwrap().statistic + 1.0).abs() < 1e-12);
        assert_eq!(
            pearson(&x, &[1.0; 4]).unwrap_err(),
            StatsError::ZeroVariance
        );
        assert_eq!(
            pearson(&x[..2], &x[..2]).unwrap_err(),
            StatsError::TooFewPoints(2)
        );
    }

    fn session(subject: &str, visit: u32, mmse: Option<u8>, cdr: Option<f64>) -> SessionRecord {
        SessionRecord {
            subject_id: subject.into(),
            cohort: Cohort::Ad,
            visit_index: visit,
            utterances: Vec::new(),
            mmse,
            cdr,
            warnings: Vec::new(),
        }
    }

    #[test]
    fn association_accounting() {
        let mut series = Vec::new();
        let mut sessions = Vec::new();
        for (i, mmse) in [30u8, 26, 22, 18, 14].iter().enumerate() {
            let id = format!("s{i}");
            let slope = -0.01 * (30 - mmse) as f64;
            series.push(MarkerSeries::new(
                &id,
                Cohort::Ad,
                MarkerKind::Communication,
                vec![(1, 0.8), (2, 0.8 + slope), (3, 0.8 + 2.0 * slope)],
            ));
            sessions.push(session(
                &id,
                1,
                Some(*mmse),
                Some(if *mmse > 20 { 0.5 } else { 2.0 }),
            ));
            sessions.push(session(&id, 2, None, None));
        }
        series.push(MarkerSeries::new(
            "single",
            Cohort::Ad,
            MarkerKind::Communication,
            vec![(1, 0.5)],
        ));
        series.push(MarkerSeries::new(
            "unscored",
            Cohort::Ad,
            MarkerKind::Communication,
            vec![(1, 0.5), (2, 0.4)],
        ));
        let a = behaviour_association(&series, &sessions, Behaviour::Mmse).unwrap();
        assert_eq!(a.points.len() + a.excluded.len(), series.len());
        assert_eq!(a.excluded.len(), 2);
        assert!((a.test.statistic - 1.0).abs() < 1e-12);
        let c = behaviour_association(&series, &sessions, Behaviour::Cdr).unwrap();
        assert!(c.test.statistic < 0.0);
        assert_eq!(c.sign_adjusted_r, -c.test.statistic);

        let flat: Vec<MarkerSeries> = (0..4)
            .map(|i| {
                MarkerSeries::new(
                    format!("s{i}"),
                    Cohort::Ad,
                    MarkerKind::Communication,
                    vec![(1, 0.5), (2, 0.5)],
                )
            })
            .collect();
        assert_eq!(
            behaviour_association(&flat, &sessions, Behaviour::Mmse).unwrap_err(),
            StatsError::ZeroVariance
        );

        let svg = scatter_svg(&a.points, "mean MMSE", "mean change", "communication");
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), a.points.len() + 3);

        let onset = onset_table(&series, &sessions, Behaviour::Mmse);
        assert_eq!(onset.len(), 1);
        assert_eq!(onset[0].subjects, 7);
        assert_eq!(onset[0].onset_behaviour.unwrap().n, 5);
    }

    proptest! {
        #[test]
        fn pearson_symmetric_and_affine_invariant(
            pts in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 3..30),
            scale in 0.1..10.0f64,
            shift in -100.0..100.0f64,
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let Ok(r) = pearson(&x, &y) {
                prop_assert!((r.statistic - pearson(&y, &x).unwrap().statistic).abs() < 1e-12);
                let x2: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
                prop_assert!((r.statistic - pearson(&x2, &y).unwrap().statistic).abs() < 1e-9);
                prop_assert!((0.0..=1.0).contains(&r.p_value));
            }
        }

        #[test]
        fn mann_whitney_p_in_unit_interval(
            a in prop::collection::vec(-10.0..10.0f64, 1..15),
            b in prop::collection::vec(-10.0..10.0f64, 1..15),
        ) {
            let r = mann_whitney(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            prop_assert!((0.0..=(a.len() * b.len()) as f64).contains(&r.statistic));
        }
    }
}
