//! Overlap metrics on binary masks, per case and pooled over cases.

use std::collections::BTreeMap;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default probability cut-off; ties count as foreground.
pub const THRESHOLD: f32 = 0.5;

pub fn binarize(prob: &[f32], threshold: f32) -> Vec<u8> {
    prob.iter().map(|&p| u8::from(p >= threshold)).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2TP / (2TP + FP + FN)`; 1 when both masks are empty.
    pub fn dsc(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }

    /// `TP / (TP + FN)`; with an empty reference, 1 if nothing was predicted.
    pub fn recall(&self) -> f64 {
        match self.tp + self.fn_ {
            0 => f64::from(u8::from(self.fp == 0)),
            den => self.tp as f64 / den as f64,
        }
    }

    /// `TP / (TP + FP)`; with an empty prediction, 1 only if the reference is empty too.
    pub fn precision(&self) -> f64 {
        match self.tp + self.fp {
            0 => f64::from(u8::from(self.fn_ == 0)),
            den => self.tp as f64 / den as f64,
        }
    }
}

fn check_binary(mask: &[u8], what: &str) -> Result<()> {
    match mask.iter().find(|v| **v > 1) {
        Some(v) => Err(Error::NonBinary {
            what: what.into(),
            value: *v as f64,
        }),
        None => Ok(()),
    }
}

pub fn confusion(pred: &[u8], gt: &[u8]) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} voxels, reference {}",
            pred.len(),
            gt.len()
        )));
    }
    check_binary(pred, "prediction")?;
    check_binary(gt, "reference")?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub dsc: f64,
    pub recall: f64,
    pub precision: f64,
    pub counts: ConfusionCounts,
}

impl From<ConfusionCounts> for CaseMetrics {
    fn from(counts: ConfusionCounts) -> Self {
        CaseMetrics {
            dsc: counts.dsc(),
            recall: counts.recall(),
            precision: counts.precision(),
            counts,
        }
    }
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

/// Box-plot summary with linearly interpolated quartiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl FiveNumber {
    pub fn of(values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        FiveNumber {
            min: s[0],
            q1: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            q3: quantile(&s, 0.75),
            max: s[s.len() - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_case: BTreeMap<String, CaseMetrics>,
    pub dsc: MeanStd,
    pub recall: MeanStd,
    pub precision: MeanStd,
    /// DSC of the confusion counts pooled over every voxel of every case.
    pub dsc_global: f64,
    pub boxplot: FiveNumber,
    pub std_convention: String,
}

pub fn aggregate(cases: impl IntoIterator<Item = (String, ConfusionCounts)>) -> Result<MetricsReport> {
    let per_case: BTreeMap<String, CaseMetrics> = cases.into_iter().map(|(id, c)| (id, c.into())).collect();
    if per_case.is_empty() {
        return Err(Error::InvalidArgument("no cases to aggregate".into()));
    }
    let mut pooled = ConfusionCounts::default();
    for m in per_case.values() {
        pooled += m.counts;
    }
    let col = |f: fn(&CaseMetrics) -> f64| per_case.values().map(f).collect::<Vec<f64>>();
    let dsc = col(|m| m.dsc);
    Ok(MetricsReport {
        dsc: MeanStd::of(&dsc),
        recall: MeanStd::of(&col(|m| m.recall)),
        precision: MeanStd::of(&col(|m| m.precision)),
        dsc_global: pooled.dsc(),
        boxplot: FiveNumber::of(&dsc),
        std_convention: "population".into(),
        per_case,
    })
}

fn group_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub const TABLE_HEADER: &str = "Method\tDSC\tDSC(global)\tRecall\tPrecision\tTotal parameters";

impl MetricsReport {
    pub fn table_row(&self, method: &str, total_parameters: Option<usize>) -> String {
        let ms = |m: MeanStd| format!("{:.4} ± {:.4}", m.mean, m.std);
        format!(
            "{method}\t{}\t{:.4}\t{}\t{}\t{}",
            ms(self.dsc),
            self.dsc_global,
            ms(self.recall),
            ms(self.precision),
            total_parameters.map_or_else(|| "-".to_string(), group_thousands)
        )
    }

    /// Tab-delimited comparison table with a header line.
    pub fn table(rows: &[(&str, &MetricsReport, Option<usize>)]) -> String {
        let mut out = String::from(TABLE_HEADER);
        out.push('\n');
        for (method, report, params) in rows {
            out.push_str(&report.table_row(method, *params));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    #[test]
    fn threshold_ties_go_up() {
        assert_eq!(binarize(&[0.5, 0.4999, 0.0, 1.0], THRESHOLD), vec![1, 0, 0, 1]);
    }

    #[test]
    fn counting_fixture() {
        let pred = [1, 1, 1, 1, 0, 0, 0];
        let gt = [1, 1, 0, 0, 1, 0, 0];
        let c = confusion(&pred, &gt).unwrap();
        assert_eq!(c, counts(2, 2, 1, 2));
        assert_eq!(c.dsc(), 4.0 / 7.0);
        assert_eq!(c.recall(), 2.0 / 3.0);
        assert_eq!(c.precision(), 0.5);
    }

    #[test]
    fn degenerate_conventions() {
        let empty = counts(0, 0, 0, 9);
        assert_eq!((empty.dsc(), empty.recall(), empty.precision()), (1.0, 1.0, 1.0));
        let missed = counts(0, 0, 3, 6);
        assert_eq!((missed.dsc(), missed.recall(), missed.precision()), (0.0, 0.0, 0.0));
        let spurious = counts(0, 3, 0, 6);
        assert_eq!((spurious.dsc(), spurious.recall(), spurious.precision()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn rejects_mismatch_and_non_binary() {
        assert!(confusion(&[0, 1], &[1]).is_err());
        assert!(confusion(&[2], &[1]).is_err());
    }

    #[test]
    fn aggregate_two_cases() {
        // DSC 0.4 and 0.6
        let r = aggregate(vec![("a".into(), counts(2, 3, 3, 0)), ("b".into(), counts(3, 2, 2, 0))]).unwrap();
        assert!((r.dsc.mean - 0.5).abs() < 1e-12);
        assert!((r.dsc.std - 0.1).abs() < 1e-12);
        assert!(aggregate(Vec::new()).is_err());
    }

    #[test]
    fn global_differs_from_mean_on_unequal_cases() {
        let r = aggregate(vec![("big".into(), counts(90, 10, 0, 0)), ("small".into(), counts(0, 1, 1, 0))]).unwrap();
        assert!((r.dsc_global - 180.0 / 192.0).abs() < 1e-12);
        assert!((r.dsc.mean - (180.0 / 190.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn five_number_interpolates() {
        let f = FiveNumber::of(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!((f.min, f.q1, f.median, f.q3, f.max), (1.0, 1.75, 2.5, 3.25, 4.0));
    }

    #[test]
    fn table_layout() {
        let r = aggregate(vec![("a".into(), counts(1, 0, 0, 1))]).unwrap();
        let t = MetricsReport::table(&[("Ours", &r, Some(8_640_163))]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], TABLE_HEADER);
        assert_eq!(lines[1], "Ours\t1.0000 ± 0.0000\t1.0000\t1.0000 ± 0.0000\t1.0000 ± 0.0000\t8,640,163");
    }

    fn masks() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (1usize..200).prop_flat_map(|n| (prop::collection::vec(0u8..=1, n), prop::collection::vec(0u8..=1, n)))
    }

    proptest! {
        #[test]
        fn dsc_is_harmonic_mean((p, g) in masks()) {
            let c = confusion(&p, &g).unwrap();
            let (pr, rc) = (c.precision(), c.recall());
            if pr + rc > 0.0 {
                prop_assert!((c.dsc() - 2.0 * pr * rc / (pr + rc)).abs() < 1e-12);
            }
            prop_assert_eq!(c.total() as usize, p.len());
        }

        #[test]
        fn dsc_is_symmetric((p, g) in masks()) {
            prop_assert_eq!(confusion(&p, &g).unwrap().dsc(), confusion(&g, &p).unwrap().dsc());
        }

        #[test]
        fn extra_true_positive_never_hurts(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
            let c = counts(tp, fp, fn_, 0);
            let more = counts(tp + 1, fp, fn_, 0);
            prop_assert!(more.dsc() >= c.dsc());
        }
    }
}
