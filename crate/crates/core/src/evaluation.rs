//! Accuracy, improvement buckets, per-experience efficiency and training curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Variant;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("run has no cases")]
    EmptyRun,
    #[error("reports cover different instance ids")]
    IdMismatch,
    #[error("experience count must be positive")]
    ZeroCount,
    #[error("checkpoints must be non-empty, start at 0 and strictly increase")]
    NonMonotoneCheckpoints,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub prediction: Option<String>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub n_cases: usize,
    pub n_correct: usize,
    /// Experiences eligible for retrieval under this variant.
    pub memory_count: usize,
    pub per_case: BTreeMap<String, CaseOutcome>,
}

impl RunReport {
    pub fn new(
        variant: Variant,
        memory_count: usize,
        per_case: BTreeMap<String, CaseOutcome>,
    ) -> Self {
        let n_correct = per_case.values().filter(|c| c.correct).count();
        Self {
            variant,
            n_cases: per_case.len(),
            n_correct,
            memory_count,
            per_case,
        }
    }

    pub fn accuracy(&self) -> Result<f64, EvalError> {
        accuracy(self)
    }
}

pub fn accuracy(report: &RunReport) -> Result<f64, EvalError> {
    if report.n_cases == 0 {
        return Err(EvalError::EmptyRun);
    }
    Ok(report.n_correct as f64 / report.n_cases as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCounts {
    pub ff: usize,
    pub ft: usize,
    pub tt: usize,
    pub tf: usize,
}

impl BucketCounts {
    pub fn total(&self) -> usize {
        self.ff + self.ft + self.tt + self.tf
    }

    /// `(label, count)` in F=>F, F=>T, T=>T, T=>F order.
    pub fn rows(&self) -> [(&'static str, usize); 4] {
        [
            ("F=>F", self.ff),
            ("F=>T", self.ft),
            ("T=>T", self.tt),
            ("T=>F", self.tf),
        ]
    }
}

/// Partitions cases by (correct in `base`, correct in `treated`).
pub fn improvement_analysis(
    base: &RunReport,
    treated: &RunReport,
) -> Result<BucketCounts, EvalError> {
    if base.per_case.len() != treated.per_case.len()
        || !base.per_case.keys().eq(treated.per_case.keys())
    {
        return Err(EvalError::IdMismatch);
    }
    let mut b = BucketCounts::default();
    for (before, after) in base.per_case.values().zip(treated.per_case.values()) {
        match (before.correct, after.correct) {
            (false, false) => b.ff += 1,
            (false, true) => b.ft += 1,
            (true, true) => b.tt += 1,
            (true, false) => b.tf += 1,
        }
    }
    Ok(b)
}

/// Accuracy lift over the disabled variant per stored experience. Units follow
/// the inputs (percentage points in, points per experience out).
pub fn efficiency(perf_type: f64, perf_disabled: f64, count: usize) -> Result<f64, EvalError> {
    if count == 0 {
        return Err(EvalError::ZeroCount);
    }
    Ok((perf_type - perf_disabled) / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub rows: Vec<(usize, f64)>,
}

pub fn training_curve(checkpoints: &[(usize, f64)]) -> Result<CurveTable, EvalError> {
    let starts_at_zero = checkpoints.first().is_some_and(|(n, _)| *n == 0);
    let increasing = checkpoints.windows(2).all(|w| w[0].0 < w[1].0);
    if !starts_at_zero || !increasing {
        return Err(EvalError::NonMonotoneCheckpoints);
    }
    Ok(CurveTable {
        rows: checkpoints.to_vec(),
    })
}

impl CurveTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("n_train\taccuracy\n");
        for (n, acc) in &self.rows {
            writeln!(out, "{n}\t{acc}").unwrap();
        }
        out
    }
}

/// Formats `x` with three significant figures, e.g. 61.0, 0.219, 100.
pub fn sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.2}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (2 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Accuracy as a percentage at three significant figures.
pub fn percent(acc: f64) -> String {
    sig3(acc * 100.0)
}

/// Plain aligned-column rendering; the first row is the header.
pub fn render_aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| format!("{cell:<w$}", w = widths[c]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("  "));
            out.push('\n');
        }
    }
    out
}

pub fn render_tsv(rows: &[Vec<String>]) -> String {
    rows.iter().map(|r| r.join("\t") + "\n").collect()
}

/// Variant table rows: variant, accuracy %, experiences, cell as "61.0 (128)".
pub fn variant_rows(reports: &[RunReport]) -> Result<Vec<Vec<String>>, EvalError> {
    let mut rows = vec![vec![
        "variant".to_string(),
        "accuracy".to_string(),
        "experiences".to_string(),
        "cell".to_string(),
    ]];
    for r in reports {
        let acc = percent(r.accuracy()?);
        rows.push(vec![
            r.variant.to_string(),
            acc.clone(),
            r.memory_count.to_string(),
            format!("{acc} ({})", r.memory_count),
        ]);
    }
    Ok(rows)
}

/// Efficiency rows for positive/negative reports relative to the disabled one.
pub fn efficiency_rows(reports: &[RunReport]) -> Result<Vec<Vec<String>>, EvalError> {
    let mut rows = vec![vec!["type".to_string(), "efficiency".to_string()]];
    let Some(disabled) = reports.iter().find(|r| r.variant == Variant::Disabled) else {
        return Ok(rows);
    };
    let base = disabled.accuracy()? * 100.0;
    for r in reports
        .iter()
        .filter(|r| matches!(r.variant, Variant::Positive | Variant::Negative))
    {
        let eff = efficiency(r.accuracy()? * 100.0, base, r.memory_count)?;
        rows.push(vec![r.variant.to_string(), format!("{eff:.3}")]);
    }
    Ok(rows)
}

/// F=>F / F=>T / T=>T / T=>F rows with counts and fractions of all cases.
pub fn bucket_rows(b: &BucketCounts) -> Vec<Vec<String>> {
    let total = b.total().max(1) as f64;
    let mut rows = vec![vec![
        "bucket".to_string(),
        "count".to_string(),
        "fraction".to_string(),
    ]];
    for (label, n) in b.rows() {
        rows.push(vec![
            label.to_string(),
            n.to_string(),
            format!("{:.3}", n as f64 / total),
        ]);
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn report(variant: Variant, correct: &[bool]) -> RunReport {
        let per_case = correct
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                (
                    format!("case-{i:02}"),
                    CaseOutcome {
                        prediction: Some("x".into()),
                        correct: c,
                    },
                )
            })
            .collect();
        RunReport::new(variant, 0, per_case)
    }

    #[test]
    fn accuracy_values() {
        let mut flags = vec![true; 61];
        flags.extend(vec![false; 39]);
        assert_eq!(report(Variant::Full, &flags).accuracy().unwrap(), 0.61);
        assert_eq!(report(Variant::Full, &[false; 10]).accuracy().unwrap(), 0.0);
        assert_eq!(report(Variant::Full, &[true; 7]).accuracy().unwrap(), 1.0);
        assert_eq!(
            report(Variant::Full, &[]).accuracy(),
            Err(EvalError::EmptyRun)
        );
    }

    #[test]
    fn buckets_simple() {
        let base = report(Variant::Disabled, &[false; 4]);
        let treated = report(Variant::Full, &[true; 4]);
        assert_eq!(
            improvement_analysis(&base, &treated).unwrap(),
            BucketCounts {
                ff: 0,
                ft: 4,
                tt: 0,
                tf: 0
            }
        );
        let b = improvement_analysis(&treated, &treated).unwrap();
        assert_eq!((b.ft, b.tf), (0, 0));
    }

    #[test]
    fn buckets_six_case_enumeration() {
        let before = [false, false, true, true, false, true];
        let after = [false, true, true, false, true, true];
        // brute force: tally each pair by hand-written lookup
        let mut want = BucketCounts::default();
        for (b, a) in before.iter().zip(&after) {
            let slot = match (b, a) {
                (false, false) => &mut want.ff,
                (false, true) => &mut want.ft,
                (true, true) => &mut want.tt,
                (true, false) => &mut want.tf,
            };
            *slot += 1;
        }
        assert_eq!(
            want,
            BucketCounts {
                ff: 1,
                ft: 2,
                tt: 2,
                tf: 1
            }
        );
        let got = improvement_analysis(
            &report(Variant::Disabled, &before),
            &report(Variant::Full, &after),
        )
        .unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn bucket_id_mismatch() {
        let a = report(Variant::Disabled, &[true; 3]);
        let b = report(Variant::Full, &[true; 4]);
        assert_eq!(improvement_analysis(&a, &b), Err(EvalError::IdMismatch));
        let mut c = report(Variant::Full, &[true; 3]);
        let v = c.per_case.remove("case-02").unwrap();
        c.per_case.insert("other".into(), v);
        assert_eq!(improvement_analysis(&a, &c), Err(EvalError::IdMismatch));
    }

    #[test]
    fn efficiency_examples() {
        assert!((efficiency(51.0, 35.0, 73).unwrap() - 0.219).abs() <= 0.0005);
        assert!((efficiency(55.0, 35.0, 55).unwrap() - 0.364).abs() <= 0.0005);
        assert_eq!(efficiency(35.0, 35.0, 10).unwrap(), 0.0);
        assert!(efficiency(30.0, 35.0, 10).unwrap() < 0.0);
        assert_eq!(efficiency(1.0, 0.0, 0), Err(EvalError::ZeroCount));
    }

    #[test]
    fn curve_checks() {
        let t = training_curve(&[(0, 0.35), (200, 0.61)]).unwrap();
        assert_eq!(t.rows.first().unwrap().1, 0.35);
        assert_eq!(t.rows.last().unwrap().1, 0.61);
        assert_eq!(training_curve(&[(0, 0.5)]).unwrap().rows.len(), 1);
        assert_eq!(
            training_curve(&[(0, 0.1), (20, 0.2), (10, 0.3)]),
            Err(EvalError::NonMonotoneCheckpoints)
        );
        assert_eq!(
            training_curve(&[(0, 0.1), (0, 0.2)]),
            Err(EvalError::NonMonotoneCheckpoints)
        );
        assert_eq!(training_curve(&[]), Err(EvalError::NonMonotoneCheckpoints));
        assert_eq!(t.to_tsv(), "n_train\taccuracy\n0\t0.35\n200\t0.61\n");
    }

    #[test]
    fn three_significant_figures() {
        assert_eq!(percent(0.61), "61.0");
        assert_eq!(percent(1.0), "100");
        assert_eq!(percent(0.05), "5.00");
        assert_eq!(sig3(0.21917), "0.219");
    }

    #[test]
    fn aligned_rendering() {
        let rows = vec![
            vec!["variant".to_string(), "acc".to_string()],
            vec!["full".to_string(), "61.0".to_string()],
        ];
        assert_eq!(
            render_aligned(&rows),
            "variant  acc\n-------  ----\nfull     61.0\n"
        );
    }

    proptest! {
        #[test]
        fn efficiency_linear_and_antisymmetric(a in -100.0f64..100.0, b in -100.0f64..100.0,
                                               c in -100.0f64..100.0, n in 1usize..500) {
            let sum = efficiency(a + c, b, n).unwrap();
            let parts = efficiency(a, b, n).unwrap() + c / n as f64;
            prop_assert!((sum - parts).abs() < 1e-9);
            let swapped = efficiency(b, a, n).unwrap();
            prop_assert!((efficiency(a, b, n).unwrap() + swapped).abs() < 1e-9);
        }

        #[test]
        fn buckets_permutation_invariant(flags in proptest::collection::vec(any::<(bool, bool)>(), 1..30),
                                         seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let before: Vec<bool> = flags.iter().map(|f| f.0).collect();
            let after: Vec<bool> = flags.iter().map(|f| f.1).collect();
            let got = improvement_analysis(&report(Variant::Disabled, &before), &report(Variant::Full, &after)).unwrap();
            let mut shuffled = flags.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let before2: Vec<bool> = shuffled.iter().map(|f| f.0).collect();
            let after2: Vec<bool> = shuffled.iter().map(|f| f.1).collect();
            let again = improvement_analysis(&report(Variant::Disabled, &before2), &report(Variant::Full, &after2)).unwrap();
            prop_assert_eq!(got, again);
            prop_assert_eq!(got.total(), flags.len());
        }
    }
}
