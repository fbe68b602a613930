//! ROC AUC, sign-rule labels, macro-averaged metrics, confusion matrices and
//! multi-seed aggregation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::svdd::classify;
use crate::{Error, Result};

/// Scores paired with true labels (0 normal, 1 anomalous).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        check_lengths(scores.len(), labels.len())?;
        check_binary(&labels)?;
        Ok(Self { scores, labels })
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidArgument(format!("{a} predictions for {b} labels")));
    }
    Ok(())
}

fn check_binary(labels: &[u8]) -> Result<()> {
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidArgument(format!("label {l} is not binary")));
    }
    Ok(())
}

/// Mann-Whitney estimate with average ranks for ties.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    check_binary(labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numerical("NaN score in ROC computation".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("ROC AUC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Sign rule: positive scores are anomalous.
pub fn labels_from_scores(scores: &[f64]) -> Result<Vec<u8>> {
    scores.iter().map(|&s| classify(s)).collect()
}

/// Counts `[[tn, fp], [fn, tp]]`.
pub fn confusion_counts(pred: &[u8], truth: &[u8]) -> Result<[[usize; 2]; 2]> {
    check_lengths(pred.len(), truth.len())?;
    check_binary(pred)?;
    check_binary(truth)?;
    let mut m = [[0usize; 2]; 2];
    for (&p, &t) in pred.iter().zip(truth) {
        m[t as usize][p as usize] += 1;
    }
    Ok(m)
}

fn per_class(pred: &[u8], truth: &[u8]) -> Result<[(f64, f64); 2]> {
    let m = confusion_counts(pred, truth)?;
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok([0, 1].map(|c| {
        let predicted = m[0][c] + m[1][c];
        let actual = m[c][0] + m[c][1];
        (ratio(m[c][c], predicted), ratio(m[c][c], actual))
    }))
}

/// Macro-averaged precision and recall; an undefined per-class value counts as 0.
pub fn macro_precision_recall(pred: &[u8], truth: &[u8]) -> Result<(f64, f64)> {
    let pc = per_class(pred, truth)?;
    Ok(((pc[0].0 + pc[1].0) / 2.0, (pc[0].1 + pc[1].1) / 2.0))
}

/// Mean over both classes of the per-class F1.
pub fn macro_f1(pred: &[u8], truth: &[u8]) -> Result<f64> {
    let pc = per_class(pred, truth)?;
    let f1 = |(p, r): (f64, f64)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    Ok((f1(pc[0]) + f1(pc[1])) / 2.0)
}

/// Row-normalised confusion matrix in percent; `None` for an absent true class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionPct {
    /// `[tn, fp]` for true normals and `[fn, tp]` for true anomalies.
    pub rows: [Option<[f64; 2]>; 2],
}

impl ConfusionPct {
    /// Integer-rounded cells (`TN FP; FN TP`), `n/a` for missing rows.
    pub fn display(&self) -> String {
        let row = |r: Option<[f64; 2]>| match r {
            Some([a, b]) => format!("{} {}", a.round(), b.round()),
            None => "n/a n/a".into(),
        };
        format!("{}; {}", row(self.rows[0]), row(self.rows[1]))
    }

    pub fn cells(&self) -> [String; 4] {
        let cell = |r: Option<[f64; 2]>, i: usize| r.map_or("n/a".into(), |v| format!("{:.0}", v[i]));
        [cell(self.rows[0], 0), cell(self.rows[0], 1), cell(self.rows[1], 0), cell(self.rows[1], 1)]
    }
}

pub fn confusion_matrix_pct(pred: &[u8], truth: &[u8]) -> Result<ConfusionPct> {
    let m = confusion_counts(pred, truth)?;
    let rows = [0, 1].map(|t| {
        let total = m[t][0] + m[t][1];
        (total > 0).then(|| {
            let first = 100.0 * m[t][0] as f64 / total as f64;
            [first, 100.0 - first]
        })
    });
    Ok(ConfusionPct { rows })
}

/// Metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub roc_auc: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub confusion: ConfusionPct,
    pub seed: u64,
}

/// All metrics from raw scores via the sign rule.
pub fn evaluate(scores: &[f64], labels: &[u8], seed: u64) -> Result<EvalReport> {
    let roc_auc = roc_auc(scores, labels)?;
    let pred = labels_from_scores(scores)?;
    let (precision_macro, recall_macro) = macro_precision_recall(&pred, labels)?;
    Ok(EvalReport {
        roc_auc,
        precision_macro,
        recall_macro,
        f1_macro: macro_f1(&pred, labels)?,
        confusion: confusion_matrix_pct(&pred, labels)?,
        seed,
    })
}

/// Mean AUC over seeds; the remaining metrics come from the best seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub mean_auc: f64,
    pub std_auc: f64,
    pub best: EvalReport,
    pub runs: Vec<EvalReport>,
}

impl AggregateReport {
    pub fn from_runs(runs: Vec<EvalReport>) -> Result<Self> {
        let best = runs
            .iter()
            .fold(None::<&EvalReport>, |acc, r| match acc {
                Some(b) if b.roc_auc >= r.roc_auc => Some(b),
                _ => Some(r),
            })
            .cloned()
            .ok_or_else(|| Error::InvalidArgument("no runs to aggregate".into()))?;
        let n = runs.len() as f64;
        let mean_auc = runs.iter().map(|r| r.roc_auc).sum::<f64>() / n;
        let std_auc = (runs.iter().map(|r| (r.roc_auc - mean_auc).powi(2)).sum::<f64>() / n).sqrt();
        Ok(Self { mean_auc, std_auc, best, runs })
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.runs.iter().map(|r| r.seed).collect()
    }
}

/// Runs `run` once per seed and aggregates; the first failure aborts and names its seed.
pub fn multi_seed_report<F>(seeds: &[u64], mut run: F) -> Result<AggregateReport>
where
    F: FnMut(u64) -> Result<EvalReport>,
{
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let runs = seeds
        .iter()
        .map(|&s| run(s).map_err(|e| e.context(&format!("seed {s}"))))
        .collect::<Result<Vec<_>>>()?;
    AggregateReport::from_runs(runs)
}

const CSV_HEADER: &str = "method,roc_auc_mean,roc_auc_std,precision_macro,recall_macro,f1_macro,tn_pct,fp_pct,fn_pct,tp_pct,best_seed,seeds";

/// One CSV line per named report, fixed decimal formatting.
pub fn report_csv(rows: &[(String, AggregateReport)]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (name, r) in rows {
        let [tn, fp, fneg, tp] = r.best.confusion.cells();
        let seeds: Vec<String> = r.seeds().iter().map(u64::to_string).collect();
        let _ = writeln!(
            out,
            "{name},{:.6},{:.6},{:.6},{:.6},{:.6},{tn},{fp},{fneg},{tp},{},{}",
            r.mean_auc,
            r.std_auc,
            r.best.precision_macro,
            r.best.recall_macro,
            r.best.f1_macro,
            r.best.seed,
            seeds.join(" ")
        );
    }
    out
}

/// Aligned text table: method, ROC AUC, precision, recall, confusion (TN FP; FN TP).
pub fn report_table(rows: &[(String, AggregateReport)]) -> String {
    let header = ["Method", "ROC AUC", "Precision", "Recall", "Confusion (TN FP; FN TP) (%)"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|(name, r)| {
            [
                name.clone(),
                format!("{:.3}", r.mean_auc),
                format!("{:.3}", r.best.precision_macro),
                format!("{:.3}", r.best.recall_macro),
                r.best.confusion.display(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(&header.map(String::from));
    out += &line(&widths.map(|w| "-".repeat(w)));
    for row in &body {
        out += &line(row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_edge_cases() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.9, 1.0], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(roc_auc(&[0.1], &[1, 0]).is_err());
    }

    #[test]
    fn sign_rule_labels() {
        assert_eq!(labels_from_scores(&[-1.0, 0.2, 3.0]).unwrap(), vec![0, 1, 1]);
        assert_eq!(labels_from_scores(&[-1.0, -0.1, 0.0]).unwrap(), vec![0, 0, 0]);
        assert!(labels_from_scores(&[f64::NAN]).is_err());
    }

    #[test]
    fn macro_metrics_hand_cases() {
        let truth = [0, 0, 1, 1, 0];
        assert_eq!(macro_precision_recall(&truth, &truth).unwrap(), (1.0, 1.0));
        let truth = [0, 0, 0, 1];
        let (p, r) = macro_precision_recall(&[1; 4], &truth).unwrap();
        assert!((p - 0.125).abs() < 1e-15);
        assert!((r - 0.5).abs() < 1e-15);
        assert!(macro_precision_recall(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn confusion_patterns() {
        let truth = [0, 1, 0, 1];
        let perfect = confusion_matrix_pct(&truth, &truth).unwrap();
        assert_eq!(perfect.rows, [Some([100.0, 0.0]), Some([0.0, 100.0])]);
        let all = confusion_matrix_pct(&[1; 4], &truth).unwrap();
        assert_eq!(all.display(), "0 100; 0 100");
        let absent = confusion_matrix_pct(&[0, 1], &[1, 1]).unwrap();
        assert_eq!(absent.rows[0], None);
        assert!(absent.display().starts_with("n/a"));
    }

    #[test]
    fn confusion_matches_tally() {
        let truth = [0, 1, 1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 1, 1, 0, 1, 0, 0, 1, 0];
        let pred = [0, 1, 0, 0, 1, 1, 0, 1, 0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 1, 1];
        // 11 normals: 8 kept, 3 flagged; 9 anomalies: 3 missed, 6 caught.
        let c = confusion_matrix_pct(&pred, &truth).unwrap();
        let [n, a] = c.rows.map(Option::unwrap);
        assert!((n[0] - 800.0 / 11.0).abs() < 1e-12 && (n[1] - 300.0 / 11.0).abs() < 1e-12);
        assert!((a[0] - 300.0 / 9.0).abs() < 1e-12 && (a[1] - 600.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_takes_best_seed_details() {
        let mk = |auc: f64, seed| EvalReport {
            roc_auc: auc,
            precision_macro: auc / 2.0,
            recall_macro: auc / 3.0,
            f1_macro: 0.0,
            confusion: ConfusionPct { rows: [None, None] },
            seed,
        };
        let agg = multi_seed_report(&[1, 2, 3], |s| Ok(mk([0.6, 0.9, 0.75][s as usize - 1], s))).unwrap();
        assert!((agg.mean_auc - 0.75).abs() < 1e-12);
        assert_eq!(agg.best.seed, 2);
        let single = multi_seed_report(&[7], |s| Ok(mk(0.8, s))).unwrap();
        assert_eq!(single.mean_auc, 0.8);
        assert_eq!(single.best, single.runs[0]);
        let err = multi_seed_report(&[4, 5], |s| if s == 5 { Err(Error::Numerical("nan".into())) } else { Ok(mk(0.5, s)) })
            .unwrap_err();
        assert!(err.to_string().contains("seed 5"));
    }

    #[test]
    fn report_formats_are_stable() {
        let r = evaluate(&[-1.0, 2.0, 0.5, -0.2], &[0, 1, 1, 0], 3).unwrap();
        let agg = AggregateReport::from_runs(vec![r]).unwrap();
        let rows = vec![("early".to_string(), agg)];
        let csv = report_csv(&rows);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("early,1.000000,0.000000,"));
        let table = report_table(&rows);
        assert!(table.contains("100 0; 0 100"));
    }
}
