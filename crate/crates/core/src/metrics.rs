//! Micro-F1, Hamming score and per-label error tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::runner::Run;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub micro_f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Mean column-wise Jaccard; multi-label corpora only.
    pub hamming_score: Option<f64>,
    pub per_label: BTreeMap<String, LabelCounts>,
    pub out_of_vocab_count: u64,
    pub unanswered_count: u64,
    pub columns: u64,
}

impl MetricsReport {
    pub fn totals(&self) -> LabelCounts {
        self.per_label
            .values()
            .fold(LabelCounts::default(), |a, c| LabelCounts {
                tp: a.tp + c.tp,
                fp: a.fp + c.fp,
                fn_: a.fn_ + c.fn_,
            })
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "micro_f1   {:.3}", self.micro_f1);
        let _ = writeln!(s, "precision  {:.3}", self.precision);
        let _ = writeln!(s, "recall     {:.3}", self.recall);
        if let Some(h) = self.hamming_score {
            let _ = writeln!(s, "hamming    {h:.3}");
        }
        let _ = writeln!(s, "columns    {}", self.columns);
        let _ = writeln!(s, "out_of_vocab {}", self.out_of_vocab_count);
        let _ = writeln!(s, "unanswered {}", self.unanswered_count);
        let width = self.per_label.keys().map(String::len).max().unwrap_or(5).max(5);
        let _ = writeln!(s, "\n{:<width$} {:>6} {:>6} {:>6}", "label", "tp", "fp", "fn");
        for (label, c) in &self.per_label {
            let _ = writeln!(s, "{label:<width$} {:>6} {:>6} {:>6}", c.tp, c.fp, c.fn_);
        }
        s
    }

    /// `label,tp,fp,fn` rows.
    pub fn per_label_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "tp", "fp", "fn"]).expect("in-memory write");
        for (label, c) in &self.per_label {
            w.write_record([label.clone(), c.tp.to_string(), c.fp.to_string(), c.fn_.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 csv")
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 from pooled counts.
pub fn micro_scores(t: LabelCounts) -> (f64, f64, f64) {
    let p = ratio(t.tp, t.tp + t.fp);
    let r = ratio(t.tp, t.tp + t.fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

fn check_split(run: &Run, corpus: &Corpus) -> Result<()> {
    for id in run.predictions.keys() {
        match corpus.table(id) {
            Some(t) if t.split == run.split => {}
            Some(t) => {
                return Err(Error::invalid(format!(
                    "run {} covers {} but table {id} belongs to {}",
                    run.run_id, run.split, t.split
                )))
            }
            None => {
                return Err(Error::invalid(format!(
                    "run {} predicts table {id}, which corpus {} lacks",
                    run.run_id, corpus.name
                )))
            }
        }
    }
    Ok(())
}

/// Scores `run` against the gold labels of its split. Excluded columns and
/// context columns are ignored.
pub fn score(run: &Run, corpus: &Corpus) -> Result<MetricsReport> {
    check_split(run, corpus)?;
    let vocab = &corpus.vocabulary;
    let multi = vocab.multi_label;
    let mut per_label: BTreeMap<String, LabelCounts> = vocab
        .labels
        .iter()
        .map(|l| (l.clone(), LabelCounts::default()))
        .collect();
    let mut oov = 0;
    let mut unanswered = 0;
    let mut columns = 0;
    let mut jaccard_sum = 0.0;
    let mut bump = |label: &str, f: fn(&mut LabelCounts)| f(per_label.entry(label.to_string()).or_default());
    for table in corpus.split(run.split) {
        for col in table.annotated_columns() {
            columns += 1;
            let gold = &table.gold[&col];
            let pred = run.prediction(&table.table_id, col);
            if pred.is_none() {
                unanswered += 1;
            }
            if multi {
                let mut predicted = BTreeSet::new();
                for (l, ok) in pred.iter().flat_map(|p| p.labels.iter().zip(&p.in_vocabulary)) {
                    if *ok {
                        predicted.insert(l.as_str());
                    } else {
                        oov += 1;
                    }
                }
                let gold: BTreeSet<&str> = gold.iter().map(String::as_str).collect();
                for l in gold.intersection(&predicted) {
                    bump(l, |c| c.tp += 1);
                }
                for l in gold.difference(&predicted) {
                    bump(l, |c| c.fn_ += 1);
                }
                for l in predicted.difference(&gold) {
                    bump(l, |c| c.fp += 1);
                }
                let union = gold.union(&predicted).count();
                jaccard_sum += if union == 0 {
                    1.0
                } else {
                    gold.intersection(&predicted).count() as f64 / union as f64
                };
            } else {
                let g = gold.iter().next().expect("annotated columns carry gold");
                match pred.and_then(|p| p.labels.first().zip(p.in_vocabulary.first())) {
                    None => bump(g, |c| c.fn_ += 1),
                    Some((_, false)) => {
                        oov += 1;
                        bump(g, |c| c.fn_ += 1);
                    }
                    Some((l, true)) if l == g => bump(g, |c| c.tp += 1),
                    Some((l, true)) => {
                        bump(g, |c| c.fn_ += 1);
                        bump(l, |c| c.fp += 1);
                    }
                }
            }
        }
    }
    let report_totals = per_label.values().fold(LabelCounts::default(), |a, c| LabelCounts {
        tp: a.tp + c.tp,
        fp: a.fp + c.fp,
        fn_: a.fn_ + c.fn_,
    });
    let (precision, recall, micro_f1) = micro_scores(report_totals);
    Ok(MetricsReport {
        micro_f1,
        precision,
        recall,
        hamming_score: multi.then(|| {
            if columns == 0 {
                0.0
            } else {
                jaccard_sum / columns as f64
            }
        }),
        per_label,
        out_of_vocab_count: oov,
        unanswered_count: unanswered,
        columns,
    })
}

/// Labels whose missed-column count exceeds `threshold`, most errors first.
pub fn error_table(run: &Run, corpus: &Corpus, threshold: u64) -> Result<Vec<(String, u64)>> {
    let report = score(run, corpus)?;
    Ok(errors_over(&report, threshold))
}

pub fn errors_over(report: &MetricsReport, threshold: u64) -> Vec<(String, u64)> {
    let mut rows: Vec<(String, u64)> = report
        .per_label
        .iter()
        .filter(|(_, c)| c.fn_ > threshold)
        .map(|(l, c)| (l.clone(), c.fn_))
        .collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    rows
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDelta {
    pub label: String,
    pub errors_a: u64,
    pub errors_b: u64,
    /// `errors_b - errors_a`
    pub delta: i64,
}

/// Per-label change in missed columns from run `a` to run `b`, for every
/// label with errors in either run, sorted by label.
pub fn diff_runs(a: &Run, b: &Run, corpus: &Corpus) -> Result<Vec<LabelDelta>> {
    let ra = score(a, corpus)?;
    let rb = score(b, corpus)?;
    Ok(diff_reports(&ra, &rb))
}

pub fn diff_reports(a: &MetricsReport, b: &MetricsReport) -> Vec<LabelDelta> {
    let labels: BTreeSet<&String> = a.per_label.keys().chain(b.per_label.keys()).collect();
    labels
        .into_iter()
        .filter_map(|l| {
            let ea = a.per_label.get(l).map_or(0, |c| c.fn_);
            let eb = b.per_label.get(l).map_or(0, |c| c.fn_);
            (ea > 0 || eb > 0).then(|| LabelDelta {
                label: l.clone(),
                errors_a: ea,
                errors_b: eb,
                delta: eb as i64 - ea as i64,
            })
        })
        .collect()
}

/// Field-wise mean of several reports, e.g. repeated runs of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedReport {
    pub runs: usize,
    pub micro_f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub hamming_score: Option<f64>,
    pub out_of_vocab_count: f64,
    pub unanswered_count: f64,
}

pub fn average_reports(reports: &[MetricsReport]) -> Option<AveragedReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let hamming = reports
        .iter()
        .map(|r| r.hamming_score)
        .collect::<Option<Vec<f64>>>()
        .map(|h| h.iter().sum::<f64>() / n);
    Some(AveragedReport {
        runs: reports.len(),
        micro_f1: mean(&|r| r.micro_f1),
        precision: mean(&|r| r.precision),
        recall: mean(&|r| r.recall),
        hamming_score: hamming,
        out_of_vocab_count: mean(&|r| r.out_of_vocab_count as f64),
        unanswered_count: mean(&|r| r.unanswered_count as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn micro_scores_arithmetic() {
        let (p, r, f) = micro_scores(LabelCounts { tp: 3, fp: 1, fn_: 1 });
        assert_eq!((p, r, f), (0.75, 0.75, 0.75));
        assert_eq!(micro_scores(LabelCounts::default()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn csv_and_text() {
        let report = MetricsReport {
            micro_f1: 1.0,
            precision: 1.0,
            recall: 1.0,
            hamming_score: None,
            per_label: [("Mass".to_string(), LabelCounts { tp: 2, fp: 0, fn_: 1 })].into(),
            out_of_vocab_count: 0,
            unanswered_count: 0,
            columns: 3,
        };
        assert_eq!(report.per_label_csv(), "label,tp,fp,fn\nMass,2,0,1\n");
        assert!(report.to_text().starts_with("micro_f1   1.000\n"));
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["per_label"]["Mass"]["fn"], 1);
    }

    #[test]
    fn delta_from_counts() {
        let mk = |n| MetricsReport {
            micro_f1: 0.0,
            precision: 0.0,
            recall: 0.0,
            hamming_score: None,
            per_label: [("Mass".to_string(), LabelCounts { tp: 0, fp: 0, fn_: n })].into(),
            out_of_vocab_count: 0,
            unanswered_count: 0,
            columns: n,
        };
        let d = diff_reports(&mk(25), &mk(11));
        assert_eq!(d[0].delta, -14);
        assert!(diff_reports(&mk(0), &mk(0)).is_empty());
    }
}
