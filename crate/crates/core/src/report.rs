//! Tabular writers and readers: metric reports, aggregate tables in the
//! reference layout, vote/prediction CSV files, and corpus statistics.
//!
//! Rendered tables use the percent convention with two decimals; the
//! machine-readable single-report CSV uses raw fractions.

use std::collections::BTreeMap;
use std::path::Path;

use crate::corpus::CorpusStats;
use crate::ensemble::VoteRecord;
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, METRIC_FIELDS};

/// One table cell: a plain value or mean ± std.
#[derive(Debug, Clone, Copy)]
pub enum Cell {
    Single(f64),
    MeanStd(f64, f64),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Single(v) => format!("{v:.2}"),
            Cell::MeanStd(m, s) => format!("{m:.2} ± {s:.2}"),
        }
    }
}

/// One aggregate row: a scenario under a post-processing variant.
#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub scenario: String,
    pub variant: String,
    pub cells: [Cell; 10],
}

impl AggregateRow {
    pub fn single(scenario: &str, variant: &str, report: &MetricsReport) -> Self {
        let values = report.values();
        Self {
            scenario: scenario.to_string(),
            variant: variant.to_string(),
            cells: std::array::from_fn(|i| Cell::Single(values[i])),
        }
    }

    pub fn mean_std(
        scenario: &str,
        variant: &str,
        mean: &MetricsReport,
        std: &MetricsReport,
    ) -> Self {
        let m = mean.values();
        let s = std.values();
        Self {
            scenario: scenario.to_string(),
            variant: variant.to_string(),
            cells: std::array::from_fn(|i| Cell::MeanStd(m[i], s[i])),
        }
    }
}

/// Aggregate table as CSV with `mean ± std` cells.
pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("scenario,variant,");
    out.push_str(&METRIC_FIELDS.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.scenario);
        out.push(',');
        out.push_str(&row.variant);
        for cell in &row.cells {
            out.push(',');
            let rendered = cell.render();
            if rendered.contains(',') {
                out.push('"');
                out.push_str(&rendered);
                out.push('"');
            } else {
                out.push_str(&rendered);
            }
        }
        out.push('\n');
    }
    out
}

/// Aggregate table as Markdown.
pub fn aggregate_md(rows: &[AggregateRow]) -> String {
    let mut out = String::from("| scenario | variant |");
    for f in METRIC_FIELDS {
        out.push_str(&format!(" {f} |"));
    }
    out.push('\n');
    out.push_str("|---|---|");
    out.push_str(&"---:|".repeat(10));
    out.push('\n');
    for row in rows {
        out.push_str(&format!("| {} | {} |", row.scenario, row.variant));
        for cell in &row.cells {
            out.push_str(&format!(" {} |", cell.render()));
        }
        out.push('\n');
    }
    out
}

/// Single report as machine-readable CSV (raw fractions, flags column).
pub fn report_csv(report: &MetricsReport) -> String {
    let mut out = METRIC_FIELDS.join(",");
    out.push_str(",zero_division\n");
    let values = report.values();
    let row: Vec<String> = values.iter().map(|v| format!("{}", v / 100.0)).collect();
    out.push_str(&row.join(","));
    out.push(',');
    out.push_str(&report.zero_division.join(";"));
    out.push('\n');
    out
}

/// Single report rendered as a Markdown table (percent, two decimals).
pub fn report_md(report: &MetricsReport) -> String {
    let mut out = String::from("|");
    for f in METRIC_FIELDS {
        out.push_str(&format!(" {f} |"));
    }
    out.push('\n');
    out.push('|');
    out.push_str(&"---:|".repeat(10));
    out.push('\n');
    out.push('|');
    for v in report.values() {
        out.push_str(&format!(" {v:.2} |"));
    }
    out.push('\n');
    if !report.zero_division.is_empty() {
        out.push_str(&format!(
            "\nzero-division fallback (reported as 0): {}\n",
            report.zero_division.join(", ")
        ));
    }
    out
}

/// Votes as CSV: doc_id,v1..vN,final,was_tie.
pub fn votes_csv(records: &[VoteRecord]) -> String {
    let n = records.first().map(|r| r.votes.len()).unwrap_or(0);
    let mut out = String::from("doc_id");
    for i in 1..=n {
        out.push_str(&format!(",v{i}"));
    }
    out.push_str(",final,was_tie\n");
    for rec in records {
        out.push_str(&rec.doc_id);
        for v in &rec.votes {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{},{}\n", rec.final_label, rec.was_tie));
    }
    out
}

/// Predictions as CSV: doc_id,label,score.
pub fn predictions_csv(preds: &[crate::backend::Prediction]) -> String {
    let mut out = String::from("doc_id,label,score\n");
    for p in preds {
        out.push_str(&format!("{},{},{}\n", p.doc_id, p.label, p.score));
    }
    out
}

/// Read hard predictions from either a predictions CSV (`doc_id,label,score`)
/// or a votes CSV (`doc_id,v1..,final,was_tie`), detected by header.
pub fn read_hard_predictions(path: &Path) -> Result<Vec<(String, u8)>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::schema(path.display().to_string(), e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::schema(path.display().to_string(), e.to_string()))?
        .clone();
    let label_col = headers
        .iter()
        .position(|h| h == "final")
        .or_else(|| headers.iter().position(|h| h == "label"))
        .ok_or_else(|| {
            Error::schema(
                path.display().to_string(),
                "no 'label' or 'final' column in predictions file",
            )
        })?;
    let id_col = headers
        .iter()
        .position(|h| h == "doc_id")
        .ok_or_else(|| Error::schema(path.display().to_string(), "no 'doc_id' column"))?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| {
            Error::schema(format!("{}:{}", path.display(), i + 2), e.to_string())
        })?;
        let id = row
            .get(id_col)
            .ok_or_else(|| {
                Error::schema(format!("{}:{}", path.display(), i + 2), "missing doc_id")
            })?
            .to_string();
        let label: u8 = row
            .get(label_col)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| {
                Error::value(
                    format!("{}:{}", path.display(), i + 2),
                    "label must be 0 or 1",
                )
            })?;
        if label > 1 {
            return Err(Error::value(
                format!("{}:{}", path.display(), i + 2),
                format!("label must be 0 or 1, got {label}"),
            ));
        }
        out.push((id, label));
    }
    Ok(out)
}

/// Read a full predictions CSV (doc_id,label,score).
pub fn read_predictions(path: &Path) -> Result<Vec<crate::backend::Prediction>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::schema(path.display().to_string(), e.to_string()))?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let location = || format!("{}:{}", path.display(), i + 2);
        let row = row.map_err(|e| Error::schema(location(), e.to_string()))?;
        let doc_id = row
            .get(0)
            .ok_or_else(|| Error::schema(location(), "missing doc_id"))?
            .to_string();
        let label: u8 = row
            .get(1)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::value(location(), "bad label"))?;
        let score: f64 = row
            .get(2)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::value(location(), "bad score"))?;
        out.push(crate::backend::Prediction {
            doc_id,
            label,
            score,
        });
    }
    Ok(out)
}

/// Corpus statistics as CSV (long format).
pub fn stats_csv(stats: &CorpusStats) -> String {
    let mut out = String::from("key,split,value\n");
    out.push_str(&format!("n_total,all,{}\n", stats.n_total));
    out.push_str(&format!("n_pos,all,{}\n", stats.n_pos));
    out.push_str(&format!("n_neg,all,{}\n", stats.n_neg));
    if let Some(ratio) = stats.pos_neg_ratio {
        out.push_str(&format!("neg_per_pos,all,{ratio:.4}\n"));
    }
    out.push_str(&format!("avg_tokens,all,{:.4}\n", stats.avg_tokens));
    out.push_str(&format!("avg_sentences,all,{:.4}\n", stats.avg_sentences));
    for (split, summary) in &stats.per_split {
        out.push_str(&format!("n_docs,{split},{}\n", summary.n_docs));
        out.push_str(&format!("avg_tokens,{split},{:.4}\n", summary.avg_tokens));
        out.push_str(&format!(
            "avg_sentences,{split},{:.4}\n",
            summary.avg_sentences
        ));
    }
    for (topic, by_split) in &stats.per_topic_counts {
        for (split, count) in by_split {
            let quoted = if topic.contains(',') {
                format!("\"topic:{topic}\"")
            } else {
                format!("topic:{topic}")
            };
            out.push_str(&format!("{quoted},{split},{count}\n"));
        }
    }
    out
}

/// Topic-by-split table in the reference layout, with token/sentence averages
/// at the bottom.
pub fn stats_md(stats: &CorpusStats) -> String {
    let splits: Vec<&str> = {
        let mut names: Vec<&str> = stats
            .per_topic_counts
            .values()
            .flat_map(|m| m.keys().map(String::as_str))
            .collect();
        names.sort();
        names.dedup();
        // train_dev before test, "all" last
        names.sort_by_key(|n| match *n {
            "train_dev" => 0,
            "test" => 1,
            _ => 2,
        });
        names
    };
    let mut out = String::from("| topic |");
    for s in &splits {
        out.push_str(&format!(" {s} |"));
    }
    out.push('\n');
    out.push_str("|---|");
    out.push_str(&"---:|".repeat(splits.len()));
    out.push('\n');
    // topics sorted by total count, largest first
    let mut topics: Vec<(&String, usize)> = stats
        .per_topic_counts
        .iter()
        .map(|(t, m)| (t, m.values().sum::<usize>()))
        .collect();
    topics.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    for (topic, _) in topics {
        out.push_str(&format!("| {topic} |"));
        for s in &splits {
            let count = stats
                .per_topic_counts
                .get(topic)
                .and_then(|m| m.get(*s))
                .copied()
                .unwrap_or(0);
            out.push_str(&format!(" {count} |"));
        }
        out.push('\n');
    }
    out.push_str("| **avg #tokens** |");
    for s in &splits {
        let avg = stats
            .per_split
            .get(*s)
            .map(|g| g.avg_tokens)
            .unwrap_or(stats.avg_tokens);
        out.push_str(&format!(" {avg:.1} |"));
    }
    out.push('\n');
    out.push_str("| **avg #sentences** |");
    for s in &splits {
        let avg = stats
            .per_split
            .get(*s)
            .map(|g| g.avg_sentences)
            .unwrap_or(stats.avg_sentences);
        out.push_str(&format!(" {avg:.1} |"));
    }
    out.push('\n');
    out
}

/// Token-length histogram for one label as CSV (bin_start,count).
pub fn histogram_csv(stats: &CorpusStats, label: u8) -> String {
    let mut out = String::from("bin_start,count\n");
    if let Some(hist) = stats.token_length_histogram_per_label.get(&label) {
        for (bin, count) in hist {
            out.push_str(&format!("{bin},{count}\n"));
        }
    }
    out
}

/// Flip-audit log for post-processing as CSV.
pub fn rule_audit_csv(outcomes: &[crate::postprocess::RuleOutcome]) -> String {
    let mut out = String::from("doc_id,rule,original,corrected,flipped\n");
    for o in outcomes {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            o.doc_id,
            o.rule.as_str(),
            o.original,
            o.corrected,
            o.flipped
        ));
    }
    out
}

/// Corrected predictions as CSV.
pub fn corrected_csv(outcomes: &[crate::postprocess::RuleOutcome]) -> String {
    let mut out = String::from("doc_id,label\n");
    for o in outcomes {
        out.push_str(&format!("{},{}\n", o.doc_id, o.corrected));
    }
    out
}

/// Mean ± std rows for per-model reports (source-language summary tables).
pub fn per_model_table_md(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::from("| model |");
    for f in METRIC_FIELDS {
        out.push_str(&format!(" {f} |"));
    }
    out.push('\n');
    out.push_str("|---|");
    out.push_str(&"---:|".repeat(10));
    out.push('\n');
    for (name, report) in rows {
        out.push_str(&format!("| {name} |"));
        for v in report.values() {
            out.push_str(&format!(" {v:.2} |"));
        }
        out.push('\n');
    }
    if rows.len() >= 2 {
        let reports: Vec<MetricsReport> = rows.iter().map(|(_, r)| r.clone()).collect();
        if let Ok(agg) = crate::ensemble::aggregate_reports(&reports) {
            out.push_str("| **mean** |");
            for v in agg.mean_report.values() {
                out.push_str(&format!(" {v:.2} |"));
            }
            out.push('\n');
            out.push_str("| **std** |");
            for v in agg.std_report.values() {
                out.push_str(&format!(" {v:.2} |"));
            }
            out.push('\n');
        }
    }
    out
}

/// The mapping used by stats commands: topic -> split -> count sanity totals.
pub fn topic_split_totals(stats: &CorpusStats) -> BTreeMap<String, usize> {
    let mut totals: BTreeMap<String, usize> = BTreeMap::new();
    for by_split in stats.per_topic_counts.values() {
        for (split, count) in by_split {
            *totals.entry(split.clone()).or_default() += count;
        }
    }
    totals
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{report, ConfusionMatrix};

    #[test]
    fn aggregate_csv_layout() {
        let rep = report(&ConfusionMatrix::new(8, 7, 13, 796));
        let rows = vec![
            AggregateRow::single("zero_shot", "raw", &rep),
            AggregateRow::mean_std("per_class_10", "raw", &rep, &rep),
        ];
        let csv = aggregate_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "scenario,variant,P_0,R_0,F1_0,P_1,R_1,F1_1,P_m,R_m,F1_m,AUC"
        );
        let first = lines.next().unwrap();
        assert!(first.starts_with("zero_shot,raw,"));
        assert!(first.contains("53.33"));
        let second = lines.next().unwrap();
        assert!(second.contains("±"));
    }

    #[test]
    fn report_csv_uses_fractions() {
        let rep = report(&ConfusionMatrix::new(8, 7, 13, 796));
        let csv = report_csv(&rep);
        let data = csv.lines().nth(1).unwrap();
        let first: f64 = data.split(',').next().unwrap().parse().unwrap();
        assert!(first < 1.0 && first > 0.9);
    }

    #[test]
    fn votes_round_trip_through_reader() {
        let records = vec![
            VoteRecord {
                doc_id: "a".into(),
                votes: vec![1, 0, 1],
                final_label: 1,
                was_tie: false,
            },
            VoteRecord {
                doc_id: "b".into(),
                votes: vec![0, 0, 1],
                final_label: 0,
                was_tie: false,
            },
        ];
        let csv = votes_csv(&records);
        assert!(csv.starts_with("doc_id,v1,v2,v3,final,was_tie\n"));
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), &csv).unwrap();
        let parsed = read_hard_predictions(f.path()).unwrap();
        assert_eq!(parsed, vec![("a".to_string(), 1), ("b".to_string(), 0)]);
    }

    #[test]
    fn predictions_file_reader() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), "doc_id,label,score\nx,1,0.9\ny,0,0.2\n").unwrap();
        let parsed = read_hard_predictions(f.path()).unwrap();
        assert_eq!(parsed, vec![("x".to_string(), 1), ("y".to_string(), 0)]);
    }

    #[test]
    fn stats_tables_render() {
        let corpus = crate::corpus::generate_synthetic(
            10,
            40,
            &std::collections::BTreeMap::from([
                ("women's health".to_string(), 0.7),
                ("skin".to_string(), 0.3),
            ]),
            "de",
            3,
        )
        .unwrap();
        let stats = crate::corpus::compute_stats(&corpus, None);
        let md = stats_md(&stats);
        assert!(md.contains("women's health"));
        assert!(md.contains("avg #tokens"));
        let csv = stats_csv(&stats);
        assert!(csv.contains("n_total,all,50"));
        let hist = histogram_csv(&stats, 1);
        assert!(hist.lines().count() > 1);
    }
}
