//! Metric tables. BERTScore precision is the first metric column; BLEU,
//! METEOR and ROUGE-L precision follow. CSV values use the shortest
//! round-tripping decimal form, pretty tables four decimals.

use std::fmt::Write;

use lumen_core::textmetrics::{MetricReport, SampleScores};

pub const METRIC_COLUMNS: [&str; 4] = ["bertscore_precision", "bleu", "meteor", "rouge_l_precision"];
const PRETTY_HEADERS: [&str; 4] = ["BERTScore-P", "BLEU", "METEOR", "ROUGE-L-P"];

fn values(s: &SampleScores) -> [f64; 4] {
    [s.bertscore_precision, s.bleu, s.meteor, s.rouge_l_precision]
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-sample rows followed by the `mean` row.
pub fn samples_csv(report: &MetricReport) -> String {
    let mut out = format!("sample_id,{}\n", METRIC_COLUMNS.join(","));
    for row in report.per_sample.iter().chain([&report.aggregate]) {
        let v = values(row);
        let _ = writeln!(out, "{},{},{},{},{}", csv_field(&row.sample_id), v[0], v[1], v[2], v[3]);
    }
    out
}

/// One row per task: the aggregate of each report.
pub fn table_csv(reports: &[MetricReport]) -> String {
    let mut out = format!("task,samples,{}\n", METRIC_COLUMNS.join(","));
    for r in reports {
        let v = values(&r.aggregate);
        let _ = writeln!(out, "{},{},{},{},{},{}", r.task, r.per_sample.len(), v[0], v[1], v[2], v[3]);
    }
    out
}

fn pretty(first: &str, rows: &[(String, [f64; 4])]) -> String {
    let w0 = rows.iter().map(|(k, _)| k.len()).chain([first.len()]).max().unwrap_or(0);
    let widths: Vec<usize> = PRETTY_HEADERS.iter().map(|h| h.len().max(6)).collect();
    let mut out = format!("{first:<w0$}");
    for (h, w) in PRETTY_HEADERS.iter().zip(&widths) {
        let _ = write!(out, "  {h:>w$}");
    }
    out.push('\n');
    let total = w0 + widths.iter().map(|w| w + 2).sum::<usize>();
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for (key, v) in rows {
        let _ = write!(out, "{key:<w0$}");
        for (x, w) in v.iter().zip(&widths) {
            let _ = write!(out, "  {x:>w$.4}");
        }
        out.push('\n');
    }
    out
}

pub fn samples_pretty(report: &MetricReport) -> String {
    let rows: Vec<_> = report
        .per_sample
        .iter()
        .chain([&report.aggregate])
        .map(|s| (s.sample_id.clone(), values(s)))
        .collect();
    pretty("sample", &rows)
}

pub fn table_pretty(reports: &[MetricReport]) -> String {
    let rows: Vec<_> = reports
        .iter()
        .map(|r| (r.task.to_string(), values(&r.aggregate)))
        .collect();
    pretty("task", &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lumen_core::textmetrics::aggregate;
    use lumen_core::TaskKind;

    fn report() -> MetricReport {
        let row = SampleScores {
            sample_id: "a,b".into(),
            bleu: 0.5,
            meteor: 0.25,
            rouge_l_precision: 5.0 / 6.0,
            bertscore_precision: 1.0,
        };
        aggregate(vec![row], TaskKind::Classification).unwrap()
    }

    #[test]
    fn csv_layout() {
        let csv = samples_csv(&report());
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "sample_id,bertscore_precision,bleu,meteor,rouge_l_precision");
        assert_eq!(lines.next().unwrap(), "\"a,b\",1,0.5,0.25,0.8333333333333334");
        assert!(lines.next().unwrap().starts_with("mean,1,"));
        let t = table_csv(&[report()]);
        assert_eq!(t.lines().nth(1).unwrap(), "classification,1,1,0.5,0.25,0.8333333333333334");
    }

    #[test]
    fn pretty_has_headline_first() {
        let p = table_pretty(&[report()]);
        let header = p.lines().next().unwrap();
        assert!(header.find("BERTScore-P").unwrap() < header.find("BLEU").unwrap());
        assert!(p.contains("0.8333"));
    }
}
