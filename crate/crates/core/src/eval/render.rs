use std::fmt::Write as _;
use std::str::FromStr;

use super::{ClassMetrics, ConfusionMatrix, EvalReport};
use crate::error::{Error, Result};
use crate::registry::Verdict;

const NA: &str = "n/a";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "md" | "markdown" => Ok(Self::Markdown),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> Result<String> {
    render_reports(std::slice::from_ref(report), format)
}

/// Several methods side by side. All reports must share the class list.
pub fn render_reports(reports: &[EvalReport], format: ReportFormat) -> Result<String> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Evaluation("no reports to render".into()))?;
    if let Some(r) = reports
        .iter()
        .find(|r| r.labels != first.labels || r.fake != first.fake)
    {
        return Err(Error::Evaluation(format!(
            "method {} uses a different class list than {}",
            r.method, first.method
        )));
    }
    match format {
        ReportFormat::Csv => render_csv(reports),
        ReportFormat::Markdown => Ok(render_markdown(reports)),
    }
}

fn full(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn short(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| format!("{x:.3}"))
}

fn verdict_label(fake: bool) -> &'static str {
    if fake {
        "fake"
    } else {
        "real"
    }
}

// Columns: method, abbreviation, verdict, total, detection_correct,
// detection_accuracy, correct, accuracy, precision, recall, f1, then one
// pred_<ABBR> count per class. Multi-class columns are empty for
// verdict-only methods.
fn render_csv(reports: &[EvalReport]) -> Result<String> {
    let labels = &reports[0].labels;
    let mut header: Vec<String> = [
        "method",
        "abbreviation",
        "verdict",
        "total",
        "detection_correct",
        "detection_accuracy",
        "correct",
        "accuracy",
        "precision",
        "recall",
        "f1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(labels.iter().map(|l| format!("pred_{l}")));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(csv_err)?;
    for r in reports {
        let det = r.detection_accuracy();
        for (k, label) in r.labels.iter().enumerate() {
            let mut row = vec![
                r.method.clone(),
                label.clone(),
                verdict_label(r.fake[k]).to_string(),
                r.totals[k].to_string(),
                r.detection_correct[k].to_string(),
                full(det[k]),
            ];
            match &r.multiclass {
                Some(mc) => {
                    let m = mc.metrics[k];
                    row.push(mc.correct_counts[k].to_string());
                    row.push(full(mc.per_class_accuracy[k]));
                    row.extend([full(m.precision), full(m.recall), full(m.f1)]);
                    row.extend(mc.confusion.row(k).iter().map(u64::to_string));
                }
                None => row.extend(std::iter::repeat_n(String::new(), 5 + labels.len())),
            }
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Evaluation(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Evaluation(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Evaluation(format!("csv: {e}"))
}

/// Inverse of the CSV rendering. Derived numbers are recomputed from the
/// counts and checked against the file.
pub fn parse_report_csv(text: &str) -> Result<Vec<EvalReport>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.len() < 11 || header[0] != "method" {
        return Err(Error::Evaluation("unrecognized report header".into()));
    }
    let labels_hdr: Vec<String> = header[11..]
        .iter()
        .map(|h| h.strip_prefix("pred_").map(str::to_string))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Evaluation("prediction columns must start with pred_".into()))?;

    struct Partial {
        method: String,
        labels: Vec<String>,
        fake: Vec<bool>,
        totals: Vec<u64>,
        detection: Vec<u64>,
        rows: Vec<Option<Vec<u64>>>,
        written: Vec<Vec<String>>,
    }
    let mut parts: Vec<Partial> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let int = |k: usize| {
            field(k)
                .parse::<u64>()
                .map_err(|_| Error::Evaluation(format!("line {line}: bad count {:?}", field(k))))
        };
        let method = field(0).to_string();
        if parts.last().is_none_or(|p| p.method != method) {
            if parts.iter().any(|p| p.method == method) {
                return Err(Error::Evaluation(format!("line {line}: method {method} is split")));
            }
            parts.push(Partial {
                method: method.clone(),
                labels: Vec::new(),
                fake: Vec::new(),
                totals: Vec::new(),
                detection: Vec::new(),
                rows: Vec::new(),
                written: Vec::new(),
            });
        }
        let p = parts.last_mut().expect("pushed above");
        p.labels.push(field(1).to_string());
        p.fake.push(
            field(2)
                .parse::<Verdict>()
                .map_err(|_| Error::Evaluation(format!("line {line}: bad verdict {:?}", field(2))))?
                == Verdict::Fake,
        );
        p.totals.push(int(3)?);
        p.detection.push(int(4)?);
        p.rows.push(if field(6).is_empty() {
            None
        } else {
            Some((11..header.len()).map(int).collect::<Result<_>>()?)
        });
        p.written.push(rec.iter().map(str::to_string).collect());
    }

    let mut out = Vec::with_capacity(parts.len());
    for p in parts {
        if p.labels != labels_hdr {
            return Err(Error::Evaluation(format!(
                "method {} rows do not match the class columns",
                p.method
            )));
        }
        let report = if p.rows.iter().all(Option::is_some) {
            let rows: Vec<Vec<u64>> = p.rows.into_iter().flatten().collect();
            EvalReport::from_labeled_confusion(&p.method, p.labels, p.fake, ConfusionMatrix::from_rows(&rows)?)?
        } else if p.rows.iter().all(Option::is_none) {
            EvalReport::from_detection_counts(&p.method, p.labels, p.fake, p.totals.clone(), p.detection.clone())?
        } else {
            return Err(Error::Evaluation(format!(
                "method {} mixes verdict-only rows",
                p.method
            )));
        };
        if report.totals != p.totals || report.detection_correct != p.detection {
            return Err(Error::Evaluation(format!(
                "method {} counts are inconsistent",
                p.method
            )));
        }
        let rendered = render_csv(std::slice::from_ref(&report))?;
        let again: Vec<Vec<String>> = csv::Reader::from_reader(rendered.as_bytes())
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()
            .map_err(csv_err)?;
        if again != p.written {
            return Err(Error::Evaluation(format!(
                "method {} derived values do not match its counts",
                p.method
            )));
        }
        out.push(report);
    }
    Ok(out)
}

fn table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
    out.push_str(&line(header));
    out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
    for r in rows {
        out.push_str(&line(r));
    }
}

fn metric_cells(m: &ClassMetrics) -> [String; 3] {
    [short(m.precision), short(m.recall), short(m.f1)]
}

fn render_markdown(reports: &[EvalReport]) -> String {
    let labels = &reports[0].labels;
    let mut out = String::from("# Evaluation report\n\n");

    out.push_str("## Real/fake accuracy by class\n\n");
    let mut header = vec!["Class".to_string()];
    header.extend(reports.iter().map(|r| r.method.clone()));
    let acc: Vec<Vec<Option<f64>>> = reports.iter().map(EvalReport::detection_accuracy).collect();
    let rows: Vec<Vec<String>> = labels
        .iter()
        .enumerate()
        .map(|(k, l)| {
            std::iter::once(l.clone())
                .chain(acc.iter().map(|a| short(a[k])))
                .collect()
        })
        .collect();
    table(&mut out, &header, &rows);
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{} overall real/fake accuracy: {}",
            r.method,
            short(r.binary.accuracy())
        );
    }
    out.push('\n');

    out.push_str("## Correct predictions\n\n");
    let mut header = vec!["Class".to_string()];
    for r in reports {
        header.push(format!("{} correct", r.method));
        header.push(format!("{} total", r.method));
    }
    let rows: Vec<Vec<String>> = labels
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let mut row = vec![l.clone()];
            for r in reports {
                row.push(r.detection_correct[k].to_string());
                row.push(r.totals[k].to_string());
            }
            row
        })
        .collect();
    table(&mut out, &header, &rows);

    for r in reports {
        let _ = write!(out, "\n## {} real/fake confusion\n\n", r.method);
        let header: Vec<String> = ["", "real", "fake", "Precision", "Recall", "F1"]
            .map(String::from)
            .into();
        let rows: Vec<Vec<String>> = [Verdict::Real, Verdict::Fake]
            .into_iter()
            .map(|truth| {
                let mut row = vec![truth.to_string()];
                row.push(r.binary.get(truth, Verdict::Real).to_string());
                row.push(r.binary.get(truth, Verdict::Fake).to_string());
                row.extend(metric_cells(&r.binary.metrics(truth)));
                row
            })
            .collect();
        table(&mut out, &header, &rows);

        if let Some(mc) = &r.multiclass {
            let _ = write!(out, "\n## {} confusion matrix\n\n", r.method);
            out.push_str("Rows are ground truth, columns are predictions.\n\n");
            let mut header = vec![String::new()];
            header.extend(labels.iter().cloned());
            header.extend(["Precision", "Recall", "F1"].map(String::from));
            let rows: Vec<Vec<String>> = labels
                .iter()
                .enumerate()
                .map(|(k, l)| {
                    let mut row = vec![l.clone()];
                    row.extend(mc.confusion.row(k).iter().map(u64::to_string));
                    row.extend(metric_cells(&mc.metrics[k]));
                    row
                })
                .collect();
            table(&mut out, &header, &rows);
            let _ = write!(out, "\nOverall multi-class accuracy: {}\n", short(mc.overall_accuracy));
        }
    }
    out
}
