use std::collections::HashMap;
use std::path::Path;

use super::EvalReport;
use crate::data::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::records::RecordTable;
use crate::registry::{Registry, Verdict};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionEntry {
    pub path: String,
    /// Predicted class, when the method attributes a generator.
    pub abbreviation: Option<String>,
    pub verdict: Verdict,
}

/// Either a classifier prediction file or a reconstruction-error score
/// file; only the path, class and verdict columns are used.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFile {
    pub method: String,
    pub entries: Vec<PredictionEntry>,
}

impl PredictionFile {
    pub fn from_table(table: &RecordTable, source: &Path) -> Result<Self> {
        let method = table.directive("method").map(str::to_string).unwrap_or_else(|| {
            source
                .file_stem()
                .map_or("method".into(), |s| s.to_string_lossy().into_owned())
        });
        let path = table.column("path", source)?;
        let verdict = table.column("verdict", source)?;
        let abbreviation = table.header.iter().position(|h| h == "abbreviation");
        let mut entries = Vec::with_capacity(table.rows.len());
        for row in &table.rows {
            let v = row.fields[verdict].parse::<Verdict>().map_err(|_| {
                Error::parse(
                    source,
                    row.line,
                    format!("verdict {:?} is neither real nor fake", row.fields[verdict]),
                )
            })?;
            entries.push(PredictionEntry {
                path: row.fields[path].clone(),
                abbreviation: abbreviation.map(|k| row.fields[k].clone()),
                verdict: v,
            });
        }
        Ok(Self { method, entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_table(&RecordTable::read_path(path)?, path)
    }
}

/// Matches predictions to manifest records by path. Every record of
/// `split` (all records when `None`) must have exactly one prediction.
pub fn report_from_predictions(
    file: &PredictionFile,
    manifest: &DatasetManifest,
    registry: &Registry,
    split: Option<Split>,
) -> Result<EvalReport> {
    let truth: HashMap<String, usize> = manifest
        .records
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .map(|r| (r.path.to_string_lossy().into_owned(), r.class_id))
        .collect();
    let mut seen = HashMap::new();
    let mut truths = Vec::with_capacity(file.entries.len());
    for e in &file.entries {
        let &t = truth
            .get(&e.path)
            .ok_or_else(|| Error::Evaluation(format!("{} is not in the manifest", e.path)))?;
        if seen.insert(e.path.as_str(), ()).is_some() {
            return Err(Error::Evaluation(format!("{} is predicted twice", e.path)));
        }
        truths.push(t);
    }
    if seen.len() != truth.len() {
        return Err(Error::Evaluation(format!(
            "{} of {} manifest images have no prediction",
            truth.len() - seen.len(),
            truth.len()
        )));
    }
    if file.entries.iter().all(|e| e.abbreviation.is_some()) {
        let preds = file
            .entries
            .iter()
            .map(|e| {
                let abbr = e.abbreviation.as_deref().unwrap_or_default();
                let class = registry
                    .by_abbreviation(abbr)
                    .map_err(|_| Error::Evaluation(format!("unknown predicted class {abbr:?}")))?;
                if class.verdict() != e.verdict {
                    return Err(Error::Evaluation(format!(
                        "{}: verdict disagrees with class {abbr}",
                        e.path
                    )));
                }
                Ok(class.class_id)
            })
            .collect::<Result<Vec<_>>>()?;
        EvalReport::from_predictions(&file.method, registry, &truths, &preds)
    } else {
        let verdicts: Vec<Verdict> = file.entries.iter().map(|e| e.verdict).collect();
        EvalReport::from_verdicts(&file.method, registry, &truths, &verdicts)
    }
}
