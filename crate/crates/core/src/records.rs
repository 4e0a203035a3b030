//! Tab-separated record files shared by manifests, registry configs,
//! prediction files and score files.
//!
//! A file is a header line naming the columns followed by one record per
//! line. Lines starting with `#` are comments; a comment of the form
//! `# key: value` is kept as a directive (manifests use `# root: <dir>`).

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordTable {
    pub directives: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Record>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// 1-based line number in the source text.
    pub line: u64,
    pub fields: Vec<String>,
}

impl RecordTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            directives: Vec::new(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_directive(mut self, key: &str, value: impl Into<String>) -> Self {
        self.directives.push((key.to_string(), value.into()));
        self
    }

    pub fn push(&mut self, fields: Vec<String>) {
        let line = self.rows.len() as u64 + 1;
        self.rows.push(Record { line, fields });
    }

    pub fn directive(&self, key: &str) -> Option<&str> {
        self.directives.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Index of a named column, or a parse error pointing at the header.
    pub fn column(&self, name: &str, source: &Path) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(source, 1, format!("header lacks column {name:?}")))
    }

    pub fn read_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut directives = Vec::new();
        for line in text.lines() {
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((key, value)) = comment.split_once(':') {
                    let key = key.trim();
                    if !key.is_empty() && !key.contains(char::is_whitespace) {
                        directives.push((key.to_string(), value.trim().to_string()));
                    }
                }
            }
        }

        let mut reader = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .comment(Some(b'#'))
            .has_headers(true)
            .quoting(false)
            .from_reader(text.as_bytes());

        let header = reader
            .headers()
            .map_err(|e| csv_error(e, source))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect::<Vec<_>>();
        if header.is_empty() || header.iter().all(String::is_empty) {
            return Err(Error::parse(source, 1, "missing header line"));
        }

        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(e, source))?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            rows.push(Record {
                line,
                fields: record.iter().map(str::to_string).collect(),
            });
        }
        Ok(Self {
            directives,
            header,
            rows,
        })
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        for (k, v) in &self.directives {
            writeln!(out, "# {k}: {v}")?;
        }
        writeln!(out, "{}", self.header.join("\t"))?;
        for row in &self.rows {
            for field in &row.fields {
                if field.contains(['\t', '\n', '\r']) {
                    return Err(Error::Config(format!("field {field:?} contains a tab or newline")));
                }
            }
            writeln!(out, "{}", row.fields.join("\t"))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(String::from_utf8(buf).expect("records are utf-8"))
    }

    pub fn write_path(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }
}

fn csv_error(err: csv::Error, source: &Path) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    let message = match err.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("expected {expected_len} fields, found {len}")
        }
        _ => err.to_string(),
    };
    Error::Parse {
        path: PathBuf::from(source),
        line,
        message,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_rows_and_directives() {
        let text = "# root: /data\n# free comment\npath\tlabel\na.png\tADM\nb.png\tReal\n";
        let table = RecordTable::parse(text, Path::new("m.tsv")).unwrap();
        assert_eq!(table.directive("root"), Some("/data"));
        assert_eq!(table.header, vec!["path", "label"]);
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[1].fields, vec!["b.png", "Real"]);
        assert_eq!(table.rows[1].line, 5);
    }

    #[test]
    fn ragged_row_reports_line() {
        let text = "path\tlabel\na.png\tADM\nb.png\n";
        match RecordTable::parse(text, Path::new("m.tsv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn write_then_parse() {
        let mut table = RecordTable::new(&["a", "b"]).with_directive("root", "x");
        table.push(vec!["1".into(), "two words".into()]);
        let text = table.to_text().unwrap();
        let back = RecordTable::parse(&text, Path::new("t")).unwrap();
        assert_eq!(back.header, table.header);
        assert_eq!(back.rows[0].fields, table.rows[0].fields);
        assert_eq!(back.directive("root"), Some("x"));
    }
}
