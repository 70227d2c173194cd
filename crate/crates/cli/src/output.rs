//! CSV tables, the plain-text summary and the manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

/// Fixed formatting so identical runs give identical bytes.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file: &str, header: &[&str]) -> Self {
        Self {
            file: file.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_header(file: &str, header: Vec<String>) -> Self {
        Self {
            file: file.to_string(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// What a finished task hands back.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub header: Vec<String>,
    pub verdicts: Vec<Verdict>,
    pub notes: Vec<String>,
    /// Named scalar results, in insertion order.
    pub metrics: Vec<(String, f64)>,
    pub tables: Vec<Table>,
    /// Set when the task itself failed.
    pub error: Option<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.verdicts.iter().all(|v| v.passed)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.verdicts.push(Verdict::new(name, passed, detail));
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn metric_set(&mut self, name: &str, value: f64) {
        self.metrics.push((name.to_string(), value));
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for line in &self.header {
            let _ = writeln!(s, "{line}");
        }
        for v in &self.verdicts {
            let _ = writeln!(s, "{} {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.name, v.detail);
        }
        for n in &self.notes {
            let _ = writeln!(s, "NOTE {n}");
        }
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "metric {k} = {}", num(*v));
        }
        if let Some(e) = &self.error {
            let _ = writeln!(s, "ERROR {e}");
        }
        let _ = writeln!(s, "overall: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    toolkit: &'static str,
    version: &'static str,
    created: String,
    threads: usize,
    exit_status: i32,
    artifacts: Vec<String>,
    config: &'a ExperimentConfig,
}

/// Write the tables, `summary.txt` and `manifest.toml` into `dir`.
pub fn write_artifacts(dir: &Path, config: &ExperimentConfig, outcome: &Outcome, exit_status: i32) -> Result<Vec<String>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let write = |name: &str, body: &str| {
        fs::write(dir.join(name), body).map_err(|e| CliError::Io(format!("{}: {e}", dir.join(name).display())))
    };
    let mut artifacts = Vec::new();
    for t in &outcome.tables {
        write(&t.file, &t.to_csv())?;
        artifacts.push(t.file.clone());
    }
    write("summary.txt", &outcome.summary())?;
    artifacts.push("summary.txt".into());
    artifacts.push("manifest.toml".into());
    let manifest = Manifest {
        toolkit: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        threads: rayon::current_num_threads(),
        exit_status,
        artifacts: artifacts.clone(),
        config,
    };
    let body = toml::to_string(&manifest).map_err(|e| CliError::Io(format!("manifest: {e}")))?;
    write("manifest.toml", &body)?;
    Ok(artifacts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_use_a_stable_layout() {
        assert_eq!(num(0.0), "0");
        assert_eq!(num(0.5), "0.5");
        assert_eq!(num(1e-7), "1e-7");
        assert_eq!(num(-2.5e20), "-2.5e20");
        assert_eq!(num(0.1 + 0.2).parse::<f64>().unwrap(), 0.1 + 0.2);
    }

    #[test]
    fn summary_reports_the_worst_verdict() {
        let mut o = Outcome::default();
        o.check("a", true, "fine");
        assert!(o.summary().ends_with("overall: PASS\n"));
        o.check("b", false, "broken");
        let s = o.summary();
        assert!(s.contains("FAIL b: broken") && s.ends_with("overall: FAIL\n"));
    }

    #[test]
    fn csv_layout() {
        let mut t = Table::new("x.csv", &["a", "b"]);
        t.push(vec!["1".into(), num(0.25)]);
        assert_eq!(t.to_csv(), "a,b\n1,0.25\n");
    }
}
