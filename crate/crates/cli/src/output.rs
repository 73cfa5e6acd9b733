//! Results of a command and how they are written to disk.

use std::path::Path;

use cablegff::analytics::TestReport;
use serde::Serialize;
use serde_json::Value;

use crate::config::{Resolved, TableFormat};
use crate::error::Result;

/// A plot-ready table.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.to_string(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push<I: IntoIterator<Item = String>>(&mut self, row: I) {
        self.rows.push(row.into_iter().collect());
    }

    fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| Value::Object(self.header.iter().cloned().zip(r.iter().map(|c| Value::String(c.clone()))).collect()))
            .collect();
        Value::Array(rows)
    }
}

/// Formats a float so that it round-trips.
pub fn num(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:e}")
    }
}

/// Everything one command produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub command: String,
    pub reports: Vec<TestReport>,
    pub tables: Vec<Table>,
    /// Raw dumps written verbatim next to the tables.
    pub files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    pub fn new(command: &str) -> Self {
        Outcome { command: command.to_string(), ..Default::default() }
    }

    pub fn pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }

    pub fn report(&self, experiment: &str) -> Option<&TestReport> {
        self.reports.iter().find(|r| r.experiment == experiment)
    }

    /// Adds a table, appending its rows to an existing one of the same name.
    pub fn append(&mut self, table: Table) {
        match self.tables.iter_mut().find(|t| t.name == table.name) {
            Some(t) => t.rows.extend(table.rows),
            None => self.tables.push(table),
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Reports as a table with columns (experiment, statistic, p_value, n, pass).
    pub fn summary_table(&self) -> Table {
        let mut t = Table::new("reports", &["experiment", "statistic", "p_value", "n", "pass"]);
        for r in &self.reports {
            t.push([
                r.experiment.clone(),
                num(r.statistic),
                r.p_value.map(num).unwrap_or_default(),
                r.sample_sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(";"),
                r.pass.to_string(),
            ]);
        }
        t
    }

    /// The `report.json` document. It depends only on the configuration and
    /// seed, never on the number of workers.
    pub fn report_json(&self, seed: u64) -> Value {
        serde_json::json!({
            "command": self.command,
            "seed": seed,
            "pass": self.pass(),
            "reports": self.reports,
        })
    }

    /// Writes `report.json`, `manifest.json` and `tables/` under `dir`.
    pub fn write(&self, dir: &Path, cfg: &Resolved) -> Result<()> {
        let tables_dir = dir.join("tables");
        std::fs::create_dir_all(&tables_dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&self.report_json(cfg.seed))? + "\n")?;
        let mut written = Vec::new();
        let summary = self.summary_table();
        for t in std::iter::once(&summary).chain(&self.tables) {
            let name = match cfg.format {
                TableFormat::Csv => {
                    let name = format!("{}.csv", t.name);
                    let mut w = csv::Writer::from_path(tables_dir.join(&name))?;
                    w.write_record(&t.header)?;
                    for r in &t.rows {
                        w.write_record(r)?;
                    }
                    w.flush()?;
                    name
                }
                TableFormat::Json => {
                    let name = format!("{}.json", t.name);
                    std::fs::write(tables_dir.join(&name), serde_json::to_string_pretty(&t.to_json())? + "\n")?;
                    name
                }
            };
            written.push(format!("tables/{name}"));
        }
        for (name, bytes) in &self.files {
            std::fs::write(tables_dir.join(name), bytes)?;
            written.push(format!("tables/{name}"));
        }
        let manifest = serde_json::json!({
            "command": self.command,
            "config": cfg.echo(),
            "seed": cfg.seed,
            "versions": {
                "cablegff": cablegff::VERSION,
                "cablegff-cli": env!("CARGO_PKG_VERSION"),
            },
            "outputs": written,
        });
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}
