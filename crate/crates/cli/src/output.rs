use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde_json::Value;

/// What a subcommand produced: JSONL records, a CSV rendering of the summary
/// rows, and the process exit code.
pub struct Report {
    pub records: Vec<Value>,
    pub csv: Vec<Vec<String>>,
    pub exit: u8,
}

pub enum Format {
    Jsonl,
    Csv,
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub fn write_report(report: &Report, format: &Format, out: Option<&Path>) -> io::Result<()> {
    let mut sink: Box<dyn Write> = match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(io::stdout().lock()),
    };
    match format {
        Format::Jsonl => {
            for record in &report.records {
                writeln!(sink, "{record}")?;
            }
        }
        Format::Csv => {
            for row in &report.csv {
                let line: Vec<String> = row.iter().map(|f| quote(f)).collect();
                writeln!(sink, "{}", line.join(","))?;
            }
        }
    }
    sink.flush()
}
