//! Output sinks and CSV/JSON writers.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::CliError;

pub fn create(path: &Path) -> Result<Box<dyn Write>, CliError> {
    File::create(path)
        .map(|f| Box::new(BufWriter::new(f)) as Box<dyn Write>)
        .map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// `--output` file, or stdout.
pub fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        Some(p) => create(p),
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
    }
}

fn io_err(source: io::Error) -> CliError {
    CliError::Io {
        path: "output".into(),
        source,
    }
}

pub fn write_csv<T: Serialize>(w: &mut dyn Write, rows: &[T]) -> Result<(), CliError> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r).map_err(|e| io_err(e.into()))?;
    }
    csv.flush().map_err(io_err)
}

pub fn write_json(w: &mut dyn Write, value: &serde_json::Value) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *w, value).map_err(|e| io_err(e.into()))?;
    writeln!(w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn write_text(w: &mut dyn Write, text: &str) -> Result<(), CliError> {
    w.write_all(text.as_bytes()).map_err(io_err)?;
    w.flush().map_err(io_err)
}
