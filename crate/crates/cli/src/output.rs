use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use tweezer_readout::scenario::{format_float, to_canonical_json};

use crate::Format;

/// Destination of a command's main output.
pub struct Sink {
    path: Option<PathBuf>,
}

impl Sink {
    pub fn new(path: Option<PathBuf>) -> Self {
        Self { path }
    }

    pub fn write(&self, text: &str) -> anyhow::Result<()> {
        match &self.path {
            Some(p) => write_file(p, text),
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(text.as_bytes())?;
                stdout.flush()?;
                Ok(())
            }
        }
    }

    pub fn json<T: Serialize>(&self, value: &T) -> anyhow::Result<()> {
        let mut text = to_canonical_json(value)?;
        text.push('\n');
        self.write(&text)
    }
}

pub fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Reject formats a command cannot produce; `None` picks the default.
pub fn pick(
    format: Option<Format>,
    default: Format,
    allowed: &[Format],
    command: &str,
) -> anyhow::Result<Format> {
    let f = format.unwrap_or(default);
    if !allowed.contains(&f) {
        return Err(tweezer_readout::Error::Validation {
            path: "format".into(),
            message: format!("`{command}` does not support {f:?} output"),
        }
        .into());
    }
    Ok(f)
}

/// CSV table with canonical float formatting.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> anyhow::Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header)?;
        Ok(Self { writer })
    }

    pub fn row(&mut self, cells: &[Cell]) -> anyhow::Result<()> {
        let cells = cells
            .iter()
            .map(Cell::render)
            .collect::<anyhow::Result<Vec<_>>>()?;
        self.writer.write_record(&cells)?;
        Ok(())
    }

    pub fn finish(self) -> anyhow::Result<String> {
        let bytes = self
            .writer
            .into_inner()
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(String::from_utf8(bytes)?)
    }
}

pub enum Cell {
    F(f64),
    U(u64),
    S(String),
    Empty,
}

impl Cell {
    fn render(&self) -> anyhow::Result<String> {
        Ok(match self {
            Cell::F(x) => format_float(*x)?,
            Cell::U(n) => n.to_string(),
            Cell::S(s) => s.clone(),
            Cell::Empty => String::new(),
        })
    }
}
