//! Report writing. JSON goes through `serde_json` with a fixed field order and
//! CSV through `csv`, so identical inputs produce identical bytes.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

#[derive(Clone, Debug, Serialize)]
pub struct Header {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config_sha256: String,
}

/// Where a command writes and what it stamps on every report.
pub struct Output {
    dir: PathBuf,
    header: Header,
}

impl Output {
    pub fn new(dir: PathBuf, command: &'static str, seed: u64, config_sha256: String) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self {
            dir,
            header: Header {
                tool: "oed",
                version: env!("CARGO_PKG_VERSION"),
                command,
                seed,
                config_sha256,
            },
        })
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn json<T: Serialize>(&self, name: &str, body: &T) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(body).map_err(|e| CliError::Report(e.to_string()))?;
        text.push('\n');
        write(&path, text.as_bytes())?;
        Ok(path)
    }

    /// Writes `columns` as the header line even when `rows` is empty.
    pub fn csv<R: Serialize>(&self, name: &str, columns: &[&str], rows: &[R]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(columns).map_err(|e| CliError::Report(e.to_string()))?;
        for row in rows {
            w.serialize(row).map_err(|e| CliError::Report(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Report(e.to_string()))?;
        write(&path, &bytes)?;
        Ok(path)
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
