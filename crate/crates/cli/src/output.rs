//! CSV and JSON artifacts. Every CSV starts with comment lines naming the
//! command and the SHA-256 of its resolved configuration, then a header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mpr_core::nalgebra::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// The resolved configuration of one run and its hash.
pub struct Provenance {
    pub command: &'static str,
    pub config_json: String,
    pub hash: String,
}

impl Provenance {
    pub fn new(command: &'static str, config: &impl Serialize) -> Result<Self> {
        let config_json = serde_json::to_string(config)?;
        let mut hasher = Sha256::new();
        hasher.update(command.as_bytes());
        hasher.update([0]);
        hasher.update(config_json.as_bytes());
        Ok(Self { command, config_json, hash: hex::encode(hasher.finalize()) })
    }

    fn preamble(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "# mpr {} config-hash: sha256:{}", self.command, self.hash)?;
        writeln!(w, "# config: {}", self.config_json)?;
        Ok(())
    }

    pub fn write_rows<T: Serialize>(&self, mut w: impl Write, rows: &[T]) -> Result<()> {
        self.preamble(&mut w)?;
        let mut csv = csv::Writer::from_writer(w);
        for row in rows {
            csv.serialize(row)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn write_matrix(&self, mut w: impl Write, m: &DMatrix<f64>) -> Result<()> {
        self.preamble(&mut w)?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record((0..m.ncols()).map(|j| format!("c{j}")))?;
        for row in m.row_iter() {
            csv.write_record(row.iter().map(|v| v.to_string()))?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Destination directory, or stdout for the main table when none is given.
pub struct Sink {
    dir: Option<PathBuf>,
}

impl Sink {
    pub fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(Self { dir })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Writes the main table to `<dir>/<name>` or to stdout.
    pub fn table<T: Serialize>(&self, prov: &Provenance, name: &str, rows: &[T]) -> Result<()> {
        match &self.dir {
            Some(d) => prov.write_rows(create(&d.join(name))?, rows),
            None => prov.write_rows(std::io::stdout().lock(), rows),
        }
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}
