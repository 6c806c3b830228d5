use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SolverConfig;
use crate::error::{MprError, Result};
use crate::types::{EntryFlag, RecoveredProjections};
use crate::Complex64;

/// JSON sidecar written next to an exported projections CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportMetadata {
    pub solver: SolverConfig,
    pub seeds: BTreeMap<String, u64>,
}

const CSV_HEADER: &str = "row,frame,re,im,flag";

impl RecoveredProjections {
    /// One line per entry, rows and frames 1-based, `{:e}` floats for
    /// lossless round trips.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for m in 0..self.rows() {
            for s in 0..self.frames() {
                let v = self.y[(m, s)];
                writeln!(w, "{},{},{:e},{:e},{}", m + 1, s + 1, v.re, v.im, self.flags[(m, s)].as_str())?;
            }
        }
        Ok(())
    }

    /// Reads back values and flags; reference anchors are not part of the CSV.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut entries = Vec::new();
        let (mut rows, mut frames) = (0usize, 0usize);
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if lineno == 0 {
                if line.trim() != CSV_HEADER {
                    return Err(MprError::Format(format!("unexpected header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| MprError::Format(format!("line {}: {what}", lineno + 1));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let m: usize = fields[0].parse().map_err(|_| bad("bad row"))?;
            let s: usize = fields[1].parse().map_err(|_| bad("bad frame"))?;
            let re: f64 = fields[2].parse().map_err(|_| bad("bad re"))?;
            let im: f64 = fields[3].parse().map_err(|_| bad("bad im"))?;
            let flag = EntryFlag::parse(fields[4]).ok_or_else(|| bad("bad flag"))?;
            if m == 0 || s == 0 {
                return Err(bad("indices are 1-based"));
            }
            rows = rows.max(m);
            frames = frames.max(s);
            entries.push((m - 1, s - 1, Complex64::new(re, im), flag));
        }
        let mut y = DMatrix::from_element(rows, frames, Complex64::new(0.0, 0.0));
        let mut flags = DMatrix::from_element(rows, frames, EntryFlag::Unlocalizable);
        for (m, s, v, f) in entries {
            y[(m, s)] = v;
            flags[(m, s)] = f;
        }
        Ok(Self { y, flags, reference_anchors: vec![None; rows] })
    }
}

impl ExportMetadata {
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: std::io::Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout_and_round_trip() {
        let mut y = DMatrix::from_element(2, 2, Complex64::new(0.0, 0.0));
        y[(0, 0)] = Complex64::new(1.5, -2.0);
        y[(1, 1)] = Complex64::new(0.1, 1.0 / 3.0);
        let mut flags = DMatrix::from_element(2, 2, EntryFlag::Ok);
        flags[(1, 0)] = EntryFlag::SmallNorm;
        let rec = RecoveredProjections { y, flags, reference_anchors: vec![None, None] };
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "row,frame,re,im,flag");
        assert_eq!(lines[1], "1,1,1.5e0,-2e0,ok");
        assert_eq!(lines[3], "2,1,0e0,0e0,small-norm");
        let back = RecoveredProjections::read_csv(&buf[..]).unwrap();
        assert_eq!(back.y, rec.y);
        assert_eq!(back.flags, rec.flags);
    }

    #[test]
    fn sidecar_round_trip() {
        let meta = ExportMetadata {
            solver: SolverConfig::default(),
            seeds: BTreeMap::from([("matrix".to_string(), 7), ("anchors".to_string(), 9)]),
        };
        let mut buf = Vec::new();
        meta.write_json(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"gd_max_iters\": 200"));
        assert!(text.contains("\"imputation\": \"observed-mean\""));
        assert_eq!(ExportMetadata::read_json(&buf[..]).unwrap(), meta);
    }

    #[test]
    fn csv_rejects_malformed_lines() {
        assert!(RecoveredProjections::read_csv(&b"bad header\n"[..]).is_err());
        assert!(RecoveredProjections::read_csv(&b"row,frame,re,im,flag\n1,1,x,0,ok\n"[..]).is_err());
        assert!(RecoveredProjections::read_csv(&b"row,frame,re,im,flag\n1,1,0,0,what\n"[..]).is_err());
    }
}
