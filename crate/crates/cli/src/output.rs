//! Atomic file output: every file is written to a temporary sibling and renamed.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// An RFC-4180 table with a header row.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("write to memory");
        for r in &self.rows {
            w.write_record(r).expect("write to memory");
        }
        w.into_inner().expect("flush to memory")
    }
}

/// Output directory of one run; every file it writes carries the config hash.
pub struct OutDir {
    dir: PathBuf,
    pub hash: String,
}

impl OutDir {
    pub fn create(dir: &Path, hash: String) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            hash,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn table(&self, name: &str, table: &Table) -> CliResult<()> {
        write_atomic(&self.path(name), &table.to_bytes())
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::io(&self.path(name), e))?;
        bytes.push(b'\n');
        write_atomic(&self.path(name), &bytes)
    }
}

/// Wall-clock timings of the numeric calls of one run, one row per label.
#[derive(Default)]
pub struct Timings {
    rows: Vec<(String, f64, usize)>,
}

impl Timings {
    /// Runs `f` `repeats` times and records the median wall time; returns the last result.
    pub fn measure<T>(&mut self, label: &str, repeats: usize, mut f: impl FnMut() -> CliResult<T>) -> CliResult<T> {
        let mut secs = Vec::with_capacity(repeats);
        let mut out = None;
        for _ in 0..repeats.max(1) {
            let t = Instant::now();
            let r = f()?;
            secs.push(t.elapsed().as_secs_f64());
            out = Some(r);
        }
        secs.sort_by(f64::total_cmp);
        self.rows.push((label.to_string(), secs[secs.len() / 2], secs.len()));
        Ok(out.expect("at least one repetition"))
    }

    pub fn seconds(&self, label: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.0 == label).map(|r| r.1)
    }

    pub fn write(&self, out: &OutDir) -> CliResult<()> {
        let mut t = Table::new(&["config_hash", "method", "seconds", "repetitions"]);
        for (label, s, n) in &self.rows {
            t.push(vec![out.hash.clone(), label.clone(), num(*s), n.to_string()]);
        }
        out.table("timing.csv", &t)
    }
}
