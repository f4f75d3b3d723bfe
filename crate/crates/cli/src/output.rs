//! Report files and the run ledger.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::BenchError;

/// Writes through a sibling temporary file so readers never see a partial
/// file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BenchError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Collects the files written by one command.
#[derive(Debug)]
pub struct OutputDir {
    pub root: PathBuf,
    pub written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, BenchError> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf, BenchError> {
        let p = self.path(name);
        write_atomic(&p, bytes.as_ref())?;
        self.written.push(p.clone());
        Ok(p)
    }

    pub fn names(&self) -> Vec<String> {
        self.written
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect()
    }
}

pub fn artifact_version() -> String {
    match option_env!("GAPFILL_GIT_REV") {
        Some(rev) => format!("{}+{rev}", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub command: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub seed: u64,
    pub version: String,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
}

pub const LEDGER_FILE: &str = "ledger.jsonl";
const LOCK_FILE: &str = "ledger.lock";

/// Appends entries to `<dir>/ledger.jsonl`, holding a lock file meanwhile.
pub fn append_ledger(dir: &Path, entries: &[LedgerEntry]) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;
    let lock = dir.join(LOCK_FILE);
    let mut waited = 0;
    loop {
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => break,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists && waited < 200 => {
                std::thread::sleep(Duration::from_millis(25));
                waited += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let result = (|| -> Result<(), BenchError> {
        let mut f = OpenOptions::new().create(true).append(true).open(dir.join(LEDGER_FILE))?;
        for e in entries {
            let line = serde_json::to_string(e).map_err(gapfill::Error::from)?;
            writeln!(f, "{line}")?;
        }
        Ok(())
    })();
    fs::remove_file(&lock)?;
    result
}

pub fn read_ledger(dir: &Path) -> Result<Vec<LedgerEntry>, BenchError> {
    let text = fs::read_to_string(dir.join(LEDGER_FILE))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| BenchError::from(gapfill::Error::from(e))))
        .collect()
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(gapfill::Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String, BenchError> {
    Ok(serde_json::to_string_pretty(value).map_err(gapfill::Error::from)? + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_appends() {
        let dir = tempfile::tempdir().unwrap();
        let e = LedgerEntry {
            command: "train".into(),
            config_hash: "abc".into(),
            master_seed: 1,
            seed: 2,
            version: artifact_version(),
            wall_time_s: 0.5,
            outputs: vec!["a.csv".into()],
        };
        append_ledger(dir.path(), &[e.clone()]).unwrap();
        append_ledger(dir.path(), &[e.clone()]).unwrap();
        assert_eq!(read_ledger(dir.path()).unwrap(), vec![e.clone(), e]);
        assert!(!dir.path().join(LOCK_FILE).exists());
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_atomic(&p, b"a,b\n").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"a,b\n");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
