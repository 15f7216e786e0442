//! Append-only JSON-lines key/value stores backing resumable runs.

use crate::error::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

#[derive(Serialize, Deserialize)]
struct Line<R> {
    key: String,
    record: R,
}

/// Records keyed by string. Writes go through one lock so concurrent jobs
/// never interleave lines; a torn final line from an interrupted run is
/// truncated away on load.
pub struct Store<R> {
    path: PathBuf,
    records: Mutex<HashMap<String, R>>,
    file: Mutex<File>,
}

impl<R: Serialize + DeserializeOwned + Clone> Store<R> {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut records = HashMap::new();
        let mut reader = BufReader::new(&file);
        let mut line = String::new();
        let mut lineno = 0;
        let mut good_end = 0u64;
        let mut torn = false;
        loop {
            line.clear();
            let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                break;
            }
            lineno += 1;
            if !line.ends_with('\n') {
                match serde_json::from_str::<Line<R>>(&line) {
                    Ok(l) => {
                        records.insert(l.key, l.record);
                    }
                    Err(e) => {
                        log::warn!("{}: dropping torn final line {lineno}: {e}", path.display());
                        torn = true;
                    }
                }
                break;
            }
            good_end += n as u64;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line<R>>(&line) {
                Ok(l) => {
                    records.insert(l.key, l.record);
                }
                Err(e) => {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        reason: format!("line {lineno}: {e}"),
                    })
                }
            }
        }
        drop(reader);
        if torn {
            file.set_len(good_end).map_err(|e| Error::io(path, e))?;
        } else {
            let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
            if len > good_end {
                file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            records: Mutex::new(records),
            file: Mutex::new(file),
        })
    }

    pub fn get(&self, key: &str) -> Option<R> {
        self.records.lock().expect("store lock").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn put(&self, key: &str, record: &R) -> Result<()> {
        let mut text = serde_json::to_string(&serde_json::json!({ "key": key, "record": record }))?;
        text.push('\n');
        {
            let mut f = self.file.lock().expect("store lock");
            f.write_all(text.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
            f.flush().map_err(|e| Error::io(&self.path, e))?;
        }
        self.records.lock().expect("store lock").insert(key.to_string(), record.clone());
        Ok(())
    }

    /// Returns the stored record for `key`, computing and persisting it
    /// first when absent.
    pub fn get_or_compute(&self, key: &str, compute: impl FnOnce() -> Result<R>) -> Result<R> {
        if let Some(r) = self.get(key) {
            return Ok(r);
        }
        let r = compute()?;
        self.put(key, &r)?;
        Ok(r)
    }
}
