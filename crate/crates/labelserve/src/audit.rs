//! Append-only JSON-lines record of every session transition.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use malkit::acquisition::AcquisitionScore;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEntry {
    Started {
        seed: u64,
        num_classes: usize,
        budget: usize,
        initial_ids: Vec<usize>,
    },
    TrainingStarted {
        round: usize,
    },
    TrainingFailed {
        round: usize,
        error: String,
    },
    /// Scores are listed in selection order.
    BatchIssued {
        round: usize,
        labeled_count: usize,
        accuracy: Option<f64>,
        items: Vec<AcquisitionScore>,
    },
    LabelsReceived {
        round: usize,
        #[serde(with = "pairs")]
        labels: BTreeMap<usize, usize>,
        idempotency_key: Option<String>,
    },
    RoundCommitted {
        round: usize,
        ids: Vec<usize>,
    },
}

/// Labels as `[id, class]` pairs; integer map keys do not survive the
/// tagged-enum round trip.
mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<usize, usize>, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<[usize; 2]> = m.iter().map(|(&k, &c)| [k, c]).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<usize, usize>, D::Error> {
        let v = Vec::<[usize; 2]>::deserialize(d)?;
        Ok(v.into_iter().map(|[k, c]| (k, c)).collect())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}:{line}: {source}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
}

/// In-memory copy of the log, mirrored to a file when a path is set.
#[derive(Debug, Default)]
pub struct AuditLog {
    entries: Vec<AuditEntry>,
    file: Option<(PathBuf, File)>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens `path` for appending, creating it if needed.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, AuditError> {
        let path = path.as_ref().to_path_buf();
        let entries = if path.exists() {
            read(&path)?
        } else {
            Vec::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| AuditError::Io {
                path: path.clone(),
                source,
            })?;
        Ok(Self {
            entries,
            file: Some((path, file)),
        })
    }

    pub fn entries(&self) -> &[AuditEntry] {
        &self.entries
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    /// Writes and flushes one line before keeping the entry.
    pub fn append(&mut self, entry: AuditEntry) -> Result<(), AuditError> {
        if let Some((path, file)) = &mut self.file {
            let mut line = serde_json::to_string(&entry).expect("audit entries serialize");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| AuditError::Io {
                    path: path.clone(),
                    source,
                })?;
        }
        self.entries.push(entry);
        Ok(())
    }
}

pub fn read(path: &Path) -> Result<Vec<AuditEntry>, AuditError> {
    let file = File::open(path).map_err(|source| AuditError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| AuditError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|source| AuditError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(entry);
    }
    Ok(out)
}
