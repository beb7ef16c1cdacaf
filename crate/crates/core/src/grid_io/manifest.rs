use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};

use super::{io_err, GridError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        })
    }
}

impl FromStr for SplitTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(SplitTag::Train),
            "val" | "validation" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            other => Err(format!("unknown split tag {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub scene: PathBuf,
    pub labels: PathBuf,
    pub timestamp: DateTime<Utc>,
    pub split: SplitTag,
}

/// Scene/label pairs, one CSV record per line: `scene,label,timestamp,split`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self, GridError> {
        let m = Self { entries };
        m.check_duplicates()?;
        Ok(m)
    }

    fn check_duplicates(&self) -> Result<(), GridError> {
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if !seen.insert(&e.scene) {
                return Err(GridError::Manifest {
                    line: i + 1,
                    reason: format!("duplicate scene {}", e.scene.display()),
                });
            }
        }
        Ok(())
    }

    /// Parses manifest text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, GridError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("scene,")) {
                continue;
            }
            let err = |reason: String| GridError::Manifest { line: i + 1, reason };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", fields.len())));
            }
            let resolve = |p: &str| {
                let p = Path::new(p);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            };
            let timestamp = DateTime::parse_from_rfc3339(fields[2])
                .map_err(|e| err(format!("timestamp {:?}: {e}", fields[2])))?
                .with_timezone(&Utc);
            entries.push(ManifestEntry {
                scene: resolve(fields[0]),
                labels: resolve(fields[1]),
                timestamp,
                split: fields[3].parse().map_err(err)?,
            });
        }
        Self::new(entries)
    }

    /// Loads a manifest file and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GridError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let m = Self::parse(&text, base)?;
        for (i, e) in m.entries.iter().enumerate() {
            for p in [&e.scene, &e.labels] {
                if !p.exists() {
                    return Err(GridError::Manifest {
                        line: i + 1,
                        reason: format!("{} does not exist", p.display()),
                    });
                }
            }
        }
        Ok(m)
    }

    /// Writes the manifest with paths relative to its own directory when possible.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GridError> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut text = String::from("scene,label,timestamp,split\n");
        for e in &self.entries {
            text.push_str(&format!(
                "{},{},{},{}\n",
                rel(&e.scene),
                rel(&e.labels),
                e.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true),
                e.split
            ));
        }
        std::fs::write(path, text).map_err(io_err(path))
    }

    pub fn with_split(&self, split: SplitTag) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records_and_resolves_paths() {
        let text = "scene,label,timestamp,split\n\
                    a.raster,a.labels,2022-09-23T03:00:00Z,train\n\
                    # comment\n\
                    /abs/b.raster,b.labels,2022-09-23T04:00:00Z,test\n";
        let m = DatasetManifest::parse(text, Path::new("/data")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.entries[0].scene, PathBuf::from("/data/a.raster"));
        assert_eq!(m.entries[1].scene, PathBuf::from("/abs/b.raster"));
        assert_eq!(m.entries[1].split, SplitTag::Test);
    }

    #[test]
    fn rejects_duplicates_and_bad_lines() {
        let dup = "a,l1,2022-01-01T00:00:00Z,train\na,l2,2022-01-01T01:00:00Z,train\n";
        assert!(matches!(
            DatasetManifest::parse(dup, Path::new(".")),
            Err(GridError::Manifest { line: 2, .. })
        ));
        assert!(DatasetManifest::parse("a,b,c\n", Path::new(".")).is_err());
        assert!(DatasetManifest::parse("a,b,2022-01-01T00:00:00Z,holdout\n", Path::new(".")).is_err());
    }

    #[test]
    fn load_requires_existing_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "x.raster,y.raster,2022-01-01T00:00:00Z,train\n").unwrap();
        assert!(DatasetManifest::load(&p).is_err());
    }
}
