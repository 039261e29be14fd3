//! Delimited text tables, the on-disk dataset cache and merging of the
//! public NSW / PSID / CPS files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use fragility_core::data::{merge, MergeKeep};
use fragility_core::{Dataset, Delimiter, SchemaSpec, UnitRecord};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Parses a delimited numeric table. Blank lines are skipped, as is a first
/// row that repeats the column names.
pub fn parse_table(text: &str, schema: &SchemaSpec) -> Result<Dataset> {
    schema.validate()?;
    let cols = &schema.column_names;
    let treat_at = schema.column_index(&schema.treatment_column).expect("validated");
    let outcome_at = schema.column_index(&schema.outcome_column).expect("validated");
    let cov_at: Vec<usize> = schema
        .covariate_columns
        .iter()
        .map(|c| schema.column_index(c).expect("validated"))
        .collect();

    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let fields = split_fields(line, schema.delimiter);
        if fields.is_empty() || (fields.len() == 1 && fields[0].is_empty()) {
            continue;
        }
        if records.is_empty() && fields.iter().zip(cols).all(|(f, c)| f == c) && fields.len() == cols.len() {
            continue;
        }
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                line: line_no,
                column: format!("#{}", fields.len()),
                message: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
        }
        let mut values = Vec::with_capacity(fields.len());
        for (field, name) in fields.iter().zip(cols) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line: line_no,
                column: name.clone(),
                message: format!("`{field}` is not numeric"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    column: name.clone(),
                    message: format!("`{field}` is not a finite number"),
                });
            }
            values.push(v);
        }
        let treated = match values[treat_at] {
            0.0 => false,
            1.0 => true,
            v => {
                return Err(fragility_core::Error::Validation(format!(
                    "line {line_no}: treatment value {v} is not 0 or 1"
                ))
                .into())
            }
        };
        records.push(UnitRecord {
            unit_id: records.len(),
            treated,
            outcome: values[outcome_at],
            covariates: cov_at.iter().map(|&i| values[i]).collect(),
        });
    }
    Ok(Dataset::new(records, schema.clone(), "parsed")?)
}

fn split_fields(line: &str, delimiter: Delimiter) -> Vec<&str> {
    match delimiter {
        Delimiter::Whitespace => line.split_whitespace().collect(),
        Delimiter::Comma => {
            if line.trim().is_empty() {
                Vec::new()
            } else {
                line.split(',').map(str::trim).collect()
            }
        }
    }
}

/// Writes records in schema column order; `parse_table` reads it back to
/// an identical dataset.
pub fn serialize_table(data: &Dataset) -> String {
    let schema = data.schema();
    let sep = match schema.delimiter {
        Delimiter::Whitespace => " ",
        Delimiter::Comma => ",",
    };
    let mut out = String::new();
    for u in data.records() {
        let fields: Vec<String> = schema
            .column_names
            .iter()
            .map(|c| {
                if *c == schema.treatment_column {
                    u8::from(u.treated).to_string()
                } else if *c == schema.outcome_column {
                    format!("{:?}", u.outcome)
                } else {
                    let k = schema.covariate_index(c).expect("schema column");
                    format!("{:?}", u.covariates[k])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", fields.join(sep));
    }
    out
}

/// The public files of the reanalysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKey {
    NswTreated,
    PsidControls,
    CpsControls,
}

impl SourceKey {
    pub const ALL: [SourceKey; 3] = [SourceKey::NswTreated, SourceKey::PsidControls, SourceKey::CpsControls];

    pub fn file_name(self) -> &'static str {
        match self {
            SourceKey::NswTreated => "nswre74_treated.txt",
            SourceKey::PsidControls => "psid_controls.txt",
            SourceKey::CpsControls => "cps_controls.txt",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKey::NswTreated => "nsw_treated",
            SourceKey::PsidControls => "psid_controls",
            SourceKey::CpsControls => "cps_controls",
        }
    }
}

/// Where uncached files come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Upstream {
    /// Base URL; the file name is appended.
    Http(String),
    /// A directory holding a mirror of the files.
    Mirror(PathBuf),
}

impl Upstream {
    pub fn parse(spec: &str, relative_to: &Path) -> Self {
        if spec.starts_with("http://") || spec.starts_with("https://") {
            Upstream::Http(spec.trim_end_matches('/').to_string())
        } else {
            Upstream::Mirror(relative_to.join(spec))
        }
    }

    fn get(&self, key: SourceKey) -> Result<Vec<u8>> {
        let fail = |message: String| Error::Fetch {
            key: key.as_str().into(),
            message,
        };
        match self {
            Upstream::Http(base) => {
                let url = format!("{base}/{}", key.file_name());
                let mut resp = ureq::get(&url).call().map_err(|e| fail(format!("{url}: {e}")))?;
                resp.body_mut()
                    .with_config()
                    .limit(64 << 20)
                    .read_to_vec()
                    .map_err(|e| fail(format!("{url}: {e}")))
            }
            Upstream::Mirror(dir) => {
                let path = dir.join(key.file_name());
                fs::read(&path).map_err(|e| fail(format!("{}: {e}", path.display())))
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    /// File name to hex SHA-256, recorded at first fetch.
    pub sha256: BTreeMap<String, String>,
}

pub const MANIFEST: &str = "manifest.json";

impl Manifest {
    pub fn load(cache_dir: &Path) -> Result<Self> {
        let path = cache_dir.join(MANIFEST);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    fn store(&self, cache_dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&cache_dir.join(MANIFEST), text.as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Outcome of a fetch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fetched {
    pub text: String,
    pub sha256: String,
    pub cache_hit: bool,
}

/// Returns the file text for `key`, from `cache_dir` when present and from
/// `upstream` otherwise. The first digest seen for a file is recorded in
/// `manifest.json` and every later read is checked against it. An exclusive
/// lock on the cache directory serialises concurrent fetches.
pub fn fetch_dataset(
    key: SourceKey,
    cache_dir: &Path,
    upstream: Option<&Upstream>,
) -> Result<Fetched> {
    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    let lock_path = cache_dir.join(".lock");
    let lock = File::create(&lock_path).map_err(|e| Error::io(&lock_path, e))?;
    lock.lock().map_err(|e| Error::io(&lock_path, e))?;

    let mut manifest = Manifest::load(cache_dir)?;
    let path = cache_dir.join(key.file_name());
    let (bytes, cache_hit) = match fs::read(&path) {
        Ok(b) => (b, true),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => match upstream {
            Some(up) => (up.get(key)?, false),
            None => {
                return Err(Error::Fetch {
                    key: key.as_str().into(),
                    message: format!("not cached in {} and fetching is disabled", cache_dir.display()),
                })
            }
        },
        Err(e) => return Err(Error::io(path, e)),
    };
    let digest = sha256_hex(&bytes);
    match manifest.sha256.get(key.file_name()) {
        Some(recorded) if *recorded != digest => {
            return Err(Error::Integrity {
                key: key.as_str().into(),
                expected: recorded.clone(),
                actual: digest,
            })
        }
        Some(_) => {}
        None => {
            manifest.sha256.insert(key.file_name().into(), digest.clone());
            manifest.store(cache_dir)?;
        }
    }
    if !cache_hit {
        write_atomic(&path, &bytes)?;
    }
    drop(lock);
    let text = String::from_utf8(bytes).map_err(|e| Error::Fetch {
        key: key.as_str().into(),
        message: format!("not UTF-8: {e}"),
    })?;
    Ok(Fetched {
        text,
        sha256: digest,
        cache_hit,
    })
}

/// Reads a cached file without touching the network.
pub fn load_cached(key: SourceKey, cache_dir: &Path, schema: &SchemaSpec) -> Result<Dataset> {
    let path = cache_dir.join(key.file_name());
    if !path.exists() {
        return Err(Error::Dependency {
            artifact: path.display().to_string(),
            producer: "fetch".into(),
        });
    }
    let fetched = fetch_dataset(key, cache_dir, None)?;
    let data = parse_table(&fetched.text, schema)?;
    Ok(Dataset::renumbered(data.records().to_vec(), schema.clone(), key.as_str().into()))
}

/// NSW treated rows combined with the controls of one observational survey.
pub fn composite(
    treated: &Dataset,
    controls: &Dataset,
) -> Result<Dataset> {
    Ok(merge(treated, controls, MergeKeep::TreatedOnly)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nsw_rows() -> &'static str {
        "1  37  11  1  0  1  1  0.0000  0.0000  9930.0460\n\
         1  22  9  0  1  0  1  0.0000  0.0000  3595.8940\n\
         \n\
         0  30  12  1  0  0  0  0.0000  0.0000  24909.4500\n"
    }

    #[test]
    fn parses_nsw_layout() {
        let d = parse_table(nsw_rows(), &SchemaSpec::lalonde()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!((d.treated_count(), d.control_count()), (2, 1));
        assert_eq!(d.records()[1].covariates[0], 22.0);
        assert_eq!(d.records()[2].outcome, 24909.45);
    }

    #[test]
    fn missing_value_names_column() {
        let text = "1 37 11 1 0 1 1 0 0 NA\n";
        match parse_table(text, &SchemaSpec::lalonde()).unwrap_err() {
            Error::Parse { line, column, .. } => assert_eq!((line, column.as_str()), (1, "re78")),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn arity_and_treatment_errors() {
        let short = "1 37 11\n";
        assert!(matches!(
            parse_table(short, &SchemaSpec::lalonde()),
            Err(Error::Parse { line: 1, .. })
        ));
        let bad = "2 37 11 1 0 1 1 0 0 1\n";
        assert!(matches!(
            parse_table(bad, &SchemaSpec::lalonde()),
            Err(Error::Core(fragility_core::Error::Validation(_)))
        ));
    }

    #[test]
    fn header_row_skipped() {
        let schema = SchemaSpec::simulated();
        let d = parse_table("d,y,latent_type\n1,0.5,0\n0,2,3\n", &schema).unwrap();
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn mirror_fetch_then_cache_hit() {
        let mirror = tempfile::tempdir().unwrap();
        let cache = tempfile::tempdir().unwrap();
        fs::write(mirror.path().join("psid_controls.txt"), nsw_rows()).unwrap();
        let up = Upstream::Mirror(mirror.path().to_path_buf());
        let cold = fetch_dataset(SourceKey::PsidControls, cache.path(), Some(&up)).unwrap();
        assert!(!cold.cache_hit);
        assert_eq!(cold.text, nsw_rows());
        let manifest = Manifest::load(cache.path()).unwrap();
        assert_eq!(manifest.sha256["psid_controls.txt"], sha256_hex(nsw_rows().as_bytes()));

        let gone = Upstream::Mirror(mirror.path().join("absent"));
        let warm = fetch_dataset(SourceKey::PsidControls, cache.path(), Some(&gone)).unwrap();
        assert!(warm.cache_hit);
        assert_eq!(warm.text, cold.text);
        assert_eq!(fs::read(cache.path().join("psid_controls.txt")).unwrap(), nsw_rows().as_bytes());
    }

    #[test]
    fn cold_cache_without_upstream_fails() {
        let cache = tempfile::tempdir().unwrap();
        assert!(matches!(
            fetch_dataset(SourceKey::NswTreated, cache.path(), None),
            Err(Error::Fetch { .. })
        ));
        let nowhere = Upstream::Mirror(cache.path().join("nope"));
        assert!(matches!(
            fetch_dataset(SourceKey::NswTreated, cache.path(), Some(&nowhere)),
            Err(Error::Fetch { .. })
        ));
    }

    #[test]
    fn tampered_cache_is_integrity_error() {
        let mirror = tempfile::tempdir().unwrap();
        let cache = tempfile::tempdir().unwrap();
        fs::write(mirror.path().join("cps_controls.txt"), nsw_rows()).unwrap();
        let up = Upstream::Mirror(mirror.path().to_path_buf());
        fetch_dataset(SourceKey::CpsControls, cache.path(), Some(&up)).unwrap();
        fs::write(cache.path().join("cps_controls.txt"), "0 1 1 0 0 0 0 0 0 0\n").unwrap();
        assert!(matches!(
            fetch_dataset(SourceKey::CpsControls, cache.path(), Some(&up)),
            Err(Error::Integrity { .. })
        ));
    }

    #[test]
    fn upstream_spec_forms() {
        assert_eq!(
            Upstream::parse("https://example.org/data/", Path::new("/x")),
            Upstream::Http("https://example.org/data".into())
        );
        assert_eq!(
            Upstream::parse("mirror", Path::new("/x")),
            Upstream::Mirror(PathBuf::from("/x/mirror"))
        );
    }
}
