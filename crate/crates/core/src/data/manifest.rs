//! JSON-lines dataset manifests and loaded samples.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attributes::{normalize_rating, Attribute, ATTRIBUTE_COUNT};

use super::preprocess::IntensityStats;
use super::volume::{load_volume, NoduleVolume};
use super::DataError;

/// One manifest line: nodule id, relative volume path, average ratings and
/// optional per-rater ratings (a rater may omit attributes).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub volume: String,
    pub ratings: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raters: Option<Vec<BTreeMap<String, f64>>>,
}

/// A parsed and validated dataset manifest.
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    /// Directory volume paths are resolved against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

/// One fully loaded nodule: volume plus ground truth.
#[derive(Clone, Debug)]
pub struct NoduleSample {
    pub id: String,
    pub volume: NoduleVolume,
    /// Average rating per attribute, original scales, scoring order.
    pub ratings: [f64; ATTRIBUTE_COUNT],
    /// Per-rater ratings when available; `None` marks an unrated attribute.
    pub rater_ratings: Option<Vec<[Option<f64>; ATTRIBUTE_COUNT]>>,
}

impl NoduleSample {
    pub fn normalized_ratings(&self) -> [f64; ATTRIBUTE_COUNT] {
        crate::attributes::normalize_ratings(&self.ratings)
            .expect("ratings validated at load time")
    }
}

fn ratings_array(
    map: &BTreeMap<String, f64>,
    entry_id: &str,
) -> Result<[f64; ATTRIBUTE_COUNT], DataError> {
    let mut out = [0.0; ATTRIBUTE_COUNT];
    for attr in Attribute::ALL {
        let value = *map.get(attr.name()).ok_or_else(|| {
            DataError::Validation(format!(
                "entry {entry_id:?}: missing rating for {}",
                attr.name()
            ))
        })?;
        normalize_rating(attr, value).map_err(|e| {
            DataError::Validation(format!("entry {entry_id:?}: {e}"))
        })?;
        out[attr.index()] = value;
    }
    for key in map.keys() {
        if Attribute::from_name(key).is_none() {
            return Err(DataError::Validation(format!(
                "entry {entry_id:?}: unknown attribute {key:?}"
            )));
        }
    }
    Ok(out)
}

fn rater_array(
    map: &BTreeMap<String, f64>,
    entry_id: &str,
) -> Result<[Option<f64>; ATTRIBUTE_COUNT], DataError> {
    let mut out = [None; ATTRIBUTE_COUNT];
    for (key, &value) in map {
        let attr = Attribute::from_name(key).ok_or_else(|| {
            DataError::Validation(format!(
                "entry {entry_id:?}: unknown rater attribute {key:?}"
            ))
        })?;
        normalize_rating(attr, value).map_err(|e| {
            DataError::Validation(format!("entry {entry_id:?} (rater): {e}"))
        })?;
        out[attr.index()] = Some(value);
    }
    Ok(out)
}

impl DatasetManifest {
    /// Parse a JSON-lines manifest and validate ids, scales and volume paths.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let file = fs::File::open(path).map_err(|e| {
            DataError::Format(format!("cannot open manifest {}: {e}", path.display()))
        })?;
        let mut entries = Vec::new();
        let mut ids = HashSet::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
                DataError::Format(format!("manifest line {}: {e}", lineno + 1))
            })?;
            if !ids.insert(entry.id.clone()) {
                return Err(DataError::Validation(format!(
                    "duplicate id {:?} in manifest",
                    entry.id
                )));
            }
            ratings_array(&entry.ratings, &entry.id)?;
            if let Some(raters) = &entry.raters {
                for r in raters {
                    rater_array(r, &entry.id)?;
                }
            }
            let vpath = root.join(&entry.volume);
            if !vpath.is_file() {
                return Err(DataError::Validation(format!(
                    "entry {:?}: volume {} not found",
                    entry.id,
                    vpath.display()
                )));
            }
            entries.push(entry);
        }
        Ok(Self { root, entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut f = fs::File::create(path)?;
        for entry in &self.entries {
            let line = serde_json::to_string(entry).expect("manifest entries serialize");
            writeln!(f, "{line}")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    /// Load every volume and cross-check rater means against the stored
    /// average ratings.
    pub fn load_samples(&self) -> Result<Vec<NoduleSample>, DataError> {
        self.entries.iter().map(|e| self.load_sample(e)).collect()
    }

    pub fn load_sample(&self, entry: &ManifestEntry) -> Result<NoduleSample, DataError> {
        let mut volume = load_volume(&self.root.join(&entry.volume))?;
        volume.id = entry.id.clone();
        let ratings = ratings_array(&entry.ratings, &entry.id)?;
        let rater_ratings = entry
            .raters
            .as_ref()
            .map(|rs| {
                rs.iter()
                    .map(|r| rater_array(r, &entry.id))
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()?;
        if let Some(raters) = &rater_ratings {
            for attr in Attribute::ALL {
                let values: Vec<f64> = raters
                    .iter()
                    .filter_map(|r| r[attr.index()])
                    .collect();
                if values.is_empty() {
                    continue;
                }
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                if (mean - ratings[attr.index()]).abs() > 1e-9 {
                    return Err(DataError::Validation(format!(
                        "entry {:?}: stored {} rating {} is not the rater mean {}",
                        entry.id,
                        attr.name(),
                        ratings[attr.index()],
                        mean
                    )));
                }
            }
        }
        Ok(NoduleSample {
            id: entry.id.clone(),
            volume,
            ratings,
            rater_ratings,
        })
    }
}

/// Sidecar file carrying a training split's intensity statistics.
pub fn write_stats(stats: &IntensityStats, path: &Path) -> Result<(), DataError> {
    let json = serde_json::to_string_pretty(stats).expect("stats serialize");
    fs::write(path, json)?;
    Ok(())
}

pub fn read_stats(path: &Path) -> Result<IntensityStats, DataError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| DataError::Format(format!("stats file {}: {e}", path.display())))
}
