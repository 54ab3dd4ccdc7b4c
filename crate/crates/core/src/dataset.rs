//! JSON-lines dataset files.
//!
//! Each split file starts with one header record `{"header": {...}}`
//! followed by one scene per line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scene::{ScenarioKind, Scene};
use crate::scenegen::{generate, mix64, scene_rng, GenParams};

pub const DATASET_FORMAT: u32 = 1;
const SPLIT_SALT: u64 = 0x5EED_5B17;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.jsonl", self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| invalid(format!("unknown split `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    #[serde(default)]
    pub counts: BTreeMap<ScenarioKind, usize>,
    /// Train/val/test fractions, summing to one.
    #[serde(default = "default_splits")]
    pub splits: [f64; 3],
    #[serde(default)]
    pub generator: GenParams,
}

fn default_splits() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

impl DatasetManifest {
    pub fn new(seed: u64, counts: &[(ScenarioKind, usize)]) -> Self {
        Self {
            seed,
            counts: counts.iter().cloned().collect(),
            splits: default_splits(),
            generator: GenParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.splits.iter().any(|f| !(*f >= 0.0))
            || (self.splits.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(invalid(format!(
                "split fractions {:?} must be non-negative and sum to 1",
                self.splits
            )));
        }
        self.generator.validate()
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: u32,
    pub split: Split,
    pub num_scenes: usize,
    pub manifest: DatasetManifest,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub provenance: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    header: DatasetHeader,
}

/// Generates every scene of the manifest, in id order. Ids are assigned
/// consecutively over kinds in `ScenarioKind::ALL` order.
pub fn generate_all(m: &DatasetManifest) -> Result<Vec<Scene>> {
    m.validate()?;
    let mut out = Vec::with_capacity(m.total());
    let mut id = 0u64;
    for kind in ScenarioKind::ALL {
        for _ in 0..m.counts.get(&kind).copied().unwrap_or(0) {
            out.push(generate(
                kind,
                id,
                &m.generator,
                &mut scene_rng(m.seed, id),
            )?);
            id += 1;
        }
    }
    Ok(out)
}

/// Assigns scenes to splits, stratified by kind, with a seeded shuffle.
pub fn split_scenes(m: &DatasetManifest, scenes: Vec<Scene>) -> BTreeMap<Split, Vec<Scene>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(m.seed ^ SPLIT_SALT));
    let mut out: BTreeMap<Split, Vec<Scene>> =
        Split::ALL.iter().map(|s| (*s, Vec::new())).collect();
    for kind in ScenarioKind::ALL {
        let mut group: Vec<Scene> = scenes.iter().filter(|s| s.kind == kind).cloned().collect();
        group.shuffle(&mut rng);
        let n = group.len();
        let n_train = (m.splits[0] * n as f64).round() as usize;
        let n_val = ((m.splits[1] * n as f64).round() as usize).min(n - n_train);
        let mut rest = group.into_iter();
        out.get_mut(&Split::Train)
            .unwrap()
            .extend(rest.by_ref().take(n_train));
        out.get_mut(&Split::Val)
            .unwrap()
            .extend(rest.by_ref().take(n_val));
        out.get_mut(&Split::Test).unwrap().extend(rest);
    }
    for v in out.values_mut() {
        v.sort_by_key(|s| s.id);
    }
    out
}

pub fn write_split(path: &Path, header: &DatasetHeader, scenes: &[Scene]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(
        &mut w,
        &HeaderRecord {
            header: header.clone(),
        },
    )?;
    w.write_all(b"\n")?;
    for s in scenes {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_split(path: &Path) -> Result<(DatasetHeader, Vec<Scene>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| invalid(format!("{}: missing header record", path.display())))??;
    let HeaderRecord { header } = serde_json::from_str(&first)?;
    if header.format != DATASET_FORMAT {
        return Err(invalid(format!(
            "{}: unsupported dataset format {}",
            path.display(),
            header.format
        )));
    }
    let mut scenes = Vec::with_capacity(header.num_scenes);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Scene = serde_json::from_str(&line)?;
        s.validate()?;
        scenes.push(s);
    }
    if scenes.len() != header.num_scenes {
        return Err(invalid(format!(
            "{}: header announces {} scenes, found {}",
            path.display(),
            header.num_scenes,
            scenes.len()
        )));
    }
    Ok((header, scenes))
}

/// Generates the dataset and writes `train.jsonl`, `val.jsonl`, `test.jsonl`
/// into `dir`. Returns the written paths.
pub fn build_dataset(m: &DatasetManifest, dir: &Path) -> Result<Vec<PathBuf>> {
    build_dataset_stamped(m, dir, serde_json::Value::Null)
}

/// [`build_dataset`] with `provenance` recorded in every split header.
pub fn build_dataset_stamped(
    m: &DatasetManifest,
    dir: &Path,
    provenance: serde_json::Value,
) -> Result<Vec<PathBuf>> {
    let scenes = generate_all(m)?;
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (split, group) in split_scenes(m, scenes) {
        let path = dir.join(split.file_name());
        let header = DatasetHeader {
            format: DATASET_FORMAT,
            split,
            num_scenes: group.len(),
            manifest: m.clone(),
            provenance: provenance.clone(),
        };
        write_split(&path, &header, &group)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_counts_give_empty_files_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(1, &[]);
        let paths = build_dataset(&m, dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        for p in paths {
            let text = std::fs::read_to_string(&p).unwrap();
            assert_eq!(text.lines().count(), 1);
            let (h, scenes) = read_split(&p).unwrap();
            assert_eq!(h.num_scenes, 0);
            assert!(scenes.is_empty());
            assert_eq!(h.manifest, m);
        }
    }

    #[test]
    fn round_trip_is_exact_and_splits_disjoint() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(
            7,
            &[
                (ScenarioKind::CarFollow, 10),
                (ScenarioKind::YieldGo, 20),
                (ScenarioKind::TurnBranch, 10),
            ],
        );
        build_dataset(&m, dir.path()).unwrap();
        let original = generate_all(&m).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        let mut total = 0;
        for split in Split::ALL {
            let (h, scenes) = read_split(&dir.path().join(split.file_name())).unwrap();
            assert_eq!(h.split, split);
            for s in scenes {
                assert!(seen.insert(s.id), "scene {} in two splits", s.id);
                assert_eq!(s, original[s.id as usize]);
                total += 1;
            }
        }
        assert_eq!(total, 40);

        // rebuilding reproduces the files byte for byte
        let dir2 = tempfile::tempdir().unwrap();
        build_dataset(&m, dir2.path()).unwrap();
        for split in Split::ALL {
            let a = std::fs::read(dir.path().join(split.file_name())).unwrap();
            let b = std::fs::read(dir2.path().join(split.file_name())).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn yield_mode_frequency_matches_p() {
        for p in [0.5, 0.3] {
            let mut m = DatasetManifest::new(11, &[(ScenarioKind::YieldGo, 2000)]);
            m.generator.p_first_goes = p;
            let scenes = generate_all(&m).unwrap();
            let k = scenes.iter().filter(|s| s.mode_label == 0).count() as f64;
            let n = scenes.len() as f64;
            let sigma = (n * p * (1.0 - p)).sqrt();
            assert!((k - n * p).abs() <= 3.0 * sigma, "p={p}: {k} of {n}");
        }
    }

    #[test]
    fn rejects_bad_splits_and_headers() {
        let mut m = DatasetManifest::new(1, &[]);
        m.splits = [0.5, 0.5, 0.5];
        assert!(m.validate().is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(read_split(&p).is_err());
        std::fs::write(&p, "{\"header\":{\"format\":1,\"split\":\"train\",\"num_scenes\":2,\"manifest\":{\"seed\":0}}}\n").unwrap();
        assert!(read_split(&p).is_err());
    }
}
