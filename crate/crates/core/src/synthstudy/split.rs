use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::StudyRecord;
use crate::error::{Error, FormatError, Result};

/// Disjoint train/val/test study ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

impl DatasetSplit {
    /// Resolves each id list against `studies` (ids need not be positions).
    pub fn select<'a>(&self, studies: &'a [StudyRecord]) -> Result<[Vec<&'a StudyRecord>; 3]> {
        let index: std::collections::HashMap<u64, &StudyRecord> = studies.iter().map(|s| (s.study_id, s)).collect();
        let pick = |ids: &[u64]| -> Result<Vec<&'a StudyRecord>> {
            ids.iter()
                .map(|id| {
                    index.get(id).copied().ok_or_else(|| {
                        Error::Format(FormatError::Malformed(format!("split references unknown study {id}")))
                    })
                })
                .collect()
        };
        Ok([pick(&self.train)?, pick(&self.val)?, pick(&self.test)?])
    }
}

/// Seeded shuffle, then contiguous train/val/test blocks. Train and val sizes
/// are rounded; test takes the remainder.
pub fn split_dataset(studies: &[StudyRecord], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let mut ids: Vec<u64> = studies.iter().map(|s| s.study_id).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len() as f64;
    let n_train = (a * n).round() as usize;
    let n_val = ((b * n).round() as usize).min(ids.len() - n_train);
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok(DatasetSplit { seed, train: ids, val, test })
}

pub fn save_split(split: &DatasetSplit, path: impl AsRef<Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(split).expect("split serialises");
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_split(path: impl AsRef<Path>) -> Result<DatasetSplit> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(FormatError::Malformed(format!("split file: {e}"))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthstudy::{generate_dataset, GeneratorConfig};
    use std::collections::HashSet;

    fn studies(n: usize) -> Vec<StudyRecord> {
        generate_dataset(&GeneratorConfig { n_patients: n, embed_dim: 2, ..Default::default() }).unwrap()
    }

    #[test]
    fn sizes() {
        let s = split_dataset(&studies(100), (0.7, 0.15, 0.15), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));
        let e = split_dataset(&[], (0.7, 0.15, 0.15), 3).unwrap();
        assert!(e.train.is_empty() && e.val.is_empty() && e.test.is_empty());
    }

    #[test]
    fn clinical_scale_test_size() {
        // Ids only matter here, so fabricate cheap records.
        let proto = studies(1).pop().unwrap();
        let many: Vec<StudyRecord> = (0..12_180).map(|i| StudyRecord { study_id: i, ..proto.clone() }).collect();
        let s = split_dataset(&many, (0.7, 0.15, 0.15), 0).unwrap();
        assert!((s.test.len() as i64 - 1827).abs() <= 1);
    }

    #[test]
    fn disjoint_and_covering() {
        let data = studies(333);
        let s = split_dataset(&data, (0.7, 0.15, 0.15), 11).unwrap();
        let all: HashSet<u64> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        assert_eq!(all.len(), 333);
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 333);
        assert_eq!(s, split_dataset(&data, (0.7, 0.15, 0.15), 11).unwrap());
    }

    #[test]
    fn bad_ratios() {
        assert!(matches!(split_dataset(&[], (0.75, 0.15, 0.15), 0), Err(Error::Config(_))));
    }

    #[test]
    fn sidecar_roundtrip() {
        let s = split_dataset(&studies(20), (0.7, 0.15, 0.15), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("split.json");
        save_split(&s, &p).unwrap();
        assert_eq!(load_split(&p).unwrap(), s);
    }
}
