use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetError, TrackRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Valid, SplitName::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SplitName {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SplitName::ALL
            .into_iter()
            .find(|n| n.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DatasetError::InvalidArgument(format!("unknown split `{s}` (train, valid, test)")))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub train: Vec<TrackRecord>,
    pub valid: Vec<TrackRecord>,
    pub test: Vec<TrackRecord>,
}

impl Split {
    pub fn get(&self, name: SplitName) -> &[TrackRecord] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Valid => &self.valid,
            SplitName::Test => &self.test,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &TrackRecord> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Achieved record fractions (train, valid, test).
    pub fn fractions(&self) -> [f64; 3] {
        let n = self.len().max(1) as f64;
        [self.train.len() as f64 / n, self.valid.len() as f64 / n, self.test.len() as f64 / n]
    }

    /// Split of a track id, if present.
    pub fn split_of(&self, msd_id: &str) -> Option<SplitName> {
        SplitName::ALL
            .into_iter()
            .find(|&s| self.get(s).iter().any(|r| r.msd_id == msd_id))
    }
}

/// Shuffles artists with `seed` and gives each, with all of its records, to
/// the set furthest below its record target (ties go to the earlier set).
pub fn artist_disjoint_split(records: &[TrackRecord], fractions: [f64; 3], seed: u64) -> Result<Split, DatasetError> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::InvalidArgument(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let mut by_artist: BTreeMap<&str, Vec<&TrackRecord>> = BTreeMap::new();
    for r in records {
        by_artist.entry(r.artist.as_str()).or_default().push(r);
    }
    let mut artists: Vec<Vec<&TrackRecord>> = by_artist.into_values().collect();
    artists.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n = records.len() as f64;
    let mut filled = [0usize; 3];
    let mut split = Split::default();
    for group in artists {
        let deficit = |i: usize| fractions[i] * n - filled[i] as f64;
        let target = (0..3).fold(0, |best, i| if deficit(i) > deficit(best) { i } else { best });
        filled[target] += group.len();
        let dest = match target {
            0 => &mut split.train,
            1 => &mut split.valid,
            _ => &mut split.test,
        };
        dest.extend(group.into_iter().cloned());
    }
    Ok(split)
}
