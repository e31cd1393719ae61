//! R² scoring, per-track prediction sets, late fusion and report tables.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::path::Path;

use crate::dataset::{MoodLabel, NormStats, SplitName};

#[derive(Debug)]
pub enum EvalError {
    LengthMismatch { pred: usize, truth: usize },
    TooFew(usize),
    ZeroVariance,
    TrackMismatch { only_a: Vec<String>, only_b: Vec<String> },
    InvalidWeight(f64),
    Empty,
    Parse { line: usize, message: String },
    Io(io::Error),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LengthMismatch { pred, truth } => write!(f, "{pred} predictions for {truth} targets"),
            Self::TooFew(n) => write!(f, "R² needs at least 2 values, got {n}"),
            Self::ZeroVariance => write!(f, "targets have zero variance"),
            Self::TrackMismatch { only_a, only_b } => write!(
                f,
                "prediction sets cover different tracks (only in first: [{}]; only in second: [{}])",
                only_a.join(" "),
                only_b.join(" ")
            ),
            Self::InvalidWeight(w) => write!(f, "fusion weight {w} outside [0, 1]"),
            Self::Empty => write!(f, "no predictions"),
            Self::Parse { line, message } => write!(f, "line {line}: {message}"),
            Self::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for EvalError {}

impl From<io::Error> for EvalError {
    fn from(e: io::Error) -> Self {
        Self::Io(e)
    }
}

impl From<csv::Error> for EvalError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map_or(0, |p| p.line() as usize);
        Self::Parse {
            line,
            message: e.to_string(),
        }
    }
}

/// `1 - SS_res / SS_tot`, with `SS_tot` taken about the mean of `truth`.
pub fn r2_score(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if truth.len() < 2 {
        return Err(EvalError::TooFew(truth.len()));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackPrediction {
    pub msd_id: String,
    pub split: SplitName,
    pub pred: MoodLabel,
    pub truth: MoodLabel,
}

/// One row per track.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    pub rows: Vec<TrackPrediction>,
}

const PREDICTION_HEADER: [&str; 6] = ["msd_id", "split", "valence_pred", "arousal_pred", "valence_true", "arousal_true"];

impl PredictionSet {
    pub fn new(rows: Vec<TrackPrediction>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn split(&self, split: SplitName) -> PredictionSet {
        PredictionSet::new(self.rows.iter().filter(|r| r.split == split).cloned().collect())
    }

    pub fn has_split(&self, split: SplitName) -> bool {
        self.rows.iter().any(|r| r.split == split)
    }

    /// R² per dimension (valence, arousal).
    pub fn r2(&self) -> Result<[f64; 2], EvalError> {
        let col = |f: fn(&TrackPrediction) -> f64| self.rows.iter().map(f).collect::<Vec<_>>();
        Ok([
            r2_score(&col(|r| r.pred.valence), &col(|r| r.truth.valence))?,
            r2_score(&col(|r| r.pred.arousal), &col(|r| r.truth.arousal))?,
        ])
    }

    /// Replaces every truth label with the one in `truth` (by id); tracks
    /// absent from `truth` are an error.
    pub fn with_truth(&self, truth: &HashMap<String, MoodLabel>) -> Result<PredictionSet, EvalError> {
        let missing: Vec<String> = self
            .rows
            .iter()
            .filter(|r| !truth.contains_key(&r.msd_id))
            .map(|r| r.msd_id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(EvalError::TrackMismatch {
                only_a: missing,
                only_b: Vec::new(),
            });
        }
        Ok(PredictionSet::new(
            self.rows
                .iter()
                .map(|r| TrackPrediction {
                    truth: truth[&r.msd_id],
                    ..r.clone()
                })
                .collect(),
        ))
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = PREDICTION_HEADER.join(",");
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                csv_field(&r.msd_id),
                r.split,
                r.pred.valence,
                r.pred.arousal,
                r.truth.valence,
                r.truth.arousal
            );
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        Ok(fs::write(path, self.to_csv_string())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let idx: Vec<usize> = PREDICTION_HEADER
            .iter()
            .map(|c| {
                headers.iter().position(|h| h.trim() == *c).ok_or_else(|| EvalError::Parse {
                    line: 1,
                    message: format!("missing column `{c}`"),
                })
            })
            .collect::<Result<_, _>>()?;
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let get = |k: usize| rec.get(idx[k]).unwrap_or("").trim();
            let num = |k: usize| {
                get(k).parse::<f64>().map_err(|e| EvalError::Parse {
                    line,
                    message: format!("{}: {e}", PREDICTION_HEADER[k]),
                })
            };
            let split = get(1).parse::<SplitName>().map_err(|e| EvalError::Parse {
                line,
                message: e.to_string(),
            })?;
            rows.push(TrackPrediction {
                msd_id: get(0).to_string(),
                split,
                pred: MoodLabel::new(num(2)?, num(3)?),
                truth: MoodLabel::new(num(4)?, num(5)?),
            });
        }
        Ok(Self { rows })
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn check_same_tracks<'b>(a: &PredictionSet, b: &'b PredictionSet) -> Result<HashMap<&'b str, &'b TrackPrediction>, EvalError> {
    let ids_a: BTreeSet<&str> = a.rows.iter().map(|r| r.msd_id.as_str()).collect();
    let ids_b: BTreeSet<&str> = b.rows.iter().map(|r| r.msd_id.as_str()).collect();
    if ids_a != ids_b || ids_a.len() != a.len() || ids_b.len() != b.len() {
        return Err(EvalError::TrackMismatch {
            only_a: ids_a.difference(&ids_b).map(|s| s.to_string()).collect(),
            only_b: ids_b.difference(&ids_a).map(|s| s.to_string()).collect(),
        });
    }
    Ok(b.rows.iter().map(|r| (r.msd_id.as_str(), r)).collect())
}

/// Per track and dimension `w * a + (1 - w) * b`, in the row order of `a`.
/// Truth and split come from `a`. `w` of exactly 0 or 1 copies `b` or `a`.
pub fn late_fusion(a: &PredictionSet, b: &PredictionSet, w: f64) -> Result<PredictionSet, EvalError> {
    if !(0.0..=1.0).contains(&w) {
        return Err(EvalError::InvalidWeight(w));
    }
    let by_id = check_same_tracks(a, b)?;
    let mix = |x: f64, y: f64| {
        if w == 1.0 {
            x
        } else if w == 0.0 {
            y
        } else {
            w * x + (1.0 - w) * y
        }
    };
    Ok(PredictionSet::new(
        a.rows
            .iter()
            .map(|ra| {
                let rb = by_id[ra.msd_id.as_str()];
                TrackPrediction {
                    pred: MoodLabel::new(mix(ra.pred.valence, rb.pred.valence), mix(ra.pred.arousal, rb.pred.arousal)),
                    ..ra.clone()
                }
            })
            .collect(),
    ))
}

pub const FUSION_STEPS: usize = 10;

/// `k / 10` for `k = 0..=10`.
pub fn fusion_weights() -> Vec<f64> {
    (0..=FUSION_STEPS).map(|k| k as f64 / FUSION_STEPS as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionRow {
    pub weight: f64,
    pub r2: [f64; 2],
}

/// Which rows choose the fusion weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightSelection {
    /// Choose on the validation rows, report on the test rows.
    #[default]
    Validation,
    /// Choose on the reported rows themselves.
    Reported,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionReport {
    /// R² of the reported rows at each weight of the first set.
    pub rows: Vec<FusionRow>,
    /// Per-dimension weight with the highest reported R².
    pub best: [f64; 2],
    /// Per-dimension weight chosen by the selection rule.
    pub selected: [f64; 2],
    /// Reported R² at the selected weights.
    pub selected_r2: [f64; 2],
}

fn argmax_weight(rows: &[FusionRow], dim: usize) -> f64 {
    rows.iter()
        .fold(None::<&FusionRow>, |best, r| match best {
            Some(b) if b.r2[dim] >= r.r2[dim] => Some(b),
            _ => Some(r),
        })
        .map_or(0.0, |r| r.weight)
}

fn grid(a: &PredictionSet, b: &PredictionSet) -> Result<Vec<FusionRow>, EvalError> {
    fusion_weights()
        .into_iter()
        .map(|w| {
            Ok(FusionRow {
                weight: w,
                r2: late_fusion(a, b, w)?.r2()?,
            })
        })
        .collect()
}

/// R² per dimension for each weight of `a` in `{0, 0.1, ..., 1}`.
///
/// With [`WeightSelection::Validation`], rows are scored on the test tracks
/// and the weight is chosen on the validation tracks; sets without split
/// tags for both fall back to scoring and choosing on all rows.
pub fn fusion_grid_search(a: &PredictionSet, b: &PredictionSet, selection: WeightSelection) -> Result<FusionReport, EvalError> {
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    check_same_tracks(a, b)?;
    let split_tagged = a.has_split(SplitName::Valid) && a.has_split(SplitName::Test);
    let (rows, chooser) = match (selection, split_tagged) {
        (WeightSelection::Validation, true) => {
            let rows = grid(&a.split(SplitName::Test), &b.split(SplitName::Test))?;
            let chooser = grid(&a.split(SplitName::Valid), &b.split(SplitName::Valid))?;
            (rows, chooser)
        }
        _ => {
            let rows = grid(a, b)?;
            (rows.clone(), rows)
        }
    };
    let best = [argmax_weight(&rows, 0), argmax_weight(&rows, 1)];
    let selected = [argmax_weight(&chooser, 0), argmax_weight(&chooser, 1)];
    let at = |w: f64, d: usize| rows.iter().find(|r| r.weight == w).map_or(f64::NAN, |r| r.r2[d]);
    Ok(FusionReport {
        selected_r2: [at(selected[0], 0), at(selected[1], 1)],
        rows,
        best,
        selected,
    })
}

impl FusionReport {
    /// `weight,r2_valence,r2_arousal`, one row per weight.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("weight,r2_valence,r2_arousal\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:.1},{},{}", r.weight, r.r2[0], r.r2[1]);
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        Ok(fs::write(path, self.to_csv_string())?)
    }
}

/// Test-set R² of one (mode, model) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportEntry {
    pub mode: String,
    pub model: String,
    pub r2: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub entries: Vec<ReportEntry>,
    /// Label statistics used for z-scoring, if known.
    pub norm: Option<NormStats>,
}

impl Report {
    /// Sorts entries by (mode, model).
    pub fn new(mut entries: Vec<ReportEntry>, norm: Option<NormStats>) -> Result<Self, EvalError> {
        if entries.is_empty() {
            return Err(EvalError::Empty);
        }
        entries.sort_by(|a, b| (&a.mode, &a.model).cmp(&(&b.mode, &b.model)));
        Ok(Self { entries, norm })
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("mode,model,r2_valence,r2_arousal\n");
        for e in &self.entries {
            let _ = writeln!(s, "{},{},{},{}", csv_field(&e.mode), csv_field(&e.model), e.r2[0], e.r2[1]);
        }
        s
    }

    pub fn from_csv_str(text: &str) -> Result<Self, EvalError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |k: usize| {
                rec.get(k).unwrap_or("").trim().parse::<f64>().map_err(|e| EvalError::Parse {
                    line: i + 2,
                    message: e.to_string(),
                })
            };
            entries.push(ReportEntry {
                mode: rec.get(0).unwrap_or("").to_string(),
                model: rec.get(1).unwrap_or("").to_string(),
                r2: [num(2)?, num(3)?],
            });
        }
        Self::new(entries, None)
    }

    /// Fixed-width table with a footnote on label normalization.
    pub fn to_table(&self) -> String {
        let mw = self.entries.iter().map(|e| e.model.len()).max().unwrap_or(0).max(5);
        let mut s = format!("{:<8} {:<mw$} {:>8} {:>8}\n", "mode", "model", "valence", "arousal");
        for e in &self.entries {
            let _ = writeln!(s, "{:<8} {:<mw$} {:>8.3} {:>8.3}", e.mode, e.model, e.r2[0], e.r2[1]);
        }
        match &self.norm {
            Some(n) => {
                let _ = writeln!(
                    s,
                    "\nLabels were z-scored before training: valence mean {} std {}, arousal mean {} std {}. \
                     Multiply a prediction by std and add mean to return to the lexicon scale.",
                    n.mean[0], n.std[0], n.mean[1], n.std[1]
                );
            }
            None => s.push_str("\nLabel normalization statistics were not supplied.\n"),
        }
        s
    }
}
