use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::{DatasetError, Lexicon, LexiconEntry, MoodLabel, NormStats, TrackRecord};

const LABEL_COLUMNS: [&str; 5] = ["msd_id", "artist", "title", "valence", "arousal"];

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, DatasetError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
}

fn number(row: &csv::StringRecord, idx: usize, line: usize, name: &str) -> Result<f64, DatasetError> {
    let raw = row.get(idx).unwrap_or("");
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DatasetError::NonNumeric {
            row: line,
            column: name.to_string(),
            value: raw.to_string(),
        })
}

/// Reads `msd_id,artist,title,valence,arousal` plus optional `audio_path`
/// and `lyrics` columns; any other column is kept verbatim.
pub fn load_label_csv(path: impl AsRef<Path>) -> Result<Vec<TrackRecord>, DatasetError> {
    let mut r = csv::ReaderBuilder::new().from_path(path)?;
    let headers = r.headers()?.clone();
    let idx: Vec<usize> = LABEL_COLUMNS.iter().map(|c| column(&headers, c)).collect::<Result<_, _>>()?;
    let audio_col = column(&headers, "audio_path").ok();
    let lyrics_col = column(&headers, "lyrics").ok();
    let known: Vec<usize> = idx.iter().copied().chain(audio_col).chain(lyrics_col).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let field = |j: usize| row.get(j).unwrap_or("").to_string();
        let id = field(idx[0]).trim().to_string();
        if id.is_empty() {
            return Err(DatasetError::InvalidArgument(format!("row {line}: empty msd_id")));
        }
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId(id));
        }
        let artist = field(idx[1]);
        if artist.trim().is_empty() {
            return Err(DatasetError::InvalidArgument(format!("row {line}: empty artist for {id}")));
        }
        let label = MoodLabel::new(number(&row, idx[3], line, "valence")?, number(&row, idx[4], line, "arousal")?);
        let nonempty = |c: Option<usize>| c.map(field).filter(|s| !s.is_empty());
        out.push(TrackRecord {
            msd_id: id,
            artist,
            title: field(idx[2]),
            label,
            audio_path: nonempty(audio_col).map(PathBuf::from),
            lyrics: nonempty(lyrics_col),
            extra: headers
                .iter()
                .enumerate()
                .filter(|(j, _)| !known.contains(j))
                .map(|(j, h)| (h.to_string(), field(j)))
                .collect(),
        });
    }
    Ok(out)
}

/// Writes the label columns, then `audio_path` / `lyrics` when any record
/// has them, then extra columns in first-seen order.
pub fn write_label_csv(records: &[TrackRecord], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let with_audio = records.iter().any(|r| r.audio_path.is_some());
    let with_lyrics = records.iter().any(|r| r.lyrics.is_some());
    let mut extra_cols: Vec<&str> = Vec::new();
    for r in records {
        for (k, _) in &r.extra {
            if !extra_cols.contains(&k.as_str()) {
                extra_cols.push(k);
            }
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = LABEL_COLUMNS.to_vec();
    if with_audio {
        header.push("audio_path");
    }
    if with_lyrics {
        header.push("lyrics");
    }
    header.extend(&extra_cols);
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.msd_id.clone(),
            r.artist.clone(),
            r.title.clone(),
            r.label.valence.to_string(),
            r.label.arousal.to_string(),
        ];
        if with_audio {
            row.push(r.audio_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        }
        if with_lyrics {
            row.push(r.lyrics.clone().unwrap_or_default());
        }
        let extra: HashMap<&str, &str> = r.extra.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        row.extend(extra_cols.iter().map(|c| extra.get(c).copied().unwrap_or("").to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `word,valence,arousal` with a header.
pub fn load_lexicon_csv(path: impl AsRef<Path>) -> Result<Lexicon, DatasetError> {
    let mut r = csv::ReaderBuilder::new().from_path(path)?;
    let headers = r.headers()?.clone();
    let (wi, vi, ai) = (column(&headers, "word")?, column(&headers, "valence")?, column(&headers, "arousal")?);
    let mut entries = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        entries.push(LexiconEntry {
            word: row.get(wi).unwrap_or("").to_string(),
            valence: number(&row, vi, i + 2, "valence")?,
            arousal: number(&row, ai, i + 2, "arousal")?,
        });
    }
    Lexicon::new(entries)
}

pub fn write_lexicon_csv(lexicon: &Lexicon, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["word", "valence", "arousal"])?;
    for e in lexicon.entries() {
        w.write_record([e.word, e.valence.to_string(), e.arousal.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One tag per line; blank lines are skipped, tags are lowercased.
pub fn load_mood_tags(path: impl AsRef<Path>) -> Result<HashSet<String>, DatasetError> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

pub fn write_mood_tags<S: AsRef<str>>(tags: &[S], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let body: String = tags.iter().map(|t| format!("{}\n", t.as_ref())).collect();
    Ok(fs::write(path, body)?)
}

/// `msd_id,tag1|tag2|...` lines, optionally under a header starting with
/// `msd_id`. Returned in id order.
pub fn load_tag_file(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<String>>, DatasetError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut out = BTreeMap::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let id = row.get(0).unwrap_or("").trim();
        if id.is_empty() || (i == 0 && id == "msd_id") {
            continue;
        }
        let tags = row
            .get(1)
            .unwrap_or("")
            .split('|')
            .map(|t| t.trim().to_string())
            .filter(|t| !t.is_empty())
            .collect();
        if out.insert(id.to_string(), tags).is_some() {
            return Err(DatasetError::DuplicateId(id.to_string()));
        }
    }
    Ok(out)
}

pub fn write_tag_file(tags: &BTreeMap<String, Vec<String>>, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["msd_id", "tags"])?;
    for (id, t) in tags {
        w.write_record([id.as_str(), t.join("|").as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// `msd_id,lyrics` with a header.
pub fn load_lyrics_csv(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>, DatasetError> {
    let mut r = csv::ReaderBuilder::new().from_path(path)?;
    let headers = r.headers()?.clone();
    let (ii, li) = (column(&headers, "msd_id")?, column(&headers, "lyrics")?);
    let mut out = BTreeMap::new();
    for row in r.records() {
        let row = row?;
        let id = row.get(ii).unwrap_or("").trim().to_string();
        if out.insert(id.clone(), row.get(li).unwrap_or("").to_string()).is_some() {
            return Err(DatasetError::DuplicateId(id));
        }
    }
    Ok(out)
}

pub fn write_lyrics_csv(lyrics: &BTreeMap<String, String>, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["msd_id", "lyrics"])?;
    for (id, text) in lyrics {
        w.write_record([id, text])?;
    }
    w.flush()?;
    Ok(())
}

/// `msd_id,artist,title` rows in file order; artists must be nonempty.
pub fn load_track_list(path: impl AsRef<Path>) -> Result<Vec<(String, String, String)>, DatasetError> {
    let mut r = csv::ReaderBuilder::new().from_path(path)?;
    let headers = r.headers()?.clone();
    let (ii, ai, ti) = (column(&headers, "msd_id")?, column(&headers, "artist")?, column(&headers, "title")?);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let id = row.get(ii).unwrap_or("").trim().to_string();
        let artist = row.get(ai).unwrap_or("").trim().to_string();
        if artist.is_empty() {
            return Err(DatasetError::InvalidArgument(format!("row {}: track {id} has no artist", i + 2)));
        }
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId(id));
        }
        out.push((id, artist, row.get(ti).unwrap_or("").to_string()));
    }
    Ok(out)
}

pub fn write_track_list(tracks: &[(String, String, String)], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["msd_id", "artist", "title"])?;
    for (id, artist, title) in tracks {
        w.write_record([id, artist, title])?;
    }
    w.flush()?;
    Ok(())
}

/// `dimension,mean,std` with one row each for valence and arousal.
pub fn write_norm_csv(stats: &NormStats, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let body = format!(
        "dimension,mean,std\nvalence,{},{}\narousal,{},{}\n",
        stats.mean[0], stats.std[0], stats.mean[1], stats.std[1]
    );
    Ok(fs::write(path, body)?)
}

pub fn load_norm_csv(path: impl AsRef<Path>) -> Result<NormStats, DatasetError> {
    let mut r = csv::ReaderBuilder::new().from_path(path)?;
    let headers = r.headers()?.clone();
    let (di, mi, si) = (column(&headers, "dimension")?, column(&headers, "mean")?, column(&headers, "std")?);
    let mut stats = NormStats {
        mean: [f64::NAN; 2],
        std: [f64::NAN; 2],
    };
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let d = match row.get(di).unwrap_or("").trim() {
            "valence" => 0,
            "arousal" => 1,
            other => return Err(DatasetError::InvalidArgument(format!("row {}: unknown dimension {other:?}", i + 2))),
        };
        stats.mean[d] = number(&row, mi, i + 2, "mean")?;
        stats.std[d] = number(&row, si, i + 2, "std")?;
    }
    if stats.mean.iter().chain(&stats.std).any(|v| v.is_nan()) {
        return Err(DatasetError::MissingColumn("valence and arousal rows".into()));
    }
    Ok(stats)
}
