//! Loading, validating, splitting and persisting posts and predictions.
//!
//! Datasets are comma-separated files with a header row. Fields may be
//! quoted and may contain embedded newlines. An empty cell is a missing
//! value; it is never read as zero.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Reliability label. `Unreliable` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Reliable = 0,
    Unreliable = 1,
}

impl Label {
    pub fn from_int(v: i64) -> Option<Label> {
        match v {
            0 => Some(Label::Reliable),
            1 => Some(Label::Unreliable),
            _ => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn is_positive(self) -> bool {
        self == Label::Unreliable
    }
}

/// One social-network post.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPost {
    pub id: String,
    pub user_id: String,
    pub text: String,
    /// Epoch seconds, UTC.
    pub timestamp: Option<i64>,
    pub num_likes: Option<u64>,
    pub num_shares: Option<u64>,
    pub num_comments: Option<u64>,
    pub image_paths: Vec<PathBuf>,
    pub label: Option<Label>,
}

impl RawPost {
    /// A post with only an id and text set; handy for tests and examples.
    pub fn new(id: impl Into<String>, user_id: impl Into<String>, text: impl Into<String>) -> Self {
        RawPost {
            id: id.into(),
            user_id: user_id.into(),
            text: text.into(),
            timestamp: None,
            num_likes: None,
            num_shares: None,
            num_comments: None,
            image_paths: Vec::new(),
            label: None,
        }
    }
}

/// A post id with its unreliability probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub score: f64,
}

/// Maps each logical field to the header name used in a dataset file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub id: String,
    pub user_id: String,
    pub timestamp: String,
    pub text: String,
    pub num_likes: String,
    pub num_shares: String,
    pub num_comments: String,
    pub image_paths: String,
    pub label: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            id: "id".into(),
            user_id: "user_id".into(),
            timestamp: "timestamp".into(),
            text: "text".into(),
            num_likes: "num_likes".into(),
            num_shares: "num_shares".into(),
            num_comments: "num_comments".into(),
            image_paths: "image_paths".into(),
            label: "label".into(),
        }
    }
}

impl Schema {
    fn columns(&self) -> [&str; 9] {
        [
            &self.id,
            &self.user_id,
            &self.timestamp,
            &self.text,
            &self.num_likes,
            &self.num_shares,
            &self.num_comments,
            &self.image_paths,
            &self.label,
        ]
    }

    /// Builds a schema from `field=header` overrides on top of the default.
    pub fn with_overrides(overrides: &BTreeMap<String, String>) -> Result<Schema> {
        let mut schema = Schema::default();
        for (field, header) in overrides {
            let slot = match field.as_str() {
                "id" => &mut schema.id,
                "user_id" => &mut schema.user_id,
                "timestamp" => &mut schema.timestamp,
                "text" => &mut schema.text,
                "num_likes" => &mut schema.num_likes,
                "num_shares" => &mut schema.num_shares,
                "num_comments" => &mut schema.num_comments,
                "image_paths" => &mut schema.image_paths,
                "label" => &mut schema.label,
                other => return Err(Error::Config(format!("unknown schema field `{other}`"))),
            };
            *slot = header.clone();
        }
        Ok(schema)
    }
}

/// Separator between image paths inside the `image_paths` cell.
pub const IMAGE_PATH_SEPARATOR: char = ';';

fn parse_opt<T: std::str::FromStr>(cell: &str, row: usize, column: &str) -> Result<Option<T>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<T>().map(Some).map_err(|_| Error::MalformedRow {
        row,
        message: format!("cannot parse `{cell}` in column `{column}`"),
    })
}

/// Loads every data row of `path` as a [`RawPost`].
///
/// Row numbers in errors are 1-based and count the header as row 1, matching
/// what a spreadsheet shows. Relative image paths are resolved against the
/// directory holding the dataset file.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Vec<RawPost>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();

    let index_of = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 8];
    for (slot, name) in idx.iter_mut().zip(schema.columns()) {
        *slot = index_of(name).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    // A test split may legitimately omit the label column.
    let label_idx = index_of(&schema.label);
    let [i_id, i_user, i_ts, i_text, i_likes, i_shares, i_comments, i_images] = idx;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut posts = Vec::new();
    let mut seen = HashSet::new();
    for (n, record) in reader.records().enumerate() {
        let row = n + 2;
        let record = record.map_err(|e| Error::MalformedRow {
            row,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::MalformedRow {
                row,
                message: format!("expected {} columns, found {}", headers.len(), record.len()),
            });
        }
        let id = record[i_id].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let label = match label_idx {
            Some(i) => match parse_opt::<i64>(&record[i], row, &schema.label)? {
                Some(v) => Some(Label::from_int(v).ok_or_else(|| Error::MalformedRow {
                    row,
                    message: format!("label must be 0 or 1, got {v}"),
                })?),
                None => None,
            },
            None => None,
        };
        let image_paths = record[i_images]
            .split(IMAGE_PATH_SEPARATOR)
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| {
                let p = Path::new(p);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base_dir.join(p)
                }
            })
            .collect();
        posts.push(RawPost {
            id,
            user_id: record[i_user].to_string(),
            text: record[i_text].to_string(),
            timestamp: parse_opt(&record[i_ts], row, &schema.timestamp)?,
            num_likes: parse_opt(&record[i_likes], row, &schema.num_likes)?,
            num_shares: parse_opt(&record[i_shares], row, &schema.num_shares)?,
            num_comments: parse_opt(&record[i_comments], row, &schema.num_comments)?,
            image_paths,
            label,
        });
    }
    Ok(posts)
}

fn opt_cell<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes posts with the given schema. Image paths are written as given.
pub fn write_dataset(path: &Path, posts: &[RawPost], schema: &Schema) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let wrap = |e: csv::Error| Error::format(path, e.to_string());
    writer.write_record(schema.columns()).map_err(wrap)?;
    for p in posts {
        let images: Vec<String> = p
            .image_paths
            .iter()
            .map(|p| p.to_string_lossy().into_owned())
            .collect();
        writer
            .write_record([
                p.id.clone(),
                p.user_id.clone(),
                opt_cell(p.timestamp),
                p.text.clone(),
                opt_cell(p.num_likes),
                opt_cell(p.num_shares),
                opt_cell(p.num_comments),
                images.join(&IMAGE_PATH_SEPARATOR.to_string()),
                opt_cell(p.label.map(|l| l as u8)),
            ])
            .map_err(wrap)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Stratified split into `(train, validation)`.
///
/// Each class contributes `round(fraction * class_count)` posts to train,
/// with exact halves rounded toward train. Both halves keep the input order.
pub fn split_dataset(
    posts: &[RawPost],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<RawPost>, Vec<RawPost>)> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "train fraction must be in (0, 1], got {train_fraction}"
        )));
    }
    let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, p) in posts.iter().enumerate() {
        let label = p.label.ok_or_else(|| Error::Unlabeled(p.id.clone()))?;
        by_class.entry(label).or_default().push(i);
    }

    let mut rng = rng::substream(seed, "split");
    let mut in_train = vec![false; posts.len()];
    for indices in by_class.values_mut() {
        indices.shuffle(&mut rng);
        let n_train = ((train_fraction * indices.len() as f64) + 0.5).floor() as usize;
        for &i in indices.iter().take(n_train.min(indices.len())) {
            in_train[i] = true;
        }
    }

    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (p, &t) in posts.iter().zip(&in_train) {
        if t {
            train.push(p.clone());
        } else {
            valid.push(p.clone());
        }
    }
    Ok((train, valid))
}

/// Writes `id,score` lines with six decimals and a header row.
pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    for p in predictions {
        if !(0.0..=1.0).contains(&p.score) {
            return Err(Error::ScoreOutOfRange {
                id: p.id.clone(),
                score: p.score,
            });
        }
    }
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let wrap = |e: csv::Error| Error::format(path, e.to_string());
    writer.write_record(["id", "score"]).map_err(wrap)?;
    for p in predictions {
        writer
            .write_record([p.id.as_str(), &format!("{:.6}", p.score)])
            .map_err(wrap)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let row = n + 2;
        let record = record.map_err(|e| Error::MalformedRow {
            row,
            message: e.to_string(),
        })?;
        if record.len() != 2 {
            return Err(Error::MalformedRow {
                row,
                message: format!("expected 2 columns, found {}", record.len()),
            });
        }
        let score: f64 = record[1].trim().parse().map_err(|_| Error::MalformedRow {
            row,
            message: format!("cannot parse score `{}`", &record[1]),
        })?;
        out.push(Prediction {
            id: record[0].to_string(),
            score,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const HEADER: &str = "id,user_id,timestamp,text,num_likes,num_shares,num_comments,image_paths,label\n";

    fn write_tmp(dir: &tempfile::TempDir, body: &str) -> PathBuf {
        let path = dir.path().join("posts.csv");
        let mut f = File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn header_only_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_tmp(&dir, HEADER);
        assert!(load_dataset(&path, &Schema::default()).unwrap().is_empty());
    }

    #[test]
    fn parses_rows_and_keeps_missing_cells_null() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER}p1,u1,1600000000,\"line one\nline two, with comma\",10,,3,a.png;b.png,1\n\
             p2,u2,,plain,0,1,2,,0\n"
        );
        let path = write_tmp(&dir, &body);
        let posts = load_dataset(&path, &Schema::default()).unwrap();
        assert_eq!(posts.len(), 2);
        let p1 = &posts[0];
        assert_eq!(p1.text, "line one\nline two, with comma");
        assert_eq!(p1.timestamp, Some(1_600_000_000));
        assert_eq!(p1.num_likes, Some(10));
        assert_eq!(p1.num_shares, None);
        assert_eq!(p1.num_comments, Some(3));
        assert_eq!(p1.image_paths, vec![dir.path().join("a.png"), dir.path().join("b.png")]);
        assert_eq!(p1.label, Some(Label::Unreliable));
        let p2 = &posts[1];
        assert_eq!(p2.timestamp, None);
        assert_eq!(p2.num_likes, Some(0));
        assert!(p2.image_paths.is_empty());
        assert_eq!(p2.label, Some(Label::Reliable));
    }

    #[test]
    fn short_row_names_its_row_number() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}p1,u1,5,t,1,1,1,,0\np2,u2,7\n");
        let path = write_tmp(&dir, &body);
        let err = load_dataset(&path, &Schema::default()).unwrap_err();
        match err {
            Error::MalformedRow { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn unparseable_number_and_duplicates_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_tmp(&dir, &format!("{HEADER}p1,u1,5,t,many,1,1,,0\n"));
        assert!(matches!(
            load_dataset(&path, &Schema::default()),
            Err(Error::MalformedRow { row: 2, .. })
        ));
        let path = write_tmp(&dir, &format!("{HEADER}p1,u1,5,t,1,1,1,,0\np1,u1,5,t,1,1,1,,0\n"));
        assert!(matches!(
            load_dataset(&path, &Schema::default()),
            Err(Error::DuplicateId(id)) if id == "p1"
        ));
        let path = write_tmp(&dir, &format!("{HEADER}p1,u1,5,t,1,1,1,,2\n"));
        assert!(load_dataset(&path, &Schema::default()).is_err());
    }

    #[test]
    fn schema_mapping_renames_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_tmp(
            &dir,
            "post_id,user_id,timestamp,text,num_likes,num_shares,num_comments,image_paths,label\nx,u,,hi,,,,,\n",
        );
        let mut overrides = BTreeMap::new();
        overrides.insert("id".to_string(), "post_id".to_string());
        let schema = Schema::with_overrides(&overrides).unwrap();
        let posts = load_dataset(&path, &schema).unwrap();
        assert_eq!(posts[0].id, "x");
        assert_eq!(posts[0].label, None);
        assert!(matches!(
            load_dataset(&path, &Schema::default()),
            Err(Error::MissingColumn(c)) if c == "id"
        ));
    }

    fn labeled(n_rel: usize, n_unrel: usize) -> Vec<RawPost> {
        (0..n_rel + n_unrel)
            .map(|i| {
                let mut p = RawPost::new(format!("p{i}"), "u", "t");
                p.label = Some(if i < n_rel { Label::Reliable } else { Label::Unreliable });
                p
            })
            .collect()
    }

    #[test]
    fn split_is_stratified() {
        let posts = labeled(6, 4);
        let (train, valid) = split_dataset(&posts, 0.8, 3).unwrap();
        let count = |v: &[RawPost], l| v.iter().filter(|p| p.label == Some(l)).count();
        assert_eq!(count(&train, Label::Reliable), 5);
        assert_eq!(count(&train, Label::Unreliable), 3);
        assert_eq!(valid.len(), 2);
    }

    #[test]
    fn full_fraction_keeps_everything_in_train() {
        let posts = labeled(3, 2);
        let (train, valid) = split_dataset(&posts, 1.0, 0).unwrap();
        assert_eq!(train, posts);
        assert!(valid.is_empty());
    }

    #[test]
    fn split_is_deterministic_and_rejects_unlabeled() {
        let posts = labeled(20, 13);
        assert_eq!(split_dataset(&posts, 0.7, 11).unwrap(), split_dataset(&posts, 0.7, 11).unwrap());
        let mut posts = posts;
        posts[4].label = None;
        assert!(matches!(split_dataset(&posts, 0.5, 1), Err(Error::Unlabeled(_))));
        assert!(split_dataset(&posts, 0.0, 1).is_err());
    }

    #[test]
    fn prediction_file_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_predictions(&path, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "id,score\n");
        write_predictions(&path, &[Prediction { id: "a".into(), score: 0.5 }]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "id,score\na,0.500000\n");
        let bad = [Prediction { id: "b".into(), score: 1.5 }];
        assert!(matches!(write_predictions(&path, &bad), Err(Error::ScoreOutOfRange { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn split_partitions_input(n_rel in 0usize..30, n_unrel in 0usize..30, frac in 0.05f64..=1.0, seed: u64) {
                let posts = labeled(n_rel, n_unrel);
                let (train, valid) = split_dataset(&posts, frac, seed).unwrap();
                prop_assert_eq!(train.len() + valid.len(), posts.len());
                let mut ids: Vec<_> = train.iter().chain(&valid).map(|p| p.id.clone()).collect();
                ids.sort();
                ids.dedup();
                prop_assert_eq!(ids.len(), posts.len());
                for (label, total) in [(Label::Reliable, n_rel), (Label::Unreliable, n_unrel)] {
                    let k = train.iter().filter(|p| p.label == Some(label)).count();
                    let floor = (frac * total as f64).floor() as usize;
                    prop_assert!(k == floor || k == floor + 1);
                }
            }

            #[test]
            fn predictions_round_trip(scores in proptest::collection::vec(0.0f64..=1.0, 100)) {
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("p.csv");
                let preds: Vec<_> = scores
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| Prediction { id: format!("id{i}"), score: s })
                    .collect();
                write_predictions(&path, &preds).unwrap();
                let back = read_predictions(&path).unwrap();
                prop_assert_eq!(back.len(), preds.len());
                for (a, b) in preds.iter().zip(&back) {
                    prop_assert_eq!(&a.id, &b.id);
                    prop_assert!((a.score - b.score).abs() <= 1e-6);
                }
            }
        }
    }
}
