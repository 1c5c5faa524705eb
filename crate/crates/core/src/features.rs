//! The tabular metadata features: engagement counts, calendar fields of the
//! post time, raw-text statistics, the author's label history and a
//! has-image flag.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Datelike, Timelike};
use ndarray::{Array2, Axis};

use crate::dataset::{Label, RawPost};
use crate::error::{Error, Result};
use crate::impute::{mean_impute, mice_impute, MiceConfig};
use crate::text::TextStats;

/// All feature columns, in matrix order.
pub const COLUMNS: [&str; 18] = [
    "num_likes",
    "num_shares",
    "num_comments",
    "day",
    "month",
    "year",
    "hour",
    "weekday",
    "n_hashtags",
    "n_urls",
    "n_chars",
    "n_words",
    "n_question_marks",
    "n_exclaim_marks",
    "user_n_unreliable",
    "user_n_reliable",
    "user_ratio",
    "has_image",
];

const BOOLEAN_COLUMNS: [&str; 1] = ["has_image"];

/// Label history of one author on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct UserHistory {
    pub user_id: String,
    pub n_unreliable: u64,
    pub n_reliable: u64,
    /// Add-one smoothed share of unreliable posts, always inside (0, 1).
    pub ratio: f64,
}

impl UserHistory {
    pub fn from_counts(user_id: impl Into<String>, n_unreliable: u64, n_reliable: u64) -> Self {
        let ratio = (n_unreliable as f64 + 1.0) / ((n_unreliable + n_reliable) as f64 + 2.0);
        UserHistory {
            user_id: user_id.into(),
            n_unreliable,
            n_reliable,
            ratio,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserHistories {
    by_user: BTreeMap<String, UserHistory>,
}

impl UserHistories {
    /// History of `user_id`; an unseen user gets `(0, 0, 0.5)`.
    pub fn lookup(&self, user_id: &str) -> UserHistory {
        self.by_user
            .get(user_id)
            .cloned()
            .unwrap_or_else(|| UserHistory::from_counts(user_id, 0, 0))
    }

    pub fn len(&self) -> usize {
        self.by_user.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_user.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &UserHistory> {
        self.by_user.values()
    }

    pub fn insert(&mut self, history: UserHistory) {
        self.by_user.insert(history.user_id.clone(), history);
    }
}

/// Counts each author's labels. Call this on the training split only.
pub fn compute_user_histories(train_posts: &[RawPost]) -> Result<UserHistories> {
    let mut counts: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for p in train_posts {
        let label = p.label.ok_or_else(|| Error::Unlabeled(p.id.clone()))?;
        let entry = counts.entry(&p.user_id).or_default();
        match label {
            Label::Unreliable => entry.0 += 1,
            Label::Reliable => entry.1 += 1,
        }
    }
    let mut histories = UserHistories::default();
    for (user, (u, r)) in counts {
        histories.insert(UserHistory::from_counts(user, u, r));
    }
    Ok(histories)
}

/// UTC calendar fields of a timestamp. `weekday` is 0 for Monday.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalendarParts {
    pub day: u32,
    pub month: u32,
    pub year: i32,
    pub hour: u32,
    pub weekday: u32,
}

pub fn expand_timestamp(ts: i64) -> Result<CalendarParts> {
    let dt = DateTime::from_timestamp(ts, 0)
        .ok_or_else(|| Error::Shape(format!("timestamp {ts} is out of range")))?;
    Ok(CalendarParts {
        day: dt.day(),
        month: dt.month(),
        year: dt.year(),
        hour: dt.hour(),
        weekday: dt.weekday().num_days_from_monday(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    /// Columns to leave out of the matrix.
    pub drop: Vec<String>,
    pub mice: MiceConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            drop: Vec::new(),
            mice: MiceConfig::default(),
        }
    }
}

/// Per-column `(mean, population std)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Below this the column is treated as constant and mapped to zero.
pub const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub column_names: Vec<String>,
    /// Columns exempt from standardization.
    pub boolean_mask: Vec<bool>,
    pub standardization: Option<Standardization>,
}

impl FeatureMatrix {
    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    /// Rows selected by index, keeping columns and parameters.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.select(Axis(0), rows),
            column_names: self.column_names.clone(),
            boolean_mask: self.boolean_mask.clone(),
            standardization: self.standardization.clone(),
        }
    }

    pub fn with_standardization(mut self, params: Standardization) -> FeatureMatrix {
        self.standardization = Some(params);
        self
    }
}

/// Builds the raw (unstandardized) feature matrix, one row per post.
///
/// Counts are mean-imputed. Missing timestamps are imputed by chained
/// equations with the three imputed counts as regressors, rounded to the
/// second, then expanded into calendar fields.
pub fn build_feature_matrix(
    posts: &[RawPost],
    histories: &UserHistories,
    raw_stats: &[TextStats],
    config: &FeatureConfig,
) -> Result<FeatureMatrix> {
    if raw_stats.len() != posts.len() {
        return Err(Error::Shape(format!(
            "{} posts but {} text statistics",
            posts.len(),
            raw_stats.len()
        )));
    }
    for name in &config.drop {
        if !COLUMNS.contains(&name.as_str()) {
            return Err(Error::UnknownColumn(name.clone()));
        }
    }

    let count = |f: fn(&RawPost) -> Option<u64>| -> Vec<f64> {
        mean_impute(&posts.iter().map(|p| f(p).map(|v| v as f64)).collect::<Vec<_>>())
    };
    let likes = count(|p| p.num_likes);
    let shares = count(|p| p.num_shares);
    let comments = count(|p| p.num_comments);

    let timestamps: Vec<i64> = if posts.iter().all(|p| p.timestamp.is_some()) {
        posts.iter().map(|p| p.timestamp.unwrap()).collect()
    } else {
        let joint = Array2::from_shape_fn((posts.len(), 4), |(i, j)| match j {
            0 => Some(likes[i]),
            1 => Some(shares[i]),
            2 => Some(comments[i]),
            _ => posts[i].timestamp.map(|t| t as f64),
        });
        let imputed = mice_impute(joint.view(), &config.mice)?;
        imputed.column(3).iter().map(|t| t.round() as i64).collect()
    };

    let keep: Vec<usize> = (0..COLUMNS.len())
        .filter(|&j| !config.drop.iter().any(|d| d == COLUMNS[j]))
        .collect();
    let mut values = Array2::<f64>::zeros((posts.len(), keep.len()));
    for (i, post) in posts.iter().enumerate() {
        let cal = expand_timestamp(timestamps[i])?;
        let hist = histories.lookup(&post.user_id);
        let s = &raw_stats[i];
        let full: [f64; 18] = [
            likes[i],
            shares[i],
            comments[i],
            cal.day as f64,
            cal.month as f64,
            cal.year as f64,
            cal.hour as f64,
            cal.weekday as f64,
            s.n_hashtags as f64,
            s.n_urls as f64,
            s.n_chars as f64,
            s.n_words as f64,
            s.n_question_marks as f64,
            s.n_exclaim_marks as f64,
            hist.n_unreliable as f64,
            hist.n_reliable as f64,
            hist.ratio,
            if post.image_paths.is_empty() { 0.0 } else { 1.0 },
        ];
        for (k, &j) in keep.iter().enumerate() {
            values[(i, k)] = full[j];
        }
    }
    Ok(FeatureMatrix {
        values,
        column_names: keep.iter().map(|&j| COLUMNS[j].to_string()).collect(),
        boolean_mask: keep.iter().map(|&j| BOOLEAN_COLUMNS.contains(&COLUMNS[j])).collect(),
        standardization: None,
    })
}

/// `(x - mean) / std` on every non-boolean column, with population std.
///
/// With `fit` the parameters are estimated from `matrix` and stored in the
/// result; otherwise the parameters already attached to `matrix` are used.
pub fn standardize(matrix: &FeatureMatrix, fit: bool) -> Result<FeatureMatrix> {
    let params = if fit {
        let n = matrix.nrows().max(1) as f64;
        let means: Vec<f64> = matrix
            .values
            .columns()
            .into_iter()
            .map(|c| c.sum() / n)
            .collect();
        let stds = matrix
            .values
            .columns()
            .into_iter()
            .zip(&means)
            .map(|(c, m)| (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt())
            .collect();
        Standardization { means, stds }
    } else {
        matrix.standardization.clone().ok_or(Error::NotFitted)?
    };
    if params.means.len() != matrix.ncols() || params.stds.len() != matrix.ncols() {
        return Err(Error::Shape(format!(
            "standardization has {} columns, matrix has {}",
            params.means.len(),
            matrix.ncols()
        )));
    }
    let mut values = matrix.values.clone();
    for (j, mut col) in values.columns_mut().into_iter().enumerate() {
        if matrix.boolean_mask[j] {
            continue;
        }
        let (m, s) = (params.means[j], params.stds[j]);
        if s < MIN_STD {
            col.fill(0.0);
        } else {
            col.mapv_inplace(|v| (v - m) / s);
        }
    }
    Ok(FeatureMatrix {
        values,
        column_names: matrix.column_names.clone(),
        boolean_mask: matrix.boolean_mask.clone(),
        standardization: Some(params),
    })
}

/// Everything fitted on the training split that featurizing new posts needs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureParams {
    pub column_names: Vec<String>,
    pub boolean_mask: Vec<bool>,
    pub standardization: Standardization,
    pub histories: UserHistories,
}

impl FeatureParams {
    /// `key=value` lines. Floats use the shortest exact representation.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (j, name) in self.column_names.iter().enumerate() {
            let _ = writeln!(out, "column.{j}.name={name}");
            let _ = writeln!(out, "column.{j}.boolean={}", u8::from(self.boolean_mask[j]));
            let _ = writeln!(out, "column.{j}.mean={}", self.standardization.means[j]);
            let _ = writeln!(out, "column.{j}.std={}", self.standardization.stds[j]);
        }
        for h in self.histories.iter() {
            let _ = writeln!(out, "user.{}={},{}", h.user_id, h.n_unreliable, h.n_reliable);
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(path, msg);
        let mut columns: BTreeMap<usize, (Option<String>, Option<bool>, Option<f64>, Option<f64>)> =
            BTreeMap::new();
        let mut histories = UserHistories::default();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .rsplit_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key=value", n + 1)))?;
            if let Some(user) = key.strip_prefix("user.") {
                let (u, r) = value
                    .split_once(',')
                    .and_then(|(u, r)| Some((u.parse().ok()?, r.parse().ok()?)))
                    .ok_or_else(|| bad(format!("line {}: bad user counts", n + 1)))?;
                histories.insert(UserHistory::from_counts(user, u, r));
            } else if let Some(rest) = key.strip_prefix("column.") {
                let (idx, field) = rest
                    .split_once('.')
                    .ok_or_else(|| bad(format!("line {}: bad column key", n + 1)))?;
                let idx: usize = idx
                    .parse()
                    .map_err(|_| bad(format!("line {}: bad column index", n + 1)))?;
                let slot = columns.entry(idx).or_default();
                let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("line {}: bad number", n + 1)));
                match field {
                    "name" => slot.0 = Some(value.to_string()),
                    "boolean" => slot.1 = Some(value == "1"),
                    "mean" => slot.2 = Some(num(value)?),
                    "std" => slot.3 = Some(num(value)?),
                    other => return Err(bad(format!("line {}: unknown field `{other}`", n + 1))),
                }
            } else {
                return Err(bad(format!("line {}: unknown key `{key}`", n + 1)));
            }
        }
        let mut params = FeatureParams {
            column_names: Vec::new(),
            boolean_mask: Vec::new(),
            standardization: Standardization { means: Vec::new(), stds: Vec::new() },
            histories,
        };
        for (expected, (idx, slot)) in columns.into_iter().enumerate() {
            match (idx == expected, slot) {
                (true, (Some(name), Some(b), Some(m), Some(s))) => {
                    params.column_names.push(name);
                    params.boolean_mask.push(b);
                    params.standardization.means.push(m);
                    params.standardization.stds.push(s);
                }
                _ => return Err(bad(format!("column {expected} is incomplete"))),
            }
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FeatureParams::from_text(&text, path)
    }
}

/// Writes `id,<columns...>` rows.
pub fn write_feature_file(path: &Path, ids: &[String], matrix: &FeatureMatrix) -> Result<()> {
    if ids.len() != matrix.nrows() {
        return Err(Error::Shape(format!("{} ids for {} rows", ids.len(), matrix.nrows())));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let wrap = |e: csv::Error| Error::format(path, e.to_string());
    let mut header = vec!["id".to_string()];
    header.extend(matrix.column_names.iter().cloned());
    w.write_record(&header).map_err(wrap)?;
    for (id, row) in ids.iter().zip(matrix.values.rows()) {
        let mut record = vec![id.clone()];
        record.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a feature file back as `(ids, column names, values)`.
pub fn read_feature_file(path: &Path) -> Result<(Vec<String>, Vec<String>, Array2<f64>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let header = r.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut flat = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::MalformedRow { row: n + 2, message: e.to_string() })?;
        ids.push(rec[0].to_string());
        for cell in rec.iter().skip(1) {
            flat.push(cell.parse::<f64>().map_err(|_| Error::MalformedRow {
                row: n + 2,
                message: format!("bad number `{cell}`"),
            })?);
        }
    }
    let values = Array2::from_shape_vec((ids.len(), names.len()), flat)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok((ids, names, values))
}
