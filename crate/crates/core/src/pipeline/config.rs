use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};

/// Where token embeddings and region features come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// Seeded hash embeddings and the frozen random patch backbone.
    Stub,
    /// `<id>.bin` matrices under `text_embeddings_dir` and `image_features_dir`.
    External,
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "stub" => Ok(EncoderKind::Stub),
            "external" => Ok(EncoderKind::External),
            other => Err(Error::Config(format!("encoder must be `stub` or `external`, got `{other}`"))),
        }
    }
}

/// Which posts the predict stage scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictSplit {
    /// The test file if configured, else the validation split.
    Auto,
    Train,
    Val,
    Test,
    All,
}

impl FromStr for PredictSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(PredictSplit::Auto),
            "train" => Ok(PredictSplit::Train),
            "val" => Ok(PredictSplit::Val),
            "test" => Ok(PredictSplit::Test),
            "all" => Ok(PredictSplit::All),
            other => Err(Error::Config(format!(
                "predict_split must be auto, train, val, test or all, got `{other}`"
            ))),
        }
    }
}

/// Everything a pipeline run reads. Built from a flat `key=value` file,
/// then environment overrides, then command-line overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Labeled posts; split into train and validation.
    pub train_path: Option<PathBuf>,
    /// Optional held-out posts, labeled or not.
    pub test_path: Option<PathBuf>,
    pub train_fraction: f64,
    /// `column.<field>=<header>` entries.
    pub schema: BTreeMap<String, String>,
    pub model: ModelConfig,
    pub variant: Variant,
    pub encoder: EncoderKind,
    pub text_embeddings_dir: Option<PathBuf>,
    pub image_features_dir: Option<PathBuf>,
    /// Square input resolution of the image backbone.
    pub image_resolution: usize,
    /// Regions per side.
    pub image_grid: usize,
    pub emoticons: Option<PathBuf>,
    pub max_run: usize,
    /// Command line of an external word segmenter.
    pub segmenter: Option<String>,
    pub mice_rounds: usize,
    pub drop_columns: Vec<String>,
    pub predict_split: PredictSplit,
    pub inputs: Vec<PathBuf>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub synth_n: usize,
    pub synth_missing_rate: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train_path: None,
            test_path: None,
            train_fraction: 0.8,
            schema: BTreeMap::new(),
            model: ModelConfig::default(),
            variant: Variant::Parallel,
            encoder: EncoderKind::Stub,
            text_embeddings_dir: None,
            image_features_dir: None,
            image_resolution: 224,
            image_grid: 7,
            emoticons: None,
            max_run: 2,
            segmenter: None,
            mice_rounds: 10,
            drop_columns: Vec::new(),
            predict_split: PredictSplit::Auto,
            inputs: Vec::new(),
            seed: 0,
            out_dir: PathBuf::from("out"),
            synth_n: 64,
            synth_missing_rate: 0.1,
        }
    }
}

impl PipelineConfig {
    /// Stub encoders at laptop scale: the published convolution, pooling and
    /// head sizes over short sequences, 64-wide embeddings and a 2 × 2
    /// region grid on 32-pixel images.
    pub fn desk_scale() -> Self {
        PipelineConfig {
            model: ModelConfig {
                seq_len: 32,
                text_dim: 64,
                region_dim: 64,
                attn_dim: 32,
                ..ModelConfig::default()
            },
            image_resolution: 32,
            image_grid: 2,
            ..PipelineConfig::default()
        }
    }
}

/// Parses `key=value` lines. Blank lines and lines starting with `#` are
/// skipped; keys and values are trimmed.
pub fn parse_pairs(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(origin, format!("line {}: expected key=value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// `REINTEL_TRAIN_PATH=x` becomes `train_path=x`. Other variables are ignored.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| Some((k.strip_prefix("REINTEL_")?.to_ascii_lowercase(), v)))
        .filter(|(k, _)| !k.is_empty())
        .collect();
    out.sort();
    out
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

impl PipelineConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut cfg = PipelineConfig::default();
        cfg.apply(&parse_pairs(&text, path)?, base)?;
        Ok(cfg)
    }

    /// Applies overrides in order; later keys win. Relative paths resolve
    /// against `base`.
    pub fn apply(&mut self, pairs: &[(String, String)], base: &Path) -> Result<()> {
        let path = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            if p.is_absolute() || base.as_os_str().is_empty() {
                p
            } else {
                base.join(p)
            }
        };
        let opt_path = |v: &str| (!v.is_empty()).then(|| path(v));
        let mut model_pairs = BTreeMap::new();
        let model_keys = ModelConfig::default().to_pairs();
        for (k, v) in pairs {
            let v = v.as_str();
            match k.as_str() {
                "train_path" => self.train_path = opt_path(v),
                "test_path" => self.test_path = opt_path(v),
                "train_fraction" => self.train_fraction = parse(k, v)?,
                "variant" => self.variant = v.parse()?,
                "encoder" => self.encoder = v.parse()?,
                "text_embeddings_dir" => self.text_embeddings_dir = opt_path(v),
                "image_features_dir" => self.image_features_dir = opt_path(v),
                "image_resolution" => self.image_resolution = parse(k, v)?,
                "image_grid" => self.image_grid = parse(k, v)?,
                "emoticons" => self.emoticons = opt_path(v),
                "max_run" => self.max_run = parse(k, v)?,
                "segmenter" => self.segmenter = (!v.is_empty()).then(|| v.to_string()),
                "mice_rounds" => self.mice_rounds = parse(k, v)?,
                "drop_columns" => self.drop_columns = list(v).map(str::to_string).collect(),
                "predict_split" => self.predict_split = v.parse()?,
                "inputs" => self.inputs = list(v).map(PathBuf::from).collect(),
                "seed" => {
                    self.seed = parse(k, v)?;
                    model_pairs.insert("seed".to_string(), v.to_string());
                }
                "out_dir" => self.out_dir = path(v),
                "synth_n" => self.synth_n = parse(k, v)?,
                "synth_missing_rate" => self.synth_missing_rate = parse(k, v)?,
                key if key.starts_with("column.") => {
                    self.schema.insert(key["column.".len()..].to_string(), v.to_string());
                }
                key if model_keys.contains_key(key) => {
                    model_pairs.insert(key.to_string(), v.to_string());
                }
                other => return Err(Error::Config(format!("unknown config key `{other}`"))),
            }
        }
        self.model.apply_pairs(&model_pairs)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config("train_fraction must be in (0, 1]".into()));
        }
        if self.max_run == 0 {
            return Err(Error::Config("max_run must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.synth_missing_rate) {
            return Err(Error::Config("synth_missing_rate must be in [0, 1]".into()));
        }
        if self.encoder == EncoderKind::External
            && (self.text_embeddings_dir.is_none() || self.image_features_dir.is_none())
        {
            return Err(Error::Config(
                "encoder=external needs text_embeddings_dir and image_features_dir".into(),
            ));
        }
        Ok(())
    }

    /// Flat `key=value` text that [`PipelineConfig::from_file`] reads back.
    pub fn to_text(&self) -> String {
        let mut lines = Vec::new();
        let mut push = |k: &str, v: String| lines.push(format!("{k}={v}"));
        let show = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        push("train_path", show(&self.train_path));
        push("test_path", show(&self.test_path));
        push("train_fraction", self.train_fraction.to_string());
        for (k, v) in &self.schema {
            push(&format!("column.{k}"), v.clone());
        }
        push("variant", self.variant.to_string());
        push(
            "encoder",
            match self.encoder {
                EncoderKind::Stub => "stub",
                EncoderKind::External => "external",
            }
            .into(),
        );
        push("text_embeddings_dir", show(&self.text_embeddings_dir));
        push("image_features_dir", show(&self.image_features_dir));
        push("image_resolution", self.image_resolution.to_string());
        push("image_grid", self.image_grid.to_string());
        push("emoticons", show(&self.emoticons));
        push("max_run", self.max_run.to_string());
        push("segmenter", self.segmenter.clone().unwrap_or_default());
        push("mice_rounds", self.mice_rounds.to_string());
        push("drop_columns", self.drop_columns.join(","));
        push(
            "predict_split",
            match self.predict_split {
                PredictSplit::Auto => "auto",
                PredictSplit::Train => "train",
                PredictSplit::Val => "val",
                PredictSplit::Test => "test",
                PredictSplit::All => "all",
            }
            .into(),
        );
        let inputs: Vec<String> = self.inputs.iter().map(|p| p.display().to_string()).collect();
        push("inputs", inputs.join(","));
        push("out_dir", self.out_dir.display().to_string());
        push("synth_n", self.synth_n.to_string());
        push("synth_missing_rate", self.synth_missing_rate.to_string());
        for (k, v) in self.model.to_pairs() {
            push(&k, v);
        }
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn parses_comments_and_trims() {
        let p = parse_pairs("# c\n\n a = b \nx=1=2\n", Path::new("c")).unwrap();
        assert_eq!(p, pairs(&[("a", "b"), ("x", "1=2")]));
        assert!(parse_pairs("novalue\n", Path::new("c")).is_err());
    }

    #[test]
    fn later_overrides_win_and_paths_resolve() {
        let mut cfg = PipelineConfig::default();
        let items = pairs(&[
            ("train_path", "data/train.csv"),
            ("seed", "3"),
            ("epochs", "5"),
            ("seed", "9"),
            ("column.text", "content"),
            ("filter_sizes", "2,3"),
        ]);
        cfg.apply(&items, Path::new("/cfg")).unwrap();
        assert_eq!(cfg.train_path.as_deref(), Some(Path::new("/cfg/data/train.csv")));
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.seed, 9);
        assert_eq!(cfg.model.epochs, 5);
        assert_eq!(cfg.model.filter_sizes, vec![2, 3]);
        assert_eq!(cfg.schema["text"], "content");
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut cfg = PipelineConfig::default();
        assert!(matches!(cfg.apply(&pairs(&[("epoch", "5")]), Path::new("")), Err(Error::Config(_))));
        assert!(cfg.apply(&pairs(&[("variant", "4")]), Path::new("")).is_err());
        assert!(cfg.apply(&pairs(&[("encoder", "gpu")]), Path::new("")).is_err());
        assert!(cfg.apply(&pairs(&[("epochs", "-1")]), Path::new("")).is_err());
    }

    #[test]
    fn env_prefix_is_stripped() {
        let vars = vec![
            ("REINTEL_SEED".to_string(), "4".to_string()),
            ("HOME".to_string(), "/root".to_string()),
            ("REINTEL_".to_string(), "x".to_string()),
        ];
        assert_eq!(env_overrides(vars), pairs(&[("seed", "4")]));
    }

    #[test]
    fn text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig {
            train_path: Some(dir.path().join("t.csv")),
            out_dir: dir.path().join("out"),
            inputs: vec![dir.path().join("a.csv")],
            predict_split: PredictSplit::Train,
            ..PipelineConfig::default()
        };
        cfg.schema.insert("label".into(), "y".into());
        cfg.model.epochs = 7;
        let path = dir.path().join("c.conf");
        std::fs::write(&path, cfg.to_text()).unwrap();
        assert_eq!(PipelineConfig::from_file(&path).unwrap(), cfg);
    }
}
