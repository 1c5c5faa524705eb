//! Stage orchestration: preprocess → featurize → train → predict →
//! ensemble → evaluate, with every artifact in one output directory.

mod config;
mod synth;

pub use config::{env_overrides, parse_pairs, EncoderKind, PipelineConfig, PredictSplit};
pub use synth::{generate_synthetic, SynthSpec, SYNTH_DATASET};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use ndarray::Array2;

use crate::dataset::{load_dataset, read_predictions, split_dataset, write_predictions, Prediction, RawPost, Schema};
use crate::encoders::{HashTextEncoder, ImageBackbone, PrecomputedBackbone, PrecomputedTextEncoder, StubBackbone, TextEncoder};
use crate::error::{Error, Result};
use crate::features::{
    build_feature_matrix, compute_user_histories, read_feature_file, standardize, write_feature_file, FeatureConfig,
    FeatureParams,
};
use crate::impute::MiceConfig;
use crate::metrics::{ensemble_average, EvalReport};
use crate::model::{
    encode_posts, load_checkpoint, predict_set, save_checkpoint, train, write_history, EncodedSet, Encoders,
    FusionModel, Manifest, Variant,
};
use crate::text::{text_statistics, CommandSegmenter, EmoticonMap, Preprocessor, WhitespaceSegmenter, HAPPY_WORD, SAD_WORD};

pub const TEXTS_FILE: &str = "texts.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const FEATURE_PARAMS_FILE: &str = "feature_params.txt";
pub const ENSEMBLE_FILE: &str = "ensemble.csv";

pub fn checkpoint_file(v: Variant) -> String {
    format!("model_{v}.ckpt")
}

pub fn history_file(v: Variant) -> String {
    format!("history_{v}.csv")
}

pub fn predictions_file(v: Variant) -> String {
    format!("predictions_{v}.csv")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Preprocess,
    Featurize,
    Train,
    Predict,
    Evaluate,
    Ensemble,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Preprocess,
        Stage::Featurize,
        Stage::Train,
        Stage::Predict,
        Stage::Evaluate,
        Stage::Ensemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::Featurize => "featurize",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
            Stage::Ensemble => "ensemble",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// What a stage wrote, plus text for the user (the evaluation report).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageOutput {
    pub artifacts: Vec<PathBuf>,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Split> {
        [Split::Train, Split::Val, Split::Test].into_iter().find(|x| x.name() == s)
    }
}

/// All posts of the run with their split, in file order (train file first).
struct Corpus {
    posts: Vec<RawPost>,
    splits: Vec<Split>,
}

impl Corpus {
    fn rows(&self, which: &[Split]) -> Vec<usize> {
        (0..self.posts.len()).filter(|&i| which.contains(&self.splits[i])).collect()
    }

    fn has(&self, s: Split) -> bool {
        self.splits.contains(&s)
    }
}

fn require(path: PathBuf, stage: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact { path, stage })
    }
}

fn load_posts(cfg: &PipelineConfig) -> Result<(Vec<RawPost>, Vec<RawPost>)> {
    let schema = Schema::with_overrides(&cfg.schema)?;
    let train_path = cfg
        .train_path
        .as_ref()
        .ok_or_else(|| Error::Config("train_path is not set".into()))?;
    let train = load_dataset(train_path, &schema)?;
    let test = match &cfg.test_path {
        Some(p) => load_dataset(p, &schema)?,
        None => Vec::new(),
    };
    let mut seen = std::collections::BTreeSet::new();
    for p in train.iter().chain(&test) {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::DuplicateId(p.id.clone()));
        }
    }
    Ok((train, test))
}

/// Reads the datasets and the split assignment written by `preprocess`.
fn load_corpus(cfg: &PipelineConfig) -> Result<(Corpus, Vec<String>)> {
    let texts_path = require(cfg.out_dir.join(TEXTS_FILE), "preprocess")?;
    let (train, test) = load_posts(cfg)?;
    let posts: Vec<RawPost> = train.into_iter().chain(test).collect();
    let mut reader = csv::Reader::from_path(&texts_path).map_err(|e| Error::format(&texts_path, e.to_string()))?;
    let mut by_id = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::format(&texts_path, e.to_string()))?;
        let split = Split::parse(&rec[1]).ok_or_else(|| Error::format(&texts_path, format!("bad split `{}`", &rec[1])))?;
        by_id.insert(rec[0].to_string(), (split, rec[2].to_string()));
    }
    if by_id.len() != posts.len() {
        return Err(Error::format(
            &texts_path,
            format!("{} rows for {} posts; rerun preprocess", by_id.len(), posts.len()),
        ));
    }
    let mut splits = Vec::with_capacity(posts.len());
    let mut texts = Vec::with_capacity(posts.len());
    for p in &posts {
        let (s, t) = by_id
            .remove(&p.id)
            .ok_or_else(|| Error::format(&texts_path, format!("post {} is missing; rerun preprocess", p.id)))?;
        splits.push(s);
        texts.push(t);
    }
    Ok((Corpus { posts, splits }, texts))
}

fn preprocessor(cfg: &PipelineConfig) -> Result<Preprocessor> {
    let emoticons = match &cfg.emoticons {
        Some(p) => EmoticonMap::from_file(p, HAPPY_WORD, SAD_WORD)?,
        None => EmoticonMap::default(),
    };
    let segmenter: Box<dyn crate::text::Segmenter> = match &cfg.segmenter {
        Some(line) => Box::new(
            CommandSegmenter::from_command_line(line)
                .ok_or_else(|| Error::Config(format!("bad segmenter command `{line}`")))?,
        ),
        None => Box::new(WhitespaceSegmenter),
    };
    Ok(Preprocessor {
        emoticons,
        max_run: cfg.max_run,
        segmenter,
        ..Preprocessor::default()
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))
}

fn run_preprocess(cfg: &PipelineConfig) -> Result<StageOutput> {
    let (train, test) = load_posts(cfg)?;
    let (fit, _) = split_dataset(&train, cfg.train_fraction, cfg.seed)?;
    let fit_ids: std::collections::BTreeSet<&str> = fit.iter().map(|p| p.id.as_str()).collect();
    let pre = preprocessor(cfg)?;
    let items: Vec<(&str, &str)> = train.iter().chain(&test).map(|p| (p.id.as_str(), p.text.as_str())).collect();
    let texts = pre.preprocess_batch(&items)?;

    let path = cfg.out_dir.join(TEXTS_FILE);
    let mut w = csv_writer(&path)?;
    let wrap = |e: csv::Error| Error::format(&path, e.to_string());
    w.write_record(["id", "split", "text"]).map_err(wrap)?;
    for (i, (p, t)) in train.iter().chain(&test).zip(&texts).enumerate() {
        let split = if i >= train.len() {
            Split::Test
        } else if fit_ids.contains(p.id.as_str()) {
            Split::Train
        } else {
            Split::Val
        };
        w.write_record([p.id.as_str(), split.name(), t.as_str()]).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    info!("preprocessed {} posts ({} train)", texts.len(), fit.len());
    Ok(StageOutput { artifacts: vec![path], message: String::new() })
}

fn run_featurize(cfg: &PipelineConfig) -> Result<StageOutput> {
    let (corpus, _) = load_corpus(cfg)?;
    let train_rows = corpus.rows(&[Split::Train]);
    let train_posts: Vec<RawPost> = train_rows.iter().map(|&i| corpus.posts[i].clone()).collect();
    let histories = compute_user_histories(&train_posts)?;
    let stats: Vec<_> = corpus.posts.iter().map(|p| text_statistics(&p.text)).collect();
    let fcfg = FeatureConfig {
        drop: cfg.drop_columns.clone(),
        mice: MiceConfig { rounds: cfg.mice_rounds, seed: cfg.seed, ..MiceConfig::default() },
    };
    let raw = build_feature_matrix(&corpus.posts, &histories, &stats, &fcfg)?;
    let fitted = standardize(&raw.select_rows(&train_rows), true)?;
    let params = fitted.standardization.clone().ok_or(Error::NotFitted)?;
    let matrix = standardize(&raw.with_standardization(params.clone()), false)?;

    let features = cfg.out_dir.join(FEATURES_FILE);
    let ids: Vec<String> = corpus.posts.iter().map(|p| p.id.clone()).collect();
    write_feature_file(&features, &ids, &matrix)?;
    let sidecar = cfg.out_dir.join(FEATURE_PARAMS_FILE);
    FeatureParams {
        column_names: matrix.column_names.clone(),
        boolean_mask: matrix.boolean_mask.clone(),
        standardization: params,
        histories,
    }
    .save(&sidecar)?;
    info!("featurized {} posts × {} columns", matrix.nrows(), matrix.ncols());
    Ok(StageOutput { artifacts: vec![features, sidecar], message: String::new() })
}

struct Adapters {
    text: Box<dyn TextEncoder>,
    image: Box<dyn ImageBackbone>,
}

fn adapters(cfg: &PipelineConfig, text_dim: usize, region_dim: usize) -> Result<Adapters> {
    let res = (cfg.image_resolution, cfg.image_resolution);
    Ok(match cfg.encoder {
        EncoderKind::Stub => Adapters {
            text: Box::new(HashTextEncoder::new(text_dim, cfg.seed)),
            image: Box::new(StubBackbone::new(res, cfg.image_grid, region_dim, cfg.seed)?),
        },
        EncoderKind::External => {
            let missing = || Error::Config("encoder=external needs text_embeddings_dir and image_features_dir".into());
            Adapters {
                text: Box::new(PrecomputedTextEncoder {
                    dir: cfg.text_embeddings_dir.clone().ok_or_else(missing)?,
                    dim: text_dim,
                }),
                image: Box::new(PrecomputedBackbone {
                    dir: cfg.image_features_dir.clone().ok_or_else(missing)?,
                    resolution: res,
                    n_regions: cfg.image_grid * cfg.image_grid,
                    dim: region_dim,
                }),
            }
        }
    })
}

/// Encoded inputs for the given rows, with metadata looked up by id.
fn encode_rows(
    cfg: &PipelineConfig,
    model_cfg: &crate::model::ModelConfig,
    corpus: &Corpus,
    texts: &[String],
    features: &(Vec<String>, Vec<String>, Array2<f64>),
    rows: &[usize],
) -> Result<EncodedSet> {
    let (ids, _, values) = features;
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut meta_rows = Vec::with_capacity(rows.len());
    for &r in rows {
        let id = &corpus.posts[r].id;
        let at = index
            .get(id.as_str())
            .ok_or_else(|| Error::MissingArtifact { path: cfg.out_dir.join(FEATURES_FILE), stage: "featurize" })?;
        meta_rows.push(*at);
    }
    let metadata = values.select(ndarray::Axis(0), &meta_rows);
    let posts: Vec<RawPost> = rows.iter().map(|&r| corpus.posts[r].clone()).collect();
    let row_texts: Vec<String> = rows.iter().map(|&r| texts[r].clone()).collect();
    let a = adapters(cfg, model_cfg.text_dim, model_cfg.region_dim)?;
    let enc = Encoders { text: a.text.as_ref(), image: a.image.as_ref(), image_seed: cfg.seed };
    encode_posts(&posts, &row_texts, &metadata, &enc, model_cfg.seq_len)
}

fn read_features(cfg: &PipelineConfig) -> Result<(Vec<String>, Vec<String>, Array2<f64>)> {
    read_feature_file(&require(cfg.out_dir.join(FEATURES_FILE), "featurize")?)
}

fn run_train(cfg: &PipelineConfig) -> Result<StageOutput> {
    let (corpus, texts) = load_corpus(cfg)?;
    let features = read_features(cfg)?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.meta_dim = features.1.len();
    let train_set = encode_rows(cfg, &model_cfg, &corpus, &texts, &features, &corpus.rows(&[Split::Train]))?;
    let val_set = if corpus.has(Split::Val) {
        Some(encode_rows(cfg, &model_cfg, &corpus, &texts, &features, &corpus.rows(&[Split::Val]))?)
    } else {
        None
    };
    let model = FusionModel::new(model_cfg, cfg.variant)?;
    let outcome = train(model, &train_set, val_set.as_ref())?;

    let ckpt = cfg.out_dir.join(checkpoint_file(cfg.variant));
    let mut extra = Manifest::new();
    extra.insert("columns".into(), features.1.join(","));
    extra.insert("root_seed".into(), cfg.seed.to_string());
    extra.insert("best_epoch".into(), outcome.best_epoch.to_string());
    extra.insert("image_resolution".into(), cfg.image_resolution.to_string());
    extra.insert("image_grid".into(), cfg.image_grid.to_string());
    save_checkpoint(&ckpt, &outcome.model, &extra)?;
    let history = cfg.out_dir.join(history_file(cfg.variant));
    write_history(&history, &outcome.history)?;
    let message = format!(
        "variant {} trained for {} epochs; best epoch {} (train auc {}, val auc {})\n",
        cfg.variant,
        outcome.history.len(),
        outcome.best_epoch,
        fmt_opt(outcome.history.get(outcome.best_epoch.wrapping_sub(1)).and_then(|r| r.train_auc)),
        fmt_opt(outcome.history.get(outcome.best_epoch.wrapping_sub(1)).and_then(|r| r.val_auc)),
    );
    Ok(StageOutput { artifacts: vec![ckpt, history], message })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|a| format!("{a:.6}")).unwrap_or_else(|| "n/a".into())
}

fn predict_rows(cfg: &PipelineConfig, corpus: &Corpus) -> Result<Vec<usize>> {
    let which: &[Split] = match cfg.predict_split {
        PredictSplit::Auto if corpus.has(Split::Test) => &[Split::Test],
        PredictSplit::Auto | PredictSplit::Val => &[Split::Val],
        PredictSplit::Train => &[Split::Train],
        PredictSplit::Test => &[Split::Test],
        PredictSplit::All => &[Split::Train, Split::Val, Split::Test],
    };
    let rows = corpus.rows(which);
    if rows.is_empty() {
        return Err(Error::Config(format!(
            "no posts to predict for predict_split={:?}; set test_path or a train_fraction below 1",
            cfg.predict_split
        )));
    }
    Ok(rows)
}

fn run_predict(cfg: &PipelineConfig) -> Result<StageOutput> {
    let (corpus, texts) = load_corpus(cfg)?;
    let features = read_features(cfg)?;
    let ckpt = require(cfg.out_dir.join(checkpoint_file(cfg.variant)), "train")?;
    let (model, manifest) = load_checkpoint(&ckpt)?;
    let columns = features.1.join(",");
    if manifest.get("columns") != Some(&columns) {
        return Err(Error::format(&ckpt, "feature columns differ from the checkpoint's; rerun train"));
    }
    let rows = predict_rows(cfg, &corpus)?;
    let set = encode_rows(cfg, &model.cfg, &corpus, &texts, &features, &rows)?;
    let scores = predict_set(&model, &set)?;
    let preds: Vec<Prediction> = set.ids.iter().zip(scores).map(|(id, score)| Prediction { id: id.clone(), score }).collect();
    let path = cfg.out_dir.join(predictions_file(cfg.variant));
    write_predictions(&path, &preds)?;
    info!("wrote {} predictions", preds.len());
    Ok(StageOutput { artifacts: vec![path], message: String::new() })
}

/// Relative inputs resolve against the working directory when they exist
/// there, otherwise against the output directory.
fn resolve_input(cfg: &PipelineConfig, p: &Path) -> PathBuf {
    if p.is_absolute() || p.exists() {
        p.to_path_buf()
    } else {
        cfg.out_dir.join(p)
    }
}

fn inputs_or(cfg: &PipelineConfig, default: Vec<String>) -> Result<Vec<PathBuf>> {
    let list: Vec<PathBuf> = if cfg.inputs.is_empty() {
        default.into_iter().map(|f| cfg.out_dir.join(f)).collect()
    } else {
        cfg.inputs.iter().map(|p| resolve_input(cfg, p)).collect()
    };
    list.into_iter().map(|p| require(p, "predict")).collect()
}

fn run_ensemble(cfg: &PipelineConfig) -> Result<StageOutput> {
    let inputs = inputs_or(cfg, vec![predictions_file(Variant::Parallel), predictions_file(Variant::Residual)])?;
    let sets: Vec<Vec<Prediction>> = inputs.iter().map(|p| read_predictions(p)).collect::<Result<_>>()?;
    let ids: Vec<&str> = sets[0].iter().map(|p| p.id.as_str()).collect();
    for (path, set) in inputs.iter().zip(&sets).skip(1) {
        if !set.iter().map(|p| p.id.as_str()).eq(ids.iter().copied()) {
            return Err(Error::format(path, format!("ids differ from {}", inputs[0].display())));
        }
    }
    let scores: Vec<Vec<f64>> = sets.iter().map(|s| s.iter().map(|p| p.score).collect()).collect();
    let avg = ensemble_average(&scores)?;
    let preds: Vec<Prediction> = ids.iter().zip(avg).map(|(id, score)| Prediction { id: id.to_string(), score }).collect();
    let path = cfg.out_dir.join(ENSEMBLE_FILE);
    write_predictions(&path, &preds)?;
    Ok(StageOutput { artifacts: vec![path], message: String::new() })
}

fn run_evaluate(cfg: &PipelineConfig) -> Result<StageOutput> {
    let inputs = inputs_or(cfg, vec![predictions_file(cfg.variant)])?;
    let (train, test) = load_posts(cfg)?;
    let labels: BTreeMap<&str, Option<crate::dataset::Label>> =
        train.iter().chain(&test).map(|p| (p.id.as_str(), p.label)).collect();
    let mut out = StageOutput::default();
    for input in inputs {
        let preds = read_predictions(&input)?;
        let mut y = Vec::with_capacity(preds.len());
        for p in &preds {
            let label = labels.get(p.id.as_str()).copied().flatten().ok_or_else(|| Error::Unlabeled(p.id.clone()))?;
            y.push(label.is_positive());
        }
        let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
        let report = EvalReport::compute(&y, &scores)?;
        let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let path = cfg.out_dir.join(format!("eval_{stem}.txt"));
        let text = report.to_string();
        std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
        if !out.message.is_empty() || cfg.inputs.len() > 1 {
            out.message.push_str(&format!("input={}\n", input.display()));
        }
        out.message.push_str(&text);
        out.artifacts.push(path);
    }
    Ok(out)
}

/// Runs one stage. Stages that need an upstream artifact fail with
/// [`Error::MissingArtifact`] naming the stage that produces it.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<StageOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    info!("stage {stage}");
    match stage {
        Stage::Preprocess => run_preprocess(cfg),
        Stage::Featurize => run_featurize(cfg),
        Stage::Train => run_train(cfg),
        Stage::Predict => run_predict(cfg),
        Stage::Evaluate => run_evaluate(cfg),
        Stage::Ensemble => run_ensemble(cfg),
    }
}

/// Generates a synthetic dataset under `<out_dir>/data` and writes
/// `<out_dir>/synthetic.conf`, a config that runs the pipeline on it with
/// the stub encoders. Returns the config path.
pub fn write_synthetic_project(cfg: &PipelineConfig) -> Result<PathBuf> {
    let data = cfg.out_dir.join("data");
    let spec = SynthSpec { n: cfg.synth_n, missing_rate: cfg.synth_missing_rate, ..SynthSpec::default() };
    generate_synthetic(&data, &spec, cfg.seed)?;
    let project = PipelineConfig {
        train_path: Some(PathBuf::from("data").join(SYNTH_DATASET)),
        out_dir: PathBuf::from("run"),
        encoder: EncoderKind::Stub,
        ..cfg.clone()
    };
    let path = cfg.out_dir.join("synthetic.conf");
    std::fs::write(&path, project.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
