//! `train-qoe` and `eval-qoe`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use rankabr::data::{load_ratings, split_dataset, RatingDataset};
use rankabr::qoe::{
    enumerate_pairs, lin_identity_rate, mos_baseline, scorer_identity_rate, train_mos_regression,
    train_qoe_dnn, train_qoe_lin, CurveRow, LinWeights, QoeScorer, QoeTrainConfig,
};
use rankabr::report::write_table;
use serde::{Deserialize, Serialize};

use crate::settings::{ensure_dir, output_path, record, ConfigFile};

pub const BUNDLE_FILE: &str = "qoe.json";
const BUNDLE_FORMAT: &str = "rankabr-qoe";
const DNN_FILE: &str = "qoe_dnn.json";
const LIN_MODEL_FILE: &str = "qoe_lin.json";
const WEIGHTS_FILE: &str = "lin_weights.json";
const SPLIT_FILE: &str = "split.json";

/// Index of the artifacts a `train-qoe` run leaves behind.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleIndex {
    format: String,
    version: u32,
    max_bitrate: f64,
    dnn: String,
    lin_weights: String,
}

/// Both trained QoE models, as consumed by ABR training and evaluation.
#[derive(Debug, Clone)]
pub struct QoeBundle {
    pub weights: LinWeights,
    pub scorer: QoeScorer,
}

impl QoeBundle {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(BUNDLE_FILE);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let index: BundleIndex =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if index.format != BUNDLE_FORMAT || index.version != 1 {
            bail!("{}: not a version 1 {BUNDLE_FORMAT} file", path.display());
        }
        let weights_path = dir.join(&index.lin_weights);
        let weights = LinWeights::from_json(
            &std::fs::read_to_string(&weights_path)
                .with_context(|| format!("reading {}", weights_path.display()))?,
        )
        .with_context(|| format!("parsing {}", weights_path.display()))?;
        let scorer = QoeScorer::load(dir.join(&index.dnn), index.max_bitrate)
            .with_context(|| format!("loading {}", dir.join(&index.dnn).display()))?;
        Ok(Self { weights, scorer })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.scorer.save(dir.join(DNN_FILE))?;
        std::fs::write(dir.join(WEIGHTS_FILE), self.weights.to_json())?;
        let index = BundleIndex {
            format: BUNDLE_FORMAT.into(),
            version: 1,
            max_bitrate: self.scorer.max_bitrate(),
            dnn: DNN_FILE.into(),
            lin_weights: WEIGHTS_FILE.into(),
        };
        let mut text = serde_json::to_string_pretty(&index)?;
        text.push('\n');
        std::fs::write(dir.join(BUNDLE_FILE), text)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SplitRecord {
    seed: u64,
    train_fraction: f64,
    train: Vec<String>,
    test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityRow {
    pub model: String,
    pub split: String,
    pub pairs: usize,
    pub identity_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelCurveRow {
    model: String,
    epoch: usize,
    loss: f64,
    identity_rate: Option<f64>,
}

fn tag_curve(model: &str, rows: &[CurveRow]) -> Vec<ModelCurveRow> {
    rows.iter()
        .map(|r| ModelCurveRow {
            model: model.into(),
            epoch: r.epoch,
            loss: r.loss,
            identity_rate: r.identity_rate,
        })
        .collect()
}

#[derive(Debug, Clone, Args)]
pub struct TrainQoeArgs {
    /// Directory holding sessions.csv and scores.csv.
    #[arg(long)]
    pub ratings: PathBuf,
    #[arg(long, default_value = "qoe")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of each query's sessions used for training.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Rank-model epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Pairs drawn per epoch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub lin_epochs: Option<usize>,
    #[arg(long)]
    pub lin_learning_rate: Option<f64>,
    /// Bitrate (Mbps) that feature normalization divides by.
    #[arg(long)]
    pub max_bitrate: Option<f64>,
    /// Skip the MOS-regression control model.
    #[arg(long)]
    pub no_mos_regression: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainQoeSettings {
    pub ratings: PathBuf,
    pub out: PathBuf,
    pub split_seed: u64,
    pub train_fraction: f64,
    pub dnn: QoeTrainConfig,
    pub lin: QoeTrainConfig,
    pub mos_regression: bool,
}

/// Linear-surrogate defaults: four weights need far more steps at a larger
/// rate than the network does.
pub fn default_lin_config() -> QoeTrainConfig {
    QoeTrainConfig {
        epochs: 4000,
        batch_size: 2048,
        minibatch: 2048,
        learning_rate: 0.05,
        eval_every: 500,
        ..QoeTrainConfig::default()
    }
}

impl TrainQoeArgs {
    pub fn settings(&self) -> TrainQoeSettings {
        let mut dnn = QoeTrainConfig {
            seed: self.seed,
            ..QoeTrainConfig::default()
        };
        let mut lin = QoeTrainConfig {
            seed: self.seed,
            ..default_lin_config()
        };
        if let Some(e) = self.epochs {
            dnn.epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            dnn.learning_rate = lr;
        }
        if let Some(b) = self.batch_size {
            dnn.batch_size = b;
            dnn.minibatch = b;
        }
        if let Some(h) = &self.hidden {
            dnn.hidden = h.clone();
        }
        if let Some(e) = self.lin_epochs {
            lin.epochs = e;
        }
        if let Some(lr) = self.lin_learning_rate {
            lin.learning_rate = lr;
        }
        if let Some(m) = self.max_bitrate {
            dnn.max_bitrate = m;
            lin.max_bitrate = m;
        }
        TrainQoeSettings {
            ratings: self.ratings.clone(),
            out: self.out.clone(),
            split_seed: self.seed,
            train_fraction: self.train_fraction,
            dnn,
            lin,
            mos_regression: !self.no_mos_regression,
        }
    }
}

fn identity_table(
    split: &str,
    test: &RatingDataset,
    weights: &LinWeights,
    scorer: &QoeScorer,
) -> Result<Vec<IdentityRow>> {
    let pairs = enumerate_pairs(test).len();
    let row = |model: &str, identity_rate: f64| IdentityRow {
        model: model.into(),
        split: split.into(),
        pairs,
        identity_rate,
    };
    Ok(vec![
        row("mos_opt", mos_baseline(test).identity_rate_on(test)?),
        row("qoe_lin", lin_identity_rate(test, weights)?),
        row("qoe_dnn", scorer_identity_rate(test, scorer)?),
    ])
}

pub fn train_qoe(s: &TrainQoeSettings) -> Result<Vec<IdentityRow>> {
    let out = output_path(&s.out);
    ensure_dir(&out)?;
    record(&out, s)?;
    let data = load_ratings(&s.ratings).with_context(|| format!("loading ratings from {}", s.ratings.display()))?;
    let (train, test) = split_dataset(&data, s.train_fraction, s.split_seed)?;
    let ids = |d: &RatingDataset| d.sessions().iter().map(|r| r.session_id.clone()).collect();
    let split = SplitRecord {
        seed: s.split_seed,
        train_fraction: s.train_fraction,
        train: ids(&train),
        test: ids(&test),
    };
    std::fs::write(out.join(SPLIT_FILE), serde_json::to_string_pretty(&split)? + "\n")?;

    let (scorer, dnn_curve) = train_qoe_dnn(&train, Some(&test), &s.dnn)?;
    let (lin, lin_curve) = train_qoe_lin(&train, Some(&test), &s.lin)?;
    lin.model().save(out.join(LIN_MODEL_FILE))?;
    let bundle = QoeBundle {
        weights: lin.weights(),
        scorer,
    };
    bundle.save(&out)?;

    let mut curves = tag_curve("qoe_dnn", &dnn_curve);
    curves.extend(tag_curve("qoe_lin", &lin_curve));
    let mut table = identity_table("test", &test, &bundle.weights, &bundle.scorer)?;
    if s.mos_regression {
        let (mos_reg, reg_curve) = train_mos_regression(&train, Some(&test), &s.dnn)?;
        curves.extend(tag_curve("mos_regression", &reg_curve));
        table.push(IdentityRow {
            model: "mos_regression".into(),
            split: "test".into(),
            pairs: table[0].pairs,
            identity_rate: scorer_identity_rate(&test, &mos_reg)?,
        });
    }
    write_table(&out.join("curves.csv"), "qoe-curves", &curves)?;
    write_table(&out.join("identity.csv"), "identity", &table)?;
    Ok(table)
}

#[derive(Debug, Clone, Args)]
pub struct EvalQoeArgs {
    #[arg(long)]
    pub ratings: PathBuf,
    /// Output directory of `train-qoe`.
    #[arg(long)]
    pub qoe: PathBuf,
    /// Score only the held-out sessions recorded by `train-qoe`.
    #[arg(long)]
    pub test_only: bool,
    #[arg(long, default_value = "qoe-eval")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalQoeSettings {
    pub ratings: PathBuf,
    pub qoe: PathBuf,
    pub test_only: bool,
    pub out: PathBuf,
}

impl EvalQoeArgs {
    pub fn settings(&self) -> EvalQoeSettings {
        EvalQoeSettings {
            ratings: self.ratings.clone(),
            qoe: self.qoe.clone(),
            test_only: self.test_only,
            out: self.out.clone(),
        }
    }
}

pub fn eval_qoe(s: &EvalQoeSettings) -> Result<Vec<IdentityRow>> {
    let out = output_path(&s.out);
    ensure_dir(&out)?;
    record(&out, s)?;
    let bundle = QoeBundle::load(&s.qoe)?;
    let mut data = load_ratings(&s.ratings)?;
    let mut split = "all";
    if s.test_only {
        let path = s.qoe.join(SPLIT_FILE);
        let rec: SplitRecord = serde_json::from_str(
            &std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?,
        )?;
        data = data.retain_sessions(&rec.test)?;
        split = "test";
    }
    let table = identity_table(split, &data, &bundle.weights, &bundle.scorer)?;
    write_table(&out.join("identity.csv"), "identity", &table)?;
    Ok(table)
}

pub fn run_train(args: &TrainQoeArgs, cfg: &ConfigFile) -> Result<()> {
    let s = cfg.apply("train-qoe", args.settings())?;
    for r in train_qoe(&s)? {
        println!("{:<16} {:>8.3}%  ({} pairs)", r.model, r.identity_rate, r.pairs);
    }
    Ok(())
}

pub fn run_eval(args: &EvalQoeArgs, cfg: &ConfigFile) -> Result<()> {
    let s = cfg.apply("eval-qoe", args.settings())?;
    for r in eval_qoe(&s)? {
        println!("{:<16} {:>8.3}%  ({} pairs)", r.model, r.identity_rate, r.pairs);
    }
    Ok(())
}
