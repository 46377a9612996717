use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    enumerate_pairs, extract_features, identity_rate, pair_loss, qoe_lin, sample_batch,
    window_features, LinAggregates, LinWeights, PairSample, QoeError, QOE_FEATURES,
};
use crate::data::{RatingDataset, SessionRecord, DEFAULT_LADDER_MBPS};
use crate::nn::{AdamConfig, Gradients, Mlp, MlpSpec, NetError, OutputHead};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QoeTrainConfig {
    pub epochs: usize,
    /// Pairs drawn per epoch.
    pub batch_size: usize,
    /// Pairs per optimizer step; the epoch batch is consumed in order.
    pub minibatch: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub seed: u64,
    /// Held-out Identity Rate is computed every this many epochs and at the end.
    pub eval_every: usize,
    pub max_bitrate: f64,
}

impl Default for QoeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 8192,
            minibatch: 8192,
            hidden: vec![128, 128, 128],
            learning_rate: 1e-4,
            seed: 0,
            eval_every: 10,
            max_bitrate: DEFAULT_LADDER_MBPS[DEFAULT_LADDER_MBPS.len() - 1],
        }
    }
}

impl QoeTrainConfig {
    fn validate(&self) -> Result<(), QoeError> {
        if self.epochs == 0 || self.batch_size == 0 || self.minibatch == 0 || self.eval_every == 0 {
            return Err(QoeError::InvalidConfig(
                "epochs, batch_size, minibatch and eval_every must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.max_bitrate > 0.0) {
            return Err(QoeError::InvalidConfig(
                "learning_rate and max_bitrate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One point of a training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub loss: f64,
    pub identity_rate: Option<f64>,
}

/// Neural QoE scorer over trailing chunk windows.
#[derive(Debug, Clone, PartialEq)]
pub struct QoeScorer {
    model: Mlp,
    max_bitrate: f64,
}

impl QoeScorer {
    pub fn spec(hidden: &[usize]) -> MlpSpec {
        MlpSpec::new(QOE_FEATURES, hidden, 1, OutputHead::Linear)
    }

    pub fn new(model: Mlp, max_bitrate: f64) -> Result<Self, NetError> {
        let spec = model.spec();
        if spec.input_dim != QOE_FEATURES || spec.output_dim != 1 || spec.output_head != OutputHead::Linear
        {
            return Err(NetError::ShapeMismatch(format!(
                "a QoE scorer maps {QOE_FEATURES} features to one linear output"
            )));
        }
        Ok(Self { model, max_bitrate })
    }

    pub fn model(&self) -> &Mlp {
        &self.model
    }

    pub fn max_bitrate(&self) -> f64 {
        self.max_bitrate
    }

    fn score_features(&self, f: &[f64]) -> f64 {
        self.model.predict(f).expect("features are finite and sized")[0]
    }

    /// Score of a whole session: the window ending at its last chunk.
    pub fn score_session(&self, s: &SessionRecord) -> f64 {
        self.score_features(extract_features(s, s.len() - 1, self.max_bitrate).as_slice())
    }

    /// Score of the window ending at chunk `end` of parallel per-chunk arrays.
    pub fn score_window(&self, vmaf: &[f64], bitrate: &[f64], rebuffer: &[f64], end: usize) -> f64 {
        self.score_features(window_features(vmaf, bitrate, rebuffer, end, self.max_bitrate).as_slice())
    }

    /// Mean of the per-chunk trailing-window scores over a whole session.
    pub fn mean_window_score(&self, s: &SessionRecord) -> f64 {
        let total: f64 = (0..s.len())
            .map(|t| self.score_window(&s.vmaf, &s.bitrate, &s.rebuffer, t))
            .sum();
        total / s.len().max(1) as f64
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetError> {
        self.model.save(path)
    }

    pub fn load(path: impl AsRef<Path>, max_bitrate: f64) -> Result<Self, NetError> {
        Self::new(Mlp::load(path)?, max_bitrate)
    }
}

/// Final-window features of every session in the dataset.
pub fn session_features(d: &RatingDataset, max_bitrate: f64) -> Vec<Vec<f64>> {
    d.sessions()
        .iter()
        .map(|s| extract_features(s, s.len() - 1, max_bitrate).0.to_vec())
        .collect()
}

/// Pairwise training of `model` on fixed per-session inputs.
///
/// Within a minibatch each distinct session is evaluated once; its output
/// gradient is the sum of the loss derivatives of every pair it occurs in,
/// which gives the same parameter gradient as per-pair backpropagation.
fn fit_pairwise(
    model: &mut Mlp,
    inputs: &[Vec<f64>],
    train: &RatingDataset,
    cfg: &QoeTrainConfig,
    mut evaluate: impl FnMut(&Mlp) -> Result<f64, QoeError>,
) -> Result<Vec<CurveRow>, QoeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut outputs: Vec<Option<(crate::nn::ForwardCache, f64)>> = vec![None; inputs.len()];
    let mut d_out = vec![0.0; inputs.len()];
    for epoch in 1..=cfg.epochs {
        let batch = sample_batch(train, cfg.batch_size, &mut rng)?;
        let mut loss_sum = 0.0;
        for mb in batch.chunks(cfg.minibatch) {
            outputs.iter_mut().for_each(|o| *o = None);
            d_out.iter_mut().for_each(|g| *g = 0.0);
            let mut touched = Vec::new();
            for p in mb {
                for s in [p.session_i, p.session_j] {
                    if outputs[s].is_none() {
                        let cache = model.forward(&inputs[s])?;
                        let r = cache.output()[0];
                        outputs[s] = Some((cache, r));
                        touched.push(s);
                    }
                }
                let ri = outputs[p.session_i].as_ref().map(|o| o.1).unwrap_or_default();
                let rj = outputs[p.session_j].as_ref().map(|o| o.1).unwrap_or_default();
                let l = pair_loss(ri, rj, p.label);
                loss_sum += l.loss;
                d_out[p.session_i] += l.d_ri;
                d_out[p.session_j] += l.d_rj;
            }
            let mut grads = Gradients::zeros(model.spec());
            for s in touched {
                if d_out[s] != 0.0 {
                    let (cache, _) = outputs[s].as_ref().expect("touched session has output");
                    model.backward_into(cache, &[d_out[s]], &mut grads)?;
                }
            }
            grads.scale(1.0 / mb.len() as f64);
            model.adam_step(&grads, &adam)?;
            if !model.all_finite() {
                return Err(QoeError::Diverged(epoch));
            }
        }
        let identity_rate = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            Some(evaluate(model)?)
        } else {
            None
        };
        curve.push(CurveRow {
            epoch,
            loss: loss_sum / batch.len() as f64,
            identity_rate,
        });
    }
    Ok(curve)
}

fn held_out(
    test: Option<&RatingDataset>,
    features: impl Fn(&RatingDataset) -> Vec<Vec<f64>>,
) -> Option<(Vec<PairSample>, Vec<Vec<f64>>)> {
    test.map(|t| (enumerate_pairs(t), features(t)))
        .filter(|(pairs, _)| !pairs.is_empty())
}

fn eval_on(model: &Mlp, held: &Option<(Vec<PairSample>, Vec<Vec<f64>>)>) -> Result<f64, QoeError> {
    match held {
        None => Ok(f64::NAN),
        Some((pairs, feats)) => {
            let scores = feats
                .iter()
                .map(|f| model.predict(f).map(|o| o[0]))
                .collect::<Result<Vec<_>, _>>()?;
            identity_rate(pairs, |s| scores[s])
        }
    }
}

/// Trains the neural scorer with the pairwise and align losses.
///
/// When `test` is given its Identity Rate is logged in the curve; otherwise
/// the curve's identity column is NaN at evaluation epochs.
pub fn train_qoe_dnn(
    train: &RatingDataset,
    test: Option<&RatingDataset>,
    cfg: &QoeTrainConfig,
) -> Result<(QoeScorer, Vec<CurveRow>), QoeError> {
    cfg.validate()?;
    let mut model = Mlp::init(QoeScorer::spec(&cfg.hidden), cfg.seed)?;
    let inputs = session_features(train, cfg.max_bitrate);
    let held = held_out(test, |t| session_features(t, cfg.max_bitrate));
    let curve = fit_pairwise(&mut model, &inputs, train, cfg, |m| eval_on(m, &held))?;
    Ok((QoeScorer::new(model, cfg.max_bitrate)?, curve))
}

/// Four-input linear surrogate over session aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct LinModel {
    model: Mlp,
}

impl LinModel {
    /// Input scaling: quality and switches in hundreds of VMAF points, stalls
    /// in tens of seconds.
    const SCALE: [f64; 4] = [100.0, 10.0, 100.0, 100.0];

    fn spec() -> MlpSpec {
        MlpSpec::new(4, &[], 1, OutputHead::Linear)
    }

    fn inputs(s: &SessionRecord) -> Vec<f64> {
        let a = LinAggregates::of(s);
        [a.quality, a.rebuffer, a.switch_up, a.switch_down]
            .iter()
            .zip(Self::SCALE)
            .map(|(v, k)| v / k)
            .collect()
    }

    /// Learned coefficients mapped to the formula's sign convention.
    pub fn weights(&self) -> LinWeights {
        let w = &self.model.layers()[0].weights;
        LinWeights::new(
            w[0] / Self::SCALE[0],
            -w[1] / Self::SCALE[1],
            -w[2] / Self::SCALE[2],
            -w[3] / Self::SCALE[3],
        )
    }

    pub fn model(&self) -> &Mlp {
        &self.model
    }
}

/// Trains the linear surrogate with the same pairwise loss and returns it
/// together with its curve.
pub fn train_qoe_lin(
    train: &RatingDataset,
    test: Option<&RatingDataset>,
    cfg: &QoeTrainConfig,
) -> Result<(LinModel, Vec<CurveRow>), QoeError> {
    cfg.validate()?;
    let mut model = Mlp::init(LinModel::spec(), cfg.seed)?;
    let to_inputs = |d: &RatingDataset| d.sessions().iter().map(LinModel::inputs).collect::<Vec<_>>();
    let inputs = to_inputs(train);
    let held = held_out(test, to_inputs);
    let curve = fit_pairwise(&mut model, &inputs, train, cfg, |m| eval_on(m, &held))?;
    Ok((LinModel { model }, curve))
}

/// Mean opinion score of every scored session, keyed by session id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MosTable {
    by_session: BTreeMap<String, f64>,
}

impl MosTable {
    pub fn score(&self, session_id: &str) -> Result<f64, QoeError> {
        self.by_session
            .get(session_id)
            .copied()
            .ok_or_else(|| QoeError::UnknownSession(session_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.by_session.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_session.is_empty()
    }

    /// Identity Rate on every enumerable pair of `d`; all its sessions must
    /// be in the table.
    pub fn identity_rate_on(&self, d: &RatingDataset) -> Result<f64, QoeError> {
        let scores = d
            .sessions()
            .iter()
            .map(|s| self.score(&s.session_id))
            .collect::<Result<Vec<_>, _>>()?;
        identity_rate(&enumerate_pairs(d), |s| scores[s])
    }
}

pub fn mos_baseline(d: &RatingDataset) -> MosTable {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (_, s, y) in d.score_entries() {
        let e = sums.entry(s).or_default();
        e.0 += y;
        e.1 += 1;
    }
    MosTable {
        by_session: sums
            .into_iter()
            .map(|(s, (sum, n))| (d.session(s).session_id.clone(), sum / n as f64))
            .collect(),
    }
}

/// Control model: the same network regressed onto mean opinion scores with
/// squared error, scored on held-out pairs like the rank-trained model.
pub fn train_mos_regression(
    train: &RatingDataset,
    test: Option<&RatingDataset>,
    cfg: &QoeTrainConfig,
) -> Result<(QoeScorer, Vec<CurveRow>), QoeError> {
    cfg.validate()?;
    let mos = mos_baseline(train);
    let feats = session_features(train, cfg.max_bitrate);
    let rows: Vec<(usize, f64)> = train
        .sessions()
        .iter()
        .enumerate()
        .filter_map(|(i, s)| mos.score(&s.session_id).ok().map(|y| (i, y / 100.0)))
        .collect();
    if rows.is_empty() {
        return Err(QoeError::InsufficientSessions);
    }
    let held = held_out(test, |t| session_features(t, cfg.max_bitrate));
    let mut model = Mlp::init(QoeScorer::spec(&cfg.hidden), cfg.seed)?;
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        for mb in rows.chunks(cfg.minibatch) {
            let mut grads = Gradients::zeros(model.spec());
            for &(i, target) in mb {
                let cache = model.forward(&feats[i])?;
                let err = cache.output()[0] - target;
                loss_sum += err * err;
                model.backward_into(&cache, &[2.0 * err], &mut grads)?;
            }
            grads.scale(1.0 / mb.len() as f64);
            model.adam_step(&grads, &adam)?;
            if !model.all_finite() {
                return Err(QoeError::Diverged(epoch));
            }
        }
        let identity_rate = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            Some(eval_on(&model, &held)?)
        } else {
            None
        };
        curve.push(CurveRow {
            epoch,
            loss: loss_sum / rows.len() as f64,
            identity_rate,
        });
    }
    Ok((QoeScorer::new(model, cfg.max_bitrate)?, curve))
}

/// Identity Rate of the linear formula with fixed weights on `d`.
pub fn lin_identity_rate(d: &RatingDataset, w: &LinWeights) -> Result<f64, QoeError> {
    let scores: Vec<f64> = d.sessions().iter().map(|s| qoe_lin(s, w)).collect();
    identity_rate(&enumerate_pairs(d), |s| scores[s])
}

/// Identity Rate of a neural scorer on `d`.
pub fn scorer_identity_rate(d: &RatingDataset, scorer: &QoeScorer) -> Result<f64, QoeError> {
    let scores: Vec<f64> = d.sessions().iter().map(|s| scorer.score_session(s)).collect();
    identity_rate(&enumerate_pairs(d), |s| scores[s])
}
