//! Acceptance criteria, one line per criterion.
//!
//! Pass criterion numbers as arguments to run a subset. Criterion 4 needs
//! an ingested copy of the external ratings set in `RANKABR_SQOE_DIR`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankabr::baselines::{bba_select, rate_based_select, BbaConfig, MpcConfig, RateBased, RobustMpc};
use rankabr::data::{
    split_dataset, ChunkEncoding, NetworkTrace, RatingDataset, TraceSample, VideoManifest,
    DEFAULT_LADDER_MBPS,
};
use rankabr::nn::{Mlp, MlpSpec, OutputHead};
use rankabr::policy::{
    dual_clip_loss, evaluate_policy, train_abr, AbrTrainConfig, OmegaMode, RunLogRow, TrainInputs,
};
use rankabr::qoe::{
    mos_baseline, pair_loss, qoe_lin, scorer_identity_rate, train_mos_regression, train_qoe_dnn,
    train_qoe_lin, LinWeights, QoeScorer, QoeTrainConfig, RelLabel,
};
use rankabr::select::{BanditConfig, DiscountedUcb};
use rankabr::sim::{rollout, BitrateSelector, SimConfig, Simulator};
use rankabr::synth::{default_manifest, rater_panel, trace_pool, RaterPanelConfig};
use rankabr_cli::qoe_cmd::{default_lin_config, train_qoe, TrainQoeSettings};

const SQOE_VAR: &str = "RANKABR_SQOE_DIR";

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn within(start: Instant, limit: Duration, v: Verdict) -> Verdict {
    let took = start.elapsed();
    match v {
        Verdict::Pass(d) if took > limit => {
            Verdict::Fail(format!("{d}; took {took:.1?}, limit {limit:?}"))
        }
        other => other,
    }
}

// ---------------------------------------------------------------- 1

fn closest_to_kink(m: &Mlp, x: &[f64]) -> f64 {
    let layers = m.layers();
    let mut a = x.to_vec();
    let mut closest = f64::INFINITY;
    for l in &layers[..layers.len() - 1] {
        let z: Vec<f64> = l
            .weights
            .chunks_exact(l.inputs)
            .zip(&l.bias)
            .map(|(row, b)| b + row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        closest = z.iter().fold(closest, |c, v| c.min(v.abs()));
        a = z.iter().map(|v| v.max(0.0)).collect();
    }
    closest
}

fn gradient_fidelity() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut kinks = 0;
    for _ in 0..100 {
        let input = rng.random_range(1..=8);
        let hidden: Vec<usize> = (0..rng.random_range(0..=2)).map(|_| rng.random_range(1..=8)).collect();
        let output = rng.random_range(1..=8);
        let head = if output > 1 && rng.random_bool(0.5) {
            OutputHead::Softmax
        } else {
            OutputHead::Linear
        };
        let mut m = Mlp::init(MlpSpec::new(input, &hidden, output, head), rng.random())?;
        let x: Vec<f64> = (0..input).map(|_| rng.random_range(-2.0..2.0)).collect();
        // Zero-initialized biases put units fed only by dead units exactly on
        // the rectifier kink, where the derivative is a convention. Nudge the
        // hidden biases until every unit is at least 1e-3 away from it.
        while closest_to_kink(&m, &x) < 1e-3 {
            kinks += 1;
            let hidden_layers = m.layers().len() - 1;
            for l in &mut m.layers_mut()[..hidden_layers] {
                for b in &mut l.bias {
                    *b += rng.random_range(-0.05..0.05);
                }
            }
        }
        let g: Vec<f64> = (0..output).map(|_| rng.random_range(-1.0..1.0)).collect();
        let probe = |m: &Mlp| -> Result<f64> {
            Ok(m.predict(&x)?.iter().zip(&g).map(|(o, gi)| o * gi).sum())
        };
        let analytic = m.backward(&m.forward(&x)?, &g)?.flat();
        let base = m.flat_params();
        let mut net_worst: f64 = 0.0;
        for (k, &p) in base.iter().enumerate() {
            m.set_param(k, p + h);
            let up = probe(&m)?;
            m.set_param(k, p - h);
            let down = probe(&m)?;
            m.set_param(k, p);
            let numeric = (up - down) / (2.0 * h);
            let diff = (analytic[k] - numeric).abs();
            // Relative error with a 1e-6 absolute floor.
            let rel = if diff <= 1e-6 { 0.0 } else { diff / analytic[k].abs().max(numeric.abs()) };
            net_worst = net_worst.max(rel);
        }
        worst = worst.max(net_worst);
    }
    let mut pair_worst: f64 = 0.0;
    let labels = [RelLabel::Worse, RelLabel::Tie, RelLabel::Better];
    for _ in 0..1000 {
        let (ri, rj) = (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        let label = labels[rng.random_range(0..3)];
        let l = pair_loss(ri, rj, label);
        let e = 1e-6;
        let di = (pair_loss(ri + e, rj, label).loss - pair_loss(ri - e, rj, label).loss) / (2.0 * e);
        let dj = (pair_loss(ri, rj + e, label).loss - pair_loss(ri, rj - e, label).loss) / (2.0 * e);
        pair_worst = pair_worst.max((l.d_ri - di).abs()).max((l.d_rj - dj).abs());
    }
    Ok(verdict(
        worst <= 1e-4 && pair_worst <= 1e-6,
        format!(
            "worst net relative error {worst:.2e} ({kinks} bias nudges off the rectifier kink), worst pair-loss error {pair_worst:.2e}"
        ),
    ))
}

// ---------------------------------------------------------------- 2

struct Channel {
    starts: Vec<f64>,
    rates: Vec<f64>,
}

impl Channel {
    fn delivered(&self, t: f64) -> f64 {
        (0..self.rates.len())
            .filter(|&i| t > self.starts[i])
            .map(|i| {
                let end = self.starts.get(i + 1).copied().unwrap_or(f64::INFINITY);
                self.rates[i] * (t.min(end) - self.starts[i])
            })
            .sum()
    }

    fn time_of(&self, bits: f64) -> f64 {
        for i in 0..self.rates.len() {
            let end = self.starts.get(i + 1).copied().unwrap_or(f64::INFINITY);
            if end.is_infinite() || bits <= self.delivered(end) {
                return self.starts[i] + (bits - self.delivered(self.starts[i])) / self.rates[i];
            }
        }
        unreachable!("last segment is unbounded")
    }
}

fn random_manifest(rng: &mut impl Rng, chunks: usize, levels: usize) -> Result<VideoManifest> {
    let mut rate = 0.0;
    let ladder: Vec<f64> = (0..levels)
        .map(|_| {
            rate += rng.random_range(0.3..1.5);
            rate
        })
        .collect();
    let chunks = (0..chunks)
        .map(|_| {
            let mut size = rng.random_range(10_000u64..300_000);
            let mut q: f64 = rng.random_range(5.0..40.0);
            let (mut sizes, mut vmaf) = (Vec::new(), Vec::new());
            for _ in 0..levels {
                sizes.push(size);
                vmaf.push(q.min(100.0));
                size += rng.random_range(10_000..500_000);
                q += rng.random_range(0.0..25.0);
            }
            ChunkEncoding {
                sizes_bytes: sizes,
                vmaf,
            }
        })
        .collect();
    Ok(VideoManifest::new(rng.random_range(1.0..5.0), ladder, chunks)?)
}

fn simulator_conservation() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = Vec::new();
    let mut worst_closed_form: f64 = 0.0;
    for episode in 0..10_000 {
        let levels = rng.random_range(2..=6);
        let chunks = rng.random_range(1..=20);
        let m = random_manifest(&mut rng, chunks, levels)?;
        let cfg = SimConfig {
            buffer_cap: m.chunk_duration() + rng.random_range(0.5..40.0),
            per_chunk_rtt: rng.random_range(0.0..0.3),
            drain_granularity: 0.5,
            trace_wraps: episode % 2 == 0,
        };
        let closed_form = !cfg.trace_wraps;
        let (trace, channel) = if closed_form {
            // Up to three segments; the trailing copy of the last rate makes
            // the final segment unbounded.
            let segs: Vec<(f64, f64)> = (0..rng.random_range(1..=3))
                .map(|_| (rng.random_range(0.5..10.0), rng.random_range(0.1..8.0)))
                .collect();
            let mut samples = Vec::new();
            let mut t = 0.0;
            let mut starts = Vec::new();
            for &(d, r) in &segs {
                samples.push(TraceSample { time: t, mbps: r });
                starts.push(t);
                t += d;
            }
            samples.push(TraceSample {
                time: t,
                mbps: segs[segs.len() - 1].1,
            });
            let ch = Channel {
                starts,
                rates: segs.iter().map(|s| s.1 * 1e6).collect(),
            };
            (NetworkTrace::new("segs", samples)?, Some(ch))
        } else {
            let rates: Vec<f64> = (0..rng.random_range(2..40)).map(|_| rng.random_range(0.05..10.0)).collect();
            (NetworkTrace::from_uniform("t", rng.random_range(0.2..3.0), &rates)?, None)
        };
        let mut sim = Simulator::reset(&m, &trace, cfg, 0.0)?;
        let (mut clock, mut now, mut buffer) = (0.0, 0.0, 0.0);
        while !sim.is_done() {
            let action = rng.random_range(0..levels);
            let chunk = sim.state().chunk_index;
            let s = sim.step(action)?;
            clock += s.download_time + s.sleep_time;
            if !(s.buffer_after >= 0.0 && s.buffer_after <= cfg.buffer_cap) {
                violations.push(format!("episode {episode}: buffer {}", s.buffer_after));
            }
            if s.rebuffer != (s.download_time - s.buffer_before).max(0.0) {
                violations.push(format!("episode {episode}: rebuffer identity"));
            }
            if sim.state().wall_clock != clock {
                violations.push(format!("episode {episode}: wall clock"));
            }
            if let Some(ch) = &channel {
                let bits = m.size(chunk, action) as f64 * 8.0;
                let dl = ch.time_of(ch.delivered(now) + bits) - now + cfg.per_chunk_rtt;
                let stall = (dl - buffer).max(0.0);
                let mid = (buffer - dl).max(0.0) + m.chunk_duration();
                let sleep = (mid - cfg.buffer_cap).max(0.0);
                buffer = mid - sleep;
                now += dl + sleep;
                for (a, b) in [
                    (s.download_time, dl),
                    (s.rebuffer, stall),
                    (s.sleep_time, sleep),
                    (s.buffer_after, buffer),
                ] {
                    worst_closed_form = worst_closed_form.max((a - b).abs());
                }
            }
        }
    }
    Ok(verdict(
        violations.is_empty() && worst_closed_form <= 1e-9,
        format!(
            "10000 episodes, {} invariant violations{}, worst closed-form gap {worst_closed_form:.2e} s",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    ))
}

// ---------------------------------------------------------------- 3

fn shuffled_scores(d: &RatingDataset, seed: u64) -> Result<RatingDataset> {
    use rand::seq::SliceRandom;
    let mut scores: Vec<f64> = d.score_rows().iter().map(|r| r.score).collect();
    scores.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut it = scores.into_iter();
    Ok(d.with_scores(|_| it.next().expect("one score per row"))?)
}

fn desk_dnn_config() -> QoeTrainConfig {
    QoeTrainConfig {
        epochs: 200,
        batch_size: 2048,
        minibatch: 2048,
        learning_rate: 1e-3,
        eval_every: 200,
        ..QoeTrainConfig::default()
    }
}

fn rank_model_recovery() -> Result<Verdict> {
    let panel_cfg = RaterPanelConfig::default();
    let panel = rater_panel(&panel_cfg)?;
    let (train, test) = split_dataset(&panel.dataset, 0.8, 0)?;
    let cfg = desk_dnn_config();
    let (scorer, _) = train_qoe_dnn(&train, None, &cfg)?;
    let dnn = scorer_identity_rate(&test, &scorer)?;

    let shuffled = shuffled_scores(&panel.dataset, 1)?;
    let (s_train, s_test) = split_dataset(&shuffled, 0.8, 0)?;
    let (s_scorer, _) = train_qoe_dnn(&s_train, None, &cfg)?;
    let control = scorer_identity_rate(&s_test, &s_scorer)?;

    let (lin, _) = train_qoe_lin(&train, None, &default_lin_config())?;
    let w = lin.weights();
    let truth = panel_cfg.latent;
    let ratio_err = [
        (w.rebuffer / w.quality, truth.rebuffer / truth.quality),
        (w.switch_up / w.quality, truth.switch_up / truth.quality),
        (w.switch_down / w.quality, truth.switch_down / truth.quality),
    ]
    .iter()
    .map(|(got, want)| (got - want).abs() / want.abs())
    .fold(0.0, f64::max);

    let (mos_reg, _) = train_mos_regression(&train, None, &cfg)?;
    let regression = scorer_identity_rate(&test, &mos_reg)?;
    let mos_opt = mos_baseline(&test).identity_rate_on(&test)?;

    Ok(verdict(
        dnn >= 95.0 && (control - 50.0).abs() <= 3.0 && ratio_err <= 0.15 && regression < dnn,
        format!(
            "QoE_DNN {dnn:.2}%, shuffled control {control:.2}%, worst weight-ratio error {:.1}%, MOS regression {regression:.2}% (MOS-OPT on test {mos_opt:.2}%)",
            100.0 * ratio_err
        ),
    ))
}

// ---------------------------------------------------------------- 4

fn external_reproduction() -> Result<Verdict> {
    let Some(dir) = std::env::var_os(SQOE_VAR) else {
        return Ok(Verdict::Skip(format!("optional external data; set {SQOE_VAR} to an ingested ratings directory")));
    };
    let out = tempfile::tempdir()?;
    let table = train_qoe(&TrainQoeSettings {
        ratings: PathBuf::from(dir),
        out: out.path().to_path_buf(),
        split_seed: 0,
        train_fraction: 0.8,
        dnn: QoeTrainConfig::default(),
        lin: default_lin_config(),
        mos_regression: false,
    })?;
    let rate = |model: &str| table.iter().find(|r| r.model == model).map(|r| r.identity_rate).unwrap_or(f64::NAN);
    let (dnn, lin) = (rate("qoe_dnn"), rate("qoe_lin"));
    Ok(verdict(
        (dnn - 75.47).abs() <= 2.0 && (lin - 67.26).abs() <= 1.5,
        format!("QoE_DNN {dnn:.2}% (target 75.47 ± 2.0), QoE_lin {lin:.2}% (target 67.26 ± 1.5)"),
    ))
}

// ---------------------------------------------------------------- 5

fn dual_clip_identities() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bad = 0;
    for _ in 0..10_000 {
        let ratio: f64 = rng.random_range(0.0..20.0);
        let adv: f64 = rng.random_range(-10.0..10.0);
        let v = dual_clip_loss(ratio, adv, 0.2, 3.0)?.value;
        let ppo = f64::min(ratio * adv, ratio.clamp(0.8, 1.2) * adv);
        let ok = if adv >= 0.0 { v == ppo } else { v >= 3.0 * adv };
        bad += usize::from(!ok);
    }
    let hand = dual_clip_loss(10.0, -1.0, 0.2, 3.0)?.value;
    Ok(verdict(
        bad == 0 && hand == -3.0,
        format!("{bad} of 10000 random cases violate an identity; (A=-1, ratio=10) gives {hand}"),
    ))
}

// ---------------------------------------------------------------- 6 and 7

struct DeskSetup {
    traces: Vec<NetworkTrace>,
    held_out: Vec<NetworkTrace>,
    manifests: Vec<VideoManifest>,
    weights: LinWeights,
    scorer: QoeScorer,
}

impl DeskSetup {
    fn new() -> Result<Self> {
        let panel = rater_panel(&RaterPanelConfig::default())?;
        let (train, _) = split_dataset(&panel.dataset, 0.8, 0)?;
        let (scorer, _) = train_qoe_dnn(&train, None, &desk_dnn_config())?;
        let (lin, _) = train_qoe_lin(&train, None, &default_lin_config())?;
        Ok(Self {
            traces: trace_pool("train", 10, 300, 0),
            held_out: trace_pool("val", 20, 300, 1),
            manifests: vec![default_manifest(0)],
            weights: lin.weights(),
            scorer,
        })
    }

    fn inputs(&self) -> TrainInputs<'_> {
        TrainInputs {
            traces: &self.traces,
            manifests: &self.manifests,
            weights: self.weights,
            scorer: &self.scorer,
            validation: &self.held_out,
        }
    }

    fn config(&self, omega: OmegaMode) -> AbrTrainConfig {
        let mut cfg = AbrTrainConfig {
            epochs: 2000,
            omega,
            seed: 0,
            validate_every: 0,
            ..AbrTrainConfig::default()
        };
        cfg.ppo.agents = 2;
        cfg.ppo.learning_rate = 1e-3;
        cfg.ppo.lambda_lr = 1e-2;
        cfg
    }

    /// Trains and returns the run log and the held-out mean QoE_lin.
    fn train(&self, omega: OmegaMode) -> Result<(Vec<RunLogRow>, f64)> {
        let cfg = self.config(omega);
        let mut finite = true;
        let out = train_abr(&self.inputs(), &cfg, None, |state, _, _| {
            finite &= state.actor.all_finite() && state.critic.all_finite();
            Ok(())
        })?;
        ensure!(finite, "non-finite parameters during training");
        let eval = evaluate_policy(
            &out.state.actor,
            out.state.layout,
            &self.manifests[0],
            &self.held_out,
            cfg.sim,
            &self.weights,
            &self.scorer,
        )?;
        Ok((out.rows, eval.mean_qoe_lin))
    }

    fn baseline(&self, policy: &mut dyn BitrateSelector) -> Result<f64> {
        let mut total = 0.0;
        for t in &self.held_out {
            let r = rollout(policy, &self.manifests[0], t, SimConfig::default(), 0.0, t.id())?;
            total += qoe_lin(&r.session, &self.weights);
        }
        Ok(total / self.held_out.len() as f64)
    }
}

fn smooth_training(rows: &[RunLogRow]) -> Verdict {
    let first = rows.first().map_or(f64::NAN, |r| r.omega);
    let last = rows.last().map_or(f64::NAN, |r| r.omega);
    let tail = &rows[rows.len().saturating_sub(200)..];
    let entropy = tail.iter().map(|r| r.mean_entropy).sum::<f64>() / tail.len() as f64;
    verdict(
        first >= 0.95 && last <= 0.2 && (entropy - 0.1).abs() <= 0.05,
        format!("omega {first:.3} -> {last:.3}, mean entropy over the last 200 epochs {entropy:.4}"),
    )
}

fn policy_quality(desk: &DeskSetup, blended: f64) -> Result<Verdict> {
    let rate = desk.baseline(&mut RateBased)?;
    let mpc = desk.baseline(&mut RobustMpc::new(MpcConfig {
        weights: desk.weights,
        ..MpcConfig::default()
    }))?;
    let (_, lin_only) = desk.train(OmegaMode::Fixed(1.0))?;
    let (_, dnn_only) = desk.train(OmegaMode::Fixed(0.0))?;
    Ok(verdict(
        blended >= rate && blended >= 0.95 * mpc && lin_only <= blended && dnn_only <= blended,
        format!(
            "held-out QoE_lin: blended {blended:.2}, rate-based {rate:.2}, 0.95 x RobustMPC {:.2}, lin-only {lin_only:.2}, DNN-only {dnn_only:.2}",
            0.95 * mpc
        ),
    ))
}

// ---------------------------------------------------------------- 8

fn bandit_selector() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let arms = rng.random_range(1..6);
        let gamma = rng.random_range(0.5..=1.0);
        let ids: Vec<String> = (0..arms).map(|i| format!("t{i}")).collect();
        let mut ucb = DiscountedUcb::new(ids, BanditConfig { gamma, exploration: 0.2 })?;
        let history: Vec<(usize, f64)> = (0..rng.random_range(1..=50))
            .map(|_| (rng.random_range(0..arms), rng.random::<f64>()))
            .collect();
        for &(a, r) in &history {
            ucb.record_index(a, r)?;
        }
        let last = history.len();
        for (arm, state) in ucb.arms().iter().enumerate() {
            let (mut num, mut den) = (0.0, 0.0);
            for (p, &(a, r)) in history.iter().enumerate() {
                if a == arm {
                    let w = gamma.powi((last - p - 1) as i32);
                    num += w * r;
                    den += w;
                }
            }
            worst = worst
                .max((state.discounted_reward - num).abs())
                .max((state.discounted_pulls - den).abs());
        }
    }
    let mut ucb = DiscountedUcb::new(["high", "low"], BanditConfig { gamma: 0.999, exploration: 0.2 })?;
    let mut high = 0;
    for _ in 0..500 {
        let s = ucb.select_next();
        let reward = if s.trace_id == "high" { 0.8 } else { 0.2 };
        high += usize::from(s.trace_id == "high");
        ucb.record_index(s.arm, reward)?;
    }
    let freq = high as f64 / 500.0;
    Ok(verdict(
        worst <= 1e-9 && freq > 0.8,
        format!("worst streaming gap {worst:.2e}, high-arm frequency {:.1}%", 100.0 * freq),
    ))
}

// ---------------------------------------------------------------- 9

fn baseline_oracles() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mismatches = 0;
    for _ in 0..100 {
        let levels = rng.random_range(2..=4);
        let m = random_manifest(&mut rng, 3, levels)?;
        let sim = SimConfig {
            buffer_cap: m.chunk_duration() + rng.random_range(1.0..30.0),
            per_chunk_rtt: rng.random_range(0.0..0.2),
            ..SimConfig::default()
        };
        let w = LinWeights::new(
            rng.random_range(0.1..2.0),
            rng.random_range(0.5..10.0),
            rng.random_range(0.0..2.0),
            rng.random_range(0.0..2.0),
        );
        let first = rng.random_range(0..2);
        let start_buffer = rng.random_range(0.0..sim.buffer_cap);
        let last = rng.random_bool(0.7).then(|| rng.random_range(10.0..90.0));
        let mbps = rng.random_range(0.3..6.0);
        let value = |seq: [usize; 2]| {
            let (mut buffer, mut prev, mut total) = (start_buffer, last, 0.0);
            for (k, a) in seq.into_iter().enumerate() {
                let c = first + k;
                let dl = sim.per_chunk_rtt + m.size(c, a) as f64 * 8.0 / (mbps * 1e6);
                let stall = (dl - buffer).max(0.0);
                buffer = ((buffer - dl).max(0.0) + m.chunk_duration()).min(sim.buffer_cap);
                let q = m.vmaf(c, a);
                let d: f64 = prev.map_or(0.0, |p| q - p);
                total += w.quality * q - w.rebuffer * stall - w.switch_up * d.max(0.0) - w.switch_down * (-d).max(0.0);
                prev = Some(q);
            }
            total
        };
        let mut best = f64::NEG_INFINITY;
        let mut by_first = vec![f64::NEG_INFINITY; levels];
        for a in 0..levels {
            for b in 0..levels {
                let v = value([a, b]);
                best = best.max(v);
                by_first[a] = by_first[a].max(v);
            }
        }
        let mpc = RobustMpc::new(MpcConfig {
            horizon: 2,
            weights: w,
            ..MpcConfig::default()
        });
        let pick = mpc.plan(&m, &sim, first, start_buffer, last, mbps, &[]);
        if (by_first[pick] - best).abs() > 1e-9 * best.abs().max(1.0) {
            mismatches += 1;
        }
    }
    let ladder = DEFAULT_LADDER_MBPS;
    let narrow = BbaConfig {
        reservoir: 5.0,
        cushion: 10.0,
    };
    let hand = [
        rate_based_select(&[2.0; 5], &ladder) == 3,
        rate_based_select(&[], &ladder) == 0,
        rate_based_select(&[1.0, 100.0], &ladder) == 3,
        bba_select(0.0, &BbaConfig::default(), 6) == 0,
        bba_select(35.0, &BbaConfig::default(), 6) == 5,
        bba_select(10.0, &narrow, 6) == 2,
    ];
    let hand_ok = hand.iter().filter(|&&h| h).count();
    Ok(verdict(
        mismatches == 0 && hand_ok == hand.len(),
        format!("{mismatches} of 100 horizon-2 decisions differ from enumeration; {hand_ok}/{} hand cases", hand.len()),
    ))
}

// ---------------------------------------------------------------- 10

fn cli(args: &[&str]) -> Result<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_rankabr"))
        .args(args)
        .env_remove("RANKABR_OUTPUT_ROOT")
        .output()
        .context("running rankabr")?;
    ensure!(
        out.status.success(),
        "rankabr {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn pipeline(root: &Path) -> Result<()> {
    let p = |rel: &str| root.join(rel).display().to_string();
    cli(&[
        "synth", "--out", &p("data"), "--seed", "3", "--train-traces", "4", "--validation-traces", "6",
        "--duration", "120", "--queries", "8", "--sessions-per-query", "8", "--users", "8",
    ])?;
    cli(&[
        "train-qoe", "--ratings", &p("data/ratings"), "--out", &p("qoe"), "--epochs", "5",
        "--batch-size", "512", "--hidden", "16", "--lin-epochs", "50",
    ])?;
    cli(&["eval-qoe", "--ratings", &p("data/ratings"), "--qoe", &p("qoe"), "--out", &p("qoe-eval")])?;
    cli(&[
        "train-abr", "--traces", &p("data/traces/train"), "--manifest", &p("data/manifest.json"),
        "--qoe", &p("qoe"), "--validation", &p("data/traces/validation"), "--out", &p("abr"),
        "--epochs", "20", "--agents", "1", "--hidden", "32", "--validate-every", "10",
    ])?;
    cli(&[
        "eval-abr", "--abr", "rate,bba,mpc,jade", "--policy", &p("abr/checkpoint"),
        "--traces", &p("data/traces/validation"), "--manifest", &p("data/manifest.json"),
        "--qoe", &p("qoe"), "--out", &p("eval"),
    ])?;
    cli(&["report", "--run-log", &p("abr/run_log.csv"), "--eval", &p("eval"), "--out", &p("report")])
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d)? {
            let path = e?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(dir)?.to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

fn determinism() -> Result<Verdict> {
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    pipeline(a.path())?;
    pipeline(b.path())?;
    let files = files_under(a.path())?;
    ensure!(files == files_under(b.path())?, "runs produced different file sets");
    // settings.json records absolute paths, which differ between the runs.
    let compared: Vec<&PathBuf> = files.iter().filter(|f| !f.ends_with("settings.json")).collect();
    let differing: Vec<String> = compared
        .iter()
        .filter(|f| std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    Ok(verdict(
        differing.is_empty(),
        format!(
            "{} output files compared, {} differ{}",
            compared.len(),
            differing.len(),
            differing.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    ))
}

// ----------------------------------------------------------------

fn report(n: usize, start: Instant, limit: Option<Duration>, r: Result<Verdict>) -> bool {
    let v = match r {
        Ok(v) => v,
        Err(e) => Verdict::Fail(format!("error: {e:#}")),
    };
    let v = match limit {
        Some(l) => within(start, l, v),
        None => v,
    };
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail, failed) = match v {
        Verdict::Pass(d) => ("PASS", d, false),
        Verdict::Fail(d) => ("FAIL", d, true),
        Verdict::Skip(d) => ("SKIP", d, false),
    };
    println!("AC-{n} {tag} [{secs:.1}s] {detail}");
    failed
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    let mut failed = 0;

    type Check = fn() -> Result<Verdict>;
    let quick: [(usize, Check, Option<Duration>); 4] = [
        (1, gradient_fidelity, min(1)),
        (2, simulator_conservation, min(2)),
        (3, rank_model_recovery, min(5)),
        (4, external_reproduction, None),
    ];
    for (n, check, limit) in quick {
        if on(n) {
            let t = Instant::now();
            failed += usize::from(report(n, t, limit, check()));
        }
    }
    if on(5) {
        let t = Instant::now();
        failed += usize::from(report(5, t, None, dual_clip_identities()));
    }
    if on(6) || on(7) {
        let t = Instant::now();
        let trained = DeskSetup::new().and_then(|desk| {
            let run = desk.train(OmegaMode::Adaptive)?;
            Ok((desk, run))
        });
        match trained {
            Ok((desk, (rows, blended))) => {
                if on(6) {
                    failed += usize::from(report(6, t, min(30), Ok(smooth_training(&rows))));
                }
                if on(7) {
                    failed += usize::from(report(7, t, min(60), policy_quality(&desk, blended)));
                }
            }
            Err(e) => {
                for n in [6, 7].into_iter().filter(|&n| on(n)) {
                    failed += usize::from(report(n, t, None, Err(anyhow::anyhow!("{e:#}"))));
                }
            }
        }
    }
    let rest: [(usize, Check); 3] = [(8, bandit_selector), (9, baseline_oracles), (10, determinism)];
    for (n, check) in rest {
        if on(n) {
            let t = Instant::now();
            failed += usize::from(report(n, t, None, check()));
        }
    }
    println!("{failed} criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
