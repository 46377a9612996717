use proptest::prelude::*;
use rankabr::baselines::plan_step;
use rankabr::data::{ChunkEncoding, NetworkTrace, TraceSample, VideoManifest};
use rankabr::sim::{rollout, PlaybackContext, SimConfig, Simulator, StepOutcome};

fn manifest(chunk_duration: f64, sizes: &[Vec<u64>]) -> VideoManifest {
    let levels = sizes[0].len();
    let ladder: Vec<f64> = (0..levels).map(|l| 0.5 * (l + 1) as f64).collect();
    let chunks = sizes
        .iter()
        .map(|s| ChunkEncoding {
            sizes_bytes: s.clone(),
            vmaf: (0..levels).map(|l| 20.0 + 10.0 * l as f64).collect(),
        })
        .collect();
    VideoManifest::new(chunk_duration, ladder, chunks).unwrap()
}

fn flat(mbps: f64) -> NetworkTrace {
    NetworkTrace::from_uniform("flat", 1.0, &[mbps, mbps]).unwrap()
}

fn cfg(rtt: f64, cap: f64, wraps: bool) -> SimConfig {
    SimConfig {
        buffer_cap: cap,
        per_chunk_rtt: rtt,
        drain_granularity: 0.5,
        trace_wraps: wraps,
    }
}

/// Bandwidth as an explicit function of absolute time over a non-wrapping
/// trace: cumulative delivered bits and its inverse.
struct Channel {
    starts: Vec<f64>,
    rates: Vec<f64>,
}

impl Channel {
    fn new(segments: &[(f64, f64)]) -> Self {
        let mut starts = Vec::new();
        let mut t = 0.0;
        for &(d, _) in segments {
            starts.push(t);
            t += d;
        }
        Self {
            starts,
            rates: segments.iter().map(|s| s.1 * 1e6).collect(),
        }
    }

    fn delivered(&self, t: f64) -> f64 {
        let mut bits = 0.0;
        for i in 0..self.rates.len() {
            let end = self.starts.get(i + 1).copied().unwrap_or(f64::INFINITY);
            if t > self.starts[i] {
                bits += self.rates[i] * (t.min(end) - self.starts[i]);
            }
        }
        bits
    }

    fn time_of(&self, bits: f64) -> f64 {
        for i in 0..self.rates.len() {
            let end = self.starts.get(i + 1).copied().unwrap_or(f64::INFINITY);
            let at_end = self.delivered(end);
            if bits <= at_end || end.is_infinite() {
                return self.starts[i] + (bits - self.delivered(self.starts[i])) / self.rates[i];
            }
        }
        unreachable!()
    }
}

/// Expected outcomes with the channel evaluated in absolute time.
fn oracle(ch: &Channel, m: &VideoManifest, actions: &[usize], rtt: f64, cap: f64) -> Vec<(f64, f64, f64, f64)> {
    let mut now = 0.0;
    let mut buffer = 0.0;
    let mut out = Vec::new();
    for (c, &a) in actions.iter().enumerate() {
        let bits = m.size(c, a) as f64 * 8.0;
        let done = ch.time_of(ch.delivered(now) + bits);
        let dl = done - now + rtt;
        let rebuf = if dl > buffer { dl - buffer } else { 0.0 };
        let mut next = if buffer > dl { buffer - dl } else { 0.0 } + m.chunk_duration();
        let sleep = if next > cap { next - cap } else { 0.0 };
        next -= sleep;
        now += dl + sleep;
        buffer = next;
        out.push((dl, rebuf, sleep, buffer));
    }
    out
}

fn play(m: &VideoManifest, trace: &NetworkTrace, c: SimConfig, actions: &[usize]) -> Vec<StepOutcome> {
    let mut sim = Simulator::reset(m, trace, c, 0.0).unwrap();
    actions.iter().map(|&a| sim.step(a).unwrap()).collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-7 * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn four_megabit_chunk_from_ten_second_buffer() {
    // Near-instant tiny chunks fill the buffer to the 10 s cap; the idle time
    // carries the cursor into the 1 Mbps region.
    let trace = NetworkTrace::new(
        "steps",
        vec![
            TraceSample { time: 0.0, mbps: 1e6 },
            TraceSample { time: 0.5, mbps: 1.0 },
            TraceSample { time: 1.0, mbps: 1.0 },
        ],
    )
    .unwrap();
    let m = manifest(4.0, &vec![vec![1, 500_000]; 4]);
    let out = play(&m, &trace, cfg(0.0, 10.0, false), &[0, 0, 0, 1]);
    assert!(close(out[3].buffer_before, 10.0));
    assert!(close(out[3].download_time, 4.0));
    assert_eq!(out[3].rebuffer, 0.0);
    assert!(close(out[3].buffer_after, 10.0));
}

#[test]
fn four_megabit_chunk_from_two_second_buffer() {
    // A 2 s buffer is below one 4 s chunk, so it is only reachable as a
    // planning state; planning shares the step arithmetic.
    let sim = cfg(0.0, 60.0, true);
    let step = |buffer: f64| plan_step(buffer, 500_000, 1.0, 4.0, &sim);
    assert_eq!(step(10.0), (4.0, 0.0, 10.0));
    assert_eq!(step(2.0), (4.0, 2.0, 4.0));
}

#[test]
fn first_chunk_stalls_for_its_whole_download() {
    let m = manifest(4.0, &[vec![500_000, 600_000]]);
    let out = play(&m, &flat(1.0), cfg(0.0, 60.0, true), &[0]);
    assert!(close(out[0].download_time, 4.0));
    assert!(close(out[0].rebuffer, 4.0));
    assert!(close(out[0].buffer_after, 4.0));
}

#[test]
fn lowest_bitrate_on_fast_trace_never_stalls_after_start() {
    let m = rankabr::synth::default_manifest(1);
    let trace = flat(50.0);
    let out = play(&m, &trace, SimConfig::default(), &vec![0; m.num_chunks()]);
    assert!(out[1..].iter().all(|s| s.rebuffer == 0.0));
    assert!(out[0].rebuffer > 0.0);
}

#[test]
fn constant_link_reports_its_rate() {
    let m = manifest(4.0, &vec![vec![250_000, 1_000_000]; 6]);
    let mut policy = |_: &PlaybackContext<'_>| -> Result<usize, String> { Ok(1) };
    let r = rollout(&mut policy, &m, &flat(2.0), cfg(0.0, 60.0, true), 0.0, "s").unwrap();
    for s in &r.steps {
        assert!(close(s.throughput_mbps(), 2.0));
    }
    assert_eq!(r.session.vmaf.len(), 6);
}

#[test]
fn finished_episode_rejects_steps() {
    let m = manifest(4.0, &[vec![1, 2]]);
    let trace = flat(1.0);
    let mut sim = Simulator::reset(&m, &trace, SimConfig::default(), 0.0).unwrap();
    sim.step(1).unwrap();
    assert!(sim.is_done());
    assert!(sim.step(0).is_err());
}

#[test]
fn invalid_action_and_config_are_rejected() {
    let m = manifest(4.0, &[vec![1, 2]]);
    let trace = flat(1.0);
    let mut sim = Simulator::reset(&m, &trace, SimConfig::default(), 0.0).unwrap();
    assert!(sim.step(2).is_err());
    assert!(Simulator::reset(&m, &trace, cfg(0.0, 3.0, true), 0.0).is_err());
    assert!(Simulator::reset(&m, &trace, cfg(-1.0, 60.0, true), 0.0).is_err());
    assert!(Simulator::reset(&m, &trace, cfg(0.0, 60.0, false), 5.0).is_err());
}

fn segments() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.5f64..8.0, 0.2f64..6.0), 1..=3)
}

fn segment_trace(segs: &[(f64, f64)]) -> NetworkTrace {
    // The final sample repeats the previous interval; a trailing copy of the
    // last rate makes every listed segment keep its own duration.
    let mut samples = Vec::new();
    let mut t = 0.0;
    for &(d, r) in segs {
        samples.push(TraceSample { time: t, mbps: r });
        t += d;
    }
    let last = segs.last().unwrap();
    samples.push(TraceSample { time: t, mbps: last.1 });
    NetworkTrace::new("segs", samples).unwrap()
}

fn episode() -> impl Strategy<Value = (Vec<Vec<u64>>, Vec<usize>)> {
    prop::collection::vec((20_000u64..400_000, 0u64..400_000), 1..12).prop_flat_map(|chunks| {
        let n = chunks.len();
        let sizes: Vec<Vec<u64>> = chunks.iter().map(|&(a, b)| vec![a, a + b]).collect();
        (Just(sizes), prop::collection::vec(0usize..2, n))
    })
}

proptest! {
    #[test]
    fn matches_closed_form_channel(segs in segments(), (sizes, actions) in episode(),
                                   rtt in 0.0f64..0.3, cap in 6.0f64..20.0) {
        let m = manifest(4.0, &sizes);
        let trace = segment_trace(&segs);
        let got = play(&m, &trace, cfg(rtt, cap, false), &actions);
        // The trailing copy runs forever at the last rate, like the channel.
        let want = oracle(&Channel::new(&segs), &m, &actions, rtt, cap);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!(close(g.download_time, w.0), "dl {} vs {}", g.download_time, w.0);
            prop_assert!(close(g.rebuffer, w.1));
            prop_assert!(close(g.sleep_time, w.2));
            prop_assert!(close(g.buffer_after, w.3));
        }
    }

    #[test]
    fn wrapping_equals_unrolled_trace(rates in prop::collection::vec(0.3f64..4.0, 2..6),
                                      (sizes, actions) in episode(), offset in 0.0f64..10.0) {
        let m = manifest(4.0, &sizes);
        let looped = NetworkTrace::from_uniform("loop", 1.0, &rates).unwrap();
        let unrolled: Vec<f64> = rates.iter().copied().cycle().take(rates.len() * 400).collect();
        let long = NetworkTrace::from_uniform("long", 1.0, &unrolled).unwrap();
        let off = offset % looped.span();
        let mut a = Simulator::reset(&m, &looped, cfg(0.05, 20.0, true), off).unwrap();
        let mut b = Simulator::reset(&m, &long, cfg(0.05, 20.0, false), off).unwrap();
        for &act in &actions {
            let (x, y) = (a.step(act).unwrap(), b.step(act).unwrap());
            prop_assert!(close(x.download_time, y.download_time));
            prop_assert!(close(x.buffer_after, y.buffer_after));
        }
    }

    #[test]
    fn step_invariants(rates in prop::collection::vec(0.1f64..8.0, 2..30),
                       (sizes, actions) in episode(), rtt in 0.0f64..0.5) {
        let m = manifest(4.0, &sizes);
        let trace = NetworkTrace::from_uniform("t", 1.0, &rates).unwrap();
        let c = cfg(rtt, 12.0, true);
        let mut sim = Simulator::reset(&m, &trace, c, 0.0).unwrap();
        let mut clock = 0.0;
        for &a in &actions {
            let s = sim.step(a).unwrap();
            prop_assert!(s.buffer_after >= 0.0 && s.buffer_after <= c.buffer_cap + 1e-9);
            prop_assert!(s.rebuffer >= 0.0 && s.sleep_time >= 0.0);
            prop_assert!(s.download_time >= rtt);
            prop_assert!(close(s.rebuffer, (s.download_time - s.buffer_before).max(0.0)));
            prop_assert!(close(
                s.buffer_after + s.sleep_time,
                (s.buffer_before - s.download_time).max(0.0) + 4.0
            ));
            clock += s.download_time + s.sleep_time;
            prop_assert!(close(sim.state().wall_clock, clock));
        }
    }

    #[test]
    fn slower_link_never_helps(rates in prop::collection::vec(0.2f64..6.0, 2..20),
                               (sizes, actions) in episode(), factor in 0.2f64..1.0) {
        let m = manifest(4.0, &sizes);
        let fast = NetworkTrace::from_uniform("f", 1.0, &rates).unwrap();
        let slow_rates: Vec<f64> = rates.iter().map(|r| r * factor).collect();
        let slow = NetworkTrace::from_uniform("s", 1.0, &slow_rates).unwrap();
        // A single chunk from an empty buffer isolates the bandwidth effect.
        let c = cfg(0.0, 60.0, true);
        let f = play(&m, &fast, c, &actions[..1]);
        let s = play(&m, &slow, c, &actions[..1]);
        prop_assert!(s[0].download_time >= f[0].download_time - 1e-9);
        prop_assert!(s[0].rebuffer >= f[0].rebuffer - 1e-9);
    }

    #[test]
    fn replay_is_deterministic(rates in prop::collection::vec(0.2f64..6.0, 2..20),
                               (sizes, actions) in episode(), offset in 0.0f64..30.0) {
        let m = manifest(4.0, &sizes);
        let trace = NetworkTrace::from_uniform("t", 1.0, &rates).unwrap();
        let run = || {
            let mut sim = Simulator::reset(&m, &trace, SimConfig::default(), offset).unwrap();
            actions.iter().map(|&a| sim.step(a).unwrap()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn planning_matches_simulation_on_constant_link(mbps in 0.2f64..8.0, (sizes, actions) in episode(),
                                                    rtt in 0.0f64..0.3) {
        let m = manifest(4.0, &sizes);
        let c = cfg(rtt, 15.0, true);
        for s in play(&m, &flat(mbps), c, &actions) {
            let (dl, rebuf, after) = plan_step(s.buffer_before, s.chunk_bytes, mbps, 4.0, &c);
            prop_assert!(close(dl, s.download_time));
            prop_assert!(close(rebuf, s.rebuffer));
            prop_assert!(close(after, s.buffer_after));
        }
    }
}
