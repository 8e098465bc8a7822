//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::TAU;
use std::process::ExitCode;
use std::time::Instant;

use astro_float::{BigFloat, Consts, RoundingMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use tapstroop::device::{estimate_velocity, DeviceConfig, DeviceSim, Trajectory};
use tapstroop::participant::{batch_seeds, run_simulated_session, ResponderModel, TapProfile};
use tapstroop::protocol::{build_schedule, Block, BlockOrder, ProtocolError, RtPolicy, SessionConfig};
use tapstroop::service::scripted::{run_scripted_session, ClientConfig, LinkConfig};
use tapstroop::service::HostConfig;
use tapstroop::signal::{
    dequantize_dac, quantize_dac, render_transient, synth_sample, Material, MaterialParams, MaterialTable,
    SynthesisConfig,
};
use tapstroop::storage::{analyze, write_log, Event, StorageError};

const P: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn big(x: f64) -> BigFloat {
    BigFloat::from_f64(x, P)
}

fn big_to_f64(x: &BigFloat, cc: &mut Consts) -> f64 {
    let s = x
        .format(astro_float::Radix::Dec, RM, cc)
        .expect("format big float");
    s.parse().unwrap_or_else(|_| panic!("unparseable big float {s}"))
}

/// A·v·exp(−B·t)·sin(2π·f·t) at 256-bit precision.
fn oracle_sample(a: f64, b: f64, f: f64, v: f64, t: f64, cc: &mut Consts) -> BigFloat {
    let env = big(b).mul(&big(t), P, RM).neg().exp(P, RM, cc);
    let two_pi = cc.pi(P, RM).mul(&big(2.0), P, RM);
    let phase = two_pi.mul(&big(f), P, RM).mul(&big(t), P, RM);
    big(a)
        .mul(&big(v), P, RM)
        .mul(&env, P, RM)
        .mul(&phase.sin(P, RM, cc), P, RM)
}

fn eq1_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE01);
    let tuples: Vec<[f64; 5]> = (0..1000)
        .map(|_| {
            [
                rng.random_range(0.0..=2.0),
                rng.random_range(0.0..=500.0),
                rng.random_range(20.0..=2000.0),
                rng.random_range(0.0..=1.0),
                rng.random_range(0.0..=0.2),
            ]
        })
        .collect();

    let start = Instant::now();
    let ours: Vec<f64> = tuples
        .iter()
        .map(|&[a, b, f, v, t]| {
            let p = MaterialParams::new(Material::Rubber, a, b, f).map_err(|e| e.to_string())?;
            synth_sample(&p, v, t).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    let elapsed = start.elapsed();

    let mut cc = Consts::new().map_err(|e| format!("{e:?}"))?;
    let tol = big(1e-9);
    let mut worst = 0.0f64;
    for (&[a, b, f, v, t], &y) in tuples.iter().zip(&ours) {
        let exact = oracle_sample(a, b, f, v, t, &mut cc);
        if exact.is_zero() {
            if y != 0.0 {
                return Err(format!("expected exact zero at {:?}, got {y}", [a, b, f, v, t]));
            }
            continue;
        }
        let rel = big(y).sub(&exact, P, RM).div(&exact, P, RM).abs();
        let rel_f = big_to_f64(&rel, &mut cc);
        worst = worst.max(rel_f);
        if rel.cmp(&tol).is_none_or(|c| c > 0) {
            return Err(format!("relative error {rel_f:e} at {:?}", [a, b, f, v, t]));
        }
    }
    if elapsed.as_secs_f64() >= 1.0 {
        return Err(format!("1000 samples took {elapsed:?}"));
    }
    Ok(format!("1000 tuples, max rel err {worst:.2e}, synth time {elapsed:?}"))
}

fn oracle_len(b: f64, cutoff: f64, rate: u32, max_duration: f64, cc: &mut Consts) -> i64 {
    let rate_b = big(f64::from(rate));
    let cap = big(max_duration).mul(&rate_b, P, RM).ceil();
    if b == 0.0 {
        return big_to_f64(&cap, cc) as i64;
    }
    let t = big(1.0)
        .div(&big(cutoff), P, RM)
        .ln(P, RM, cc)
        .div(&big(b), P, RM);
    let n = t.mul(&rate_b, P, RM).ceil();
    let n = if n.cmp(&cap).is_some_and(|c| c > 0) { cap } else { n };
    big_to_f64(&n, cc) as i64
}

fn transient_length() -> Outcome {
    let mut cc = Consts::new().map_err(|e| format!("{e:?}"))?;
    let decays = [0.0, 3.0, 10.0, 25.0, 40.0, 80.0, 150.0, 233.0, 400.0, 500.0];
    let cutoffs = [0.001, 0.01, 0.05, 0.2, 0.5];
    let rates = [10_000u32, 44_100];
    let mut checked = 0;
    let mut worked = None;
    for &b in &decays {
        for &cutoff in &cutoffs {
            for &rate in &rates {
                let cfg = SynthesisConfig {
                    envelope_cutoff: cutoff,
                    ..SynthesisConfig::default().with_sample_rate(rate)
                };
                let p = MaterialParams::new(Material::Aluminum, 1.0, b, 150.0).map_err(|e| e.to_string())?;
                let got = render_transient(&p, 1.0, &cfg).map_err(|e| e.to_string())?.len() as i64;
                let want = oracle_len(b, cutoff, rate, cfg.max_duration, &mut cc);
                if (got - want).abs() > 1 {
                    return Err(format!("B={b} eps={cutoff} rate={rate}: got {got}, oracle {want}"));
                }
                if b == 40.0 && cutoff == 0.01 && rate == 10_000 {
                    worked = Some(got);
                }
                checked += 1;
            }
        }
    }
    match worked {
        Some(1152) => Ok(format!("{checked} grid points within 1 sample, worked case 1152")),
        other => Err(format!("worked case rendered {other:?} samples")),
    }
}

fn quantizer() -> Outcome {
    for code in 0..=4095u16 {
        let back = quantize_dac(dequantize_dac(code)).map_err(|e| e.to_string())?;
        if back != code {
            return Err(format!("code {code} round-trips to {back}"));
        }
    }
    let n = 100_000;
    let mut prev = 0u16;
    for i in 0..=n {
        let x = -1.0 + 2.0 * i as f64 / n as f64;
        let c = quantize_dac(x).map_err(|e| e.to_string())?;
        if c < prev {
            return Err(format!("non-monotone at x={x}: {c} < {prev}"));
        }
        prev = c;
    }
    if quantize_dac(-1.0) != Ok(0) || quantize_dac(1.0) != Ok(4095) || quantize_dac(0.0) != Ok(2048) {
        return Err("endpoint codes wrong".into());
    }
    Ok(format!("4096 codes round-trip, {} sweep points monotone", n + 1))
}

fn velocity_recovery() -> Result<(usize, f64), String> {
    let cfg = DeviceConfig::default();
    let r = cfg.geometry.arm_length;
    let mut worst = 0.0f64;
    let mut n = 0;
    for i in 0..40 {
        // 0.1 .. 2.0 m/s at the tip
        let v = 0.1 + 1.9 * f64::from(i) / 39.0;
        for phase in [0.0, 0.37, 0.81] {
            let omega = v / r;
            let start = cfg.geometry.contact_angle - 0.05;
            let offset = phase * TAU / f64::from(cfg.counts_per_rev());
            let source = move |t_us: f64| start + offset + omega * t_us * 1e-6;
            let mut sim = DeviceSim::new(cfg, source).map_err(|e| e.to_string())?;
            let ev = sim
                .run_until_contact(2_000_000)
                .ok_or_else(|| format!("no contact at {v} m/s"))?;
            let err = (ev.velocity - v).abs() / v;
            worst = worst.max(err);
            if err > 0.02 {
                return Err(format!("v={v}: estimated {}, err {:.3}%", ev.velocity, err * 100.0));
            }
            n += 1;
        }
    }
    Ok((n, worst))
}

/// Counts of encoder output for a trajectory sampled once per tick.
fn oracle_counts(traj: &Trajectory, cfg: &DeviceConfig, ticks: u64) -> Vec<i64> {
    use tapstroop::device::AngleSource;
    let cpr = f64::from(cfg.counts_per_rev());
    (0..=ticks)
        .map(|k| {
            let t = cfg.tick_time_us(k) as f64;
            (traj.angle_at(t) * cpr / TAU).floor() as i64
        })
        .collect()
}

/// Approach-direction crossings with hysteresis, then refractory filtering.
fn oracle_events(counts: &[i64], cfg: &DeviceConfig) -> Vec<u64> {
    let threshold = (cfg.geometry.contact_angle * f64::from(cfg.counts_per_rev()) / TAU).ceil() as i64;
    let rearm = threshold - cfg.hysteresis_counts;
    let mut crossings = Vec::new();
    let mut below = counts[0] < threshold;
    for (k, &c) in counts.iter().enumerate().skip(1) {
        if below && c >= threshold {
            crossings.push(k as u64);
            below = false;
        } else if !below && c <= rearm {
            below = true;
        }
    }
    let mut kept: Vec<u64> = Vec::new();
    for k in crossings {
        let t = cfg.tick_time_us(k);
        if kept.last().is_none_or(|&last| t >= cfg.tick_time_us(last) + cfg.refractory_us) {
            kept.push(k);
        }
    }
    kept
}

fn random_trajectory(rng: &mut ChaCha8Rng, cfg: &DeviceConfig) -> Trajectory {
    let c = cfg.geometry.contact_angle;
    let count_angle = TAU / f64::from(cfg.counts_per_rev());
    let mut t = 0.0;
    let mut traj = Trajectory::new();
    traj.push(t, c - rng.random_range(0.0..0.3)).unwrap();
    for _ in 0..rng.random_range(1..12) {
        t += rng.random_range(1_000.0..120_000.0);
        // mostly near the threshold so hysteresis and refractory both matter
        let angle = if rng.random_bool(0.5) {
            c + rng.random_range(-6.0..6.0) * count_angle
        } else {
            c + rng.random_range(-0.2..0.05)
        };
        traj.push(t, angle).unwrap();
    }
    traj
}

fn kinematics() -> Outcome {
    let cfg = DeviceConfig::default();
    // eight counts over one millisecond at 10 kHz: 11 samples
    let counts: Vec<i64> = (0..=10).map(|k| (k * 8 + 5) / 10).collect();
    let worked = estimate_velocity(&counts, &cfg.geometry, 8000, 10_000).map_err(|e| e.to_string())?;
    let analytic = 8.0 / 8000.0 * TAU / 0.001 * 0.1;
    if (worked - 0.628319).abs() > 5e-7 || (worked - analytic).abs() > 1e-12 {
        return Err(format!("worked case gave {worked}"));
    }
    let (n_speeds, worst) = velocity_recovery()?;

    let mut rng = ChaCha8Rng::seed_from_u64(0xC0417AC7);
    let mut total_events = 0;
    for i in 0..1000 {
        let traj = random_trajectory(&mut rng, &cfg);
        let end = traj.end_time_us() as u64 + 20_000;
        let ticks = end * u64::from(cfg.sample_rate) / 1_000_000;
        let mut sim = DeviceSim::new(cfg, traj.clone()).map_err(|e| e.to_string())?;
        let mut got = Vec::new();
        for _ in 0..ticks {
            if let Some(ev) = sim.step() {
                got.push(ev.tick_index);
            }
        }
        let want = oracle_events(&oracle_counts(&traj, &cfg, ticks), &cfg);
        if got != want {
            return Err(format!("trajectory {i}: events at ticks {got:?}, brute force {want:?}"));
        }
        if sim.encoder().invalid_transitions() != 0 {
            return Err(format!("trajectory {i}: encoder saw invalid transitions"));
        }
        total_events += got.len();
    }
    Ok(format!(
        "worked case {worked:.6} m/s, {n_speeds} constant-rate runs max err {:.3}%, 1000 trajectories / {total_events} events match",
        worst * 100.0
    ))
}

fn schedule_invariants() -> Outcome {
    for seed in 0..1000u64 {
        let order = if seed % 2 == 0 {
            BlockOrder::PracticeCongruentIncongruent
        } else {
            BlockOrder::PracticeIncongruentCongruent
        };
        let cfg = SessionConfig {
            seed,
            block_order: order,
            ..SessionConfig::default()
        };
        let s = build_schedule(&cfg).map_err(|e| e.to_string())?;
        if s != build_schedule(&cfg).map_err(|e| e.to_string())? {
            return Err(format!("seed {seed} not deterministic"));
        }
        if s.len() != 18 {
            return Err(format!("seed {seed}: {} trials", s.len()));
        }
        let blocks: Vec<Block> = s.trials.chunks(6).map(|c| c[0].block).collect();
        if blocks != order.blocks() {
            return Err(format!("seed {seed}: block order {blocks:?}"));
        }
        for block in [Block::Practice, Block::Congruent, Block::Incongruent] {
            let trials: Vec<_> = s.block(block).collect();
            let rubber = trials.iter().filter(|t| t.visual_material == Material::Rubber).count();
            if trials.len() != 6 || rubber != 3 {
                return Err(format!("seed {seed} {block:?}: {rubber}/{} rubber", trials.len()));
            }
            for t in trials {
                let ok = match block {
                    Block::Practice => t.tactile_material.is_none(),
                    Block::Congruent => t.tactile_material == Some(t.visual_material),
                    Block::Incongruent => {
                        t.tactile_material.is_some() && t.tactile_material != Some(t.visual_material)
                    }
                };
                if !ok {
                    return Err(format!("seed {seed}: trial {} violates {block:?} pairing", t.index));
                }
            }
        }
    }
    Ok("1000 seeds balanced, paired and deterministic".into())
}

fn batch_mean_delta(delta_ms: f64, base_seed: u64, n: u64) -> Result<f64, String> {
    let deltas: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (session_seed, model_seed) = batch_seeds(base_seed, i);
            let model = ResponderModel {
                stroop_delta_ms: delta_ms,
                seed: model_seed,
                ..ResponderModel::default()
            };
            let run = run_simulated_session(
                &SessionConfig::with_seed(session_seed),
                &model,
                &TapProfile::default(),
                &MaterialTable::placeholder(),
                &DeviceConfig::default(),
            )
            .map_err(|e| e.to_string())?;
            run.summary.map(|s| s.stroop_delta_ms).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    Ok(deltas.iter().sum::<f64>() / deltas.len() as f64)
}

fn stroop_recovery() -> Outcome {
    let start = Instant::now();
    let effect = batch_mean_delta(60.0, 1000, 200)?;
    let null = batch_mean_delta(0.0, 5000, 200)?;
    let elapsed = start.elapsed();
    let msg = format!("mean delta {effect:.2} ms, null {null:.2} ms, {elapsed:.2?}");
    if !(54.0..=66.0).contains(&effect) || !(-6.0..=6.0).contains(&null) {
        return Err(msg);
    }
    if elapsed.as_secs_f64() >= 30.0 {
        return Err(msg);
    }
    Ok(msg)
}

fn replay_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4E91A7);
    let mut partial_checked = 0;
    for i in 0..100 {
        let config = SessionConfig {
            seed: rng.random(),
            trials_per_condition: 2 * rng.random_range(1..=5),
            block_order: if rng.random_bool(0.5) {
                BlockOrder::PracticeCongruentIncongruent
            } else {
                BlockOrder::PracticeIncongruentCongruent
            },
            rt_policy: if rng.random_bool(0.5) {
                RtPolicy::CorrectOnly
            } else {
                RtPolicy::AllResponses
            },
            ..SessionConfig::default()
        };
        let model = ResponderModel {
            base_rt_ms: rng.random_range(300.0..800.0),
            rt_sigma_ms: rng.random_range(10.0..150.0),
            stroop_delta_ms: rng.random_range(0.0..150.0),
            p_error_congruent: rng.random_range(0.0..0.2),
            p_error_incongruent: rng.random_range(0.0..0.3),
            seed: rng.random(),
        };
        let run = run_simulated_session(
            &config,
            &model,
            &TapProfile::default(),
            &MaterialTable::placeholder(),
            &DeviceConfig::default(),
        )
        .map_err(|e| e.to_string())?;
        let Ok(live) = run.summary else {
            // every trial in a condition wrong: nothing to compare
            continue;
        };
        let mut buf = Vec::new();
        write_log(run.log.records(), &mut buf).map_err(|e| e.to_string())?;
        let replayed = analyze(buf.as_slice()).map_err(|e| e.to_string())?;
        if replayed != live {
            return Err(format!("session {i}: live {live:?} vs replayed {replayed:?}"));
        }

        let cut = rng.random_range(1..run.log.len());
        let mut buf = Vec::new();
        write_log(run.log.truncated(cut).records(), &mut buf).map_err(|e| e.to_string())?;
        match analyze(buf.as_slice()) {
            Ok(s) if s.partial => partial_checked += 1,
            Ok(_) => return Err(format!("session {i}: log cut at {cut} not flagged partial")),
            Err(StorageError::Protocol(ProtocolError::InsufficientData(_))) => {}
            Err(e) => return Err(format!("session {i}: truncated log failed with {e}")),
        }
    }
    Ok(format!("100 sessions replay exactly, {partial_checked} truncated summaries flagged partial"))
}

fn jitter_immunity() -> Outcome {
    let mut links: Vec<LinkConfig> = [0, 50_000, 200_000].into_iter().map(LinkConfig::fixed).collect();
    links.extend((0..20).map(|seed| LinkConfig::jitter(seed, 200_000)));
    let mut compared = 0;
    for (i, link) in links.into_iter().enumerate() {
        let client = ClientConfig {
            seed: i as u64,
            model: ResponderModel {
                seed: 77 + i as u64,
                ..ResponderModel::default()
            },
            ..ClientConfig::default()
        };
        let run = run_scripted_session(&format!("s{i}"), HostConfig::default(), client, link)
            .map_err(|e| e.to_string())?;
        if !run.finished {
            return Err(format!("link {i}: session did not finish"));
        }
        let logged: Vec<(usize, f64)> = run
            .server_log
            .records()
            .iter()
            .filter_map(|r| match r.event {
                Event::TrialResult { trial, rt_ms, .. } => Some((trial, rt_ms)),
                _ => None,
            })
            .collect();
        if logged.len() != 18 || logged.len() != run.client.local_rts.len() {
            return Err(format!(
                "link {i}: {} logged vs {} client RTs",
                logged.len(),
                run.client.local_rts.len()
            ));
        }
        for (&(ta, a), &(tb, b)) in logged.iter().zip(&run.client.local_rts) {
            if ta != tb || a.to_bits() != b.to_bits() {
                return Err(format!("link {i}: trial {ta} logged {a} ms, client {b} ms"));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} RTs bit-identical across 23 links"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("transient fidelity", eq1_fidelity),
        ("transient length", transient_length),
        ("quantizer", quantizer),
        ("kinematics", kinematics),
        ("schedule invariants", schedule_invariants),
        ("stroop recovery", stroop_recovery),
        ("replay identity", replay_identity),
        ("jitter immunity", jitter_immunity),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
