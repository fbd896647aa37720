//! Acceptance criteria 1 to 12. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line even when an earlier one fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use uwcsma::acoustics::{
    received_snr, source_level, spreading_loss, thorp_absorption, PUBLISHED_TL2_9KHZ_1KM,
};
use uwcsma::chirp::{
    classify_collision, detect_preambles, detection_curve, gen_chirp, ChirpSpec, DetectionCurveConfig,
    DetectionReport,
};
use uwcsma::experiments::output::render_table;
use uwcsma::experiments::runner::ExperimentTable;
use uwcsma::experiments::{run_experiment, simulate, Family, ScenarioConfig, Summary};
use uwcsma::mac::{
    is_legal, receiver_step, sender_step, MacAction, MacConfig, MacEvent, MacMetric, MacNodeState, ModePolicy,
    Packet, Phase, ReceptionOutcome, Response, TimerKind,
};
use uwcsma::medium::{resolve_reception, OfflineArrival};
use uwcsma::phy::{compute_esnr, raw_rate, PhyParams, ESNR_CAP_DB};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn c1_link_budget() -> Outcome {
    let sl = source_level(2.0).map_err(|e| e.to_string())?;
    check(close(sl, 173.78, 0.01), format!("source_level(2 W) = {sl}"))?;
    let tl1 = spreading_loss(1000.0).map_err(|e| e.to_string())?;
    check(tl1 == 60.0, format!("spreading_loss(1000 m) = {tl1}"))?;
    let a = received_snr(173.77, 68.43, 100.0);
    let b = received_snr(173.77, 68.43, 80.0);
    check(close(a, 5.34, 0.01) && close(b, 25.34, 0.01), format!("snr = {a}, {b}"))?;
    Ok(format!("SL {sl:.4}, TL1 {tl1}, SNR {a:.2}/{b:.2}"))
}

fn thorp_by_hand(f: f64) -> f64 {
    let f2 = f * f;
    0.11 * f2 / (1.0 + f2) + 44.0 * f2 / (4100.0 + f2) + 2.75e-4 * f2 + 0.003
}

fn c2_thorp() -> Outcome {
    let a1 = thorp_absorption(1.0).map_err(|e| e.to_string())?;
    let a9 = thorp_absorption(9.0).map_err(|e| e.to_string())?;
    check(close(a1, thorp_by_hand(1.0), 1e-3) && close(a1, 0.0690, 1e-3), format!("a(1) = {a1}"))?;
    check(close(a9, thorp_by_hand(9.0), 1e-3) && close(a9, 0.9864, 1e-3), format!("a(9) = {a9}"))?;
    // over 1 km the formula gives under 1 dB, far from the published 8.43 dB
    check((a9 - PUBLISHED_TL2_9KHZ_1KM).abs() > 7.0, "absorption unexpectedly matches 8.43 dB")?;
    Ok(format!("a(1) {a1:.4}, a(9) {a9:.4} dB/km; published TL2 8.43 differs by {:.2} dB", PUBLISHED_TL2_9KHZ_1KM - a9))
}

fn c3_mode_table() -> Outcome {
    let phy = PhyParams::default();
    let ratios: Vec<f64> = phy.modes.iter().map(|m| m.data_rate / raw_rate(m, &phy.timing)).collect();
    check(ratios.len() == 6, "six modes expected")?;
    for (i, r) in ratios.iter().enumerate() {
        check((0.975..=0.99).contains(r), format!("mode {} ratio {r}", i + 1))?;
    }
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    check(hi - lo < 0.01, format!("spread {}", hi - lo))?;
    Ok(format!("ratios in [{lo:.4}, {hi:.4}]"))
}

fn c4_timing() -> Outcome {
    let d = PhyParams::default().packet_duration(1, 400).map_err(|e| e.to_string())?;
    check(close(d, 5.36, 0.01), format!("packet_duration = {d}"))?;
    Ok(format!("mode 1, 400 B: {d:.4} s"))
}

fn c5_esnr() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    let sigma = (0.1f64 / 2.0).sqrt();
    let mut h = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let hk = Complex64::from_polar(1.0, phase);
        let sym = [1.0, -1.0][rng.random_range(0..2)];
        let sk = Complex64::new(sym, [1.0, -1.0][rng.random_range(0..2)]) / 2f64.sqrt();
        let nr: f64 = StandardNormal.sample(&mut rng);
        let ni: f64 = StandardNormal.sample(&mut rng);
        h.push(hk);
        s.push(sk);
        z.push(hk * sk + Complex64::new(nr, ni) * sigma);
    }
    let e = compute_esnr(&h, &z, &s, ESNR_CAP_DB).map_err(|e| e.to_string())?;
    check(close(e, 10.0, 0.5), format!("esnr = {e}"))?;
    let g = Complex64::new(-3.7, 1.9);
    let hs: Vec<_> = h.iter().map(|x| x * g).collect();
    let zs: Vec<_> = z.iter().map(|x| x * g).collect();
    let e2 = compute_esnr(&hs, &zs, &s, ESNR_CAP_DB).map_err(|e| e.to_string())?;
    check((e - e2).abs() <= 1e-12 * e.abs().max(1.0), format!("scaled esnr {e2} != {e}"))?;
    Ok(format!("esnr {e:.3} dB, joint scaling error {:.1e}", (e - e2).abs()))
}

fn c6_chirp_detection() -> Outcome {
    let mut cfg = DetectionCurveConfig::default();
    cfg.trials = 10_000;
    cfg.snr_grid = (-20..=10).step_by(2).map(f64::from).collect();
    let curve = detection_curve(&cfg).map_err(|e| e.to_string())?;
    let at10 = curve.last().expect("nonempty grid");
    check(at10.snr_db == 10.0 && at10.probability >= 0.999, format!("p(+10 dB) = {}", at10.probability))?;
    for w in curve.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let var = |p: f64, n: usize| p * (1.0 - p) / n as f64;
        let guard = 2.0 * (var(a.probability, a.trials) + var(b.probability, b.trials)).sqrt();
        check(
            b.probability + guard >= a.probability,
            format!("not monotone: p({}) = {} > p({}) = {}", a.snr_db, a.probability, b.snr_db, b.probability),
        )?;
    }
    cfg.snr_grid = vec![-9.0];
    let p9 = detection_curve(&cfg).map_err(|e| e.to_string())?[0].probability;
    check(p9 >= 0.85, format!("p(-9 dB) = {p9}"))?;
    Ok(format!("p(+10) {:.4}, p(-9) {p9:.4}, monotone over {} points", at10.probability, curve.len()))
}

fn c7_collision_predicate() -> Outcome {
    let spec = ChirpSpec::default();
    let fs = spec.sample_rate;
    let tp = spec.duration;
    let template = gen_chirp(&spec).map_err(|e| e.to_string())?;
    let l = template.len();
    let dur = 5.36;
    let offsets = [0.0, 0.01, 0.039, 0.040, 0.041, 0.5, 2.0, 5.0, 5.3599, 5.36, 5.3601, 6.0];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for &off in &offsets {
        let shift = (off * fs).round() as usize;
        // the predicate itself on hand-built peak positions
        let report = DetectionReport {
            peak_times: vec![1000, 1000 + shift],
            peak_scores: vec![1.0, 1.0],
            collision: false,
        };
        check(
            classify_collision(&report, dur, fs) == (off < dur),
            format!("predicate wrong at offset {off}"),
        )?;

        // both preambles on the air, then the detector's own peaks
        let start = 2 * l;
        let mut sig: Vec<f64> = (0..start + shift + 3 * l)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.05 * z
            })
            .collect();
        for (k, v) in template.iter().enumerate() {
            sig[start + k] += v;
            sig[start + shift + k] += v;
        }
        let detected = detect_preambles(&sig, &template, 0.13)
            .map_err(|e| e.to_string())?
            .classified(dur, fs);
        let detector_collision = detected.collision;

        let arrivals = [
            OfflineArrival { sender: 1, start: 0.0, duration: dur },
            OfflineArrival { sender: 2, start: shift as f64 / fs, duration: dur },
        ];
        let out = resolve_reception(&arrivals, &[], tp, false, |_| true, |_| Some(20.0));
        let medium_collision = matches!(out[0], ReceptionOutcome::CollisionDetected { .. });
        check(
            medium_collision == detector_collision,
            format!(
                "offset {off}: medium {:?} vs detector peaks {:?} (collision {detector_collision})",
                out[0], detected.peak_times
            ),
        )?;
        if off >= tp && off < dur {
            check(medium_collision, format!("offset {off}: expected a collision"))?;
        }
    }
    Ok(format!("{} offsets agree", offsets.len()))
}

fn mac_cfg(policy: ModePolicy, cw_max: u32) -> MacConfig {
    let phy = PhyParams::default();
    let mut data_durations = [0.0; 7];
    for m in 1..=6u8 {
        data_durations[m as usize] = phy.packet_duration(m, 400).expect("valid mode");
    }
    MacConfig {
        cw_min: 4,
        cw_max,
        slot: 0.47,
        max_retries: 3,
        policy,
        cross_layer: true,
        thresholds: phy.thresholds.clone(),
        data_durations,
        t_control: 0.5,
        t_ack: 0.5,
        t_other: 0.1,
        max_delay: 0.47,
        timeout_margin: 0.1,
        pause_duration: 53.6,
        initial_mode: 3,
    }
}

fn packet(id: u64) -> Packet {
    Packet { id, created: 0.0, bytes: 400 }
}

/// Drive a fresh sender into `phase` holding one queued packet.
fn state_in(phase: Phase, cfg: &MacConfig, seed: u64) -> (MacNodeState, ChaCha8Rng) {
    for s in 0..1000 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s));
        let mut st = MacNodeState::new(cfg, 0.3);
        if phase == Phase::Idle {
            return (st, rng);
        }
        sender_step(&mut st, cfg, MacEvent::PacketReady(packet(0)), 0.0, &mut rng).expect("legal");
        match phase {
            Phase::Backoff | Phase::Deferring => {
                if st.phase != Phase::Backoff {
                    continue;
                }
                if phase == Phase::Deferring {
                    sender_step(&mut st, cfg, MacEvent::ChannelBusy { busy: 30.0 }, 0.1, &mut rng).expect("legal");
                }
                return (st, rng);
            }
            _ => {}
        }
        if st.phase == Phase::Backoff {
            sender_step(&mut st, cfg, MacEvent::BackoffZero, 1.0, &mut rng).expect("legal");
        }
        if phase == Phase::Transmitting {
            return (st, rng);
        }
        sender_step(&mut st, cfg, MacEvent::TxDone, 7.0, &mut rng).expect("legal");
        if phase == Phase::AwaitingAck {
            return (st, rng);
        }
        sender_step(&mut st, cfg, MacEvent::Ack { esnr: -5.0 }, 8.0, &mut rng).expect("legal");
        if st.phase == phase {
            return (st, rng);
        }
    }
    panic!("could not reach {phase}");
}

fn has_backoff_timer(actions: &[MacAction]) -> bool {
    actions.iter().any(|a| matches!(a, MacAction::SetTimer { kind: TimerKind::Backoff, .. }))
}

fn c8_mac() -> Outcome {
    let cfg = mac_cfg(ModePolicy::Adaptive, 16);
    let events = [
        MacEvent::PacketReady(packet(9)),
        MacEvent::ChannelBusy { busy: 2.0 },
        MacEvent::NavExpired,
        MacEvent::BackoffZero,
        MacEvent::TxDone,
        MacEvent::Ack { esnr: 10.0 },
        MacEvent::Nack1,
        MacEvent::Nack2,
        MacEvent::Timeout,
        MacEvent::PauseExpired,
    ];
    let expected_legal = |p: Phase, e: &MacEvent| match e {
        MacEvent::PacketReady(_) | MacEvent::ChannelBusy { .. } | MacEvent::NavExpired => true,
        MacEvent::BackoffZero => p == Phase::Backoff,
        MacEvent::TxDone => p == Phase::Transmitting,
        MacEvent::Ack { .. } | MacEvent::Nack1 | MacEvent::Nack2 | MacEvent::Timeout => p == Phase::AwaitingAck,
        MacEvent::PauseExpired => p == Phase::Paused,
    };
    let mut cells = 0;
    for phase in Phase::ALL {
        for ev in events {
            let (mut st, mut rng) = state_in(phase, &cfg, 11);
            check(st.phase == phase, format!("setup reached {} not {phase}", st.phase))?;
            let legal = expected_legal(phase, &ev);
            check(is_legal(phase, &ev) == legal, format!("is_legal({phase}, {})", ev.name()))?;
            let res = sender_step(&mut st, &cfg, ev, 9.0, &mut rng);
            check(res.is_ok() == legal, format!("({phase}, {}) -> {res:?}", ev.name()))?;
            cells += 1;
        }
    }

    // case I: a header heard during backoff freezes it and defers
    let (mut st, mut rng) = state_in(Phase::Backoff, &cfg, 3);
    let before = st.backoff_remaining;
    let acts = sender_step(&mut st, &cfg, MacEvent::ChannelBusy { busy: 5.0 }, 0.0, &mut rng).map_err(|e| e.to_string())?;
    check(st.phase == Phase::Deferring && st.backoff_remaining == before, "busy channel did not freeze backoff")?;
    check(acts.iter().any(|a| matches!(a, MacAction::CancelTimer { kind: TimerKind::Backoff })), "backoff timer kept")?;

    // case II: NACK1 retransmits at once, one mode lower, never with backoff
    for seed in 0..200 {
        let (mut st, mut rng) = state_in(Phase::AwaitingAck, &cfg, seed);
        let mode = st.current_mode;
        let cw = st.cw;
        let acts = sender_step(&mut st, &cfg, MacEvent::Nack1, 9.0, &mut rng).map_err(|e| e.to_string())?;
        check(!has_backoff_timer(&acts), "NACK1 armed a backoff timer")?;
        check(st.phase == Phase::Transmitting, format!("NACK1 left phase {}", st.phase))?;
        check(st.current_mode == mode.saturating_sub(1).max(1) && st.cw == cw, "NACK1 mode or cw wrong")?;
    }

    // case III: NACK2 and timeout double cw up to cw_max, the 4th failure drops
    for fail in [MacEvent::Nack2, MacEvent::Timeout] {
        let (mut st, mut rng) = state_in(Phase::AwaitingAck, &cfg, 5);
        let mut cws = vec![st.cw];
        let mut t = 9.0;
        for attempt in 1..=4 {
            let acts = sender_step(&mut st, &cfg, fail, t, &mut rng).map_err(|e| e.to_string())?;
            let dropped = acts.iter().any(|a| matches!(a, MacAction::DropPacket { .. }));
            if attempt == 4 {
                check(dropped && st.queue.is_empty() && st.phase == Phase::Idle, "4th failure did not drop")?;
                check(st.cw == cfg.cw_min && st.retries == 0, "state not reset after drop")?;
                break;
            }
            check(!dropped, format!("dropped after {attempt} failures"))?;
            check(
                acts.iter().any(|a| matches!(a, MacAction::RecordMetric(MacMetric::Retransmission))),
                "no retransmission recorded",
            )?;
            cws.push(st.cw);
            if st.phase == Phase::Backoff {
                sender_step(&mut st, &cfg, MacEvent::BackoffZero, t + 5.0, &mut rng).map_err(|e| e.to_string())?;
            }
            sender_step(&mut st, &cfg, MacEvent::TxDone, t + 12.0, &mut rng).map_err(|e| e.to_string())?;
            t += 20.0;
        }
        check(cws == [4, 8, 16, 16], format!("{} cw sequence {cws:?}", fail.name()))?;
    }

    // receiver states I to IV
    let r = |o: ReceptionOutcome| receiver_step(&o, 3, true);
    check(r(ReceptionOutcome::Decoded { esnr: 7.0 }) == Some(Response::Ack { to: 3, esnr: 7.0 }), "state I")?;
    check(r(ReceptionOutcome::PreambleOnly) == Some(Response::Nack1 { to: 3 }), "state II")?;
    check(
        r(ReceptionOutcome::CollisionDetected { senders: vec![3, 4] }) == Some(Response::Nack2 { senders: vec![3, 4] }),
        "state III",
    )?;
    check(r(ReceptionOutcome::Missed).is_none(), "state IV")?;
    Ok(format!("{cells} (phase, event) cells, cases I-III, receiver states I-IV"))
}

fn c9_saturation_oracle() -> Outcome {
    let phy = PhyParams::default();
    let t_data = phy.packet_duration(1, 400).map_err(|e| e.to_string())?;
    let mut sim = Vec::new();
    let mut oracle = Vec::new();
    for r in 0..10u64 {
        let mut c = ScenarioConfig {
            seed: 100 + r,
            duration: 4000.0,
            node_count: 1,
            ..Default::default()
        };
        c.traffic.offered_load = 10.0;
        let m = simulate(&c).map_err(|e| e.to_string())?;
        let d = m.mean_link_delay;
        // slot = d, backoff uniform over {0..cw_min}: mean cw_min/2 slots
        let e_backoff = c.mac.cw_min as f64 / 2.0 * d;
        oracle.push(t_data / (t_data + 2.0 * d + c.mac.t_ack + c.mac.t_other + e_backoff));
        sim.push(m.window_throughput());
    }
    let s = Summary::of(&sim).mean;
    let o = Summary::of(&oracle).mean;
    let rel = (s - o).abs() / o;
    check(rel <= 0.02, format!("simulated {s:.5} vs oracle {o:.5} ({:.2}%)", rel * 100.0))?;
    Ok(format!("simulated {s:.5}, oracle {o:.5}, error {:.3}%", rel * 100.0))
}

fn thr(t: &ExperimentTable, grid: &[f64]) -> Result<(Summary, usize), String> {
    let row = t
        .rows
        .iter()
        .find(|r| r.grid == grid)
        .ok_or_else(|| format!("missing grid point {grid:?}"))?;
    Ok((row.metric("normalized_throughput"), row.replications))
}

fn nonincreasing(t: &ExperimentTable, grids: &[Vec<f64>], what: &str) -> Result<(), String> {
    for w in grids.windows(2) {
        let (a, n) = thr(t, &w[0])?;
        let (b, _) = thr(t, &w[1])?;
        check(
            b.mean <= a.mean + a.band(&b, n),
            format!("{what}: {:?} {:.5} -> {:?} {:.5}", w[0], a.mean, w[1], b.mean),
        )?;
    }
    Ok(())
}

fn c10_trends() -> Outcome {
    let mut base = ScenarioConfig::default();
    base.sweeps.replications = 10;
    base.sweeps.node_counts = vec![2, 5, 10];
    let ns = base.sweeps.node_counts.clone();

    let load = run_experiment(Family::LoadSweep, &base).map_err(|e| e.to_string())?;
    let loads = base.sweeps.loads.clone();
    let mut knees = Vec::new();
    for &n in &ns {
        let n = n as f64;
        let curve: Vec<(Summary, usize)> = loads.iter().map(|&x| thr(&load, &[n, x])).collect::<Result<_, _>>()?;
        let peak = (0..curve.len())
            .max_by(|&a, &b| curve[a].0.mean.total_cmp(&curve[b].0.mean))
            .expect("loads");
        let (first, reps) = curve[0];
        let (top, _) = curve[peak];
        check(peak > 0 && top.mean > first.mean + first.band(&top, reps), format!("N={n}: load sweep does not rise"))?;
        for i in 0..peak {
            let (a, b) = (curve[i].0, curve[i + 1].0);
            check(
                b.mean + a.band(&b, reps) >= a.mean,
                format!("N={n}: throughput falls from load {} to {} before the peak", loads[i], loads[i + 1]),
            )?;
        }
        let (prev, last) = (curve[curve.len() - 2].0, curve[curve.len() - 1].0);
        check(
            (last.mean - prev.mean).abs() <= prev.band(&last, reps),
            format!("N={n}: no plateau ({:.5} vs {:.5})", prev.mean, last.mean),
        )?;
        knees.push(format!("N={n} peak {:.3} plateau {:.3}", top.mean, last.mean));
    }

    let pt = run_experiment(Family::PtSweep, &base).map_err(|e| e.to_string())?;
    let scales = base.sweeps.delay_scales.clone();
    let unit = scales.iter().position(|s| *s == 1.0).ok_or("delay scale 1 missing")?;
    let by_n: Vec<Vec<f64>> = ns.iter().map(|&n| vec![n as f64, scales[unit]]).collect();
    nonincreasing(&pt, &by_n, "saturated throughput against N")?;
    for &n in &ns {
        let grids: Vec<Vec<f64>> = scales.iter().map(|&s| vec![n as f64, s]).collect();
        nonincreasing(&pt, &grids, &format!("N={n} against PT-ratio"))?;
    }

    let per = run_experiment(Family::PerSweep, &base).map_err(|e| e.to_string())?;
    for &n in &ns {
        let (p0, reps) = thr(&per, &[n as f64, 0.0])?;
        let (p1, _) = thr(&per, &[n as f64, 0.01])?;
        check(
            p1.mean + p0.band(&p1, reps) >= 0.95 * p0.mean,
            format!("N={n}: per 0.01 gives {:.5} against {:.5}", p1.mean, p0.mean),
        )?;
    }

    let modes = run_experiment(Family::ModeCompare, &base).map_err(|e| e.to_string())?;
    for &n in &ns {
        let grids: Vec<Vec<f64>> = base.sweeps.modes.iter().map(|&m| vec![n as f64, m as f64]).collect();
        nonincreasing(&modes, &grids, &format!("N={n} against mode"))?;
    }
    let all_ok = [&load, &pt, &per, &modes].iter().all(|t| t.assertions_held());
    check(all_ok, "a run broke conservation or overlapped control frames")?;
    Ok(format!("load, N, PT-ratio, PER and mode trends hold; {}", knees.join(", ")))
}

fn c11_adaptive() -> Outcome {
    let mut base = ScenarioConfig::default();
    base.sweeps.replications = 10;
    base.sweeps.esnrs = (-2..=15).map(f64::from).collect();
    let t = run_experiment(Family::AdaptiveVsFixed, &base).map_err(|e| e.to_string())?;
    let mut failures = Vec::new();
    for &e in &base.sweeps.esnrs {
        let rows: Vec<_> = t.rows.iter().filter(|r| r.grid == [e]).collect();
        let adaptive = rows
            .iter()
            .find(|r| r.policy == "adaptive")
            .ok_or("adaptive row missing")?
            .metric("goodput_bps")
            .mean;
        let (best_name, best) = rows
            .iter()
            .filter(|r| r.policy != "adaptive")
            .map(|r| (r.policy.clone(), r.metric("goodput_bps").mean))
            .fold((String::new(), 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if adaptive < 0.9 * best {
            failures.push(format!("esnr {e}: adaptive {adaptive:.2} < 0.9 x {best_name} {best:.2}"));
        }
        if e <= -1.0 && adaptive != 0.0 {
            failures.push(format!("esnr {e}: adaptive goodput {adaptive:.2} is not 0"));
        }
    }
    check(failures.is_empty(), failures.join("; "))?;
    Ok(format!("{} ESNR points", base.sweeps.esnrs.len()))
}

fn c12_determinism() -> Outcome {
    let mut c = ScenarioConfig {
        duration: 1500.0,
        ..Default::default()
    };
    c.sweeps.replications = 3;
    c.sweeps.node_counts = vec![2, 5];
    c.sweeps.loads = vec![0.02, 0.5];
    let render = || -> Result<String, String> {
        let t = run_experiment(Family::LoadSweep, &c).map_err(|e| e.to_string())?;
        render_table(&c, &t).map_err(|e| e.to_string())
    };
    let a = render()?;
    let b = render()?;
    check(a == b, "CSV differs between identical invocations")?;
    Ok(format!("{} identical bytes", a.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("link budget fixtures", c1_link_budget),
        ("Thorp oracle", c2_thorp),
        ("mode table consistency", c3_mode_table),
        ("timing calibration", c4_timing),
        ("ESNR estimator", c5_esnr),
        ("chirp detection", c6_chirp_detection),
        ("collision predicate", c7_collision_predicate),
        ("MAC state machine", c8_mac),
        ("single-node saturation oracle", c9_saturation_oracle),
        ("trend reproduction", c10_trends),
        ("adaptive vs fixed", c11_adaptive),
        ("determinism", c12_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("criterion {:>2}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|p| id.contains(p.as_str()) || name.contains(p.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let res = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("{id} {name}: PASS ({detail}) [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("{id} {name}: FAIL ({why}) [{secs:.1} s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
