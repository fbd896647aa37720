//! One simulation run of a star network: Poisson traffic at the sensors,
//! MAC state machines, propagation and the sink receive chain.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use super::config::ScenarioConfig;
use super::metrics::RunMetrics;
use crate::acoustics::Position;
use crate::mac::{
    receiver_step, sender_step, MacAction, MacConfig, MacEvent, MacMetric, MacNodeState, Packet, Phase,
    ReceptionOutcome, Response, TimerKind,
};
use crate::medium::{propagate, AirFrame, ArrivalMeta, DelayMatrix, FrameKind, HeaderInfo, SinkReceiver, Verdict};
use crate::phy::ModeIndex;
use crate::sim::{EventHandle, RngFactory, RngStream, Scheduler, SimTime};
use crate::{Error, NodeId, Result, SINK};

const PLACEMENT_STREAM: u64 = 0;
const TRAFFIC_STREAM: u64 = 1;
const CHANNEL_STREAM: u64 = 2;
const NODE_STREAM_BASE: u64 = 100;

/// One row of the per-node transition log.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub time: SimTime,
    pub node: NodeId,
    pub phase_before: Phase,
    pub event: &'static str,
    pub phase_after: Phase,
    pub actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub positions: Vec<Position>,
    pub trace: Vec<TraceRow>,
}

/// Positions of the sink (index 0) and every sensor.
pub fn place_nodes(cfg: &ScenarioConfig) -> Vec<Position> {
    let side = cfg.topology.side;
    let mut out = vec![Position::new(side / 2.0, side / 2.0)];
    if cfg.topology.positions.is_empty() {
        let mut rng = RngFactory::new(cfg.seed).stream(PLACEMENT_STREAM);
        for _ in 0..cfg.node_count {
            out.push(Position::new(rng.random_range(0.0..side), rng.random_range(0.0..side)));
        }
    } else {
        out.extend(cfg.topology.positions.iter().map(|p| Position::new(p[0], p[1])));
    }
    out
}

/// Run the scenario and return its metrics.
pub fn simulate(cfg: &ScenarioConfig) -> Result<RunMetrics> {
    Ok(Network::new(cfg, false)?.run()?.metrics)
}

/// Run the scenario keeping the full transition log.
pub fn simulate_traced(cfg: &ScenarioConfig) -> Result<RunOutput> {
    Network::new(cfg, true)?.run()
}

#[derive(Debug, Clone)]
enum Ev {
    Traffic,
    Timer { node: NodeId, kind: TimerKind },
    TxEnd { node: NodeId },
    ArrivalStart { frame: u64, node: NodeId },
    PreambleEnd { frame: u64 },
    ArrivalEnd { frame: u64, node: NodeId },
    SinkSend { response: Response, involved: Vec<(NodeId, u64)> },
}

struct FrameRec {
    frame: AirFrame,
    response: Option<Response>,
    involved: Vec<(NodeId, u64)>,
    pending: usize,
}

struct Sensor {
    mac: MacNodeState,
    rng: RngStream,
    timers: HashMap<TimerKind, EventHandle>,
    attempt: Option<u64>,
    tx: Vec<(SimTime, SimTime)>,
    feedback_rx: Vec<(SimTime, SimTime)>,
}

impl Sensor {
    fn transmitting_at(&self, t: SimTime) -> bool {
        self.tx.iter().any(|&(s, e)| s <= t && t < e)
    }

    fn transmitting_during(&self, a: SimTime, b: SimTime) -> bool {
        self.tx.iter().any(|&(s, e)| s < b && e > a)
    }
}

struct Network<'a> {
    cfg: &'a ScenarioConfig,
    mac_cfg: MacConfig,
    positions: Vec<Position>,
    delays: DelayMatrix,
    link_snr: Vec<f64>,
    sched: Scheduler<Ev>,
    sensors: Vec<Sensor>,
    sink: SinkReceiver,
    frames: HashMap<u64, FrameRec>,
    next_frame: u64,
    next_packet: u64,
    traffic_rng: RngStream,
    channel_rng: RngStream,
    metrics: RunMetrics,
    window_open: bool,
    trace: Option<Vec<TraceRow>>,
}

impl<'a> Network<'a> {
    fn new(cfg: &'a ScenarioConfig, trace: bool) -> Result<Self> {
        cfg.validate()?;
        let positions = place_nodes(cfg);
        let lb = &cfg.channel.link_budget;
        let delays = DelayMatrix::from_positions(&positions, lb.sound_speed, cfg.topology.delay_scale)?;
        let n = cfg.node_count;
        let max_delay = (1..=n).map(|i| delays.get(SINK, i)).fold(0.0, f64::max);
        let mac_cfg = cfg.mac_config(max_delay)?;
        mac_cfg.validate()?;
        let factory = RngFactory::new(cfg.seed);
        let mut link_snr = vec![f64::INFINITY];
        for p in &positions[1..] {
            link_snr.push(lb.evaluate(p.distance(&positions[0]).max(1.0))?.snr);
        }
        let sensors = (0..=n)
            .map(|i| Sensor {
                mac: MacNodeState::new(&mac_cfg, delays.get(SINK, i)),
                rng: factory.stream(NODE_STREAM_BASE + i as u64),
                timers: HashMap::new(),
                attempt: None,
                tx: Vec::new(),
                feedback_rx: Vec::new(),
            })
            .collect();
        let metrics = RunMetrics {
            delivered_per_node: vec![0; n + 1],
            mean_link_delay: (1..=n).map(|i| delays.get(SINK, i)).sum::<f64>() / n as f64,
            ..Default::default()
        };
        Ok(Self {
            cfg,
            mac_cfg,
            positions,
            delays,
            link_snr,
            sched: Scheduler::new(),
            sensors,
            sink: SinkReceiver::new(cfg.phy.timing.preamble_duration, cfg.channel.capture),
            frames: HashMap::new(),
            next_frame: 0,
            next_packet: 0,
            traffic_rng: factory.stream(TRAFFIC_STREAM),
            channel_rng: factory.stream(CHANNEL_STREAM),
            metrics,
            window_open: cfg.mac.warmup_deliveries == 0,
            trace: trace.then(Vec::new),
        })
    }

    fn run(mut self) -> Result<RunOutput> {
        self.schedule_traffic()?;
        let end = self.cfg.duration;
        while let Some(ev) = self.sched.pop_until(end) {
            self.handle(ev.payload)?;
        }
        self.sched.run_until(end, |_, _| {})?;
        let m = &mut self.metrics;
        m.sim_time = end;
        m.in_flight_at_end = self.sensors.iter().map(|s| s.mac.queue.len() as u64).sum();
        if self.window_open {
            m.window.duration = end - m.window.start;
        }
        if !m.conserved() {
            return Err(Error::ProtocolViolation {
                phase: "end of run".into(),
                event: format!(
                    "conservation broken: generated {} != delivered {} + dropped {} + in flight {}",
                    m.generated, m.delivered, m.dropped, m.in_flight_at_end
                ),
            });
        }
        Ok(RunOutput {
            metrics: self.metrics,
            positions: self.positions,
            trace: self.trace.unwrap_or_default(),
        })
    }

    fn schedule_traffic(&mut self) -> Result<()> {
        let rate = self.cfg.traffic.offered_load;
        if rate > 0.0 {
            let gap: f64 = Exp::new(rate).expect("positive rate").sample(&mut self.traffic_rng);
            self.sched.schedule_in(gap, Ev::Traffic)?;
        }
        Ok(())
    }

    fn handle(&mut self, ev: Ev) -> Result<()> {
        match ev {
            Ev::Traffic => {
                let node = 1 + self.traffic_rng.random_range(0..self.cfg.node_count);
                let packet = Packet {
                    id: self.next_packet,
                    created: self.sched.now(),
                    bytes: self.cfg.traffic.payload_bytes,
                };
                self.next_packet += 1;
                self.metrics.generated += 1;
                self.step(node, MacEvent::PacketReady(packet))?;
                self.schedule_traffic()
            }
            Ev::Timer { node, kind } => {
                self.sensors[node].timers.remove(&kind);
                let ev = match kind {
                    TimerKind::Backoff => MacEvent::BackoffZero,
                    TimerKind::Nav => MacEvent::NavExpired,
                    TimerKind::Timeout => {
                        self.sensors[node].attempt = None;
                        MacEvent::Timeout
                    }
                    TimerKind::Pause => MacEvent::PauseExpired,
                };
                self.step(node, ev)
            }
            Ev::TxEnd { node } => self.step(node, MacEvent::TxDone),
            Ev::ArrivalStart { frame, node } => self.arrival_start(frame, node),
            Ev::PreambleEnd { frame } => self.preamble_end(frame),
            Ev::ArrivalEnd { frame, node } => self.arrival_end(frame, node),
            Ev::SinkSend { response, involved } => self.sink_send(response, involved),
        }
    }

    fn step(&mut self, node: NodeId, ev: MacEvent) -> Result<()> {
        let now = self.sched.now();
        let s = &mut self.sensors[node];
        let before = s.mac.phase;
        let actions = sender_step(&mut s.mac, &self.mac_cfg, ev, now, &mut s.rng)?;
        if let Some(trace) = &mut self.trace {
            trace.push(TraceRow {
                time: now,
                node,
                phase_before: before,
                event: ev.name(),
                phase_after: s.mac.phase,
                actions: actions.iter().map(|a| a.to_string()).collect(),
            });
        }
        for a in actions {
            self.apply(node, a)?;
        }
        Ok(())
    }

    fn apply(&mut self, node: NodeId, action: MacAction) -> Result<()> {
        let now = self.sched.now();
        match action {
            MacAction::StartTransmission {
                kind,
                mode,
                duration,
                busy,
                payload_bytes,
            } => self.transmit(node, kind, mode, duration, busy, payload_bytes)?,
            MacAction::SetTimer { kind, after } => {
                if let Some(h) = self.sensors[node].timers.remove(&kind) {
                    self.sched.cancel(h);
                }
                let h = self.sched.schedule_in(after, Ev::Timer { node, kind })?;
                self.sensors[node].timers.insert(kind, h);
            }
            MacAction::CancelTimer { kind } => {
                if let Some(h) = self.sensors[node].timers.remove(&kind) {
                    self.sched.cancel(h);
                }
            }
            MacAction::SetNav { .. } => {}
            MacAction::DropPacket { .. } => self.metrics.dropped += 1,
            MacAction::RecordMetric(metric) => {
                let m = &mut self.metrics;
                match metric {
                    MacMetric::Delivered { packet, mode } => {
                        let airtime = self.mac_cfg.data_durations[mode as usize];
                        let bits = 8 * packet.bytes as u64;
                        m.delivered += 1;
                        m.delivered_bits += bits;
                        m.delivered_airtime += airtime;
                        m.total_latency += now - packet.created;
                        m.mode_usage[mode as usize] += 1;
                        m.delivered_per_node[node] += 1;
                        if self.window_open {
                            m.window.delivered += 1;
                            m.window.delivered_bits += bits;
                            m.window.delivered_airtime += airtime;
                        } else if m.delivered >= self.cfg.mac.warmup_deliveries {
                            self.window_open = true;
                            m.window.start = now;
                        }
                    }
                    MacMetric::Retransmission => m.retransmissions += 1,
                    MacMetric::Nack1 => m.nack1 += 1,
                    MacMetric::Nack2 => m.nack2 += 1,
                    MacMetric::Timeout => m.timeouts += 1,
                    MacMetric::Paused => m.pauses += 1,
                }
            }
        }
        Ok(())
    }

    fn new_frame(&mut self, frame: AirFrame, response: Option<Response>, involved: Vec<(NodeId, u64)>) -> Result<()> {
        let tp = self.cfg.phy.timing.preamble_duration;
        let arrivals = propagate(&frame, &self.delays);
        let mut pending = 0;
        for a in &arrivals {
            self.sched.schedule(a.start, Ev::ArrivalStart { frame: frame.id, node: a.node })?;
            pending += 1;
            let needs_end = if a.node == SINK {
                self.sched.schedule(a.start + tp, Ev::PreambleEnd { frame: frame.id })?;
                pending += 1;
                true
            } else {
                frame.kind.is_feedback()
            };
            if needs_end {
                self.sched.schedule(a.end, Ev::ArrivalEnd { frame: frame.id, node: a.node })?;
                pending += 1;
            }
        }
        self.frames.insert(
            frame.id,
            FrameRec {
                frame,
                response,
                involved,
                pending,
            },
        );
        Ok(())
    }

    fn done_with(&mut self, frame: u64) {
        if let Some(rec) = self.frames.get_mut(&frame) {
            rec.pending -= 1;
            if rec.pending == 0 {
                self.frames.remove(&frame);
            }
        }
    }

    fn transmit(
        &mut self,
        node: NodeId,
        kind: FrameKind,
        mode: ModeIndex,
        duration: f64,
        busy: f64,
        payload_bytes: u32,
    ) -> Result<()> {
        let now = self.sched.now();
        let id = self.next_frame;
        self.next_frame += 1;
        let s = &mut self.sensors[node];
        s.attempt = Some(id);
        s.tx.retain(|&(_, e)| e > now - 60.0);
        s.tx.push((now, now + duration));
        self.sched.schedule(now + duration, Ev::TxEnd { node })?;
        let frame = AirFrame {
            id,
            kind,
            sender: node,
            addressee: Some(SINK),
            mode,
            tx_start: now,
            duration,
            header: HeaderInfo {
                source: node,
                destination: Some(SINK),
                mode,
                payload_bytes,
                busy_duration: busy,
            },
            payload_bytes,
        };
        self.new_frame(frame, None, Vec::new())
    }

    fn sink_send(&mut self, response: Response, involved: Vec<(NodeId, u64)>) -> Result<()> {
        let now = self.sched.now();
        let kind = response.kind();
        let duration = match kind {
            FrameKind::Ack => self.cfg.mac.t_ack,
            _ => self.cfg.mac.t_nack,
        };
        let addressee = match &response {
            Response::Ack { to, .. } | Response::Nack1 { to } => Some(*to),
            Response::Nack2 { .. } => None,
        };
        let id = self.next_frame;
        self.next_frame += 1;
        self.sink.transmit(now, now + duration);
        let frame = AirFrame {
            id,
            kind,
            sender: SINK,
            addressee,
            mode: 1,
            tx_start: now,
            duration,
            header: HeaderInfo {
                source: SINK,
                destination: addressee,
                mode: 1,
                payload_bytes: 0,
                busy_duration: duration,
            },
            payload_bytes: 0,
        };
        self.new_frame(frame, Some(response), involved)
    }

    fn arrival_start(&mut self, frame: u64, node: NodeId) -> Result<()> {
        let now = self.sched.now();
        let rec = &self.frames[&frame];
        let f = &rec.frame;
        if node == SINK {
            let meta = ArrivalMeta {
                frame,
                sender: f.sender,
                kind: f.kind,
                mode: f.mode,
                start: now,
                end: now + f.duration,
            };
            self.sink.arrival_start(meta);
            self.done_with(frame);
            return Ok(());
        }
        let (kind, busy, duration) = (f.kind, f.header.busy_duration, f.duration);
        let addressed = rec.involved.iter().any(|&(n, _)| n == node);
        let s = &mut self.sensors[node];
        if kind.is_feedback() {
            s.feedback_rx.retain(|&(_, e)| e > now);
            if !s.feedback_rx.is_empty() {
                self.metrics.control_overlaps += 1;
            }
            s.feedback_rx.push((now, now + duration));
        }
        let deaf = s.transmitting_at(now);
        self.done_with(frame);
        if deaf || addressed {
            return Ok(());
        }
        self.step(node, MacEvent::ChannelBusy { busy })
    }

    fn preamble_end(&mut self, frame: u64) -> Result<()> {
        let sender = self.frames[&frame].frame.sender;
        let p = self.cfg.channel.detection.probability(self.link_snr[sender]);
        let detected = p >= 1.0 || self.channel_rng.random::<f64>() < p;
        let verdict = self.sink.preamble_end(frame, detected);
        self.done_with(frame);
        match verdict {
            Some(v) => self.answer(v),
            None => Ok(()),
        }
    }

    fn arrival_end(&mut self, frame: u64, node: NodeId) -> Result<()> {
        let now = self.sched.now();
        if node == SINK {
            return self.sink_arrival_end(frame, now);
        }
        let rec = &self.frames[&frame];
        let start = now - rec.frame.duration;
        let s = &self.sensors[node];
        let matches = rec.involved.iter().any(|&(n, f)| n == node && s.attempt == Some(f));
        let event = match &rec.response {
            Some(Response::Ack { esnr, .. }) => MacEvent::Ack { esnr: *esnr },
            Some(Response::Nack1 { .. }) => MacEvent::Nack1,
            _ => MacEvent::Nack2,
        };
        let deliver = matches && s.mac.phase == Phase::AwaitingAck && !s.transmitting_during(start, now);
        self.done_with(frame);
        if deliver {
            self.sensors[node].attempt = None;
            self.step(node, event)?;
        }
        Ok(())
    }

    fn sink_arrival_end(&mut self, frame: u64, now: SimTime) -> Result<()> {
        let f = &self.frames[&frame].frame;
        let (sender, kind, mode) = (f.sender, f.kind, f.mode);
        let ch = &self.cfg.channel;
        let esnr = ch.esnr_sample(sender, now)?;
        let per = match kind {
            FrameKind::Data => match ch.forced_per {
                Some(p) => p,
                None => self.cfg.phy.per(mode, esnr)?,
            },
            _ => 0.0,
        };
        let rng = &mut self.channel_rng;
        let verdict = self.sink.arrival_end(frame, |_| {
            let lost = per > 0.0 && rng.random::<f64>() < per;
            (!lost).then(|| ch.reported_esnr(esnr, rng))
        });
        self.done_with(frame);
        match verdict {
            Some(v) => self.answer(v),
            None => Ok(()),
        }
    }

    fn answer(&mut self, v: Verdict) -> Result<()> {
        if !v.respond {
            return Ok(());
        }
        if let ReceptionOutcome::CollisionDetected { senders } = &v.outcome {
            self.metrics.collisions += senders.len() as u64;
        }
        if let Some(response) = receiver_step(&v.outcome, v.sender, self.mac_cfg.cross_layer) {
            self.sched.schedule_in(
                self.cfg.mac.t_other,
                Ev::SinkSend {
                    response,
                    involved: v.involved,
                },
            )?;
        }
        Ok(())
    }
}
