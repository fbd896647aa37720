//! Sender and receiver state machines of the RTS/CTS-free CSMA/CA variant.
//!
//! Channel access is purely virtual: every overheard header announces how
//! long the exchange keeps the channel busy and listeners defer for that
//! long, freezing any running backoff. Feedback from the sink separates
//! channel loss (NACK1: step the mode down and resend at once) from
//! collision (NACK2 or timeout: binary exponential backoff, same mode).
//!
//! Transitions are pure with respect to the engine: [`sender_step`] mutates
//! only the node state and returns [`MacAction`]s for the engine to execute.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::medium::FrameKind;
use crate::phy::{ModeIndex, ModeThresholds};
use crate::sim::SimTime;
use crate::{Error, NodeId, Result};

/// Slack added on top of the worst-case round trip before a sender gives up
/// waiting for feedback.
pub const DEFAULT_TIMEOUT_MARGIN: f64 = 0.1;

/// Reserved channel time of one DATA/ACK exchange.
pub fn t_busy(t_data: f64, t_ack: f64, t_delay: f64, t_other: f64) -> f64 {
    t_data + t_ack + 2.0 * t_delay + t_other
}

/// Feedback timeout measured from the start of the transmission.
pub fn timeout_value(t_data: f64, max_delay: f64, t_ack: f64, t_other: f64, margin: f64) -> f64 {
    t_data + 2.0 * max_delay + t_ack + t_other + margin
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModePolicy {
    Adaptive,
    Fixed(ModeIndex),
}

impl Default for ModePolicy {
    fn default() -> Self {
        ModePolicy::Fixed(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Backoff,
    Deferring,
    Transmitting,
    AwaitingAck,
    Paused,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Idle,
        Phase::Backoff,
        Phase::Deferring,
        Phase::Transmitting,
        Phase::AwaitingAck,
        Phase::Paused,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::Backoff => "backoff",
            Phase::Deferring => "deferring",
            Phase::Transmitting => "transmitting",
            Phase::AwaitingAck => "awaiting_ack",
            Phase::Paused => "paused",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A payload waiting at a sender.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub created: SimTime,
    pub bytes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MacEvent {
    PacketReady(Packet),
    /// A header was overheard announcing `busy` seconds of channel use.
    ChannelBusy { busy: f64 },
    NavExpired,
    BackoffZero,
    TxDone,
    Ack { esnr: f64 },
    Nack1,
    Nack2,
    Timeout,
    PauseExpired,
}

impl MacEvent {
    pub fn name(&self) -> &'static str {
        match self {
            MacEvent::PacketReady(_) => "packet_ready",
            MacEvent::ChannelBusy { .. } => "channel_busy",
            MacEvent::NavExpired => "nav_expired",
            MacEvent::BackoffZero => "backoff_zero",
            MacEvent::TxDone => "tx_done",
            MacEvent::Ack { .. } => "ack",
            MacEvent::Nack1 => "nack1",
            MacEvent::Nack2 => "nack2",
            MacEvent::Timeout => "timeout",
            MacEvent::PauseExpired => "pause_expired",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimerKind {
    Backoff,
    Nav,
    Timeout,
    Pause,
}

/// What the engine should record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MacMetric {
    Delivered { packet: Packet, mode: ModeIndex },
    Retransmission,
    Nack1,
    Nack2,
    Timeout,
    Paused,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MacAction {
    /// Put a frame on the air now. `busy` goes into the header.
    StartTransmission {
        kind: FrameKind,
        mode: ModeIndex,
        duration: f64,
        busy: f64,
        payload_bytes: u32,
    },
    /// Arm (or re-arm) the single timer of this kind.
    SetTimer { kind: TimerKind, after: f64 },
    CancelTimer { kind: TimerKind },
    SetNav { until: SimTime },
    DropPacket { packet: Packet },
    RecordMetric(MacMetric),
}

impl fmt::Display for MacAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MacAction::StartTransmission { kind, mode, duration, .. } => {
                write!(f, "start_transmission({kind:?} mode={mode} dur={duration})")
            }
            MacAction::SetTimer { kind, after } => write!(f, "set_timer({kind:?} {after})"),
            MacAction::CancelTimer { kind } => write!(f, "cancel_timer({kind:?})"),
            MacAction::SetNav { until } => write!(f, "set_nav({until})"),
            MacAction::DropPacket { packet } => write!(f, "drop_packet({})", packet.id),
            MacAction::RecordMetric(m) => match m {
                MacMetric::Delivered { packet, mode } => {
                    write!(f, "record(delivered {} mode={mode})", packet.id)
                }
                other => write!(f, "record({other:?})"),
            },
        }
    }
}

/// Fully resolved MAC parameters for one sender.
#[derive(Debug, Clone, PartialEq)]
pub struct MacConfig {
    pub cw_min: u32,
    pub cw_max: u32,
    /// Backoff slot in seconds.
    pub slot: f64,
    pub max_retries: u32,
    pub policy: ModePolicy,
    /// Whether the sink sends NACK1/NACK2. Without them every loss ends in
    /// a timeout.
    pub cross_layer: bool,
    pub thresholds: ModeThresholds,
    /// DATA airtime per mode index; entry 0 is unused.
    pub data_durations: [f64; 7],
    pub t_control: f64,
    pub t_ack: f64,
    pub t_other: f64,
    pub max_delay: f64,
    pub timeout_margin: f64,
    pub pause_duration: f64,
    pub initial_mode: ModeIndex,
}

impl MacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cw_min == 0 || self.cw_max < self.cw_min {
            return Err(Error::config("mac.cw_min", "need 1 <= cw_min <= cw_max"));
        }
        if !(self.slot >= 0.0) {
            return Err(Error::config("mac.slot", "must be >= 0"));
        }
        for (field, v) in [
            ("mac.t_control", self.t_control),
            ("mac.t_ack", self.t_ack),
            ("mac.t_other", self.t_other),
            ("mac.timeout_margin", self.timeout_margin),
            ("mac.pause_duration", self.pause_duration),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(field, "must be finite and >= 0"));
            }
        }
        if !(1..=6).contains(&self.initial_mode) {
            return Err(Error::config("mac.initial_mode", "must be in 1..=6"));
        }
        if let ModePolicy::Fixed(m) = self.policy {
            if !(1..=6).contains(&m) {
                return Err(Error::config("mac.policy", "fixed mode must be in 1..=6"));
            }
        }
        Ok(())
    }

    fn duration(&self, kind: FrameKind, mode: ModeIndex) -> f64 {
        match kind {
            FrameKind::Data => self.data_durations[mode as usize],
            _ => self.t_control,
        }
    }

    fn adaptive(&self) -> bool {
        self.policy == ModePolicy::Adaptive
    }
}

/// How to access the channel once the NAV clears.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Backoff,
    Immediate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacNodeState {
    pub phase: Phase,
    pub cw: u32,
    pub backoff_remaining: u32,
    pub nav_until: SimTime,
    pub retries: u32,
    pub current_mode: ModeIndex,
    pub last_esnr: Option<f64>,
    pub queue: VecDeque<Packet>,
    pub measured_delay: f64,
    /// Next transmission is a CONTROL probe rather than DATA.
    pub probe_pending: bool,
    pub access: Access,
    countdown_started: Option<SimTime>,
    in_flight: Option<FrameKind>,
}

impl MacNodeState {
    pub fn new(cfg: &MacConfig, measured_delay: f64) -> Self {
        let mode = match cfg.policy {
            ModePolicy::Fixed(m) => m,
            ModePolicy::Adaptive => cfg.initial_mode,
        };
        Self {
            phase: Phase::Idle,
            cw: cfg.cw_min,
            backoff_remaining: 0,
            nav_until: 0.0,
            retries: 0,
            current_mode: mode,
            last_esnr: None,
            queue: VecDeque::new(),
            measured_delay,
            probe_pending: false,
            access: Access::Backoff,
            countdown_started: None,
            in_flight: None,
        }
    }

    pub fn nav_active(&self, now: SimTime) -> bool {
        self.nav_until > now
    }

    /// Kind of the frame currently on the air or awaiting feedback.
    pub fn in_flight(&self) -> Option<FrameKind> {
        self.in_flight
    }
}

fn violation(state: &MacNodeState, event: &MacEvent) -> Error {
    Error::ProtocolViolation {
        phase: state.phase.name().to_string(),
        event: event.name().to_string(),
    }
}

/// Whether `event` may be delivered to a sender in `phase`.
pub fn is_legal(phase: Phase, event: &MacEvent) -> bool {
    match event {
        MacEvent::PacketReady(_) | MacEvent::ChannelBusy { .. } | MacEvent::NavExpired => true,
        MacEvent::BackoffZero => phase == Phase::Backoff,
        MacEvent::TxDone => phase == Phase::Transmitting,
        MacEvent::Ack { .. } | MacEvent::Nack1 | MacEvent::Nack2 | MacEvent::Timeout => {
            phase == Phase::AwaitingAck
        }
        MacEvent::PauseExpired => phase == Phase::Paused,
    }
}

/// Advance one sender by one event.
pub fn sender_step<R: Rng>(
    state: &mut MacNodeState,
    cfg: &MacConfig,
    event: MacEvent,
    now: SimTime,
    rng: &mut R,
) -> Result<Vec<MacAction>> {
    if !is_legal(state.phase, &event) {
        return Err(violation(state, &event));
    }
    let mut out = Vec::new();
    match event {
        MacEvent::PacketReady(p) => {
            state.queue.push_back(p);
            if state.phase == Phase::Idle {
                draw_backoff(state, cfg, rng);
                begin_access(state, cfg, now, Access::Backoff, &mut out);
            }
        }
        MacEvent::ChannelBusy { busy } => {
            let until = now + busy.max(0.0);
            if until > state.nav_until {
                state.nav_until = until;
                out.push(MacAction::SetNav { until });
                out.push(MacAction::SetTimer {
                    kind: TimerKind::Nav,
                    after: until - now,
                });
            }
            if state.phase == Phase::Backoff && state.nav_active(now) {
                freeze(state, cfg, now);
                out.push(MacAction::CancelTimer {
                    kind: TimerKind::Backoff,
                });
                state.phase = Phase::Deferring;
            }
        }
        MacEvent::NavExpired => {
            if state.phase == Phase::Deferring && !state.nav_active(now) {
                let access = state.access;
                begin_access(state, cfg, now, access, &mut out);
            }
        }
        MacEvent::BackoffZero => {
            state.backoff_remaining = 0;
            state.countdown_started = None;
            transmit(state, cfg, &mut out);
        }
        MacEvent::TxDone => {
            state.phase = Phase::AwaitingAck;
        }
        MacEvent::Ack { esnr } => {
            out.push(MacAction::CancelTimer {
                kind: TimerKind::Timeout,
            });
            state.last_esnr = Some(esnr);
            state.retries = 0;
            state.cw = cfg.cw_min;
            if state.in_flight.take() == Some(FrameKind::Data) {
                let packet = state.queue.pop_front().expect("data in flight implies a queued packet");
                out.push(MacAction::RecordMetric(MacMetric::Delivered {
                    packet,
                    mode: state.current_mode,
                }));
            } else {
                state.probe_pending = false;
            }
            if cfg.adaptive() {
                state.current_mode = cfg.thresholds.select_mode(esnr);
            }
            if state.current_mode == 0 {
                state.phase = Phase::Paused;
                out.push(MacAction::RecordMetric(MacMetric::Paused));
                out.push(MacAction::SetTimer {
                    kind: TimerKind::Pause,
                    after: cfg.pause_duration,
                });
            } else {
                next_packet(state, cfg, now, rng, &mut out);
            }
        }
        MacEvent::Nack1 => {
            out.push(MacAction::CancelTimer {
                kind: TimerKind::Timeout,
            });
            out.push(MacAction::RecordMetric(MacMetric::Nack1));
            if fail(state, cfg, now, rng, &mut out) {
                if cfg.adaptive() {
                    state.current_mode = state.current_mode.saturating_sub(1).max(1);
                }
                out.push(MacAction::RecordMetric(MacMetric::Retransmission));
                begin_access(state, cfg, now, Access::Immediate, &mut out);
            }
        }
        MacEvent::Nack2 | MacEvent::Timeout => {
            if event == MacEvent::Nack2 {
                out.push(MacAction::CancelTimer {
                    kind: TimerKind::Timeout,
                });
                out.push(MacAction::RecordMetric(MacMetric::Nack2));
            } else {
                out.push(MacAction::RecordMetric(MacMetric::Timeout));
            }
            if fail(state, cfg, now, rng, &mut out) {
                state.cw = (state.cw.saturating_mul(2)).min(cfg.cw_max);
                out.push(MacAction::RecordMetric(MacMetric::Retransmission));
                draw_backoff(state, cfg, rng);
                begin_access(state, cfg, now, Access::Backoff, &mut out);
            }
        }
        MacEvent::PauseExpired => {
            state.current_mode = 1;
            state.probe_pending = true;
            if state.queue.is_empty() {
                state.phase = Phase::Idle;
            } else {
                draw_backoff(state, cfg, rng);
                begin_access(state, cfg, now, Access::Backoff, &mut out);
            }
        }
    }
    Ok(out)
}

/// Count a failed attempt. Returns `true` if the packet should be retried;
/// otherwise it has been dropped and the next packet scheduled.
fn fail<R: Rng>(
    state: &mut MacNodeState,
    cfg: &MacConfig,
    now: SimTime,
    rng: &mut R,
    out: &mut Vec<MacAction>,
) -> bool {
    let kind = state.in_flight.take();
    if kind != Some(FrameKind::Data) {
        // probes are repeated until answered and never cost the payload
        return true;
    }
    state.retries += 1;
    if state.retries <= cfg.max_retries {
        return true;
    }
    let packet = state.queue.pop_front().expect("data in flight implies a queued packet");
    out.push(MacAction::DropPacket { packet });
    state.retries = 0;
    state.cw = cfg.cw_min;
    next_packet(state, cfg, now, rng, out);
    false
}

fn next_packet<R: Rng>(
    state: &mut MacNodeState,
    cfg: &MacConfig,
    now: SimTime,
    rng: &mut R,
    out: &mut Vec<MacAction>,
) {
    if state.queue.is_empty() {
        state.phase = Phase::Idle;
    } else {
        draw_backoff(state, cfg, rng);
        begin_access(state, cfg, now, Access::Backoff, out);
    }
}

fn draw_backoff<R: Rng>(state: &mut MacNodeState, _cfg: &MacConfig, rng: &mut R) {
    state.backoff_remaining = rng.random_range(0..=state.cw);
    state.countdown_started = None;
}

fn freeze(state: &mut MacNodeState, cfg: &MacConfig, now: SimTime) {
    if let Some(t0) = state.countdown_started.take() {
        let elapsed = if cfg.slot > 0.0 {
            ((now - t0) / cfg.slot + 1e-9).floor() as u32
        } else {
            state.backoff_remaining
        };
        state.backoff_remaining = state.backoff_remaining.saturating_sub(elapsed);
    }
}

fn begin_access(
    state: &mut MacNodeState,
    cfg: &MacConfig,
    now: SimTime,
    access: Access,
    out: &mut Vec<MacAction>,
) {
    state.access = access;
    if state.nav_active(now) {
        state.phase = Phase::Deferring;
        return;
    }
    if access == Access::Immediate || state.backoff_remaining == 0 {
        transmit(state, cfg, out);
        return;
    }
    state.phase = Phase::Backoff;
    state.countdown_started = Some(now);
    out.push(MacAction::SetTimer {
        kind: TimerKind::Backoff,
        after: state.backoff_remaining as f64 * cfg.slot,
    });
}

fn transmit(state: &mut MacNodeState, cfg: &MacConfig, out: &mut Vec<MacAction>) {
    let kind = if state.probe_pending {
        FrameKind::Control
    } else {
        FrameKind::Data
    };
    let mode = state.current_mode;
    let duration = cfg.duration(kind, mode);
    let payload_bytes = match kind {
        FrameKind::Data => state.queue.front().map_or(0, |p| p.bytes),
        _ => 0,
    };
    state.phase = Phase::Transmitting;
    state.in_flight = Some(kind);
    state.access = Access::Backoff;
    out.push(MacAction::StartTransmission {
        kind,
        mode,
        duration,
        busy: t_busy(duration, cfg.t_ack, state.measured_delay, cfg.t_other),
        payload_bytes,
    });
    out.push(MacAction::SetTimer {
        kind: TimerKind::Timeout,
        after: timeout_value(duration, cfg.max_delay, cfg.t_ack, cfg.t_other, cfg.timeout_margin),
    });
}

/// What the sink concluded about a received DATA or CONTROL frame.
#[derive(Debug, Clone, PartialEq)]
pub enum ReceptionOutcome {
    Decoded { esnr: f64 },
    PreambleOnly,
    /// Senders whose preambles were detected within the first frame.
    CollisionDetected { senders: Vec<NodeId> },
    Missed,
}

/// Feedback frame chosen by the sink.
#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Ack { to: NodeId, esnr: f64 },
    Nack1 { to: NodeId },
    Nack2 { senders: Vec<NodeId> },
}

impl Response {
    pub fn kind(&self) -> FrameKind {
        match self {
            Response::Ack { .. } => FrameKind::Ack,
            Response::Nack1 { .. } => FrameKind::Nack1,
            Response::Nack2 { .. } => FrameKind::Nack2,
        }
    }
}

/// Sink reaction to an outcome for a frame sent by `sender`.
pub fn receiver_step(outcome: &ReceptionOutcome, sender: NodeId, cross_layer: bool) -> Option<Response> {
    match outcome {
        ReceptionOutcome::Decoded { esnr } => Some(Response::Ack {
            to: sender,
            esnr: *esnr,
        }),
        ReceptionOutcome::PreambleOnly if cross_layer => Some(Response::Nack1 { to: sender }),
        ReceptionOutcome::CollisionDetected { senders } if cross_layer => Some(Response::Nack2 {
            senders: senders.clone(),
        }),
        _ => None,
    }
}
