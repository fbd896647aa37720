//! Shared half-duplex channel: frames, propagation, the sink's receive
//! chain and the channel models that drive decoding.
//!
//! The sink locks onto the first frame whose preamble it detects. A second
//! preamble detected while locked is a collision (all payloads lost); any
//! other overlap with the locked frame, including the sink's own
//! transmissions, leaves only the preamble usable. Two preambles starting
//! within one preamble length of each other are both missed.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::acoustics::{LinkBudgetParams, Position};
use crate::mac::ReceptionOutcome;
use crate::phy::ModeIndex;
use crate::sim::SimTime;
use crate::{Error, NodeId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FrameKind {
    Data,
    Ack,
    Nack1,
    Nack2,
    Control,
}

impl FrameKind {
    /// Frames sent by the sink in reply to a sensor.
    pub fn is_feedback(self) -> bool {
        matches!(self, FrameKind::Ack | FrameKind::Nack1 | FrameKind::Nack2)
    }
}

/// Header fields every listener can read after the preamble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeaderInfo {
    pub source: NodeId,
    /// `None` for broadcast.
    pub destination: Option<NodeId>,
    pub mode: ModeIndex,
    pub payload_bytes: u32,
    /// Seconds the exchange keeps the channel busy, counted from reception.
    pub busy_duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AirFrame {
    pub id: u64,
    pub kind: FrameKind,
    pub sender: NodeId,
    pub addressee: Option<NodeId>,
    pub mode: ModeIndex,
    pub tx_start: SimTime,
    pub duration: f64,
    pub header: HeaderInfo,
    pub payload_bytes: u32,
}

impl AirFrame {
    pub fn tx_end(&self) -> SimTime {
        self.tx_start + self.duration
    }
}

/// Arrival window of a frame at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub node: NodeId,
    pub start: SimTime,
    pub end: SimTime,
}

/// Arrival windows at every node except the sender.
pub fn propagate(frame: &AirFrame, delays: &DelayMatrix) -> Vec<Arrival> {
    (0..delays.len())
        .filter(|&n| n != frame.sender)
        .map(|node| {
            let start = frame.tx_start + delays.get(frame.sender, node);
            Arrival {
                node,
                start,
                end: start + frame.duration,
            }
        })
        .collect()
}

/// Symmetric one-way propagation delays between all nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DelayMatrix {
    /// Delays from geometry at `sound_speed`, multiplied by `scale`.
    pub fn from_positions(positions: &[Position], sound_speed: f64, scale: f64) -> Result<Self> {
        if !(sound_speed > 0.0) {
            return Err(Error::domain("sound speed", sound_speed, "must be > 0 m/s"));
        }
        if !(scale >= 0.0) {
            return Err(Error::domain("delay scale", scale, "must be >= 0"));
        }
        let n = positions.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                d[i * n + j] = positions[i].distance(&positions[j]) / sound_speed * scale;
            }
        }
        Ok(Self { n, d })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, a: NodeId, b: NodeId) -> f64 {
        self.d[a * self.n + b]
    }
}

/// Per-link ESNR source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EsnrProcess {
    Constant(f64),
    /// `(time, esnr)` breakpoints; each value holds from its time onwards.
    Trace(Vec<(f64, f64)>),
}

impl Default for EsnrProcess {
    fn default() -> Self {
        EsnrProcess::Constant(15.0)
    }
}

impl EsnrProcess {
    pub fn at(&self, t: SimTime) -> f64 {
        match self {
            EsnrProcess::Constant(v) => *v,
            EsnrProcess::Trace(points) => {
                let mut value = points[0].1;
                for &(bt, v) in points {
                    if bt <= t {
                        value = v;
                    } else {
                        break;
                    }
                }
                value
            }
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        match self {
            EsnrProcess::Constant(v) if !v.is_finite() => Err(Error::config(field, "must be finite")),
            EsnrProcess::Trace(p) if p.is_empty() => Err(Error::config(field, "trace needs at least one breakpoint")),
            EsnrProcess::Trace(p) if p.windows(2).any(|w| w[1].0 <= w[0].0) => {
                Err(Error::config(field, "trace times must be strictly increasing"))
            }
            EsnrProcess::Trace(p) if p.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) => {
                Err(Error::config(field, "trace values must be finite"))
            }
            _ => Ok(()),
        }
    }
}

/// Probability that a preamble is detected at a given link SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DetectionModel {
    #[default]
    Ideal,
    Fixed(f64),
    /// `(snr_db, probability)` points, linearly interpolated and clamped.
    Table(Vec<(f64, f64)>),
}

impl DetectionModel {
    pub fn probability(&self, snr_db: f64) -> f64 {
        match self {
            DetectionModel::Ideal => 1.0,
            DetectionModel::Fixed(p) => *p,
            DetectionModel::Table(points) => {
                let first = points[0];
                let last = points[points.len() - 1];
                if snr_db <= first.0 {
                    return first.1;
                }
                if snr_db >= last.0 {
                    return last.1;
                }
                let i = points.partition_point(|p| p.0 <= snr_db);
                let (a, b) = (points[i - 1], points[i]);
                a.1 + (b.1 - a.1) * (snr_db - a.0) / (b.0 - a.0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        match self {
            DetectionModel::Fixed(p) if !unit(*p) => {
                Err(Error::config("channel.detection", "probability must be in [0, 1]"))
            }
            DetectionModel::Table(t)
                if t.is_empty() || t.windows(2).any(|w| w[1].0 <= w[0].0) || t.iter().any(|p| !unit(p.1)) =>
            {
                Err(Error::config(
                    "channel.detection",
                    "table needs increasing SNRs and probabilities in [0, 1]",
                ))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    /// ESNR of every sensor-to-sink link unless overridden in `per_link`.
    pub esnr: EsnrProcess,
    /// Overrides keyed by sensor id.
    pub per_link: BTreeMap<String, EsnrProcess>,
    /// Std of the zero-mean Gaussian error on the ESNR reported in ACKs.
    pub esnr_jitter: f64,
    /// Packet error probability used instead of the PER model.
    pub forced_per: Option<f64>,
    pub detection: DetectionModel,
    pub link_budget: LinkBudgetParams,
    /// Decode the first frame of an overlap instead of declaring a collision.
    pub capture: bool,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            esnr: EsnrProcess::default(),
            per_link: BTreeMap::new(),
            esnr_jitter: 0.0,
            forced_per: None,
            detection: DetectionModel::Ideal,
            link_budget: LinkBudgetParams::default(),
            capture: false,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        self.esnr.validate("channel.esnr")?;
        for (k, p) in &self.per_link {
            let field = format!("channel.per_link.{k}");
            match k.parse::<NodeId>() {
                Ok(id) if id != crate::SINK => {}
                _ => return Err(Error::config(field, "key must be a sensor id (>= 1)")),
            }
            p.validate(&field)?;
        }
        if !(self.esnr_jitter >= 0.0) || !self.esnr_jitter.is_finite() {
            return Err(Error::config("channel.esnr_jitter", "must be finite and >= 0"));
        }
        if let Some(p) = self.forced_per {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config("channel.forced_per", format!("{p} is outside [0, 1]")));
            }
        }
        self.detection.validate()?;
        self.link_budget
            .validate()
            .map_err(|e| match e {
                Error::Config { field, message } => Error::config(format!("channel.link_budget.{field}"), message),
                other => other,
            })
    }

    /// True ESNR of the link from `sender` to the sink at time `t`.
    pub fn esnr_sample(&self, sender: NodeId, t: SimTime) -> Result<f64> {
        if sender == crate::SINK {
            return Err(Error::config("channel.esnr", "no ESNR process for the sink itself"));
        }
        let process = self.per_link.get(&sender.to_string()).unwrap_or(&self.esnr);
        Ok(process.at(t))
    }

    /// ESNR as reported back to the sender, with estimation jitter.
    pub fn reported_esnr<R: Rng>(&self, true_esnr: f64, rng: &mut R) -> f64 {
        if self.esnr_jitter > 0.0 {
            true_esnr + Normal::new(0.0, self.esnr_jitter).expect("validated std").sample(rng)
        } else {
            true_esnr
        }
    }
}

/// Per-arrival bookkeeping at the sink.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalMeta {
    pub frame: u64,
    pub sender: NodeId,
    pub kind: FrameKind,
    pub mode: ModeIndex,
    pub start: SimTime,
    pub end: SimTime,
}

/// Final disposition of one frame at the sink. Only the locked frame's
/// verdict asks for a response.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub frame: u64,
    pub sender: NodeId,
    pub outcome: ReceptionOutcome,
    pub respond: bool,
    /// `(sender, frame)` of every frame the response refers to.
    pub involved: Vec<(NodeId, u64)>,
}

#[derive(Debug, Clone)]
struct Lock {
    frame: u64,
    colliders: Vec<(u64, NodeId)>,
}

/// A locked frame that ended while later preambles were still arriving.
#[derive(Debug, Clone)]
struct Deferred {
    meta: ArrivalMeta,
    colliders: Vec<(u64, NodeId)>,
    waiting: BTreeSet<u64>,
}

/// Receive chain of the sink, driven by arrival-start, preamble-end and
/// arrival-end notifications in time order.
#[derive(Debug, Clone)]
pub struct SinkReceiver {
    preamble: f64,
    capture: bool,
    arrivals: BTreeMap<u64, ArrivalMeta>,
    ended: BTreeMap<u64, ArrivalMeta>,
    own_tx: Vec<(SimTime, SimTime)>,
    lock: Option<Lock>,
    deferred: Option<Deferred>,
    collided: BTreeMap<u64, Vec<NodeId>>,
}

impl SinkReceiver {
    pub fn new(preamble_duration: f64, capture: bool) -> Self {
        Self {
            preamble: preamble_duration,
            capture,
            arrivals: BTreeMap::new(),
            ended: BTreeMap::new(),
            own_tx: Vec::new(),
            lock: None,
            deferred: None,
            collided: BTreeMap::new(),
        }
    }

    pub fn locked_frame(&self) -> Option<u64> {
        self.lock.as_ref().map(|l| l.frame)
    }

    pub fn arrival_start(&mut self, meta: ArrivalMeta) {
        self.arrivals.insert(meta.frame, meta);
    }

    /// Record a transmission by the sink over `[start, end)`.
    pub fn transmit(&mut self, start: SimTime, end: SimTime) {
        self.own_tx.push((start, end));
    }

    fn others(&self, frame: u64) -> impl Iterator<Item = &ArrivalMeta> {
        self.arrivals
            .values()
            .chain(self.ended.values())
            .filter(move |a| a.frame != frame)
    }

    /// Whether the preamble of `frame` is usable: no other preamble starts
    /// within one preamble length and the sink is silent during it.
    pub fn preamble_clear(&self, frame: u64) -> bool {
        let Some(f) = self.arrivals.get(&frame) else {
            return false;
        };
        let pre_end = f.start + self.preamble;
        !self.others(frame).any(|g| (g.start - f.start).abs() < self.preamble)
            && !self.own_tx.iter().any(|&(s, e)| s < pre_end && e > f.start)
    }

    /// Preamble of `frame` has fully arrived; `detected` is the outcome of
    /// the detection draw at the link SNR. Returns the verdict of a frame
    /// that ended earlier and was waiting on this preamble.
    pub fn preamble_end(&mut self, frame: u64, detected: bool) -> Option<Verdict> {
        let usable = detected && self.preamble_clear(frame);
        if let Some(d) = self.deferred.as_mut().filter(|d| d.waiting.contains(&frame)) {
            d.waiting.remove(&frame);
            if usable {
                d.colliders.push((frame, self.arrivals[&frame].sender));
            }
            if !d.waiting.is_empty() {
                return None;
            }
            let d = self.deferred.take().expect("checked");
            return Some(self.conclude(d.meta, d.colliders, |_| None));
        }
        if !usable {
            return None;
        }
        let sender = self.arrivals[&frame].sender;
        match &mut self.lock {
            None => {
                self.lock = Some(Lock {
                    frame,
                    colliders: Vec::new(),
                })
            }
            Some(lock) => lock.colliders.push((frame, sender)),
        }
        None
    }

    fn overlapped(&self, f: &ArrivalMeta) -> bool {
        self.others(f.frame).any(|g| g.start < f.end && g.end > f.start)
            || self.own_tx.iter().any(|&(s, e)| s < f.end && e > f.start)
    }

    /// `frame` has fully arrived. `decode` is asked for the reported ESNR of
    /// a clean or captured frame and returns `None` on a decoding failure.
    /// The locked frame's verdict is held back while a preamble that began
    /// before its end is still arriving; [`SinkReceiver::preamble_end`]
    /// then returns it.
    pub fn arrival_end<F>(&mut self, frame: u64, decode: F) -> Option<Verdict>
    where
        F: FnOnce(&ArrivalMeta) -> Option<f64>,
    {
        let meta = self.arrivals.remove(&frame)?;
        self.ended.insert(frame, meta);
        if self.lock.as_ref().is_some_and(|l| l.frame == frame) {
            let lock = self.lock.take().expect("checked");
            let waiting: BTreeSet<u64> = self
                .arrivals
                .values()
                .filter(|g| g.start < meta.end && g.start + self.preamble >= meta.end)
                .map(|g| g.frame)
                .collect();
            if !waiting.is_empty() && !self.capture {
                self.deferred = Some(Deferred {
                    meta,
                    colliders: lock.colliders,
                    waiting,
                });
                self.prune(meta.end);
                return None;
            }
            let v = self.conclude(meta, lock.colliders, decode);
            self.prune(meta.end);
            return Some(v);
        }
        let outcome = if let Some(senders) = self.collided.remove(&frame) {
            ReceptionOutcome::CollisionDetected { senders }
        } else {
            ReceptionOutcome::Missed
        };
        self.prune(meta.end);
        Some(Verdict {
            frame,
            sender: meta.sender,
            outcome,
            respond: false,
            involved: Vec::new(),
        })
    }

    fn conclude<F>(&mut self, meta: ArrivalMeta, colliders: Vec<(u64, NodeId)>, decode: F) -> Verdict
    where
        F: FnOnce(&ArrivalMeta) -> Option<f64>,
    {
        let mut involved = vec![(meta.sender, meta.frame)];
        involved.extend(colliders.iter().map(|&(f, s)| (s, f)));
        let outcome = if !colliders.is_empty() && !self.capture {
            let mut senders = vec![meta.sender];
            senders.extend(colliders.iter().map(|c| c.1));
            for (f, _) in &colliders {
                self.collided.insert(*f, senders.clone());
            }
            ReceptionOutcome::CollisionDetected { senders }
        } else if colliders.is_empty() && self.overlapped(&meta) {
            ReceptionOutcome::PreambleOnly
        } else {
            match decode(&meta) {
                Some(esnr) => ReceptionOutcome::Decoded { esnr },
                None => ReceptionOutcome::PreambleOnly,
            }
        };
        if !matches!(outcome, ReceptionOutcome::CollisionDetected { .. }) {
            involved.truncate(1);
        }
        Verdict {
            frame: meta.frame,
            sender: meta.sender,
            outcome,
            respond: true,
            involved,
        }
    }

    /// Forget history that can no longer overlap anything still on the air.
    fn prune(&mut self, now: SimTime) {
        let horizon = self
            .arrivals
            .values()
            .map(|a| a.start - self.preamble)
            .fold(now, f64::min);
        self.ended.retain(|_, a| a.end > horizon);
        self.own_tx.retain(|&(_, e)| e > horizon);
    }
}

/// One sensor transmission as seen at the sink, for offline resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfflineArrival {
    pub sender: NodeId,
    pub start: SimTime,
    pub duration: f64,
}

/// Run the sink receive chain over a fixed set of arrivals and sink
/// transmissions. Returns one outcome per arrival, in input order.
pub fn resolve_reception<D, P>(
    arrivals: &[OfflineArrival],
    sink_tx: &[(SimTime, SimTime)],
    preamble_duration: f64,
    capture: bool,
    mut detect: D,
    mut decode: P,
) -> Vec<ReceptionOutcome>
where
    D: FnMut(&ArrivalMeta) -> bool,
    P: FnMut(&ArrivalMeta) -> Option<f64>,
{
    #[derive(Clone, Copy)]
    enum Step {
        End,
        Preamble,
        Start,
    }
    let metas: Vec<ArrivalMeta> = arrivals
        .iter()
        .enumerate()
        .map(|(i, a)| ArrivalMeta {
            frame: i as u64,
            sender: a.sender,
            kind: FrameKind::Data,
            mode: 1,
            start: a.start,
            end: a.start + a.duration,
        })
        .collect();
    let mut steps: Vec<(f64, u8, usize, Step)> = Vec::new();
    for (i, m) in metas.iter().enumerate() {
        steps.push((m.start, 2, i, Step::Start));
        steps.push((m.start + preamble_duration, 1, i, Step::Preamble));
        steps.push((m.end, 0, i, Step::End));
    }
    steps.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut rx = SinkReceiver::new(preamble_duration, capture);
    for &(s, e) in sink_tx {
        rx.transmit(s, e);
    }
    let mut out = vec![ReceptionOutcome::Missed; arrivals.len()];
    for (_, _, i, step) in steps {
        let m = metas[i];
        match step {
            Step::Start => rx.arrival_start(m),
            Step::Preamble => {
                let d = detect(&m);
                if let Some(v) = rx.preamble_end(m.frame, d) {
                    out[v.frame as usize] = v.outcome;
                }
            }
            Step::End => {
                if let Some(v) = rx.arrival_end(m.frame, &mut decode) {
                    out[i] = v.outcome;
                }
            }
        }
    }
    out
}
