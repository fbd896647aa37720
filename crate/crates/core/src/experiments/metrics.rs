/// Counters collected over one simulation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Packets still queued (including any on the air) when the run ended.
    pub in_flight_at_end: u64,
    /// Frames the sink classified as collided.
    pub collisions: u64,
    pub retransmissions: u64,
    pub timeouts: u64,
    pub nack1: u64,
    pub nack2: u64,
    pub pauses: u64,
    pub delivered_bits: u64,
    /// Summed DATA airtime of delivered packets, seconds.
    pub delivered_airtime: f64,
    /// Summed generation-to-ACK latency of delivered packets, seconds.
    pub total_latency: f64,
    pub sim_time: f64,
    /// Deliveries per mode index.
    pub mode_usage: [u64; 7],
    pub delivered_per_node: Vec<u64>,
    /// Mean sensor-to-sink propagation delay, seconds.
    pub mean_link_delay: f64,
    /// Times two ACK/NACK frames overlapped at some node.
    pub control_overlaps: u64,
    pub window: MeasuredWindow,
}

/// Counters restricted to the measured window after warm-up.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeasuredWindow {
    pub start: f64,
    pub duration: f64,
    pub delivered: u64,
    pub delivered_bits: u64,
    pub delivered_airtime: f64,
}

impl RunMetrics {
    /// `delivered + dropped + in_flight_at_end == generated`.
    pub fn conserved(&self) -> bool {
        self.delivered + self.dropped + self.in_flight_at_end == self.generated
    }

    /// Fraction of the measured window occupied by successfully delivered
    /// DATA airtime. For a fixed mode this is `delivered · t_data / time`.
    pub fn window_throughput(&self) -> f64 {
        ratio(self.window.delivered_airtime, self.window.duration)
    }

    pub fn window_goodput(&self) -> f64 {
        ratio(self.window.delivered_bits as f64, self.window.duration)
    }

    pub fn mean_latency(&self) -> f64 {
        ratio(self.total_latency, self.delivered as f64)
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.0
    }
}

/// `delivered × t_data_ref / sim_time`.
pub fn normalized_throughput(delivered: u64, t_data_ref: f64, sim_time: f64) -> f64 {
    ratio(delivered as f64 * t_data_ref, sim_time)
}

/// Delivered payload bits per second.
pub fn goodput(delivered_bits: u64, sim_time: f64) -> f64 {
    ratio(delivered_bits as f64, sim_time)
}

/// Mean propagation delay over data airtime.
pub fn pt_ratio(avg_delay: f64, t_data: f64) -> f64 {
    ratio(avg_delay, t_data)
}

/// Sample mean and standard deviation (n − 1 denominator).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }

    /// Two-sigma guard band for comparing two means of `n` replications each.
    pub fn band(&self, other: &Summary, n: usize) -> f64 {
        2.0 * ((self.std.powi(2) + other.std.powi(2)) / n as f64).sqrt()
    }
}
