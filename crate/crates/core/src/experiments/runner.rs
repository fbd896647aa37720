use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::config::ScenarioConfig;
use super::metrics::{pt_ratio, RunMetrics, Summary};
use super::network::simulate;
use crate::mac::ModePolicy;
use crate::medium::EsnrProcess;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    LoadSweep,
    PtSweep,
    PerSweep,
    ModeCompare,
    AdaptiveVsFixed,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::LoadSweep,
        Family::PtSweep,
        Family::PerSweep,
        Family::ModeCompare,
        Family::AdaptiveVsFixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::LoadSweep => "load_sweep",
            Family::PtSweep => "pt_sweep",
            Family::PerSweep => "per_sweep",
            Family::ModeCompare => "mode_compare",
            Family::AdaptiveVsFixed => "adaptive_vs_fixed",
        }
    }

    /// Grid columns preceding the metric columns in the CSV.
    pub fn grid_columns(self) -> &'static [&'static str] {
        match self {
            Family::LoadSweep => &["node_count", "offered_load"],
            Family::PtSweep => &["node_count", "delay_scale"],
            Family::PerSweep => &["node_count", "forced_per"],
            Family::ModeCompare => &["node_count", "mode"],
            Family::AdaptiveVsFixed => &["esnr_db"],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::config("family", format!("unknown experiment family `{s}`")))
    }
}

/// Per-replication quantities reported for every grid point.
pub const METRICS: [&str; 10] = [
    "normalized_throughput",
    "goodput_bps",
    "delivered",
    "dropped",
    "collisions",
    "retransmissions",
    "timeouts",
    "pt_ratio",
    "mean_latency",
    "control_overlaps",
];

fn metric_values(m: &RunMetrics, t_data_ref: f64) -> [f64; 10] {
    [
        m.window_throughput(),
        m.window_goodput(),
        m.delivered as f64,
        m.dropped as f64,
        m.collisions as f64,
        m.retransmissions as f64,
        m.timeouts as f64,
        pt_ratio(m.mean_link_delay, t_data_ref),
        m.mean_latency(),
        m.control_overlaps as f64,
    ]
}

/// One grid point of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub grid: Vec<f64>,
    /// `adaptive` or `fixed<m>`.
    pub policy: String,
    pub stats: Vec<Summary>,
    pub replications: usize,
    /// Every replication kept its counters consistent and raised no
    /// control-frame overlap.
    pub assertions_held: bool,
}

impl ResultRow {
    pub fn metric(&self, name: &str) -> Summary {
        let i = METRICS.iter().position(|m| *m == name).expect("known metric");
        self.stats[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentTable {
    pub family: Family,
    pub rows: Vec<ResultRow>,
}

impl ExperimentTable {
    pub fn assertions_held(&self) -> bool {
        self.rows.iter().all(|r| r.assertions_held)
    }

    pub fn find(&self, grid: &[f64], policy: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.grid == grid && r.policy == policy)
    }
}

pub fn policy_name(p: ModePolicy) -> String {
    match p {
        ModePolicy::Adaptive => "adaptive".into(),
        ModePolicy::Fixed(m) => format!("fixed{m}"),
    }
}

struct Point {
    grid: Vec<f64>,
    cfg: ScenarioConfig,
    t_data_ref: f64,
}

fn saturated(base: &ScenarioConfig, n: usize) -> ScenarioConfig {
    let mut c = base.clone();
    c.node_count = n;
    c.topology.positions.clear();
    c.traffic.offered_load = base.sweeps.saturation_load;
    c
}

fn reference_duration(c: &ScenarioConfig) -> Result<f64> {
    let mode = match c.mac.policy {
        ModePolicy::Fixed(m) => m,
        ModePolicy::Adaptive => c.mac.initial_mode,
    };
    c.phy.packet_duration(mode, c.traffic.payload_bytes)
}

fn points(family: Family, base: &ScenarioConfig) -> Result<Vec<Point>> {
    let s = &base.sweeps;
    let mut out = Vec::new();
    let mut push = |grid: Vec<f64>, cfg: ScenarioConfig| -> Result<()> {
        let t_data_ref = reference_duration(&cfg)?;
        out.push(Point { grid, cfg, t_data_ref });
        Ok(())
    };
    match family {
        Family::LoadSweep => {
            for &n in &s.node_counts {
                for &load in &s.loads {
                    let mut c = saturated(base, n);
                    c.traffic.offered_load = load;
                    push(vec![n as f64, load], c)?;
                }
            }
        }
        Family::PtSweep => {
            for &n in &s.node_counts {
                for &scale in &s.delay_scales {
                    let mut c = saturated(base, n);
                    c.topology.delay_scale = scale;
                    push(vec![n as f64, scale], c)?;
                }
            }
        }
        Family::PerSweep => {
            for &n in &s.node_counts {
                for &p in &s.pers {
                    let mut c = saturated(base, n);
                    c.channel.forced_per = Some(p);
                    push(vec![n as f64, p], c)?;
                }
            }
        }
        Family::ModeCompare => {
            for &n in &s.node_counts {
                for &m in &s.modes {
                    let mut c = saturated(base, n);
                    c.mac.policy = ModePolicy::Fixed(m);
                    push(vec![n as f64, m as f64], c)?;
                }
            }
        }
        Family::AdaptiveVsFixed => {
            let policies = std::iter::once(ModePolicy::Adaptive).chain(s.modes.iter().map(|&m| ModePolicy::Fixed(m)));
            for &esnr in &s.esnrs {
                for policy in policies.clone() {
                    let mut c = saturated(base, s.adaptive_node_count);
                    c.channel.esnr = EsnrProcess::Constant(esnr);
                    c.channel.per_link.clear();
                    c.mac.policy = policy;
                    c.mac.cross_layer = policy == ModePolicy::Adaptive;
                    c.mac.warmup_deliveries = s.adaptive_warmup;
                    push(vec![esnr], c)?;
                }
            }
        }
    }
    Ok(out)
}

/// Run every grid point of `family` for `sweeps.replications` seeds
/// (`seed`, `seed + 1`, ...). Rows come back in grid order.
pub fn run_experiment(family: Family, base: &ScenarioConfig) -> Result<ExperimentTable> {
    base.validate()?;
    let pts = points(family, base)?;
    if pts.is_empty() {
        return Err(Error::config(
            format!("sweeps ({family})"),
            "grid is empty",
        ));
    }
    let reps = base.sweeps.replications;
    let jobs: Vec<(usize, u64)> = (0..pts.len())
        .flat_map(|i| (0..reps as u64).map(move |r| (i, r)))
        .collect();
    let results: Vec<Result<RunMetrics>> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let mut c = pts[i].cfg.clone();
            c.seed = base.seed.wrapping_add(r);
            simulate(&c)
        })
        .collect();
    let mut per_point: Vec<Vec<RunMetrics>> = vec![Vec::with_capacity(reps); pts.len()];
    for ((i, _), res) in jobs.iter().zip(results) {
        per_point[*i].push(res?);
    }
    let rows = pts
        .iter()
        .zip(per_point)
        .map(|(p, runs)| {
            let values: Vec<[f64; 10]> = runs.iter().map(|m| metric_values(m, p.t_data_ref)).collect();
            let stats = (0..METRICS.len())
                .map(|k| Summary::of(&values.iter().map(|v| v[k]).collect::<Vec<_>>()))
                .collect();
            ResultRow {
                grid: p.grid.clone(),
                policy: policy_name(p.cfg.mac.policy),
                stats,
                replications: runs.len(),
                assertions_held: runs.iter().all(|m| m.conserved() && m.control_overlaps == 0),
            }
        })
        .collect();
    Ok(ExperimentTable { family, rows })
}
