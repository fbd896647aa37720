//! CSV rendering. Every file opens with the effective configuration as
//! `# `-prefixed TOML, so a result can be reproduced from its own header.

use std::fmt::Write;

use super::config::ScenarioConfig;
use super::metrics::RunMetrics;
use super::network::TraceRow;
use super::runner::{ExperimentTable, METRICS};
use crate::chirp::CurvePoint;
use crate::Result;

fn config_block(cfg: &ScenarioConfig, out: &mut String) -> Result<()> {
    out.push_str("# effective configuration\n");
    for line in cfg.to_toml()?.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("# traffic.offered_load is the aggregate arrival rate over all sensors (packets/s)\n");
    Ok(())
}

pub fn render_table(cfg: &ScenarioConfig, table: &ExperimentTable) -> Result<String> {
    let mut out = String::new();
    config_block(cfg, &mut out)?;
    let _ = writeln!(out, "# family = {}", table.family);
    let mut header: Vec<String> = table.family.grid_columns().iter().map(|s| s.to_string()).collect();
    header.push("policy".into());
    for m in METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    header.push("replications".into());
    out.push_str(&header.join(","));
    out.push('\n');
    for row in &table.rows {
        let mut cells: Vec<String> = row.grid.iter().map(|g| g.to_string()).collect();
        cells.push(row.policy.clone());
        for s in &row.stats {
            cells.push(s.mean.to_string());
            cells.push(s.std.to_string());
        }
        cells.push(row.replications.to_string());
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn render_run(cfg: &ScenarioConfig, m: &RunMetrics) -> Result<String> {
    let mut out = String::new();
    config_block(cfg, &mut out)?;
    out.push_str("metric,value\n");
    let rows: [(&str, String); 18] = [
        ("generated", m.generated.to_string()),
        ("delivered", m.delivered.to_string()),
        ("dropped", m.dropped.to_string()),
        ("in_flight_at_end", m.in_flight_at_end.to_string()),
        ("collisions", m.collisions.to_string()),
        ("retransmissions", m.retransmissions.to_string()),
        ("timeouts", m.timeouts.to_string()),
        ("nack1", m.nack1.to_string()),
        ("nack2", m.nack2.to_string()),
        ("pauses", m.pauses.to_string()),
        ("delivered_bits", m.delivered_bits.to_string()),
        ("sim_time", m.sim_time.to_string()),
        ("normalized_throughput", m.window_throughput().to_string()),
        ("goodput_bps", m.window_goodput().to_string()),
        ("mean_latency", m.mean_latency().to_string()),
        ("mean_link_delay", m.mean_link_delay.to_string()),
        ("control_overlaps", m.control_overlaps.to_string()),
        ("window_start", m.window.start.to_string()),
    ];
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    for (mode, n) in m.mode_usage.iter().enumerate().skip(1) {
        let _ = writeln!(out, "mode{mode}_deliveries,{n}");
    }
    Ok(out)
}

pub fn render_curve(cfg: &ScenarioConfig, points: &[CurvePoint]) -> Result<String> {
    let mut out = String::new();
    config_block(cfg, &mut out)?;
    out.push_str("snr_db,probability,trials\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.snr_db, p.probability, p.trials);
    }
    Ok(out)
}

pub fn render_trace(rows: &[TraceRow]) -> String {
    let mut out = String::from("time,node,phase_before,event,phase_after,actions\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},\"{}\"",
            r.time,
            r.node,
            r.phase_before,
            r.event,
            r.phase_after,
            r.actions.join(";")
        );
    }
    out
}
