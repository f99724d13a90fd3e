//! CSV and key-value writers for simulation traces.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::barrier::ChainKind;
use crate::simulator::{audit_invariance, AuditReport, TraceLog};
use crate::Result;

pub const TRACE_FILE: &str = "trace.csv";
pub const AUDIT_FILE: &str = "audit.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const FIGURE_PSI_FILE: &str = "figure_psi.csv";
pub const FIGURE_TRAJ_FILE: &str = "figure_traj.csv";

const CHAIN_FIELDS: [&str; 6] = ["L", "m_hat", "correction", "mbar", "omega", "slack"];

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.12e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| format!("{x}"))
}

/// One row per sampling step. Inactive chains leave their columns empty.
pub fn trace_csv(trace: &TraceLog) -> String {
    let mut header: Vec<String> = vec!["t".into()];
    header.extend(trace.state_names.iter().cloned());
    header.extend(trace.input_names.iter().cloned());
    header.push("status".into());
    for c in &trace.chains {
        for l in 0..c.relative_degree {
            header.push(format!("{}.psi{l}", c.name));
        }
        for f in CHAIN_FIELDS {
            header.push(format!("{}.{f}", c.name));
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for rec in &trace.steps {
        let mut row: Vec<String> = vec![num(rec.t)];
        row.extend(rec.state.iter().map(|v| num(*v)));
        row.extend(rec.input.iter().map(|v| num(*v)));
        row.push(rec.status.as_str().to_string());
        for (info, cs) in trace.chains.iter().zip(&rec.chains) {
            match cs {
                Some(cs) => {
                    row.extend(cs.levels.iter().map(|v| num(*v)));
                    for v in [
                        cs.bound,
                        cs.m_hat,
                        cs.correction,
                        cs.m_bar,
                        cs.omega,
                        cs.slack,
                    ] {
                        row.push(num(v));
                    }
                }
                None => row.extend(std::iter::repeat_n(
                    String::new(),
                    info.relative_degree + CHAIN_FIELDS.len(),
                )),
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Dense-grid samples: `t, chain_id, psi_top, psi0`.
pub fn audit_csv(trace: &TraceLog) -> String {
    let mut out = String::from("t,chain_id,psi_top,psi0\n");
    for d in &trace.dense {
        let top = d.levels[d.levels.len() - 1];
        let _ = writeln!(
            out,
            "{},{},{},{}",
            num(d.t),
            trace.chains[d.chain].name,
            num(top),
            num(d.levels[0])
        );
    }
    out
}

pub fn summary_text(trace: &TraceLog, audit: &AuditReport) -> String {
    let s = &trace.summary;
    let mut out = String::new();
    let _ = writeln!(out, "controller={}", s.controller.as_str());
    let _ = writeln!(out, "dt={}", trace.dt);
    let _ = writeln!(out, "steps={}", s.steps);
    let _ = writeln!(out, "optimal_steps={}", s.optimal_steps);
    let _ = writeln!(out, "infeasible_steps={}", s.infeasible_steps);
    let _ = writeln!(out, "set_exit_steps={}", s.set_exit_steps);
    let _ = writeln!(out, "dominance_violations={}", s.dominance_violations);
    let _ = writeln!(out, "tube_violations={}", s.tube_violations);
    let _ = writeln!(out, "audit_steps_checked={}", audit.steps_checked);
    let _ = writeln!(out, "audit_violations={}", audit.violations.len());
    let fin: Vec<String> = s.final_state.iter().map(|v| format!("{v}")).collect();
    let _ = writeln!(out, "final_state={}", fin.join(" "));
    for c in &s.chains {
        let p = &c.name;
        let kind = match c.kind {
            ChainKind::Safety => "safety",
            ChainKind::Reach => "reach",
        };
        let _ = writeln!(out, "{p}.kind={kind}");
        let _ = writeln!(out, "{p}.active_steps={}", c.active_steps);
        for (l, v) in c.min_levels.iter().enumerate() {
            let _ = writeln!(out, "{p}.min_psi{l}={v}");
        }
        let _ = writeln!(out, "{p}.first_violation={}", opt(c.first_violation));
        if c.kind == ChainKind::Reach {
            let _ = writeln!(out, "{p}.reach_time={}", opt(c.reach_time));
            let _ = writeln!(
                out,
                "{p}.remain_max_distance={}",
                opt(c.remain_max_distance)
            );
        }
        let _ = writeln!(out, "{p}.dominance_violations={}", c.dominance_violations);
        let _ = writeln!(out, "{p}.tube_violations={}", c.tube_violations);
        if c.min_omega.is_finite() {
            let _ = writeln!(out, "{p}.min_omega={}", c.min_omega);
        }
    }
    for v in &audit.violations {
        let _ = writeln!(
            out,
            "violation={} step={} check={} tau={} value={}",
            v.chain,
            v.step,
            v.check.as_str(),
            v.tau,
            v.value
        );
    }
    out
}

/// Every level of every chain on the dense grid, in long format.
pub fn figure_psi_csv(trace: &TraceLog) -> String {
    let width = trace
        .chains
        .iter()
        .map(|c| c.relative_degree)
        .max()
        .unwrap_or(0);
    let mut out = String::from("t,chain");
    for l in 0..width {
        let _ = write!(out, ",psi{l}");
    }
    out.push('\n');
    for d in &trace.dense {
        let _ = write!(out, "{},{}", num(d.t), trace.chains[d.chain].name);
        for l in 0..width {
            out.push(',');
            if let Some(v) = d.levels.get(l) {
                out.push_str(&num(*v));
            }
        }
        out.push('\n');
    }
    out
}

pub fn figure_traj_csv(trace: &TraceLog) -> String {
    let mut out = String::from("t");
    for n in &trace.state_names {
        let _ = write!(out, ",{n}");
    }
    out.push('\n');
    for (t, x) in &trace.dense_states {
        out.push_str(&num(*t));
        for v in x.iter() {
            out.push(',');
            out.push_str(&num(*v));
        }
        out.push('\n');
    }
    out
}

/// Writes trace, audit and summary files (and figure series if asked) into
/// `dir`, returning the audit report.
pub fn write_run(trace: &TraceLog, dir: &Path, figures: bool) -> Result<AuditReport> {
    fs::create_dir_all(dir)?;
    let audit = audit_invariance(trace, trace.audit_tol);
    fs::write(dir.join(TRACE_FILE), trace_csv(trace))?;
    fs::write(dir.join(AUDIT_FILE), audit_csv(trace))?;
    fs::write(dir.join(SUMMARY_FILE), summary_text(trace, &audit))?;
    if figures {
        fs::write(dir.join(FIGURE_PSI_FILE), figure_psi_csv(trace))?;
        fs::write(dir.join(FIGURE_TRAJ_FILE), figure_traj_csv(trace))?;
    }
    Ok(audit)
}
