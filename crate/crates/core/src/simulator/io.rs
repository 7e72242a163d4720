use std::io::Write;

use super::Trace;
use crate::error::Result;

/// Columns `t, x, y_1, …, y_n`, one row per stored snapshot and node.
pub fn trace_to_csv(trace: &Trace, hash: &str, mut out: impl Write) -> Result<()> {
    writeln!(out, "# config_hash={}", hash)?;
    let n = trace.first().n();
    let names: Vec<String> = (1..=n).map(|i| format!("y_{}", i)).collect();
    writeln!(out, "t,x,{}", names.join(","))?;
    for snap in &trace.snapshots {
        for k in 0..snap.grid.nodes() {
            write!(out, "{:.16e},{:.16e}", snap.t, snap.grid.x(k))?;
            for c in &snap.values {
                write!(out, ",{:.16e}", c[k])?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Columns `t, l2_norm, feedback_sup`, one row per step.
pub fn norms_to_csv(trace: &Trace, hash: &str, mut out: impl Write) -> Result<()> {
    writeln!(out, "# config_hash={}", hash)?;
    writeln!(out, "t,l2_norm,feedback_sup")?;
    for r in &trace.records {
        writeln!(out, "{:.16e},{:.16e},{:.16e}", r.t, r.l2, r.feedback_sup)?;
    }
    Ok(())
}
