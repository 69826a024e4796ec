//! Loss-trace CSV: one row per accepted iteration.

use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::loss::LossTerms;

#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iteration: u64,
    pub terms: LossTerms,
    pub total: f64,
}

pub const TRACE_HEADER: &str = "iteration,l_rw,l_ds,l_fw,l_fs,l_gc,total";

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iteration, r.terms.l_rw, r.terms.l_ds, r.terms.l_fw, r.terms.l_fs, r.terms.l_gc, r.total
        ));
    }
    fs::write(path, out)?;
    Ok(())
}
