//! Per-tick trace rows and their JSONL encoding.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::feedback::{ActiveSide, FeedbackAction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub x: f64,
    pub z: f64,
    /// Altitude mapped from the input.
    pub commanded_z: f64,
    /// Command after clutch restraint (equal to `commanded_z` when nothing is engaged).
    pub applied_z: f64,
    /// `None` before the course entrance.
    pub centerline_z: Option<f64>,
    pub colliding: bool,
    pub feedback_state: ActiveSide,
    pub action: FeedbackAction,
    /// Input angle consumed on this tick, degrees.
    pub angle: f64,
}

impl TraceRow {
    pub fn error(&self) -> Option<f64> {
        self.centerline_z.map(|c| self.z - c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace row serializes")
    }
}

pub fn write_jsonl<W: Write>(rows: &[TraceRow], mut out: W) -> std::io::Result<()> {
    for r in rows {
        out.write_all(r.to_json().as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// The exact bytes a trace serializes to.
pub fn trace_bytes(rows: &[TraceRow]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(rows.len() * 160);
    write_jsonl(rows, &mut buf).expect("writing to memory");
    buf
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<TraceRow>, String> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(rows)
}

pub fn samples_xz(rows: &[TraceRow]) -> Vec<(f64, f64)> {
    rows.iter().map(|r| (r.x, r.z)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::ArrowDir;

    #[test]
    fn row_schema() {
        let row = TraceRow {
            t: 0.01,
            x: -3.95,
            z: 10.0,
            commanded_z: 10.5,
            applied_z: 10.5,
            centerline_z: None,
            colliding: false,
            feedback_state: ActiveSide::HighSide,
            action: FeedbackAction::Arrow { dir: ArrowDir::Down },
            angle: 100.0,
        };
        let json = row.to_json();
        assert_eq!(
            json,
            r#"{"t":0.01,"x":-3.95,"z":10.0,"commanded_z":10.5,"applied_z":10.5,"centerline_z":null,"colliding":false,"feedback_state":"high_side","action":{"type":"arrow","dir":"down"},"angle":100.0}"#
        );
        let back = read_jsonl(trace_bytes(&[row, row]).as_slice()).unwrap();
        assert_eq!(back, vec![row, row]);
    }
}
