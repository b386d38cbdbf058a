//! Measured attenuation matrices.
//!
//! ```text
//! # rows and columns follow the scenario's radio order
//! t 0
//! 0    62.5 71
//! 62.5 0    58
//! 71   58   0
//! t 30
//! ...
//! ```
//!
//! A file without `t` lines holds one matrix that applies at all times.

use super::{ChanemError, EmpiricalFrame};

pub fn parse_matrix_file(text: &str, n: usize) -> Result<Vec<EmpiricalFrame>, ChanemError> {
    let bad = |line: usize, m: String| ChanemError::Scenario(format!("matrix file line {line}: {m}"));
    let mut frames: Vec<EmpiricalFrame> = Vec::new();
    let mut current: Option<EmpiricalFrame> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("t ") {
            let t_s: f64 = rest.trim().parse().map_err(|_| bad(i + 1, format!("bad time {rest:?}")))?;
            frames.extend(current.take());
            current = Some(EmpiricalFrame { t_s, a_db: Vec::new() });
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| bad(i + 1, format!("bad value {v:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        current
            .get_or_insert_with(|| EmpiricalFrame { t_s: 0.0, a_db: Vec::new() })
            .a_db
            .push(row);
    }
    frames.extend(current);
    check_frames(&frames, n)?;
    Ok(frames)
}

pub fn format_matrix_file(frames: &[EmpiricalFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        out.push_str(&format!("t {}\n", f.t_s));
        for row in &f.a_db {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
    }
    out
}

pub(super) fn check_frames(frames: &[EmpiricalFrame], n: usize) -> Result<(), ChanemError> {
    let bad = |m: String| Err(ChanemError::Scenario(m));
    if frames.is_empty() {
        return bad("empirical model has no frames".into());
    }
    let mut last = f64::NEG_INFINITY;
    for f in frames {
        if !(f.t_s >= 0.0 && f.t_s.is_finite()) || f.t_s <= last {
            return bad(format!("frame times must be non-negative and increasing, got {}", f.t_s));
        }
        last = f.t_s;
        if f.a_db.len() != n || f.a_db.iter().any(|r| r.len() != n) {
            return bad(format!("frame at {} s is not {n}x{n}", f.t_s));
        }
        for (i, row) in f.a_db.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if i != j && !(v >= 0.0 && v.is_finite()) {
                    return bad(format!("frame at {} s: a[{i}][{j}] = {v} must be non-negative", f.t_s));
                }
            }
        }
    }
    Ok(())
}
