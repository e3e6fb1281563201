//! Plain-text artifact formats. Floats are written with Rust's shortest
//! round-trip formatting, so reading a file back reproduces every value bit
//! for bit. See FORMATS.md for the layouts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::barrier::{barrier_from_text, barrier_to_text, RffBarrier, RobustnessConsts};
use crate::datasets::DemoRecord;
use crate::error::{Error, Result};
use crate::sim::{CompareRow, RolloutTrace};

pub const DEMO_MAGIC: &str = "# rocbf-demos 1";

fn join(vals: &[f64]) -> String {
    vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_row(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {lineno}: `{s}`: {e}")))
        })
        .collect()
}

/// Demonstrations as `t exo u… y…` rows under a two-line header.
pub fn demos_to_text(demos: &[DemoRecord]) -> Result<String> {
    let (m, p) = demos.first().map_or((0, 0), |d| (d.u.len(), d.y.len()));
    if demos.iter().any(|d| d.u.len() != m || d.y.len() != p) {
        return Err(Error::InvalidArgument("demonstrations have mixed dimensions".into()));
    }
    let mut s = String::with_capacity(demos.len() * 16 * (2 + m + p));
    writeln!(s, "{DEMO_MAGIC} inputs {m} outputs {p}").unwrap();
    let mut cols = vec!["t".to_string(), "exo".to_string()];
    cols.extend((0..m).map(|j| format!("u{j}")));
    cols.extend((0..p).map(|j| format!("y{j}")));
    writeln!(s, "# {}", cols.join(" ")).unwrap();
    for d in demos {
        writeln!(s, "{} {} {} {}", d.t, d.exo, join(&d.u), join(&d.y)).unwrap();
    }
    Ok(s)
}

pub fn demos_from_text(text: &str) -> Result<Vec<DemoRecord>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse("empty demonstration file".into()))?;
    let rest = header
        .strip_prefix(DEMO_MAGIC)
        .ok_or_else(|| Error::Parse("not a demonstration file".into()))?;
    let f: Vec<&str> = rest.split_whitespace().collect();
    let (m, p) = match f.as_slice() {
        ["inputs", m, "outputs", p] => (
            m.parse::<usize>().map_err(|e| Error::Parse(format!("inputs: {e}")))?,
            p.parse::<usize>().map_err(|e| Error::Parse(format!("outputs: {e}")))?,
        ),
        _ => return Err(Error::Parse("malformed demonstration header".into())),
    };
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let row = parse_row(line, i + 1)?;
        if row.len() != 2 + m + p {
            return Err(Error::Parse(format!(
                "line {}: expected {} columns, found {}",
                i + 1,
                2 + m + p,
                row.len()
            )));
        }
        out.push(DemoRecord::new(row[0], row[1], row[2..2 + m].to_vec(), row[2 + m..].to_vec()));
    }
    Ok(out)
}

/// One line per step; `feasible` is written as 0/1.
pub fn trace_to_text(trace: &RolloutTrace) -> String {
    let mut s = String::new();
    let Some(first) = trace.steps.first() else {
        writeln!(s, "t").unwrap();
        return s;
    };
    let mut cols = vec!["t".to_string(), "exo".to_string()];
    cols.extend((0..first.x.len()).map(|j| format!("x{j}")));
    cols.extend((0..first.y.len()).map(|j| format!("y{j}")));
    cols.extend((0..first.u.len()).map(|j| format!("u{j}")));
    cols.extend(["h", "q", "feasible", "px", "py", "psi"].map(String::from));
    writeln!(s, "{}", cols.join(" ")).unwrap();
    for st in &trace.steps {
        writeln!(
            s,
            "{} {} {} {} {} {} {} {} {}",
            st.t,
            st.exo,
            join(&st.x),
            join(&st.y),
            join(&st.u),
            st.h,
            st.q,
            u8::from(st.feasible),
            join(&st.pose)
        )
        .unwrap();
    }
    s
}

pub fn compare_to_text(rows: &[CompareRow]) -> String {
    let mut s = String::from("c_e0 theta_e0 metric\n");
    for r in rows {
        writeln!(s, "{} {} {}", r.c_e0, r.theta_e0, r.metric).unwrap();
    }
    s
}

pub fn compare_from_text(text: &str) -> Result<Vec<CompareRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split_whitespace().eq(["c_e0", "theta_e0", "metric"]) => {}
        _ => return Err(Error::Parse("missing comparison header".into())),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match parse_row(l, i + 1)?.as_slice() {
            [c, t, m] => Ok(CompareRow {
                c_e0: *c,
                theta_e0: *t,
                metric: *m,
            }),
            _ => Err(Error::Parse(format!("line {}: expected 3 columns", i + 1))),
        })
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

pub fn write_demos(path: &Path, demos: &[DemoRecord]) -> Result<()> {
    write_text(path, &demos_to_text(demos)?)
}

pub fn read_demos(path: &Path) -> Result<Vec<DemoRecord>> {
    demos_from_text(&read_text(path)?)
}

pub fn write_barrier(path: &Path, bar: &RffBarrier, consts: &RobustnessConsts) -> Result<()> {
    write_text(path, &barrier_to_text(bar, consts))
}

pub fn read_barrier(path: &Path) -> Result<(RffBarrier, RobustnessConsts)> {
    barrier_from_text(&read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_round_trip_is_exact() {
        let demos = vec![
            DemoRecord::new(0.0, 0.1, vec![0.3], vec![1.0 / 3.0, -2.5e-17, 7.0]),
            DemoRecord::new(0.02, f64::MIN_POSITIVE, vec![-1.0], vec![0.1 + 0.2, 1e300, -0.0]),
        ];
        let back = demos_from_text(&demos_to_text(&demos).unwrap()).unwrap();
        assert_eq!(back, demos);
    }

    #[test]
    fn demo_column_count_checked() {
        let bad = format!("{DEMO_MAGIC} inputs 1 outputs 2\n0 0 1 2\n");
        assert!(matches!(demos_from_text(&bad), Err(Error::Parse(_))));
        assert!(demos_from_text("hello\n").is_err());
    }

    #[test]
    fn compare_round_trip() {
        let rows = vec![CompareRow {
            c_e0: -0.75,
            theta_e0: 0.3,
            metric: 0.0125,
        }];
        assert_eq!(compare_from_text(&compare_to_text(&rows)).unwrap(), rows);
    }
}
