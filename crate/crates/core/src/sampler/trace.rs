//! Per-iteration chain output and its line-oriented text format.
//!
//! ```text
//! iter <t> <k_s> <k_b> <eta_s> <eta_b> <n_src>
//! mu <x> <y> <count> [weight]
//! bg <l1> .. <l5> <b1> .. <b5> <count> [weight]
//! delta <delta>
//! ```
//!
//! `mu` and `bg` lines belong to the preceding `iter` line; `bg` and `delta`
//! lines are optional. Lines starting with `#` are comments.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bspline::{BackgroundComponent, KnotVector, N_KNOTS};
use crate::error::{Error, Result};

use super::Diagnostics;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceDraw {
    pub x: f64,
    pub y: f64,
    pub count: usize,
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundDraw {
    pub comp: BackgroundComponent<f64>,
    pub count: usize,
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: u64,
    pub k_s: usize,
    pub k_b: usize,
    /// `NaN` under the spatial-only model.
    pub eta_s: f64,
    pub eta_b: f64,
    pub n_src: usize,
    pub sources: Vec<SourceDraw>,
    pub background: Vec<BackgroundDraw>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub diagnostics: Diagnostics,
}

pub const TRACE_HEADER: &str = "# iter t k_s k_b eta_s eta_b n_src | mu x y count [w] | bg l1..l5 b1..b5 count [w] | delta d";

fn opt(w: Option<f64>) -> String {
    w.map_or(String::new(), |v| format!(" {v}"))
}

pub fn format_record(r: &TraceRecord, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "iter {} {} {} {} {} {}", r.iter, r.k_s, r.k_b, r.eta_s, r.eta_b, r.n_src)?;
    for s in &r.sources {
        writeln!(out, "mu {} {} {}{}", s.x, s.y, s.count, opt(s.weight))?;
    }
    for b in &r.background {
        write!(out, "bg")?;
        for v in b.comp.ell.0.iter().chain(b.comp.b.0.iter()) {
            write!(out, " {v}")?;
        }
        writeln!(out, " {}{}", b.count, opt(b.weight))?;
    }
    if let Some(d) = r.delta {
        writeln!(out, "delta {d}")?;
    }
    Ok(())
}

/// Append-only trace file.
pub struct TraceWriter {
    path: std::path::PathBuf,
    out: BufWriter<std::fs::File>,
}

impl TraceWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut out = crate::io::create(&path)?;
        writeln!(out, "{TRACE_HEADER}").map_err(|e| Error::io(&path, e))?;
        Ok(TraceWriter { path, out })
    }

    /// Reopen an existing trace, dropping records after iteration `keep_through`.
    pub fn resume(path: impl AsRef<Path>, keep_through: u64) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let kept: Vec<TraceRecord> = read_trace(&path)?.into_iter().filter(|r| r.iter <= keep_through).collect();
        let mut w = TraceWriter::create(&path)?;
        for r in &kept {
            w.write(r)?;
        }
        Ok(w)
    }

    pub fn write(&mut self, r: &TraceRecord) -> Result<()> {
        format_record(r, &mut self.out).map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_trace(path: impl AsRef<Path>, records: &[TraceRecord]) -> Result<()> {
    let mut w = TraceWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    w.flush()
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    let reader = crate::io::open(path)?;
    let mut out: Vec<TraceRecord> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: &str| Error::parse(path, n + 1, m.to_string());
        let mut f = line.split_whitespace();
        let tag = f.next().unwrap();
        let nums: Vec<&str> = f.collect();
        let float = |s: &str| s.parse::<f64>().map_err(|_| err(&format!("bad number `{s}`")));
        let int = |s: &str| s.parse::<usize>().map_err(|_| err(&format!("bad count `{s}`")));
        let weight = |v: &[&str], at: usize| -> Result<Option<f64>> { v.get(at).map(|s| float(s)).transpose() };
        match tag {
            "iter" => {
                if nums.len() != 6 {
                    return Err(err("iter line needs 6 fields"));
                }
                let iter = nums[0].parse::<u64>().map_err(|_| err("bad iteration"))?;
                if out.last().is_some_and(|r| r.iter >= iter) {
                    return Err(err("iteration indices must increase"));
                }
                out.push(TraceRecord {
                    iter,
                    k_s: int(nums[1])?,
                    k_b: int(nums[2])?,
                    eta_s: float(nums[3])?,
                    eta_b: float(nums[4])?,
                    n_src: int(nums[5])?,
                    sources: Vec::new(),
                    background: Vec::new(),
                    delta: None,
                });
            }
            "mu" => {
                if !(3..=4).contains(&nums.len()) {
                    return Err(err("mu line needs x y count [weight]"));
                }
                let s = SourceDraw { x: float(nums[0])?, y: float(nums[1])?, count: int(nums[2])?, weight: weight(&nums, 3)? };
                out.last_mut().ok_or_else(|| err("mu before any iter"))?.sources.push(s);
            }
            "bg" => {
                if !(2 * N_KNOTS + 1..=2 * N_KNOTS + 2).contains(&nums.len()) {
                    return Err(err("bg line needs 10 knots, count [weight]"));
                }
                let mut k = [0.0; 2 * N_KNOTS];
                for (slot, s) in k.iter_mut().zip(&nums) {
                    *slot = float(s)?;
                }
                let mut ell = [0.0; N_KNOTS];
                let mut b = [0.0; N_KNOTS];
                ell.copy_from_slice(&k[..N_KNOTS]);
                b.copy_from_slice(&k[N_KNOTS..]);
                let comp = BackgroundComponent::new(KnotVector(ell), KnotVector(b));
                if !comp.ell.is_ascending() || !comp.b.is_ascending() {
                    return Err(err("knots must ascend"));
                }
                let d = BackgroundDraw { comp, count: int(nums[2 * N_KNOTS])?, weight: weight(&nums, 2 * N_KNOTS + 1)? };
                out.last_mut().ok_or_else(|| err("bg before any iter"))?.background.push(d);
            }
            "delta" => {
                let d = float(nums.first().ok_or_else(|| err("delta needs a value"))?)?;
                out.last_mut().ok_or_else(|| err("delta before any iter"))?.delta = Some(d);
            }
            other => return Err(err(&format!("unknown record `{other}`"))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<TraceRecord> {
        let comp = BackgroundComponent::new(KnotVector([-5.0, -2.0, 0.1, 2.0, 5.0]), KnotVector([-5.0, -2.5, 0.0, 2.5, 5.0]));
        vec![
            TraceRecord {
                iter: 1,
                k_s: 1,
                k_b: 1,
                eta_s: f64::NAN,
                eta_b: f64::NAN,
                n_src: 3,
                sources: vec![SourceDraw { x: 0.125, y: -1.0 / 3.0, count: 3, weight: None }],
                background: vec![BackgroundDraw { comp, count: 7, weight: None }],
                delta: None,
            },
            TraceRecord {
                iter: 2,
                k_s: 0,
                k_b: 1,
                eta_s: 1.5,
                eta_b: 0.25,
                n_src: 0,
                sources: vec![],
                background: vec![BackgroundDraw { comp, count: 10, weight: Some(0.9) }],
                delta: Some(0.01),
            },
        ]
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.trace");
        let recs = sample();
        write_trace(&p, &recs).unwrap();
        let back = read_trace(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back[0].eta_s.is_nan());
        assert_eq!(back[0].sources, recs[0].sources);
        assert_eq!(back[1], recs[1]);
    }

    #[test]
    fn rejects_decreasing_iterations() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.trace");
        std::fs::write(&p, "iter 2 0 0 1 1 0\niter 1 0 0 1 1 0\n").unwrap();
        assert!(matches!(read_trace(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn resume_truncates_later_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.trace");
        write_trace(&p, &sample()).unwrap();
        let mut w = TraceWriter::resume(&p, 1).unwrap();
        w.flush().unwrap();
        assert_eq!(read_trace(&p).unwrap().len(), 1);
    }
}
