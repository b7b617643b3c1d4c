//! Per-point label files.
//!
//! ```text
//! partlift-labels 1
//! points 4 categories 2 instances 1
//! instance 0 1 0.75
//! 1 0
//! 1 0
//! 0 -1
//! -1 -1
//! ```
//!
//! After the two header lines come one `instance <id> <category> <confidence>`
//! line per instance, then `semantic_id instance_id` per point. `-1` marks an
//! unlabeled point or a point without an instance.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{CategoryId, InstanceInfo, SegmentationResult};

const MAGIC: &str = "partlift-labels 1";

pub fn encode_labels(seg: &SegmentationResult) -> String {
    let mut out = String::with_capacity(16 * seg.len() + 64);
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(
        out,
        "points {} categories {} instances {}",
        seg.len(),
        seg.num_categories,
        seg.instances.len()
    );
    for (i, info) in seg.instances.iter().enumerate() {
        let _ = writeln!(out, "instance {i} {} {}", info.category, info.confidence);
    }
    let unlabeled = seg.unlabeled_category();
    for p in 0..seg.len() {
        let s = seg.semantic[p];
        let sem = if s == unlabeled { -1 } else { s as i64 };
        let inst = seg.instance_of(p).map_or(-1, |i| i as i64);
        let _ = writeln!(out, "{sem} {inst}");
    }
    out
}

pub fn write_labels(path: impl AsRef<Path>, seg: &SegmentationResult) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_labels(seg)).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<SegmentationResult> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(path, &text)
}

pub fn parse_labels(path: &Path, text: &str) -> Result<SegmentationResult> {
    let bad = |line: usize, msg: &str| Error::format(path, format!("line {}: {msg}", line + 1));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(bad(0, "not a label file")),
    }
    let (hl, header) = lines.next().ok_or_else(|| bad(1, "missing counts line"))?;
    let words: Vec<&str> = header.split_whitespace().collect();
    let (n, c, m) = match words.as_slice() {
        ["points", n, "categories", c, "instances", m] => (
            n.parse::<usize>().map_err(|_| bad(hl, "bad point count"))?,
            c.parse::<usize>().map_err(|_| bad(hl, "bad category count"))?,
            m.parse::<usize>().map_err(|_| bad(hl, "bad instance count"))?,
        ),
        _ => return Err(bad(hl, "expected \"points N categories C instances M\"")),
    };

    let mut instances = Vec::with_capacity(m);
    for i in 0..m {
        let (ln, line) = lines.next().ok_or_else(|| bad(hl + 1 + i, "missing instance line"))?;
        let w: Vec<&str> = line.split_whitespace().collect();
        match w.as_slice() {
            ["instance", id, cat, conf] if id.parse::<usize>().ok() == Some(i) => {
                instances.push(InstanceInfo {
                    category: cat.parse().map_err(|_| bad(ln, "bad instance category"))?,
                    confidence: conf.parse().map_err(|_| bad(ln, "bad instance confidence"))?,
                    points: 0,
                });
            }
            _ => return Err(bad(ln, &format!("expected \"instance {i} <category> <confidence>\""))),
        }
    }

    let mut semantic = Vec::with_capacity(n);
    let mut instance = Vec::with_capacity(n);
    for (ln, line) in lines.by_ref() {
        if line.trim().is_empty() {
            continue;
        }
        if semantic.len() == n {
            return Err(bad(ln, &format!("more than {n} point lines")));
        }
        let mut w = line.split_whitespace();
        let (Some(s), Some(i), None) = (w.next(), w.next(), w.next()) else {
            return Err(bad(ln, "expected \"semantic_id instance_id\""));
        };
        let s: i64 = s.parse().map_err(|_| bad(ln, "bad semantic id"))?;
        let i: i64 = i.parse().map_err(|_| bad(ln, "bad instance id"))?;
        if s < -1 || s >= c as i64 {
            return Err(bad(ln, &format!("semantic id {s} out of range")));
        }
        if i < -1 || i >= m as i64 {
            return Err(bad(ln, &format!("instance id {i} out of range")));
        }
        semantic.push(if s < 0 { c as CategoryId } else { s as CategoryId });
        instance.push(if i < 0 { m as u32 } else { i as u32 });
        if i >= 0 {
            instances[i as usize].points += 1;
        }
    }
    if semantic.len() != n {
        return Err(Error::format(path, format!("expected {n} point lines, found {}", semantic.len())));
    }
    let seg = SegmentationResult {
        num_categories: c,
        semantic,
        instance,
        instances,
    };
    let violations = seg.check();
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    Ok(seg)
}
