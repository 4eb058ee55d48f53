//! Text container for skeleton sequences.
//!
//! ```text
//! spdnet-skel v1 <N_j>
//! seq <label> <subject> <T'>
//! <3·N_j coordinates of frame 0, joint-major: x0 y0 z0 x1 y1 z1 ...>
//! ...
//! ```
//!
//! Floats are written in shortest round-trip form, so save then load is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::skeleton::SkeletonSequence;
use crate::error::{DmtError, Result};
use crate::tensor::Mat;

pub const SKELETON_MAGIC: &str = "spdnet-skel";
pub const SKELETON_VERSION: &str = "v1";

/// A record that could not be parsed; `line` is 1-based.
#[derive(Clone, Debug, PartialEq)]
pub struct RejectedRecord {
    pub line: usize,
    pub msg: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SkeletonFile {
    pub joints: usize,
    pub sequences: Vec<SkeletonSequence>,
    pub rejected: Vec<RejectedRecord>,
}

pub fn format_skeletons(seqs: &[SkeletonSequence]) -> Result<String> {
    let joints = seqs.first().map_or(0, SkeletonSequence::joints);
    let mut out = format!("{SKELETON_MAGIC} {SKELETON_VERSION} {joints}\n");
    for s in seqs {
        if s.joints() != joints {
            return Err(DmtError::Shape {
                op: "format_skeletons",
                left: (joints, 3),
                right: (s.joints(), 3),
            });
        }
        let _ = writeln!(out, "seq {} {} {}", s.label, s.subject, s.len());
        for f in &s.frames {
            let line: Vec<String> = f.data().iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn save_skeleton_file(path: &Path, seqs: &[SkeletonSequence]) -> Result<()> {
    std::fs::write(path, format_skeletons(seqs)?)?;
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> DmtError {
    DmtError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_header(line: &str) -> Result<usize> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    match parts.as_slice() {
        [SKELETON_MAGIC, SKELETON_VERSION, n] => {
            let n: usize = n.parse().map_err(|_| parse_err(1, format!("bad joint count {n:?}")))?;
            if n == 0 {
                return Err(parse_err(1, "joint count must be positive"));
            }
            Ok(n)
        }
        [SKELETON_MAGIC, v, _] => Err(parse_err(1, format!("unsupported version {v:?}"))),
        _ => Err(parse_err(1, format!("expected `{SKELETON_MAGIC} {SKELETON_VERSION} <joints>`"))),
    }
}

fn parse_frame(line: &str, joints: usize) -> std::result::Result<Mat, String> {
    let vals: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
    let vals = vals.map_err(|e| format!("bad coordinate: {e}"))?;
    if vals.len() != 3 * joints {
        return Err(format!("expected {} coordinates, found {}", 3 * joints, vals.len()));
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err("non-finite coordinate".into());
    }
    Mat::from_vec(joints, 3, vals).map_err(|e| e.to_string())
}

/// Parses a whole file. Header problems fail the file; a malformed sequence block is
/// skipped and listed in [`SkeletonFile::rejected`].
pub fn parse_skeletons(text: &str) -> Result<SkeletonFile> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let Some(&(_, header)) = lines.first() else {
        log::warn!("skeleton file is empty");
        return Ok(SkeletonFile::default());
    };
    let joints = parse_header(header)?;
    let mut file = SkeletonFile {
        joints,
        ..Default::default()
    };
    let mut i = 1;
    while i < lines.len() {
        let (ln, line) = lines[i];
        i += 1;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let head = match parts.as_slice() {
            ["seq", l, s, t] => l
                .parse::<usize>()
                .ok()
                .zip(s.parse::<usize>().ok())
                .zip(t.parse::<usize>().ok())
                .map(|((l, s), t)| (l, s, t)),
            _ => None,
        };
        let Some((label, subject, count)) = head else {
            file.rejected.push(RejectedRecord {
                line: ln,
                msg: format!("expected `seq <label> <subject> <frames>`, found {line:?}"),
            });
            continue;
        };
        let mut frames = Vec::with_capacity(count);
        let mut error = None;
        while frames.len() + usize::from(error.is_some()) < count && i < lines.len() {
            let (fl, fline) = lines[i];
            if fline.starts_with("seq") {
                break;
            }
            i += 1;
            if error.is_some() {
                frames.push(Mat::zeros(0, 0));
                continue;
            }
            match parse_frame(fline, joints) {
                Ok(m) => frames.push(m),
                Err(msg) => error = Some(RejectedRecord { line: fl, msg }),
            }
        }
        if let Some(e) = error {
            file.rejected.push(e);
            continue;
        }
        if frames.len() != count {
            file.rejected.push(RejectedRecord {
                line: ln,
                msg: format!("sequence declares {count} frames, found {}", frames.len()),
            });
            continue;
        }
        match SkeletonSequence::new(frames, label, subject) {
            Ok(s) => file.sequences.push(s),
            Err(e) => file.rejected.push(RejectedRecord {
                line: ln,
                msg: e.to_string(),
            }),
        }
    }
    for r in &file.rejected {
        log::warn!("skipped skeleton record at line {}: {}", r.line, r.msg);
    }
    Ok(file)
}

pub fn load_skeleton_file(path: &Path) -> Result<SkeletonFile> {
    parse_skeletons(&std::fs::read_to_string(path)?)
}
