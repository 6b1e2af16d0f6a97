//! File formats.
//!
//! Streams are NDJSON: a header line, then one record per frame.
//!
//! ```text
//! {"format_version":1,"kind":"stream","mode":"direct_z","n_cameras":2}
//! {"t":1,"cameras":[{"z":0.41},{"z":1.7}],"s":false,"o":[false,false]}
//! ```
//!
//! A camera entry is `{"z":..}`, `{"patch":[..]}` or
//! `{"frame":[..],"box":[x,y,w,h]}` (row-major pixels, `frame_h` by
//! `frame_w` from the header). `s` and `o` are optional truth labels.
//!
//! Traces are CSV with a leading `# format_version=1` line. Floats are
//! written in shortest round-trip form.

use std::fmt::Write as _;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use occhmm::filter::Marginals;
use occhmm::pipeline::{FrameOutput, TrackFrame};
use occhmm::scene::{CameraObservation, FrameRecord, GroundTruth, ScenarioMode};
use occhmm::tracker::{BoundingBox, Frame};

pub const FORMAT_VERSION: u32 = 1;
pub const STREAM_KIND: &str = "stream";
const VERSION_LINE: &str = "# format_version=1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

fn at(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Line {
        line,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamHeader {
    pub format_version: u32,
    pub kind: String,
    pub mode: String,
    pub n_cameras: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_h: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_w: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    t: usize,
    cameras: Vec<WireCamera>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    o: Option<Vec<bool>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireCamera {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    patch: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame: Option<Vec<f64>>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    target: Option<[i64; 4]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub mode: ScenarioMode,
    pub n_cameras: usize,
    pub records: Vec<FrameRecord>,
    /// Source line of each record.
    pub lines: Vec<usize>,
}

impl Stream {
    /// Truth labels, when every record carries them.
    pub fn truth(&self) -> Option<GroundTruth> {
        let mut truth = GroundTruth {
            s: Vec::with_capacity(self.records.len()),
            o: vec![Vec::with_capacity(self.records.len()); self.n_cameras],
        };
        for rec in &self.records {
            let (s, o) = rec.truth.as_ref()?;
            truth.s.push(*s);
            for (row, &b) in truth.o.iter_mut().zip(o) {
                row.push(b);
            }
        }
        Some(truth)
    }
}

fn header_for(mode: ScenarioMode, n_cameras: usize, records: &[FrameRecord]) -> StreamHeader {
    let mut header = StreamHeader {
        format_version: FORMAT_VERSION,
        kind: STREAM_KIND.into(),
        mode: mode.as_str().into(),
        n_cameras,
        patch_dim: None,
        frame_h: None,
        frame_w: None,
    };
    match records.first().and_then(|r| r.cameras.first()) {
        Some(CameraObservation::Patch(p)) => header.patch_dim = Some(p.len()),
        Some(CameraObservation::Frame { frame, .. }) => {
            header.frame_h = Some(frame.height());
            header.frame_w = Some(frame.width());
        }
        _ => {}
    }
    header
}

pub fn write_stream<W: Write>(
    mut w: W,
    mode: ScenarioMode,
    n_cameras: usize,
    records: &[FrameRecord],
) -> io::Result<()> {
    serde_json::to_writer(&mut w, &header_for(mode, n_cameras, records))?;
    w.write_all(b"\n")?;
    for rec in records {
        let wire = WireRecord {
            t: rec.t,
            cameras: rec
                .cameras
                .iter()
                .map(|c| match c {
                    CameraObservation::Z(z) => WireCamera {
                        z: Some(*z),
                        ..WireCamera::default()
                    },
                    CameraObservation::Patch(p) => WireCamera {
                        patch: Some(p.clone()),
                        ..WireCamera::default()
                    },
                    CameraObservation::Frame { frame, target } => WireCamera {
                        frame: Some(frame.pixels().to_vec()),
                        target: Some([target.x, target.y, target.w as i64, target.h as i64]),
                        ..WireCamera::default()
                    },
                })
                .collect(),
            s: rec.truth.as_ref().map(|(s, _)| *s),
            o: rec.truth.as_ref().map(|(_, o)| o.clone()),
        };
        serde_json::to_writer(&mut w, &wire)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_stream(text: &str) -> Result<Stream, FormatError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, htext) = lines.next().ok_or_else(|| at(1, "empty stream, expected a header"))?;
    let header: StreamHeader =
        serde_json::from_str(htext).map_err(|e| at(hline, format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(at(
            hline,
            format!("format_version {} is not supported", header.format_version),
        ));
    }
    if header.kind != STREAM_KIND {
        return Err(at(hline, format!("kind {:?}, expected {STREAM_KIND:?}", header.kind)));
    }
    let mode: ScenarioMode = header.mode.parse().map_err(|e: occhmm::scene::SceneError| at(hline, e.to_string()))?;
    if header.n_cameras == 0 {
        return Err(at(hline, "n_cameras must be positive"));
    }
    let frame_dims = match mode {
        ScenarioMode::Frames => match (header.frame_h, header.frame_w) {
            (Some(h), Some(w)) if h > 0 && w > 0 => Some((h, w)),
            _ => return Err(at(hline, "frames stream needs positive frame_h and frame_w")),
        },
        _ => None,
    };

    let n = header.n_cameras;
    let mut records = Vec::new();
    let mut record_lines = Vec::new();
    for (line, text) in lines {
        let wire: WireRecord = serde_json::from_str(text).map_err(|e| at(line, e.to_string()))?;
        let expected_t = records.len() + 1;
        if wire.t != expected_t {
            return Err(at(line, format!("t = {}, expected {expected_t}", wire.t)));
        }
        if wire.cameras.len() != n {
            return Err(at(line, format!("{} cameras, expected {n}", wire.cameras.len())));
        }
        let cameras = wire
            .cameras
            .into_iter()
            .enumerate()
            .map(|(i, c)| camera_from_wire(c, mode, &header, frame_dims).map_err(|m| at(line, format!("camera {}: {m}", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        let truth = match (wire.s, wire.o) {
            (None, None) => None,
            (Some(s), Some(o)) if o.len() == n => Some((s, o)),
            (Some(_), Some(o)) => return Err(at(line, format!("o has {} entries, expected {n}", o.len()))),
            _ => return Err(at(line, "truth needs both s and o")),
        };
        records.push(FrameRecord {
            t: wire.t,
            cameras,
            truth,
        });
        record_lines.push(line);
    }
    Ok(Stream {
        mode,
        n_cameras: n,
        records,
        lines: record_lines,
    })
}

fn camera_from_wire(
    c: WireCamera,
    mode: ScenarioMode,
    header: &StreamHeader,
    frame_dims: Option<(usize, usize)>,
) -> Result<CameraObservation, String> {
    let extra = |name: &str| format!("unexpected field {name:?} in a {} stream", mode.as_str());
    match mode {
        ScenarioMode::DirectZ => {
            if c.patch.is_some() || c.frame.is_some() || c.target.is_some() {
                return Err(extra("patch/frame/box"));
            }
            let z = c.z.ok_or("missing field \"z\"")?;
            if !z.is_finite() || z < 0.0 {
                return Err(format!("z = {z} must be finite and nonnegative"));
            }
            Ok(CameraObservation::Z(z))
        }
        ScenarioMode::Patch => {
            if c.z.is_some() || c.frame.is_some() || c.target.is_some() {
                return Err(extra("z/frame/box"));
            }
            let p = c.patch.ok_or("missing field \"patch\"")?;
            if let Some(d) = header.patch_dim {
                if p.len() != d {
                    return Err(format!("patch has {} values, expected {d}", p.len()));
                }
            }
            Ok(CameraObservation::Patch(p))
        }
        ScenarioMode::Frames => {
            if c.z.is_some() || c.patch.is_some() {
                return Err(extra("z/patch"));
            }
            let (h, w) = frame_dims.expect("checked with the header");
            let pixels = c.frame.ok_or("missing field \"frame\"")?;
            let [x, y, bw, bh] = c.target.ok_or("missing field \"box\"")?;
            if bw <= 0 || bh <= 0 {
                return Err(format!("box size {bw}x{bh} must be positive"));
            }
            let frame = Frame::new(h, w, pixels).map_err(|e| e.to_string())?;
            Ok(CameraObservation::Frame {
                frame,
                target: BoundingBox::new(x, y, bw as usize, bh as usize),
            })
        }
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn push_joined(out: &mut String, prefix: &str, n: usize) {
    for i in 1..=n {
        let _ = write!(out, ",{prefix}{i}");
    }
}

pub fn truth_csv(truth: &GroundTruth) -> String {
    format!("{VERSION_LINE}\n{}", truth.to_csv())
}

pub fn read_truth(text: &str) -> Result<GroundTruth, FormatError> {
    let body = strip_version(text)?;
    GroundTruth::from_csv(&body).map_err(|e| FormatError::Invalid(e.to_string()))
}

/// `t,p_S,p_O_1..p_O_N,lambda_1..lambda_N,alarm`.
pub fn posterior_csv(outputs: &[FrameOutput], n_cameras: usize) -> String {
    let mut out = format!("{VERSION_LINE}\nt,p_S");
    push_joined(&mut out, "p_O_", n_cameras);
    push_joined(&mut out, "lambda_", n_cameras);
    out.push_str(",alarm\n");
    for o in outputs {
        let _ = write!(out, "{},{}", o.t, fmt_f64(o.marginals.p_change));
        for p in &o.marginals.p_occlusion {
            let _ = write!(out, ",{}", fmt_f64(*p));
        }
        for l in &o.lambdas {
            let _ = write!(out, ",{}", fmt_f64(*l));
        }
        let _ = writeln!(out, ",{}", u8::from(o.alarm));
    }
    out
}

/// `t,p_S,p_O_1..p_O_N`.
pub fn marginals_csv(marginals: &[Marginals], n_cameras: usize) -> String {
    let mut out = format!("{VERSION_LINE}\nt,p_S");
    push_joined(&mut out, "p_O_", n_cameras);
    out.push('\n');
    for m in marginals {
        let _ = write!(out, "{},{}", m.t, fmt_f64(m.p_change));
        for p in &m.p_occlusion {
            let _ = write!(out, ",{}", fmt_f64(*p));
        }
        out.push('\n');
    }
    out
}

pub const TRACK_COLUMNS: &str = "t,camera,x,y,w,h,iou,lambda,p_S,p_O,alarm";

/// One row per frame and camera. `iou` is empty without true boxes; the
/// posterior columns are empty for frames the filter never produced.
pub fn track_csv(frames: &[TrackFrame], truth: &[Option<Vec<BoundingBox>>]) -> String {
    let mut out = format!("{VERSION_LINE}\n{TRACK_COLUMNS}\n");
    for (i, tf) in frames.iter().enumerate() {
        for (cam, b) in tf.boxes.iter().enumerate() {
            let iou = truth
                .get(i)
                .and_then(|t| t.as_ref())
                .map(|t| fmt_f64(b.iou(&t[cam])))
                .unwrap_or_default();
            let (p_s, p_o, alarm) = match &tf.output {
                Some(o) => (
                    fmt_f64(o.marginals.p_change),
                    fmt_f64(o.marginals.p_occlusion[cam]),
                    u8::from(o.alarm).to_string(),
                ),
                None => Default::default(),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{iou},{},{p_s},{p_o},{alarm}",
                tf.t,
                cam + 1,
                b.x,
                b.y,
                b.w,
                b.h,
                fmt_f64(tf.lambdas[cam])
            );
        }
    }
    out
}

fn strip_version(text: &str) -> Result<String, FormatError> {
    let mut body = String::with_capacity(text.len());
    for line in text.lines() {
        let trimmed = line.trim();
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("format_version=") {
                if v.trim() != FORMAT_VERSION.to_string() {
                    return Err(FormatError::Invalid(format!("format_version {} is not supported", v.trim())));
                }
            }
            continue;
        }
        body.push_str(line);
        body.push('\n');
    }
    Ok(body)
}

/// A CSV trace with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let body = strip_version(text)?;
        let mut lines = body.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| FormatError::Invalid("empty CSV".into()))?;
        let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
        let rows = lines
            .enumerate()
            .map(|(i, l)| {
                let row: Vec<String> = l.split(',').map(|c| c.trim().to_string()).collect();
                if row.len() != columns.len() {
                    Err(FormatError::Invalid(format!(
                        "data row {} has {} fields, expected {}",
                        i + 1,
                        row.len(),
                        columns.len()
                    )))
                } else {
                    Ok(row)
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Table { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    fn require(&self, name: &str) -> Result<usize, FormatError> {
        self.column(name)
            .ok_or_else(|| FormatError::Invalid(format!("missing column {name:?}")))
    }

    fn number(&self, row: usize, col: usize) -> Result<f64, FormatError> {
        let cell = &self.rows[row][col];
        cell.parse().map_err(|_| {
            FormatError::Invalid(format!(
                "data row {}, column {}: {cell:?} is not a number",
                row + 1,
                self.columns[col]
            ))
        })
    }
}

/// Reads `t,p_S,p_O_1..` from a posterior or oracle trace.
pub fn read_marginals(text: &str) -> Result<Vec<Marginals>, FormatError> {
    let table = Table::parse(text)?;
    let t_col = table.require("t")?;
    let s_col = table.require("p_S")?;
    let o_cols: Vec<usize> = (1..).map_while(|k| table.column(&format!("p_O_{k}"))).collect();
    if o_cols.is_empty() {
        return Err(FormatError::Invalid("missing column \"p_O_1\"".into()));
    }
    (0..table.rows.len())
        .map(|r| {
            let t = table.number(r, t_col)?;
            if t != (r + 1) as f64 {
                return Err(FormatError::Invalid(format!("data row {} has t = {t}, expected {}", r + 1, r + 1)));
            }
            Ok(Marginals {
                t: t as u64,
                p_change: table.number(r, s_col)?,
                p_occlusion: o_cols.iter().map(|&c| table.number(r, c)).collect::<Result<_, _>>()?,
            })
        })
        .collect()
}

/// Mean IoU over cameras on the last frame of a track trace.
pub fn final_track_iou(text: &str) -> Result<Option<f64>, FormatError> {
    let table = Table::parse(text)?;
    let t_col = table.require("t")?;
    let iou_col = table.require("iou")?;
    let Some(last) = table.rows.last().map(|r| r[t_col].clone()) else {
        return Ok(None);
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for (r, row) in table.rows.iter().enumerate() {
        if row[t_col] == last {
            if row[iou_col].is_empty() {
                return Ok(None);
            }
            total += table.number(r, iou_col)?;
            count += 1;
        }
    }
    Ok(Some(total / count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z_record(t: usize, z: &[f64]) -> FrameRecord {
        FrameRecord {
            t,
            cameras: z.iter().map(|&v| CameraObservation::Z(v)).collect(),
            truth: Some((false, vec![t.is_multiple_of(2); z.len()])),
        }
    }

    fn written(mode: ScenarioMode, n: usize, records: &[FrameRecord]) -> String {
        let mut buf = Vec::new();
        write_stream(&mut buf, mode, n, records).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn header_line_comes_first() {
        let text = written(ScenarioMode::DirectZ, 2, &[z_record(1, &[0.5, 1.0])]);
        let first = text.lines().next().unwrap();
        assert_eq!(first, r#"{"format_version":1,"kind":"stream","mode":"direct_z","n_cameras":2}"#);
        assert_eq!(
            text.lines().nth(1).unwrap(),
            r#"{"t":1,"cameras":[{"z":0.5},{"z":1.0}],"s":false,"o":[false,false]}"#
        );
    }

    #[test]
    fn awkward_floats_round_trip() {
        let values = [0.1 + 0.2, 1e-300, 5e-324, 123456.789e10, std::f64::consts::PI];
        let records: Vec<FrameRecord> = values.iter().enumerate().map(|(i, &v)| z_record(i + 1, &[v])).collect();
        let back = read_stream(&written(ScenarioMode::DirectZ, 1, &records)).unwrap();
        assert_eq!(back.records, records);
        for v in values {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let head = r#"{"format_version":1,"kind":"stream","mode":"direct_z","n_cameras":2}"#;
        let cases = [
            (format!("{head}\n{{\"t\":1,\"cameras\":[{{\"z\":1.0}},{{}}]}}\n"), 2, "missing field \"z\""),
            (format!("{head}\n{{\"t\":1,\"cameras\":[{{\"z\":1.0}}]}}\n"), 2, "1 cameras"),
            (
                format!("{head}\n{{\"t\":1,\"cameras\":[{{\"z\":1}},{{\"z\":1}}]}}\n\n{{\"t\":3,\"cameras\":[]}}\n"),
                4,
                "expected 2",
            ),
            (format!("{head}\nnot json\n"), 2, ""),
            (format!("{head}\n{{\"t\":1,\"cameras\":[{{\"z\":-1}},{{\"z\":1}}]}}\n"), 2, "nonnegative"),
            (format!("{head}\n{{\"t\":1,\"cameras\":[{{\"patch\":[1]}},{{\"z\":1}}]}}\n"), 2, "unexpected"),
            (r#"{"format_version":2,"kind":"stream","mode":"direct_z","n_cameras":2}"#.to_string(), 1, "format_version"),
        ];
        for (text, line, needle) in cases {
            match read_stream(&text) {
                Err(FormatError::Line { line: l, msg }) => {
                    assert_eq!(l, line, "{msg}");
                    assert!(msg.contains(needle), "{msg}");
                }
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn frames_round_trip() {
        let frame = Frame::new(2, 3, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125]).unwrap();
        let rec = FrameRecord {
            t: 1,
            cameras: vec![CameraObservation::Frame {
                frame,
                target: BoundingBox::new(-1, 0, 2, 1),
            }],
            truth: None,
        };
        let text = written(ScenarioMode::Frames, 1, std::slice::from_ref(&rec));
        assert!(text.starts_with(r#"{"format_version":1,"kind":"stream","mode":"frames","n_cameras":1,"frame_h":2,"frame_w":3}"#));
        let back = read_stream(&text).unwrap();
        assert_eq!(back.records, vec![rec]);
        assert!(back.truth().is_none());
    }

    #[test]
    fn truth_and_marginals_csv() {
        let truth = GroundTruth {
            s: vec![false, true],
            o: vec![vec![true, false]],
        };
        let text = truth_csv(&truth);
        assert!(text.starts_with("# format_version=1\nt,s,o_1\n1,0,1\n"));
        assert_eq!(read_truth(&text).unwrap(), truth);

        let m = vec![
            Marginals { t: 1, p_change: 0.25, p_occlusion: vec![1e-20] },
            Marginals { t: 2, p_change: 0.1 + 0.2, p_occlusion: vec![1.0] },
        ];
        let csv = marginals_csv(&m, 1);
        assert!(csv.contains("\nt,p_S,p_O_1\n1,0.25,1e-20\n"));
        assert_eq!(read_marginals(&csv).unwrap(), m);
        assert!(read_marginals("t,p_S\n1,0.5\n").is_err());
        assert!(read_marginals("# format_version=9\nt,p_S,p_O_1\n").is_err());
    }

    #[test]
    fn final_iou_from_track_rows() {
        let text = format!("{TRACK_COLUMNS}\n1,1,0,0,4,4,1.0,0.85,,,\n2,1,0,0,4,4,0.5,0.85,0.1,0.2,0\n2,2,0,0,4,4,0.25,1.0,0.1,0.9,0\n");
        assert_eq!(final_track_iou(&text).unwrap(), Some(0.375));
    }
}
