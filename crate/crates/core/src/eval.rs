//! Scores filtered posteriors and tracks against ground truth.

use std::fmt;

use thiserror::Error;

use crate::filter::Marginals;
use crate::scene::GroundTruth;
use crate::tracker::BoundingBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("posterior covers {posterior} frames, ground truth covers {truth}")]
    LengthMismatch { posterior: usize, truth: usize },
    #[error("posterior has {posterior} cameras, ground truth has {truth}")]
    CameraMismatch { posterior: usize, truth: usize },
    #[error("nothing to evaluate")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    /// Posterior level that counts as a detection or an alarm.
    pub threshold: f64,
    /// Alarms within this many frames of a true change frame are not false.
    pub alarm_tolerance: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: 0.9,
            alarm_tolerance: 2,
        }
    }
}

/// Maximal runs of `true`, as 1-based inclusive `(start, end)` frames.
pub fn intervals(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &f) in flags.iter().enumerate() {
        match (f, open) {
            (true, None) => open = Some(i + 1),
            (false, Some(s)) => {
                out.push((s, i));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        out.push((s, flags.len()));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventStats {
    pub start: usize,
    pub end: usize,
    /// Highest posterior over the event's frames.
    pub peak: f64,
    /// Frames from `start` to the first frame of the event whose posterior
    /// exceeds the threshold.
    pub delay: Option<usize>,
}

/// Per-event peak and delay of `posterior` (indexed by frame, 0-based) over
/// the runs of `truth`.
pub fn event_stats(truth: &[bool], posterior: &[f64], threshold: f64) -> Vec<EventStats> {
    intervals(truth)
        .into_iter()
        .map(|(start, end)| {
            let window = &posterior[start - 1..end.min(posterior.len())];
            EventStats {
                start,
                end,
                peak: window.iter().copied().fold(0.0, f64::max),
                delay: window.iter().position(|&p| p > threshold),
            }
        })
        .collect()
}

/// Alarm frames farther than `tolerance` frames from every true change frame.
pub fn false_alarms(alarms: &[bool], change_truth: &[bool], tolerance: usize) -> usize {
    alarms
        .iter()
        .enumerate()
        .filter(|&(i, &a)| {
            a && {
                let lo = i.saturating_sub(tolerance);
                let hi = (i + tolerance + 1).min(change_truth.len());
                !change_truth[lo..hi].iter().any(|&s| s)
            }
        })
        .count()
}

pub fn per_thousand(count: usize, n_frames: usize) -> f64 {
    count as f64 * 1000.0 / n_frames as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_frames: usize,
    pub change_events: Vec<EventStats>,
    /// `occlusion_events[camera]`.
    pub occlusion_events: Vec<Vec<EventStats>>,
    pub false_alarms: usize,
    pub far_per_1000: f64,
    /// Mean over cameras of the IoU on the last frame, when tracks are given.
    pub final_iou: Option<f64>,
}

pub fn evaluate(
    truth: &GroundTruth,
    marginals: &[Marginals],
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if marginals.is_empty() {
        return Err(EvalError::Empty);
    }
    if marginals.len() != truth.n_frames() {
        return Err(EvalError::LengthMismatch {
            posterior: marginals.len(),
            truth: truth.n_frames(),
        });
    }
    let n = marginals[0].p_occlusion.len();
    if let Some(m) = marginals.iter().find(|m| m.p_occlusion.len() != truth.n_cameras()) {
        return Err(EvalError::CameraMismatch {
            posterior: m.p_occlusion.len(),
            truth: truth.n_cameras(),
        });
    }
    let p_change: Vec<f64> = marginals.iter().map(|m| m.p_change).collect();
    let alarms: Vec<bool> = p_change.iter().map(|&p| p > cfg.threshold).collect();
    let false_alarms = false_alarms(&alarms, &truth.s, cfg.alarm_tolerance);
    Ok(EvalReport {
        n_frames: truth.n_frames(),
        change_events: event_stats(&truth.s, &p_change, cfg.threshold),
        occlusion_events: (0..n)
            .map(|cam| {
                let p: Vec<f64> = marginals.iter().map(|m| m.p_occlusion[cam]).collect();
                event_stats(&truth.o[cam], &p, cfg.threshold)
            })
            .collect(),
        false_alarms,
        far_per_1000: per_thousand(false_alarms, truth.n_frames()),
        final_iou: None,
    })
}

/// Mean IoU over cameras between the last tracked and true boxes.
pub fn final_iou(tracked: &[BoundingBox], truth: &[BoundingBox]) -> Option<f64> {
    if tracked.is_empty() || tracked.len() != truth.len() {
        return None;
    }
    let total: f64 = tracked.iter().zip(truth).map(|(a, b)| a.iou(b)).sum();
    Some(total / tracked.len() as f64)
}

fn write_events(f: &mut fmt::Formatter<'_>, prefix: &str, events: &[EventStats]) -> fmt::Result {
    writeln!(f, "{prefix}.events={}", events.len())?;
    for (i, e) in events.iter().enumerate() {
        writeln!(f, "{prefix}.{i}.start={}", e.start)?;
        writeln!(f, "{prefix}.{i}.end={}", e.end)?;
        writeln!(f, "{prefix}.{i}.peak={}", e.peak)?;
        match e.delay {
            Some(d) => writeln!(f, "{prefix}.{i}.delay={d}")?,
            None => writeln!(f, "{prefix}.{i}.delay=none")?,
        }
    }
    Ok(())
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "frames={}", self.n_frames)?;
        write_events(f, "change", &self.change_events)?;
        for (cam, events) in self.occlusion_events.iter().enumerate() {
            write_events(f, &format!("occlusion.{}", cam + 1), events)?;
        }
        writeln!(f, "false_alarms={}", self.false_alarms)?;
        writeln!(f, "far_per_1000={}", self.far_per_1000)?;
        if let Some(iou) = self.final_iou {
            writeln!(f, "final_iou={iou}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn marg(t: u64, s: f64, o: &[f64]) -> Marginals {
        Marginals {
            t,
            p_change: s,
            p_occlusion: o.to_vec(),
        }
    }

    #[test]
    fn runs_of_flags() {
        let f = [false, true, true, false, true];
        assert_eq!(intervals(&f), vec![(2, 3), (5, 5)]);
        assert!(intervals(&[]).is_empty());
    }

    #[test]
    fn delay_and_peak() {
        let truth = [false, false, true, true, true, false];
        let post = [0.0, 0.95, 0.3, 0.7, 0.99, 0.2];
        let stats = event_stats(&truth, &post, 0.9);
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].peak, 0.99);
        assert_eq!(stats[0].delay, Some(2));
        let stats = event_stats(&truth, &post, 0.995);
        assert_eq!(stats[0].delay, None);
    }

    #[test]
    fn alarms_near_truth_are_tolerated() {
        let truth = [false, false, false, false, true, false, false, false, false, false];
        let alarms = [true, false, true, false, true, false, true, true, false, false];
        // frame 1 is 4 away, frame 3 within 2, frame 7 within 2, frame 8 is 3 away
        assert_eq!(false_alarms(&alarms, &truth, 2), 2);
        assert_eq!(false_alarms(&alarms, &truth, 0), 4);
    }

    #[test]
    fn report_lines() {
        let truth = GroundTruth {
            s: vec![false, true, false],
            o: vec![vec![true, false, false]],
        };
        let m = vec![
            marg(1, 0.1, &[0.95]),
            marg(2, 0.92, &[0.1]),
            marg(3, 0.0, &[0.0]),
        ];
        let report = evaluate(&truth, &m, &EvalConfig::default()).unwrap();
        let text = report.to_string();
        assert!(text.contains("change.0.delay=0\n"));
        assert!(text.contains("occlusion.1.0.peak=0.95\n"));
        assert!(text.contains("false_alarms=0\n"));
        assert!(evaluate(&truth, &m[..2], &EvalConfig::default()).is_err());
    }

    #[test]
    fn mean_final_iou() {
        let a = BoundingBox::new(0, 0, 4, 4);
        let b = BoundingBox::new(2, 0, 4, 4);
        assert_eq!(final_iou(&[a, a], &[a, b]), Some((1.0 + 1.0 / 3.0) / 2.0));
        assert_eq!(final_iou(&[a], &[]), None);
    }
}
