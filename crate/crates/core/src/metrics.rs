//! Trace similarity and cost measures.

use crate::trace::{to_nanos, Direction, Trace};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("window must be > 0 ms")]
    ZeroWindow,
    #[error("series need at least 2 points, got {0}")]
    TooShort(usize),
    #[error("correlation is undefined for a constant series")]
    Constant,
    #[error("empty series")]
    Empty,
    #[error("trace has no non-padding cells")]
    NoRealCells,
}

/// Bytes per direction in consecutive windows of `window_ms`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregatedTimeSeries {
    pub window_ms: u32,
    pub upload: Vec<u64>,
    pub download: Vec<u64>,
}

impl AggregatedTimeSeries {
    pub fn series(&self, direction: Direction) -> &[u64] {
        match direction {
            Direction::Outgoing => &self.upload,
            Direction::Incoming => &self.download,
        }
    }
}

/// Buckets every cell into `floor(t / I)`. The series covers windows up to
/// and including the one holding the last cell.
pub fn aggregate(trace: &Trace, window_ms: u32) -> Result<AggregatedTimeSeries, MetricError> {
    if window_ms == 0 {
        return Err(MetricError::ZeroWindow);
    }
    let width = window_ms as i64 * 1_000_000;
    let index = |t: f64| (to_nanos(t).max(0) / width) as usize;
    let len = trace.events.last().map_or(0, |e| index(e.time) + 1);
    let mut upload = vec![0u64; len];
    let mut download = vec![0u64; len];
    for e in &trace.events {
        let i = index(e.time);
        match e.direction {
            Direction::Outgoing => upload[i] += e.size as u64,
            Direction::Incoming => download[i] += e.size as u64,
        }
    }
    Ok(AggregatedTimeSeries {
        window_ms,
        upload,
        download,
    })
}

/// Pearson correlation; the shorter series is padded with zeros.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    let n = a.len().max(b.len());
    if n < 2 {
        return Err(MetricError::TooShort(n));
    }
    let at = |s: &[f64], i: usize| s.get(i).copied().unwrap_or(0.0);
    let mean_a = a.iter().sum::<f64>() / n as f64;
    let mean_b = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let da = at(a, i) - mean_a;
        let db = at(b, i) - mean_b;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(MetricError::Constant);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.len() < b.len() {
        return lcs_len(b, a);
    }
    // Two rows over the shorter sequence.
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCSS measure: common subsequence length over the shorter length.
pub fn lcss<T: PartialEq>(a: &[T], b: &[T]) -> Result<f64, MetricError> {
    let shorter = a.len().min(b.len());
    if shorter == 0 {
        return Err(MetricError::Empty);
    }
    Ok(lcs_len(a, b) as f64 / shorter as f64)
}

/// Percentages; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OverheadReport {
    pub send_bw: Option<f64>,
    pub recv_bw: Option<f64>,
    pub overall_bw: Option<f64>,
    pub latency: Option<f64>,
}

fn padding_ratio(trace: &Trace, dir: Option<Direction>) -> Option<f64> {
    let (mut pad, mut real) = (0u64, 0u64);
    for e in trace
        .events
        .iter()
        .filter(|e| dir.is_none_or(|d| e.direction == d))
    {
        if e.is_padding {
            pad += e.size as u64;
        } else {
            real += e.size as u64;
        }
    }
    (real > 0).then(|| pad as f64 / real as f64 * 100.0)
}

/// Padding bytes over non-padding bytes, per direction and overall.
pub fn bandwidth_overhead(defended: &Trace) -> OverheadReport {
    OverheadReport {
        send_bw: padding_ratio(defended, Some(Direction::Outgoing)),
        recv_bw: padding_ratio(defended, Some(Direction::Incoming)),
        overall_bw: padding_ratio(defended, None),
        latency: None,
    }
}

/// Relative growth of the time to the last non-padding cell, floored at 0.
pub fn latency_overhead(defended: &Trace, base: &Trace) -> Result<f64, MetricError> {
    let d = defended.last_real_time().ok_or(MetricError::NoRealCells)?;
    let b = base.last_real_time().ok_or(MetricError::NoRealCells)?;
    if b <= 0.0 {
        return Ok(if d <= 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(((d / b - 1.0) * 100.0).max(0.0))
}

/// Both overheads for a defended trace against its base.
pub fn overhead(defended: &Trace, base: &Trace) -> OverheadReport {
    OverheadReport {
        latency: latency_overhead(defended, base).ok(),
        ..bandwidth_overhead(defended)
    }
}

/// Box-plot summary with Tukey whiskers; quantiles interpolate linearly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub lower_whisker: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub upper_whisker: f64,
}

pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let q1 = quantile(&v, 0.25);
    let q3 = quantile(&v, 0.75);
    let iqr = q3 - q1;
    let lower = v
        .iter()
        .copied()
        .find(|&x| x >= q1 - 1.5 * iqr)
        .unwrap_or(q1);
    let upper = v
        .iter()
        .rev()
        .copied()
        .find(|&x| x <= q3 + 1.5 * iqr)
        .unwrap_or(q3);
    Some(Summary {
        count: v.len(),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        lower_whisker: lower,
        q1,
        median: quantile(&v, 0.5),
        q3,
        upper_whisker: upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceEvent;

    #[test]
    fn two_windows() {
        let t = Trace::new(
            "x",
            vec![
                TraceEvent::real(0.0, Direction::Outgoing),
                TraceEvent::real(0.010, Direction::Incoming),
                TraceEvent::real(0.030, Direction::Incoming),
            ],
        );
        let s = aggregate(&t, 25).unwrap();
        assert_eq!(s.upload, vec![512, 0]);
        assert_eq!(s.download, vec![512, 512]);
    }

    #[test]
    fn boundary_cell_opens_new_window() {
        let t = Trace::new(
            "x",
            vec![
                TraceEvent::real(0.0, Direction::Outgoing),
                TraceEvent::real(0.025, Direction::Outgoing),
            ],
        );
        assert_eq!(aggregate(&t, 25).unwrap().upload, vec![512, 512]);
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(
            pearson(&[1.0, 1.0], &[1.0, 2.0]),
            Err(MetricError::Constant)
        );
        assert_eq!(pearson(&[1.0], &[1.0]), Err(MetricError::TooShort(1)));
        let s = [0.0, 512.0, 1536.0, 512.0, 7.0e4];
        assert_eq!(pearson(&s, &s).unwrap(), 1.0);
        // [1, 2] vs [1, 2, 0]
        let r = pearson(&[1.0, 2.0], &[1.0, 2.0, 0.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lcss_examples() {
        assert_eq!(lcs_len(&[1, 2, 3, 4], &[1, 3, 4]), 3);
        assert_eq!(lcss(&[1, 2, 3, 4], &[1, 3, 4]).unwrap(), 1.0);
        assert_eq!(lcss(&[1, 2], &[3, 4]).unwrap(), 0.0);
        assert_eq!(lcss::<u8>(&[], &[1]), Err(MetricError::Empty));
    }

    #[test]
    fn overhead_examples() {
        let base = Trace::new(
            "x",
            vec![
                TraceEvent::real(0.0, Direction::Outgoing),
                TraceEvent::real(1.0, Direction::Incoming),
            ],
        );
        let mut d = base.clone();
        d.events
            .push(TraceEvent::padding(0.5, d.events[0].direction));
        d = Trace::new("x", d.events);
        let r = overhead(&d, &base);
        assert_eq!(r.send_bw, Some(100.0));
        assert_eq!(r.recv_bw, Some(0.0));
        assert_eq!(r.overall_bw, Some(50.0));
        assert_eq!(r.latency, Some(0.0));

        let late = Trace::new(
            "x",
            vec![
                TraceEvent::real(0.0, Direction::Outgoing),
                TraceEvent::real(1.5, Direction::Incoming),
            ],
        );
        assert_eq!(latency_overhead(&late, &base).unwrap(), 50.0);
    }

    #[test]
    fn summary_whiskers() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!(s.median, 3.0);
        assert_eq!(s.q1, 2.0);
        assert_eq!(s.q3, 4.0);
        assert_eq!(s.upper_whisker, 4.0);
        assert_eq!(s.lower_whisker, 1.0);
        assert_eq!(s.mean, 22.0);
    }
}
