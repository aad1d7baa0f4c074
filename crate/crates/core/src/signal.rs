//! Self-contact detection from a wrist-to-wrist impedance recording.
//!
//! Processing chain: linear resampling to a fixed rate, median smoothing,
//! first differences, and an adaptive onset threshold derived from the
//! deepest drops of the whole recording. A detected onset opens an interval
//! that closes once the smoothed magnitude climbs back to a fixed fraction
//! of its pre-contact baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Seconds.
    pub time: f64,
    /// Impedance magnitude, ohms.
    pub magnitude: f64,
}

/// Raw impedance recording. Times strictly increase; magnitudes are finite
/// and positive.
#[derive(Clone, Debug, PartialEq)]
pub struct BioimpedanceTrace {
    samples: Vec<Sample>,
    nominal_rate: Option<f64>,
}

impl BioimpedanceTrace {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if !s.time.is_finite() {
                return Err(Error::InvalidInput(format!("sample {} has non-finite time", i)));
            }
            if !(s.magnitude.is_finite() && s.magnitude > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "sample {} magnitude {} is not finite and positive",
                    i, s.magnitude
                )));
            }
            if i > 0 && !(s.time > samples[i - 1].time) {
                return Err(Error::InvalidInput(format!(
                    "sample {} time {} does not increase",
                    i, s.time
                )));
            }
        }
        Ok(BioimpedanceTrace {
            samples,
            nominal_rate: None,
        })
    }

    pub fn with_nominal_rate(mut self, rate: f64) -> Self {
        self.nominal_rate = Some(rate);
        self
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn nominal_rate(&self) -> Option<f64> {
        self.nominal_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0.0,
        }
    }
}

/// Uniformly sampled series: value `i` sits at `start_time + i / rate`.
#[derive(Clone, Debug, PartialEq)]
pub struct UniformTrace {
    pub start_time: f64,
    pub rate: f64,
    pub values: Vec<f64>,
}

impl UniformTrace {
    pub fn time(&self, i: usize) -> f64 {
        self.start_time + i as f64 / self.rate
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(rename = "onset_s")]
    pub onset: f64,
    #[serde(rename = "offset_s")]
    pub offset: f64,
}

impl Interval {
    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }

    /// Closed at the onset, open at the offset.
    pub fn contains(&self, t: f64) -> bool {
        t >= self.onset && t < self.offset
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactTimeline {
    pub intervals: Vec<Interval>,
    #[serde(rename = "frame_rate_hz")]
    pub frame_rate: f64,
    pub frame_flags: Vec<bool>,
}

impl ContactTimeline {
    /// Builds a timeline whose flags cover frames `0..n_frames` at
    /// `frame_rate`, frame `k` sitting at `k / frame_rate` seconds.
    pub fn new(intervals: Vec<Interval>, frame_rate: f64, n_frames: usize) -> Result<Self> {
        for (i, iv) in intervals.iter().enumerate() {
            if !(iv.onset < iv.offset) {
                return Err(Error::InvalidInput(format!("interval {} is empty or reversed", i)));
            }
            if i > 0 && iv.onset < intervals[i - 1].offset {
                return Err(Error::InvalidInput(format!("interval {} overlaps its predecessor", i)));
            }
        }
        if !(frame_rate > 0.0) {
            return Err(Error::InvalidInput("frame rate must be positive".into()));
        }
        let times: Vec<f64> = (0..n_frames).map(|k| k as f64 / frame_rate).collect();
        let frame_flags = flags_for(&intervals, &times);
        Ok(ContactTimeline {
            intervals,
            frame_rate,
            frame_flags,
        })
    }

    pub fn empty(frame_rate: f64, n_frames: usize) -> Self {
        ContactTimeline {
            intervals: Vec::new(),
            frame_rate,
            frame_flags: vec![false; n_frames],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Hz.
    pub resample_rate: f64,
    /// Milliseconds.
    pub median_window: f64,
    pub threshold_fraction: f64,
    pub recovery_fraction: f64,
    /// Milliseconds.
    pub min_contact_duration: f64,
    /// Milliseconds.
    pub min_gap: f64,
    /// Milliseconds. Also bounds how long after an onset the magnitude may
    /// take to fall below the recovery level.
    pub baseline_window: f64,
    /// Video frame rate used for the frame flags, Hz.
    pub frame_rate: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            resample_rate: 1000.0,
            median_window: 100.0,
            threshold_fraction: 1.0 / 3.0,
            recovery_fraction: 0.98,
            min_contact_duration: 150.0,
            min_gap: 100.0,
            baseline_window: 200.0,
            frame_rate: 30.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("resample_rate", self.resample_rate),
            ("median_window", self.median_window),
            ("min_contact_duration", self.min_contact_duration),
            ("min_gap", self.min_gap),
            ("baseline_window", self.baseline_window),
            ("frame_rate", self.frame_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("detector.{} must be positive", name)));
            }
        }
        for (name, v) in [
            ("threshold_fraction", self.threshold_fraction),
            ("recovery_fraction", self.recovery_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("detector.{} must lie in (0, 1)", name)));
            }
        }
        Ok(())
    }
}

/// Linear interpolation onto a uniform grid spanning the first to the last
/// sample.
pub fn resample(trace: &BioimpedanceTrace, rate: f64) -> Result<UniformTrace> {
    let s = trace.samples();
    if s.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "resampling needs at least 2 samples, got {}",
            s.len()
        )));
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidInput("resample rate must be positive".into()));
    }
    let t0 = s[0].time;
    let span = s[s.len() - 1].time - t0;
    // Grid times are kept relative to the first sample.
    let n = (span * rate + 1e-9).floor() as usize + 1;
    let mut values = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let t = k as f64 / rate;
        while j + 2 < s.len() && s[j + 1].time - t0 < t {
            j += 1;
        }
        let (ta, tb) = (s[j].time - t0, s[j + 1].time - t0);
        let w = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        let (a, b) = (s[j].magnitude, s[j + 1].magnitude);
        values.push(if w == 0.0 { a } else if w == 1.0 { b } else { a + w * (b - a) });
    }
    Ok(UniformTrace {
        start_time: t0,
        rate,
        values,
    })
}

/// Odd sample count covering `window_ms` at `rate`, rounded up.
pub fn median_window_samples(window_ms: f64, rate: f64) -> usize {
    let n = ((window_ms * rate / 1000.0) - 1e-9).ceil().max(1.0) as usize;
    if n % 2 == 0 {
        n + 1
    } else {
        n
    }
}

/// Centered running median with truncated windows at the edges. Even-sized
/// edge windows take the lower median.
pub fn median_filter_samples(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let half = window / 2;
    let mut sorted: Vec<f64> = Vec::with_capacity(window.min(n));
    let insert = |sorted: &mut Vec<f64>, x: f64| {
        let pos = sorted.partition_point(|y| y.total_cmp(&x).is_lt());
        sorted.insert(pos, x);
    };
    for &x in values.iter().take(half.min(n - 1) + 1) {
        insert(&mut sorted, x);
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            if i + half < n {
                insert(&mut sorted, values[i + half]);
            }
            if i > half {
                let gone = values[i - half - 1];
                let pos = sorted.partition_point(|y| y.total_cmp(&gone).is_lt());
                sorted.remove(pos);
            }
        }
        out.push(sorted[(sorted.len() - 1) / 2]);
    }
    out
}

pub fn median_filter(trace: &UniformTrace, window_ms: f64) -> UniformTrace {
    let w = median_window_samples(window_ms, trace.rate);
    UniformTrace {
        start_time: trace.start_time,
        rate: trace.rate,
        values: median_filter_samples(&trace.values, w),
    }
}

/// First differences scaled to units per second, stamped at interval
/// midpoints.
pub fn differentiate(trace: &UniformTrace) -> Result<UniformTrace> {
    if trace.values.len() < 2 {
        return Err(Error::InsufficientData(
            "differentiation needs at least 2 values".into(),
        ));
    }
    let values = trace
        .values
        .windows(2)
        .map(|w| (w[1] - w[0]) * trace.rate)
        .collect();
    Ok(UniformTrace {
        start_time: trace.start_time + 0.5 / trace.rate,
        rate: trace.rate,
        values,
    })
}

/// Local minima as indices. A run of equal values counts once, at its first
/// index, when the samples on both sides of the run are higher.
pub fn local_minima(values: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < values.len() {
        let mut end = i;
        while end + 1 < values.len() && values[end + 1] == values[i] {
            end += 1;
        }
        if end + 1 < values.len() && values[i] < values[i - 1] && values[i] < values[end + 1] {
            out.push(i);
        }
        i = end + 1;
    }
    out
}

/// `fraction` times the mean of the three lowest local minima.
pub fn adaptive_threshold(deriv: &UniformTrace, fraction: f64) -> Result<f64> {
    let mut minima: Vec<f64> = local_minima(&deriv.values)
        .into_iter()
        .map(|i| deriv.values[i])
        .collect();
    if minima.len() < 3 {
        return Err(Error::ThresholdUndefined {
            found: minima.len(),
        });
    }
    minima.sort_by(f64::total_cmp);
    Ok(fraction * (minima[0] + minima[1] + minima[2]) / 3.0)
}

/// Intermediate products of the detector, kept for plotting.
#[derive(Clone, Debug)]
pub struct Detection {
    pub smoothed: UniformTrace,
    pub derivative: UniformTrace,
    pub threshold: Option<f64>,
    /// Intervals before duration filtering and merging, with their baselines.
    pub raw: Vec<(Interval, f64)>,
    pub intervals: Vec<Interval>,
}

/// Runs the full chain and returns every intermediate product.
pub fn detect(trace: &BioimpedanceTrace, cfg: &DetectorConfig) -> Result<Detection> {
    cfg.validate()?;
    let uniform = resample(trace, cfg.resample_rate)?;
    let smoothed = median_filter(&uniform, cfg.median_window);
    let derivative = differentiate(&smoothed)?;
    let threshold = match adaptive_threshold(&derivative, cfg.threshold_fraction) {
        Ok(t) => Some(t),
        Err(Error::ThresholdUndefined { .. }) => None,
        Err(e) => return Err(e),
    };
    let mut raw = Vec::new();
    if let Some(thr) = threshold.filter(|t| *t < 0.0) {
        raw = find_events(&smoothed, &derivative, thr, cfg);
    }
    let min_len = cfg.min_contact_duration / 1000.0;
    let min_gap = cfg.min_gap / 1000.0;
    let mut intervals: Vec<Interval> = Vec::new();
    for iv in raw.iter().map(|(iv, _)| *iv).filter(|iv| iv.duration() >= min_len) {
        match intervals.last_mut() {
            Some(last) if iv.onset - last.offset < min_gap => last.offset = iv.offset,
            _ => intervals.push(iv),
        }
    }
    Ok(Detection {
        smoothed,
        derivative,
        threshold,
        raw,
        intervals,
    })
}

fn find_events(
    smoothed: &UniformTrace,
    deriv: &UniformTrace,
    thr: f64,
    cfg: &DetectorConfig,
) -> Vec<(Interval, f64)> {
    let rate = smoothed.rate;
    let d = &deriv.values;
    let m = &smoothed.values;
    let window = ((cfg.baseline_window / 1000.0) * rate).round() as usize;
    let mut events = Vec::new();
    let mut i = 0;
    while i < d.len() {
        let crossing = d[i] < thr && (i == 0 || d[i - 1] >= thr);
        if !crossing {
            i += 1;
            continue;
        }
        // Derivative sample i lies between smoothed samples i and i + 1.
        let onset = deriv.time(i);
        let lo = (i + 1).saturating_sub(window);
        let mut base: Vec<f64> = m[lo..=i].to_vec();
        base.sort_by(f64::total_cmp);
        let baseline = base[(base.len() - 1) / 2];
        let level = cfg.recovery_fraction * baseline;

        let horizon = (i + 1 + window).min(m.len());
        let Some(dropped) = (i + 1..horizon).find(|&j| m[j] < level) else {
            i += 1;
            continue;
        };
        // An event still open when the recording ends has no offset.
        let Some(recovered) = (dropped + 1..m.len()).find(|&j| m[j] >= level) else {
            break;
        };
        let offset = smoothed.time(recovered);
        if offset > onset {
            events.push((Interval { onset, offset }, baseline));
        }
        i = recovered.max(i + 1);
    }
    events
}

/// Detected contact intervals with frame flags covering the recording.
pub fn detect_contacts(trace: &BioimpedanceTrace, cfg: &DetectorConfig) -> Result<ContactTimeline> {
    let det = detect(trace, cfg)?;
    let end = trace.samples().last().map(|s| s.time).unwrap_or(0.0);
    let n_frames = if end >= 0.0 {
        (end * cfg.frame_rate + 1e-9).floor() as usize + 1
    } else {
        0
    };
    ContactTimeline::new(det.intervals, cfg.frame_rate, n_frames)
}

fn flags_for(intervals: &[Interval], frame_times: &[f64]) -> Vec<bool> {
    frame_times
        .iter()
        .map(|&t| intervals.iter().any(|iv| iv.contains(t)))
        .collect()
}

/// Per-frame contact flags; an interval covers `[onset, offset)`.
pub fn align_to_frames(timeline: &ContactTimeline, frame_times: &[f64]) -> Vec<bool> {
    flags_for(&timeline.intervals, frame_times)
}
