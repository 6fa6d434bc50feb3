//! Domain types shared by every stage: clocks, impulse responses, signals and
//! the segmented microphone trajectory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the per-segment `spacing == velocity * period` check.
pub const VELOCITY_REL_TOL: f64 = 1e-6;

pub type Point3 = [f64; 3];

pub fn distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleClock {
    sample_rate: f64,
}

impl SampleClock {
    pub fn new(sample_rate: f64) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::config(format!("invalid sample rate {sample_rate}")));
        }
        Ok(Self { sample_rate })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Sampling period in seconds.
    pub fn period(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn ensure_same(&self, other: &SampleClock) -> Result<()> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::config(format!(
                "clock mismatch: {} Hz vs {} Hz",
                self.sample_rate, other.sample_rate
            )));
        }
        Ok(())
    }
}

fn ensure_finite(what: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::config(format!("{what}: non-finite value at index {i}"))),
        None => Ok(()),
    }
}

/// Early room impulse response at one microphone location.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    taps: Vec<f64>,
    clock: SampleClock,
}

impl Rir {
    pub fn new(taps: Vec<f64>, clock: SampleClock) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::config("RIR must have at least one tap"));
        }
        ensure_finite("RIR", &taps)?;
        Ok(Self { taps, clock })
    }

    pub fn zeros(len: usize, clock: SampleClock) -> Result<Self> {
        Self::new(vec![0.0; len], clock)
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn into_taps(self) -> Vec<f64> {
        self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn clock(&self) -> SampleClock {
        self.clock
    }

    pub fn norm(&self) -> f64 {
        norm(&self.taps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSignal {
    samples: Vec<f64>,
    clock: SampleClock,
}

impl SourceSignal {
    pub fn new(samples: Vec<f64>, clock: SampleClock) -> Result<Self> {
        ensure_finite("source signal", &samples)?;
        Ok(Self { samples, clock })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn clock(&self) -> SampleClock {
        self.clock
    }
}

/// Microphone signal, one sample per trajectory location.
#[derive(Debug, Clone, PartialEq)]
pub struct MicRecording {
    samples: Vec<f64>,
    clock: SampleClock,
}

impl MicRecording {
    pub fn new(samples: Vec<f64>, clock: SampleClock) -> Result<Self> {
        ensure_finite("microphone recording", &samples)?;
        Ok(Self { samples, clock })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn clock(&self) -> SampleClock {
        self.clock
    }
}

/// Approximately linear, constant-velocity piece of the trajectory.
///
/// `index` is 1-based. The first location of a segment is the last location of
/// its predecessor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub index: usize,
    pub l_start: usize,
    pub l_end: usize,
    /// m/s
    pub velocity: f64,
    /// Distance between consecutive locations, m.
    pub spacing: f64,
    /// Segment length, m.
    pub length: f64,
}

impl Segment {
    pub fn new(
        index: usize,
        l_start: usize,
        l_end: usize,
        velocity: f64,
        spacing: f64,
        clock: SampleClock,
    ) -> Result<Self> {
        if index == 0 {
            return Err(Error::config("segment indices start at 1"));
        }
        if l_end <= l_start {
            return Err(Error::config(format!(
                "segment {index}: end {l_end} must exceed start {l_start}"
            )));
        }
        let expected = velocity * clock.period();
        let scale = spacing.abs().max(expected.abs()).max(f64::MIN_POSITIVE);
        if (spacing - expected).abs() > VELOCITY_REL_TOL * scale {
            return Err(Error::config(format!(
                "segment {index}: spacing {spacing} m inconsistent with velocity {velocity} m/s"
            )));
        }
        let count = l_end - l_start + 1;
        Ok(Self {
            index,
            l_start,
            l_end,
            velocity,
            spacing,
            length: (count - 1) as f64 * spacing,
        })
    }

    /// Number of locations `L_s`, endpoints included.
    pub fn num_locations(&self) -> usize {
        self.l_end - self.l_start + 1
    }

    pub fn contains(&self, l: usize) -> bool {
        (self.l_start..=self.l_end).contains(&l)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    positions: Vec<Point3>,
    timestamps: Option<Vec<f64>>,
    segments: Vec<Segment>,
}

impl Trajectory {
    /// Builds a trajectory whose segments join at the given location indices.
    ///
    /// `boundaries` must start at 0, end at `positions.len() - 1` and be strictly
    /// increasing. Segment velocity is the average speed over the segment, taken
    /// from `timestamps` when given and from one location per sample otherwise.
    pub fn new(
        positions: Vec<Point3>,
        timestamps: Option<Vec<f64>>,
        boundaries: &[usize],
        clock: SampleClock,
    ) -> Result<Self> {
        let total = positions.len();
        if total < 2 {
            return Err(Error::config("trajectory needs at least two locations"));
        }
        if positions.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::config("trajectory has non-finite coordinates"));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != total {
                return Err(Error::config("timestamps length differs from positions"));
            }
            if ts.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::config("timestamps must be strictly increasing"));
            }
        }
        if boundaries.len() < 2
            || boundaries[0] != 0
            || *boundaries.last().unwrap() != total - 1
            || boundaries.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::config(format!(
                "segment boundaries {boundaries:?} must increase from 0 to {}",
                total - 1
            )));
        }

        let mut segments = Vec::with_capacity(boundaries.len() - 1);
        for (s, w) in boundaries.windows(2).enumerate() {
            let (st, en) = (w[0], w[1]);
            let path: f64 = positions[st..=en]
                .windows(2)
                .map(|p| distance(&p[0], &p[1]))
                .sum();
            let steps = (en - st) as f64;
            let duration = match &timestamps {
                Some(ts) => ts[en] - ts[st],
                None => steps * clock.period(),
            };
            let velocity = path / duration;
            segments.push(Segment::new(
                s + 1,
                st,
                en,
                velocity,
                velocity * clock.period(),
                clock,
            )?);
        }
        Ok(Self {
            positions,
            timestamps,
            segments,
        })
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn timestamps(&self) -> Option<&[f64]> {
        self.timestamps.as_deref()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// `L_total`.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Location indices where segments meet, including both ends.
    pub fn boundaries(&self) -> Vec<usize> {
        std::iter::once(0)
            .chain(self.segments.iter().map(|s| s.l_end))
            .collect()
    }
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Writes `x(k), x(k-1), …, x(k-N+1)` into `out`, zero before the first sample.
pub(crate) fn regressor_into(x: &[f64], k: usize, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = if i <= k { x[k - i] } else { 0.0 };
    }
}

/// Regressor vector `x(k) = (x(k) … x(k−N+1))ᵀ`.
pub fn regressor(x: &SourceSignal, k: usize, n: usize) -> Result<Vec<f64>> {
    if k >= x.len() {
        return Err(Error::Index { index: k, len: x.len() });
    }
    let mut out = vec![0.0; n];
    regressor_into(x.samples(), k, &mut out);
    Ok(out)
}

/// Noise-free observation `xᵀ(k) h`.
pub fn convolve_observe(h: &Rir, x: &SourceSignal, k: usize) -> Result<f64> {
    h.clock().ensure_same(&x.clock())?;
    if k >= x.len() {
        return Err(Error::Index { index: k, len: x.len() });
    }
    let xs = x.samples();
    Ok(h
        .taps()
        .iter()
        .take(k + 1)
        .enumerate()
        .map(|(i, t)| t * xs[k - i])
        .sum())
}
