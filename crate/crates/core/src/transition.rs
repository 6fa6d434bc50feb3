//! Segment transition matrices built from per-reflection TOA shifts.
//!
//! Row `n` of `A_s` applies a fractional delay of `Δ_{r,s}/T` samples for each
//! reflection `r` whose occupancy interval contains `n`:
//! `A_s(n, n′) = Σ_r sinc(n − Δ_{r,s}/T − n′)`, truncated to
//! `|n − Δ/T − n′| ≤ halfwidth`. Rows no reflection occupies are either the
//! identity row or zero, depending on [`RowFill`].

use serde::{Deserialize, Serialize};

use crate::dtw::{Provenance, ReflectionEstimate, ReflectionMapEstimate};
use crate::error::{Error, Result};
use crate::ism::{sinc, windowed_sinc, ImageSourceSet, DEFAULT_SINC_HALFWIDTH};
use crate::linalg::{BandRow, BandedMatrix};
use crate::signal::{Point3, SampleClock, Segment, Trajectory};

/// Slack when rounding interval bounds to sample indices.
const ROUND_EPS: f64 = 1e-9;

/// Which reflections occupy each time-shift index.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionSets {
    pub sets: Vec<Vec<usize>>,
    /// Rows claimed by more than one reflection.
    pub overlapping_rows: Vec<usize>,
}

impl ReflectionSets {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn occupied(&self, n: usize) -> bool {
        !self.sets[n].is_empty()
    }
}

/// Rows `n` with `τ_min/T ≤ n ≤ τ_max/T`, bounds rounded outward.
pub fn reflection_sets(map: &ReflectionMapEstimate, len: usize, clock: SampleClock) -> ReflectionSets {
    let fs = clock.sample_rate();
    let mut sets = vec![Vec::new(); len];
    for (r, refl) in map.reflections.iter().enumerate() {
        let lo = (refl.tau_min * fs + ROUND_EPS).floor();
        let hi = (refl.tau_max * fs - ROUND_EPS).ceil();
        if hi < 0.0 || lo > (len - 1) as f64 {
            continue;
        }
        let lo = lo.max(0.0) as usize;
        let hi = (hi as usize).min(len - 1);
        for set in &mut sets[lo..=hi] {
            set.push(r);
        }
    }
    let overlapping_rows: Vec<usize> = (0..len).filter(|&n| sets[n].len() > 1).collect();
    if !overlapping_rows.is_empty() {
        log::warn!(
            "{} rows are occupied by more than one reflection (first at n = {})",
            overlapping_rows.len(),
            overlapping_rows[0]
        );
    }
    ReflectionSets {
        sets,
        overlapping_rows,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowFill {
    /// Unoccupied rows copy the sample through.
    Identity,
    /// Unoccupied rows are zero.
    Zero,
}

/// Treatment of rows claimed by several reflections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapPolicy {
    /// Sum the sinc rows of every claiming reflection.
    Sum,
    /// Keep only the reflection whose interval midpoint is closest to the row.
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SincWindow {
    Rectangular,
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransitionOptions {
    pub halfwidth: usize,
    pub fill: RowFill,
    pub overlap: OverlapPolicy,
    pub window: SincWindow,
}

impl Default for TransitionOptions {
    fn default() -> Self {
        Self {
            halfwidth: DEFAULT_SINC_HALFWIDTH,
            fill: RowFill::Identity,
            overlap: OverlapPolicy::Nearest,
            window: SincWindow::Rectangular,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionSource {
    AnalyticIsm,
    DtwEstimated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub matrix: BandedMatrix,
    pub segment: usize,
    pub source: TransitionSource,
    /// Rows claimed by more than one reflection.
    pub overlapping_rows: Vec<usize>,
}

impl TransitionMatrix {
    pub fn identity(len: usize, segment: usize) -> Self {
        Self {
            matrix: BandedMatrix::identity(len),
            segment,
            source: TransitionSource::DtwEstimated,
            overlapping_rows: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matrix.matvec(v)
    }

    /// `A^k v`.
    pub fn apply_power(&self, v: &[f64], k: usize) -> Vec<f64> {
        (0..k).fold(v.to_vec(), |acc, _| self.matrix.matvec(&acc))
    }
}

fn interval_midpoint(r: &ReflectionEstimate) -> f64 {
    0.5 * (r.tau_min + r.tau_max)
}

/// Builds `A_s` from the occupancy sets and per-reflection shifts (seconds).
pub fn build_transition(
    sets: &ReflectionSets,
    map: &ReflectionMapEstimate,
    len: usize,
    clock: SampleClock,
    opts: TransitionOptions,
) -> Result<BandedMatrix> {
    if sets.len() != len {
        return Err(Error::config(format!(
            "reflection sets cover {} rows, matrix has {len}",
            sets.len()
        )));
    }
    let deltas = map.deltas();
    if let Some(r) = sets.sets.iter().flatten().find(|&&r| r >= deltas.len()) {
        return Err(Error::config(format!("no TOA shift for reflection {r}")));
    }
    let fs = clock.sample_rate();
    let hw = opts.halfwidth as f64;
    let kernel = |x: f64| match opts.window {
        SincWindow::Rectangular => {
            if x.abs() <= hw {
                sinc(x)
            } else {
                0.0
            }
        }
        SincWindow::Hann => windowed_sinc(x, opts.halfwidth),
    };

    let rows = (0..len)
        .map(|n| {
            let mut active: Vec<usize> = sets.sets[n].clone();
            if active.len() > 1 && opts.overlap == OverlapPolicy::Nearest {
                let row_time = n as f64 / fs;
                let best = active
                    .iter()
                    .copied()
                    .min_by(|&a, &b| {
                        let da = (interval_midpoint(&map.reflections[a]) - row_time).abs();
                        let db = (interval_midpoint(&map.reflections[b]) - row_time).abs();
                        da.total_cmp(&db).then(a.cmp(&b))
                    })
                    .unwrap();
                active = vec![best];
            }
            if active.is_empty() {
                return match opts.fill {
                    RowFill::Identity => BandRow::identity(n),
                    RowFill::Zero => BandRow {
                        start: n,
                        values: Vec::new(),
                    },
                };
            }
            let shifts: Vec<f64> = active.iter().map(|&r| deltas[r] * fs).collect();
            // columns n′ with |n − shift − n′| ≤ hw for some shift
            let lo_f = shifts.iter().map(|s| n as f64 - s - hw).fold(f64::INFINITY, f64::min);
            let hi_f = shifts.iter().map(|s| n as f64 - s + hw).fold(f64::NEG_INFINITY, f64::max);
            let lo = lo_f.ceil().max(0.0);
            let hi = hi_f.floor().min((len - 1) as f64);
            if hi < lo {
                return BandRow {
                    start: n.min(len - 1),
                    values: Vec::new(),
                };
            }
            let (lo, hi) = (lo as usize, hi as usize);
            let mut values: Vec<f64> = (lo..=hi)
                .map(|m| shifts.iter().map(|s| kernel(n as f64 - s - m as f64)).sum())
                .collect();
            // trim exact zeros so integer shifts stay one entry wide
            let first = values.iter().position(|v| *v != 0.0).unwrap_or(values.len());
            let last = values.iter().rposition(|v| *v != 0.0).map_or(first, |p| p + 1);
            values.truncate(last);
            values.drain(..first);
            BandRow {
                start: lo + first.min(hi + 1 - lo),
                values,
            }
        })
        .collect();
    Ok(BandedMatrix::from_rows(len, rows))
}

/// `A_s` from an estimated reflection map (DTW or baseline).
pub fn transition_from_map(
    map: &ReflectionMapEstimate,
    segment: usize,
    len: usize,
    clock: SampleClock,
    opts: TransitionOptions,
) -> Result<TransitionMatrix> {
    let sets = reflection_sets(map, len, clock);
    let matrix = build_transition(&sets, map, len, clock, opts)?;
    let source = match map.reflections.first().map(|r| r.provenance) {
        Some(Provenance::Analytic) => TransitionSource::AnalyticIsm,
        _ => TransitionSource::DtwEstimated,
    };
    Ok(TransitionMatrix {
        matrix,
        segment,
        source,
        overlapping_rows: sets.overlapping_rows,
    })
}

/// Exact per-reflection shifts and occupancy intervals from known geometry.
///
/// The interval for reflection `r` spans its TOAs at the second and the last
/// location of the segment, padded by `epsilon` seconds on each side.
pub fn analytic_reflection_map(
    images: &ImageSourceSet,
    seg: &Segment,
    positions: &[Point3],
    len: usize,
    clock: SampleClock,
    epsilon: f64,
) -> Result<ReflectionMapEstimate> {
    if seg.l_end >= positions.len() {
        return Err(Error::Index {
            index: seg.l_end,
            len: positions.len(),
        });
    }
    let steps = (seg.num_locations() - 1) as f64;
    let horizon = (len - 1) as f64 * clock.period();
    let c = images.speed_of_sound;
    let reflections = images
        .sources
        .iter()
        .filter_map(|img| {
            let tau_st = img.toa(&positions[seg.l_start], c);
            let tau_next = img.toa(&positions[seg.l_start + 1], c);
            let tau_en = img.toa(&positions[seg.l_end], c);
            let tau_min = tau_next.min(tau_en) - epsilon;
            let tau_max = tau_next.max(tau_en) + epsilon;
            (tau_min <= horizon).then_some(ReflectionEstimate {
                delta: (tau_en - tau_st) / steps,
                tau_min,
                tau_max,
                offset: ((tau_en - tau_st) * clock.sample_rate()).round() as i64,
                provenance: Provenance::Analytic,
            })
        })
        .collect();
    Ok(ReflectionMapEstimate::new(reflections))
}

/// Ground-truth `A_s` for a simulated segment.
pub fn analytic_transition(
    images: &ImageSourceSet,
    seg: &Segment,
    positions: &[Point3],
    len: usize,
    clock: SampleClock,
    epsilon: f64,
    opts: TransitionOptions,
) -> Result<TransitionMatrix> {
    let map = analytic_reflection_map(images, seg, positions, len, clock, epsilon)?;
    let mut a = transition_from_map(&map, seg.index, len, clock, opts)?;
    a.source = TransitionSource::AnalyticIsm;
    Ok(a)
}

/// `A(l)`: `A_s` on `𝓛_s \ {l_{s|st}}`.
#[derive(Debug, Clone)]
pub struct PiecewiseTransition {
    segments: Vec<Segment>,
    matrices: Vec<TransitionMatrix>,
    total: usize,
}

impl PiecewiseTransition {
    pub fn lookup(&self, l: usize) -> Result<&TransitionMatrix> {
        if l == 0 || l >= self.total {
            return Err(Error::config(format!(
                "no transition for location {l}; defined on 1..{}",
                self.total
            )));
        }
        let s = self.segments.partition_point(|seg| seg.l_end < l);
        Ok(&self.matrices[s])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn matrices(&self) -> &[TransitionMatrix] {
        &self.matrices
    }

    pub fn total_locations(&self) -> usize {
        self.total
    }
}

pub fn assemble_piecewise(
    traj: &Trajectory,
    matrices: Vec<TransitionMatrix>,
) -> Result<PiecewiseTransition> {
    let segments = traj.segments().to_vec();
    if matrices.len() != segments.len() {
        return Err(Error::config(format!(
            "{} transition matrices for {} segments",
            matrices.len(),
            segments.len()
        )));
    }
    if let Some(first) = matrices.first() {
        if matrices.iter().any(|m| m.dim() != first.dim()) {
            return Err(Error::config("transition matrices differ in size"));
        }
    }
    for w in segments.windows(2) {
        if w[0].l_end != w[1].l_start {
            return Err(Error::config(format!(
                "gap between segment {} and {}",
                w[0].index, w[1].index
            )));
        }
    }
    if segments.first().map(|s| s.l_start) != Some(0)
        || segments.last().map(|s| s.l_end + 1) != Some(traj.len())
    {
        return Err(Error::config("segments do not cover the trajectory"));
    }
    Ok(PiecewiseTransition {
        segments,
        matrices,
        total: traj.len(),
    })
}
