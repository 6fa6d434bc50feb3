//! Dynamic time warping between the RIRs at the two ends of a segment, and
//! extraction of per-reflection TOA shifts from the resulting warp matrix.
//!
//! Cost-matrix rows index the end RIR (`n`), columns the start RIR (`n′`).
//! Warp-path pairs are stored as sample indices `(n, n′)`; `WarpPath::matrix_coords`
//! gives the 1-based `(n + 2, n′ + 2)` cost-matrix coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::signal::{Rir, SampleClock};

/// Entries of `W` with magnitude at or below this are treated as zero.
pub const NONZERO_EPS: f64 = 1e-9;
pub const DEFAULT_MIN_DIAG_LEN: usize = 8;
pub const DEFAULT_MAX_GAP: usize = 1;
/// Minimum distance between baseline peaks, samples.
pub const BASELINE_MIN_PEAK_DISTANCE: usize = 16;

/// Accumulated DTW cost, `(N+1)×(N+1)`, with `D(1,1) = 0` and the rest of the
/// first row and column at `+∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    size: usize,
    d: Vec<f64>,
}

impl CostMatrix {
    /// Entry at 0-based matrix coordinates.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.size + j]
    }

    /// `N + 1`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Cost of the optimal alignment, `D(N+1, N+1)`.
    pub fn total(&self) -> f64 {
        self.at(self.size - 1, self.size - 1)
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_rows(self.size, self.size, self.d.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpPath {
    /// `(n, n′)` sample-index pairs, from `(0, 0)` to `(N−1, N−1)`.
    pub pairs: Vec<(usize, usize)>,
}

impl WarpPath {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn matrix_coords(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().map(|&(n, m)| (n + 2, m + 2)).collect()
    }

    /// Checks the monotone step set and the endpoints.
    pub fn is_valid(&self, len: usize) -> bool {
        if self.pairs.first() != Some(&(0, 0)) || self.pairs.last() != Some(&(len - 1, len - 1)) {
            return false;
        }
        self.pairs.windows(2).all(|w| {
            let (dn, dm) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            matches!((dn, dm), (1, 0) | (0, 1) | (1, 1))
        })
    }
}

pub fn dtw_cost(h_st: &Rir, h_en: &Rir) -> Result<CostMatrix> {
    if h_st.len() != h_en.len() {
        return Err(Error::config(format!(
            "DTW needs equal lengths, got {} and {}",
            h_st.len(),
            h_en.len()
        )));
    }
    h_st.clock().ensure_same(&h_en.clock())?;
    Ok(cost_from_slices(h_st.taps(), h_en.taps()))
}

fn cost_from_slices(st: &[f64], en: &[f64]) -> CostMatrix {
    let size = st.len() + 1;
    let mut d = vec![f64::INFINITY; size * size];
    d[0] = 0.0;
    for i in 1..size {
        let e = en[i - 1];
        for j in 1..size {
            let up = d[(i - 1) * size + j];
            let left = d[i * size + j - 1];
            let diag = d[(i - 1) * size + j - 1];
            d[i * size + j] = (e - st[j - 1]).abs() + up.min(left).min(diag);
        }
    }
    CostMatrix { size, d }
}

/// Optimal warp path, backtracked from `D(N+1, N+1)`. Ties prefer the
/// diagonal step, then vertical (end index), then horizontal (start index).
pub fn backtrack(cost: &CostMatrix) -> WarpPath {
    let (mut i, mut j) = (cost.size - 1, cost.size - 1);
    let mut pairs = vec![(i - 1, j - 1)];
    while (i, j) != (1, 1) {
        let diag = cost.at(i - 1, j - 1);
        let up = cost.at(i - 1, j);
        let left = cost.at(i, j - 1);
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        pairs.push((i - 1, j - 1));
    }
    pairs.reverse();
    WarpPath { pairs }
}

/// `W_st`, `W_en` (stored by their one-hot column per path row) and the
/// least-squares map `W = W_en⁺ W_st`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpMatrices {
    /// For path row `i`, the column holding the 1 in `W_st` (start-RIR index).
    pub st_cols: Vec<usize>,
    /// For path row `i`, the column holding the 1 in `W_en` (end-RIR index).
    pub en_cols: Vec<usize>,
    pub w: Matrix,
}

impl WarpMatrices {
    pub fn warp_st(&self, h_st: &[f64]) -> Vec<f64> {
        self.st_cols.iter().map(|&c| h_st[c]).collect()
    }

    pub fn warp_en(&self, h_en: &[f64]) -> Vec<f64> {
        self.en_cols.iter().map(|&c| h_en[c]).collect()
    }

    pub fn w_st_dense(&self, len: usize) -> Matrix {
        one_hot(&self.st_cols, len)
    }

    pub fn w_en_dense(&self, len: usize) -> Matrix {
        one_hot(&self.en_cols, len)
    }
}

fn one_hot(cols: &[usize], len: usize) -> Matrix {
    let mut m = Matrix::zeros(cols.len(), len);
    for (i, &c) in cols.iter().enumerate() {
        m.set(i, c, 1.0);
    }
    m
}

pub fn warp_matrices(path: &WarpPath, len: usize) -> Result<WarpMatrices> {
    let (en_cols, st_cols): (Vec<usize>, Vec<usize>) = path.pairs.iter().copied().unzip();
    if en_cols.iter().chain(&st_cols).any(|&c| c >= len) {
        return Err(Error::config("warp path index exceeds RIR length"));
    }
    // W_enᵀ W_en is diagonal with the number of path rows hitting each column.
    let mut counts = vec![0usize; len];
    for &n in &en_cols {
        counts[n] += 1;
    }
    if let Some(n) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Numeric(format!(
            "warp path never visits end-RIR sample {n}; left inverse undefined"
        )));
    }
    let mut w = Matrix::zeros(len, len);
    for (&n, &m) in en_cols.iter().zip(&st_cols) {
        w.set(n, m, w.get(n, m) + 1.0 / counts[n] as f64);
    }
    Ok(WarpMatrices {
        st_cols,
        en_cols,
        w,
    })
}

/// Maximal run of nonzero `W` entries at a constant offset `n − n′`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagonalSegment {
    /// `(n, n′)` of the first cell.
    pub start: (usize, usize),
    /// `(n, n′)` of the last cell.
    pub end: (usize, usize),
    /// Cells spanned, bridged gaps included.
    pub length: usize,
    /// `n − n′`, samples.
    pub offset: i64,
}

/// Scans every diagonal of `w` for runs of at least `min_len` cells, bridging
/// up to `max_gap` consecutive zero cells. Sorted by start `(n′, n)`.
pub fn extract_diagonals(w: &Matrix, min_len: usize, max_gap: usize) -> Vec<DiagonalSegment> {
    let n = w.rows();
    assert_eq!(n, w.cols(), "W must be square");
    let mut out = Vec::new();
    for offset in -(n as i64 - 1)..=(n as i64 - 1) {
        // cells (m + offset, m)
        let m_lo = (-offset).max(0) as usize;
        let m_hi = (n as i64 - offset.max(0)) as usize;
        let mut run: Option<(usize, usize)> = None; // (first m, last nonzero m)
        let flush = |run: Option<(usize, usize)>, out: &mut Vec<DiagonalSegment>| {
            if let Some((a, b)) = run {
                let length = b - a + 1;
                if length >= min_len {
                    out.push(DiagonalSegment {
                        start: ((a as i64 + offset) as usize, a),
                        end: ((b as i64 + offset) as usize, b),
                        length,
                        offset,
                    });
                }
            }
        };
        for m in m_lo..m_hi {
            let nz = w.get((m as i64 + offset) as usize, m).abs() > NONZERO_EPS;
            if !nz {
                continue;
            }
            run = match run {
                Some((a, b)) if m - b <= max_gap + 1 => Some((a, m)),
                prev => {
                    flush(prev, &mut out);
                    Some((m, m))
                }
            };
        }
        flush(run, &mut out);
    }
    out.sort_by_key(|s| (s.start.1, s.start.0));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Dtw,
    Baseline,
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionEstimate {
    /// Per-location TOA shift `Δ̂_{r,s}`, s.
    pub delta: f64,
    /// Occupancy interval `[τ̂_min, τ̂_max]`, s.
    pub tau_min: f64,
    pub tau_max: f64,
    /// Integer shift over the whole segment, samples (0 for analytic estimates
    /// with fractional shifts).
    pub offset: i64,
    pub provenance: Provenance,
}

/// Per-reflection shift and occupancy estimates for one segment. Intervals are
/// sorted by `tau_min`; overlapping pairs are listed in `overlaps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionMapEstimate {
    pub reflections: Vec<ReflectionEstimate>,
    pub overlaps: Vec<(usize, usize)>,
}

impl ReflectionMapEstimate {
    pub fn new(mut reflections: Vec<ReflectionEstimate>) -> Self {
        reflections.sort_by(|a, b| {
            a.tau_min
                .total_cmp(&b.tau_min)
                .then(a.tau_max.total_cmp(&b.tau_max))
        });
        let mut overlaps = Vec::new();
        for a in 0..reflections.len() {
            for b in a + 1..reflections.len() {
                if reflections[b].tau_min <= reflections[a].tau_max {
                    overlaps.push((a, b));
                }
            }
        }
        for &(a, b) in &overlaps {
            log::debug!(
                "reflection intervals {a} [{:.6}, {:.6}] and {b} [{:.6}, {:.6}] overlap",
                reflections[a].tau_min,
                reflections[a].tau_max,
                reflections[b].tau_min,
                reflections[b].tau_max
            );
        }
        Self {
            reflections,
            overlaps,
        }
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.reflections.iter().map(|r| r.delta).collect()
    }
}

pub fn estimate_reflection_map(
    segments: &[DiagonalSegment],
    num_locations: usize,
    clock: SampleClock,
) -> Result<ReflectionMapEstimate> {
    if num_locations < 2 {
        return Err(Error::config(format!(
            "segment needs at least 2 locations, got {num_locations}"
        )));
    }
    let t = clock.period();
    let steps = (num_locations - 1) as f64;
    let reflections = segments
        .iter()
        .map(|seg| {
            let shift = seg.offset as f64 / steps; // Δ̂/T
            let (n_st, m_st) = seg.start;
            let (n_en, m_en) = seg.end;
            ReflectionEstimate {
                delta: seg.offset as f64 * t / steps,
                tau_min: t * (m_st as f64 + shift).min(n_st as f64),
                tau_max: t * (n_en as f64).max(m_en as f64 + shift),
                offset: seg.offset,
                provenance: Provenance::Dtw,
            }
        })
        .collect();
    Ok(ReflectionMapEstimate::new(reflections))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DtwParams {
    pub min_diag_len: usize,
    pub max_gap: usize,
}

impl Default for DtwParams {
    fn default() -> Self {
        Self {
            min_diag_len: DEFAULT_MIN_DIAG_LEN,
            max_gap: DEFAULT_MAX_GAP,
        }
    }
}

/// Full DTW chain for one segment.
#[derive(Debug, Clone)]
pub struct EndpointAlignment {
    pub cost: CostMatrix,
    pub path: WarpPath,
    pub warp: WarpMatrices,
    pub diagonals: Vec<DiagonalSegment>,
    pub map: ReflectionMapEstimate,
}

pub fn align_endpoints(
    h_st: &Rir,
    h_en: &Rir,
    num_locations: usize,
    params: DtwParams,
) -> Result<EndpointAlignment> {
    let cost = dtw_cost(h_st, h_en)?;
    let path = backtrack(&cost);
    let warp = warp_matrices(&path, h_st.len())?;
    let diagonals = extract_diagonals(&warp.w, params.min_diag_len, params.max_gap);
    let map = estimate_reflection_map(&diagonals, num_locations, h_st.clock())?;
    Ok(EndpointAlignment {
        cost,
        path,
        warp,
        diagonals,
        map,
    })
}

/// TOAs from matched filtering and peak picking.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakPicks {
    /// Seconds, ascending.
    pub toas: Vec<f64>,
    /// Fewer local maxima than requested were found.
    pub short: bool,
}

/// Cross-correlates `h` with `reference` (zero lag at the reference's
/// largest-magnitude tap) and returns the lags of the `count` largest local
/// maxima at least [`BASELINE_MIN_PEAK_DISTANCE`] samples apart.
pub fn baseline_peak_toas(h: &Rir, reference: &Rir, count: usize) -> Result<PeakPicks> {
    if count == 0 {
        return Err(Error::config("baseline needs at least one peak"));
    }
    h.clock().ensure_same(&reference.clock())?;
    let x = h.taps();
    let r = reference.taps();
    let center = r
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0) as i64;
    let corr: Vec<f64> = (0..x.len() as i64)
        .map(|lag| {
            x.iter()
                .enumerate()
                .filter_map(|(n, xv)| {
                    let k = n as i64 - lag + center;
                    (0..r.len() as i64).contains(&k).then(|| xv * r[k as usize])
                })
                .sum()
        })
        .collect();

    let mut maxima: Vec<usize> = (0..corr.len())
        .filter(|&i| {
            let left = if i > 0 { corr[i - 1] } else { f64::NEG_INFINITY };
            let right = corr.get(i + 1).copied().unwrap_or(f64::NEG_INFINITY);
            corr[i] > 0.0 && corr[i] >= left && corr[i] > right
        })
        .collect();
    maxima.sort_by(|&a, &b| corr[b].total_cmp(&corr[a]).then(a.cmp(&b)));

    let mut picked: Vec<usize> = Vec::with_capacity(count);
    for i in maxima {
        if picked.len() == count {
            break;
        }
        if picked.iter().all(|&p| p.abs_diff(i) >= BASELINE_MIN_PEAK_DISTANCE) {
            picked.push(i);
        }
    }
    let short = picked.len() < count;
    picked.sort_unstable();
    let t = h.clock().period();
    Ok(PeakPicks {
        toas: picked.into_iter().map(|i| i as f64 * t).collect(),
        short,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clock() -> SampleClock {
        SampleClock::new(16_000.0).unwrap()
    }

    fn rir(v: &[f64]) -> Rir {
        Rir::new(v.to_vec(), clock()).unwrap()
    }

    /// Minimum cost over all monotone paths from (0,0) to (N-1,N-1).
    fn brute_force_cost(st: &[f64], en: &[f64]) -> f64 {
        fn go(st: &[f64], en: &[f64], n: usize, m: usize) -> f64 {
            let here = (en[n] - st[m]).abs();
            if n == 0 && m == 0 {
                return here;
            }
            let mut best = f64::INFINITY;
            if n > 0 && m > 0 {
                best = best.min(go(st, en, n - 1, m - 1));
            }
            if n > 0 {
                best = best.min(go(st, en, n - 1, m));
            }
            if m > 0 {
                best = best.min(go(st, en, n, m - 1));
            }
            here + best
        }
        go(st, en, en.len() - 1, st.len() - 1)
    }

    fn path_cost(path: &WarpPath, st: &[f64], en: &[f64]) -> f64 {
        path.pairs.iter().map(|&(n, m)| (en[n] - st[m]).abs()).sum()
    }

    #[test]
    fn identical_inputs() {
        let h = rir(&[0.1, -0.4, 0.9, 0.0, 0.3]);
        let d = dtw_cost(&h, &h).unwrap();
        assert_eq!(d.total(), 0.0);
        let p = backtrack(&d);
        assert_eq!(p.pairs, (0..5).map(|i| (i, i)).collect::<Vec<_>>());
        let w = warp_matrices(&p, 5).unwrap();
        assert_eq!(w.w, Matrix::identity(5));
    }

    #[test]
    fn boundary_initialisation() {
        let d = dtw_cost(&rir(&[1.0, 2.0]), &rir(&[2.0, 1.0])).unwrap();
        assert_eq!(d.at(0, 0), 0.0);
        assert!(d.at(0, 1).is_infinite() && d.at(2, 0).is_infinite());
    }

    #[test]
    fn two_sample_swap_matches_enumeration() {
        let st = [0.0, 1.0];
        let en = [1.0, 0.0];
        let d = dtw_cost(&rir(&st), &rir(&en)).unwrap();
        // every monotone path pays |1 - 0| at both corners
        assert_eq!(d.total(), brute_force_cost(&st, &en));
        assert_eq!(d.total(), 2.0);
    }

    #[test]
    fn single_cell() {
        let d = dtw_cost(&rir(&[0.25]), &rir(&[-0.5])).unwrap();
        assert_eq!(d.total(), 0.75);
        assert_eq!(backtrack(&d).pairs, vec![(0, 0)]);
        assert_eq!(backtrack(&d).matrix_coords(), vec![(2, 2)]);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            dtw_cost(&rir(&[1.0]), &rir(&[1.0, 2.0])),
            Err(Error::Config(_))
        ));
    }

    fn impulse(len: usize, at: usize) -> Vec<f64> {
        let mut v = vec![0.0; len];
        v[at] = 1.0;
        v
    }

    #[test]
    fn impulse_shift_alignment() {
        let st = impulse(8, 2);
        let en = impulse(8, 4);
        let d = dtw_cost(&rir(&st), &rir(&en)).unwrap();
        assert_eq!(d.total(), brute_force_cost(&st, &en));
        assert_eq!(d.total(), 0.0);
        let p = backtrack(&d);
        assert!(p.is_valid(8));
        assert!(p.pairs.contains(&(4, 2)));
        let w = warp_matrices(&p, 8).unwrap();
        let mapped = w.w.matvec(&st, crate::exec::Exec::Sequential);
        assert_eq!(mapped, en);
    }

    #[test]
    fn shared_output_sample_is_averaged() {
        // end sample 1 matched with start samples 1 and 2
        let path = WarpPath {
            pairs: vec![(0, 0), (1, 1), (1, 2), (2, 3)],
        };
        let w = warp_matrices(&path, 4);
        // end sample 3 never visited
        assert!(matches!(w, Err(Error::Numeric(_))));
        let path = WarpPath {
            pairs: vec![(0, 0), (1, 1), (1, 2), (2, 3), (3, 3)],
        };
        let w = warp_matrices(&path, 4).unwrap();
        assert_eq!(w.w.row(1), &[0.0, 0.5, 0.5, 0.0]);
        assert_eq!(w.w.row(3), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(w.w_st_dense(4).rows(), 5);
    }

    #[test]
    fn identity_diagonal() {
        let segs = extract_diagonals(&Matrix::identity(20), 3, 1);
        assert_eq!(
            segs,
            vec![DiagonalSegment {
                start: (0, 0),
                end: (19, 19),
                length: 20,
                offset: 0
            }]
        );
    }

    #[test]
    fn constructed_offset_run() {
        let mut w = Matrix::zeros(30, 30);
        for k in 10..=20 {
            w.set(k + 4, k, 1.0);
        }
        let segs = extract_diagonals(&w, 8, 1);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].offset, 4);
        assert_eq!(segs[0].start, (14, 10));
        assert_eq!(segs[0].end, (24, 20));
        assert_eq!(segs[0].length, 11);
        assert!(extract_diagonals(&w, 12, 1).is_empty());
    }

    #[test]
    fn single_gap_is_bridged() {
        let mut w = Matrix::zeros(30, 30);
        for k in (3..=15).filter(|&k| k != 9) {
            w.set(k, k + 2, 0.5);
        }
        let segs = extract_diagonals(&w, 8, 1);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].offset, -2);
        assert_eq!(segs[0].length, 13);
        // a two-cell hole splits the run into pieces shorter than 8
        w.set(10, 12, 0.0);
        assert!(extract_diagonals(&w, 8, 1).is_empty());
    }

    fn seg(offset: i64, start: (usize, usize), end: (usize, usize)) -> DiagonalSegment {
        DiagonalSegment {
            start,
            end,
            length: end.1 - start.1 + 1,
            offset,
        }
    }

    #[test]
    fn reflection_map_arithmetic() {
        let c = clock();
        let t = c.period();
        let m = estimate_reflection_map(&[seg(4, (14, 10), (24, 20))], 5, c).unwrap();
        assert!((m.reflections[0].delta - t).abs() < 1e-18);

        let m = estimate_reflection_map(&[seg(0, (7, 7), (19, 19))], 9, c).unwrap();
        let r = &m.reflections[0];
        assert_eq!(r.delta, 0.0);
        assert!((r.tau_min - 7.0 * t).abs() < 1e-18 && (r.tau_max - 19.0 * t).abs() < 1e-18);

        let m = estimate_reflection_map(&[seg(2, (14, 12), (24, 22))], 3, c).unwrap();
        let r = &m.reflections[0];
        assert!((r.delta - t).abs() < 1e-18);
        assert!((r.tau_min - 13.0 * t).abs() < 1e-15);
        assert!((r.tau_max - 24.0 * t).abs() < 1e-15);

        assert!(matches!(
            estimate_reflection_map(&[], 1, c),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn overlapping_intervals_are_flagged() {
        let c = clock();
        let m = estimate_reflection_map(
            &[seg(0, (30, 30), (40, 40)), seg(1, (10, 9), (32, 31))],
            2,
            c,
        )
        .unwrap();
        assert!(m.reflections[0].tau_min < m.reflections[1].tau_min);
        assert_eq!(m.overlaps, vec![(0, 1)]);
    }

    fn pulse_rir(len: usize, pulses: &[(f64, f64)], hw: usize) -> Rir {
        let mut taps = vec![0.0; len];
        for &(c, a) in pulses {
            crate::ism::add_pulse(&mut taps, c, a, hw);
        }
        rir(&taps)
    }

    #[test]
    fn baseline_single_and_double_pulse() {
        let t = clock().period();
        let reference = pulse_rir(128, &[(40.0, 1.0)], 8);
        let one = pulse_rir(128, &[(10.0, 1.0)], 8);
        let picks = baseline_peak_toas(&one, &reference, 1).unwrap();
        assert_eq!(picks.toas.len(), 1);
        assert!((picks.toas[0] - 10.0 * t).abs() < 1e-15);

        let two = pulse_rir(128, &[(10.0, 1.0), (30.0, 0.4)], 8);
        let picks = baseline_peak_toas(&two, &reference, 2).unwrap();
        assert!(!picks.short);
        assert!((picks.toas[0] - 10.0 * t).abs() < 1e-15);
        assert!((picks.toas[1] - 30.0 * t).abs() < 1e-15);
        let picks = baseline_peak_toas(&two, &reference, 1).unwrap();
        assert_eq!(picks.toas.len(), 1);
        assert!((picks.toas[0] - 10.0 * t).abs() < 1e-15);
    }

    #[test]
    fn baseline_flags_short() {
        let reference = pulse_rir(64, &[(20.0, 1.0)], 4);
        let one = pulse_rir(64, &[(30.0, 1.0)], 4);
        let picks = baseline_peak_toas(&one, &reference, 3).unwrap();
        assert!(picks.short);
        assert!(!picks.toas.is_empty());
        assert!(baseline_peak_toas(&one, &reference, 0).is_err());
    }

    #[test]
    fn missing_reflection_mismatch() {
        // the middle reflection exists only in the start RIR; the others move by +2 and +3
        let st = pulse_rir(160, &[(30.25, 1.0), (70.5, 0.8), (115.75, 0.6)], 8);
        let en = pulse_rir(160, &[(32.25, 1.0), (118.75, 0.6)], 8);
        let reference = pulse_rir(160, &[(80.0, 1.0)], 8);
        let t = clock().period();
        let picks_st = baseline_peak_toas(&st, &reference, 3).unwrap();
        let picks_en = baseline_peak_toas(&en, &reference, 3).unwrap();
        let paired: Vec<f64> = picks_st
            .toas
            .iter()
            .zip(&picks_en.toas)
            .map(|(a, b)| (b - a) / t)
            .collect();
        assert!(picks_en.short);
        // the orphan start TOA is paired with the last end TOA
        assert!((paired[0] - 2.0).abs() < 1e-9);
        assert!((paired[1] - 48.0).abs() < 1e-9);

        let a = align_endpoints(&st, &en, 2, DtwParams::default()).unwrap();
        let offsets: Vec<i64> = a.map.reflections.iter().map(|r| r.offset).collect();
        // runs over silence carry offset 0; none carries a shift of its own for the orphan
        assert!(offsets.iter().all(|o| [0, 2, 3].contains(o)), "{offsets:?}");
        assert_eq!(offsets.iter().filter(|&&o| o != 0).count(), 2);
        for (c, shift) in [(30usize, 2), (115, 3)] {
            let d = a.diagonals.iter().find(|d| d.start.1 <= c && d.end.1 >= c).unwrap();
            assert_eq!(d.offset, shift);
        }
    }

    proptest! {
        #[test]
        fn dtw_is_optimal(pair in (1usize..=6).prop_flat_map(|n| (
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(-1.0f64..1.0, n),
        ))) {
            let (st, en) = pair;
            let d = dtw_cost(&rir(&st), &rir(&en)).unwrap();
            let oracle = brute_force_cost(&st, &en);
            prop_assert!((d.total() - oracle).abs() <= 1e-12 * oracle.max(1.0));
            let p = backtrack(&d);
            prop_assert!(p.is_valid(st.len()));
            prop_assert!(p.len() >= st.len());
            prop_assert!((path_cost(&p, &st, &en) - d.total()).abs() <= 1e-12);
        }

        #[test]
        fn warp_consistency(st in prop::collection::vec(-1.0f64..1.0, 12),
                            en in prop::collection::vec(-1.0f64..1.0, 12)) {
            let d = dtw_cost(&rir(&st), &rir(&en)).unwrap();
            let p = backtrack(&d);
            let w = warp_matrices(&p, 12).unwrap();
            // the accumulated cost is the ℓ1 distance of the warped sequences
            let l1: f64 = w.warp_st(&st).iter().zip(w.warp_en(&en)).map(|(a, b)| (a - b).abs()).sum();
            prop_assert!((l1 - d.total()).abs() <= 1e-10);
            for i in 0..p.len() {
                let row_st: f64 = w.w_st_dense(12).row(i).iter().sum();
                prop_assert_eq!(row_st, 1.0);
            }
        }

        #[test]
        fn self_alignment_is_identity(h in prop::collection::vec(-1.0f64..1.0, 1..40)) {
            let n = h.len();
            let d = dtw_cost(&rir(&h), &rir(&h)).unwrap();
            prop_assert_eq!(d.total(), 0.0);
            let w = warp_matrices(&backtrack(&d), n).unwrap();
            prop_assert_eq!(w.w, Matrix::identity(n));
        }

        #[test]
        fn integer_shift_round_trip(shift in -6i64..=6, center in 30usize..60) {
            let len = 96;
            let st = pulse_rir(len, &[(center as f64 + 0.37, 1.0)], 6);
            let en = pulse_rir(len, &[((center as i64 + shift) as f64 + 0.37, 1.0)], 6);
            let a = align_endpoints(&st, &en, 2, DtwParams::default()).unwrap();
            // the run covering the pulse peak carries the true shift
            let covering: Vec<_> = a.diagonals.iter()
                .filter(|s| s.start.1 <= center && s.end.1 >= center)
                .collect();
            prop_assert_eq!(covering.len(), 1);
            prop_assert_eq!(covering[0].offset, shift);
        }
    }
}
