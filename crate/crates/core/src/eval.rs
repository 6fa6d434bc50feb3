//! Evaluation metrics: location-lag alignment, normalized misalignment and
//! correlation of the reconstructed microphone signal.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::signal::{dot, norm, regressor_into, MicRecording, Rir, SourceSignal};

pub const DEFAULT_NCC_WINDOW: usize = 16;
/// Reported in place of −∞ for an exact match.
pub const NM_FLOOR_DB: f64 = -300.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlignmentResult {
    pub lambda: i64,
    pub ncc_peak: f64,
}

/// Lags in search order 0, +1, −1, +2, −2, …
fn lag_order(window: usize) -> impl Iterator<Item = i64> {
    std::iter::once(0).chain((1..=window as i64).flat_map(|k| [k, -k]))
}

/// Finds the location lag `λ` maximizing the NCC between `h(l_p)` and `ĥ⁺(l_p − λ)`.
///
/// Lags that would leave the estimate sequence are skipped. Ties keep the lag
/// seen first, so smaller `|λ|` wins and `+λ` precedes `−λ`.
pub fn align_ncc(estimates: &[Vec<f64>], measured: &Rir, l_p: usize, window: usize) -> Result<AlignmentResult> {
    let meas = measured.taps();
    let meas_norm = norm(meas);
    if meas_norm == 0.0 {
        return Err(Error::Numeric(format!("measured RIR at location {l_p} is all zero")));
    }
    let mut best: Option<AlignmentResult> = None;
    for lambda in lag_order(window) {
        let l = l_p as i64 - lambda;
        if l < 0 || l as usize >= estimates.len() {
            continue;
        }
        let est = &estimates[l as usize];
        if est.len() != meas.len() {
            return Err(Error::config(format!(
                "estimate has {} taps, measured RIR {}",
                est.len(),
                meas.len()
            )));
        }
        let est_norm = norm(est);
        let ncc = if est_norm == 0.0 {
            0.0
        } else {
            dot(meas, est) / (meas_norm * est_norm)
        };
        if best.is_none_or(|b| ncc > b.ncc_peak) {
            best = Some(AlignmentResult { lambda, ncc_peak: ncc });
        }
    }
    best.ok_or(Error::Index {
        index: l_p,
        len: estimates.len(),
    })
}

/// `20 log10(‖est − meas‖ / ‖meas‖)`, floored at [`NM_FLOOR_DB`].
pub fn misalignment_db(est: &[f64], meas: &[f64]) -> Result<f64> {
    if est.len() != meas.len() {
        return Err(Error::config(format!(
            "estimate has {} taps, reference {}",
            est.len(),
            meas.len()
        )));
    }
    let reference = norm(meas);
    if reference == 0.0 {
        return Err(Error::Numeric("reference RIR has zero norm".into()));
    }
    let err = est
        .iter()
        .zip(meas)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if err == 0.0 {
        return Ok(NM_FLOOR_DB);
    }
    Ok((20.0 * (err / reference).log10()).max(NM_FLOOR_DB))
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::config(format!(
            "correlation needs two equal-length sequences, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Numeric("correlation of a constant sequence".into()));
    }
    Ok(sab / (saa.sqrt() * sbb.sqrt()))
}

/// `ŷ(l) = xᵀ(l) ĥ⁺(l)` for every location.
pub fn reconstruct(estimates: &[Vec<f64>], x: &SourceSignal) -> Result<Vec<f64>> {
    reconstruct_from(estimates, x, 0)
}

/// As [`reconstruct`], with location 0 at source sample `offset`.
pub fn reconstruct_from(estimates: &[Vec<f64>], x: &SourceSignal, offset: usize) -> Result<Vec<f64>> {
    if offset + estimates.len() > x.len() {
        return Err(Error::config(format!(
            "{} estimates but only {} source samples",
            estimates.len(),
            x.len()
        )));
    }
    let n = estimates.first().map_or(0, Vec::len);
    let mut xl = vec![0.0; n];
    Ok(estimates
        .iter()
        .enumerate()
        .map(|(l, h)| {
            regressor_into(x.samples(), offset + l, &mut xl);
            dot(&xl, h)
        })
        .collect())
}

/// Pearson correlation between the reconstruction and the recording.
pub fn reconstruct_and_correlate(estimates: &[Vec<f64>], x: &SourceSignal, y: &MicRecording) -> Result<f64> {
    correlate_from(estimates, x, y, 0)
}

/// As [`reconstruct_and_correlate`], with location 0 at sample `offset`.
pub fn correlate_from(estimates: &[Vec<f64>], x: &SourceSignal, y: &MicRecording, offset: usize) -> Result<f64> {
    x.clock().ensure_same(&y.clock())?;
    let yhat = reconstruct_from(estimates, x, offset)?;
    if y.len() < offset + yhat.len() {
        return Err(Error::config(format!(
            "{} estimates but only {} recorded samples",
            yhat.len(),
            y.len()
        )));
    }
    pearson(&yhat, &y.samples()[offset..offset + yhat.len()])
}

/// A ground-truth RIR at a known location.
#[derive(Debug, Clone, Copy)]
pub struct EvalPoint<'a> {
    pub p: usize,
    pub l_p: usize,
    pub rir: &'a Rir,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub p: usize,
    pub l_p: usize,
    pub lambda: i64,
    pub ncc: f64,
    pub nm_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MisalignmentCurve {
    pub points: Vec<CurvePoint>,
}

impl MisalignmentCurve {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.nm_db).collect()
    }

    pub fn median(&self) -> f64 {
        median(&self.values())
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Aligns and scores the estimates at every evaluation point.
pub fn misalignment_curve(
    estimates: &[Vec<f64>],
    points: &[EvalPoint<'_>],
    window: usize,
    exec: Exec,
) -> Result<MisalignmentCurve> {
    let scored: Vec<Result<CurvePoint>> = exec.map_slice(points, |pt| {
        let a = align_ncc(estimates, pt.rir, pt.l_p, window)?;
        let l = (pt.l_p as i64 - a.lambda) as usize;
        Ok(CurvePoint {
            p: pt.p,
            l_p: pt.l_p,
            lambda: a.lambda,
            ncc: a.ncc_peak,
            nm_db: misalignment_db(&estimates[l], pt.rir.taps())?,
        })
    });
    Ok(MisalignmentCurve {
        points: scored.into_iter().collect::<Result<_>>()?,
    })
}
