//! Kalman tracking of the RIR along the trajectory.
//!
//! State model `h(l) = A(l) h(l−1) + w(l)`, observation `y(l) = xᵀ(l) h(l) + v(l)`,
//! one recording sample per location.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{dot, BandedMatrix, Matrix};
use crate::signal::{regressor_into, MicRecording, Rir, SourceSignal};
use crate::transition::PiecewiseTransition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanParams {
    /// Observation-noise variance `R`.
    pub r: f64,
    /// Process-noise variance; `Q = σ_w² I` unless `q_matrix` is set.
    pub sigma_w2: f64,
    /// Transition factor of the scalar baseline.
    pub alpha: f64,
    /// `P⁺(0) = p0 I`.
    pub p0: f64,
    #[serde(skip)]
    pub q_matrix: Option<Matrix>,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            r: 0.01,
            sigma_w2: 1e-5,
            alpha: 1.0,
            p0: 1e-6,
            q_matrix: None,
        }
    }
}

impl KalmanParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::config(format!("observation noise R = {} must be positive", self.r)));
        }
        if !(self.sigma_w2 >= 0.0 && self.sigma_w2.is_finite()) {
            return Err(Error::config(format!("process noise {} must be non-negative", self.sigma_w2)));
        }
        if !(self.p0 >= 0.0 && self.p0.is_finite()) {
            return Err(Error::config(format!("initial covariance p0 = {} must be non-negative", self.p0)));
        }
        if !self.alpha.is_finite() {
            return Err(Error::config("transition factor must be finite"));
        }
        if let Some(q) = &self.q_matrix {
            if q.rows() != n || q.cols() != n {
                return Err(Error::config(format!(
                    "process noise matrix is {}x{}, state has {n} taps",
                    q.rows(),
                    q.cols()
                )));
            }
        }
        Ok(())
    }

    fn add_process_noise(&self, p: &mut Matrix) {
        match &self.q_matrix {
            Some(q) => p.add_assign(q),
            None if self.sigma_w2 != 0.0 => p.add_diagonal(self.sigma_w2),
            None => {}
        }
    }
}

/// Transition applied in a prediction step.
#[derive(Debug, Clone, Copy)]
pub enum Transition<'a> {
    Scalar(f64),
    Banded(&'a BandedMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    /// Prior estimate `ĥ(l)`.
    pub h_hat: Vec<f64>,
    /// Posterior estimate `ĥ⁺(l)`.
    pub h_hat_post: Vec<f64>,
    pub p: Matrix,
    pub p_post: Matrix,
    pub gain: Vec<f64>,
    /// Last innovation `y − xᵀĥ`.
    pub innovation: f64,
}

impl KalmanState {
    pub fn init(h0: &Rir, params: &KalmanParams) -> Self {
        let n = h0.len();
        let p_post = Matrix::scaled_identity(n, params.p0);
        Self {
            h_hat: h0.taps().to_vec(),
            h_hat_post: h0.taps().to_vec(),
            p: p_post.clone(),
            p_post,
            gain: vec![0.0; n],
            innovation: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.h_hat_post.len()
    }

    /// `ĥ = A ĥ⁺`, `P = A P⁺ Aᵀ + Q`.
    pub fn predict(&mut self, a: Transition<'_>, params: &KalmanParams, exec: Exec) -> Result<()> {
        self.propagate_mean(a)?;
        self.p = match a {
            Transition::Scalar(alpha) => {
                let mut p = self.p_post.clone();
                if alpha != 1.0 {
                    p.scale(alpha * alpha);
                }
                p
            }
            Transition::Banded(m) => m.congruence(&self.p_post, exec),
        };
        params.add_process_noise(&mut self.p);
        Ok(())
    }

    /// Mean-only prediction; the covariance is left untouched.
    pub fn propagate_mean(&mut self, a: Transition<'_>) -> Result<()> {
        let n = self.dim();
        self.h_hat = match a {
            Transition::Scalar(alpha) => self.h_hat_post.iter().map(|v| alpha * v).collect(),
            Transition::Banded(m) => {
                if m.dim() != n {
                    return Err(Error::config(format!(
                        "transition matrix is {0}x{0}, state has {n} taps",
                        m.dim()
                    )));
                }
                m.matvec(&self.h_hat_post)
            }
        };
        Ok(())
    }

    /// `k = P x / (xᵀ P x + R)`, `ĥ⁺ = ĥ + k (y − xᵀ ĥ)`, `P⁺ = (I − k xᵀ) P`.
    pub fn update(&mut self, x: &[f64], y: f64, params: &KalmanParams, exec: Exec) -> Result<()> {
        let n = self.dim();
        if x.len() != n {
            return Err(Error::config(format!("regressor has {} taps, state has {n}", x.len())));
        }
        let px = self.p.matvec(x, exec);
        let denom = dot(x, &px) + params.r;
        if !(denom.is_finite() && denom > 0.0) {
            return Err(Error::Numeric(format!("innovation variance {denom}")));
        }
        self.gain = px.iter().map(|v| v / denom).collect();
        self.innovation = y - dot(x, &self.h_hat);
        self.h_hat_post.clone_from(&self.h_hat);
        for (h, k) in self.h_hat_post.iter_mut().zip(&self.gain) {
            let d = k * self.innovation;
            if d != 0.0 {
                *h += d;
            }
        }
        // (I − k xᵀ) P = P − k (Pᵀ x)ᵀ for symmetric P
        self.p_post.clone_from(&self.p);
        if self.gain.iter().any(|k| *k != 0.0) {
            self.p_post.sub_outer(&self.gain, &px, exec);
            self.p_post.symmetrize();
        }
        if self.h_hat_post.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("state estimate is not finite".into()));
        }
        Ok(())
    }

    /// Posterior equals prior: no observation.
    pub fn skip_update(&mut self) {
        self.h_hat_post.clone_from(&self.h_hat);
        self.p_post.clone_from(&self.p);
        self.gain.iter_mut().for_each(|k| *k = 0.0);
        self.innovation = 0.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Kalman filter with scalar transition `α I`.
    #[serde(rename = "kf-alpha")]
    KfAlpha,
    /// Kalman filter with the piecewise reflection-shift transition.
    #[serde(rename = "kf-a")]
    KfA,
    /// Prediction-only interpolation with the piecewise transition.
    #[serde(rename = "li-a")]
    LiA,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::KfAlpha, Variant::KfA, Variant::LiA];

    /// Short identifier used in file names and on the command line.
    pub fn key(self) -> &'static str {
        match self {
            Variant::KfAlpha => "kf-alpha",
            Variant::KfA => "kf-a",
            Variant::LiA => "li-a",
        }
    }

    pub fn needs_transition(self) -> bool {
        !matches!(self, Variant::KfAlpha)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::KfAlpha => "KF-α",
            Variant::KfA => "KF-A(l)",
            Variant::LiA => "LI-A(l)",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kf-alpha" | "kf-α" | "kfalpha" => Ok(Variant::KfAlpha),
            "kf-a" | "kf-a(l)" | "kfa" => Ok(Variant::KfA),
            "li-a" | "li-a(l)" | "lia" => Ok(Variant::LiA),
            other => Err(Error::config(format!(
                "unknown variant `{other}` (expected kf-alpha, kf-a or li-a)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepTrace {
    pub gain_norm: f64,
    pub innovation: f64,
    pub trace_p_post: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanRun {
    pub variant: Variant,
    /// `ĥ⁺(l)` for `l = 0 … L_total − 1`.
    pub estimates: Vec<Vec<f64>>,
    pub traces: Vec<StepTrace>,
}

/// Inputs shared by all variants.
#[derive(Debug, Clone, Copy)]
pub struct RunInputs<'a> {
    pub transitions: Option<&'a PiecewiseTransition>,
    pub x: Option<&'a SourceSignal>,
    pub y: Option<&'a MicRecording>,
    pub h0: &'a Rir,
    pub locations: usize,
    /// Recording sample at location 0.
    pub sample_offset: usize,
}

pub fn run(variant: Variant, inputs: RunInputs<'_>, params: &KalmanParams, exec: Exec) -> Result<KalmanRun> {
    let n = inputs.h0.len();
    let total = inputs.locations;
    params.validate(n)?;
    if total == 0 {
        return Err(Error::config("no locations to track"));
    }
    let transitions = match (variant.needs_transition(), inputs.transitions) {
        (true, None) => {
            return Err(Error::config(format!("{variant} needs a transition model")));
        }
        (true, Some(t)) => {
            if t.total_locations() < total {
                return Err(Error::config(format!(
                    "transition model covers {} locations, {total} requested",
                    t.total_locations()
                )));
            }
            Some(t)
        }
        (false, _) => None,
    };
    let observed = match variant {
        Variant::LiA => None,
        _ => {
            let (x, y) = match (inputs.x, inputs.y) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(Error::config(format!("{variant} needs source and recording"))),
            };
            x.clock().ensure_same(&y.clock())?;
            x.clock().ensure_same(&inputs.h0.clock())?;
            let end = inputs.sample_offset + total;
            if x.len() < end || y.len() < end {
                return Err(Error::config(format!(
                    "locations end at sample {end} but source has {} and recording {} samples",
                    x.len(),
                    y.len()
                )));
            }
            Some((x.samples(), y.samples()))
        }
    };

    let mut state = KalmanState::init(inputs.h0, params);
    let mut estimates = Vec::with_capacity(total);
    let mut traces = Vec::with_capacity(total);
    estimates.push(state.h_hat_post.clone());
    traces.push(StepTrace {
        gain_norm: 0.0,
        innovation: 0.0,
        trace_p_post: state.p_post.trace(),
    });
    let mut xl = vec![0.0; n];
    for l in 1..total {
        let a = match transitions {
            Some(t) => Transition::Banded(&t.lookup(l)?.matrix),
            None => Transition::Scalar(params.alpha),
        };
        match observed {
            None => {
                state.propagate_mean(a)?;
                state.h_hat_post.clone_from(&state.h_hat);
            }
            Some((x, y)) => {
                state.predict(a, params, exec)?;
                let k = inputs.sample_offset + l;
                regressor_into(x, k, &mut xl);
                state.update(&xl, y[k], params, exec)?;
            }
        }
        traces.push(StepTrace {
            gain_norm: crate::signal::norm(&state.gain),
            innovation: state.innovation,
            trace_p_post: if observed.is_some() { state.p_post.trace() } else { 0.0 },
        });
        estimates.push(state.h_hat_post.clone());
    }
    Ok(KalmanRun {
        variant,
        estimates,
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::BandRow;
    use crate::signal::{SampleClock, Trajectory};
    use crate::transition::{assemble_piecewise, TransitionMatrix, TransitionSource};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn clock() -> SampleClock {
        SampleClock::new(16_000.0).unwrap()
    }

    fn rir(v: &[f64]) -> Rir {
        Rir::new(v.to_vec(), clock()).unwrap()
    }

    fn quiet() -> KalmanParams {
        KalmanParams {
            sigma_w2: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn init_examples() {
        let zero = KalmanState::init(&rir(&[1.0, 2.0]), &KalmanParams { p0: 0.0, ..Default::default() });
        assert_eq!(zero.p_post, Matrix::zeros(2, 2));
        assert_eq!(zero.h_hat_post, vec![1.0, 2.0]);
        let s = KalmanState::init(&rir(&[0.0; 64]), &KalmanParams::default());
        assert!((s.p_post.trace() - 6.4e-5).abs() < 1e-18);
    }

    #[test]
    fn predict_examples() {
        let params = quiet();
        let mut s = KalmanState::init(&rir(&[1.0, 1.0]), &KalmanParams { p0: 1.0, ..quiet() });
        s.predict(Transition::Banded(&BandedMatrix::identity(2)), &params, Exec::Sequential).unwrap();
        assert_eq!(s.h_hat, s.h_hat_post);
        assert_eq!(s.p, s.p_post);

        let two = BandedMatrix::from_rows(2, vec![BandRow { start: 0, values: vec![2.0] }, BandRow { start: 1, values: vec![2.0] }]);
        for a in [Transition::Banded(&two), Transition::Scalar(2.0)] {
            s.predict(a, &params, Exec::Sequential).unwrap();
            assert_eq!(s.h_hat, vec![2.0, 2.0]);
            assert_eq!(s.p, Matrix::scaled_identity(2, 4.0));
        }

        let wrong = BandedMatrix::identity(3);
        assert!(matches!(
            s.predict(Transition::Banded(&wrong), &params, Exec::Sequential),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn hand_scalar_step() {
        let params = KalmanParams { r: 1.0, ..quiet() };
        let mut s = KalmanState::init(&rir(&[0.0]), &KalmanParams { p0: 1.0, ..quiet() });
        s.predict(Transition::Scalar(1.0), &params, Exec::Sequential).unwrap();
        s.update(&[1.0], 2.0, &params, Exec::Sequential).unwrap();
        assert!((s.gain[0] - 0.5).abs() < 1e-12);
        assert!((s.h_hat_post[0] - 1.0).abs() < 1e-12);
        assert!((s.p_post.get(0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn uninformative_updates() {
        let params = KalmanParams::default();
        let mut s = KalmanState::init(&rir(&[0.3, -0.2, 0.1]), &KalmanParams { p0: 0.5, ..params.clone() });
        s.predict(Transition::Scalar(1.0), &params, Exec::Sequential).unwrap();
        s.update(&[0.0; 3], 5.0, &params, Exec::Sequential).unwrap();
        assert_eq!(s.gain, vec![0.0; 3]);
        assert_eq!(s.h_hat_post, s.h_hat);
        assert_eq!(s.p_post, s.p);

        let x = [1.0, 0.5, -0.25];
        let y = dot(&x, &s.h_hat);
        s.update(&x, y, &params, Exec::Sequential).unwrap();
        assert_eq!(s.h_hat_post, s.h_hat);
    }

    fn random_walk(seed: u64, n: usize, steps: usize) -> Vec<(Vec<f64>, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..steps)
            .map(|_| {
                let x = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                (x, rng.random_range(-1.0..1.0))
            })
            .collect()
    }

    #[test]
    fn covariance_stays_psd_and_gain_identity_holds() {
        use nalgebra::DMatrix;
        let n = 6;
        let params = KalmanParams {
            r: 0.05,
            sigma_w2: 1e-3,
            p0: 0.1,
            ..Default::default()
        };
        let shift = BandedMatrix::from_rows(
            n,
            (0..n)
                .map(|i| BandRow {
                    start: i.saturating_sub(1),
                    values: if i == 0 { vec![0.9] } else { vec![0.3, 0.7] },
                })
                .collect(),
        );
        for seed in 0..5 {
            let mut s = KalmanState::init(&rir(&[0.0; 6]), &params);
            for (x, y) in random_walk(seed, n, 200) {
                s.predict(Transition::Banded(&shift), &params, Exec::Parallel).unwrap();
                let px = s.p.matvec(&x, Exec::Sequential);
                let denom = dot(&x, &px) + params.r;
                s.update(&x, y, &params, Exec::Parallel).unwrap();

                let lhs = crate::signal::norm(&s.gain) * denom;
                let rhs = crate::signal::norm(&px);
                assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1.0));

                assert!(s.p_post.is_symmetric());
                let m = DMatrix::from_row_slice(n, n, s.p_post.as_slice());
                let min_eig = m.symmetric_eigen().eigenvalues.min();
                assert!(min_eig >= -1e-10 * s.p_post.trace(), "min eigenvalue {min_eig}");
            }
        }
    }

    fn one_segment(total: usize, a: BandedMatrix) -> PiecewiseTransition {
        let pos = (0..total).map(|i| [1.0 + i as f64 * 1e-4, 1.0, 1.0]).collect();
        let traj = Trajectory::new(pos, None, &[0, total - 1], clock()).unwrap();
        let tm = TransitionMatrix {
            matrix: a,
            segment: 1,
            source: TransitionSource::AnalyticIsm,
            overlapping_rows: vec![],
        };
        assemble_piecewise(&traj, vec![tm]).unwrap()
    }

    fn white(len: usize, seed: u64) -> SourceSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SourceSignal::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), clock()).unwrap()
    }

    fn record(h: &[f64], x: &SourceSignal, len: usize) -> MicRecording {
        let mut xl = vec![0.0; h.len()];
        let y = (0..len)
            .map(|l| {
                regressor_into(x.samples(), l, &mut xl);
                dot(&xl, h)
            })
            .collect();
        MicRecording::new(y, clock()).unwrap()
    }

    #[test]
    fn identity_transition_matches_unit_alpha() {
        let n = 8;
        let total = 60;
        let pw = one_segment(total, BandedMatrix::identity(n));
        let x = white(total, 3);
        let h: Vec<f64> = (0..n).map(|i| 0.5f64.powi(i as i32)).collect();
        let y = record(&h, &x, total);
        let h0 = rir(&[0.0; 8]);
        let params = KalmanParams { p0: 0.1, ..Default::default() };
        let inputs = RunInputs {
            transitions: Some(&pw),
            x: Some(&x),
            y: Some(&y),
            h0: &h0,
            locations: total,
            sample_offset: 0,
        };
        let a = run(Variant::KfA, inputs, &params, Exec::Sequential).unwrap();
        let b = run(Variant::KfAlpha, inputs, &params, Exec::Parallel).unwrap();
        assert_eq!(a.estimates, b.estimates);
        let again = run(Variant::KfA, inputs, &params, Exec::Parallel).unwrap();
        assert_eq!(a, again);
    }

    fn shift_matrix(n: usize) -> BandedMatrix {
        BandedMatrix::from_rows(
            n,
            (0..n)
                .map(|i| if i == 0 { BandRow::identity(0) } else { BandRow { start: i - 1, values: vec![0.6, 0.4] } })
                .collect(),
        )
    }

    #[test]
    fn interpolation_unrolls_and_ignores_observations() {
        let n = 5;
        let total = 7;
        let a = shift_matrix(n);
        let pw = one_segment(total, a.clone());
        let h0 = rir(&[1.0, 0.0, 0.5, 0.0, 0.0]);
        let zeros_x = SourceSignal::new(vec![0.0; total], clock()).unwrap();
        let zeros_y = MicRecording::new(vec![0.0; total], clock()).unwrap();
        let inputs = RunInputs {
            transitions: Some(&pw),
            x: Some(&zeros_x),
            y: Some(&zeros_y),
            h0: &h0,
            locations: total,
            sample_offset: 0,
        };
        let params = KalmanParams::default();
        let li = run(Variant::LiA, inputs, &params, Exec::Sequential).unwrap();
        let tm = &pw.matrices()[0];
        assert_eq!(li.estimates[total - 1], tm.apply_power(h0.taps(), total - 1));
        let kf = run(Variant::KfA, inputs, &params, Exec::Sequential).unwrap();
        assert_eq!(kf.estimates, li.estimates);

        let no_obs = RunInputs { x: None, y: None, ..inputs };
        assert_eq!(run(Variant::LiA, no_obs, &params, Exec::Sequential).unwrap().estimates, li.estimates);
        assert!(matches!(run(Variant::KfA, no_obs, &params, Exec::Sequential), Err(Error::Config(_))));
        let no_a = RunInputs { transitions: None, ..inputs };
        assert!(matches!(run(Variant::LiA, no_a, &params, Exec::Sequential), Err(Error::Config(_))));
    }

    #[test]
    fn static_rir_converges() {
        let n = 16;
        let total = 4 * n + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h: Vec<f64> = (0..n).map(|i| rng.random_range(-1.0..1.0) * 0.8f64.powi(i as i32)).collect();
        let x = white(total, 12);
        let y = record(&h, &x, total);
        let h0 = rir(&vec![0.0; n]);
        let params = KalmanParams {
            r: 1e-6,
            sigma_w2: 0.0,
            alpha: 1.0,
            p0: 1.0,
            q_matrix: None,
        };
        let out = run(
            Variant::KfAlpha,
            RunInputs { transitions: None, x: Some(&x), y: Some(&y), h0: &h0, locations: total, sample_offset: 0 },
            &params,
            Exec::default(),
        )
        .unwrap();
        let nm = |e: &[f64]| {
            let err: f64 = e.iter().zip(&h).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            20.0 * (err / crate::signal::norm(&h)).log10()
        };
        let curve: Vec<f64> = out.estimates.iter().map(|e| nm(e)).collect();
        assert!(curve[4 * n] <= -30.0, "final NM {}", curve[4 * n]);
        let block_max = |b: usize| curve[b * n..(b + 1) * n].iter().copied().fold(f64::MIN, f64::max);
        assert!(block_max(1) < curve[n / 2]);
        assert!(block_max(3) <= block_max(1));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.key().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("KF-A(l)".parse::<Variant>().unwrap(), Variant::KfA);
        assert!("rls".parse::<Variant>().is_err());
    }

    #[test]
    fn parameter_validation() {
        assert!(KalmanParams { r: 0.0, ..Default::default() }.validate(4).is_err());
        assert!(KalmanParams { sigma_w2: -1.0, ..Default::default() }.validate(4).is_err());
        assert!(KalmanParams { p0: -1.0, ..Default::default() }.validate(4).is_err());
        assert!(KalmanParams { q_matrix: Some(Matrix::identity(3)), ..Default::default() }.validate(4).is_err());
        assert!(KalmanParams::default().validate(4).is_ok());
    }
}
