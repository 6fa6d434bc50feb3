//! End-to-end run: prepare signals, estimate per-segment transitions, run the
//! filter variants and score them.

use serde::Serialize;

use crate::config::{DatasetScenario, Scenario, ScenarioConfig, SyntheticScenario};
use crate::dataset::{load_dataset, Dataset, GridPoint, LoadOptions};
use crate::dtw::{align_endpoints, EndpointAlignment};
use crate::error::{Error, Result};
use crate::eval::{correlate_from, misalignment_curve, EvalPoint, MisalignmentCurve};
use crate::exec::Exec;
use crate::ism::{add_white_noise, render_clean, white_noise_source, RenderParams};
use crate::kalman::{run, KalmanRun, RunInputs, Variant};
use crate::signal::{distance, MicRecording, Point3, Rir, SampleClock, Segment, SourceSignal, Trajectory};
use crate::transition::{assemble_piecewise, transition_from_map, PiecewiseTransition, TransitionMatrix};

/// Mixes the scenario seed into an independent stream for the recording noise.
const NOISE_SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

/// A ground-truth RIR at a trajectory location.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub p: usize,
    /// Location index (relative to the trajectory start).
    pub l: usize,
    pub rir: Rir,
}

/// Signals and geometry ready for estimation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub source: SourceSignal,
    pub recording: MicRecording,
    /// Recording sample at location 0.
    pub sample_offset: usize,
    pub trajectory: Trajectory,
    /// RIR at each segment boundary, in order.
    pub boundary_rirs: Vec<Rir>,
    /// Ground truth used for scoring.
    pub references: Vec<Reference>,
    /// Measurement points of the trajectory for bundle export.
    pub grid: Vec<Reference>,
}

impl Prepared {
    pub fn clock(&self) -> SampleClock {
        self.source.clock()
    }

    pub fn locations(&self) -> usize {
        self.trajectory.len()
    }

    /// Dataset holding the recording and the grid RIRs.
    pub fn to_dataset(&self) -> Dataset {
        let positions = self.trajectory.positions();
        Dataset {
            source: self.source.clone(),
            recording: self.recording.clone(),
            points: self
                .grid
                .iter()
                .map(|g| GridPoint {
                    p: g.p,
                    position: positions[g.l],
                    l_p: self.sample_offset + g.l,
                    rir: g.rir.clone(),
                })
                .collect(),
        }
    }

    /// Grid points that coincide with segment boundaries.
    pub fn boundary_points(&self) -> Vec<usize> {
        let bounds = self.trajectory.boundaries();
        self.grid.iter().filter(|g| bounds.contains(&g.l)).map(|g| g.p).collect()
    }
}

/// Polyline sampled at one location per recording sample.
pub fn synthetic_trajectory(waypoints: &[Point3], speeds: &[f64], clock: SampleClock) -> Result<Trajectory> {
    if waypoints.len() < 2 || speeds.len() != waypoints.len() - 1 {
        return Err(Error::config("need one speed per trajectory leg"));
    }
    let mut positions = vec![waypoints[0]];
    let mut boundaries = vec![0];
    for (leg, speed) in waypoints.windows(2).zip(speeds) {
        let (a, b) = (leg[0], leg[1]);
        let len = distance(&a, &b);
        let steps = (len / (speed * clock.period())).round() as usize;
        if steps == 0 {
            return Err(Error::config(format!("leg of {len} m is shorter than one location step")));
        }
        for i in 1..=steps {
            let t = i as f64 / steps as f64;
            positions.push(std::array::from_fn(|k| a[k] + t * (b[k] - a[k])));
        }
        boundaries.push(positions.len() - 1);
    }
    Trajectory::new(positions, None, &boundaries, clock)
}

pub fn prepare(cfg: &ScenarioConfig, exec: Exec) -> Result<Prepared> {
    cfg.validate()?;
    match &cfg.scenario {
        Scenario::Synthetic(s) => prepare_synthetic(cfg, s, exec),
        Scenario::Dataset(d) => prepare_dataset(cfg, d),
    }
}

fn prepare_synthetic(cfg: &ScenarioConfig, s: &SyntheticScenario, exec: Exec) -> Result<Prepared> {
    let clock = cfg.clock()?;
    let trajectory = synthetic_trajectory(&s.waypoints, &s.speeds, clock).map_err(|e| e.at_stage("trajectory", None))?;
    let total = trajectory.len();
    let source = white_noise_source(total, s.source_std, clock, cfg.seed)?;
    let params = RenderParams {
        rir_length: cfg.rir_length,
        max_order: s.max_order,
        sinc_halfwidth: s.sinc_halfwidth,
    };
    let render = render_clean(&s.room, &s.source, &trajectory, &source, params, exec).map_err(|e| e.at_stage("render", None))?;
    let noise_std = match s.snr_db {
        Some(snr) => {
            let power = render.clean.iter().map(|v| v * v).sum::<f64>() / total as f64;
            (power / 10f64.powf(snr / 10.0)).sqrt()
        }
        None => 0.0,
    };
    let recording = MicRecording::new(add_white_noise(&render.clean, noise_std, cfg.seed ^ NOISE_SEED_MIX), clock)?;
    let bounds = trajectory.boundaries();
    let boundary_rirs = bounds.iter().map(|&l| render.rirs[l].clone()).collect();
    let mut grid_locations: Vec<usize> = (0..total).step_by(s.grid_stride).chain(bounds.iter().copied()).collect();
    grid_locations.sort_unstable();
    grid_locations.dedup();
    let grid = grid_locations
        .iter()
        .enumerate()
        .map(|(p, &l)| Reference {
            p,
            l,
            rir: render.rirs[l].clone(),
        })
        .collect();
    let references = render
        .rirs
        .into_iter()
        .enumerate()
        .map(|(l, rir)| Reference { p: l, l, rir })
        .collect();
    Ok(Prepared {
        source,
        recording,
        sample_offset: 0,
        trajectory,
        boundary_rirs,
        references,
        grid,
    })
}

fn prepare_dataset(cfg: &ScenarioConfig, d: &DatasetScenario) -> Result<Prepared> {
    let rate = cfg.sample_rate;
    if rate.fract() != 0.0 || rate > u32::MAX as f64 {
        return Err(Error::config(format!("dataset sample rate {rate} must be a whole number of Hz")));
    }
    let opts = LoadOptions {
        sample_rate: rate as u32,
        resample: d.resample,
    };
    let ds = load_dataset(&d.root, cfg.rir_length, opts).map_err(|e| e.at_stage("load", None))?;
    prepared_from_dataset(&ds, &d.boundaries)
}

/// Restricts a dataset to the trajectory between the first and last boundary.
pub fn prepared_from_dataset(ds: &Dataset, boundaries: &[usize]) -> Result<Prepared> {
    let trajectory = ds.trajectory(boundaries).map_err(|e| e.at_stage("trajectory", None))?;
    let start = ds.point(boundaries[0])?.l_p;
    let end = start + trajectory.len() - 1;
    let boundary_rirs = boundaries
        .iter()
        .map(|&p| ds.point(p).map(|g| g.rir.clone()))
        .collect::<Result<_>>()?;
    let references: Vec<Reference> = ds
        .points
        .iter()
        .filter(|g| g.l_p >= start && g.l_p <= end)
        .map(|g| Reference {
            p: g.p,
            l: g.l_p - start,
            rir: g.rir.clone(),
        })
        .collect();
    Ok(Prepared {
        source: ds.source.clone(),
        recording: ds.recording.clone(),
        sample_offset: start,
        trajectory,
        boundary_rirs,
        grid: references.clone(),
        references,
    })
}

/// Transition estimate of one segment.
#[derive(Debug, Clone)]
pub struct SegmentModel {
    pub segment: Segment,
    pub alignment: EndpointAlignment,
    pub transition: TransitionMatrix,
}

#[derive(Debug, Clone)]
pub struct Estimation {
    pub segments: Vec<SegmentModel>,
    pub piecewise: Option<PiecewiseTransition>,
    /// In the order of the configured variants.
    pub runs: Vec<KalmanRun>,
}

pub fn estimate_transitions(cfg: &ScenarioConfig, prep: &Prepared, exec: Exec) -> Result<Vec<SegmentModel>> {
    let segs = prep.trajectory.segments();
    let models = exec.map_range(segs.len(), |i| {
        let seg = &segs[i];
        let (h_st, h_en) = (&prep.boundary_rirs[i], &prep.boundary_rirs[i + 1]);
        let alignment = align_endpoints(h_st, h_en, seg.num_locations(), cfg.dtw).map_err(|e| e.at_stage("dtw", Some(seg.index)))?;
        let transition = transition_from_map(&alignment.map, seg.index, cfg.rir_length, prep.clock(), cfg.transition)
            .map_err(|e| e.at_stage("transition", Some(seg.index)))?;
        log::info!(
            "segment {}: {} reflections, {} overlapping rows",
            seg.index,
            alignment.map.reflections.len(),
            transition.overlapping_rows.len()
        );
        Ok(SegmentModel {
            segment: seg.clone(),
            alignment,
            transition,
        })
    });
    models.into_iter().collect()
}

pub fn estimate(cfg: &ScenarioConfig, prep: &Prepared, variants: &[Variant], exec: Exec) -> Result<Estimation> {
    let needs_a = variants.iter().any(|v| v.needs_transition());
    let segments = if needs_a {
        estimate_transitions(cfg, prep, exec)?
    } else {
        Vec::new()
    };
    let piecewise = if needs_a {
        let mats = segments.iter().map(|m| m.transition.clone()).collect();
        Some(assemble_piecewise(&prep.trajectory, mats).map_err(|e| e.at_stage("assemble", None))?)
    } else {
        None
    };
    let inputs = RunInputs {
        transitions: piecewise.as_ref(),
        x: Some(&prep.source),
        y: Some(&prep.recording),
        h0: &prep.boundary_rirs[0],
        locations: prep.locations(),
        sample_offset: prep.sample_offset,
    };
    let runs = exec
        .map_slice(variants, |&v| run(v, inputs, &cfg.kalman, exec).map_err(|e| e.at_stage("filter", None)))
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(Estimation {
        segments,
        piecewise,
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantScore {
    pub variant: Variant,
    pub curve: MisalignmentCurve,
    pub correlation: f64,
    pub median_nm_db: f64,
}

pub fn evaluate(cfg: &ScenarioConfig, prep: &Prepared, runs: &[KalmanRun], exec: Exec) -> Result<Vec<VariantScore>> {
    let points: Vec<EvalPoint<'_>> = prep
        .references
        .iter()
        .map(|r| EvalPoint {
            p: r.p,
            l_p: r.l,
            rir: &r.rir,
        })
        .collect();
    runs.iter()
        .map(|r| {
            let curve = misalignment_curve(&r.estimates, &points, cfg.eval.ncc_window, exec).map_err(|e| e.at_stage("evaluate", None))?;
            let correlation = correlate_from(&r.estimates, &prep.source, &prep.recording, prep.sample_offset)
                .map_err(|e| e.at_stage("evaluate", None))?;
            Ok(VariantScore {
                variant: r.variant,
                median_nm_db: curve.median(),
                curve,
                correlation,
            })
        })
        .collect()
}

/// Scores stored estimates; segment transitions are re-derived for reporting.
pub fn evaluate_runs(cfg: &ScenarioConfig, prepared: Prepared, runs: Vec<KalmanRun>, exec: Exec) -> Result<PipelineOutput> {
    for r in &runs {
        if r.estimates.len() != prepared.locations() || r.estimates.iter().any(|h| h.len() != cfg.rir_length) {
            return Err(Error::config(format!(
                "{} estimates do not match {} locations of {} taps",
                r.variant,
                prepared.locations(),
                cfg.rir_length
            )));
        }
    }
    let segments = if runs.iter().any(|r| r.variant.needs_transition()) {
        estimate_transitions(cfg, &prepared, exec)?
    } else {
        Vec::new()
    };
    let scores = evaluate(cfg, &prepared, &runs, exec)?;
    Ok(PipelineOutput {
        prepared,
        estimation: Estimation {
            segments,
            piecewise: None,
            runs,
        },
        scores,
    })
}

/// Everything a full run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub prepared: Prepared,
    pub estimation: Estimation,
    pub scores: Vec<VariantScore>,
}

pub fn run_pipeline(cfg: &ScenarioConfig, exec: Exec) -> Result<PipelineOutput> {
    let prepared = prepare(cfg, exec)?;
    let estimation = estimate(cfg, &prepared, &cfg.variants, exec)?;
    let scores = evaluate(cfg, &prepared, &estimation.runs, exec)?;
    Ok(PipelineOutput {
        prepared,
        estimation,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ism::ShoeboxRoom;

    fn clock() -> SampleClock {
        SampleClock::new(16_000.0).unwrap()
    }

    #[test]
    fn polyline_sampling() {
        let t = synthetic_trajectory(&[[1.0, 1.0, 1.0], [1.1, 1.0, 1.0], [1.1, 1.05, 1.0]], &[16.0, 8.0], clock()).unwrap();
        assert_eq!(t.boundaries(), vec![0, 100, 200]);
        assert!((t.segments()[0].velocity - 16.0).abs() < 1e-9);
        assert!((t.segments()[1].velocity - 8.0).abs() < 1e-9);
        assert!(synthetic_trajectory(&[[0.0; 3], [0.0; 3]], &[1.0], clock()).is_err());
    }

    fn small_config() -> ScenarioConfig {
        ScenarioConfig {
            seed: 3,
            sample_rate: 16_000.0,
            rir_length: 128,
            variants: Variant::ALL.to_vec(),
            scenario: Scenario::Synthetic(SyntheticScenario {
                room: ShoeboxRoom::new([5.0, 4.0, 3.0], [0.8; 6], 343.0).unwrap(),
                source: [4.0, 3.0, 1.5],
                max_order: 1,
                sinc_halfwidth: 8,
                waypoints: vec![[3.0, 3.0, 1.5], [3.0, 2.9, 1.5], [2.9, 2.9, 1.5]],
                speeds: vec![16.0, 16.0],
                snr_db: Some(40.0),
                source_std: 1.0,
                grid_stride: 25,
            }),
            kalman: Default::default(),
            dtw: Default::default(),
            transition: Default::default(),
            eval: Default::default(),
            output: Default::default(),
        }
    }

    #[test]
    fn one_matrix_per_segment_and_scores_per_variant() {
        let cfg = small_config();
        let out = run_pipeline(&cfg, Exec::default()).unwrap();
        assert_eq!(out.estimation.segments.len(), 2);
        assert_eq!(out.estimation.piecewise.as_ref().unwrap().matrices().len(), 2);
        assert_eq!(out.scores.len(), 3);
        assert_eq!(out.prepared.references.len(), out.prepared.locations());
        for s in &out.scores {
            assert_eq!(s.curve.points.len(), out.prepared.locations());
        }
    }

    #[test]
    fn deterministic_across_execution_policies() {
        let cfg = small_config();
        let a = run_pipeline(&cfg, Exec::Sequential).unwrap();
        let b = run_pipeline(&cfg, Exec::Parallel).unwrap();
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.estimation.runs, b.estimation.runs);
    }

    #[test]
    fn dataset_round_trip_matches_grid() {
        let cfg = small_config();
        let prep = prepare(&cfg, Exec::default()).unwrap();
        let ds = prep.to_dataset();
        let bounds = prep.boundary_points();
        assert_eq!(bounds.len(), 3);
        let again = prepared_from_dataset(&ds, &bounds).unwrap();
        assert_eq!(again.trajectory.boundaries(), prep.trajectory.boundaries());
        assert_eq!(again.boundary_rirs, prep.boundary_rirs);
        assert_eq!(again.references.len(), prep.grid.len());
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let mut cfg = small_config();
        if let Scenario::Synthetic(s) = &mut cfg.scenario {
            s.waypoints[1] = [6.0, 2.9, 1.5];
        }
        let err = run_pipeline(&cfg, Exec::default()).unwrap_err();
        assert!(err.to_string().contains("render"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
}
