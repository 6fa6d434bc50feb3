//! On-disk dataset layout.
//!
//! ```text
//! root/
//!   source.wav        source signal x
//!   mic.wav           microphone recording y
//!   positions.csv     p,x,y,z   (metres)
//!   timestamps.csv    p,l_p     (sample index of point p in mic.wav)
//!   rirs/<p>.wav      measured RIR at point p
//! ```
//!
//! Audio is mono; integer PCM and 32-bit float are read, 32-bit float is
//! written.

use std::fs;
use std::path::{Path, PathBuf};

use rubato::{FftFixedIn, Resampler};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{MicRecording, Point3, Rir, SampleClock, SourceSignal, Trajectory};

pub const SOURCE_FILE: &str = "source.wav";
pub const MIC_FILE: &str = "mic.wav";
pub const POSITIONS_FILE: &str = "positions.csv";
pub const TIMESTAMPS_FILE: &str = "timestamps.csv";
pub const RIR_DIR: &str = "rirs";

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub p: usize,
    pub position: Point3,
    /// Sample index in the recording.
    pub l_p: usize,
    pub rir: Rir,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub source: SourceSignal,
    pub recording: MicRecording,
    /// Sorted by `p`.
    pub points: Vec<GridPoint>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PositionRow {
    p: usize,
    x: f64,
    y: f64,
    z: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TimestampRow {
    p: usize,
    l_p: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Rate every signal must have after loading.
    pub sample_rate: u32,
    /// Resample files at other rates instead of rejecting them.
    pub resample: bool,
}

pub fn rir_path(root: &Path, p: usize) -> PathBuf {
    root.join(RIR_DIR).join(format!("{p}.wav"))
}

pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::data(path, format!("expected mono audio, found {} channels", spec.channels)));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| wav_error(path, e))?;
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::data(path, "non-finite samples"));
    }
    Ok((samples, spec.sample_rate))
}

pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for s in samples {
        w.write_sample(*s as f32).map_err(|e| wav_error(path, e))?;
    }
    w.finalize().map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::data(path, other.to_string()),
    }
}

/// Band-limited rate conversion of a mono signal.
pub fn resample(samples: &[f64], from: u32, to: u32) -> Result<Vec<f64>> {
    if from == to {
        return Ok(samples.to_vec());
    }
    const CHUNK: usize = 1024;
    let mut rs = FftFixedIn::<f64>::new(from as usize, to as usize, CHUNK, 1, 1)
        .map_err(|e| Error::config(format!("resampler {from} -> {to} Hz: {e}")))?;
    let wanted = (samples.len() as u64 * to as u64).div_ceil(from as u64) as usize;
    let delay = rs.output_delay();
    let fail = |e: rubato::ResampleError| Error::Numeric(format!("resampling failed: {e}"));
    let mut out = Vec::with_capacity(wanted + delay + CHUNK);
    let mut chunks = samples.chunks_exact(CHUNK);
    for chunk in &mut chunks {
        out.extend_from_slice(&rs.process(&[chunk], None).map_err(fail)?[0]);
    }
    let rest = chunks.remainder();
    if !rest.is_empty() {
        out.extend_from_slice(&rs.process_partial(Some(&[rest]), None).map_err(fail)?[0]);
    }
    while out.len() < wanted + delay {
        out.extend_from_slice(&rs.process_partial::<&[f64]>(None, None).map_err(fail)?[0]);
    }
    Ok(out[delay..delay + wanted].to_vec())
}

fn load_signal(path: &Path, opts: LoadOptions) -> Result<Vec<f64>> {
    let (samples, rate) = read_wav(path)?;
    if rate == opts.sample_rate {
        Ok(samples)
    } else if opts.resample {
        log::info!("resampling {} from {rate} Hz to {} Hz", path.display(), opts.sample_rate);
        resample(&samples, rate, opts.sample_rate)
    } else {
        Err(Error::data(
            path,
            format!("sample rate {rate} Hz differs from {} Hz and resampling is off", opts.sample_rate),
        ))
    }
}

fn read_table<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    rdr.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| csv_error(path, e))
}

fn write_table<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::data(path, format!("{other:?}")),
        }
    } else {
        Error::data(path, e.to_string())
    }
}

/// Loads a dataset; RIRs are truncated or zero-padded to `rir_length` taps.
pub fn load_dataset(root: &Path, rir_length: usize, opts: LoadOptions) -> Result<Dataset> {
    let clock = SampleClock::new(opts.sample_rate as f64)?;
    let source_path = root.join(SOURCE_FILE);
    let mic_path = root.join(MIC_FILE);
    let source = SourceSignal::new(load_signal(&source_path, opts)?, clock)
        .map_err(|e| Error::data(&source_path, e.to_string()))?;
    let recording = MicRecording::new(load_signal(&mic_path, opts)?, clock)
        .map_err(|e| Error::data(&mic_path, e.to_string()))?;

    let pos_path = root.join(POSITIONS_FILE);
    let ts_path = root.join(TIMESTAMPS_FILE);
    let positions: Vec<PositionRow> = read_table(&pos_path)?;
    let mut stamps: Vec<TimestampRow> = read_table(&ts_path)?;
    stamps.sort_by_key(|r| r.p);
    if stamps.windows(2).any(|w| w[0].p == w[1].p) {
        return Err(Error::data(&ts_path, "duplicate measurement point"));
    }
    if stamps.windows(2).any(|w| w[1].l_p <= w[0].l_p) {
        return Err(Error::data(&ts_path, "timestamps must increase with the point index"));
    }
    if let Some(last) = stamps.last() {
        if last.l_p >= recording.len() {
            return Err(Error::data(
                &ts_path,
                format!("point {} at sample {} is past the recording ({} samples)", last.p, last.l_p, recording.len()),
            ));
        }
    }

    let mut points = Vec::with_capacity(stamps.len());
    for ts in &stamps {
        let pos = positions
            .iter()
            .find(|r| r.p == ts.p)
            .ok_or_else(|| Error::data(&pos_path, format!("no position for point {}", ts.p)))?;
        let path = rir_path(root, ts.p);
        let (mut taps, rate) = read_wav(&path)?;
        if rate != opts.sample_rate {
            if !opts.resample {
                return Err(Error::data(&path, format!("sample rate {rate} Hz differs from {} Hz", opts.sample_rate)));
            }
            taps = resample(&taps, rate, opts.sample_rate)?;
        }
        taps.resize(rir_length, 0.0);
        points.push(GridPoint {
            p: ts.p,
            position: [pos.x, pos.y, pos.z],
            l_p: ts.l_p,
            rir: Rir::new(taps, clock).map_err(|e| Error::data(&path, e.to_string()))?,
        });
    }
    if points.len() < 2 {
        return Err(Error::data(&ts_path, "need at least two measurement points"));
    }
    Ok(Dataset {
        source,
        recording,
        points,
    })
}

pub fn write_dataset(root: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(root.join(RIR_DIR)).map_err(|e| Error::io(root, e))?;
    let rate = ds.source.clock().sample_rate().round() as u32;
    write_wav(&root.join(SOURCE_FILE), ds.source.samples(), rate)?;
    write_wav(&root.join(MIC_FILE), ds.recording.samples(), rate)?;
    let positions: Vec<PositionRow> = ds
        .points
        .iter()
        .map(|g| PositionRow {
            p: g.p,
            x: g.position[0],
            y: g.position[1],
            z: g.position[2],
        })
        .collect();
    write_table(&root.join(POSITIONS_FILE), &positions)?;
    let stamps: Vec<TimestampRow> = ds.points.iter().map(|g| TimestampRow { p: g.p, l_p: g.l_p }).collect();
    write_table(&root.join(TIMESTAMPS_FILE), &stamps)?;
    for g in &ds.points {
        write_wav(&rir_path(root, g.p), g.rir.taps(), rate)?;
    }
    Ok(())
}

impl Dataset {
    pub fn clock(&self) -> SampleClock {
        self.source.clock()
    }

    pub fn point(&self, p: usize) -> Result<&GridPoint> {
        self.points
            .iter()
            .find(|g| g.p == p)
            .ok_or_else(|| Error::config(format!("measurement point {p} is not in the dataset")))
    }

    /// Microphone path between the first and last boundary point.
    ///
    /// Locations are recording samples counted from the first boundary;
    /// positions are interpolated linearly in time between grid points.
    pub fn trajectory(&self, boundaries: &[usize]) -> Result<Trajectory> {
        let bounds: Vec<&GridPoint> = boundaries.iter().map(|&p| self.point(p)).collect::<Result<_>>()?;
        let first = bounds[0];
        let last = bounds[bounds.len() - 1];
        let inside: Vec<&GridPoint> = self
            .points
            .iter()
            .filter(|g| g.l_p >= first.l_p && g.l_p <= last.l_p)
            .collect();
        let mut positions = Vec::with_capacity(last.l_p - first.l_p + 1);
        for pair in inside.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let span = (b.l_p - a.l_p) as f64;
            for l in a.l_p..b.l_p {
                let t = (l - a.l_p) as f64 / span;
                positions.push(std::array::from_fn(|i| a.position[i] + t * (b.position[i] - a.position[i])));
            }
        }
        positions.push(last.position);
        let rel: Vec<usize> = bounds.iter().map(|g| g.l_p - first.l_p).collect();
        Trajectory::new(positions, None, &rel, self.clock())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clock() -> SampleClock {
        SampleClock::new(16_000.0).unwrap()
    }

    fn tiny() -> Dataset {
        let f32_exact = |v: f64| v as f32 as f64;
        let source = SourceSignal::new((0..400).map(|i| f32_exact((i as f64 * 0.37).sin())).collect(), clock()).unwrap();
        let recording = MicRecording::new((0..400).map(|i| f32_exact((i as f64 * 0.11).cos())).collect(), clock()).unwrap();
        let points = (0..4)
            .map(|p| GridPoint {
                p,
                position: [1.0 + 0.05 * p as f64, 2.0, 1.5],
                l_p: 10 + 100 * p,
                rir: Rir::new((0..16).map(|n| f32_exact(0.5f64.powi(n) * (p + 1) as f64 * 0.1)).collect(), clock()).unwrap(),
            })
            .collect();
        Dataset {
            source,
            recording,
            points,
        }
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        write_dataset(dir.path(), &ds).unwrap();
        let opts = LoadOptions {
            sample_rate: 16_000,
            resample: false,
        };
        let back = load_dataset(dir.path(), 16, opts).unwrap();
        assert_eq!(back, ds);

        let again = tempfile::tempdir().unwrap();
        write_dataset(again.path(), &back).unwrap();
        for f in [SOURCE_FILE, MIC_FILE, POSITIONS_FILE, TIMESTAMPS_FILE, "rirs/2.wav"] {
            assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(again.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn rate_mismatch_needs_resample_flag() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &tiny()).unwrap();
        let sine: Vec<f64> = (0..4800).map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 48_000.0).sin()).collect();
        write_wav(&dir.path().join(SOURCE_FILE), &sine, 48_000).unwrap();
        let strict = LoadOptions {
            sample_rate: 16_000,
            resample: false,
        };
        let err = load_dataset(dir.path(), 16, strict).unwrap_err();
        assert!(matches!(err, Error::Data { .. }), "{err}");
        assert_eq!(err.exit_code(), 3);

        let ds = load_dataset(dir.path(), 16, LoadOptions { resample: true, ..strict }).unwrap();
        assert_eq!(ds.source.len(), 1600);
        // resampled tone stays a 440 Hz sine away from the edges
        for (i, v) in ds.source.samples().iter().enumerate().skip(200).take(1200) {
            let expect = (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin();
            assert!((v - expect).abs() < 1e-2, "sample {i}: {v} vs {expect}");
        }
    }

    #[test]
    fn structured_load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let opts = LoadOptions {
            sample_rate: 16_000,
            resample: false,
        };
        assert_eq!(load_dataset(dir.path(), 16, opts).unwrap_err().exit_code(), 3);

        write_dataset(dir.path(), &tiny()).unwrap();
        fs::write(dir.path().join(TIMESTAMPS_FILE), "p,l_p\n0,10\n1,5\n2,210\n3,310\n").unwrap();
        let err = load_dataset(dir.path(), 16, opts).unwrap_err();
        assert!(err.to_string().contains("increase"), "{err}");

        write_dataset(dir.path(), &tiny()).unwrap();
        fs::remove_file(rir_path(dir.path(), 1)).unwrap();
        assert!(matches!(load_dataset(dir.path(), 16, opts), Err(Error::Io { .. })));
    }

    #[test]
    fn trajectory_interpolates_between_points() {
        let ds = tiny();
        let traj = ds.trajectory(&[0, 2, 3]).unwrap();
        assert_eq!(traj.len(), 301);
        assert_eq!(traj.boundaries(), vec![0, 200, 300]);
        let mid = traj.positions()[50];
        assert!((mid[0] - 1.025).abs() < 1e-12);
        assert!(ds.trajectory(&[0, 9]).is_err());
    }

    #[test]
    fn ninety_two_points_at_five_centimetres() {
        let rir = Rir::new(vec![1.0, 0.5], clock()).unwrap();
        let points = (0..92)
            .map(|p| GridPoint {
                p,
                position: [0.5 + 0.05 * p as f64, 1.0, 1.2],
                l_p: 40 * p,
                rir: rir.clone(),
            })
            .collect();
        let ds = Dataset {
            source: SourceSignal::new(vec![0.1; 4000], clock()).unwrap(),
            recording: MicRecording::new(vec![0.2; 4000], clock()).unwrap(),
            points,
        };
        let traj = ds.trajectory(&[0, 30, 91]).unwrap();
        let total: f64 = traj.segments().iter().map(|s| s.length).sum();
        assert!((total - 4.55).abs() < 1e-9, "{total}");
    }
}
