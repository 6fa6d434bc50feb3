//! Image-source simulation of early RIRs in a shoebox room.
//!
//! Images are enumerated with the Allen–Berkley lattice: along each axis an
//! image coordinate is `(1 - 2q)·s + 2mL` for integer `m` and parity `q`, which
//! reflects `|m - q|` times off the wall at 0 and `|m|` times off the wall at
//! `L`. Each image contributes a windowed, fractionally delayed sinc pulse.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::signal::{distance, MicRecording, Point3, Rir, SampleClock, SourceSignal, Trajectory};

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_SINC_HALFWIDTH: usize = 40;

/// Normalised sinc, exactly 0 at nonzero integers and 1 at 0.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.fract() == 0.0 {
        0.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Hann-tapered sinc supported on `|x| <= halfwidth`.
pub fn windowed_sinc(x: f64, halfwidth: usize) -> f64 {
    let hw = halfwidth as f64;
    if x.abs() > hw {
        return 0.0;
    }
    sinc(x) * 0.5 * (1.0 + (PI * x / hw).cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShoeboxRoom {
    /// Lx, Ly, Lz in metres.
    pub dimensions: [f64; 3],
    /// Wall reflection coefficients ordered x=0, x=Lx, y=0, y=Ly, z=0, z=Lz.
    pub reflection: [f64; 6],
    #[serde(default = "default_c")]
    pub speed_of_sound: f64,
}

fn default_c() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

impl ShoeboxRoom {
    pub fn new(dimensions: [f64; 3], reflection: [f64; 6], speed_of_sound: f64) -> Result<Self> {
        let room = Self {
            dimensions,
            reflection,
            speed_of_sound,
        };
        room.validate()?;
        Ok(room)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Geometry(format!(
                "room dimensions {:?} must be positive",
                self.dimensions
            )));
        }
        // Phase-inverting walls are allowed; only the magnitude is bounded.
        if self.reflection.iter().any(|b| b.is_nan() || b.abs() > 1.0) {
            return Err(Error::Geometry(format!(
                "reflection coefficients {:?} must lie in [-1, 1]",
                self.reflection
            )));
        }
        if !(self.speed_of_sound.is_finite() && self.speed_of_sound > 0.0) {
            return Err(Error::Geometry("speed of sound must be positive".into()));
        }
        Ok(())
    }

    pub fn strictly_contains(&self, p: &Point3) -> bool {
        p.iter()
            .zip(&self.dimensions)
            .all(|(c, l)| *c > 0.0 && *c < *l)
    }

    pub fn ensure_inside(&self, what: &str, p: &Point3) -> Result<()> {
        if self.strictly_contains(p) {
            Ok(())
        } else {
            Err(Error::Geometry(format!(
                "{what} {p:?} is not strictly inside room {:?}",
                self.dimensions
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSource {
    pub position: Point3,
    /// Product of the wall coefficients along the reflection path.
    pub gain: f64,
    pub order: u32,
    /// `(m, q)` per axis.
    pub mirror: [(i32, u8); 3],
}

impl ImageSource {
    /// Amplitude `a_r` at a receiver `dist` metres away (spherical spreading).
    pub fn amplitude_at(&self, dist: f64) -> f64 {
        self.gain / (4.0 * PI * dist)
    }

    /// Time of arrival in seconds.
    pub fn toa(&self, mic: &Point3, speed_of_sound: f64) -> f64 {
        distance(&self.position, mic) / speed_of_sound
    }
}

/// Image sources ordered by reflection order, then mirror index; index 0 is
/// the direct source.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSourceSet {
    pub sources: Vec<ImageSource>,
    pub speed_of_sound: f64,
}

impl ImageSourceSet {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// TOAs of every image at `mic`, seconds.
    pub fn toas(&self, mic: &Point3) -> Vec<f64> {
        self.sources
            .iter()
            .map(|s| s.toa(mic, self.speed_of_sound))
            .collect()
    }

    /// Upper bound on any synthesized tap magnitude.
    pub fn amplitude_bound(&self, mic: &Point3) -> f64 {
        self.sources
            .iter()
            .map(|s| s.amplitude_at(distance(&s.position, mic)).abs())
            .sum()
    }
}

pub fn enumerate_images(
    room: &ShoeboxRoom,
    source: &Point3,
    max_order: u32,
) -> Result<ImageSourceSet> {
    room.validate()?;
    room.ensure_inside("source", source)?;

    // Per axis: (m, q, reflections off the low wall, off the high wall).
    let bound = max_order as i32;
    let axis_terms: Vec<(i32, u8, u32, u32)> = (-bound..=bound + 1)
        .flat_map(|m| [0u8, 1u8].map(|q| (m, q)))
        .map(|(m, q)| (m, q, (m - q as i32).unsigned_abs(), m.unsigned_abs()))
        .filter(|&(_, _, lo, hi)| lo + hi <= max_order)
        .collect();

    let mut sources = Vec::new();
    for &(mx, qx, lox, hix) in &axis_terms {
        for &(my, qy, loy, hiy) in &axis_terms {
            for &(mz, qz, loz, hiz) in &axis_terms {
                let order = lox + hix + loy + hiy + loz + hiz;
                if order > max_order {
                    continue;
                }
                let mirror = [(mx, qx), (my, qy), (mz, qz)];
                let counts = [lox, hix, loy, hiy, loz, hiz];
                let gain = room
                    .reflection
                    .iter()
                    .zip(counts)
                    .map(|(b, k)| b.powi(k as i32))
                    .product();
                let mut position = [0.0; 3];
                for axis in 0..3 {
                    let (m, q) = mirror[axis];
                    let sign = if q == 0 { 1.0 } else { -1.0 };
                    position[axis] =
                        sign * source[axis] + 2.0 * m as f64 * room.dimensions[axis];
                }
                sources.push(ImageSource {
                    position,
                    gain,
                    order,
                    mirror,
                });
            }
        }
    }
    sources.sort_by(|a, b| a.order.cmp(&b.order).then(a.mirror.cmp(&b.mirror)));
    Ok(ImageSourceSet {
        sources,
        speed_of_sound: room.speed_of_sound,
    })
}

/// Early RIR `h(n) = Σ_r a_r · sinc(n − τ_r/T)` at `mic`, with the sinc
/// Hann-tapered to `|n − τ_r/T| ≤ sinc_halfwidth`.
pub fn synthesize_rir(
    images: &ImageSourceSet,
    mic: &Point3,
    clock: SampleClock,
    len: usize,
    sinc_halfwidth: usize,
) -> Result<Rir> {
    if len == 0 {
        return Err(Error::config("RIR length must be at least 1"));
    }
    if sinc_halfwidth == 0 {
        return Err(Error::config("sinc halfwidth must be at least 1"));
    }
    let fs = clock.sample_rate();
    let mut taps = vec![0.0; len];
    for img in &images.sources {
        let dist = distance(&img.position, mic);
        let center = dist / images.speed_of_sound * fs;
        if center > (len - 1) as f64 {
            continue;
        }
        add_pulse(&mut taps, center, img.amplitude_at(dist), sinc_halfwidth);
    }
    Rir::new(taps, clock)
}

/// Adds `amp · windowed_sinc(n − center)` over the pulse support.
pub(crate) fn add_pulse(taps: &mut [f64], center: f64, amp: f64, halfwidth: usize) {
    let hw = halfwidth as f64;
    let lo = (center - hw).ceil().max(0.0) as usize;
    let hi = (center + hw).floor();
    if hi < 0.0 {
        return;
    }
    let hi = (hi as usize).min(taps.len().saturating_sub(1));
    for (n, t) in taps.iter_mut().enumerate().take(hi + 1).skip(lo) {
        *t += amp * windowed_sinc(n as f64 - center, halfwidth);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderParams {
    pub rir_length: usize,
    pub max_order: u32,
    pub sinc_halfwidth: usize,
}

/// Ground-truth RIRs along a trajectory and the noise-free recording.
#[derive(Debug, Clone)]
pub struct CleanRender {
    pub rirs: Vec<Rir>,
    pub clean: Vec<f64>,
}

/// Synthesizes `h(l)` at every location and the noise-free `xᵀ(l) h(l)`.
pub fn render_clean(
    room: &ShoeboxRoom,
    source: &Point3,
    traj: &Trajectory,
    x: &SourceSignal,
    params: RenderParams,
    exec: Exec,
) -> Result<CleanRender> {
    let images = enumerate_images(room, source, params.max_order)?;
    for (l, p) in traj.positions().iter().enumerate() {
        room.ensure_inside(&format!("microphone at location {l}"), p)?;
    }
    if x.len() < traj.len() {
        return Err(Error::config(format!(
            "source signal has {} samples, trajectory needs {}",
            x.len(),
            traj.len()
        )));
    }
    let clock = x.clock();
    let xs = x.samples();
    let rendered: Vec<Result<(Rir, f64)>> = exec.map_slice(traj.positions(), |p| {
        synthesize_rir(&images, p, clock, params.rir_length, params.sinc_halfwidth)
    })
    .into_iter()
    .enumerate()
    .map(|(l, h)| {
        let h = h?;
        let y = h
            .taps()
            .iter()
            .take(l + 1)
            .enumerate()
            .map(|(i, t)| t * xs[l - i])
            .sum();
        Ok((h, y))
    })
    .collect();
    let (rirs, clean) = rendered.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok(CleanRender { rirs, clean })
}

/// `clean + v` with `v` white Gaussian of standard deviation `std`.
pub fn add_white_noise(clean: &[f64], std: f64, seed: u64) -> Vec<f64> {
    if std == 0.0 {
        return clean.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    clean
        .iter()
        .map(|c| {
            let v: f64 = StandardNormal.sample(&mut rng);
            c + std * v
        })
        .collect()
}

/// Unit-variance white Gaussian source signal.
pub fn white_noise_source(len: usize, std: f64, clock: SampleClock, seed: u64) -> Result<SourceSignal> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..len)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            std * v
        })
        .collect();
    SourceSignal::new(samples, clock)
}

/// Renders the moving-microphone recording `y(l) = xᵀ(l) h(l) + v(l)` and
/// returns it with the ground-truth RIR at every location.
#[allow(clippy::too_many_arguments)]
pub fn render_moving_recording(
    room: &ShoeboxRoom,
    source: &Point3,
    traj: &Trajectory,
    x: &SourceSignal,
    noise_std: f64,
    params: RenderParams,
    seed: u64,
) -> Result<(MicRecording, Vec<Rir>)> {
    if noise_std.is_nan() || noise_std < 0.0 {
        return Err(Error::config("noise standard deviation must be non-negative"));
    }
    let CleanRender { rirs, clean } = render_clean(room, source, traj, x, params, Exec::default())?;
    let y = add_white_noise(&clean, noise_std, seed);
    Ok((MicRecording::new(y, x.clock())?, rirs))
}
