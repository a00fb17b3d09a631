//! Doubly-dispersive multiuser channel.
//!
//! Every user sees a handful of on-grid paths, each a complex gain with an
//! integer delay (in samples) and an integer Doppler (in bins of `1/T_f`).
//! The received block is the superposition of all delayed, Doppler-rotated
//! copies plus circular complex Gaussian noise.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::zak::{DdShift, ShiftGrid, TimeSignal};

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelPath {
    pub gain: Complex64,
    pub shift: DdShift,
}

/// All paths of one user, with distinct shifts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UserChannel {
    paths: Vec<ChannelPath>,
}

impl UserChannel {
    /// Builds a channel, merging paths that share a shift into one gain.
    pub fn new(paths: impl IntoIterator<Item = ChannelPath>) -> Self {
        let mut merged: BTreeMap<DdShift, Complex64> = BTreeMap::new();
        let mut order = Vec::new();
        for p in paths {
            let entry = merged.entry(p.shift).or_insert_with(|| {
                order.push(p.shift);
                Complex64::new(0.0, 0.0)
            });
            *entry += p.gain;
        }
        let paths = order
            .into_iter()
            .map(|shift| ChannelPath {
                gain: merged[&shift],
                shift,
            })
            .collect();
        Self { paths }
    }

    pub fn single(gain: Complex64, shift: DdShift) -> Self {
        Self::new([ChannelPath { gain, shift }])
    }

    pub fn paths(&self) -> &[ChannelPath] {
        &self.paths
    }

    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(|p| p.gain.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FadingMode {
    /// `h ~ CN(0, 1/P_k)` per path.
    #[default]
    Rayleigh,
    /// `h = 1` on every path.
    UnitGain,
}

/// Per-complex-sample noise variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    sigma2: f64,
}

impl NoiseSpec {
    pub fn new(sigma2: f64) -> Result<Self> {
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::Config(format!("noise variance must be >= 0, got {sigma2}")));
        }
        Ok(Self { sigma2 })
    }

    pub fn noiseless() -> Self {
        Self { sigma2: 0.0 }
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

/// Time reference of a received block.
///
/// Sample `l` of the block sits at time `l + origin` on the common time axis,
/// and a Doppler of `nu` bins rotates by `2 pi nu / doppler_len` per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelTiming {
    pub origin: i64,
    pub doppler_len: usize,
}

impl ChannelTiming {
    /// Reference for a single CP-protected block of `grid_len` samples: the
    /// time origin is the first sample after the prefix.
    pub fn block(grid_len: usize, cp_len: usize) -> Self {
        Self {
            origin: -(cp_len as i64),
            doppler_len: grid_len,
        }
    }
}

/// Draws `p_k` paths with distinct uniformly drawn shifts.
pub fn draw_user_channel<R: Rng + ?Sized>(
    rng: &mut R,
    p_k: usize,
    grid: ShiftGrid,
    fading: FadingMode,
) -> Result<UserChannel> {
    let cells = grid.len();
    if p_k == 0 || p_k > cells {
        return Err(Error::TooManyPaths { paths: p_k, cells });
    }
    let shifts = grid.shifts();
    let picks = index::sample(rng, cells, p_k);
    let std = (0.5 / p_k as f64).sqrt();
    let paths = picks
        .iter()
        .map(|i| {
            let gain = match fading {
                FadingMode::UnitGain => Complex64::new(1.0, 0.0),
                FadingMode::Rayleigh => complex_gaussian(rng, std),
            };
            ChannelPath {
                gain,
                shift: shifts[i],
            }
        })
        .collect::<Vec<_>>();
    Ok(UserChannel::new(paths))
}

/// Sample with independent `N(0, std^2)` real and imaginary parts.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, std: f64) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * std, im * std)
}

/// Adds `CN(0, sigma2)` noise in place.
pub fn add_awgn<R: Rng + ?Sized>(samples: &mut [Complex64], noise: NoiseSpec, rng: &mut R) {
    if noise.sigma2 == 0.0 {
        return;
    }
    let std = (noise.sigma2 / 2.0).sqrt();
    for s in samples.iter_mut() {
        *s += complex_gaussian(rng, std);
    }
}

/// Passes every user's signal through its channel, superimposes them and
/// adds noise: `y[l] = sum_k sum_p h x_k[l - tau] e^{j2pi nu (l + origin - tau)/L_d} + w[l]`.
///
/// Delays act as linear shifts; samples pushed past the start are lost, which
/// is what the cyclic prefix is there to absorb.
pub fn apply_channel<R: Rng + ?Sized>(
    signals: &[(&TimeSignal, &UserChannel)],
    noise: NoiseSpec,
    timing: ChannelTiming,
    rng: &mut R,
) -> Result<TimeSignal> {
    let len = signals.first().map_or(0, |(s, _)| s.len());
    if let Some((s, _)) = signals.iter().find(|(s, _)| s.len() != len) {
        return Err(Error::Dimension {
            expected: len,
            actual: s.len(),
        });
    }
    let mut y = vec![Complex64::new(0.0, 0.0); len];
    for (x, channel) in signals {
        for path in channel.paths() {
            add_path(&x.samples, path, timing, &mut y);
        }
    }
    add_awgn(&mut y, noise, rng);
    Ok(TimeSignal::new(y))
}

fn add_path(x: &[Complex64], path: &ChannelPath, timing: ChannelTiming, y: &mut [Complex64]) {
    let tau = path.shift.tau;
    if tau >= x.len() {
        return;
    }
    // Output sample tau + i carries input sample i at phase index i + origin,
    // tracked mod the Doppler period so the angle stays exact on long frames.
    let period = timing.doppler_len as i64;
    let nu = path.shift.nu.rem_euclid(period);
    let mut k = (path.shift.nu * timing.origin).rem_euclid(period);
    for (out, &input) in y[tau..].iter_mut().zip(x) {
        let rot = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / period as f64);
        *out += path.gain * input * rot;
        k = (k + nu) % period;
    }
}
