//! Delay-Doppler signal kernel.
//!
//! OTFS modulation places symbols on an `M x N` delay-Doppler (DD) grid and
//! maps it to `M*N` time samples with the inverse discrete Zak transform:
//! `x = vec(X F_N^H)`, where `F_N` is the unitary `N`-point DFT applied along
//! the Doppler axis and `vec` stacks columns. The forward transform undoes it,
//! so both directions are isometries.
//!
//! Grids are stored column-major, i.e. cell `(m, n)` lives at `m + M*n`, which
//! is exactly the vectorized ordering used by the time-domain signal.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Complex `M x N` delay-Doppler grid (column-major).
#[derive(Debug, Clone, PartialEq)]
pub struct DdMatrix {
    delay_bins: usize,
    doppler_bins: usize,
    data: Vec<Complex64>,
}

impl DdMatrix {
    pub fn zeros(delay_bins: usize, doppler_bins: usize) -> Self {
        Self {
            delay_bins,
            doppler_bins,
            data: vec![Complex64::new(0.0, 0.0); delay_bins * doppler_bins],
        }
    }

    /// Builds a grid from a vector filled column-wise.
    pub fn from_column_major(
        delay_bins: usize,
        doppler_bins: usize,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        if data.len() != delay_bins * doppler_bins {
            return Err(Error::Dimension {
                expected: delay_bins * doppler_bins,
                actual: data.len(),
            });
        }
        Ok(Self {
            delay_bins,
            doppler_bins,
            data,
        })
    }

    pub fn delay_bins(&self) -> usize {
        self.delay_bins
    }

    pub fn doppler_bins(&self) -> usize {
        self.doppler_bins
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, m: usize, n: usize) -> usize {
        m + self.delay_bins * n
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize) -> Complex64 {
        self.data[self.index(m, n)]
    }

    #[inline]
    pub fn set(&mut self, m: usize, n: usize, value: Complex64) {
        let idx = self.index(m, n);
        self.data[idx] = value;
    }

    /// Column-major view, identical to `vec(X)`.
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn frobenius_norm_sqr(&self) -> f64 {
        energy(&self.data)
    }
}

/// Complex baseband samples at unit symbol time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    pub samples: Vec<Complex64>,
}

impl TimeSignal {
    pub fn new(samples: Vec<Complex64>) -> Self {
        Self { samples }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![Complex64::new(0.0, 0.0); len])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }
}

/// On-grid delay-Doppler shift: `tau` delay bins and `nu` Doppler bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct DdShift {
    pub tau: usize,
    pub nu: i64,
}

impl DdShift {
    pub const ZERO: DdShift = DdShift { tau: 0, nu: 0 };

    pub fn new(tau: usize, nu: i64) -> Self {
        Self { tau, nu }
    }
}

/// The set of admissible shifts: delays `0..=tau_max` and Dopplers
/// `-nu_max+1..=nu_max`. With `nu_max = 0` the Doppler axis collapses to `{0}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftGrid {
    pub tau_max: usize,
    pub nu_max: usize,
}

impl ShiftGrid {
    pub fn new(tau_max: usize, nu_max: usize) -> Self {
        Self { tau_max, nu_max }
    }

    pub fn doppler_values(&self) -> impl Iterator<Item = i64> + Clone {
        let nu_max = self.nu_max as i64;
        let lo = if nu_max == 0 { 0 } else { -nu_max + 1 };
        lo..=nu_max
    }

    pub fn doppler_count(&self) -> usize {
        (2 * self.nu_max).max(1)
    }

    /// Number of distinct shifts, `(tau_max + 1) * max(2 nu_max, 1)`.
    pub fn len(&self) -> usize {
        (self.tau_max + 1) * self.doppler_count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All shifts, delay-major.
    pub fn shifts(&self) -> Vec<DdShift> {
        (0..=self.tau_max)
            .flat_map(|tau| self.doppler_values().map(move |nu| DdShift::new(tau, nu)))
            .collect()
    }

    pub fn position(&self, shift: DdShift) -> Option<usize> {
        if !self.contains(shift) {
            return None;
        }
        let lo = if self.nu_max == 0 { 0 } else { -(self.nu_max as i64) + 1 };
        Some(shift.tau * self.doppler_count() + (shift.nu - lo) as usize)
    }

    pub fn contains(&self, shift: DdShift) -> bool {
        shift.tau <= self.tau_max && self.doppler_values().any(|nu| nu == shift.nu)
    }

    pub fn check(&self, shift: DdShift) -> Result<()> {
        if self.contains(shift) {
            Ok(())
        } else {
            Err(Error::ShiftOutOfGrid {
                tau: shift.tau,
                nu: shift.nu,
                tau_max: self.tau_max,
                nu_max: self.nu_max,
            })
        }
    }
}

pub(crate) fn energy(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

/// Zak transform pair with cached FFT plans for one grid size.
#[derive(Clone)]
pub struct ZakTransform {
    delay_bins: usize,
    doppler_bins: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ZakTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ZakTransform")
            .field("delay_bins", &self.delay_bins)
            .field("doppler_bins", &self.doppler_bins)
            .finish()
    }
}

impl ZakTransform {
    pub fn new(delay_bins: usize, doppler_bins: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            delay_bins,
            doppler_bins,
            forward: planner.plan_fft_forward(doppler_bins),
            inverse: planner.plan_fft_inverse(doppler_bins),
        }
    }

    pub fn delay_bins(&self) -> usize {
        self.delay_bins
    }

    pub fn doppler_bins(&self) -> usize {
        self.doppler_bins
    }

    pub fn grid_len(&self) -> usize {
        self.delay_bins * self.doppler_bins
    }

    /// `vec(X F_N^H)`.
    pub fn idzt(&self, grid: &DdMatrix) -> Result<TimeSignal> {
        self.check_grid(grid)?;
        Ok(TimeSignal::new(self.doppler_axis(grid.as_slice(), &self.inverse)))
    }

    /// `unvec(y) F_N`, the inverse of [`ZakTransform::idzt`].
    pub fn dzt(&self, signal: &TimeSignal) -> Result<DdMatrix> {
        if signal.len() != self.grid_len() {
            return Err(Error::Dimension {
                expected: self.grid_len(),
                actual: signal.len(),
            });
        }
        let data = self.doppler_axis(&signal.samples, &self.forward);
        DdMatrix::from_column_major(self.delay_bins, self.doppler_bins, data)
    }

    fn check_grid(&self, grid: &DdMatrix) -> Result<()> {
        if grid.delay_bins != self.delay_bins || grid.doppler_bins != self.doppler_bins {
            return Err(Error::Dimension {
                expected: self.grid_len(),
                actual: grid.len(),
            });
        }
        Ok(())
    }

    // Unitary DFT along the Doppler axis (every row of the column-major grid).
    fn doppler_axis(&self, input: &[Complex64], fft: &Arc<dyn Fft<f64>>) -> Vec<Complex64> {
        let (m_len, n_len) = (self.delay_bins, self.doppler_bins);
        let mut rows = vec![Complex64::new(0.0, 0.0); m_len * n_len];
        for n in 0..n_len {
            for m in 0..m_len {
                rows[m * n_len + n] = input[m + m_len * n];
            }
        }
        fft.process(&mut rows);
        let scale = 1.0 / (n_len as f64).sqrt();
        let mut out = vec![Complex64::new(0.0, 0.0); m_len * n_len];
        for m in 0..m_len {
            for n in 0..n_len {
                out[m + m_len * n] = rows[m * n_len + n] * scale;
            }
        }
        out
    }
}

/// Inverse discrete Zak transform (OTFS modulator).
pub fn idzt(grid: &DdMatrix) -> TimeSignal {
    ZakTransform::new(grid.delay_bins, grid.doppler_bins)
        .idzt(grid)
        .expect("transform sized from grid")
}

/// Discrete Zak transform (OTFS demodulator).
pub fn dzt(signal: &TimeSignal, delay_bins: usize, doppler_bins: usize) -> Result<DdMatrix> {
    ZakTransform::new(delay_bins, doppler_bins).dzt(signal)
}

/// Prepends the last `cp_len` samples.
pub fn add_cp(signal: &TimeSignal, cp_len: usize) -> Result<TimeSignal> {
    let len = signal.len();
    if cp_len > len {
        return Err(Error::CyclicPrefix { cp_len, len });
    }
    let mut out = Vec::with_capacity(len + cp_len);
    out.extend_from_slice(&signal.samples[len - cp_len..]);
    out.extend_from_slice(&signal.samples);
    Ok(TimeSignal::new(out))
}

/// Drops the first `cp_len` samples.
pub fn remove_cp(signal: &TimeSignal, cp_len: usize) -> Result<TimeSignal> {
    let len = signal.len();
    if cp_len >= len {
        return Err(Error::CyclicPrefix { cp_len, len });
    }
    Ok(TimeSignal::new(signal.samples[cp_len..].to_vec()))
}

/// Applies `e^{-j2pi nu tau/L} Delta^nu pi^tau` to a length-`L` block, i.e.
/// `out[l] = s[(l - tau) mod L] e^{j2pi nu (l - tau)/L}`.
pub fn dd_shift_time(signal: &TimeSignal, shift: DdShift, grid_len: usize) -> Result<TimeSignal> {
    if signal.len() != grid_len {
        return Err(Error::Dimension {
            expected: grid_len,
            actual: signal.len(),
        });
    }
    let len = grid_len as i64;
    let tau = shift.tau as i64;
    let samples = (0..len)
        .map(|l| {
            let src = (l - tau).rem_euclid(len) as usize;
            let phase = 2.0 * PI * (shift.nu * (l - tau)) as f64 / len as f64;
            signal.samples[src] * Complex64::from_polar(1.0, phase)
        })
        .collect();
    Ok(TimeSignal::new(samples))
}

/// DD-domain input-output relation of a unit-gain single path: returns the
/// source cell `((m - tau) mod M, (n - nu) mod N)` and the phase `p` such that
/// `Y[m, n] = p * X[source]`.
pub fn dd_phase_relation(
    shift: DdShift,
    m: usize,
    n: usize,
    delay_bins: usize,
    doppler_bins: usize,
) -> ((usize, usize), Complex64) {
    let big_m = delay_bins as i64;
    let big_n = doppler_bins as i64;
    let dm = m as i64 - shift.tau as i64;
    let dn = n as i64 - shift.nu;
    let src_m = dm.rem_euclid(big_m) as usize;
    let src_n = dn.rem_euclid(big_n) as usize;
    let wrap = dm.div_euclid(big_m);
    let phase_delay = 2.0 * PI * (shift.nu * dm) as f64 / (big_m * big_n) as f64;
    // Reduce before scaling: only (n - nu) mod N matters once multiplied by an integer wrap count.
    let phase_wrap = 2.0 * PI * ((dn.rem_euclid(big_n) * wrap).rem_euclid(big_n)) as f64 / big_n as f64;
    (
        (src_m, src_n),
        Complex64::from_polar(1.0, phase_delay + phase_wrap),
    )
}

/// The DD-domain shift operator for one shift, precomputed over the grid.
/// Acting on a vectorized grid `v`, `(Dv)[j] = phase[j] * v[source[j]]`.
#[derive(Debug, Clone)]
pub struct DdShiftMap {
    pub shift: DdShift,
    source: Vec<usize>,
    phase: Vec<Complex64>,
}

impl DdShiftMap {
    pub fn new(shift: DdShift, delay_bins: usize, doppler_bins: usize) -> Self {
        let len = delay_bins * doppler_bins;
        let mut source = Vec::with_capacity(len);
        let mut phase = Vec::with_capacity(len);
        for n in 0..doppler_bins {
            for m in 0..delay_bins {
                let ((sm, sn), p) = dd_phase_relation(shift, m, n, delay_bins, doppler_bins);
                source.push(sm + delay_bins * sn);
                phase.push(p);
            }
        }
        Self {
            shift,
            source,
            phase,
        }
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// Destination cell `j` draws from `source(j)`.
    pub fn source(&self, dest: usize) -> usize {
        self.source[dest]
    }

    pub fn phase(&self, dest: usize) -> Complex64 {
        self.phase[dest]
    }

    /// `out = D v`.
    pub fn apply(&self, v: &[Complex64], out: &mut [Complex64]) {
        for ((o, &src), &p) in out.iter_mut().zip(&self.source).zip(&self.phase) {
            *o = p * v[src];
        }
    }

    /// `out += D v`.
    pub fn apply_add(&self, v: &[Complex64], out: &mut [Complex64]) {
        for ((o, &src), &p) in out.iter_mut().zip(&self.source).zip(&self.phase) {
            *o += p * v[src];
        }
    }

    /// `out = D^H u`.
    pub fn apply_adjoint(&self, u: &[Complex64], out: &mut [Complex64]) {
        for ((&val, &src), &p) in u.iter().zip(&self.source).zip(&self.phase) {
            out[src] = p.conj() * val;
        }
    }

    /// Returns the DD grid seen after a unit-gain path with this shift.
    pub fn apply_grid(&self, grid: &DdMatrix) -> DdMatrix {
        let mut out = DdMatrix::zeros(grid.delay_bins(), grid.doppler_bins());
        self.apply(grid.as_slice(), out.as_mut_slice());
        out
    }
}

/// Inverse of [`dd_phase_relation`]: where does source cell `(m, n)` land
/// after the shift, and with which phase.
pub fn dd_destination(
    shift: DdShift,
    m: usize,
    n: usize,
    delay_bins: usize,
    doppler_bins: usize,
) -> ((usize, usize), Complex64) {
    let dest_m = (m + shift.tau) % delay_bins;
    let dest_n = (n as i64 + shift.nu).rem_euclid(doppler_bins as i64) as usize;
    let (_, phase) = dd_phase_relation(shift, dest_m, dest_n, delay_bins, doppler_bins);
    ((dest_m, dest_n), phase)
}
