//! Data-phase receiver: SINR map, per-user MRC over the multipath echoes,
//! SCL decoding with CRC gating, and successive interference cancellation.
//!
//! The data block of user `k` is the grid `X_k = sqrt(P_d) * Pi_k(pad(s_k))`.
//! Each path `(h, tau, nu)` places a copy of it, moved and rotated by the DD
//! input-output relation, on the received grid `Y_c`.

use std::collections::HashMap;

use num_complex::Complex64;

use crate::channel::{ChannelPath, UserChannel};
use crate::codec::{
    build_interleaver, encode_payload, qpsk_llr, scl_decode, u64_to_bits, PolarCodeSpec,
};
use crate::cs_amp::DetectedUser;
use crate::error::{Error, Result};
use crate::tx::{FrameLayout, PowerPlan};
use crate::zak::{dd_destination, remove_cp, DdMatrix, DdShift, TimeSignal, ZakTransform};

/// Moves preamble-phase channel estimates to the data block: Doppler bins
/// scale by `alpha = n_c / n_p`, delays are unchanged, and each gain picks up
/// the rotation its Doppler accrues over the data block's prefix,
/// `e^{j 2 pi nu tau_max / n_p}`.
pub fn rescale_channel(channel: &UserChannel, layout: &FrameLayout) -> Result<UserChannel> {
    let alpha = layout.alpha()? as i64;
    let n_p = layout.n_p() as i64;
    Ok(UserChannel::new(channel.paths().iter().map(|p| {
        let k = (p.shift.nu * layout.tau_max as i64).rem_euclid(n_p);
        let rot = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / n_p as f64);
        ChannelPath {
            gain: p.gain * rot,
            shift: DdShift::new(p.shift.tau, p.shift.nu * alpha),
        }
    })))
}

/// One path of one user: where each of its data symbols lands and with which
/// phase.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoView {
    pub gain: Complex64,
    pub shift: DdShift,
    pub cells: Vec<usize>,
    pub phases: Vec<Complex64>,
}

/// A detected user as seen by the data receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct UserView {
    pub preamble_index: usize,
    pub echoes: Vec<EchoView>,
}

impl UserView {
    pub fn power(&self) -> f64 {
        self.echoes.iter().map(|e| e.gain.norm_sqr()).sum()
    }
}

/// Aggregate received power per data-grid cell, noise included.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrMap {
    pub delay_bins: usize,
    pub doppler_bins: usize,
    pub power: Vec<f64>,
}

impl SinrMap {
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.power[m + self.delay_bins * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutcome {
    pub preamble_index: usize,
    /// Payload of the selected list path.
    pub data_bits: Vec<u8>,
    /// Accepted by the receiver (CRC pass, or exact match in genie mode).
    pub crc_ok: bool,
    /// Mean effective SINR over the user's symbols at the last attempt.
    pub mean_sinr: f64,
    /// SIC pass in which the outcome was settled (1-based).
    pub pass: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataDecode {
    pub outcomes: Vec<DecodeOutcome>,
    pub residual: DdMatrix,
}

/// Data receiver for one layout, code and power plan.
#[derive(Debug, Clone)]
pub struct DataReceiver {
    layout: FrameLayout,
    spec: PolarCodeSpec,
    b_p: usize,
    data_power: f64,
    sigma2: f64,
    pub sic: bool,
    zak: ZakTransform,
}

impl DataReceiver {
    pub fn new(layout: FrameLayout, spec: PolarCodeSpec, b_p: usize, power: &PowerPlan) -> Result<Self> {
        layout.alpha()?;
        if spec.block_len() / 2 > layout.n_c() {
            return Err(Error::Padding {
                symbols: spec.block_len() / 2,
                slots: layout.n_c(),
            });
        }
        Ok(Self {
            layout,
            spec,
            b_p,
            data_power: power.data_power,
            sigma2: power.sigma2,
            sic: true,
            zak: ZakTransform::new(layout.m_c, layout.big_n_c),
        })
    }

    pub fn symbols_per_user(&self) -> usize {
        self.spec.block_len() / 2
    }

    fn noise_floor(&self) -> f64 {
        self.sigma2.max(1e-12 * self.data_power).max(f64::MIN_POSITIVE)
    }

    /// CP removal and DZT of the data block.
    pub fn demodulate(&self, y_c_cp: &TimeSignal) -> Result<DdMatrix> {
        if y_c_cp.len() != self.layout.n_c() + self.layout.tau_max {
            return Err(Error::Dimension {
                expected: self.layout.n_c() + self.layout.tau_max,
                actual: y_c_cp.len(),
            });
        }
        self.zak.dzt(&remove_cp(y_c_cp, self.layout.tau_max)?)
    }

    /// Echo geometry of a user whose paths are already in data-phase units.
    pub fn user_view(&self, user: &DetectedUser) -> Result<UserView> {
        if user.channel.paths().is_empty() {
            return Err(Error::NoPaths);
        }
        let (m_c, n_c) = (self.layout.m_c, self.layout.big_n_c);
        let bits = u64_to_bits(user.preamble_index as u64, self.b_p);
        let il = build_interleaver(&bits, self.layout.n_c())?;
        let slots = il.occupied(self.symbols_per_user());
        let echoes = user
            .channel
            .paths()
            .iter()
            .map(|p| {
                let (cells, phases) = slots
                    .iter()
                    .map(|&q| {
                        let ((dm, dn), phase) = dd_destination(p.shift, q % m_c, q / m_c, m_c, n_c);
                        (dm + m_c * dn, phase)
                    })
                    .unzip();
                EchoView {
                    gain: p.gain,
                    shift: p.shift,
                    cells,
                    phases,
                }
            })
            .collect();
        Ok(UserView {
            preamble_index: user.preamble_index,
            echoes,
        })
    }

    pub fn build_sinr_map(&self, users: &[UserView]) -> SinrMap {
        let mut power = vec![self.noise_floor(); self.layout.n_c()];
        for u in users {
            for e in &u.echoes {
                let p = e.gain.norm_sqr() * self.data_power;
                for &c in &e.cells {
                    power[c] += p;
                }
            }
        }
        SinrMap {
            delay_bins: self.layout.m_c,
            doppler_bins: self.layout.big_n_c,
            power,
        }
    }

    /// MRC of a user's echoes: per-symbol estimates normalized to unit gain
    /// and their effective SINRs.
    pub fn mrc_combine(&self, y: &DdMatrix, user: &UserView, map: &SinrMap) -> Result<(Vec<Complex64>, Vec<f64>)> {
        if user.echoes.is_empty() {
            return Err(Error::NoPaths);
        }
        let amp = self.data_power.sqrt();
        let floor = self.noise_floor();
        let yv = y.as_slice();
        let count = self.symbols_per_user();
        let mut est = Vec::with_capacity(count);
        let mut sinr = Vec::with_capacity(count);
        for j in 0..count {
            let mut num = Complex64::new(0.0, 0.0);
            let mut den = 0.0;
            for e in &user.echoes {
                let c = e.cells[j];
                let g = e.gain * e.phases[j] * amp;
                let interference = (map.power[c] - e.gain.norm_sqr() * self.data_power).max(floor);
                num += g.conj() * yv[c] / interference;
                den += g.norm_sqr() / interference;
            }
            if den > 0.0 {
                est.push(num / den);
            } else {
                est.push(Complex64::new(0.0, 0.0));
            }
            sinr.push(den);
        }
        Ok((est, sinr))
    }

    fn cancel(&self, y: &mut DdMatrix, map: &mut SinrMap, user: &UserView, data_bits: &[u8]) -> Result<()> {
        let amp = self.data_power.sqrt();
        let symbols = encode_payload(data_bits, &self.spec)?;
        let floor = self.noise_floor();
        let yv = y.as_mut_slice();
        for e in &user.echoes {
            let p = e.gain.norm_sqr() * self.data_power;
            for ((&c, &ph), &s) in e.cells.iter().zip(&e.phases).zip(&symbols) {
                yv[c] -= e.gain * ph * s * amp;
                map.power[c] = (map.power[c] - p).max(floor);
            }
        }
        Ok(())
    }

    /// Decodes every detected user (paths in data-phase units), strongest
    /// first, cancelling each accepted codeword. With `genie`, a decoded
    /// payload is accepted only if it is one of the messages actually sent
    /// with that preamble.
    pub fn decode_all(
        &self,
        y: &DdMatrix,
        detections: &[DetectedUser],
        genie: Option<&HashMap<usize, Vec<Vec<u8>>>>,
    ) -> Result<DataDecode> {
        let mut views = detections
            .iter()
            .map(|d| self.user_view(d))
            .collect::<Result<Vec<_>>>()?;
        views.sort_by(|a, b| {
            b.power()
                .total_cmp(&a.power())
                .then(a.preamble_index.cmp(&b.preamble_index))
        });
        let mut residual = y.clone();
        let mut map = self.build_sinr_map(&views);
        let mut outcomes: Vec<Option<DecodeOutcome>> = vec![None; views.len()];
        let max_passes = if self.sic { views.len().max(1) } else { 1 };
        for pass in 1..=max_passes {
            let mut progress = false;
            for (k, view) in views.iter().enumerate() {
                if outcomes[k].as_ref().is_some_and(|o| o.crc_ok) {
                    continue;
                }
                let (est, sinr) = self.mrc_combine(&residual, view, &map)?;
                let mut llrs = Vec::with_capacity(2 * est.len());
                for (s, g) in est.iter().zip(&sinr) {
                    let (li, lq) = qpsk_llr(*s, *g);
                    llrs.push(li);
                    llrs.push(lq);
                }
                let block = scl_decode(&llrs, &self.spec)?;
                let data_bits = self.spec.payload(&block.info_bits).to_vec();
                let crc_ok = match genie {
                    Some(truth) => truth
                        .get(&view.preamble_index)
                        .is_some_and(|sent| sent.iter().any(|m| *m == data_bits)),
                    None => block.crc_ok,
                };
                if crc_ok {
                    progress = true;
                    if self.sic {
                        self.cancel(&mut residual, &mut map, view, &data_bits)?;
                    }
                }
                outcomes[k] = Some(DecodeOutcome {
                    preamble_index: view.preamble_index,
                    data_bits,
                    crc_ok,
                    mean_sinr: sinr.iter().sum::<f64>() / sinr.len().max(1) as f64,
                    pass,
                });
            }
            if !progress {
                break;
            }
        }
        Ok(DataDecode {
            outcomes: outcomes.into_iter().flatten().collect(),
            residual,
        })
    }
}

/// Per-user probability of error: the fraction of sent `(preamble, data)`
/// messages missing from the accepted outcomes.
pub fn pupe(outcomes: &[DecodeOutcome], truth: &[(usize, Vec<u8>)]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    count_missing(outcomes, truth) as f64 / truth.len() as f64
}

pub fn count_missing(outcomes: &[DecodeOutcome], truth: &[(usize, Vec<u8>)]) -> usize {
    truth
        .iter()
        .filter(|(i, bits)| {
            !outcomes
                .iter()
                .any(|o| o.crc_ok && o.preamble_index == *i && o.data_bits == *bits)
        })
        .count()
}

/// Accepted outcomes that match no sent message.
pub fn count_undetected_errors(outcomes: &[DecodeOutcome], truth: &[(usize, Vec<u8>)]) -> usize {
    outcomes
        .iter()
        .filter(|o| o.crc_ok && !truth.iter().any(|(i, b)| *i == o.preamble_index && *b == o.data_bits))
        .count()
}
