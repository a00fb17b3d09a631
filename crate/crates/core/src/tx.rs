//! Transmitter: preamble selection, data encoding and OTFS framing.
//!
//! A frame is `[cp | preamble block | cp | data block]`. The preamble block
//! carries column `a_i` of the sensing matrix, `i` being the preamble bits
//! read as a big-endian integer, reshaped column-wise onto the `M_p x N_p`
//! grid. The data block carries the zero-padded, interleaved QPSK codeword on
//! the `M_c x N_c` grid.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayView2, ShapeBuilder};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{complex_gaussian, ChannelTiming};
use crate::codec::{bits_to_u64, build_interleaver, encode_payload, pad_and_interleave, MessageBits, PolarCodeSpec};
use crate::error::{Error, Result};
use crate::zak::{add_cp, DdMatrix, ShiftGrid, TimeSignal, ZakTransform};

/// Grid dimensions and delay-Doppler spread of both phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub m_p: usize,
    pub big_n_p: usize,
    pub m_c: usize,
    pub big_n_c: usize,
    pub tau_max: usize,
    pub nu_max: usize,
}

impl FrameLayout {
    pub fn n_p(&self) -> usize {
        self.m_p * self.big_n_p
    }

    pub fn n_c(&self) -> usize {
        self.m_c * self.big_n_c
    }

    /// `n_p + n_c + 2 tau_max`.
    pub fn frame_len(&self) -> usize {
        self.n_p() + self.n_c() + 2 * self.tau_max
    }

    pub fn shift_grid(&self) -> ShiftGrid {
        ShiftGrid::new(self.tau_max, self.nu_max)
    }

    /// Doppler scaling from preamble bins to data bins, `n_c / n_p`.
    pub fn alpha(&self) -> Result<usize> {
        let (n_p, n_c) = (self.n_p(), self.n_c());
        if n_p == 0 || n_c % n_p != 0 {
            return Err(Error::Config(format!(
                "n_c = {n_c} is not an integer multiple of n_p = {n_p}"
            )));
        }
        Ok(n_c / n_p)
    }

    /// Channel time reference for a whole frame: time zero is the first
    /// preamble sample after its prefix, Doppler in preamble-phase bins.
    pub fn frame_timing(&self) -> ChannelTiming {
        ChannelTiming {
            origin: -(self.tau_max as i64),
            doppler_len: self.n_p(),
        }
    }

    /// Splits a received frame into its preamble and data parts (both with
    /// their prefixes).
    pub fn split(&self, y: &TimeSignal) -> Result<(TimeSignal, TimeSignal)> {
        if y.len() != self.frame_len() {
            return Err(Error::Dimension {
                expected: self.frame_len(),
                actual: y.len(),
            });
        }
        let cut = self.n_p() + self.tau_max;
        Ok((
            TimeSignal::new(y.samples[..cut].to_vec()),
            TimeSignal::new(y.samples[cut..].to_vec()),
        ))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_p() == 0 || self.n_c() == 0 {
            return Err(Error::Config("grid dimensions must be positive".into()));
        }
        if self.tau_max >= self.m_p || self.tau_max >= self.m_c {
            return Err(Error::Config(format!(
                "tau_max = {} must be below both delay dimensions ({}, {})",
                self.tau_max, self.m_p, self.m_c
            )));
        }
        if 2 * self.nu_max > self.big_n_p {
            return Err(Error::Config(format!(
                "2 nu_max = {} exceeds N_p = {}",
                2 * self.nu_max,
                self.big_n_p
            )));
        }
        let alpha = self.alpha()?;
        if 2 * self.nu_max * alpha > self.big_n_c {
            return Err(Error::Config(format!(
                "rescaled Doppler spread {} exceeds N_c = {}",
                2 * self.nu_max * alpha,
                self.big_n_c
            )));
        }
        Ok(())
    }
}

/// Per-sample amplitudes of both phases and the noise level they refer to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerPlan {
    /// Average power per preamble sample, `P_p`.
    pub preamble_power: f64,
    /// Power of each occupied data slot, `P_d`.
    pub data_power: f64,
    pub sigma2: f64,
}

impl PowerPlan {
    /// Powers meeting the per-phase Eb/N0 targets (linear) given the bit
    /// split, the preamble length and the number of occupied data slots.
    pub fn from_ebn0(
        ebn0_preamble: f64,
        ebn0_data: f64,
        sigma2: f64,
        b_p: usize,
        b_c: usize,
        n_p: usize,
        data_slots: usize,
    ) -> Self {
        Self {
            preamble_power: ebn0_preamble * sigma2 * b_p as f64 / n_p as f64,
            data_power: ebn0_data * sigma2 * b_c as f64 / data_slots as f64,
            sigma2,
        }
    }

    /// Scale applied to a sensing column, `sqrt(n_p P_p)`.
    pub fn preamble_amplitude(&self, n_p: usize) -> f64 {
        (n_p as f64 * self.preamble_power).sqrt()
    }

    pub fn data_amplitude(&self) -> f64 {
        self.data_power.sqrt()
    }
}

/// Preamble codebook with i.i.d. `CN(0, 1/n_p)` entries, stored column by
/// column.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    b_p: usize,
    n_p: usize,
    seed: u64,
    data: Vec<Complex64>,
}

const SENSING_MAGIC: &[u8; 8] = b"OTFSSENS";
const SENSING_VERSION: u32 = 1;

impl SensingMatrix {
    pub fn generate(b_p: usize, n_p: usize, seed: u64) -> Result<Self> {
        if b_p >= 32 {
            return Err(Error::Config(format!("b_p = {b_p} too large for a codebook")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = (0.5 / n_p as f64).sqrt();
        let data = (0..(n_p << b_p)).map(|_| complex_gaussian(&mut rng, std)).collect();
        Ok(Self { b_p, n_p, seed, data })
    }

    pub fn b_p(&self) -> usize {
        self.b_p
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_columns(&self) -> usize {
        1 << self.b_p
    }

    pub fn column(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.n_p..(i + 1) * self.n_p]
    }

    /// `n_p x 2^b_p` view.
    pub fn view(&self) -> ArrayView2<'_, Complex64> {
        ArrayView2::from_shape((self.n_p, self.num_columns()).f(), &self.data)
            .expect("buffer sized at construction")
    }

    /// Writes the matrix: magic, version, `b_p`, `n_p`, seed, then the
    /// entries as little-endian `(re, im)` f64 pairs in row-major order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SENSING_MAGIC)?;
        w.write_all(&SENSING_VERSION.to_le_bytes())?;
        w.write_all(&(self.b_p as u32).to_le_bytes())?;
        w.write_all(&(self.n_p as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        let mut buf = Vec::with_capacity(16 * self.data.len());
        for r in 0..self.n_p {
            for c in 0..self.num_columns() {
                let v = self.data[c * self.n_p + r];
                buf.extend_from_slice(&v.re.to_le_bytes());
                buf.extend_from_slice(&v.im.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SENSING_MAGIC {
            return Err(Error::SensingFile("bad magic".into()));
        }
        let mut word = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word))
        };
        let version = read_u32(&mut r)?;
        if version != SENSING_VERSION {
            return Err(Error::SensingFile(format!("unsupported version {version}")));
        }
        let b_p = read_u32(&mut r)? as usize;
        let n_p = read_u32(&mut r)? as usize;
        if b_p >= 32 || n_p == 0 {
            return Err(Error::SensingFile(format!("bad header b_p={b_p} n_p={n_p}")));
        }
        let mut seed = [0u8; 8];
        r.read_exact(&mut seed)?;
        let seed = u64::from_le_bytes(seed);
        let cols = 1usize << b_p;
        let mut raw = vec![0u8; 16 * n_p * cols];
        r.read_exact(&mut raw)?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::SensingFile("trailing bytes".into()));
        }
        let mut data = vec![Complex64::new(0.0, 0.0); n_p * cols];
        for (k, chunk) in raw.chunks_exact(16).enumerate() {
            let (row, col) = (k / cols, k % cols);
            let re = f64::from_le_bytes(chunk[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(chunk[8..].try_into().expect("8 bytes"));
            data[col * n_p + row] = Complex64::new(re, im);
        }
        Ok(Self { b_p, n_p, seed, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Both CP-protected blocks of one user's transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct TxFrame {
    pub phase1: TimeSignal,
    pub phase2: TimeSignal,
}

impl TxFrame {
    pub fn concatenated(&self) -> TimeSignal {
        let mut samples = Vec::with_capacity(self.phase1.len() + self.phase2.len());
        samples.extend_from_slice(&self.phase1.samples);
        samples.extend_from_slice(&self.phase2.samples);
        TimeSignal::new(samples)
    }

    pub fn len(&self) -> usize {
        self.phase1.len() + self.phase2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Modulator with transforms planned once per layout.
#[derive(Debug, Clone)]
pub struct Transmitter {
    layout: FrameLayout,
    zak_p: ZakTransform,
    zak_c: ZakTransform,
}

impl Transmitter {
    pub fn new(layout: FrameLayout) -> Self {
        Self {
            layout,
            zak_p: ZakTransform::new(layout.m_p, layout.big_n_p),
            zak_c: ZakTransform::new(layout.m_c, layout.big_n_c),
        }
    }

    pub fn layout(&self) -> &FrameLayout {
        &self.layout
    }

    /// Preamble-phase block with CP, `sqrt(n_p P_p) a_i` on the DD grid.
    pub fn preamble_block(&self, preamble_bits: &[u8], sensing: &SensingMatrix, power: &PowerPlan) -> Result<TimeSignal> {
        let l = &self.layout;
        if preamble_bits.len() != sensing.b_p() {
            return Err(Error::Dimension {
                expected: sensing.b_p(),
                actual: preamble_bits.len(),
            });
        }
        if sensing.n_p() != l.n_p() {
            return Err(Error::Dimension {
                expected: l.n_p(),
                actual: sensing.n_p(),
            });
        }
        let index = bits_to_u64(preamble_bits) as usize;
        let amp = power.preamble_amplitude(l.n_p());
        let column = sensing.column(index).iter().map(|v| v * amp).collect();
        let grid = DdMatrix::from_column_major(l.m_p, l.big_n_p, column)?;
        add_cp(&self.zak_p.idzt(&grid)?, l.tau_max)
    }

    /// Data-phase DD grid before modulation.
    pub fn data_grid(&self, message: &MessageBits, spec: &PolarCodeSpec, power: &PowerPlan) -> Result<DdMatrix> {
        let l = &self.layout;
        if message.data_bits.len() != spec.payload_len() {
            return Err(Error::Dimension {
                expected: spec.payload_len(),
                actual: message.data_bits.len(),
            });
        }
        let amp = power.data_amplitude();
        let symbols: Vec<Complex64> = encode_payload(&message.data_bits, spec)?
            .into_iter()
            .map(|s| s * amp)
            .collect();
        let interleaver = build_interleaver(&message.preamble_bits, l.n_c())?;
        let slots = pad_and_interleave(&symbols, l.n_c(), &interleaver)?;
        DdMatrix::from_column_major(l.m_c, l.big_n_c, slots)
    }

    pub fn transmit(
        &self,
        message: &MessageBits,
        sensing: &SensingMatrix,
        spec: &PolarCodeSpec,
        power: &PowerPlan,
    ) -> Result<TxFrame> {
        let phase1 = self.preamble_block(&message.preamble_bits, sensing, power)?;
        let grid = self.data_grid(message, spec, power)?;
        let phase2 = add_cp(&self.zak_c.idzt(&grid)?, self.layout.tau_max)?;
        Ok(TxFrame { phase1, phase2 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{u64_to_bits, Crc};
    use crate::zak::remove_cp;
    use rand::Rng;

    pub(crate) fn paper_layout() -> FrameLayout {
        FrameLayout {
            m_p: 40,
            big_n_p: 16,
            m_c: 115,
            big_n_c: 128,
            tau_max: 3,
            nu_max: 2,
        }
    }

    fn random_message(rng: &mut ChaCha8Rng, b_p: usize, b_c: usize) -> MessageBits {
        MessageBits {
            preamble_bits: (0..b_p).map(|_| rng.random_range(0..2)).collect(),
            data_bits: (0..b_c).map(|_| rng.random_range(0..2)).collect(),
        }
    }

    #[test]
    fn layout_arithmetic() {
        let l = paper_layout();
        assert_eq!(l.n_p(), 640);
        assert_eq!(l.n_c(), 14720);
        assert_eq!(l.frame_len(), 15366);
        assert_eq!(l.alpha().unwrap(), 23);
        assert_eq!(l.shift_grid().len(), 16);
        l.validate().unwrap();
        let bad = FrameLayout { big_n_c: 127, ..l };
        assert!(bad.alpha().is_err());
    }

    #[test]
    fn sensing_matrix_statistics() {
        let a = SensingMatrix::generate(11, 640, 7).unwrap();
        assert_eq!(a.num_columns(), 2048);
        assert_eq!(a.view().dim(), (640, 2048));
        let mean: f64 = (0..2048)
            .map(|i| a.column(i).iter().map(|v| v.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            / 2048.0;
        assert!((mean - 1.0).abs() < 0.02, "mean column energy {mean}");
        assert_eq!(a, SensingMatrix::generate(11, 640, 7).unwrap());
        assert_ne!(a, SensingMatrix::generate(11, 640, 8).unwrap());
        assert_eq!(a.view()[[5, 3]], a.column(3)[5]);
    }

    #[test]
    fn sensing_file_round_trip() {
        let a = SensingMatrix::generate(3, 8, 42).unwrap();
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 28 + 16 * 64);
        // First payload entry is row 0, column 0; the second is row 0, column 1.
        let re = f64::from_le_bytes(buf[28 + 16..28 + 24].try_into().unwrap());
        assert_eq!(re, a.column(1)[0].re);
        assert_eq!(SensingMatrix::read_from(&buf[..]).unwrap(), a);
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(SensingMatrix::read_from(&bad[..]).is_err());
        assert!(SensingMatrix::read_from(&buf[..buf.len() - 1]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bin");
        a.save(&path).unwrap();
        assert_eq!(SensingMatrix::load(&path).unwrap(), a);
    }

    #[test]
    fn frame_length_and_energy_audit() {
        let layout = paper_layout();
        let tx = Transmitter::new(layout);
        let sensing = SensingMatrix::generate(11, 640, 1).unwrap();
        let spec = PolarCodeSpec::nr(512, 89, Crc::CRC16, 16).unwrap();
        let power = PowerPlan::from_ebn0(2.5, 3.0, 1.0, 11, 89, 640, 256);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let msg = random_message(&mut rng, 11, 89);
        let frame = tx.transmit(&msg, &sensing, &spec, &power).unwrap();
        assert_eq!(frame.len(), 15366);
        assert_eq!(frame.concatenated().len(), layout.frame_len());
        let e1 = remove_cp(&frame.phase1, 3).unwrap().energy();
        let e2 = remove_cp(&frame.phase2, 3).unwrap().energy();
        let col = sensing.column(msg.preamble_index());
        let col_energy: f64 = col.iter().map(|v| v.norm_sqr()).sum();
        let expect = 640.0 * power.preamble_power * col_energy + 256.0 * power.data_power;
        assert!(((e1 + e2) - expect).abs() < 1e-9 * expect);
        // Per-phase Eb/N0 from the realized energies.
        assert!((256.0 * power.data_power / 89.0 - 3.0).abs() < 1e-12);
        assert!((e1 / col_energy / 11.0 - 2.5).abs() < 1e-9);
    }

    #[test]
    fn zero_preamble_selects_first_column() {
        let layout = FrameLayout {
            m_p: 8,
            big_n_p: 4,
            m_c: 8,
            big_n_c: 8,
            tau_max: 1,
            nu_max: 1,
        };
        let tx = Transmitter::new(layout);
        let sensing = SensingMatrix::generate(3, 32, 5).unwrap();
        let power = PowerPlan {
            preamble_power: 1.0 / 32.0,
            data_power: 1.0,
            sigma2: 1.0,
        };
        let block = tx.preamble_block(&[0, 0, 0], &sensing, &power).unwrap();
        let grid = ZakTransform::new(8, 4).dzt(&remove_cp(&block, 1).unwrap()).unwrap();
        for (a, b) in grid.as_slice().iter().zip(sensing.column(0)) {
            assert!((a - b).norm() < 1e-12);
        }
        let spec = PolarCodeSpec::nr(16, 4, Crc::CRC6, 1).unwrap();
        let msg = MessageBits {
            preamble_bits: u64_to_bits(0, 3),
            data_bits: vec![1, 0, 1, 1],
        };
        let g = tx.data_grid(&msg, &spec, &power).unwrap();
        let il = build_interleaver(&msg.preamble_bits, 64).unwrap();
        assert_eq!(il.seed(), 0);
        let occupied = (0..64).filter(|&i| g.as_slice()[i].norm() > 0.0).count();
        assert_eq!(occupied, 8);
    }

    #[test]
    fn deterministic_and_validated() {
        let layout = paper_layout();
        let tx = Transmitter::new(layout);
        let sensing = SensingMatrix::generate(11, 640, 1).unwrap();
        let spec = PolarCodeSpec::nr(512, 89, Crc::CRC16, 16).unwrap();
        let power = PowerPlan::from_ebn0(1.0, 1.0, 1.0, 11, 89, 640, 256);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let msg = random_message(&mut rng, 11, 89);
        assert_eq!(
            tx.transmit(&msg, &sensing, &spec, &power).unwrap(),
            tx.transmit(&msg, &sensing, &spec, &power).unwrap()
        );
        let short = MessageBits {
            preamble_bits: msg.preamble_bits.clone(),
            data_bits: vec![0; 88],
        };
        assert!(tx.transmit(&short, &sensing, &spec, &power).is_err());
        let wrong = SensingMatrix::generate(11, 64, 1).unwrap();
        assert!(tx.transmit(&msg, &wrong, &spec, &power).is_err());
    }
}
