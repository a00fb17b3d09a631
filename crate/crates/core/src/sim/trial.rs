//! One Monte Carlo trial: draw users and channels, transmit, receive.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{apply_channel, draw_user_channel, ChannelTiming, NoiseSpec, UserChannel};
use crate::codec::{interleaver::mix64, MessageBits, PolarCodeSpec};
use crate::cs_amp::{amp_decode, count_misses, dd_measurement, extract_detections, AmpParams, DetectedUser, ExpandedSensing};
use crate::error::Result;
use crate::rx_data::{count_missing, count_undetected_errors, rescale_channel, DataReceiver};
use crate::sim::config::SystemConfig;
use crate::tx::{FrameLayout, PowerPlan, SensingMatrix, Transmitter};
use crate::zak::TimeSignal;

/// Seed of trial `index` under `master`; depends on nothing else, so results
/// do not depend on scheduling.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

/// Fate of one transmitted message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UserOutcome {
    Decoded,
    /// Preamble or one of its shifts not detected.
    Missed,
    /// Detected but not among the accepted messages.
    Failed,
    /// Data phase not simulated.
    NotDecoded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: u64,
    pub seed: u64,
    pub k_a: usize,
    /// Users whose preamble was not recovered with every shift.
    pub misses: usize,
    /// Sent messages absent from the decoded list (`None` without data phase).
    pub pupe_errors: Option<usize>,
    pub decoded: usize,
    pub undetected_errors: usize,
    pub detected_users: usize,
    /// Users sharing a preamble with an earlier user.
    pub collisions: usize,
    pub outcomes: Vec<UserOutcome>,
}

impl TrialReport {
    pub fn miss_rate(&self) -> f64 {
        self.misses as f64 / self.k_a as f64
    }

    pub fn pupe(&self) -> Option<f64> {
        self.pupe_errors.map(|e| e as f64 / self.k_a as f64)
    }
}

/// Everything shared by the trials of one sweep point.
pub struct Simulator {
    config: SystemConfig,
    layout: FrameLayout,
    spec: PolarCodeSpec,
    power: PowerPlan,
    ebn0_data_db: f64,
    sensing: SensingMatrix,
    expanded: Option<ExpandedSensing>,
    amp: AmpParams,
    tx: Transmitter,
    /// Absent for preamble-only runs.
    rx: Option<DataReceiver>,
}

impl Simulator {
    pub fn new(config: &SystemConfig) -> Result<Self> {
        let sensing = match &config.sensing_file {
            Some(path) => SensingMatrix::load(path)?,
            None => SensingMatrix::generate(config.b_p, config.n_p, config.sensing_seed)?,
        };
        Self::with_sensing(config, sensing)
    }

    pub fn with_sensing(config: &SystemConfig, sensing: SensingMatrix) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if sensing.b_p() != config.b_p || sensing.n_p() != config.n_p {
            return Err(crate::Error::SensingFile(format!(
                "codebook is {}x2^{}, configuration needs {}x2^{}",
                sensing.n_p(),
                sensing.b_p(),
                config.n_p,
                config.b_p
            )));
        }
        let expanded = if config.ideal_phase1 {
            None
        } else {
            Some(ExpandedSensing::for_layout(&sensing, &layout)?)
        };
        let spec = config.polar_spec()?;
        let power = config.power_plan(config.ebn0_data_db);
        let rx = Self::receiver(config, layout, &spec, &power)?;
        Ok(Self {
            config: config.clone(),
            layout,
            spec,
            power,
            ebn0_data_db: config.ebn0_data_db,
            sensing,
            expanded,
            amp: config.amp_params(),
            tx: Transmitter::new(layout),
            rx,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn sensing(&self) -> &SensingMatrix {
        &self.sensing
    }

    /// Same simulator at another operating point; the codebook and expanded
    /// operator are reused.
    pub fn retarget(&mut self, k_a: usize, ebn0_data_db: f64) -> Result<()> {
        self.config.k_a = k_a;
        self.config.ebn0_data_db = ebn0_data_db;
        self.ebn0_data_db = ebn0_data_db;
        self.power = self.config.power_plan(ebn0_data_db);
        self.amp = self.config.amp_params();
        self.rx = Self::receiver(&self.config, self.layout, &self.spec, &self.power)?;
        Ok(())
    }

    fn receiver(
        config: &SystemConfig,
        layout: FrameLayout,
        spec: &PolarCodeSpec,
        power: &PowerPlan,
    ) -> Result<Option<DataReceiver>> {
        if !config.data_phase {
            return Ok(None);
        }
        let mut rx = DataReceiver::new(layout, spec.clone(), config.b_p, power)?;
        rx.sic = config.sic;
        Ok(Some(rx))
    }

    pub fn ebn0_data_db(&self) -> f64 {
        self.ebn0_data_db
    }

    pub fn run_trial(&self, trial: u64) -> Result<TrialReport> {
        let cfg = &self.config;
        let seed = trial_seed(cfg.seed, trial);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k_a = cfg.k_a;
        let grid = self.layout.shift_grid();

        let messages: Vec<MessageBits> = (0..k_a)
            .map(|_| MessageBits {
                preamble_bits: (0..cfg.b_p).map(|_| rng.random_range(0..2u8)).collect(),
                data_bits: (0..cfg.b_c).map(|_| rng.random_range(0..2u8)).collect(),
            })
            .collect();
        let channels = (0..k_a)
            .map(|_| {
                let choices = cfg.p_k.values();
                let p = choices[rng.random_range(0..choices.len())];
                draw_user_channel(&mut rng, p, grid, cfg.fading)
            })
            .collect::<Result<Vec<UserChannel>>>()?;
        let indices: Vec<usize> = messages.iter().map(|m| m.preamble_index()).collect();
        let mut seen = std::collections::HashSet::new();
        let collisions = indices.iter().filter(|&&i| !seen.insert(i)).count();

        let noise = NoiseSpec::new(cfg.sigma2)?;
        let y = if cfg.data_phase {
            let frames = messages
                .iter()
                .map(|m| Ok(self.tx.transmit(m, &self.sensing, &self.spec, &self.power)?.concatenated()))
                .collect::<Result<Vec<TimeSignal>>>()?;
            let pairs: Vec<(&TimeSignal, &UserChannel)> = frames.iter().zip(&channels).collect();
            apply_channel(&pairs, noise, self.layout.frame_timing(), &mut rng)?
        } else {
            let blocks = messages
                .iter()
                .map(|m| self.tx.preamble_block(&m.preamble_bits, &self.sensing, &self.power))
                .collect::<Result<Vec<TimeSignal>>>()?;
            let pairs: Vec<(&TimeSignal, &UserChannel)> = blocks.iter().zip(&channels).collect();
            let timing = ChannelTiming::block(self.layout.n_p(), self.layout.tau_max);
            apply_channel(&pairs, noise, timing, &mut rng)?
        };

        let truth: Vec<(usize, UserChannel)> = indices.iter().copied().zip(channels.iter().cloned()).collect();
        let (detections, misses) = match &self.expanded {
            None => (merge_by_preamble(&truth), 0),
            Some(op) => {
                let cut = self.layout.n_p() + self.layout.tau_max;
                let y_p = TimeSignal::new(y.samples[..cut].to_vec());
                let y_dd = dd_measurement(&y_p, &self.layout)?;
                let support = amp_decode(&y_dd, op, &self.amp)?;
                let amp = self.power.preamble_amplitude(self.layout.n_p());
                let mut dets = extract_detections(&support, op);
                for d in &mut dets {
                    d.channel = UserChannel::new(d.channel.paths().iter().map(|p| crate::channel::ChannelPath {
                        gain: p.gain / amp,
                        shift: p.shift,
                    }));
                }
                let misses = count_misses(&truth, &dets);
                (dets, misses)
            }
        };
        let detected_users = detections.len();
        let missed_flags: Vec<bool> = truth
            .iter()
            .map(|t| count_misses(std::slice::from_ref(t), &detections) == 1)
            .collect();

        if !cfg.data_phase {
            return Ok(TrialReport {
                trial,
                seed,
                k_a,
                misses,
                pupe_errors: None,
                decoded: 0,
                undetected_errors: 0,
                detected_users,
                collisions,
                outcomes: missed_flags
                    .iter()
                    .map(|&m| if m { UserOutcome::Missed } else { UserOutcome::NotDecoded })
                    .collect(),
            });
        }

        let rx = self.rx.as_ref().expect("data phase enabled");
        let (_, y_c) = self.layout.split(&y)?;
        let grid_c = rx.demodulate(&y_c)?;
        let rescaled = detections
            .iter()
            .map(|d| {
                Ok(DetectedUser {
                    preamble_index: d.preamble_index,
                    channel: rescale_channel(&d.channel, &self.layout)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let genie_map: Option<HashMap<usize, Vec<Vec<u8>>>> = cfg.polar.genie.then(|| {
            let mut m: HashMap<usize, Vec<Vec<u8>>> = HashMap::new();
            for msg in &messages {
                m.entry(msg.preamble_index()).or_default().push(msg.data_bits.clone());
            }
            m
        });
        let decode = rx.decode_all(&grid_c, &rescaled, genie_map.as_ref())?;
        let sent: Vec<(usize, Vec<u8>)> = messages.iter().map(|m| (m.preamble_index(), m.data_bits.clone())).collect();
        let pupe_errors = count_missing(&decode.outcomes, &sent);
        let undetected_errors = count_undetected_errors(&decode.outcomes, &sent);
        let outcomes = sent
            .iter()
            .zip(&missed_flags)
            .map(|(s, &missed)| {
                let ok = decode
                    .outcomes
                    .iter()
                    .any(|o| o.crc_ok && o.preamble_index == s.0 && o.data_bits == s.1);
                if ok {
                    UserOutcome::Decoded
                } else if missed {
                    UserOutcome::Missed
                } else {
                    UserOutcome::Failed
                }
            })
            .collect();
        Ok(TrialReport {
            trial,
            seed,
            k_a,
            misses,
            pupe_errors: Some(pupe_errors),
            decoded: k_a - pupe_errors,
            undetected_errors,
            detected_users,
            collisions,
            outcomes,
        })
    }
}

/// True preambles with their channels, users sharing a preamble merged into
/// one detection.
pub fn merge_by_preamble(truth: &[(usize, UserChannel)]) -> Vec<DetectedUser> {
    let mut groups: BTreeMap<usize, Vec<crate::channel::ChannelPath>> = BTreeMap::new();
    for (i, ch) in truth {
        groups.entry(*i).or_default().extend(ch.paths().iter().cloned());
    }
    groups
        .into_iter()
        .map(|(preamble_index, paths)| DetectedUser {
            preamble_index,
            channel: UserChannel::new(paths),
        })
        .collect()
}
