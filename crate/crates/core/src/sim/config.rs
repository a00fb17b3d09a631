//! System configuration, loaded from TOML.
//!
//! Keys mirror the field names below. Any key left out takes the value of the
//! reference preset ([`SystemConfig::default`]): 11 preamble bits on a 40x16
//! grid, 89 data bits in a (512, 105) CRC-16 polar code on a 115x128 grid,
//! `tau_max = 3`, `nu_max = 2`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::FadingMode;
use crate::codec::{Crc, PolarCodeSpec};
use crate::cs_amp::{AmpParams, Denoiser};
use crate::error::{Error, Result};
use crate::tx::{FrameLayout, PowerPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolarConfig {
    pub block_len: usize,
    pub crc_len: usize,
    pub list_size: usize,
    /// Accept a decoded payload only if it was actually sent.
    pub genie: bool,
}

impl Default for PolarConfig {
    fn default() -> Self {
        Self {
            block_len: 512,
            crc_len: 16,
            list_size: 16,
            genie: false,
        }
    }
}

/// Paths per user: a fixed count, or a list drawn from uniformly per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathCount {
    Fixed(usize),
    Choice(Vec<usize>),
}

impl PathCount {
    pub fn values(&self) -> &[usize] {
        match self {
            PathCount::Fixed(v) => std::slice::from_ref(v),
            PathCount::Choice(v) => v,
        }
    }

    pub fn mean(&self) -> f64 {
        let v = self.values();
        v.iter().sum::<usize>() as f64 / v.len() as f64
    }
}

/// Sweep axes and the optional threshold search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Values of `K_a`; empty means the scalar `K_a`.
    #[serde(rename = "K_a")]
    pub k_a: Vec<usize>,
    /// Data-phase Eb/N0 values (dB); empty means the scalar value.
    pub ebn0_data_db: Vec<f64>,
    pub bisect: Option<BisectConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BisectConfig {
    pub target_pupe: f64,
    pub lo_db: f64,
    pub hi_db: f64,
    pub tolerance_db: f64,
}

impl Default for BisectConfig {
    fn default() -> Self {
        Self {
            target_pupe: 0.05,
            lo_db: -2.0,
            hi_db: 20.0,
            tolerance_db: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub b_p: usize,
    pub b_c: usize,
    pub n_p: usize,
    #[serde(rename = "M_p")]
    pub m_p: usize,
    #[serde(rename = "N_p")]
    pub big_n_p: usize,
    #[serde(rename = "M_c")]
    pub m_c: usize,
    #[serde(rename = "N_c")]
    pub big_n_c: usize,
    pub tau_max: usize,
    pub nu_max: usize,
    #[serde(rename = "P_k")]
    pub p_k: PathCount,
    pub fading: FadingMode,
    pub polar: PolarConfig,
    pub ebn0_preamble_db: f64,
    pub ebn0_data_db: f64,
    pub sigma2: f64,
    pub amp: AmpParams,
    /// Hand the data receiver the true preambles and channels.
    pub ideal_phase1: bool,
    /// Run the data phase; when false only preamble detection is simulated.
    pub data_phase: bool,
    pub sic: bool,
    #[serde(rename = "K_a")]
    pub k_a: usize,
    pub trials: usize,
    pub seed: u64,
    pub sensing_seed: u64,
    /// Load the codebook from this file instead of generating it.
    pub sensing_file: Option<PathBuf>,
    /// Trials per checkpoint write (0 disables checkpoints).
    pub checkpoint_every: usize,
    pub sweep: SweepConfig,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            b_p: 11,
            b_c: 89,
            n_p: 640,
            m_p: 40,
            big_n_p: 16,
            m_c: 115,
            big_n_c: 128,
            tau_max: 3,
            nu_max: 2,
            p_k: PathCount::Fixed(1),
            fading: FadingMode::UnitGain,
            polar: PolarConfig::default(),
            ebn0_preamble_db: 4.0,
            ebn0_data_db: 4.0,
            sigma2: 1.0,
            amp: AmpParams { denoiser: Denoiser::KnownGain, ..AmpParams::default() },
            ideal_phase1: false,
            data_phase: true,
            sic: true,
            k_a: 50,
            trials: 100,
            seed: 1,
            sensing_seed: 0x5EED,
            sensing_file: None,
            checkpoint_every: 0,
            sweep: SweepConfig::default(),
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

/// Bit-weighted overall Eb/N0 (dB), energies combined linearly with CPs
/// excluded: `(b_p E_p + b_c E_d) / (b_p + b_c)`.
pub fn overall_ebn0(b_p: usize, b_c: usize, preamble_db: f64, data_db: f64) -> f64 {
    let total = b_p as f64 * db_to_linear(preamble_db) + b_c as f64 * db_to_linear(data_db);
    linear_to_db(total / (b_p + b_c) as f64)
}

impl SystemConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SystemConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file and applies `key.path=value` overrides before validating.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: SystemConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies overrides to an already parsed configuration.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let text = self.to_toml()?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn layout(&self) -> FrameLayout {
        FrameLayout {
            m_p: self.m_p,
            big_n_p: self.big_n_p,
            m_c: self.m_c,
            big_n_c: self.big_n_c,
            tau_max: self.tau_max,
            nu_max: self.nu_max,
        }
    }

    pub fn polar_spec(&self) -> Result<PolarCodeSpec> {
        PolarCodeSpec::nr(
            self.polar.block_len,
            self.b_c,
            Crc::nr(self.polar.crc_len)?,
            self.polar.list_size,
        )
    }

    /// Occupied data slots per user.
    pub fn data_slots(&self) -> usize {
        self.polar.block_len / 2
    }

    pub fn power_plan(&self, ebn0_data_db: f64) -> PowerPlan {
        PowerPlan::from_ebn0(
            db_to_linear(self.ebn0_preamble_db),
            db_to_linear(ebn0_data_db),
            self.sigma2,
            self.b_p,
            self.b_c,
            self.n_p,
            self.data_slots(),
        )
    }

    pub fn overall_ebn0_db(&self, ebn0_data_db: f64) -> f64 {
        overall_ebn0(self.b_p, self.b_c, self.ebn0_preamble_db, ebn0_data_db)
    }

    /// AMP parameters with the denoiser priors filled in from the system
    /// parameters where not given explicitly.
    pub fn amp_params(&self) -> AmpParams {
        let mut p = self.amp.clone();
        let layout = self.layout();
        let columns = (1usize << self.b_p) * layout.shift_grid().len();
        if p.sparsity.is_none() {
            p.sparsity = Some((self.k_a as f64 * self.p_k.mean() / columns as f64).min(0.5));
        }
        if p.signal_var.is_none() {
            let energy = self.power_plan(self.ebn0_data_db).preamble_amplitude(self.n_p).powi(2);
            let per_path = match self.fading {
                FadingMode::UnitGain => 1.0,
                FadingMode::Rayleigh => {
                    let v = self.p_k.values();
                    v.iter().map(|&k| 1.0 / k as f64).sum::<f64>() / v.len() as f64
                }
            };
            p.signal_var = Some(energy * per_path);
        }
        if p.gain.is_none() {
            p.gain = Some(self.power_plan(self.ebn0_data_db).preamble_amplitude(self.n_p));
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let layout = self.layout();
        if self.m_p * self.big_n_p != self.n_p {
            return Err(Error::Config(format!(
                "M_p * N_p = {} differs from n_p = {}",
                self.m_p * self.big_n_p,
                self.n_p
            )));
        }
        layout.validate()?;
        if self.b_p == 0 || self.b_p > 24 {
            return Err(Error::Config(format!("b_p = {} outside 1..=24", self.b_p)));
        }
        self.polar_spec()?;
        if self.data_phase && self.data_slots() > layout.n_c() {
            return Err(Error::Padding {
                symbols: self.data_slots(),
                slots: layout.n_c(),
            });
        }
        let cells = layout.shift_grid().len();
        if self.p_k.values().is_empty() || self.p_k.values().iter().any(|&k| k == 0 || k > cells) {
            return Err(Error::Config(format!(
                "P_k values must lie in 1..={cells}"
            )));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Config(format!("sigma2 = {} must be finite and >= 0", self.sigma2)));
        }
        if self.k_a == 0 && self.sweep.k_a.is_empty() {
            return Err(Error::Config("K_a must be positive".into()));
        }
        if !self.ideal_phase1 && self.amp.denoiser == Denoiser::KnownGain && self.fading != FadingMode::UnitGain {
            return Err(Error::Config(
                "known-gain denoiser requires unit-gain fading; set amp.denoiser".into(),
            ));
        }
        if let Some(b) = &self.sweep.bisect {
            if !(b.lo_db < b.hi_db) || !(b.tolerance_db > 0.0) || !(0.0..1.0).contains(&b.target_pupe) {
                return Err(Error::Config("bisect needs lo_db < hi_db, tolerance_db > 0, 0 <= target < 1".into()));
            }
        }
        Ok(())
    }

    /// Short stable digest of the resolved configuration.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Sets `a.b.c = value` in a TOML table. The value is parsed as TOML if
/// possible (numbers, booleans, arrays) and taken as a string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_consistent() {
        let c = SystemConfig::default();
        c.validate().unwrap();
        assert_eq!(c.layout().frame_len(), 15366);
        assert_eq!(c.layout().alpha().unwrap(), 23);
        assert_eq!(c.polar_spec().unwrap().info_len(), 105);
    }

    #[test]
    fn toml_round_trip_and_names() {
        let text = r#"
            K_a = 25
            M_p = 40
            N_p = 16
            P_k = [1, 2]
            fading = "rayleigh"
            [polar]
            list_size = 256
            genie = true
            [amp]
            denoiser = "bernoulli-gaussian"
        "#;
        let c = SystemConfig::from_toml_str(text).unwrap();
        assert_eq!(c.k_a, 25);
        assert_eq!(c.p_k, PathCount::Choice(vec![1, 2]));
        assert_eq!(c.fading, FadingMode::Rayleigh);
        assert_eq!(c.polar.list_size, 256);
        assert!(c.polar.genie);
        let back = SystemConfig::from_toml_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.config_hash(), c.config_hash());
        assert!(SystemConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn inconsistent_grids_rejected() {
        assert!(SystemConfig::from_toml_str("n_p = 600").is_err());
        assert!(SystemConfig::from_toml_str("N_c = 127").is_err());
        assert!(SystemConfig::from_toml_str("P_k = 17").is_err());
        assert!(SystemConfig::from_toml_str("[polar]\ncrc_len = 8").is_err());
    }

    #[test]
    fn dotted_overrides() {
        let c = SystemConfig::from_toml_with_overrides(
            "K_a = 10",
            &[
                "polar.list_size=4".into(),
                "K_a = 30".into(),
                "fading=rayleigh".into(),
                "amp.denoiser=\"bernoulli-gaussian\"".into(),
                "sweep.K_a=[10,20]".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.polar.list_size, 4);
        assert_eq!(c.k_a, 30);
        assert_eq!(c.fading, FadingMode::Rayleigh);
        assert_eq!(c.sweep.k_a, vec![10, 20]);
        assert!(SystemConfig::from_toml_with_overrides("", &["fading=rayleigh".into()]).is_err());
        assert!(SystemConfig::from_toml_with_overrides("", &["K_a".into()]).is_err());
        assert!(SystemConfig::from_toml_with_overrides("", &["K_a.x=1".into()]).is_err());
        let d = c.with_overrides(&["seed=9".into()]).unwrap();
        assert_eq!(d.seed, 9);
        assert_ne!(d.config_hash(), c.config_hash());
    }

    #[test]
    fn overall_ebn0_formula() {
        assert!((overall_ebn0(11, 89, 4.0, 4.0) - 4.0).abs() < 1e-12);
        assert!((overall_ebn0(30, 70, 2.5, 2.5) - 2.5).abs() < 1e-12);
        let direct = 10.0 * ((11.0 * 10f64.powf(0.4) + 89.0 * 10.0) / 100.0).log10();
        let v = overall_ebn0(11, 89, 4.0, 10.0);
        assert!((v - direct).abs() < 1e-12);
        assert!((v - 9.626_680).abs() < 1e-5, "{v}");
    }
}
