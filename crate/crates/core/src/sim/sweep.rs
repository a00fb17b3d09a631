//! Sweeps over `K_a` and data-phase Eb/N0, aggregation, and checkpoints.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::config::SystemConfig;
use crate::sim::stats::{bisect_threshold, wilson_interval};
use crate::sim::trial::{Simulator, TrialReport};

/// Running totals over trials of one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub trials: usize,
    pub users: usize,
    pub misses: usize,
    /// `None` once any trial lacked a data phase.
    pub pupe_errors: Option<usize>,
    pub undetected_errors: usize,
}

impl Tally {
    pub fn new() -> Self {
        Self {
            pupe_errors: Some(0),
            ..Self::default()
        }
    }

    pub fn add(&mut self, r: &TrialReport) {
        self.trials += 1;
        self.users += r.k_a;
        self.misses += r.misses;
        self.pupe_errors = match (self.pupe_errors, r.pupe_errors) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        self.undetected_errors += r.undetected_errors;
    }
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub config_hash: String,
    #[serde(rename = "K_a")]
    pub k_a: usize,
    pub ebn0_data_db: f64,
    pub ebn0_overall_db: f64,
    pub trials: usize,
    pub miss_rate: f64,
    pub miss_ci_lo: f64,
    pub miss_ci_hi: f64,
    pub pupe: Option<f64>,
    pub pupe_ci_lo: Option<f64>,
    pub pupe_ci_hi: Option<f64>,
    pub undetected_errors: usize,
}

/// Fewer trials than this and the point is flagged.
pub const MIN_TRIALS_FOR_CI: usize = 30;

pub fn summarize(config: &SystemConfig, config_hash: &str, tally: &Tally) -> ResultRow {
    let users = tally.users.max(1);
    let (miss_lo, miss_hi) = wilson_interval(tally.misses, tally.users);
    let pupe = tally.pupe_errors.map(|e| e as f64 / users as f64);
    let ci = tally.pupe_errors.map(|e| wilson_interval(e, tally.users));
    ResultRow {
        config_hash: config_hash.to_string(),
        k_a: config.k_a,
        ebn0_data_db: config.ebn0_data_db,
        ebn0_overall_db: config.overall_ebn0_db(config.ebn0_data_db),
        trials: tally.trials,
        miss_rate: tally.misses as f64 / users as f64,
        miss_ci_lo: miss_lo,
        miss_ci_hi: miss_hi,
        pupe,
        pupe_ci_lo: ci.map(|c| c.0),
        pupe_ci_hi: ci.map(|c| c.1),
        undetected_errors: tally.undetected_errors,
    }
}

/// Runs trials `start..start+count` in parallel; reports come back in trial
/// order.
pub fn run_trials(sim: &Simulator, start: u64, count: usize) -> Result<Vec<TrialReport>> {
    (start..start + count as u64)
        .into_par_iter()
        .map(|t| sim.run_trial(t))
        .collect()
}

/// Partial progress of a sweep, written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub completed: Vec<ResultRow>,
    pub current: Option<PointProgress>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointProgress {
    #[serde(rename = "K_a")]
    pub k_a: usize,
    pub ebn0_data_db: f64,
    pub tally: Tally,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub checkpoint: Option<PathBuf>,
    /// Pick up a matching checkpoint if present.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisectionSummary {
    #[serde(rename = "K_a")]
    pub k_a: usize,
    pub target_pupe: f64,
    pub tolerance_db: f64,
    pub ebn0_data_db: Option<f64>,
    pub ebn0_overall_db: Option<f64>,
    pub evaluations: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config_hash: String,
    pub rows: Vec<ResultRow>,
    pub bisections: Vec<BisectionSummary>,
    pub warnings: Vec<String>,
}

struct Runner {
    sim: Simulator,
    hash: String,
    opts: SweepOptions,
    checkpoint: Checkpoint,
    warnings: Vec<String>,
}

impl Runner {
    fn new(config: &SystemConfig, opts: SweepOptions) -> Result<Self> {
        let hash = config.config_hash();
        let mut checkpoint = Checkpoint {
            config_hash: hash.clone(),
            completed: Vec::new(),
            current: None,
        };
        if opts.resume {
            if let Some(path) = &opts.checkpoint {
                if path.exists() {
                    let old: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)
                        .map_err(|e| Error::Config(format!("checkpoint {}: {e}", path.display())))?;
                    if old.config_hash == hash {
                        checkpoint = old;
                    }
                }
            }
        }
        Ok(Self {
            sim: Simulator::new(config)?,
            hash,
            opts,
            checkpoint,
            warnings: Vec::new(),
        })
    }

    fn save(&self) -> Result<()> {
        if let Some(path) = &self.opts.checkpoint {
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, serde_json::to_string_pretty(&self.checkpoint).expect("serializable"))?;
            std::fs::rename(&tmp, path)?;
        }
        Ok(())
    }

    fn point(&mut self, k_a: usize, ebn0_data_db: f64) -> Result<ResultRow> {
        if let Some(row) = self
            .checkpoint
            .completed
            .iter()
            .find(|r| r.k_a == k_a && r.ebn0_data_db == ebn0_data_db)
        {
            return Ok(row.clone());
        }
        self.sim.retarget(k_a, ebn0_data_db)?;
        let total = self.sim.config().trials;
        let mut tally = match &self.checkpoint.current {
            Some(p) if p.k_a == k_a && p.ebn0_data_db == ebn0_data_db => p.tally,
            _ => Tally::new(),
        };
        let every = match self.sim.config().checkpoint_every {
            0 => total.max(1),
            n => n,
        };
        while tally.trials < total {
            let chunk = every.min(total - tally.trials);
            for r in run_trials(&self.sim, tally.trials as u64, chunk)? {
                tally.add(&r);
            }
            self.checkpoint.current = Some(PointProgress { k_a, ebn0_data_db, tally });
            if self.sim.config().checkpoint_every > 0 {
                self.save()?;
            }
        }
        if tally.trials < MIN_TRIALS_FOR_CI {
            self.warnings.push(format!(
                "K_a={k_a} ebn0_data_db={ebn0_data_db}: only {} trials, confidence intervals unreliable",
                tally.trials
            ));
        }
        let row = summarize(self.sim.config(), &self.hash, &tally);
        self.checkpoint.completed.push(row.clone());
        self.checkpoint.current = None;
        self.save()?;
        Ok(row)
    }
}

/// Evaluates the configured grid. With `sweep.bisect` set, each `K_a` gets a
/// threshold search over the data-phase Eb/N0 instead of the Eb/N0 grid.
pub fn run_sweep(config: &SystemConfig, opts: SweepOptions) -> Result<SweepResult> {
    let k_values = if config.sweep.k_a.is_empty() {
        vec![config.k_a]
    } else {
        config.sweep.k_a.clone()
    };
    let e_values = if config.sweep.ebn0_data_db.is_empty() {
        vec![config.ebn0_data_db]
    } else {
        config.sweep.ebn0_data_db.clone()
    };
    let mut runner = Runner::new(config, opts)?;
    let mut rows = Vec::new();
    let mut bisections = Vec::new();
    for &k_a in &k_values {
        match &config.sweep.bisect {
            None => {
                for &e in &e_values {
                    rows.push(runner.point(k_a, e)?);
                }
            }
            Some(b) => {
                let mut evaluated = Vec::new();
                let result = bisect_threshold(
                    |e| {
                        let row = runner.point(k_a, e)?;
                        let pupe = row.pupe.ok_or_else(|| {
                            Error::Config("threshold search needs the data phase enabled".into())
                        })?;
                        evaluated.push(row);
                        Ok(pupe)
                    },
                    b.lo_db,
                    b.hi_db,
                    b.target_pupe,
                    b.tolerance_db,
                )?;
                evaluated.sort_by(|a, b| a.ebn0_data_db.total_cmp(&b.ebn0_data_db));
                rows.extend(evaluated);
                if result.threshold_db.is_none() {
                    runner.warnings.push(format!(
                        "K_a={k_a}: PUPE target {} not reached at {} dB",
                        b.target_pupe, b.hi_db
                    ));
                }
                bisections.push(BisectionSummary {
                    k_a,
                    target_pupe: b.target_pupe,
                    tolerance_db: b.tolerance_db,
                    ebn0_data_db: result.threshold_db,
                    ebn0_overall_db: result.threshold_db.map(|t| config.overall_ebn0_db(t)),
                    evaluations: result.evaluations,
                });
            }
        }
    }
    Ok(SweepResult {
        config_hash: runner.hash.clone(),
        rows,
        bisections,
        warnings: runner.warnings,
    })
}

/// Aggregates `config.trials` trials at the configured point.
pub fn run_point(config: &SystemConfig) -> Result<(ResultRow, Vec<TrialReport>)> {
    let sim = Simulator::new(config)?;
    run_point_with(&sim)
}

pub fn run_point_with(sim: &Simulator) -> Result<(ResultRow, Vec<TrialReport>)> {
    let reports = run_trials(sim, 0, sim.config().trials)?;
    let mut tally = Tally::new();
    for r in &reports {
        tally.add(r);
    }
    Ok((summarize(sim.config(), &sim.config().config_hash(), &tally), reports))
}

pub fn checkpoint_path_for(output: &Path) -> PathBuf {
    output.with_extension("checkpoint.json")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::{BisectConfig, PolarConfig};

    fn tiny() -> SystemConfig {
        SystemConfig {
            b_p: 5,
            b_c: 20,
            n_p: 32,
            m_p: 8,
            big_n_p: 4,
            m_c: 16,
            big_n_c: 16,
            tau_max: 2,
            nu_max: 1,
            polar: PolarConfig {
                block_len: 64,
                crc_len: 6,
                list_size: 4,
                genie: false,
            },
            ideal_phase1: true,
            k_a: 2,
            trials: 6,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn single_point_matches_manual_fold() {
        let cfg = tiny();
        let (row, reports) = run_point(&cfg).unwrap();
        assert_eq!(reports.len(), 6);
        let errs: usize = reports.iter().map(|r| r.pupe_errors.unwrap()).sum();
        assert_eq!(row.pupe, Some(errs as f64 / 12.0));
        let sweep = run_sweep(&cfg, SweepOptions { checkpoint: None, resume: false }).unwrap();
        assert_eq!(sweep.rows, vec![row]);
        assert!(!sweep.warnings.is_empty());
    }

    #[test]
    fn independent_of_worker_count() {
        let cfg = tiny();
        let sim = Simulator::new(&cfg).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| run_trials(&sim, 0, 6)).unwrap();
        let b = three.install(|| run_trials(&sim, 0, 6)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|r| r.trial).collect::<Vec<_>>(), (0..6).collect::<Vec<u64>>());
    }

    #[test]
    fn checkpoint_resume_reproduces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let cfg = SystemConfig {
            checkpoint_every: 2,
            sweep: crate::sim::config::SweepConfig {
                k_a: vec![1, 2],
                ebn0_data_db: vec![0.0, 5.0],
                bisect: None,
            },
            ..tiny()
        };
        let opts = SweepOptions { checkpoint: Some(path.clone()), resume: true };
        let first = run_sweep(&cfg, opts.clone()).unwrap();
        assert_eq!(first.rows.len(), 4);
        let saved: Checkpoint = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(saved.completed, first.rows);
        let again = run_sweep(&cfg, opts).unwrap();
        assert_eq!(again.rows, first.rows);
    }

    #[test]
    fn bisection_finds_threshold() {
        let cfg = SystemConfig {
            k_a: 1,
            trials: 10,
            sweep: crate::sim::config::SweepConfig {
                k_a: vec![],
                ebn0_data_db: vec![],
                bisect: Some(BisectConfig {
                    target_pupe: 0.05,
                    lo_db: -10.0,
                    hi_db: 20.0,
                    tolerance_db: 1.0,
                }),
            },
            ..tiny()
        };
        let r = run_sweep(&cfg, SweepOptions { checkpoint: None, resume: false }).unwrap();
        let b = &r.bisections[0];
        let t = b.ebn0_data_db.unwrap();
        assert!(t > -10.0 && t < 20.0);
        let at = r.rows.iter().find(|row| row.ebn0_data_db == t).unwrap();
        assert!(at.pupe.unwrap() <= 0.05);
        assert!((b.ebn0_overall_db.unwrap() - cfg.overall_ebn0_db(t)).abs() < 1e-12);
    }
}
