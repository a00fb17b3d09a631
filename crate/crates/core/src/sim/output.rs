//! Result files: a CSV of operating points plus a JSON sidecar.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::config::SystemConfig;
use crate::sim::sweep::{BisectionSummary, ResultRow, SweepResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    schema_version: u32,
    config_hash: &'a str,
    config: &'a SystemConfig,
    rows: &'a [ResultRow],
    bisections: &'a [BisectionSummary],
    warnings: &'a [String],
    insufficient_trials: bool,
}

pub fn write_csv<W: std::io::Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `path` (CSV) and its `.json` sidecar.
pub fn write_results(path: &Path, config: &SystemConfig, result: &SweepResult) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_csv(std::fs::File::create(path)?, &result.rows)?;
    let sidecar = Sidecar {
        schema_version: SCHEMA_VERSION,
        config_hash: &result.config_hash,
        config,
        rows: &result.rows,
        bisections: &result.bisections,
        warnings: &result.warnings,
        insufficient_trials: result
            .rows
            .iter()
            .any(|r| r.trials < crate::sim::sweep::MIN_TRIALS_FOR_CI),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("serializable");
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("csv: {e}")))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<ResultRow>, _>>()
        .map_err(|e| Error::Config(format!("csv: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_round_trip() {
        let row = ResultRow {
            config_hash: "abcd".into(),
            k_a: 3,
            ebn0_data_db: 1.5,
            ebn0_overall_db: 2.0,
            trials: 10,
            miss_rate: 0.1,
            miss_ci_lo: 0.05,
            miss_ci_hi: 0.2,
            pupe: None,
            pupe_ci_lo: None,
            pupe_ci_hi: None,
            undetected_errors: 0,
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, std::slice::from_ref(&row)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "config_hash,K_a,ebn0_data_db,ebn0_overall_db,trials,miss_rate,miss_ci_lo,miss_ci_hi,pupe,pupe_ci_lo,pupe_ci_hi,undetected_errors"
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let result = SweepResult {
            config_hash: "abcd".into(),
            rows: vec![row.clone()],
            bisections: vec![],
            warnings: vec!["w".into()],
        };
        write_results(&path, &SystemConfig::default(), &result).unwrap();
        assert_eq!(read_csv(&path).unwrap(), vec![row]);
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(side["schema_version"], 1);
        assert_eq!(side["insufficient_trials"], true);
        assert_eq!(side["config"]["K_a"], 50);
    }
}
