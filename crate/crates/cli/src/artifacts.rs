//! Files a run leaves behind and how to read them back.
//!
//! ```text
//! <out>/manifest.json
//! <out>/seed-<s>/config.resolved.toml
//! <out>/seed-<s>/records.jsonl
//! <out>/seed-<s>/timings.json
//! <out>/seed-<s>/phase-<i>/model.txt
//! <out>/seed-<s>/phase-<i>/exemplars.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use mnemonics::diffcore::DenseTensor;
use mnemonics::exemplar::Origin;
use mnemonics::model::checkpoint;
use mnemonics::protocol::{prepare_stream, run_mcil, DataConfig, ExperimentConfig, PhaseResults};
use mnemonics::{Error, Exemplars};
use serde_json::json;

use crate::error::{CliError, CliResult};

pub const OUT_ROOT_VAR: &str = "MNEMONICS_OUT_ROOT";
pub const SNAPSHOT: &str = "config.resolved.toml";
pub const RECORDS: &str = "records.jsonl";
pub const TIMINGS: &str = "timings.json";
pub const MODEL: &str = "model.txt";
pub const EXEMPLARS: &str = "exemplars.csv";

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

pub fn phase_dir(run_dir: &Path, phase: usize) -> PathBuf {
    run_dir.join(format!("phase-{phase}"))
}

/// `--out` if given, else `$MNEMONICS_OUT_ROOT/<name>`, else `runs/<name>`.
pub fn resolve_out(out: Option<PathBuf>, name: &str) -> PathBuf {
    out.unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(name)
    })
}

/// Parses and validates a config file. A relative CSV path is taken
/// relative to the config file and made absolute, so the resolved snapshot
/// works from anywhere.
pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
    let mut config = ExperimentConfig::from_toml(&text)?;
    if let DataConfig::Csv { path: data, .. } = &mut config.data {
        if data.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            let joined = base.join(&*data);
            *data = joined.canonicalize().unwrap_or(joined);
        }
    }
    Ok(config)
}

/// One CSV row per exemplar: current rows with role `exemplar`, then the
/// starting rows with role `exemplar-init`.
pub fn write_exemplars(set: &Exemplars, path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let mut header = vec!["class".to_string(), "slot".into(), "origin".into(), "role".into()];
    header.extend((0..set.width()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_io)?;
    for (class, e) in set.iter() {
        for (role, rows) in [("exemplar", &e.current), ("exemplar-init", &e.init)] {
            for (slot, row) in rows.iter_rows().enumerate() {
                let mut rec = vec![
                    class.to_string(),
                    slot.to_string(),
                    e.origin.name().to_string(),
                    role.to_string(),
                ];
                rec.extend(row.iter().map(|v| v.to_string()));
                w.write_record(&rec).map_err(csv_io)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_exemplars(path: &Path) -> CliResult<Exemplars> {
    let mut rdr = csv::Reader::from_path(path).map_err(|_| CliError::MissingArtifact(path.display().to_string()))?;
    let width = rdr.headers().map_err(csv_io)?.len().saturating_sub(4);
    let mut current: std::collections::BTreeMap<usize, (Origin, Vec<f64>, Vec<f64>)> = Default::default();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_io)?;
        let bad = |what: &str| Error::Parse {
            line: i + 2,
            message: format!("{}: {what}", path.display()),
        };
        let class: usize = rec[0].parse().map_err(|_| bad("class"))?;
        let origin = Origin::parse(&rec[2]).ok_or_else(|| bad("origin"))?;
        let values = rec
            .iter()
            .skip(4)
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad("feature"))?;
        let entry = current.entry(class).or_insert((origin, Vec::new(), Vec::new()));
        match &rec[3] {
            "exemplar" => entry.1.extend(values),
            "exemplar-init" => entry.2.extend(values),
            _ => return Err(bad("role").into()),
        }
    }
    let mut set = Exemplars::new(width);
    for (class, (origin, cur, init)) in current {
        let rows = cur.len() / width.max(1);
        set.insert(
            class,
            DenseTensor::new(vec![init.len() / width.max(1), width], init)?,
            origin,
        )?;
        set.update(class, DenseTensor::new(vec![rows, width], cur)?)?;
    }
    Ok(set)
}

fn csv_io(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e.to_string()))
}

/// Runs one seed and writes its directory. The snapshot is written first so
/// a failed run still records what was attempted.
pub fn run_one(config: &ExperimentConfig, dir: &Path) -> CliResult<PhaseResults> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SNAPSHOT), config.resolved().to_toml())?;
    let stream = prepare_stream(config)?;
    let out = run_mcil(config, &stream)?;
    fs::write(dir.join(RECORDS), out.results.to_jsonl())?;
    let timings = json!({ "seconds_per_phase": out.timings });
    fs::write(dir.join(TIMINGS), format!("{timings}\n"))?;
    for (i, (model, memory)) in out.models.iter().zip(&out.memories).enumerate() {
        let pd = phase_dir(dir, i);
        fs::create_dir_all(&pd)?;
        checkpoint::save(model, &pd.join(MODEL))?;
        write_exemplars(memory, &pd.join(EXEMPLARS))?;
    }
    Ok(out.results)
}

pub fn write_manifest(out: &Path, config_path: &Path, seeds: &[u64], snapshot: &ExperimentConfig) -> CliResult<()> {
    let manifest = json!({
        "config_path": config_path.display().to_string(),
        "seeds": seeds,
        "output_dir": out.display().to_string(),
        "resolved_config": snapshot.resolved().to_toml(),
    });
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("json") + "\n",
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exemplars_round_trip() {
        let mut set = Exemplars::new(2);
        set.insert(
            0,
            DenseTensor::matrix(2, 2, vec![0.1, -2.0, 1.0 / 3.0, 4.0]).unwrap(),
            Origin::Mnemonics,
        )
        .unwrap();
        set.update(0, DenseTensor::matrix(2, 2, vec![0.2, -2.5, 0.3, 4.25]).unwrap())
            .unwrap();
        set.insert(3, DenseTensor::matrix(1, 2, vec![7.0, 8.0]).unwrap(), Origin::Herding)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(EXEMPLARS);
        write_exemplars(&set, &path).unwrap();
        assert_eq!(read_exemplars(&path).unwrap(), set);
    }

    #[test]
    fn output_directory_precedence() {
        assert_eq!(resolve_out(Some("x".into()), "cfg"), PathBuf::from("x"));
        assert_eq!(seed_dir(Path::new("o"), 3), PathBuf::from("o/seed-3"));
        assert_eq!(phase_dir(Path::new("o"), 1), PathBuf::from("o/phase-1"));
    }
}
