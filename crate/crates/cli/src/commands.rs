use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use mnemonics::exemplar::exemplar_drift;
use mnemonics::model::checkpoint;
use mnemonics::protocol::{prepare_stream, ExperimentConfig, PhaseResults, Strategy};
use mnemonics::verify::{run_suite, SuiteSize};
use mnemonics::Classifier;

use crate::artifacts::{self, load_config, phase_dir, resolve_out, run_one, seed_dir};
use crate::error::{CliError, CliResult};

fn config_name(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
}

pub fn run(config_path: &Path, seeds: &[u64], out: Option<PathBuf>) -> CliResult<()> {
    let config = load_config(config_path)?;
    let out = resolve_out(out, &config_name(config_path));
    let seeds = if seeds.is_empty() {
        vec![config.seed]
    } else {
        seeds.to_vec()
    };
    fs::create_dir_all(&out)?;
    artifacts::write_manifest(&out, config_path, &seeds, &config)?;
    for &seed in &seeds {
        let mut c = config.clone();
        c.seed = seed;
        let results = run_one(&c, &seed_dir(&out, seed))?;
        println!(
            "seed {seed}: average accuracy {:.4}, forgetting {:.4}",
            results.summary.average_accuracy, results.summary.forgetting_rate
        );
    }
    println!("results in {}", out.display());
    Ok(())
}

pub fn gradcheck(size: &str, eps: f64) -> CliResult<()> {
    let size = SuiteSize::parse(size).ok_or_else(|| CliError::Usage(format!("unknown suite size `{size}`")))?;
    let reports = run_suite(size, eps)?;
    for r in &reports {
        println!(
            "{:<36} max rel err {:.3e}  threshold {:.0e}  {}",
            r.name,
            r.max_rel_error,
            r.threshold,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    if let Some(bad) = reports.iter().find(|r| !r.passed()) {
        return Err(CliError::Gradcheck(format!(
            "{}: max rel err {:e} at coordinate {} ({})",
            bad.name, bad.max_rel_error, bad.worst_index, bad.case
        )));
    }
    Ok(())
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn compare(config_path: &Path, strategies: &str, seeds: usize, out: Option<PathBuf>, jobs: usize) -> CliResult<()> {
    let strategies = strategies
        .split(',')
        .map(|s| Strategy::parse(s).ok_or_else(|| CliError::Usage(format!("unknown strategy `{s}`"))))
        .collect::<CliResult<Vec<_>>>()?;
    if strategies.len() < 2 {
        return Err(CliError::Usage("compare needs at least two strategies".into()));
    }
    if seeds == 0 {
        return Err(CliError::Usage("compare needs at least one seed".into()));
    }
    let config = load_config(config_path)?;
    let out = resolve_out(out, &format!("{}-compare", config_name(config_path)));
    fs::create_dir_all(&out)?;
    let seed_list: Vec<u64> = (0..seeds as u64).map(|k| config.seed + k).collect();
    artifacts::write_manifest(&out, config_path, &seed_list, &config)?;

    let cells: Vec<(Strategy, u64)> = strategies
        .iter()
        .flat_map(|&s| seed_list.iter().map(move |&seed| (s, seed)))
        .collect();
    let results: Mutex<Vec<Option<CliResult<PhaseResults>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(strategy, seed)) = cells.get(i) else { break };
                let mut c = config.clone();
                c.strategy = strategy;
                c.seed = seed;
                let r = run_one(&c, &seed_dir(&out.join(strategy.name()), seed));
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let results: Vec<PhaseResults> = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect::<CliResult<_>>()?;

    let mut table = String::from("strategy,runs,accuracy_mean,accuracy_std,forgetting_mean,forgetting_std\n");
    println!(
        "{:<12} {:>5} {:>20} {:>20}",
        "strategy", "runs", "average accuracy", "forgetting"
    );
    for (k, s) in strategies.iter().enumerate() {
        let block = &results[k * seeds..(k + 1) * seeds];
        let acc: Vec<f64> = block.iter().map(|r| r.summary.average_accuracy).collect();
        let fr: Vec<f64> = block.iter().map(|r| r.summary.forgetting_rate).collect();
        let ((am, asd), (fm, fsd)) = (mean_std(&acc), mean_std(&fr));
        println!(
            "{:<12} {:>5} {:>11.4} ± {:<6.4} {:>11.4} ± {:<6.4}",
            s.name(),
            seeds,
            am,
            asd,
            fm,
            fsd
        );
        table.push_str(&format!("{},{seeds},{am},{asd},{fm},{fsd}\n", s.name()));
    }
    fs::write(out.join("compare.csv"), table)?;
    println!("results in {}", out.display());
    Ok(())
}

/// Embeddings of the phase's training rows and of the stored exemplars,
/// plus per-class drift and the drift curve of the mnemonics training.
pub fn dump_embeddings(run_dir: &Path, phase: usize) -> CliResult<()> {
    let snapshot = run_dir.join(artifacts::SNAPSHOT);
    if !snapshot.is_file() {
        return Err(CliError::MissingArtifact(snapshot.display().to_string()));
    }
    let pd = phase_dir(run_dir, phase);
    let model_path = pd.join(artifacts::MODEL);
    if !model_path.is_file() {
        return Err(CliError::MissingArtifact(format!(
            "phase {phase}: {}",
            model_path.display()
        )));
    }
    let config = ExperimentConfig::load(&snapshot)?;
    let model: Classifier = checkpoint::load(&model_path)?;
    let memory = artifacts::read_exemplars(&pd.join(artifacts::EXEMPLARS))?;
    let records_text = fs::read_to_string(run_dir.join(artifacts::RECORDS))
        .map_err(|_| CliError::MissingArtifact(run_dir.join(artifacts::RECORDS).display().to_string()))?;
    let records = PhaseResults::read_jsonl(&records_text)?;

    let stream = prepare_stream(&config)?;
    if phase >= stream.num_phases() {
        return Err(CliError::MissingArtifact(format!(
            "phase {phase} of {}",
            stream.num_phases()
        )));
    }
    let order = stream.class_order();
    let train = stream
        .phase(phase)
        .train
        .relabel(|c| order.iter().position(|&o| o == c))?;

    let dump_dir = run_dir.join("embeddings");
    fs::create_dir_all(&dump_dir)?;
    let feats = model.features(train.features())?;
    let mut w = csv::Writer::from_path(dump_dir.join(format!("phase-{phase}.csv"))).map_err(csv_err)?;
    let mut header = vec!["id".to_string(), "class".into(), "role".into()];
    header.extend((0..feats.cols()).map(|j| format!("h{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for (r, &y) in train.labels().iter().enumerate() {
        let mut rec = vec![r.to_string(), y.to_string(), "data".to_string()];
        rec.extend(feats.row(r).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    for (class, e) in memory.iter() {
        let mut roles = vec![("exemplar", &e.current)];
        if e.origin == mnemonics::exemplar::Origin::Mnemonics {
            roles.push(("exemplar-init", &e.init));
        }
        for (role, rows) in roles {
            let f = model.features(rows)?;
            for (slot, row) in f.iter_rows().enumerate() {
                let mut rec = vec![slot.to_string(), class.to_string(), role.to_string()];
                rec.extend(row.iter().map(|v| v.to_string()));
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
    }
    w.flush()?;

    let mut drift = String::from("class,cosine,euclidean\n");
    for (class, d) in exemplar_drift(&memory) {
        drift.push_str(&format!("{class},{},{}\n", d.cosine, d.euclidean));
    }
    fs::write(dump_dir.join(format!("drift-phase-{phase}.csv")), drift)?;

    let mut curve = String::from("epoch,mean_euclidean\n");
    if let Some(rec) = records.records.get(phase) {
        for (epoch, d) in rec.mnemonics_drift.iter().enumerate() {
            curve.push_str(&format!("{},{d}\n", epoch + 1));
        }
    }
    fs::write(dump_dir.join(format!("drift-curve-phase-{phase}.csv")), curve)?;
    println!("wrote {}", dump_dir.display());
    Ok(())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_standard_deviation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
    }
}
