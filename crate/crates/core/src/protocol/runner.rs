use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{
    generate_gaussian_stream, load_dataset, partition_stream, GaussianMixtureSpec, LabeledDataset, PhaseStream,
};
use crate::error::{Error, Result};
use crate::exemplar::{
    adjust_old_exemplars, exemplar_drift, fine_tune_balanced, select_herding, select_random_indices, train_mnemonics,
    ExemplarSet, Origin,
};
use crate::model::{model_level_update, train_direct, ClassifierParams, TransferParams};

use super::config::{DataConfig, ExperimentConfig, Strategy};
use super::results::{PhaseRecord, PhaseResults};
use super::schedule::enforce_memory_budget;
use super::seeds::{derive_seed, Purpose};

/// Everything a run produces. Models and memories are indexed by phase.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub results: PhaseResults,
    pub models: Vec<ClassifierParams<f64>>,
    pub memories: Vec<ExemplarSet<f64>>,
    /// Stream class id for each model-output index.
    pub class_order: Vec<usize>,
    /// Seconds spent per phase. Kept apart from the records so that those
    /// stay byte-identical across reruns.
    pub timings: Vec<f64>,
}

/// Builds the phase stream described by the config's data section.
pub fn prepare_stream(config: &ExperimentConfig) -> Result<PhaseStream<f64>> {
    let schedule = config.phase_schedule()?;
    let seed = derive_seed(config.seed, 0, Purpose::Data);
    match &config.data {
        DataConfig::Ring {
            radius,
            variance,
            train_per_class,
            test_per_class,
            drift,
        } => {
            let spec = GaussianMixtureSpec::ring(
                schedule.total_classes,
                *radius,
                *variance,
                *train_per_class,
                *test_per_class,
                *drift,
            );
            generate_gaussian_stream(&spec, &schedule, seed)
        }
        DataConfig::Csv { path, test_fraction } => {
            let ds = load_dataset(path)?;
            partition_stream(&ds, &schedule, *test_fraction, seed)
        }
    }
}

/// Fraction of rows the model labels correctly; 0 on an empty set.
pub fn accuracy(model: &ClassifierParams<f64>, ds: &LabeledDataset<f64>) -> Result<f64> {
    if ds.is_empty() {
        log::warn!("accuracy requested on an empty test set");
        return Ok(0.0);
    }
    let pred = model.predict(ds.features())?;
    let hits = pred.iter().zip(ds.labels()).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / ds.len() as f64)
}

/// Model-level training for one phase. Phase 0 trains from a seeded random
/// init with the classification loss; later phases grow the previous head
/// and train on `data` (memory plus new rows) with the configured
/// parameterisation and loss. Depends on the strategy only through the
/// data it is given.
pub fn train_phase_model(
    config: &ExperimentConfig,
    phase: usize,
    previous: Option<&ClassifierParams<f64>>,
    data: &LabeledDataset<f64>,
) -> Result<(ClassifierParams<f64>, Vec<f64>)> {
    let schedule = config.phase_schedule()?;
    let seen = schedule.classes_through(phase);
    match previous {
        None => {
            let mut widths = vec![data.width()];
            widths.extend(&config.model.hidden);
            widths.push(seen);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, phase, Purpose::ModelInit));
            let init = ClassifierParams::init(&widths, config.model.activation, &mut rng)?;
            train_direct(&init, None, data.features(), data.labels(), None, config.base_training)
        }
        Some(prev) => {
            let extra = seen.checked_sub(prev.num_classes()).ok_or_else(|| {
                Error::Argument(format!(
                    "previous model has {} classes, phase sees {seen}",
                    prev.num_classes()
                ))
            })?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, phase, Purpose::HeadInit));
            let base = prev.grow_head(extra, config.model.head_init_std, &mut rng);
            let weights = config.use_distillation.then_some(config.loss);
            let (x, y) = (data.features(), data.labels());
            if config.use_transfer {
                let up = model_level_update(
                    &base,
                    &TransferParams::identity(&base),
                    prev,
                    x,
                    y,
                    weights,
                    config.model_training,
                )?;
                Ok((up.materialize()?, up.loss_trace))
            } else {
                train_direct(&base, Some(prev), x, y, weights, config.model_training)
            }
        }
    }
}

/// Exemplars for the classes introduced in `phase`, before any mnemonics
/// training: random rows (also the mnemonics initialisation) or herding on
/// the model's features.
pub fn initial_exemplars(
    config: &ExperimentConfig,
    phase: usize,
    model: &ClassifierParams<f64>,
    train: &LabeledDataset<f64>,
    quota: usize,
) -> Result<ExemplarSet<f64>> {
    let mut set = ExemplarSet::new(train.width());
    for &c in train.class_ids() {
        let rows = train.class_features(c);
        let m = quota.min(rows.rows());
        if m < quota {
            log::warn!(
                "class {c} has only {} training rows for a quota of {quota}",
                rows.rows()
            );
        }
        let (idx, origin) = match config.strategy {
            Strategy::Herding => (select_herding(&model.features(&rows)?, m)?, Origin::Herding),
            Strategy::Random => (random_rows(config, phase, c, rows.rows(), m)?, Origin::Random),
            Strategy::Mnemonics => (random_rows(config, phase, c, rows.rows(), m)?, Origin::Mnemonics),
            Strategy::UpperBound => return Err(Error::Argument("the upper bound keeps no exemplars".into())),
        };
        set.insert(c, rows.select_rows(&idx), origin)?;
    }
    Ok(set)
}

fn random_rows(config: &ExperimentConfig, phase: usize, class: usize, rows: usize, m: usize) -> Result<Vec<usize>> {
    select_random_indices(
        rows,
        m,
        derive_seed(config.seed, phase, Purpose::ExemplarInit { class }),
    )
}

fn memory_dataset(memory: &ExemplarSet<f64>) -> Result<LabeledDataset<f64>> {
    let (x, y) = memory.stacked();
    LabeledDataset::new(x, y)
}

/// Runs every phase of `stream` under `config`.
pub fn run_mcil(config: &ExperimentConfig, stream: &PhaseStream<f64>) -> Result<RunOutput> {
    config.validate()?;
    let schedule = config.phase_schedule()?;
    if stream.num_phases() != schedule.num_phases()
        || stream
            .phases()
            .iter()
            .zip(&schedule.classes_per_phase)
            .any(|(p, &n)| p.classes.len() != n)
    {
        return Err(Error::Schedule(format!(
            "stream phases {:?} do not match schedule {:?}",
            stream.phases().iter().map(|p| p.classes.len()).collect::<Vec<_>>(),
            schedule.classes_per_phase
        )));
    }
    let class_order = stream.class_order();
    let index: BTreeMap<usize, usize> = class_order.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    let relabel = |ds: &LabeledDataset<f64>| ds.relabel(|c| index.get(&c).copied());

    let mut memory = ExemplarSet::new(stream.width());
    let mut previous: Option<ClassifierParams<f64>> = None;
    let mut out = RunOutput {
        results: PhaseResults::new(Vec::new(), config.seed, config.strategy.name()),
        models: Vec::new(),
        memories: Vec::new(),
        class_order: class_order.clone(),
        timings: Vec::new(),
    };
    let mut records = Vec::new();
    for i in 0..schedule.num_phases() {
        let start = Instant::now();
        let step = || -> Result<(PhaseRecord, ClassifierParams<f64>, ExemplarSet<f64>)> {
            let train_i = relabel(&stream.phase(i).train)?;
            let data = if i == 0 {
                train_i.clone()
            } else if config.strategy == Strategy::UpperBound {
                relabel(&stream.cumulative_train(i)?)?
            } else {
                LabeledDataset::concat(&[&memory_dataset(&memory)?, &train_i])?
            };
            let (mut model, model_loss) = train_phase_model(config, i, previous.as_ref(), &data)?;

            let seen = schedule.classes_through(i);
            let mut record = PhaseRecord {
                phase: i,
                classes_seen: seen,
                accuracy: 0.0,
                accuracy_initial: 0.0,
                exemplar_counts: BTreeMap::new(),
                exemplar_drift: BTreeMap::new(),
                model_loss,
                mnemonics_loss: Vec::new(),
                mnemonics_drift: Vec::new(),
                adjust_loss: Vec::new(),
                fine_tune_loss: Vec::new(),
            };

            let mut next_memory = ExemplarSet::new(stream.width());
            if config.strategy != Strategy::UpperBound {
                let quota = config.budget.quota(seen)?;
                let mut new = initial_exemplars(config, i, &model, &train_i, quota)?;
                if config.strategy == Strategy::Mnemonics {
                    let run = train_mnemonics(&new, train_i.features(), train_i.labels(), &model, &config.exemplar)?;
                    new = run.exemplars;
                    record.mnemonics_loss = run.loss_trace;
                    record.mnemonics_drift = run.drift_trace;
                }
                let mut old = memory.clone();
                if i > 0 && config.strategy == Strategy::Mnemonics && config.adjust_old {
                    let adj = adjust_old_exemplars(
                        &old,
                        &model,
                        &config.exemplar,
                        derive_seed(config.seed, i, Purpose::Partition),
                    )?;
                    old = adj.exemplars;
                    record.adjust_loss = adj.loss_traces;
                }
                old.extend(new)?;
                next_memory =
                    enforce_memory_budget(&old, config.budget, derive_seed(config.seed, i, Purpose::Discard))?;
                if config.fine_tune && i > 0 {
                    let (tuned, trace) = fine_tune_balanced(&model, &next_memory, config.fine_tuning_schedule())?;
                    model = tuned;
                    record.fine_tune_loss = trace;
                }
                record.exemplar_counts = next_memory.iter().map(|(c, e)| (c, e.current.rows())).collect();
                record.exemplar_drift = exemplar_drift(&next_memory);
            }
            record.accuracy = accuracy(&model, &relabel(&stream.cumulative_test(i)?)?)?;
            record.accuracy_initial = accuracy(&model, &relabel(&stream.initial_test(i)?)?)?;
            Ok((record, model, next_memory))
        };
        let (record, model, next_memory) = step().map_err(|e| e.in_phase(i))?;
        log::info!(
            "phase {i}: {} classes, accuracy {:.4}, initial-class accuracy {:.4}",
            record.classes_seen,
            record.accuracy,
            record.accuracy_initial
        );
        records.push(record);
        out.models.push(model.clone());
        out.memories.push(next_memory.clone());
        out.timings.push(start.elapsed().as_secs_f64());
        memory = next_memory;
        previous = Some(model);
    }
    out.results = PhaseResults::new(records, config.seed, config.strategy.name());
    Ok(out)
}
