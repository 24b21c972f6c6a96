//! Subcommand bodies. Each returns a [`Results`] document; `main` writes it
//! together with the tables derived from it.

use std::fs;
use std::path::Path;

use eegbench::datagen::{generate_recording, recording_jobs};
use eegbench::evaluation::{
    cross_frequency, dominant_prediction, loso, split_by_task, Predictions,
};
use eegbench::model::{save_checkpoint, ModelKind};
use eegbench::preprocess::{
    condition, segment_all, segment_whole, write_segment_set, zscore, SegmentSet, Split, SplitSets,
};
use eegbench::recording::{
    read_manifest, read_recording, write_recording, ManifestEntry, MANIFEST_FILE, RECORDING_EXT,
};
use eegbench::training::{fit, FitResult};
use eegbench::{Recording, TaskLabel};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::results::{
    blob_hash, tree_hash, write_atomic, write_json, Evaluation, Experiment, Results, RunLog,
    Skipped, SplitCount,
};

/// Conditioned recordings plus the identity of the files they came from.
pub struct Dataset {
    pub recordings: Vec<Recording>,
    pub rate: f64,
    pub channels: usize,
    /// `(file name, blob id)` for the manifest and every listed file.
    pub files: Vec<(String, String)>,
    pub hash: String,
}

/// Hashes and reads a dataset directory, conditioning each recording as it
/// is loaded so raw samples never accumulate in memory.
pub fn load_dataset(
    dir: &Path,
    cfg: &ExperimentConfig,
    keep: impl Fn(&ManifestEntry) -> bool + Sync,
) -> CliResult<Dataset> {
    let (files, hash) = load_dataset_hash(dir)?;
    let entries = read_manifest(dir)?;
    let recordings: Vec<Recording> = entries
        .par_iter()
        .filter(|e| keep(e))
        .map(|e| Ok(condition(&read_recording(&dir.join(&e.file))?, &cfg.prep)?))
        .collect::<CliResult<_>>()?;
    let first = recordings.first().ok_or_else(|| {
        CliError::Data(format!(
            "dataset {} holds no usable recordings",
            dir.display()
        ))
    })?;
    let (rate, channels) = (first.sample_rate, first.n_channels());
    if recordings
        .iter()
        .any(|r| r.sample_rate != rate || r.n_channels() != channels)
    {
        return Err(CliError::Data(
            "recordings disagree on sampling rate or channel count".into(),
        ));
    }
    Ok(Dataset {
        recordings,
        rate,
        channels,
        files,
        hash,
    })
}

/// Blob ids of the manifest and every file it lists, and their tree id.
pub fn load_dataset_hash(dir: &Path) -> CliResult<(Vec<(String, String)>, String)> {
    let entries = read_manifest(dir)?;
    let mut files: Vec<(String, String)> = entries
        .par_iter()
        .map(|e| Ok((e.file.clone(), blob_hash(&fs::read(dir.join(&e.file))?))))
        .collect::<CliResult<_>>()?;
    files.push((
        MANIFEST_FILE.into(),
        blob_hash(&fs::read(dir.join(MANIFEST_FILE))?),
    ));
    let hash = tree_hash(&files);
    Ok((files, hash))
}

pub fn in_distribution(e: &ManifestEntry) -> bool {
    !matches!(e.task_label, TaskLabel::Ood(_))
}

/// Every `(architecture, seed)` pair of the configuration.
fn jobs(cfg: &ExperimentConfig) -> Vec<(ModelKind, u64)> {
    cfg.model_kinds()
        .into_iter()
        .flat_map(|k| cfg.run_seeds().into_iter().map(move |s| (k, s)))
        .collect()
}

#[derive(Serialize)]
struct JobRecord<'a> {
    evaluations: &'a [Evaluation],
    run: &'a RunLog,
}

/// Writes one finished job's output under `jobs/`.
fn record_job(out: &Path, evaluations: &[Evaluation], run: &RunLog) -> CliResult<()> {
    let unit = run
        .unit
        .as_deref()
        .map_or(String::new(), |u| format!("_{}", u.replace('/', "-")));
    let name = format!(
        "{}_{}_w{}_seed{}{unit}.json",
        run.experiment.as_str(),
        run.model,
        run.window_s,
        run.seed
    );
    write_json(
        &out.join("jobs").join(name),
        &JobRecord { evaluations, run },
    )
}

fn fit_job(
    cfg: &ExperimentConfig,
    kind: ModelKind,
    seed: u64,
    channels: usize,
    sets: &SplitSets,
) -> CliResult<FitResult> {
    let spec = cfg.spec_for(kind, channels);
    let fitted = fit(&spec, &sets.train, &sets.val, &cfg.train, seed)?;
    Ok(fitted)
}

fn evaluation(
    experiment: Experiment,
    kind: ModelKind,
    seed: u64,
    set: &SegmentSet,
    predictions: Predictions,
) -> Evaluation {
    Evaluation {
        experiment,
        model: kind,
        seed,
        window_s: set.window_seconds,
        rate: set.sample_rate,
        unit: None,
        task: None,
        control: false,
        predictions,
    }
}

fn run_log(experiment: Experiment, fitted: &FitResult, kind: ModelKind, window_s: f64) -> RunLog {
    RunLog {
        experiment,
        model: kind,
        seed: fitted.seed,
        window_s,
        unit: None,
        history: fitted.history.clone(),
    }
}

fn non_empty(sets: &SplitSets, what: &str) -> CliResult<()> {
    for (name, set) in [
        ("train", &sets.train),
        ("val", &sets.val),
        ("test", &sets.test),
    ] {
        if set.is_empty() {
            return Err(CliError::Data(format!(
                "{what}: the {name} split holds no windows; use longer recordings or a shorter window"
            )));
        }
    }
    Ok(())
}

fn progress(experiment: Experiment, kind: ModelKind, seed: u64, detail: &str) {
    eprintln!("[{}] {kind} seed {seed}: {detail}", experiment.as_str());
}

pub fn synth(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Results> {
    cfg.synth.validate()?;
    fs::create_dir_all(dir)?;
    let entries: Vec<ManifestEntry> = recording_jobs(&cfg.synth)
        .par_iter()
        .map(|job| {
            let rec = generate_recording(&cfg.synth, cfg.seed, job)?;
            let file = format!("{}.{RECORDING_EXT}", rec.key());
            write_recording(&dir.join(&file), &rec)?;
            Ok(ManifestEntry {
                file,
                subject_id: rec.subject_id.clone(),
                session: rec.session.clone(),
                task_label: rec.task_label.clone(),
                sample_rate: rec.sample_rate,
                n_channels: rec.n_channels(),
                n_samples: rec.n_samples(),
            })
        })
        .collect::<CliResult<_>>()?;
    let mut manifest = Vec::new();
    for e in &entries {
        serde_json::to_writer(&mut manifest, e)?;
        manifest.push(b'\n');
    }
    write_atomic(&dir.join(MANIFEST_FILE), &manifest)?;
    eprintln!(
        "[synth] wrote {} recordings to {}",
        entries.len(),
        dir.display()
    );
    Results::new("synth", cfg)
}

fn split_count(name: &str, set: &SegmentSet) -> SplitCount {
    let per_task = split_by_task(set)
        .into_iter()
        .map(|(t, s)| (t, s.len()))
        .collect();
    SplitCount {
        split: name.into(),
        n_segments: set.len(),
        window_len: set.segment_shape().map_or(0, |s| s[1]),
        per_task,
    }
}

pub fn prep(cfg: &ExperimentConfig, data: &Dataset, out: &Path) -> CliResult<Results> {
    let sets = segment_all(&data.recordings, &cfg.prep)?;
    let mut results = Results::new("prep", cfg)?;
    for (name, set) in [
        ("train", &sets.train),
        ("val", &sets.val),
        ("test", &sets.test),
    ] {
        write_segment_set(&out.join("segments"), name, set)?;
        results.segments.push(split_count(name, set));
        results.warnings.extend(set.warnings.iter().cloned());
    }
    Ok(results)
}

pub fn train(cfg: &ExperimentConfig, data: &Dataset, out: &Path) -> CliResult<Results> {
    let sets = segment_all(&data.recordings, &cfg.prep)?;
    non_empty(&sets, "train")?;
    let exp = Experiment::Train;
    let outcomes = jobs(cfg)
        .par_iter()
        .map(|&(kind, seed)| {
            let fitted = fit_job(cfg, kind, seed, data.channels, &sets)?;
            let predictions =
                Predictions::from_model(&fitted.model, &sets.test, cfg.train.batch_size)?;
            progress(
                exp,
                kind,
                seed,
                &format!("test accuracy {:.4}", predictions.accuracy()),
            );
            save_checkpoint(
                &out.join("checkpoints").join(format!("{kind}_seed{seed}")),
                &fitted.model,
            )?;
            let evals = vec![evaluation(exp, kind, seed, &sets.test, predictions)];
            let run = run_log(exp, &fitted, kind, cfg.prep.window_s);
            record_job(out, &evals, &run)?;
            Ok((evals, run, fitted.warnings))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut results = Results::new("train", cfg)?;
    results.segments = vec![
        split_count("train", &sets.train),
        split_count("val", &sets.val),
        split_count("test", &sets.test),
    ];
    for (evals, run, warnings) in outcomes {
        results.evaluations.extend(evals);
        results.runs.push(run);
        results.warnings.extend(warnings);
    }
    Ok(results)
}

pub fn segcurve(cfg: &ExperimentConfig, data: &Dataset, out: &Path) -> CliResult<Results> {
    let exp = Experiment::Segcurve;
    let mut results = Results::new("segcurve", cfg)?;
    // one window length at a time bounds the number of live segment sets
    for &window_s in &cfg.segcurve.windows_s {
        let prep = eegbench::preprocess::PrepConfig {
            window_s,
            ..cfg.prep.clone()
        };
        let sets = segment_all(&data.recordings, &prep)?;
        non_empty(&sets, &format!("segcurve at {window_s} s"))?;
        let outcomes = jobs(cfg)
            .par_iter()
            .map(|&(kind, seed)| {
                let fitted = fit_job(cfg, kind, seed, data.channels, &sets)?;
                let predictions =
                    Predictions::from_model(&fitted.model, &sets.test, cfg.train.batch_size)?;
                progress(
                    exp,
                    kind,
                    seed,
                    &format!(
                        "{window_s} s windows, test accuracy {:.4}",
                        predictions.accuracy()
                    ),
                );
                let evals = vec![evaluation(exp, kind, seed, &sets.test, predictions)];
                let run = run_log(exp, &fitted, kind, window_s);
                record_job(out, &evals, &run)?;
                Ok((evals, run, fitted.warnings))
            })
            .collect::<CliResult<Vec<_>>>()?;
        for (evals, run, warnings) in outcomes {
            results.evaluations.extend(evals);
            results.runs.push(run);
            results.warnings.extend(warnings);
        }
    }
    Ok(results)
}

pub fn loso_cmd(cfg: &ExperimentConfig, data: &Dataset, out: &Path) -> CliResult<Results> {
    let exp = Experiment::Loso;
    let outcomes = jobs(cfg)
        .par_iter()
        .map(|&(kind, seed)| {
            let spec = cfg.spec_for(kind, data.channels);
            let report = loso(&data.recordings, &cfg.prep, &spec, &cfg.train, seed)?;
            let mut evals = Vec::new();
            let mut runs = Vec::new();
            for fold in report.folds {
                progress(
                    exp,
                    kind,
                    seed,
                    &format!("held out {}, accuracy {:.4}", fold.unit, fold.accuracy),
                );
                let eval = Evaluation {
                    experiment: exp,
                    model: kind,
                    seed,
                    window_s: cfg.prep.window_s,
                    rate: data.rate,
                    unit: Some(fold.unit.clone()),
                    task: None,
                    control: false,
                    predictions: fold.predictions,
                };
                let run = RunLog {
                    experiment: exp,
                    model: kind,
                    seed,
                    window_s: cfg.prep.window_s,
                    unit: Some(fold.unit),
                    history: fold.history,
                };
                record_job(out, std::slice::from_ref(&eval), &run)?;
                evals.push(eval);
                runs.push(run);
            }
            let skipped: Vec<Skipped> = report
                .skipped
                .into_iter()
                .map(|s| Skipped {
                    model: kind,
                    seed,
                    unit: s.unit,
                    reason: s.reason,
                })
                .collect();
            Ok((evals, runs, skipped))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut results = Results::new("loso", cfg)?;
    for (evals, runs, skipped) in outcomes {
        results.evaluations.extend(evals);
        results.runs.extend(runs);
        results.skipped.extend(skipped);
    }
    Ok(results)
}

pub fn crossfreq(cfg: &ExperimentConfig, data: &Dataset, out: &Path) -> CliResult<Results> {
    let exp = Experiment::Crossfreq;
    if let Some(r) = cfg.crossfreq.rates.iter().find(|&&r| r > data.rate) {
        return Err(CliError::Config(format!(
            "crossfreq rate {r} Hz exceeds the {} Hz training rate",
            data.rate
        )));
    }
    let sets = segment_all(&data.recordings, &cfg.prep)?;
    non_empty(&sets, "crossfreq")?;
    let outcomes = jobs(cfg)
        .par_iter()
        .map(|&(kind, seed)| {
            let fitted = fit_job(cfg, kind, seed, data.channels, &sets)?;
            let rows = cross_frequency(
                &fitted.model,
                &data.recordings,
                &cfg.prep,
                &cfg.crossfreq.rates,
                cfg.train.batch_size,
            )?;
            let evals: Vec<Evaluation> = rows
                .into_iter()
                .map(|r| {
                    progress(
                        exp,
                        kind,
                        seed,
                        &format!("{} Hz, accuracy {:.4}", r.rate, r.accuracy),
                    );
                    Evaluation {
                        experiment: exp,
                        model: kind,
                        seed,
                        window_s: cfg.prep.window_s,
                        rate: r.rate,
                        unit: None,
                        task: None,
                        control: false,
                        predictions: r.predictions,
                    }
                })
                .collect();
            let run = run_log(exp, &fitted, kind, cfg.prep.window_s);
            record_job(out, &evals, &run)?;
            Ok((evals, run, fitted.warnings))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut results = Results::new("crossfreq", cfg)?;
    for (evals, run, warnings) in outcomes {
        results.evaluations.extend(evals);
        results.runs.push(run);
        results.warnings.extend(warnings);
    }
    Ok(results)
}

/// Every window of each unseen-task recording, grouped by task.
fn ood_sets(
    recordings: &[Recording],
    cfg: &ExperimentConfig,
) -> CliResult<Vec<(String, SegmentSet)>> {
    let win = cfg.prep.windowing()?;
    let mut all: Option<SegmentSet> = None;
    for r in recordings {
        let set = segment_whole(r, Split::Test, &win).map_segments(zscore);
        match all.as_mut() {
            Some(a) => a.extend(set)?,
            None => all = Some(set),
        }
    }
    Ok(all.map(|a| split_by_task(&a)).unwrap_or_default())
}

pub fn crosstask(cfg: &ExperimentConfig, data: &Dataset, out: &Path) -> CliResult<Results> {
    let exp = Experiment::Crosstask;
    let (ood, known): (Vec<Recording>, Vec<Recording>) = data
        .recordings
        .iter()
        .cloned()
        .partition(|r| matches!(r.task_label, TaskLabel::Ood(_)));
    if ood.is_empty() {
        return Err(CliError::Data(
            "the dataset holds no unseen-task recordings; add entries to synth.ood_tasks and rerun synth".into(),
        ));
    }
    let sets = segment_all(&known, &cfg.prep)?;
    non_empty(&sets, "crosstask")?;
    let ood = ood_sets(&ood, cfg)?;
    let control_name = cfg.crosstask.control_task.as_str();
    let control = split_by_task(&sets.test)
        .into_iter()
        .find(|(name, _)| name == control_name)
        .ok_or_else(|| {
            CliError::Config(format!("control task {control_name:?} has no test windows"))
        })?;
    let outcomes = jobs(cfg)
        .par_iter()
        .map(|&(kind, seed)| {
            let fitted = fit_job(cfg, kind, seed, data.channels, &sets)?;
            let sets = ood.iter().map(|(name, set)| (name.as_str(), set, false));
            let evals = sets
                .chain(std::iter::once((control_name, &control.1, true)))
                .map(|(name, set, is_control)| {
                    let predictions =
                        Predictions::from_model(&fitted.model, set, cfg.train.batch_size)?;
                    let (dominant, conf, _) = dominant_prediction(&predictions.probs)?;
                    progress(
                        exp,
                        kind,
                        seed,
                        &format!("{name} -> class {dominant} (confidence {conf:.3})"),
                    );
                    Ok(Evaluation {
                        task: Some(name.to_string()),
                        control: is_control,
                        ..evaluation(exp, kind, seed, set, predictions)
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            let run = run_log(exp, &fitted, kind, cfg.prep.window_s);
            record_job(out, &evals, &run)?;
            Ok((evals, run, fitted.warnings))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut results = Results::new("crosstask", cfg)?;
    for (evals, run, warnings) in outcomes {
        results.evaluations.extend(evals);
        results.runs.push(run);
        results.warnings.extend(warnings);
    }
    Ok(results)
}

/// Concatenates stored results; every table is then rebuilt from their
/// predictions.
pub fn report(cfg: &ExperimentConfig, inputs: &[std::path::PathBuf]) -> CliResult<Results> {
    if inputs.is_empty() {
        return Err(CliError::Config(
            "report needs at least one run directory or results.json".into(),
        ));
    }
    let mut merged = Results::new("report", cfg)?;
    merged.config = None;
    for path in inputs {
        let r = crate::results::read_results(path)?;
        merged
            .merged
            .push(crate::results::sha256_hex(&serde_json::to_vec(&r)?));
        merged.evaluations.extend(r.evaluations);
        merged.runs.extend(r.runs);
        merged.skipped.extend(r.skipped);
        merged.warnings.extend(r.warnings);
    }
    Ok(merged)
}
