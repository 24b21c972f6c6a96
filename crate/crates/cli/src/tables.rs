//! Every table and curve is a pure function of a [`Results`] document, so
//! `report` can rebuild them from stored predictions alone.

use eegbench::evaluation::{dominant_prediction, mcnemar, paired_t_test, EvalReport};
use eegbench::model::ModelKind;
use eegbench::recording::CLASS_NAMES;
use eegbench::training::mean_std;

use crate::error::CliResult;
use crate::results::{Evaluation, Experiment, Results};

/// Relative output path and CSV text.
pub type Artifact = (String, String);

struct Table {
    writer: csv::Writer<Vec<u8>>,
    rows: usize,
}

impl Table {
    fn new(header: &[&str]) -> CliResult<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).map_err(csv_err)?;
        Ok(Self { writer, rows: 0 })
    }

    fn row(&mut self, fields: Vec<String>) -> CliResult<()> {
        self.rows += 1;
        self.writer.write_record(fields).map_err(csv_err)
    }

    fn finish(self, path: &str, out: &mut Vec<Artifact>) -> CliResult<()> {
        if self.rows > 0 {
            let bytes = self
                .writer
                .into_inner()
                .map_err(|e| csv_err(e.into_error().into()))?;
            out.push((path.into(), String::from_utf8_lossy(&bytes).into_owned()));
        }
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> crate::error::CliError {
    crate::error::CliError::Data(format!("csv: {e}"))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn n_classes(e: &Evaluation) -> usize {
    e.predictions.probs.first().map_or(0, Vec::len)
}

fn scored(results: &Results) -> CliResult<Vec<(&Evaluation, EvalReport)>> {
    results
        .evaluations
        .iter()
        .filter(|e| e.experiment != Experiment::Crosstask)
        .map(|e| Ok((e, e.predictions.report(n_classes(e))?)))
        .collect()
}

/// Groups items by a key, keeping groups in order of first appearance.
fn group_by<T, K: PartialEq>(
    items: impl IntoIterator<Item = T>,
    key: impl Fn(&T) -> K,
) -> Vec<(K, Vec<T>)> {
    let mut groups: Vec<(K, Vec<T>)> = Vec::new();
    for item in items {
        let k = key(&item);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, members)) => members.push(item),
            None => groups.push((k, vec![item])),
        }
    }
    groups
}

type CellKey = (Experiment, ModelKind, u64, u64);

fn cell(e: &Evaluation) -> CellKey {
    (
        e.experiment,
        e.model,
        e.window_s.to_bits(),
        e.rate.to_bits(),
    )
}

pub fn render(results: &Results) -> CliResult<Vec<Artifact>> {
    let scored = scored(results)?;
    let mut out = Vec::new();
    evaluations_table(&scored, &mut out)?;
    summary_table(&scored, &mut out)?;
    confusion_table(&scored, &mut out)?;
    crossfreq_table(&scored, &mut out)?;
    loso_tables(&scored, &mut out)?;
    crosstask_table(results, &mut out)?;
    history_table(results, &mut out)?;
    segment_curve(&scored, &mut out)?;
    Ok(out)
}

fn evaluations_table(
    scored: &[(&Evaluation, EvalReport)],
    out: &mut Vec<Artifact>,
) -> CliResult<()> {
    let mut t = Table::new(&[
        "experiment",
        "model",
        "seed",
        "window_s",
        "rate",
        "unit",
        "n",
        "accuracy",
        "macro_f1",
        "movie_confusion_rate",
        "nll",
        "brier",
        "ece",
    ])?;
    for (e, r) in scored {
        t.row(vec![
            e.experiment.as_str().into(),
            e.model.to_string(),
            e.seed.to_string(),
            e.window_s.to_string(),
            e.rate.to_string(),
            e.unit.clone().unwrap_or_default(),
            r.n_samples.to_string(),
            r.accuracy.to_string(),
            r.macro_f1.to_string(),
            opt(r.movie_confusion_rate),
            r.nll.to_string(),
            r.brier.to_string(),
            r.ece.to_string(),
        ])?;
    }
    t.finish("tables/evaluations.csv", out)
}

/// Seed-averaged accuracy, F1, movie confusion and calibration per model,
/// window and rate. LOSO folds are summarized separately.
fn summary_table(scored: &[(&Evaluation, EvalReport)], out: &mut Vec<Artifact>) -> CliResult<()> {
    let mut t = Table::new(&[
        "experiment",
        "model",
        "window_s",
        "rate",
        "n_runs",
        "accuracy_mean",
        "accuracy_std",
        "macro_f1_mean",
        "macro_f1_std",
        "movie_confusion_mean",
        "nll_mean",
        "brier_mean",
        "ece_mean",
    ])?;
    let runs = scored
        .iter()
        .filter(|(e, _)| e.experiment != Experiment::Loso);
    for (_, members) in group_by(runs, |(e, _)| cell(e)) {
        let e = members[0].0;
        let col = |f: &dyn Fn(&EvalReport) -> f64| -> CliResult<_> {
            Ok(mean_std(
                &members.iter().map(|(_, r)| f(r)).collect::<Vec<_>>(),
            )?)
        };
        let (acc, f1) = (col(&|r| r.accuracy)?, col(&|r| r.macro_f1)?);
        let movie: Vec<f64> = members
            .iter()
            .filter_map(|(_, r)| r.movie_confusion_rate)
            .collect();
        let movie = if movie.is_empty() {
            None
        } else {
            Some(mean_std(&movie)?.mean)
        };
        t.row(vec![
            e.experiment.as_str().into(),
            e.model.to_string(),
            e.window_s.to_string(),
            e.rate.to_string(),
            members.len().to_string(),
            acc.mean.to_string(),
            acc.std.to_string(),
            f1.mean.to_string(),
            f1.std.to_string(),
            opt(movie),
            col(&|r| r.nll)?.mean.to_string(),
            col(&|r| r.brier)?.mean.to_string(),
            col(&|r| r.ece)?.mean.to_string(),
        ])?;
    }
    t.finish("tables/summary.csv", out)
}

/// Confusion counts summed over seeds (and folds), in long form.
fn confusion_table(scored: &[(&Evaluation, EvalReport)], out: &mut Vec<Artifact>) -> CliResult<()> {
    let mut t = Table::new(&[
        "experiment",
        "model",
        "window_s",
        "rate",
        "true",
        "predicted",
        "count",
    ])?;
    for (_, members) in group_by(scored.iter(), |(e, _)| cell(e)) {
        let e = members[0].0;
        let k = members[0].1.confusion.counts.len();
        let mut total = vec![vec![0usize; k]; k];
        for (_, r) in &members {
            for (i, row) in r.confusion.counts.iter().enumerate() {
                for (j, c) in row.iter().enumerate() {
                    total[i][j] += c;
                }
            }
        }
        let name = |c: usize| {
            CLASS_NAMES
                .get(c)
                .map_or_else(|| c.to_string(), |s| s.to_string())
        };
        for (i, row) in total.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                t.row(vec![
                    e.experiment.as_str().into(),
                    e.model.to_string(),
                    e.window_s.to_string(),
                    e.rate.to_string(),
                    name(i),
                    name(j),
                    c.to_string(),
                ])?;
            }
        }
    }
    t.finish("tables/confusion.csv", out)
}

/// Zero-shot accuracy per evaluation rate, with the drop in percentage
/// points from the model's highest evaluated rate.
fn crossfreq_table(scored: &[(&Evaluation, EvalReport)], out: &mut Vec<Artifact>) -> CliResult<()> {
    let mut t = Table::new(&[
        "model",
        "rate",
        "n_runs",
        "accuracy_mean",
        "accuracy_std",
        "macro_f1_mean",
        "drop_pp",
    ])?;
    let rows = scored
        .iter()
        .filter(|(e, _)| e.experiment == Experiment::Crossfreq);
    for (_, per_model) in group_by(rows, |(e, _)| e.model) {
        let per_rate = group_by(per_model, |(e, _)| e.rate.to_bits());
        let means = per_rate
            .iter()
            .map(|(_, m)| {
                let acc = mean_std(&m.iter().map(|(_, r)| r.accuracy).collect::<Vec<_>>())?;
                let f1 = mean_std(&m.iter().map(|(_, r)| r.macro_f1).collect::<Vec<_>>())?;
                Ok((m[0].0, m.len(), acc, f1))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let reference = means
            .iter()
            .max_by(|a, b| a.0.rate.total_cmp(&b.0.rate))
            .map_or(0.0, |m| m.2.mean);
        for (e, n, acc, f1) in means {
            t.row(vec![
                e.model.to_string(),
                e.rate.to_string(),
                n.to_string(),
                acc.mean.to_string(),
                acc.std.to_string(),
                f1.mean.to_string(),
                (100.0 * (reference - acc.mean)).to_string(),
            ])?;
        }
    }
    t.finish("tables/crossfreq.csv", out)
}

fn loso_tables(scored: &[(&Evaluation, EvalReport)], out: &mut Vec<Artifact>) -> CliResult<()> {
    let folds: Vec<&(&Evaluation, EvalReport)> = scored
        .iter()
        .filter(|(e, _)| e.experiment == Experiment::Loso)
        .collect();
    let mut t = Table::new(&["model", "seed", "unit", "n", "accuracy", "macro_f1"])?;
    for (e, r) in &folds {
        t.row(vec![
            e.model.to_string(),
            e.seed.to_string(),
            e.unit.clone().unwrap_or_default(),
            r.n_samples.to_string(),
            r.accuracy.to_string(),
            r.macro_f1.to_string(),
        ])?;
    }
    t.finish("tables/loso.csv", out)?;

    let mut s = Table::new(&[
        "model",
        "n_folds",
        "accuracy_mean",
        "accuracy_std",
        "accuracy_min",
        "accuracy_max",
        "macro_f1_mean",
    ])?;
    let by_model = group_by(folds.iter().copied(), |(e, _)| e.model);
    for (model, members) in &by_model {
        let accs: Vec<f64> = members.iter().map(|(_, r)| r.accuracy).collect();
        let acc = mean_std(&accs)?;
        let f1 = mean_std(&members.iter().map(|(_, r)| r.macro_f1).collect::<Vec<_>>())?;
        s.row(vec![
            model.to_string(),
            accs.len().to_string(),
            acc.mean.to_string(),
            acc.std.to_string(),
            accs.iter()
                .copied()
                .fold(f64::INFINITY, f64::min)
                .to_string(),
            accs.iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
                .to_string(),
            f1.mean.to_string(),
        ])?;
    }
    s.finish("tables/loso_summary.csv", out)?;

    // first model against each other one, folds paired on (seed, unit)
    let mut c = Table::new(&[
        "model_a",
        "model_b",
        "n_pairs",
        "mean_diff",
        "t",
        "df",
        "p",
        "b",
        "c",
        "chi2",
        "p_exact",
        "note",
    ])?;
    if let Some(((ref_model, reference), others)) = by_model.split_first() {
        for (model, members) in others {
            let pairs: Vec<(f64, f64)> = reference
                .iter()
                .filter_map(|(ea, ra)| {
                    members
                        .iter()
                        .find(|(eb, _)| eb.seed == ea.seed && eb.unit == ea.unit)
                        .map(|(_, rb)| (ra.accuracy, rb.accuracy))
                })
                .collect();
            let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
            // discordant folds after thresholding each fold's accuracy at 50 %
            let b = pairs.iter().filter(|(a, b)| *a > 0.5 && *b <= 0.5).count() as u64;
            let cc = pairs.iter().filter(|(a, b)| *a <= 0.5 && *b > 0.5).count() as u64;
            let mut notes = Vec::new();
            let tt = paired_t_test(&diffs)
                .map_err(|e| notes.push(e.to_string()))
                .ok();
            let mc = mcnemar(b, cc).map_err(|e| notes.push(e.to_string())).ok();
            let mean_diff = if diffs.is_empty() {
                None
            } else {
                Some(diffs.iter().sum::<f64>() / diffs.len() as f64)
            };
            c.row(vec![
                ref_model.to_string(),
                model.to_string(),
                pairs.len().to_string(),
                opt(mean_diff),
                opt(tt.map(|t| t.t)),
                tt.map_or_else(String::new, |t| t.df.to_string()),
                opt(tt.map(|t| t.p)),
                b.to_string(),
                cc.to_string(),
                opt(mc.map(|m| m.chi2)),
                opt(mc.map(|m| m.p_exact)),
                notes.join("; "),
            ])?;
        }
    }
    c.finish("tables/loso_stats.csv", out)
}

fn crosstask_table(results: &Results, out: &mut Vec<Artifact>) -> CliResult<()> {
    let mut t = Table::new(&[
        "model",
        "seed",
        "task",
        "control",
        "n_segments",
        "dominant_class",
        "dominant_name",
        "mean_confidence",
        "class_counts",
    ])?;
    for e in results
        .evaluations
        .iter()
        .filter(|e| e.experiment == Experiment::Crosstask)
    {
        let (dominant, conf, counts) = dominant_prediction(&e.predictions.probs)?;
        t.row(vec![
            e.model.to_string(),
            e.seed.to_string(),
            e.task.clone().unwrap_or_default(),
            e.control.to_string(),
            e.predictions.len().to_string(),
            dominant.to_string(),
            CLASS_NAMES
                .get(dominant)
                .map_or_else(|| dominant.to_string(), |s| s.to_string()),
            conf.to_string(),
            counts
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(" "),
        ])?;
    }
    t.finish("tables/crosstask.csv", out)
}

fn history_table(results: &Results, out: &mut Vec<Artifact>) -> CliResult<()> {
    let mut t = Table::new(&[
        "experiment",
        "model",
        "seed",
        "window_s",
        "unit",
        "epoch",
        "train_loss",
        "train_acc",
        "val_loss",
        "val_acc",
        "lr",
        "best",
    ])?;
    for run in &results.runs {
        for ep in &run.history.epochs {
            t.row(vec![
                run.experiment.as_str().into(),
                run.model.to_string(),
                run.seed.to_string(),
                run.window_s.to_string(),
                run.unit.clone().unwrap_or_default(),
                ep.epoch.to_string(),
                ep.train_loss.to_string(),
                ep.train_acc.to_string(),
                ep.val_loss.to_string(),
                ep.val_acc.to_string(),
                ep.lr.to_string(),
                (ep.epoch == run.history.best_epoch).to_string(),
            ])?;
        }
    }
    t.finish("tables/history.csv", out)
}

/// Test accuracy against window length: x seconds, y mean accuracy over
/// seeds, yerr its standard deviation.
fn segment_curve(scored: &[(&Evaluation, EvalReport)], out: &mut Vec<Artifact>) -> CliResult<()> {
    let mut t = Table::new(&["model", "x", "y", "yerr", "n_runs"])?;
    let points = scored
        .iter()
        .filter(|(e, _)| e.experiment == Experiment::Segcurve);
    for (_, members) in group_by(points, |(e, _)| (e.model, e.window_s.to_bits())) {
        let acc = mean_std(&members.iter().map(|(_, r)| r.accuracy).collect::<Vec<_>>())?;
        t.row(vec![
            members[0].0.model.to_string(),
            members[0].0.window_s.to_string(),
            acc.mean.to_string(),
            acc.std.to_string(),
            members.len().to_string(),
        ])?;
    }
    t.finish("curves/accuracy_vs_segment.csv", out)
}
