use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::report::{coverage_csv, pca_2d, table_csv, table_text};
use super::{read_dataset, read_file, write_atomic, write_dataset, Checkpoint, IoError, RunConfig};
use crate::data::{Dataset, Domain, NUM_CLASSES};
use crate::kspace::{synth_dataset, SynthOptions};
use crate::metrics::{auc_ovr_macro, confusion_matrix, macro_prf1, accuracy, run_protocol, Arm, Metrics, Prediction, ProtocolPlan, ProtocolReport};
use crate::seed::derive_seed;
use crate::train::{train, TrainControl, TrainLog, TrainMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synth,
    Train,
    Eval,
    Protocol,
    Report,
}

/// Command line values that take precedence over the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<TrainMode>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn apply_overrides(cfg: &mut RunConfig, ov: &Overrides) {
    if let Some(mode) = ov.mode {
        cfg.train.mode = mode;
    }
    if let Some(seed) = ov.seed {
        cfg.train.seed = seed;
        cfg.synth.seed = seed;
    }
    if let Some(out) = &ov.out {
        cfg.out_dir = out.clone();
    }
}

/// Runs one command and returns the files it wrote.
pub fn run_command(cmd: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>, IoError> {
    match cmd {
        Command::Synth => cmd_synth(cfg),
        Command::Train => cmd_train(cfg),
        Command::Eval => cmd_eval(cfg),
        Command::Protocol => cmd_protocol(cfg),
        Command::Report => cmd_report(cfg),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Serialize)]
struct DomainCounts {
    seed: u64,
    samples: usize,
    per_class: [usize; NUM_CLASSES],
    per_patient: BTreeMap<u32, usize>,
}

fn counts(ds: &Dataset, seed: u64) -> DomainCounts {
    let mut per_patient = BTreeMap::new();
    for s in &ds.samples {
        *per_patient.entry(s.patient).or_insert(0) += 1;
    }
    DomainCounts { seed, samples: ds.len(), per_class: ds.class_counts(), per_patient }
}

/// Synthesizes both domains and writes them with a manifest.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>, IoError> {
    let src_path = cfg.resolve(&cfg.data.source);
    let tgt_path = cfg.resolve(&cfg.data.target);
    if src_path == tgt_path {
        return Err(IoError::Config(format!("source and target both write to {}", src_path.display())));
    }
    let s = &cfg.synth;
    let seeds = [derive_seed(s.seed, &[0]), derive_seed(s.seed, &[1])];
    let make = |spec, domain, seed| {
        let opts = SynthOptions {
            domain,
            n_patients: s.n_patients,
            slices_per_patient: s.slices_per_patient,
            seed,
            mode: s.input_mode,
            ranges: s.ranges.clone(),
        };
        synth_dataset(spec, &opts)
    };
    let source = make(&s.source, Domain::Source, seeds[0])?;
    let target = make(&s.target, Domain::Target, seeds[1])?;
    write_dataset(&src_path, &source, s.dtype)?;
    write_dataset(&tgt_path, &target, s.dtype)?;

    #[derive(Serialize)]
    struct Manifest<'a> {
        synth: &'a super::SynthConfig,
        source: DomainCounts,
        target: DomainCounts,
    }
    let manifest_path = cfg.out_dir.join("synth_manifest.json");
    write_json(&manifest_path, &Manifest { synth: s, source: counts(&source, seeds[0]), target: counts(&target, seeds[1]) })?;
    Ok(vec![src_path, tgt_path, manifest_path])
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn train_log_csv(log: &TrainLog) -> String {
    let mut out = String::from("iteration,epoch,gamma,lr,ce,center,stat,critic_loss,distance,total\n");
    for s in &log.steps {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            s.iteration,
            s.epoch,
            s.gamma,
            s.lr,
            s.ce,
            s.center,
            opt_cell(s.stat),
            opt_cell(s.critic_loss),
            opt_cell(s.distance),
            s.total
        );
    }
    out
}

fn epoch_log_csv(log: &TrainLog) -> String {
    let mut out = String::from("epoch,mean_ce,mean_distance,eval_accuracy\n");
    for e in &log.epochs {
        let _ = writeln!(out, "{},{},{},{}", e.epoch, e.mean_ce, opt_cell(e.mean_distance), opt_cell(e.eval_accuracy));
    }
    out
}

/// Loads the dataset files the configured mode needs; the others are not
/// touched and may be absent.
fn load_for_mode(cfg: &RunConfig) -> Result<(Option<Dataset>, Option<Dataset>), IoError> {
    let need_source = cfg.train.mode != TrainMode::TargetSupervised;
    let need_target = cfg.train.mode != TrainMode::SourceOnly;
    let source = need_source.then(|| read_dataset(&cfg.resolve(&cfg.data.source))).transpose()?;
    let target = need_target.then(|| read_dataset(&cfg.resolve(&cfg.data.target))).transpose()?;
    for ds in source.iter().chain(target.iter()) {
        if !ds.is_empty() && ds.mode != cfg.train.input_mode {
            return Err(IoError::Inconsistent(format!(
                "dataset holds {:?} inputs but the run expects {:?}",
                ds.mode, cfg.train.input_mode
            )));
        }
    }
    if cfg.train.mode == TrainMode::TargetSupervised && target.as_ref().is_some_and(|t| !t.is_fully_labeled()) {
        return Err(IoError::Inconsistent("target_supervised needs a labeled target set".into()));
    }
    Ok((source, target))
}

/// Trains the configured mode and writes the checkpoint and logs.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>, IoError> {
    let (source, target) = load_for_mode(cfg)?;
    let resume = match &cfg.resume.from {
        Some(dir) => {
            let ck = Checkpoint::load(&cfg.resolve(dir))?;
            if ck.config != cfg.train {
                return Err(IoError::Checkpoint("checkpoint was trained with a different configuration".into()));
            }
            Some(ck.state)
        }
        None => None,
    };
    let control = TrainControl { resume, stop_after: cfg.resume.stop_after_epochs, eval: None };
    let out = train(&cfg.train, source.as_ref(), target.as_ref(), control)?;
    let ck = Checkpoint { config: cfg.train.clone(), spec: out.networks.spec.clone(), state: out.state() };
    let ck_dir = cfg.out_dir.join("checkpoint");
    ck.save(&ck_dir)?;
    let log_path = cfg.out_dir.join("train_log.csv");
    write_atomic(&log_path, train_log_csv(&out.log).as_bytes())?;
    let epochs_path = cfg.out_dir.join("train_epochs.csv");
    write_atomic(&epochs_path, epoch_log_csv(&out.log).as_bytes())?;
    Ok(vec![ck_dir, log_path, epochs_path])
}

/// Scores a checkpoint on a dataset: per-sample predictions, aggregate
/// metrics, the confusion matrix and a feature dump.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<PathBuf>, IoError> {
    let ck = Checkpoint::load(&cfg.resolve(&cfg.eval.checkpoint))?;
    let ds_path = cfg.resolve(cfg.eval.dataset.as_ref().unwrap_or(&cfg.data.target));
    let ds = read_dataset(&ds_path)?;
    if ds.mode != ck.config.input_mode || ds.height != ck.spec.image_size || ds.width != ck.spec.image_size {
        return Err(IoError::Inconsistent(format!(
            "checkpoint expects {:?} {}x{} inputs, dataset has {:?} {}x{}",
            ck.config.input_mode, ck.spec.image_size, ck.spec.image_size, ds.mode, ds.height, ds.width
        )));
    }
    let nets = ck.networks()?;
    let x = nets.prepare(&ds)?;
    let probs = nets.predict(&x)?;
    let features = nets.features(&x)?;

    let mut pred_csv = String::from("index,patient,domain,truth,predicted");
    (0..NUM_CLASSES).for_each(|k| {
        let _ = write!(pred_csv, ",p{k}");
    });
    pred_csv.push('\n');
    let mut feat_csv = String::from("index,patient,domain,truth");
    (0..features.row_len()).for_each(|k| {
        let _ = write!(feat_csv, ",f{k}");
    });
    feat_csv.push('\n');
    let mut preds = Vec::new();
    for (i, s) in ds.samples.iter().enumerate() {
        let row = probs.row(i);
        let predicted = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
        let truth = s.label.map(|l| l.index().to_string()).unwrap_or_default();
        let domain = s.domain as u8;
        let _ = write!(pred_csv, "{i},{},{domain},{truth},{predicted}", s.patient);
        row.iter().for_each(|p| {
            let _ = write!(pred_csv, ",{p}");
        });
        pred_csv.push('\n');
        let _ = write!(feat_csv, "{i},{},{domain},{truth}", s.patient);
        features.row(i).iter().for_each(|f| {
            let _ = write!(feat_csv, ",{f}");
        });
        feat_csv.push('\n');
        if let Some(l) = s.label {
            preds.push(Prediction { truth: l.index(), predicted, probs: row.to_vec(), patient: s.patient, domain: s.domain });
        }
    }
    let conf = confusion_matrix(&preds)?;
    let prf = macro_prf1(&conf);
    let auc = auc_ovr_macro(&preds)?;
    let metrics = Metrics { accuracy: accuracy(&conf), precision: prf.precision, recall: prf.recall, f1: prf.f1, auc: auc.value };
    let mut conf_csv = String::from("truth\\predicted,0,1,2,3,4\n");
    for (t, row) in conf.iter().enumerate() {
        let _ = writeln!(conf_csv, "{t},{}", row.map(|c| c.to_string()).join(","));
    }

    let paths: Vec<PathBuf> = ["predictions.csv", "metrics.json", "confusion.csv", "features.csv"]
        .iter()
        .map(|n| cfg.out_dir.join(n))
        .collect();
    write_atomic(&paths[0], pred_csv.as_bytes())?;
    write_json(&paths[1], &metrics)?;
    write_atomic(&paths[2], conf_csv.as_bytes())?;
    write_atomic(&paths[3], feat_csv.as_bytes())?;
    Ok(paths)
}

/// Runs the three training modes over patient-out folds of the target set.
pub fn cmd_protocol(cfg: &RunConfig) -> Result<Vec<PathBuf>, IoError> {
    let source = read_dataset(&cfg.resolve(&cfg.data.source))?;
    let target = read_dataset(&cfg.resolve(&cfg.data.target))?;
    let p = &cfg.protocol;
    let plan = ProtocolPlan { k: p.k, seeds: p.seeds.clone(), folds: p.folds.clone() };
    let report = run_protocol(&source, &target, &Arm::standard(&cfg.train), &plan)?;
    let path = cfg.out_dir.join("protocol.json");
    write_json(&path, &report)?;
    Ok(vec![path])
}

fn read_features(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), IoError> {
    let text = String::from_utf8(read_file(path)?).map_err(|_| IoError::Inconsistent("feature dump is not UTF-8".into()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| IoError::Inconsistent("empty feature dump".into()))?;
    let skip = header.split(',').take_while(|h| !h.starts_with('f')).count();
    let mut keys = Vec::new();
    let mut rows = Vec::new();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        keys.push(cells[..skip.min(cells.len())].join(","));
        let row = cells[skip.min(cells.len())..]
            .iter()
            .map(|c| c.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| IoError::Inconsistent(format!("feature dump: {e}")))?;
        rows.push(row);
    }
    Ok((keys, rows))
}

/// Tabulates protocol results and projects the feature dump, if present.
pub fn cmd_report(cfg: &RunConfig) -> Result<Vec<PathBuf>, IoError> {
    let mut reports: Vec<(String, ProtocolReport)> = Vec::new();
    for p in &cfg.report.protocols {
        let path = cfg.resolve(p);
        let bytes = read_file(&path)?;
        let report: ProtocolReport =
            serde_json::from_slice(&bytes).map_err(|source| IoError::Json { path: path.display().to_string(), source })?;
        let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        reports.push((label, report));
    }
    let Some((_, first)) = reports.first() else {
        return Err(IoError::Inconsistent("no protocol results to report".into()));
    };
    let arms: Vec<&str> = first.summary.iter().map(|a| a.arm.as_str()).collect();
    if reports.iter().any(|(_, r)| r.summary.iter().map(|a| a.arm.as_str()).ne(arms.iter().copied())) {
        return Err(IoError::Inconsistent("protocol results cover different arms".into()));
    }
    let mut text = String::new();
    for (label, r) in &reports {
        let _ = writeln!(text, "# {label}: {} seeds, k = {}, AUC {}", r.plan.seeds.len(), r.plan.k, r.auc_scheme);
        text.push_str(&table_text(r));
        text.push('\n');
    }
    let mut written = Vec::new();
    for (name, body) in [("table.txt", text), ("table.csv", table_csv(&reports)), ("coverage.csv", coverage_csv(&reports))] {
        let path = cfg.out_dir.join(name);
        write_atomic(&path, body.as_bytes())?;
        written.push(path);
    }
    if let Some(features) = cfg.report.features.as_ref().map(|f| cfg.resolve(f)).filter(|f| f.exists()) {
        let (keys, rows) = read_features(&features)?;
        let (points, variances) = pca_2d(&rows)?;
        let mut csv = format!("# component variances {} {}\nkey,pc1,pc2\n", variances[0], variances[1]);
        for (k, p) in keys.iter().zip(points) {
            let _ = writeln!(csv, "\"{k}\",{},{}", p[0], p[1]);
        }
        let path = cfg.out_dir.join("projection.csv");
        write_atomic(&path, csv.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
