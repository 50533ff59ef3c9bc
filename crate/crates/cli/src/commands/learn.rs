use std::fs;
use std::path::{Path, PathBuf};

use hfl_core::features::DescriptorMatrix;
use hfl_core::regressor::{self, LabeledSample, Origin, RegressorHead, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::args::{ProbeArgs, TrainArgs};
use crate::error::{AtPath, CliError, CliResult};
use crate::io;
use crate::manifest::Manifest;

const SPLIT_STREAM: u64 = 4;

fn check_pairs(descriptors: &[PathBuf], labels: &[PathBuf]) -> CliResult<()> {
    if descriptors.len() != labels.len() {
        return Err(CliError::Usage(format!(
            "{} descriptor files but {} label files",
            descriptors.len(),
            labels.len()
        )));
    }
    Ok(())
}

fn load_pair(d: &Path, l: &Path) -> CliResult<(DescriptorMatrix, Vec<f32>)> {
    let m = DescriptorMatrix::load(d).at(d)?;
    let labels = io::read_labels(l)?;
    if labels.len() != m.rows() {
        return Err(CliError::input(
            l,
            format!("{} labels for {} descriptor rows in {}", labels.len(), m.rows(), d.display()),
        ));
    }
    Ok((m, labels))
}

fn resolve_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            TrainConfig::parse(&text).at(p)?
        }
        None => TrainConfig::default(),
    };
    for (k, v) in &a.settings {
        cfg.set(k, v).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Seeded shuffle; the first `round(frac · n)` samples become the holdout.
fn split_holdout(mut all: Vec<LabeledSample>, frac: f64, seed: u64) -> (Vec<LabeledSample>, Vec<LabeledSample>) {
    let mut order: Vec<usize> = (0..all.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    order.shuffle(&mut rng);
    let n_hold = (frac * all.len() as f64).round() as usize;
    let mut is_hold = vec![false; all.len()];
    for &i in &order[..n_hold] {
        is_hold[i] = true;
    }
    let (mut train, mut hold) = (Vec::new(), Vec::new());
    for (i, mut s) in all.drain(..).enumerate() {
        if is_hold[i] {
            s.origin = Origin::Holdout;
            hold.push(s);
        } else {
            train.push(s);
        }
    }
    (train, hold)
}

pub fn train(a: &TrainArgs, jobs: usize) -> CliResult<()> {
    check_pairs(&a.descriptors, &a.labels)?;
    if !(0.0..1.0).contains(&a.holdout_frac) {
        return Err(CliError::Usage(format!(
            "--holdout-frac must lie in [0, 1), got {}",
            a.holdout_frac
        )));
    }
    let cfg = resolve_config(a)?;
    let mut samples = Vec::new();
    let mut cols = None;
    for (d, l) in a.descriptors.iter().zip(&a.labels) {
        let (m, labels) = load_pair(d, l)?;
        if *cols.get_or_insert(m.cols()) != m.cols() {
            return Err(CliError::input(
                d,
                format!("{} columns, earlier files have {}", m.cols(), cols.unwrap_or(0)),
            ));
        }
        samples.extend(regressor::samples_from_matrix(&m, &labels, Origin::Train).at(l)?);
    }
    let input_dim = cols.unwrap_or(0);
    let (train_set, holdout) = split_holdout(samples, a.holdout_frac, cfg.seed);
    let head = RegressorHead::init(input_dim, cfg.hidden, cfg.dropout_rate, cfg.seed)?;
    let report = regressor::train_with_mining(&head, &train_set, &holdout, &cfg)?;

    io::create_dir(&a.out)?;
    report.head.save(&a.out).at(&a.out)?;
    let report_path = a.out.join("train_report.txt");
    let text = format!("{}{}", cfg.render(), report.render());
    fs::write(&report_path, text).map_err(|e| CliError::io(&report_path, e))?;

    let mut m = Manifest::new("train", jobs);
    for line in cfg.render().lines() {
        if let Some((k, v)) = line.split_once('=') {
            m.option(k, v);
        }
    }
    m.option("holdout_frac", a.holdout_frac);
    for (i, (d, l)) in a.descriptors.iter().zip(&a.labels).enumerate() {
        m.input(&format!("descriptors{i}"), d)?;
        m.input(&format!("labels{i}"), l)?;
    }
    if let Some(p) = &a.config {
        m.input("config", p)?;
    }
    m.output("head", &a.out);
    m.result("train_samples", train_set.len());
    m.result("holdout_samples", holdout.len());
    m.result("balanced_samples", report.balanced_count);
    m.result("holdout_fn_phase1", report.holdout_fn_phase1);
    m.result("holdout_fn_phase2", report.holdout_fn_phase2);
    m.result("mined_false_negatives", report.mined_false_negatives);
    m.result("mined_true_negatives", report.mined_true_negatives);
    if let Some(l) = report.phase2_loss.last().or(report.phase1_loss.last()) {
        m.result("final_mse", format!("{l:.9}"));
    }
    m.write(&a.out.join("manifest.txt"))
}

/// Stacks several descriptor files row-wise, keeping the first file's layer layout.
fn concat(mats: Vec<(DescriptorMatrix, Vec<f32>)>, paths: &[PathBuf]) -> CliResult<(DescriptorMatrix, Vec<f32>)> {
    let mut iter = mats.into_iter();
    let Some((first, mut labels)) = iter.next() else {
        return Err(CliError::Usage("no descriptor files".into()));
    };
    let cols = first.cols();
    let layers = first.layers().to_vec();
    let mut data = first.as_slice().to_vec();
    let mut rows = first.rows();
    for (i, (m, l)) in iter.enumerate() {
        if m.cols() != cols || m.layers() != layers.as_slice() {
            return Err(CliError::input(&paths[i + 1], "layer layout differs from the first descriptor file"));
        }
        data.extend_from_slice(m.as_slice());
        rows += m.rows();
        labels.extend(l);
    }
    let m = DescriptorMatrix::new(rows, cols, data, layers).at(&paths[0])?;
    Ok((m, labels))
}

pub fn probe(a: &ProbeArgs, jobs: usize) -> CliResult<()> {
    check_pairs(&a.descriptors, &a.labels)?;
    let mats = a
        .descriptors
        .iter()
        .zip(&a.labels)
        .map(|(d, l)| load_pair(d, l))
        .collect::<CliResult<Vec<_>>>()?;
    let (m, labels) = concat(mats, &a.descriptors)?;
    let probe = regressor::linear_probe(&m, &labels, a.lambda)?;

    let layer_of = m.channel_layer_map();
    let mut rows = vec![["channel", "layer", "weight", "magnitude"].map(String::from).to_vec()];
    for (c, (w, mag)) in probe.weights.iter().zip(&probe.magnitudes).enumerate() {
        let layer = m.layers().get(layer_of[c]).map_or("", |l| l.name.as_str());
        rows.push(vec![c.to_string(), layer.to_string(), format!("{w:.9e}"), format!("{mag:.9e}")]);
    }
    io::write_csv(&a.out, &rows)?;

    let mut man = Manifest::new("probe", jobs);
    man.option("lambda", a.lambda);
    for (i, (d, l)) in a.descriptors.iter().zip(&a.labels).enumerate() {
        man.input(&format!("descriptors{i}"), d)?;
        man.input(&format!("labels{i}"), l)?;
    }
    man.output("weights", &a.out);
    man.result("rows", m.rows());
    for (name, v) in &probe.layer_profile {
        man.result(&format!("layer.{name}"), format!("{v:.9e}"));
    }
    man.write(&crate::manifest::manifest_path_for(&a.out))
}
