use std::path::{Path, PathBuf};
use std::time::Instant;

use tenet_core::data::{
    gen_synthetic, load_dataset, load_image, save_dataset, split, write_pgm, write_volume, Image, Sample,
};
use tenet_core::metrics::{dice, prauc, EvalReport, DICE_THRESHOLD};
use tenet_core::segmenter::Segmenter;
use tenet_core::training::{evaluate_loss_and_dice, fit_with, history_csv, load_checkpoint, save_checkpoint};
use tenet_core::{Error, Result};

use crate::config::RunConfig;

pub struct TrainOverrides {
    pub dims: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
}

pub fn gen_synth(out: &Path, n: usize, size: usize, seed: u64, dims: usize) -> Result<()> {
    let samples = gen_synthetic(n, size, seed, dims)?;
    save_dataset(out, &samples)?;
    println!("wrote {n} samples to {}", out.display());
    Ok(())
}

fn write_file(path: &Path, contents: String) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn load_normalized(root: &Path) -> Result<Vec<Sample>> {
    Ok(load_dataset(root)?
        .into_iter()
        .map(|mut s| {
            s.image = s.image.normalized();
            s
        })
        .collect())
}

pub fn train(
    config: &Path,
    data: Option<&Path>,
    out: &Path,
    history: Option<&Path>,
    overrides: TrainOverrides,
) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(d) = overrides.dims {
        cfg.model.dims = d;
    }
    if let Some(e) = overrides.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(s) = overrides.seed {
        cfg.train.seed = s;
    }
    if let Some(lr) = overrides.lr {
        cfg.train.lr = lr;
    }
    if let Some(b) = overrides.batch_size {
        cfg.train.batch_size = b;
    }
    cfg.validate()?;

    let root: PathBuf = match (data, &cfg.data_root) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => d.clone(),
        (None, None) => return Err(Error::Config("no dataset given: pass --data or set `data_root`".into())),
    };
    let samples = load_normalized(&root)?;
    for s in &samples {
        if s.image.spatial_rank() != cfg.model.dims {
            return Err(Error::Config(format!(
                "config has dims {} but image {} is {}D",
                cfg.model.dims,
                s.id,
                s.image.spatial_rank()
            )));
        }
        if s.image.channels() != cfg.model.channels {
            return Err(Error::Config(format!(
                "config has {} channels but image {} has {}",
                cfg.model.channels,
                s.id,
                s.image.channels()
            )));
        }
    }
    let (train_set, val_set, test_set) = split(&samples, cfg.split, cfg.train.seed)?;
    println!(
        "{} train / {} val / {} test samples, {} parameters",
        train_set.len(),
        val_set.len(),
        test_set.len(),
        tenet_core::mps::param_count(
            cfg.model.patch_size,
            cfg.model.classes,
            cfg.model.channels,
            cfg.model.feature_map.dim(),
            cfg.model.bond_dim,
            cfg.model.dims as u32
        )
    );

    let model = Segmenter::new(cfg.model.clone(), cfg.train.seed)?;
    let start = Instant::now();
    let outcome = fit_with(model, &train_set, &val_set, &cfg.train, |r| {
        println!(
            "epoch {:>4}  train_loss {:.6}  val_loss {:.6}  val_dice {:.4}{}",
            r.row.epoch,
            r.row.train_loss,
            r.row.val_loss,
            r.row.val_dice,
            if r.improved { "  *" } else { "" }
        );
    })?;
    println!(
        "best val_dice {:.4} at epoch {} ({:.1}s)",
        outcome.history[outcome.best_epoch - 1].val_dice,
        outcome.best_epoch,
        start.elapsed().as_secs_f64()
    );
    if !test_set.is_empty() {
        let (_, test_dice) = evaluate_loss_and_dice(&outcome.best, &test_set, cfg.train.loss)?;
        println!("test dice {test_dice:.4} on {} samples", test_set.len());
    }

    save_checkpoint(out, &outcome.best, Some(&cfg.train))?;
    if let Some(path) = history {
        write_file(path, history_csv(&outcome.history))?;
    }
    Ok(())
}

/// Loads and normalizes an image, rejecting one the model cannot consume.
fn load_input(model: &Segmenter, path: &Path) -> Result<Image> {
    let image = load_image(path)?.normalized();
    model.check_image(&image)?;
    Ok(image)
}

pub fn predict(model_path: &Path, input: &Path, output: &Path, soft: Option<&Path>) -> Result<()> {
    let model = load_checkpoint(model_path)?.model;
    let image = load_input(&model, input)?;
    let probs = model.predict_soft(&image)?;
    let mask = probs.thresholded(DICE_THRESHOLD);
    if image.spatial_rank() == 2 {
        write_pgm(output, &mask, 255)?;
        if let Some(path) = soft {
            write_pgm(path, &probs, 65535)?;
        }
    } else {
        write_volume(output, &mask)?;
        if let Some(path) = soft {
            write_volume(path, &probs)?;
        }
    }
    Ok(())
}

pub fn eval(model_path: &Path, data: &Path, report_path: &Path) -> Result<EvalReport> {
    let model = load_checkpoint(model_path)?.model;
    let samples = load_normalized(data)?;
    let mut ids = Vec::with_capacity(samples.len());
    let mut dices = Vec::with_capacity(samples.len());
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for s in &samples {
        model.check_image(&s.image)?;
        let probs = model.predict_soft(&s.image)?;
        dices.push(dice(probs.data(), s.mask.data(), DICE_THRESHOLD)?);
        ids.push(s.id.clone());
        scores.extend_from_slice(probs.data());
        labels.extend(s.mask.data().iter().map(|&t| t >= 0.5));
    }
    let pr = match prauc(&scores, &labels) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(msg)) => {
            log::warn!("PRAUC undefined: {msg}");
            None
        }
        Err(e) => return Err(e),
    };
    let report = EvalReport::new(ids, dices, pr);
    write_file(report_path, report.to_csv())?;
    println!(
        "mean dice {:.4} ± {:.4} over {} images, prauc {}",
        report.mean_dice,
        report.std_dice,
        report.dice.len(),
        report.prauc.map_or("undefined".to_string(), |v| format!("{v:.4}"))
    );
    Ok(report)
}
