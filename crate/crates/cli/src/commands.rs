//! The seven subcommands. Each one merges its flags with the optional
//! config file (flags win), rejects unknown config keys, runs the library,
//! and echoes the settings it actually used into `effective-config.txt` in
//! its output directory. Nothing here writes timestamps: identical
//! invocations produce byte-identical artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aescore::attention::{channel_plane, extract, render_overlay, ChannelSelector};
use aescore::checkpoint::{load_checkpoint, save_checkpoint};
use aescore::dataio::{
    load_dataset, materialize, synthesize, ImbalanceProfile, LabeledDataset, MaterializedDataset,
    PreprocessSpec, LABELS_FILE, LABELS_HEADER,
};
use aescore::ensemble::{export_probabilities, import_probabilities, predict, sweep};
use aescore::metrics::{binarize, evaluate, improvement, QualityClass, BINARIZE_THRESHOLD};
use aescore::model::{build, ModelConfig, Variant, CLASS_COUNT, SCORE_OFFSET};
use aescore::nn::Mode;
use aescore::tensor::Tensor;
use aescore::trainer::{probability_table, rsrl, serialize_trace, train, RsrlPlan, TrainSettings};
use aescore::{Error, Result};

use crate::config::{ConfigFile, EffectiveConfig};
use crate::{
    AttentionArgs, EvalArgs, PredictArgs, RsrlArgs, SweepArgs, SynthArgs, TrainArgs,
};

const PREPROCESS_NOTE: &str =
    "preprocess: squash-resize (triangle filter) to the network resolution, pixels scaled to [0, 1]; \
     a stand-in convention, since no preprocessing is pinned by the published architecture";

/// Flag value if given, else config value, else default.
fn resolve<T: FromStr>(flag: Option<T>, cfg: &mut ConfigFile, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    Ok(flag.or(cfg.take(key)?).unwrap_or(default))
}

fn resolve_opt<T: FromStr>(flag: Option<T>, cfg: &mut ConfigFile, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match flag {
        Some(v) => {
            cfg.take::<T>(key)?; // still recognized even when the flag wins
            Ok(Some(v))
        }
        None => cfg.take(key),
    }
}

fn require<T: FromStr>(flag: Option<T>, cfg: &mut ConfigFile, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    resolve_opt(flag, cfg, key)?
        .ok_or_else(|| Error::Config(format!("missing required setting {key:?} (flag --{key} or config key)")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn all_scores() -> Vec<u8> {
    (0..CLASS_COUNT as u8).map(|i| i + SCORE_OFFSET).collect()
}

/// `path,score` rows keyed by id, without requiring the image files to
/// exist; used for ground-truth and prediction files.
fn read_scores(path: &Path) -> Result<BTreeMap<String, u8>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == LABELS_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Format(format!(
                "{}: expected header {LABELS_HEADER:?}, found {h:?}",
                path.display()
            )))
        }
        None => return Err(Error::Format(format!("{}: empty score file", path.display()))),
    }
    let mut scores = BTreeMap::new();
    for (lineno, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let at = |msg: String| Error::Format(format!("{} line {}: {msg}", path.display(), lineno + 1));
        let (id, score) = line.split_once(',').ok_or_else(|| at(format!("expected path,score, found {line:?}")))?;
        let score: u8 = score.trim().parse().map_err(|_| at(format!("bad score {score:?}")))?;
        if !(2..=9).contains(&score) {
            return Err(at(format!("score {score} outside 2..=9")));
        }
        if scores.insert(id.to_string(), score).is_some() {
            return Err(at(format!("duplicate id {id:?}")));
        }
    }
    if scores.is_empty() {
        return Err(Error::Data(format!("{}: no score rows", path.display())));
    }
    Ok(scores)
}

/// Loads `dir/labels.csv` and decodes every image at the given resolution.
fn load_materialized(dir: &Path, resolution: usize) -> Result<(LabeledDataset, MaterializedDataset<f32>)> {
    let labeled = load_dataset(dir, &dir.join(LABELS_FILE))?;
    let mat = materialize::<f32>(&labeled, &PreprocessSpec::plain(resolution))?;
    Ok((labeled, mat))
}

// --------------------------------------------------------------------- train

pub fn cmd_train(args: TrainArgs, cfg: &mut ConfigFile) -> Result<()> {
    let data = require(args.data, cfg, "data")?;
    let out = resolve(args.out, cfg, "out", PathBuf::from("train-out"))?;
    let variant = match resolve_opt(args.variant, cfg, "variant")? {
        Some(s) => Variant::parse(&s)?,
        None => Variant::B4,
    };
    let defaults = TrainSettings::default();
    let seed: u64 = resolve(args.seed, cfg, "seed", 0)?;
    let settings = TrainSettings {
        epochs: resolve(args.epochs, cfg, "epochs", defaults.epochs)?,
        batch_size: resolve(args.batch_size, cfg, "batch-size", defaults.batch_size)?,
        shuffle_seed: seed,
        learning_rate: resolve(args.learning_rate, cfg, "learning-rate", defaults.learning_rate)?,
        momentum: resolve(args.momentum, cfg, "momentum", defaults.momentum)?,
        snapshot_every: None,
    };
    cfg.finish()?;

    let mut net = build::<f32>(&ModelConfig::for_variant(variant), seed)?;
    let resolution = net.shape().input_resolution;
    let (_, mat) = load_materialized(&data, resolution)?;
    let run = train(&mut net, &mat, None, &settings)?;

    let mut eff = EffectiveConfig::new("train");
    eff.set_path("data", &data);
    eff.set_path("out", &out);
    eff.set("variant", variant.as_str());
    eff.set("epochs", settings.epochs);
    eff.set("batch-size", settings.batch_size);
    eff.set("learning-rate", settings.learning_rate);
    eff.set("momentum", settings.momentum);
    eff.set("seed", seed);
    eff.note(PREPROCESS_NOTE);
    eff.write(&out)?;

    let ckpt = out.join("model.ckpt");
    save_checkpoint(&net, &ckpt)?;
    let mut losses = String::new();
    for (epoch, loss) in run.loss_trace.iter().enumerate() {
        let _ = writeln!(losses, "{},{loss}", epoch + 1);
    }
    write_text(&out.join("loss.csv"), &losses)?;

    println!(
        "trained {} for {} epochs on {} images: loss {:.4} -> {:.4}",
        variant.as_str(),
        settings.epochs,
        mat.len(),
        run.loss_trace.first().copied().unwrap_or(f64::NAN),
        run.loss_trace.last().copied().unwrap_or(f64::NAN),
    );
    println!("wrote {} and {}", ckpt.display(), out.join("loss.csv").display());
    Ok(())
}

// ---------------------------------------------------------------------- rsrl

pub fn cmd_rsrl(args: RsrlArgs, cfg: &mut ConfigFile) -> Result<()> {
    let data = require(args.data, cfg, "data")?;
    let val: Option<PathBuf> = resolve_opt(args.val, cfg, "val")?;
    let val_fraction: Option<f64> = resolve_opt(args.val_fraction, cfg, "val-fraction")?;
    let out = resolve(args.out, cfg, "out", PathBuf::from("rsrl-out"))?;
    let init: Option<PathBuf> = resolve_opt(args.init, cfg, "init")?;
    let variant_raw = resolve_opt(args.variant, cfg, "variant")?;
    if init.is_some() && variant_raw.is_some() {
        return Err(Error::Config("pass either init (a checkpoint) or variant (a fresh network), not both".into()));
    }
    let plan_defaults = RsrlPlan::default();
    let defaults = TrainSettings::default();
    let seed: u64 = resolve(args.seed, cfg, "seed", 0)?;
    let plan = RsrlPlan {
        iterations: resolve(args.iterations, cfg, "iterations", plan_defaults.iterations)?,
        drop_fraction: resolve(args.drop_fraction, cfg, "drop-fraction", plan_defaults.drop_fraction)?,
        train: TrainSettings {
            epochs: resolve(args.epochs, cfg, "epochs", defaults.epochs)?,
            batch_size: resolve(args.batch_size, cfg, "batch-size", defaults.batch_size)?,
            shuffle_seed: seed,
            learning_rate: resolve(args.learning_rate, cfg, "learning-rate", defaults.learning_rate)?,
            momentum: resolve(args.momentum, cfg, "momentum", defaults.momentum)?,
            snapshot_every: None,
        },
    };
    cfg.finish()?;

    let net = match &init {
        Some(path) => load_checkpoint(path)?,
        None => {
            let variant = match &variant_raw {
                Some(s) => Variant::parse(s)?,
                None => Variant::B4,
            };
            build::<f32>(&ModelConfig::for_variant(variant), seed)?
        }
    };
    let resolution = net.shape().input_resolution;
    let spec = PreprocessSpec::plain(resolution);
    let (train_mat, val_mat) = match (&val, val_fraction) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("pass either val (a directory) or val-fraction (a held-out share), not both".into()))
        }
        (None, None) => {
            return Err(Error::Config("a validation source is required: --val DIR or --val-fraction X".into()))
        }
        (Some(dir), None) => {
            let (_, train_mat) = load_materialized(&data, resolution)?;
            let (_, val_mat) = load_materialized(dir, resolution)?;
            (train_mat, val_mat)
        }
        (None, Some(f)) => {
            let labeled = load_dataset(&data, &data.join(LABELS_FILE))?;
            let (train_set, val_set, rest) = labeled.split((1.0 - f, f, 0.0), seed)?;
            if !rest.is_empty() {
                // Per-class counts are floored, so a fractional remainder
                // can fall into neither split.
                println!("note: {} sample(s) fell outside both splits and are unused", rest.len());
            }
            (materialize::<f32>(&train_set, &spec)?, materialize::<f32>(&val_set, &spec)?)
        }
    };
    let (best, trace) = rsrl(&net, &train_mat, &val_mat, &plan)?;

    let mut eff = EffectiveConfig::new("rsrl");
    eff.set_path("data", &data);
    match (&val, val_fraction) {
        (Some(dir), _) => eff.set_path("val", dir),
        (_, Some(f)) => eff.set("val-fraction", f),
        (None, None) => unreachable!(),
    }
    eff.set_path("out", &out);
    match &init {
        Some(path) => eff.set_path("init", path),
        None => eff.set("variant", net.variant().map(Variant::as_str).unwrap_or("custom")),
    }
    eff.set("iterations", plan.iterations);
    eff.set("drop-fraction", plan.drop_fraction);
    eff.set("epochs", plan.train.epochs);
    eff.set("batch-size", plan.train.batch_size);
    eff.set("learning-rate", plan.train.learning_rate);
    eff.set("momentum", plan.train.momentum);
    eff.set("seed", seed);
    eff.note(PREPROCESS_NOTE);
    eff.write(&out)?;

    save_checkpoint(&best, &out.join("best.ckpt"))?;
    write_text(&out.join("trace.log"), &serialize_trace(&trace))?;

    match trace.best_iteration {
        Some(round) => {
            let f1 = trace.iterations[round - 1].val_macro_f1;
            println!(
                "ran {} rebalancing rounds; kept round {round} (validation macro F1 {f1:.4})",
                trace.iterations.len()
            );
        }
        None => println!("ran 0 rebalancing rounds; kept the starting network"),
    }
    println!("wrote {} and {}", out.join("best.ckpt").display(), out.join("trace.log").display());
    Ok(())
}

// ------------------------------------------------------------------- predict

pub fn cmd_predict(args: PredictArgs, cfg: &mut ConfigFile) -> Result<()> {
    let model = require(args.model, cfg, "model")?;
    let data = require(args.data, cfg, "data")?;
    let out = resolve(args.out, cfg, "out", PathBuf::from("predict-out"))?;
    let batch_size: usize = resolve(args.batch_size, cfg, "batch-size", 8)?;
    cfg.finish()?;

    let net = load_checkpoint(&model)?;
    let (_, mat) = load_materialized(&data, net.shape().input_resolution)?;
    let name = model.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
    let table = probability_table(&net, &mat, batch_size, &name)?;

    let mut eff = EffectiveConfig::new("predict");
    eff.set_path("model", &model);
    eff.set_path("data", &data);
    eff.set_path("out", &out);
    eff.set("batch-size", batch_size);
    eff.note(PREPROCESS_NOTE);
    eff.write(&out)?;

    export_probabilities(&table, &out.join("probabilities.csv"))?;
    let mut scores = String::from(LABELS_HEADER);
    scores.push('\n');
    for (id, score) in predict(&table)? {
        let _ = writeln!(scores, "{id},{score}");
    }
    write_text(&out.join("scores.csv"), &scores)?;

    println!("predicted {} images with {}", mat.len(), name);
    println!(
        "wrote {} and {}",
        out.join("probabilities.csv").display(),
        out.join("scores.csv").display()
    );
    Ok(())
}

// ------------------------------------------------------------ ensemble-sweep

pub fn cmd_ensemble_sweep(args: SweepArgs, cfg: &mut ConfigFile) -> Result<()> {
    let table_a = require(args.table_a, cfg, "table-a")?;
    let table_b = require(args.table_b, cfg, "table-b")?;
    let truth_path = require(args.truth, cfg, "truth")?;
    let out = resolve(args.out, cfg, "out", PathBuf::from("sweep-out"))?;
    let step: f64 = resolve(args.step, cfg, "step", 0.1)?;
    cfg.finish()?;

    let a = import_probabilities(&table_a)?;
    let b = import_probabilities(&table_b)?;
    let truth = read_scores(&truth_path)?;
    let result = sweep(&a, &b, &truth, step)?;

    let mut eff = EffectiveConfig::new("ensemble-sweep");
    eff.set_path("table-a", &table_a);
    eff.set_path("table-b", &table_b);
    eff.set_path("truth", &truth_path);
    eff.set_path("out", &out);
    eff.set("step", step);
    eff.write(&out)?;

    // One row per grid point: w1, w2, macro F1 over the fused predictions.
    let mut rows = String::new();
    for (w1, f1) in &result.grid {
        let _ = writeln!(rows, "{w1},{},{f1}", 1.0 - w1);
    }
    write_text(&out.join("sweep.csv"), &rows)?;

    let solo_b = result.grid.first().map(|g| g.1).unwrap_or(f64::NAN);
    let solo_a = result.grid.last().map(|g| g.1).unwrap_or(f64::NAN);
    let gain = |baseline: f64| match improvement(result.best_f1, baseline) {
        Ok(pct) => format!("{pct}"),
        Err(_) => "n/a".to_string(),
    };
    let summary = format!(
        "rows={}\nbest_w1={}\nbest_w2={}\nbest_macro_f1={}\n\
         table_a_macro_f1={solo_a}\ntable_b_macro_f1={solo_b}\n\
         improvement_over_a_pct={}\nimprovement_over_b_pct={}\n",
        result.grid.len(),
        result.best.w1,
        result.best.w2,
        result.best_f1,
        gain(solo_a),
        gain(solo_b),
    );
    write_text(&out.join("summary.txt"), &summary)?;

    println!(
        "swept {} weights: best w1 {} with macro F1 {:.4} ({} alone {:.4}, {} alone {:.4})",
        result.grid.len(),
        result.best.w1,
        result.best_f1,
        a.model(),
        solo_a,
        b.model(),
        solo_b,
    );
    println!("wrote {} and {}", out.join("sweep.csv").display(), out.join("summary.txt").display());
    Ok(())
}

// ---------------------------------------------------------------------- eval

pub fn cmd_eval(args: EvalArgs, cfg: &mut ConfigFile) -> Result<()> {
    let truth_path = require(args.truth, cfg, "truth")?;
    let pred_path = require(args.pred, cfg, "pred")?;
    let out: Option<PathBuf> = resolve_opt(args.out, cfg, "out")?;
    let binary = args.binarize || cfg.take::<bool>("binarize")?.unwrap_or(false);
    let threshold: u8 = resolve(args.threshold, cfg, "threshold", BINARIZE_THRESHOLD)?;
    cfg.finish()?;

    let truth = read_scores(&truth_path)?;
    let pred = read_scores(&pred_path)?;
    for id in pred.keys() {
        if !truth.contains_key(id) {
            return Err(Error::Data(format!("prediction for id {id:?} has no ground-truth row")));
        }
    }
    for id in truth.keys() {
        if !pred.contains_key(id) {
            return Err(Error::Data(format!("no prediction for id {id:?}")));
        }
    }
    let truth_vec: Vec<u8> = truth.values().copied().collect();
    let pred_vec: Vec<u8> = truth.keys().map(|id| pred[id]).collect();

    let text = if binary {
        let t = binarize(&truth_vec, threshold)?;
        let p = binarize(&pred_vec, threshold)?;
        evaluate(&t, &p, &[QualityClass::Low, QualityClass::High])?.render_text()
    } else {
        evaluate(&truth_vec, &pred_vec, &all_scores())?.render_text()
    };
    print!("{text}");

    if let Some(dir) = out {
        let mut eff = EffectiveConfig::new("eval");
        eff.set_path("truth", &truth_path);
        eff.set_path("pred", &pred_path);
        eff.set_path("out", &dir);
        eff.set("binarize", binary);
        if binary {
            eff.set("threshold", threshold);
        }
        eff.write(&dir)?;
        write_text(&dir.join("report.txt"), &text)?;
        println!("wrote {}", dir.join("report.txt").display());
    }
    Ok(())
}

// ----------------------------------------------------------------- attention

pub fn cmd_attention(args: AttentionArgs, cfg: &mut ConfigFile) -> Result<()> {
    let model = require(args.model, cfg, "model")?;
    let data = require(args.data, cfg, "data")?;
    let out = resolve(args.out, cfg, "out", PathBuf::from("attention-out"))?;
    let selector: ChannelSelector = resolve(args.selector, cfg, "selector", ChannelSelector::Mean)?;
    let alpha: f64 = resolve(args.alpha, cfg, "alpha", 0.5)?;
    cfg.finish()?;

    let net = load_checkpoint(&model)?;
    let resolution = net.shape().input_resolution;
    let (labeled, mat) = load_materialized(&data, resolution)?;

    let mut eff = EffectiveConfig::new("attention");
    eff.set_path("model", &model);
    eff.set_path("data", &data);
    eff.set_path("out", &out);
    eff.set("selector", selector.name());
    eff.set("alpha", alpha);
    eff.note(PREPROCESS_NOTE);
    eff.write(&out)?;

    let mut meta = String::from("path,selected_channel,source_resolution,selector\n");
    for i in 0..mat.len() {
        let id = &mat.ids[i];
        let batch = Tensor::from_vec([1, 3, resolution, resolution], mat.images.sample(i).to_vec())?;
        let artifacts = net.forward(&batch, Mode::Infer)?;
        let maps = extract(&artifacts, resolution, selector)?;

        // The overlay base is the image exactly as the network saw it.
        let src_path = labeled.root().join(id);
        let src = image::open(&src_path)
            .map_err(|e| Error::Data(format!("cannot decode {}: {e}", src_path.display())))?
            .to_rgb8();
        let base =
            image::imageops::resize(&src, resolution as u32, resolution as u32, image::imageops::FilterType::Triangle);

        let stem = id.replace('/', "__");
        let save = |img: &image::RgbImage, path: &Path| -> Result<()> {
            img.save(path).map_err(|e| Error::io(path, std::io::Error::other(e)))
        };
        save(&render_overlay(&base, &maps.ffp, alpha)?, &out.join(format!("{stem}.ffp.png")))?;
        save(&render_overlay(&base, &maps.air, alpha)?, &out.join(format!("{stem}.air.png")))?;
        write_text(&out.join(format!("{stem}.ffp.txt")), &maps.ffp.to_text())?;
        write_text(&out.join(format!("{stem}.air.txt")), &maps.air.to_text())?;

        // Raw per-channel planes before upsampling/normalization, one line
        // per channel, so the channel choice can be audited from files.
        let [_, channels, _, _] = artifacts.last_conv_maps.dims();
        let mut planes = String::new();
        for c in 0..channels {
            let plane = channel_plane(&artifacts.last_conv_maps, c)?;
            let row: Vec<String> = plane.values().iter().map(|v| v.to_string()).collect();
            let _ = writeln!(planes, "{}", row.join(" "));
        }
        write_text(&out.join(format!("{stem}.channels.txt")), &planes)?;

        let _ = writeln!(meta, "{id},{},{},{}", maps.selected_channel, maps.source_resolution, selector.name());
    }
    write_text(&out.join("attention.csv"), &meta)?;

    println!("wrote attention maps for {} images to {}", mat.len(), out.display());
    Ok(())
}

// --------------------------------------------------------------------- synth

fn parse_imbalance(raw: &str) -> Result<ImbalanceProfile> {
    let mut profile = BTreeMap::new();
    for part in raw.split(',') {
        let (score, fraction) = part
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("imbalance part {part:?}: expected score:fraction")))?;
        let score: u8 = score
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("imbalance part {part:?}: bad score {score:?}")))?;
        let fraction: f64 = fraction
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("imbalance part {part:?}: bad fraction {fraction:?}")))?;
        if profile.insert(score, fraction).is_some() {
            return Err(Error::Config(format!("imbalance lists score {score} twice")));
        }
    }
    Ok(ImbalanceProfile(profile))
}

pub fn cmd_synth(args: SynthArgs, cfg: &mut ConfigFile) -> Result<()> {
    let out = resolve(args.out, cfg, "out", PathBuf::from("synth-out"))?;
    let count: usize = resolve(args.count, cfg, "count", 200)?;
    let resolution: usize = resolve(args.resolution, cfg, "resolution", 192)?;
    let seed: u64 = resolve(args.seed, cfg, "seed", 0)?;
    let imbalance_raw: Option<String> = resolve_opt(args.imbalance, cfg, "imbalance")?;
    cfg.finish()?;
    let profile = imbalance_raw.as_deref().map(parse_imbalance).transpose()?;

    let data = synthesize(&out, count, resolution, seed, profile.as_ref())?;

    let mut eff = EffectiveConfig::new("synth");
    eff.set_path("out", &out);
    eff.set("count", count);
    eff.set("resolution", resolution);
    eff.set("seed", seed);
    eff.set("imbalance", imbalance_raw.as_deref().unwrap_or("none"));
    eff.write(&out)?;

    let counts: Vec<String> = all_scores()
        .iter()
        .map(|&s| format!("{s}:{}", data.count_of(s)))
        .collect();
    println!("wrote {count} images at {resolution}x{resolution} to {} ({})", out.display(), counts.join(" "));
    Ok(())
}
