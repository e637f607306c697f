use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;

use lesionmap_core::dataset::{
    self, class_distribution, load_labeled_dataset, load_labels, read_examples, stratified_split, synth_generate,
    write_labels_csv, ClassDistribution, DatasetRecord,
};
use lesionmap_core::evaluation::{default_class_names, render_csv, render_text, EvalReport, ReportRow};
use lesionmap_core::fsutil::write_atomic;
use lesionmap_core::gradcam::{explain as gradcam_explain, overlay, DEFAULT_BLEND};
use lesionmap_core::imaging::{clahe, intensity_histogram, read_image, resize_bilinear, write_image, ClaheParams, Histogram, Normalization};
use lesionmap_core::model::{load_weights, save_weights, ModelConfig, ModelGraph};
use lesionmap_core::training::{infer_scores, prepare_input, train as run_training, OptimizerKind, TrainConfig};

use crate::settings::{Settings, UsageError};
use crate::{EvalArgs, ExplainArgs, PreprocessArgs, SplitArgs, StatsArgs, SynthArgs, TrainArgs};

/// `path` with `suffix` appended to its file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(path.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

fn print_distribution(d: &ClassDistribution) {
    print!("{}", d.to_table(&default_class_names(d.counts.len())));
}

pub fn synth(a: SynthArgs, cfg: Option<&Path>) -> Result<()> {
    let mut s = Settings::load(cfg, &["out", "count", "classes", "size", "seed"])?;
    let out = s.path("out", a.out)?;
    let count = s.required("count", a.count)?;
    let classes = s.or("classes", a.classes, dataset::NUM_GRADES)?;
    let size = s.or("size", a.size, 64)?;
    let seed = s.or("seed", a.seed, 0)?;
    info!("synth config:\n{}", s.resolved());
    let records = synth_generate(&out, count, classes, size, seed)?;
    println!("wrote {} images, labels.csv and lesions.csv to {}", records.len(), out.display());
    print_distribution(&class_distribution(&records, classes));
    Ok(())
}

pub fn stats(a: StatsArgs, cfg: Option<&Path>) -> Result<()> {
    let mut s = Settings::load(cfg, &["labels"])?;
    let labels = s.path("labels", a.labels)?;
    let rows = load_labels(&labels)?;
    print_distribution(&ClassDistribution::from_labels(rows.iter().map(|r| r.label), dataset::NUM_GRADES));
    Ok(())
}

fn parse_tiles(text: &str) -> Result<(usize, usize)> {
    let parse = |t: &str| t.trim().parse::<usize>().ok().filter(|&n| n > 0);
    let tiles = match text.split_once(['x', 'X']) {
        Some((r, c)) => parse(r).zip(parse(c)),
        None => parse(text).map(|n| (n, n)),
    };
    tiles.ok_or_else(|| UsageError(format!("--tiles expects N or ROWSxCOLS with positive values, got {text:?}")).into())
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "ppm" | "pgm" | "pnm")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn preprocess(a: PreprocessArgs, cfg: Option<&Path>) -> Result<()> {
    let mut s = Settings::load(cfg, &["in", "out", "clahe", "tiles", "clip", "resize", "hist-csv"])?;
    let input = s.path("in", a.input)?;
    let out = s.path("out", a.out)?;
    let use_clahe = s.switch("clahe", a.clahe)?;
    let tiles_text = s.or("tiles", a.tiles, "8".to_string())?;
    let params = ClaheParams {
        tiles: parse_tiles(&tiles_text)?,
        clip_factor: s.or("clip", a.clip, ClaheParams::default().clip_factor)?,
    };
    let resize = s.opt("resize", a.resize)?;
    let hist_csv = s.opt_path("hist-csv", a.hist_csv)?;
    if resize == Some(0) {
        return Err(UsageError("--resize must be positive".into()).into());
    }
    info!("preprocess config:\n{}", s.resolved());

    let files = list_images(&input)?;
    if files.is_empty() {
        bail!("no PNG/PPM/PGM images in {}", input.display());
    }
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let hists = files
        .par_iter()
        .map(|path| -> Result<(Histogram, Histogram)> {
            let img = read_image(path).with_context(|| format!("reading {}", path.display()))?;
            let before = intensity_histogram(&img);
            let mut img = if use_clahe { clahe(&img, &params)? } else { img };
            if let Some(n) = resize {
                img = resize_bilinear(&img, n, n)?;
            }
            let after = intensity_histogram(&img);
            let dest = out.join(path.file_name().expect("listed files have names"));
            write_image(&dest, &img).with_context(|| format!("writing {}", dest.display()))?;
            Ok((before, after))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut before, mut after) = (Histogram::default(), Histogram::default());
    for (b, a) in &hists {
        before.merge(b);
        after.merge(a);
    }
    println!(
        "processed {} images into {}; luma chi-square to uniform: {:.1} before, {:.1} after",
        files.len(),
        out.display(),
        before.chi_square_to_uniform(),
        after.chi_square_to_uniform()
    );
    if let Some(path) = hist_csv {
        let mut csv = String::from("bin,before,after\n");
        for (i, (b, a)) in before.bins().iter().zip(after.bins()).enumerate() {
            let _ = writeln!(csv, "{i},{b},{a}");
        }
        write_atomic(&path, csv.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn split(a: SplitArgs, cfg: Option<&Path>) -> Result<()> {
    let mut s = Settings::load(cfg, &["labels", "out", "train", "val", "test", "seed"])?;
    let labels = s.path("labels", a.labels)?;
    let out = s.path("out", a.out)?;
    let (dt, dv, ds) = dataset::DEFAULT_FRACTIONS;
    let fractions = (s.or("train", a.train, dt)?, s.or("val", a.val, dv)?, s.or("test", a.test, ds)?);
    let seed = s.or("seed", a.seed, 0)?;
    info!("split config:\n{}", s.resolved());

    let records: Vec<DatasetRecord> = load_labels(&labels)?
        .into_iter()
        .map(|r| DatasetRecord {
            path: PathBuf::from(&r.id),
            id: r.id,
            label: r.label,
            boxes: Vec::new(),
        })
        .collect();
    let parts = stratified_split(&records, fractions, seed)?;
    for w in &parts.warnings {
        warn!("{w}");
    }
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for (name, part) in [("train", &parts.train), ("val", &parts.val), ("test", &parts.test)] {
        write_labels_csv(&out.join(format!("{name}.csv")), part)?;
        println!("{name}: {} records", part.len());
    }
    Ok(())
}

/// Explicit file, then the `<weights>.model` sidecar, then DeskNet.
fn resolve_model_config(explicit: Option<&Path>, weights: &Path) -> Result<ModelConfig> {
    let path = match explicit {
        Some(p) => Some(p.to_path_buf()),
        None => Some(sibling(weights, ".model")).filter(|p| p.is_file()),
    };
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            ModelConfig::parse(&text).with_context(|| format!("model config {}", p.display()))
        }
        None => Ok(ModelConfig::desknet(dataset::NUM_GRADES)),
    }
}

fn load_model(explicit: Option<&Path>, weights: &Path) -> Result<ModelGraph> {
    let config = resolve_model_config(explicit, weights)?;
    load_weights(weights, config).with_context(|| format!("loading weights {}", weights.display()))
}

pub fn train(a: TrainArgs, cfg: Option<&Path>) -> Result<()> {
    let mut s = Settings::load(
        cfg,
        &[
            "images",
            "labels",
            "model-config",
            "epochs",
            "seed",
            "out",
            "batch-size",
            "optimizer",
            "lr",
            "momentum",
            "hflip",
            "vflip",
        ],
    )?;
    let images = s.path("images", a.images)?;
    let labels = s.path("labels", a.labels)?;
    let model_config = s.opt_path("model-config", a.model_config)?;
    let out = s.path("out", a.out)?;
    let defaults = TrainConfig::default();
    let seed = s.or("seed", a.seed, defaults.seed)?;
    let tc = TrainConfig {
        epochs: s.or("epochs", a.epochs, defaults.epochs)?,
        batch_size: s.or("batch-size", a.batch_size, defaults.batch_size)?,
        optimizer: s
            .or("optimizer", a.optimizer, defaults.optimizer.to_string())?
            .parse::<OptimizerKind>()
            .map_err(UsageError)?,
        learning_rate: s.or("lr", a.lr, defaults.learning_rate)?,
        momentum: s.or("momentum", a.momentum, defaults.momentum)?,
        seed,
        hflip: s.or("hflip", a.hflip, defaults.hflip)?,
        vflip: s.or("vflip", a.vflip, defaults.vflip)?,
        normalization: Normalization::default(),
    };
    info!("train config:\n{}", s.resolved());

    let records = load_labeled_dataset(&images, &labels)?;
    if records.is_empty() {
        bail!("{} has no records", labels.display());
    }
    let config = match &model_config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ModelConfig::parse(&text).with_context(|| format!("model config {}", p.display()))?
        }
        None => {
            let k = records.iter().map(|r| r.label).max().unwrap_or(0) + 1;
            ModelConfig::desknet(k.max(2))
        }
    }
    .with_seed(seed);
    let mut model = ModelGraph::build(config)?;
    info!(
        "model: {} parameters, {} classes, input {:?}",
        model.num_parameters(),
        model.num_classes(),
        model.input_shape()
    );
    let examples = read_examples(&records)?;
    let log = run_training(&mut model, &examples, &tc)?;

    save_weights(&model, &out)?;
    let model_path = sibling(&out, ".model");
    write_atomic(&model_path, model.config().to_string().as_bytes())
        .with_context(|| format!("writing {}", model_path.display()))?;
    let run_path = sibling(&out, ".run");
    write_atomic(&run_path, s.resolved().to_string().as_bytes())
        .with_context(|| format!("writing {}", run_path.display()))?;
    let log_path = sibling(&out, ".epochs.csv");
    log.write_csv(&log_path)
        .with_context(|| format!("writing {}", log_path.display()))?;
    if let Some(last) = log.epochs.last() {
        println!(
            "trained {} epochs: loss {:.4}, train accuracy {:.4}",
            last.epoch, last.mean_loss, last.train_accuracy
        );
    }
    println!("weights: {}", out.display());
    Ok(())
}

pub fn eval(a: EvalArgs, cfg: Option<&Path>) -> Result<()> {
    let mut s = Settings::load(cfg, &["images", "labels", "weights", "report", "model-config", "name"])?;
    let images = s.path("images", a.images)?;
    let labels = s.path("labels", a.labels)?;
    let weights = s.path("weights", a.weights)?;
    let report_path = s.path("report", a.report)?;
    let model_config = s.opt_path("model-config", a.model_config)?;
    let default_name = weights
        .file_stem()
        .map_or_else(|| "model".to_string(), |n| n.to_string_lossy().into_owned());
    let name = s.or("name", a.name, default_name)?;
    info!("eval config:\n{}", s.resolved());

    let model = load_model(model_config.as_deref(), &weights)?;
    let records = load_labeled_dataset(&images, &labels)?;
    if records.is_empty() {
        bail!("{} has no records", labels.display());
    }
    let examples = read_examples(&records)?;
    let imgs: Vec<_> = examples.into_iter().map(|e| e.image).collect();
    let scores = infer_scores(&model, &imgs, &Normalization::default())?;
    let truth: Vec<usize> = records.iter().map(|r| r.label).collect();
    let k = model.num_classes();
    let report = EvalReport::from_scores(&scores, &truth, k)?;
    let names = default_class_names(k);
    let rows = [ReportRow::new(name, &report)];

    print!("{}", render_text(&rows, &names));
    println!("\nconfusion matrix (rows: true class, columns: predicted)");
    for (i, row) in report.confusion.cells().iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
        println!("{:<14}{}", names[i], cells.join(""));
    }
    write_atomic(&report_path, render_csv(&rows, &names).as_bytes())
        .with_context(|| format!("writing {}", report_path.display()))?;
    Ok(())
}

pub fn explain(a: ExplainArgs, cfg: Option<&Path>) -> Result<()> {
    let mut s = Settings::load(cfg, &["image", "weights", "class", "blend", "out", "model-config"])?;
    let image = s.path("image", a.image)?;
    let weights = s.path("weights", a.weights)?;
    let class = s.opt("class", a.class)?;
    let blend = s.or("blend", a.blend, DEFAULT_BLEND)?;
    let out = s.path("out", a.out)?;
    let model_config = s.opt_path("model-config", a.model_config)?;
    info!("explain config:\n{}", s.resolved());

    let model = load_model(model_config.as_deref(), &weights)?;
    let img = read_image(&image).with_context(|| format!("reading {}", image.display()))?;
    let x = prepare_input(&img, &model, &Normalization::default())?;
    let e = gradcam_explain(&model, &x, class, img.height(), img.width())?;
    let blended = overlay(&img, &e.heatmap, blend)?;

    let as_dir = out.as_os_str().to_string_lossy().ends_with(std::path::MAIN_SEPARATOR) || out.is_dir();
    if as_dir {
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        write_image(&out.join("overlay.png"), &blended)?;
        write_image(&out.join("heatmap.png"), &e.heatmap.to_image())?;
    } else {
        write_image(&out, &blended).with_context(|| format!("writing {}", out.display()))?;
    }
    let names = default_class_names(model.num_classes());
    let scores: Vec<String> = e.scores.data().iter().map(|v| format!("{v:.4}")).collect();
    println!("class {} ({}), scores [{}]", e.class, names[e.class], scores.join(", "));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiles_syntax() {
        assert_eq!(parse_tiles("8").unwrap(), (8, 8));
        assert_eq!(parse_tiles("4x6").unwrap(), (4, 6));
        assert!(parse_tiles("0").is_err());
        assert!(parse_tiles("4x").is_err());
    }

    #[test]
    fn sibling_appends() {
        assert_eq!(sibling(Path::new("a/w.bin"), ".model"), PathBuf::from("a/w.bin.model"));
    }
}
