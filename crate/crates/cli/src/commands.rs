use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context as _, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde_json::json;
use skelnet::apps::{
    decode_labels, detection_rate_curve, encode_labels, fsds_scale_estimate, group_segments,
    read_boxes, read_proposals, reconstruct_mask, rescore_proposals, write_detection_rate,
    write_scored,
};
use skelnet::config::{RunConfig, SeedStream};
use skelnet::dataset::{
    load_split, read_gray_png, to_unit, write_gray_png, write_rgb_png, write_synthetic_dataset,
    Manifest, Sample, Split, TargetCache,
};
use skelnet::eval::{
    match_pairs_with, matched_scale_errors, median, pr_curve, read_pr_csv, seg_scores, write_pr_csv,
};
use skelnet::grid::{connected_components, BinaryMask, Grid};
use skelnet::gt::ShapeMix;
use skelnet::inference::{nms_thin, predict_image, threshold_binarize};
use skelnet::network::{
    load_checkpoint, read_loss_totals, save_checkpoint, LossLog, NetworkParams, TrainSample,
    Trainer,
};
use skelnet::plot::{line_plot_svg, pr_plot_svg, scale_overlay, Axes, Series};
use skelnet::tensor::io::atomic_write;
use skelnet::tensor::SgdMomentum;

use crate::responses::{
    load_response, missing_ids, save_response, ResponseIndex, StoredResponse, CHANNELS,
};
use crate::{
    DatagenArgs, EvalArgs, GlobalArgs, InferArgs, PlotArgs, RescoreArgs, SegmentArgs, Shapes,
    SplitArg, TrainArgs,
};

pub struct Context {
    pub cfg: RunConfig,
    pub force: bool,
}

impl Context {
    pub fn new(global: &GlobalArgs) -> Result<Self> {
        let mut cfg = match &global.config {
            Some(path) => RunConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(seed) = global.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        if let Some(n) = global.threads {
            ensure!(n > 0, "--threads must be positive");
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()?;
        }
        Ok(Context {
            cfg,
            force: global.force,
        })
    }

    fn outputs(&self, sub: &str) -> PathBuf {
        self.cfg.paths.outputs.join(sub)
    }
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    atomic_write(path, serde_json::to_string_pretty(value)?.as_bytes())?;
    Ok(())
}

pub fn config(ctx: &Context) -> Result<()> {
    println!("{}", ctx.cfg.to_json());
    Ok(())
}

pub fn datagen(ctx: &Context, a: DatagenArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut synth = cfg.data.synth.clone();
    if let Some(size) = a.size {
        synth.size = size;
    }
    if let Some(shapes) = a.shapes {
        let only = |r, e, p| ShapeMix {
            ribbons: r,
            ellipses: e,
            polygons: p,
        };
        synth.mix = match shapes {
            Shapes::Mixed => ShapeMix::default(),
            Shapes::Ribbons => ShapeMix::RIBBONS,
            Shapes::Ellipses => only(0.0, 1.0, 0.0),
            Shapes::Polygons => only(0.0, 0.0, 1.0),
        };
    }
    let out = a.out.unwrap_or_else(|| cfg.paths.dataset.clone());
    let cache = cfg.data.cache_targets.then(|| TargetCache {
        receptive_fields: cfg.backbone.receptive_fields(),
        rho: cfg.train.rho,
        overflow: cfg.train.overflow,
    });
    let train = a.train.unwrap_or(cfg.data.train);
    let test = a.test.unwrap_or(cfg.data.test);
    let seed = cfg.stream_seed(SeedStream::Datagen);
    write_synthetic_dataset(&out, seed, train, test, &synth, cache.as_ref(), ctx.force)?;
    println!(
        "{train} train / {test} test {0}x{0} images in {1}",
        synth.size,
        out.display()
    );
    Ok(())
}

fn load_samples(dir: &Path, split: Split) -> Result<(Manifest, Vec<Sample>)> {
    let manifest =
        Manifest::load(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let samples = load_split(dir, &manifest, split)?;
    Ok((manifest, samples))
}

pub fn train(ctx: &Context, a: TrainArgs) -> Result<()> {
    let mut cfg = ctx.cfg.clone();
    if let Some(n) = a.iterations {
        cfg.train.max_iterations = n;
    }
    if let Some(l) = a.lambda {
        cfg.train.lambda = l;
    }
    if a.fsds {
        cfg.train.lambda = 0.0;
    }
    if a.no_augment {
        cfg.train.augmentation = skelnet::gt::AugmentationSpec::none();
    }
    cfg.validate()?;

    let data = a.data.unwrap_or_else(|| cfg.paths.dataset.clone());
    let (_, mut samples) = load_samples(&data, Split::Train)?;
    if let Some(n) = a.limit {
        samples.truncate(n);
    }
    ensure!(
        !samples.is_empty(),
        "no training samples in {}",
        data.display()
    );
    let samples: Vec<TrainSample> = samples
        .into_iter()
        .map(|s| TrainSample {
            image: to_unit(&s.image),
            scale: s.scale,
        })
        .collect();

    let out = a.out.unwrap_or_else(|| cfg.paths.checkpoint.clone());
    if out.exists() && !ctx.force && a.resume.as_deref() != Some(out.as_path()) {
        bail!(
            "{} already exists (use --force to overwrite)",
            out.display()
        );
    }
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let echo = serde_json::to_value(&cfg)?;
    let shuffle_seed = cfg.stream_seed(SeedStream::Shuffle);
    let mut trainer = match &a.resume {
        Some(path) => {
            let ck =
                load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            ensure!(
                ck.header.backbone == cfg.backbone,
                "checkpoint backbone differs from the configured one"
            );
            if ck.header.config != echo {
                warn!("resuming with a configuration that differs from the checkpoint's");
            }
            info!("resuming from iteration {}", ck.header.iteration);
            Trainer::resume(
                ck.params,
                ck.optimizer,
                ck.header.iteration,
                cfg.train.clone(),
                shuffle_seed,
            )?
        }
        None => {
            let params = NetworkParams::init(&cfg.backbone, cfg.stream_seed(SeedStream::Init))?;
            Trainer::resume(
                params,
                SgdMomentum::new(),
                0,
                cfg.train.clone(),
                shuffle_seed,
            )?
        }
    };

    let loss_path = a.loss_csv.unwrap_or_else(|| out.with_extension("loss.csv"));
    let append = a.resume.is_some() && loss_path.exists();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&loss_path)
        .with_context(|| format!("opening {}", loss_path.display()))?;
    let mut log = LossLog::new(file, cfg.backbone.side_count(), !append)?;

    let fsds = cfg.train.fsds_mode();
    if fsds {
        info!("FSDS mode: lambda = 0, classification only");
    }
    let every = cfg.train.checkpoint_every;
    let start = std::time::Instant::now();
    let mut recent = 0.0;
    trainer.run(&samples, |t, loss| {
        log.record(t.iteration, loss)?;
        recent += loss.total;
        if t.iteration % 100 == 0 {
            info!(
                "iteration {} loss {:.4} ({:.0} s)",
                t.iteration,
                recent / 100.0,
                start.elapsed().as_secs_f64()
            );
            recent = 0.0;
        }
        if every > 0 && t.iteration % every == 0 {
            log.flush()?;
            save_checkpoint(
                &out,
                &t.params,
                &t.optimizer,
                t.iteration,
                fsds,
                echo.clone(),
            )?;
        }
        Ok(())
    })?;
    log.flush()?;
    save_checkpoint(
        &out,
        &trainer.params,
        &trainer.optimizer,
        trainer.iteration,
        fsds,
        echo,
    )?;
    println!(
        "checkpoint at iteration {} written to {}",
        trainer.iteration,
        out.display()
    );
    Ok(())
}

pub fn infer(ctx: &Context, a: InferArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let ckpt_path = a.checkpoint.unwrap_or_else(|| cfg.paths.checkpoint.clone());
    let ck =
        load_checkpoint(&ckpt_path).with_context(|| format!("loading {}", ckpt_path.display()))?;
    ensure!(
        ck.params.spec.in_channels == 1,
        "checkpoint expects {} input channels; only gray images are supported",
        ck.params.spec.in_channels
    );
    let inputs: Vec<(String, Grid<u8>)> = if a.images.is_empty() {
        let data = a.data.unwrap_or_else(|| cfg.paths.dataset.clone());
        let (_, samples) = load_samples(&data, a.split.into())?;
        samples.into_iter().map(|s| (s.id, s.image)).collect()
    } else {
        a.images
            .iter()
            .map(|p| {
                let id = p
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .with_context(|| format!("no usable file name in {}", p.display()))?
                    .to_string();
                Ok((id, read_gray_png(p)?))
            })
            .collect::<Result<_>>()?
    };
    let out = a.out.unwrap_or_else(|| ctx.outputs("responses"));
    std::fs::create_dir_all(&out)?;
    let params = &ck.params;
    let rf = params.receptive_fields();
    let multiple = params.spec.input_multiple();
    let fsds = ck.header.fsds_mode;
    inputs.par_iter().try_for_each(|(id, img)| -> Result<()> {
        if img.width % multiple != 0 || img.height % multiple != 0 {
            warn!(
                "{id}: {}x{} is not a multiple of {multiple}; padding and cropping back",
                img.width, img.height
            );
        }
        let pred = predict_image(params, &to_unit(img))?;
        let stored = StoredResponse {
            expected_scale: fsds_scale_estimate(&pred.fused_probs, &rf)?,
            response: pred.response.response,
            scale: pred.response.scale,
        };
        save_response(&out, id, &stored)?;
        if a.overlay {
            let thin = nms_thin(&stored.response, cfg.eval.nms_radius);
            let skeleton = threshold_binarize(&thin, a.threshold);
            let scale = if fsds {
                &stored.expected_scale
            } else {
                &stored.scale
            };
            let max_scale = *rf.last().expect("at least one stage") as f32;
            let rgb = scale_overlay(img, &skeleton, scale, max_scale);
            write_rgb_png(
                &out.join(format!("{id}.overlay.png")),
                img.width,
                img.height,
                rgb,
            )?;
        }
        Ok(())
    })?;
    ResponseIndex {
        version: 1,
        checkpoint: ckpt_path,
        iteration: ck.header.iteration,
        fsds_mode: fsds,
        receptive_fields: rf,
        channels: CHANNELS.iter().map(|c| c.to_string()).collect(),
        ids: inputs.iter().map(|(id, _)| id.clone()).collect(),
    }
    .save(&out)?;
    println!("{} responses written to {}", inputs.len(), out.display());
    Ok(())
}

/// Loads the dataset split and fails with the full list of ids lacking responses.
fn split_with_responses(responses: &Path, data: &Path, split: Split) -> Result<Vec<Sample>> {
    let (_, samples) = load_samples(data, split)?;
    let missing = missing_ids(responses, samples.iter().map(|s| s.id.as_str()));
    if !missing.is_empty() {
        bail!(
            "{} of {} samples have no response in {}: {}",
            missing.len(),
            samples.len(),
            responses.display(),
            missing.join(", ")
        );
    }
    Ok(samples)
}

pub fn eval(ctx: &Context, a: EvalArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let responses = a.responses.unwrap_or_else(|| ctx.outputs("responses"));
    let data = a.data.unwrap_or_else(|| cfg.paths.dataset.clone());
    let index = ResponseIndex::load(&responses)?;
    let samples = split_with_responses(&responses, &data, a.split.into())?;
    ensure!(!samples.is_empty(), "no samples in the requested split");
    let loaded: Vec<(StoredResponse, _)> = samples
        .par_iter()
        .map(|s| -> Result<_> {
            let r = load_response(&responses, &s.id)?;
            ensure!(
                r.response.same_size(&s.mask),
                "{}: response {}x{} vs ground truth {}x{}",
                s.id,
                r.response.width,
                r.response.height,
                s.mask.width,
                s.mask.height
            );
            let thin = nms_thin(&r.response, cfg.eval.nms_radius);
            Ok((r, (thin, s.skeleton())))
        })
        .collect::<Result<_>>()?;
    let (stored, items): (Vec<StoredResponse>, Vec<_>) = loaded.into_iter().unzip();
    let tol = cfg.eval.tolerance()?;
    let curve = pr_curve(&items, &cfg.eval.thresholds(), &tol)?;

    let (mut err_reg, mut err_exp) = (Vec::new(), Vec::new());
    for ((r, (thin, gt)), s) in stored.iter().zip(&items).zip(&samples) {
        let pairs = match_pairs_with(
            &threshold_binarize(thin, curve.best_threshold),
            gt,
            tol.max_distance(gt.width, gt.height),
            tol.matcher,
        )?;
        err_reg.extend(matched_scale_errors(&pairs, &r.scale, &s.scale));
        err_exp.extend(matched_scale_errors(&pairs, &r.expected_scale, &s.scale));
    }

    let out = a.out.unwrap_or_else(|| ctx.outputs("eval"));
    std::fs::create_dir_all(&out)?;
    write_pr_csv(&out.join("pr.csv"), &curve)?;
    atomic_write(
        &out.join("pr.svg"),
        pr_plot_svg(&[("fused".into(), &curve)]).as_bytes(),
    )?;
    let summary = json!({
        "best_f": curve.best_f,
        "best_threshold": curve.best_threshold,
        "curve_file": "pr.csv",
        "images": samples.len(),
        "kappa": tol.kappa,
        "matcher": tol.matcher,
        "fsds_mode": index.fsds_mode,
        "scale_error": {
            "matched_pixels": err_reg.len(),
            "regression_median": median(&err_reg),
            "expected_median": median(&err_exp),
        },
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn summary_threshold(path: &Path) -> Result<f32> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let t = v["best_threshold"]
        .as_f64()
        .with_context(|| format!("{} has no best_threshold", path.display()))?;
    Ok(t as f32)
}

pub fn segment(ctx: &Context, a: SegmentArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let responses = a.responses.unwrap_or_else(|| ctx.outputs("responses"));
    let threshold = match (a.threshold, &a.summary) {
        (Some(t), _) => t,
        (None, Some(p)) => summary_threshold(p)?,
        (None, None) => {
            bail!("pass --threshold or --summary (the evaluation summary with the best threshold)")
        }
    };
    ensure!(
        threshold > 0.0 && threshold < 1.0,
        "threshold {threshold} outside (0, 1)"
    );
    let index = ResponseIndex::load(&responses)?;
    let samples = match &a.data {
        Some(dir) => Some(split_with_responses(&responses, dir, a.split.into())?),
        None => None,
    };
    let ids: Vec<String> = match &samples {
        Some(s) => s.iter().map(|s| s.id.clone()).collect(),
        None => index.ids.clone(),
    };
    let out = a.out.unwrap_or_else(|| ctx.outputs("segments"));
    std::fs::create_dir_all(&out)?;

    let generated: Vec<Vec<BinaryMask>> = ids
        .par_iter()
        .map(|id| -> Result<_> {
            let r = load_response(&responses, id)?;
            let (w, h) = (r.response.width, r.response.height);
            let skeleton =
                threshold_binarize(&nms_thin(&r.response, cfg.eval.nms_radius), threshold);
            let segments = group_segments(&skeleton, r.scale_for(a.scale_source, index.fsds_mode))?;
            let mut masks: Vec<BinaryMask> = segments
                .iter()
                .map(|s| reconstruct_mask(s, w, h, cfg.segment.disk_rule))
                .collect();
            if masks.len() > 255 {
                warn!("{id}: keeping the 255 largest of {} segments", masks.len());
                masks.sort_by_key(|m| std::cmp::Reverse(m.count()));
                masks.truncate(255);
            }
            write_gray_png(
                &out.join(format!("{id}.segments.png")),
                &encode_labels(&masks, w, h)?,
            )?;
            Ok(masks)
        })
        .collect::<Result<_>>()?;

    let total: usize = generated.iter().map(Vec::len).sum();
    println!(
        "{total} segments over {} images written to {}",
        ids.len(),
        out.display()
    );
    if let Some(samples) = samples {
        let pairs: Vec<(Vec<BinaryMask>, Vec<BinaryMask>)> = generated
            .into_iter()
            .zip(&samples)
            .map(|(g, s)| (g, object_masks(&s.mask)))
            .collect();
        let score = seg_scores(&pairs)?;
        let v = json!({
            "threshold": threshold,
            "f_measure": score.f_measure,
            "covering": score.covering,
            "avg_num_segments": score.avg_num_segments,
        });
        write_json(&out.join("segmentation.json"), &v)?;
        println!("{}", serde_json::to_string_pretty(&v)?);
    }
    Ok(())
}

/// Ground-truth objects: 8-connected components of the mask.
fn object_masks(mask: &BinaryMask) -> Vec<BinaryMask> {
    connected_components(mask)
        .into_iter()
        .map(|pixels| {
            let mut m = Grid::new(mask.width, mask.height, false);
            for (x, y) in pixels {
                m.set(x, y, true);
            }
            m
        })
        .collect()
}

pub fn rescore(_ctx: &Context, a: RescoreArgs) -> Result<()> {
    let proposals = read_proposals(&a.proposals)?;
    let labels = read_gray_png(&a.segments)?;
    for (i, p) in proposals.iter().enumerate() {
        let b = p.bbox;
        ensure!(
            b.x >= 0
                && b.y >= 0
                && b.x + b.w <= labels.width as i64
                && b.y + b.h <= labels.height as i64,
            "proposal {} ({},{},{},{}) leaves the {}x{} image",
            i + 1,
            b.x,
            b.y,
            b.w,
            b.h,
            labels.width,
            labels.height
        );
    }
    let masks = decode_labels(&labels);
    let scored = rescore_proposals(&proposals, &masks);
    write_scored(&a.out, &scored)?;
    println!(
        "{} proposals rescored against {} segments",
        scored.len(),
        masks.len()
    );
    if let (Some(gt), Some(path)) = (&a.ground_truth, &a.detection_rate) {
        let gt = read_boxes(gt)?;
        let mut ranked = scored.clone();
        ranked.sort_by(|x, y| y.score.total_cmp(&x.score));
        let boxes: Vec<_> = ranked.iter().map(|s| s.bbox).collect();
        let counts: Vec<usize> = (1..=boxes.len()).collect();
        write_detection_rate(path, &detection_rate_curve(&[boxes], &[gt], a.iou, &counts))?;
    }
    Ok(())
}

pub fn plot(_ctx: &Context, a: PlotArgs) -> Result<()> {
    let svg = if let Some(loss) = &a.loss {
        let rows = read_loss_totals(loss)?;
        let series = [Series {
            label: "total loss".into(),
            points: rows.iter().map(|&(i, t)| (i as f64, t)).collect(),
        }];
        line_plot_svg(&series, &Axes::fit("iteration", "loss", &series))
    } else {
        ensure!(
            a.label.is_empty() || a.label.len() == a.pr.len(),
            "{} labels for {} curves",
            a.label.len(),
            a.pr.len()
        );
        let curves =
            a.pr.iter()
                .map(|p| read_pr_csv(p))
                .collect::<skelnet::Result<Vec<_>>>()?;
        let labels: Vec<String> = if a.label.is_empty() {
            a.pr.iter().map(|p| default_label(p)).collect()
        } else {
            a.label.clone()
        };
        let named: Vec<(String, &_)> = labels.into_iter().zip(&curves).collect();
        pr_plot_svg(&named)
    };
    atomic_write(&a.out, svg.as_bytes())?;
    Ok(())
}

fn default_label(p: &Path) -> String {
    p.parent()
        .and_then(Path::file_name)
        .or_else(|| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}
