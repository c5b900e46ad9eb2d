//! Subcommand implementations. Multi-image work runs on a bounded rayon
//! pool; results are always collected in canonical image order so output
//! bytes do not depend on the worker count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use papyri_core::coco::{
    load_dataset, load_predictions, write_dataset, write_predictions, CategoryTable, Dataset,
    ImageId, PredictionSet, ScoredBox,
};
use papyri_core::ensemble::{ensemble_recognition, VoterFamily};
use papyri_core::eval::{confusion, evaluate, EvalConfig, EvalMode, EvalReport};
use papyri_core::fusion::{
    filter_confidence, suppress_overlaps, weighted_boxes_fusion, FusedBox, FusionConfig,
    ScoreRescaleMode,
};
use papyri_core::layout::{recover_layout, LayoutConfig};
use papyri_core::synth::{generate_scene, perturb, ConfusionModel, NoiseSpec};
use papyri_core::transcript::{layout_to_transcript, search, to_tei, TeiMetadata, Transcript};

use crate::config::{
    load_json_config, load_layout_file, load_recognizer_file, write_layout_file, LayoutEntry,
    PipelineConfig, SynthConfig,
};

/// Write to stdout, treating a closed pipe as a clean stop.
fn print_stdout(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => other.context("writing to stdout"),
    }
}

/// Run `f` on a pool bounded to `jobs` workers (0 = rayon's default).
pub fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if jobs == 0 {
        f()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .context("building worker pool")?;
        pool.install(f)
    }
}

fn load_optional_dataset(path: &Option<PathBuf>) -> Result<Option<Dataset>> {
    match path {
        Some(p) => Ok(Some(load_dataset(p)?)),
        None => Ok(None),
    }
}

pub fn cmd_fuse(
    inputs: &[PathBuf],
    iou: f64,
    skip_thr: f64,
    rescale: ScoreRescaleMode,
    out: &Path,
    jobs: usize,
) -> Result<()> {
    if inputs.is_empty() {
        bail!("fuse needs at least one prediction file");
    }
    let sets: Vec<PredictionSet> = inputs
        .iter()
        .map(|p| load_predictions(p, None).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<_>>()?;
    let cfg = FusionConfig {
        iou_match_threshold: iou,
        skip_box_threshold: skip_thr,
        model_count: sets.len(),
        score_rescale_mode: rescale,
    };
    let image_ids: Vec<ImageId> = sets
        .iter()
        .flat_map(|s| s.image_ids())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let fused = with_pool(jobs, || {
        let per_image: Vec<(ImageId, Vec<FusedBox>)> = image_ids
            .par_iter()
            .map(|&id| {
                let per_model: Vec<Vec<ScoredBox>> =
                    sets.iter().map(|s| s.boxes(id).to_vec()).collect();
                weighted_boxes_fusion(&per_model, &cfg).map(|f| (id, f))
            })
            .collect::<std::result::Result<_, _>>()?;
        let mut out_set = PredictionSet::new();
        for (id, boxes) in per_image {
            for fb in boxes {
                out_set.push(id, fb.to_scored());
            }
        }
        Ok(out_set)
    })?;
    write_predictions(&fused, out)?;
    eprintln!(
        "fused {} model file(s) into {} boxes over {} image(s)",
        inputs.len(),
        fused.len(),
        fused.image_count()
    );
    Ok(())
}

pub fn cmd_ensemble(
    fused_path: &Path,
    family_a_path: &Path,
    family_b_path: &Path,
    out: &Path,
) -> Result<()> {
    let fused_set = load_predictions(fused_path, None)?;
    let fused: Vec<(ImageId, FusedBox)> = fused_set
        .flat_iter()
        .map(|(id, sb)| (id, FusedBox::from_scored(sb)))
        .collect();
    let family_a = load_recognizer_file(family_a_path, VoterFamily::FamilyA, fused.len())?;
    let family_b = load_recognizer_file(family_b_path, VoterFamily::FamilyB, fused.len())?;
    let voted = ensemble_recognition(&fused, &family_a, &family_b)?;
    write_predictions(&voted, out)?;
    eprintln!(
        "vote-split {} fused boxes into {} predictions",
        fused.len(),
        voted.len()
    );
    Ok(())
}

fn postprocess_set(
    preds: &PredictionSet,
    min_conf: f64,
    suppress_iou: f64,
    jobs: usize,
) -> Result<PredictionSet> {
    let ids: Vec<ImageId> = preds.image_ids().collect();
    with_pool(jobs, || {
        let per_image: Vec<(ImageId, Vec<ScoredBox>)> = ids
            .par_iter()
            .map(|&id| {
                let kept = filter_confidence(preds.boxes(id), min_conf);
                (id, suppress_overlaps(&kept, suppress_iou))
            })
            .collect();
        let mut out_set = PredictionSet::new();
        for (id, boxes) in per_image {
            for sb in boxes {
                out_set.push(id, sb);
            }
        }
        Ok(out_set)
    })
}

pub fn cmd_postprocess(
    input: &Path,
    min_conf: f64,
    suppress_iou: f64,
    out: &Path,
    jobs: usize,
) -> Result<()> {
    let preds = load_predictions(input, None)?;
    let cleaned = postprocess_set(&preds, min_conf, suppress_iou, jobs)?;
    write_predictions(&cleaned, out)?;
    eprintln!("kept {} of {} boxes", cleaned.len(), preds.len());
    Ok(())
}

fn layout_entries(
    preds: &PredictionSet,
    cfg: &LayoutConfig,
    jobs: usize,
) -> Result<Vec<LayoutEntry>> {
    let ids: Vec<ImageId> = preds.image_ids().collect();
    with_pool(jobs, || {
        Ok(ids
            .par_iter()
            .map(|&id| LayoutEntry {
                image_id: id,
                layout: recover_layout(preds.boxes(id), cfg),
            })
            .collect())
    })
}

pub fn cmd_layout(input: &Path, cfg: &LayoutConfig, out: &Path, jobs: usize) -> Result<()> {
    let preds = load_predictions(input, None)?;
    let entries = layout_entries(&preds, cfg, jobs)?;
    write_layout_file(&entries, out)?;
    let lines: usize = entries.iter().map(|e| e.layout.line_count()).sum();
    eprintln!("recovered {} line(s) over {} page(s)", lines, entries.len());
    Ok(())
}

/// Stable document id for a page: the image's file stem when a dataset is
/// supplied, otherwise `image_<id>`.
fn doc_ids(entries: &[LayoutEntry], dataset: Option<&Dataset>) -> Vec<String> {
    let names: BTreeMap<ImageId, String> = dataset
        .map(|ds| {
            ds.images
                .iter()
                .map(|img| {
                    let stem = Path::new(&img.file_name)
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| img.file_name.clone());
                    (img.id, stem)
                })
                .collect()
        })
        .unwrap_or_default();
    let mut used: BTreeMap<String, usize> = BTreeMap::new();
    entries
        .iter()
        .map(|e| {
            let base = names
                .get(&e.image_id)
                .cloned()
                .unwrap_or_else(|| format!("image_{:06}", e.image_id));
            let n = used.entry(base.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                base
            } else {
                format!("{base}-{}", e.image_id)
            }
        })
        .collect()
}

pub fn cmd_text(layout_path: &Path, dataset_path: &Option<PathBuf>, out_dir: &Path) -> Result<()> {
    let entries = load_layout_file(layout_path)?;
    let dataset = load_optional_dataset(dataset_path)?;
    let table = dataset
        .as_ref()
        .map(|d| d.categories.clone())
        .unwrap_or_else(CategoryTable::default_greek);
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let ids = doc_ids(&entries, dataset.as_ref());
    for (entry, doc_id) in entries.iter().zip(ids.iter()) {
        let transcript = layout_to_transcript(&entry.layout, &table, doc_id.clone());
        let path = out_dir.join(format!("{doc_id}.txt"));
        fs::write(&path, transcript.to_text())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!(
        "wrote {} transcript(s) to {}",
        entries.len(),
        out_dir.display()
    );
    Ok(())
}

pub fn cmd_tei(
    layout_path: &Path,
    dataset_path: &Option<PathBuf>,
    title: &str,
    out_dir: &Path,
) -> Result<()> {
    let entries = load_layout_file(layout_path)?;
    let dataset = load_optional_dataset(dataset_path)?;
    let table = dataset
        .as_ref()
        .map(|d| d.categories.clone())
        .unwrap_or_else(CategoryTable::default_greek);
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let ids = doc_ids(&entries, dataset.as_ref());
    for (entry, doc_id) in entries.iter().zip(ids.iter()) {
        let metadata = TeiMetadata {
            title: if title.is_empty() {
                doc_id.clone()
            } else {
                title.to_string()
            },
            source_id: doc_id.clone(),
        };
        let xml = to_tei(&entry.layout, &table, &metadata);
        let path = out_dir.join(format!("{doc_id}.xml"));
        fs::write(&path, xml).with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!(
        "wrote {} TEI file(s) to {}",
        entries.len(),
        out_dir.display()
    );
    Ok(())
}

pub fn cmd_search(corpus_dir: &Path, pattern: &str, jobs: usize) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(corpus_dir)
        .with_context(|| format!("reading corpus dir {}", corpus_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "txt").unwrap_or(false))
        .collect();
    paths.sort();
    let corpus: Vec<Transcript> = paths
        .iter()
        .map(|p| {
            let doc_id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(Transcript::parse(doc_id, &text))
        })
        .collect::<Result<_>>()?;
    // Validate the pattern before sharding; an empty corpus must still
    // reject a malformed pattern.
    search(&[], pattern)?;
    let hits = with_pool(jobs, || {
        let mut per_doc: Vec<Vec<papyri_core::transcript::SearchHit>> = corpus
            .par_iter()
            .map(|doc| search(std::slice::from_ref(doc), pattern))
            .collect::<std::result::Result<_, _>>()?;
        Ok(per_doc.drain(..).flatten().collect::<Vec<_>>())
    })?;
    let mut stdout = String::new();
    for hit in &hits {
        stdout.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            hit.doc_id, hit.paragraph, hit.line, hit.column, hit.matched
        ));
    }
    print_stdout(&stdout)?;
    eprintln!(
        "{} hit(s) in {} of {} document(s)",
        hits.len(),
        hits.iter()
            .map(|h| h.doc_id.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .len(),
        corpus.len()
    );
    Ok(())
}

fn print_report(report: &EvalReport) -> Result<()> {
    let pct = |v: Option<f64>| {
        v.map(|x| format!("{:7.4}", x))
            .unwrap_or_else(|| "      -".into())
    };
    let mut text = String::new();
    text.push_str(&format!(
        "mode: {}\n",
        match report.mode {
            EvalMode::Detection => "detection",
            EvalMode::Recognition => "recognition",
        }
    ));
    text.push_str(&format!(
        "mAP  = {:7.4}   mAR  = {:7.4}\n",
        report.map, report.mar
    ));
    text.push_str(&format!(
        "AP50 = {}   AP75 = {}\n",
        pct(report.ap50),
        pct(report.ap75)
    ));
    text.push_str(&format!(
        "AR50 = {}   AR75 = {}\n",
        pct(report.ar50),
        pct(report.ar75)
    ));
    text.push_str("  IoU     TP     FP     FN      AP      AR\n");
    for c in &report.counts {
        text.push_str(&format!(
            "  {:.2} {:>6} {:>6} {:>6}  {:6.4}  {:6.4}\n",
            c.threshold, c.true_positives, c.false_positives, c.false_negatives, c.ap, c.ar
        ));
    }
    if !report.per_class.is_empty() {
        text.push_str("per-class AP:\n");
        for (name, ap) in &report.per_class {
            text.push_str(&format!("  {name}  {ap:.4}\n"));
        }
    }
    print_stdout(&text)
}

pub fn cmd_eval(
    gt_path: &Path,
    pred_path: &Path,
    mode: EvalMode,
    max_dets: usize,
    out: &Option<PathBuf>,
) -> Result<()> {
    let gt = load_dataset(gt_path)?;
    let preds = load_predictions(pred_path, Some(&gt))?;
    let mut cfg = match mode {
        EvalMode::Detection => EvalConfig::detection(),
        EvalMode::Recognition => EvalConfig::recognition(),
    };
    cfg.max_detections = max_dets;
    let report = evaluate(&gt, &preds, &cfg)?;
    print_report(&report)?;
    if let Some(path) = out {
        let cm = confusion(&gt, &preds, 0.5)?;
        let mut json = serde_json::to_value(&report)?;
        let obj = json.as_object_mut().expect("report is an object");
        obj.insert("confusion".into(), serde_json::to_value(&cm.counts)?);
        obj.insert(
            "confusion_categories".into(),
            serde_json::to_value(
                cm.categories
                    .iter()
                    .map(|id| {
                        gt.categories
                            .get(*id)
                            .map(|c| c.name.clone())
                            .unwrap_or_else(|| id.to_string())
                    })
                    .collect::<Vec<_>>(),
            )?,
        );
        obj.insert("confusion_threshold".into(), serde_json::json!(0.5));
        fs::write(path, serde_json::to_string_pretty(&json)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn cmd_pseudo(pred_path: &Path, dataset_path: &Path, min_conf: f64, out: &Path) -> Result<()> {
    let ds = load_dataset(dataset_path)?;
    let preds = load_predictions(pred_path, Some(&ds))?;
    let pseudo = papyri_core::coco::export_pseudo_labels(
        &preds,
        min_conf,
        ds.images.clone(),
        ds.categories.clone(),
    );
    pseudo.validate()?;
    write_dataset(&pseudo, out)?;
    eprintln!(
        "promoted {} of {} predictions to pseudo-labels",
        pseudo.annotations.len(),
        preds.len()
    );
    Ok(())
}

pub fn cmd_synth(config_path: &Path, out_dir: &Path, seed_override: Option<u64>) -> Result<()> {
    let mut cfg: SynthConfig = load_json_config(config_path)?;
    if let Some(seed) = seed_override {
        cfg.scene.seed = seed;
    }
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let (ds, transcript) = generate_scene(&cfg.scene)?;
    write_dataset(&ds, out_dir.join("gt.json"))?;
    fs::write(out_dir.join("transcript.txt"), transcript.to_text())?;
    let alphabet = if cfg.scene.alphabet.is_empty() {
        ds.categories.evaluated_ids()
    } else {
        cfg.scene.alphabet.clone()
    };
    for (k, entry) in cfg.noise.iter().enumerate() {
        let noise = NoiseSpec {
            seed: entry.seed,
            jitter_sigma: entry.jitter_sigma,
            drop_prob: entry.drop_prob,
            spurious_rate: entry.spurious_rate,
            confusion: ConfusionModel::uniform(alphabet.clone(), entry.label_confusion),
            tp_score: entry.tp_score,
            fp_score: entry.fp_score,
        };
        let preds = perturb(&ds, &noise)?;
        write_predictions(&preds, out_dir.join(format!("preds_{k:02}.json")))?;
    }
    eprintln!(
        "generated {} gt box(es) and {} prediction file(s) in {}",
        ds.annotations.len(),
        cfg.noise.len(),
        out_dir.display()
    );
    Ok(())
}

pub fn cmd_pipeline(config_path: &Path, jobs: usize) -> Result<()> {
    let cfg: PipelineConfig = load_json_config(config_path)?;
    if cfg.predictions.is_empty() {
        bail!("pipeline config lists no prediction files");
    }
    if cfg.recognizer_a.is_some() != cfg.recognizer_b.is_some() {
        bail!("supply both recognizer_a and recognizer_b, or neither");
    }
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;

    // fuse
    let fused_path = cfg.out_dir.join("fused.json");
    cmd_fuse(
        &cfg.predictions,
        cfg.fuse_iou,
        cfg.skip_thr,
        cfg.rescale,
        &fused_path,
        jobs,
    )?;

    // ensemble (optional)
    let staged_path = if let (Some(a), Some(b)) = (&cfg.recognizer_a, &cfg.recognizer_b) {
        let voted_path = cfg.out_dir.join("voted.json");
        cmd_ensemble(&fused_path, a, b, &voted_path)?;
        voted_path
    } else {
        fused_path
    };

    // postprocess
    let clean_path = cfg.out_dir.join("postprocessed.json");
    cmd_postprocess(
        &staged_path,
        cfg.min_conf,
        cfg.suppress_iou,
        &clean_path,
        jobs,
    )?;

    // layout
    let layout_cfg = LayoutConfig {
        feather_x: cfg.feather_x,
        feather_y: cfg.feather_y,
        paragraph_gap_factor: cfg.para_gap,
    };
    let layout_path = cfg.out_dir.join("layout.json");
    cmd_layout(&clean_path, &layout_cfg, &layout_path, jobs)?;

    // render
    let text_dir = cfg.out_dir.join("text");
    cmd_text(&layout_path, &cfg.dataset, &text_dir)?;
    if cfg.emit_tei {
        let tei_dir = cfg.out_dir.join("tei");
        cmd_tei(&layout_path, &cfg.dataset, &cfg.title, &tei_dir)?;
    }
    eprintln!("pipeline finished in {}", cfg.out_dir.display());
    Ok(())
}
