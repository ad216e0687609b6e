use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use agentseg_core::metrics::{combine_videos, evaluate_images, evaluate_video};
use agentseg_core::trajectory::Mode;
use agentseg_core::{BinaryMask, MetricReport, RunConfig, SampleAnnotation};

use crate::common::{emit, json_text, Failure, ResultExt, EXIT_OK};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Predicted masks (PNG or PBM).
    #[arg(long, value_name = "DIR")]
    pub pred: PathBuf,
    /// Ground-truth masks with the same relative file names.
    #[arg(long, value_name = "DIR")]
    pub gt: PathBuf,
    /// Video mode reads one subdirectory per video (or treats the directory
    /// as a single video); image mode pairs individual files.
    #[arg(long, default_value = "video")]
    pub mode: Mode,
    /// Annotation file whose `category` field groups the results by sample id.
    #[arg(long, value_name = "FILE")]
    pub annotations: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn list(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Failure::io(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    Ok(entries)
}

fn is_mask(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("pbm"))
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Ground-truth files relative to the gt root, paired with their prediction.
fn pairs(gt_files: &[PathBuf], gt_root: &Path, pred_root: &Path) -> Result<Vec<(PathBuf, PathBuf)>, Failure> {
    let mut missing = Vec::new();
    let mut out = Vec::new();
    for gt in gt_files {
        let rel = gt.strip_prefix(gt_root).unwrap_or(gt);
        let pred = pred_root.join(rel);
        if pred.is_file() {
            out.push((pred, gt.clone()));
        } else {
            missing.push(pred.display().to_string());
        }
    }
    if !missing.is_empty() {
        return Err(Failure::io(format!("missing predicted masks: {}", missing.join(", "))));
    }
    Ok(out)
}

fn load_pairs(pairs: &[(PathBuf, PathBuf)]) -> Result<Vec<(BinaryMask, BinaryMask)>, Failure> {
    pairs
        .iter()
        .map(|(p, g)| {
            let pred = BinaryMask::load(p).map_err(|e| Failure::io(format!("{}: {e}", p.display())))?;
            let gt = BinaryMask::load(g).map_err(|e| Failure::io(format!("{}: {e}", g.display())))?;
            Ok((pred, gt))
        })
        .collect()
}

/// Items (videos or images) keyed by id, each with its mask pairs.
fn collect_items(args: &Args) -> Result<Vec<(String, Vec<(PathBuf, PathBuf)>)>, Failure> {
    let entries = list(&args.gt)?;
    match args.mode {
        Mode::Video => {
            let dirs: Vec<&PathBuf> = entries.iter().filter(|p| p.is_dir()).collect();
            if dirs.is_empty() {
                let files: Vec<PathBuf> = entries.iter().filter(|p| is_mask(p)).cloned().collect();
                let id = args
                    .gt
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "video".into());
                return Ok(vec![(id, pairs(&files, &args.gt, &args.pred)?)]);
            }
            dirs.into_iter()
                .map(|d| {
                    let files: Vec<PathBuf> = list(d)?.into_iter().filter(|p| is_mask(p)).collect();
                    let id = d.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    Ok((id, pairs(&files, &args.gt, &args.pred)?))
                })
                .collect()
        }
        Mode::Image => {
            let files: Vec<PathBuf> = entries.into_iter().filter(|p| is_mask(p)).collect();
            pairs(&files, &args.gt, &args.pred)?
                .into_iter()
                .map(|pair| Ok((stem(&pair.1), vec![pair])))
                .collect()
        }
    }
}

fn aggregate(mode: Mode, reports: &[&MetricReport], masks: &[&(BinaryMask, BinaryMask)]) -> Result<MetricReport, Failure> {
    match mode {
        Mode::Video => combine_videos(&reports.iter().map(|r| (*r).clone()).collect::<Vec<_>>()).invalid(),
        Mode::Image => evaluate_images(&masks.iter().map(|m| (*m).clone()).collect::<Vec<_>>()).invalid(),
    }
}

pub fn run(args: Args, cfg: &RunConfig) -> Result<u8, Failure> {
    let items = collect_items(&args)?;
    if items.is_empty() {
        return Err(Failure::io(format!("no masks found under {}", args.gt.display())));
    }
    let categories: HashMap<String, String> = match &args.annotations {
        Some(path) => SampleAnnotation::load_jsonl(path)
            .io()?
            .into_iter()
            .filter_map(|a| a.category.map(|c| (a.id, c)))
            .collect(),
        None => HashMap::new(),
    };

    let evaluated: Vec<(String, Vec<(BinaryMask, BinaryMask)>, MetricReport)> = items
        .par_iter()
        .map(|(id, files)| {
            let masks = load_pairs(files)?;
            let report = match args.mode {
                Mode::Video => evaluate_video(&masks, cfg.boundary_tolerance).io()?,
                Mode::Image => evaluate_images(&masks).io()?,
            };
            Ok((id.clone(), masks, report))
        })
        .collect::<Result<_, Failure>>()?;

    let all_reports: Vec<&MetricReport> = evaluated.iter().map(|e| &e.2).collect();
    let all_masks: Vec<&(BinaryMask, BinaryMask)> = evaluated.iter().flat_map(|e| e.1.iter()).collect();
    let overall = aggregate(args.mode, &all_reports, &all_masks)?;

    let mut by_category: BTreeMap<&str, (Vec<&MetricReport>, Vec<&(BinaryMask, BinaryMask)>)> = BTreeMap::new();
    if !categories.is_empty() {
        for (id, masks, report) in &evaluated {
            let cat = categories.get(id).map(String::as_str).unwrap_or("uncategorized");
            let slot = by_category.entry(cat).or_default();
            slot.0.push(report);
            slot.1.extend(masks.iter());
        }
    }
    let mut cat_json = serde_json::Map::new();
    for (cat, (reports, masks)) in by_category {
        cat_json.insert(cat.to_string(), json!(aggregate(args.mode, &reports, &masks)?));
    }

    let item_json: Vec<Value> = evaluated
        .iter()
        .map(|(id, _, report)| json!({ "id": id, "report": report }))
        .collect();
    let mut doc = json!({
        "config": cfg.to_json(),
        "mode": args.mode,
        "overall": overall,
        "items": item_json,
    });
    if !cat_json.is_empty() {
        doc["categories"] = Value::Object(cat_json);
    }
    emit(args.out.as_ref(), &json_text(&doc))?;
    Ok(EXIT_OK)
}
