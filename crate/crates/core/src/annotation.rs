//! Per-sample ground truth: frames, masks and the expert search queries.
//!
//! On disk an annotation is one JSON object per line:
//!
//! ```json
//! {"id": "s1", "query": "...", "category": "multi_hop", "frames": ["f0.jpg", ...],
//!  "mask_paths": ["m0.png", ...], "expert_queries": ["..."], "requires_search": true}
//! ```
//!
//! `frames` entries may also be objects `{"id", "lowres", "highres"}`. Relative
//! paths resolve against the annotation file's directory. An optional `"mode"`
//! of `"image"` marks single-image samples.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{BinaryMask, MaskError};
use crate::metrics::{derive_gt_prompt, largest_component_area, GtPrompt};
use crate::trajectory::Mode;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("sample `{0}` has no frames")]
    NoFrames(String),
    #[error("sample `{id}`: {frames} frames but {masks} masks")]
    MaskCount { id: String, frames: usize, masks: usize },
    #[error("sample `{0}`: masks have differing dimensions")]
    MixedDimensions(String),
    #[error("sample `{id}`, mask {path}: {source}")]
    Mask {
        id: String,
        path: String,
        #[source]
        source: MaskError,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub id: String,
    pub lowres: PathBuf,
    pub highres: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
struct FrameStats {
    largest_area: usize,
    prompt: Option<GtPrompt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleAnnotation {
    pub id: String,
    pub query: String,
    pub category: Option<String>,
    pub mode: Mode,
    pub frames: Vec<FrameRecord>,
    pub gt_masks: Vec<BinaryMask>,
    pub expert_queries: Vec<String>,
    pub requires_search: bool,
    stats: Vec<FrameStats>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum FrameSpec {
    Path(String),
    Record {
        #[serde(default)]
        id: Option<String>,
        lowres: String,
        #[serde(default)]
        highres: Option<String>,
    },
}

#[derive(Debug, Deserialize)]
struct AnnotationLine {
    id: String,
    query: String,
    #[serde(default)]
    category: Option<String>,
    #[serde(default)]
    mode: Mode,
    frames: Vec<FrameSpec>,
    mask_paths: Vec<String>,
    #[serde(default)]
    expert_queries: Vec<String>,
    #[serde(default)]
    requires_search: bool,
}

/// `floor(i * len / n)` for `i` in `0..min(n, len)`.
pub fn uniform_frame_indices(len: usize, n: usize) -> Vec<usize> {
    let n = n.min(len);
    (0..n).map(|i| i * len / n).collect()
}

impl SampleAnnotation {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        query: impl Into<String>,
        category: Option<String>,
        mode: Mode,
        frames: Vec<FrameRecord>,
        gt_masks: Vec<BinaryMask>,
        expert_queries: Vec<String>,
        requires_search: bool,
    ) -> Result<Self, AnnotationError> {
        let id = id.into();
        if frames.is_empty() {
            return Err(AnnotationError::NoFrames(id));
        }
        if frames.len() != gt_masks.len() {
            return Err(AnnotationError::MaskCount {
                id,
                frames: frames.len(),
                masks: gt_masks.len(),
            });
        }
        let first = &gt_masks[0];
        if gt_masks.iter().any(|m| m.same_dims(first).is_err()) {
            return Err(AnnotationError::MixedDimensions(id));
        }
        let stats = gt_masks
            .iter()
            .map(|m| FrameStats {
                largest_area: largest_component_area(m),
                prompt: derive_gt_prompt(m).ok(),
            })
            .collect();
        Ok(SampleAnnotation {
            id,
            query: query.into(),
            category,
            mode,
            frames,
            gt_masks,
            expert_queries,
            requires_search,
            stats,
        })
    }

    /// Convenience constructor for in-memory masks; frame references are
    /// synthesised from the index.
    pub fn from_masks(
        id: impl Into<String>,
        query: impl Into<String>,
        mode: Mode,
        gt_masks: Vec<BinaryMask>,
        expert_queries: Vec<String>,
    ) -> Result<Self, AnnotationError> {
        let frames = (0..gt_masks.len())
            .map(|i| FrameRecord {
                id: format!("frame-{i}"),
                lowres: PathBuf::from(format!("frame-{i}.jpg")),
                highres: PathBuf::from(format!("frame-{i}.jpg")),
            })
            .collect();
        let requires_search = !expert_queries.is_empty();
        Self::new(id, query, None, mode, frames, gt_masks, expert_queries, requires_search)
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Width and height shared by every ground-truth mask.
    pub fn mask_dims(&self) -> (usize, usize) {
        (self.gt_masks[0].width(), self.gt_masks[0].height())
    }

    /// Largest-connected-component area of each frame's mask.
    pub fn component_areas(&self) -> Vec<usize> {
        self.stats.iter().map(|s| s.largest_area).collect()
    }

    /// Derived box and point for a frame, in mask pixel coordinates.
    pub fn gt_prompt(&self, frame: usize) -> Option<GtPrompt> {
        self.stats.get(frame).and_then(|s| s.prompt)
    }

    /// True when every frame's mask is empty.
    pub fn is_degenerate(&self) -> bool {
        self.stats.iter().all(|s| s.largest_area == 0)
    }

    /// The subset of frames presented to the policy, re-indexed from 0.
    pub fn sampled(&self, n: usize) -> SampleAnnotation {
        let idx = uniform_frame_indices(self.frames.len(), n);
        SampleAnnotation {
            id: self.id.clone(),
            query: self.query.clone(),
            category: self.category.clone(),
            mode: self.mode,
            frames: idx.iter().map(|&i| self.frames[i].clone()).collect(),
            gt_masks: idx.iter().map(|&i| self.gt_masks[i].clone()).collect(),
            expert_queries: self.expert_queries.clone(),
            requires_search: self.requires_search,
            stats: idx.iter().map(|&i| self.stats[i].clone()).collect(),
        }
    }

    fn from_line(line: AnnotationLine, base: &Path) -> Result<Self, AnnotationError> {
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let frames = line
            .frames
            .iter()
            .enumerate()
            .map(|(i, spec)| match spec {
                FrameSpec::Path(p) => FrameRecord {
                    id: format!("{i}"),
                    lowres: resolve(p),
                    highres: resolve(p),
                },
                FrameSpec::Record { id, lowres, highres } => FrameRecord {
                    id: id.clone().unwrap_or_else(|| format!("{i}")),
                    lowres: resolve(lowres),
                    highres: resolve(highres.as_deref().unwrap_or(lowres)),
                },
            })
            .collect();
        let mut masks = Vec::with_capacity(line.mask_paths.len());
        for p in &line.mask_paths {
            let path = resolve(p);
            let mask = BinaryMask::load(&path).map_err(|source| AnnotationError::Mask {
                id: line.id.clone(),
                path: path.display().to_string(),
                source,
            })?;
            masks.push(mask);
        }
        Self::new(
            line.id,
            line.query,
            line.category,
            line.mode,
            frames,
            masks,
            line.expert_queries,
            line.requires_search,
        )
    }

    /// Reads a JSON-Lines annotation file. Blank lines are skipped.
    pub fn load_jsonl(path: &Path) -> Result<Vec<SampleAnnotation>, AnnotationError> {
        let text = std::fs::read_to_string(path).map_err(|source| AnnotationError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: AnnotationLine =
                serde_json::from_str(line).map_err(|source| AnnotationError::Json {
                    path: path.display().to_string(),
                    line: i + 1,
                    source,
                })?;
            out.push(Self::from_line(parsed, base)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_sampling_rule() {
        assert_eq!(uniform_frame_indices(12, 6), vec![0, 2, 4, 6, 8, 10]);
        assert_eq!(uniform_frame_indices(6, 6), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(uniform_frame_indices(1, 6), vec![0]);
        assert_eq!(uniform_frame_indices(10, 4), vec![0, 2, 5, 7]);
        assert!(uniform_frame_indices(0, 6).is_empty());
    }

    #[test]
    fn validation() {
        let m = BinaryMask::empty(4, 4).unwrap();
        assert!(matches!(
            SampleAnnotation::from_masks("a", "q", Mode::Video, vec![], vec![]),
            Err(AnnotationError::NoFrames(_))
        ));
        let other = BinaryMask::empty(5, 4).unwrap();
        assert!(matches!(
            SampleAnnotation::from_masks("a", "q", Mode::Video, vec![m.clone(), other], vec![]),
            Err(AnnotationError::MixedDimensions(_))
        ));
        let ann = SampleAnnotation::from_masks("a", "q", Mode::Video, vec![m], vec![]).unwrap();
        assert!(ann.is_degenerate());
        assert!(ann.gt_prompt(0).is_none());
    }

    #[test]
    fn loads_jsonl_with_relative_masks() {
        let dir = tempfile::tempdir().unwrap();
        let m = BinaryMask::from_ascii("0000\n0110\n0110\n0000").unwrap();
        std::fs::write(dir.path().join("m0.pbm"), m.to_pbm()).unwrap();
        m.save_png(&dir.path().join("m1.png")).unwrap();
        let line = r#"{"id": "s1", "query": "who", "category": "one_hop", "frames": ["f0.jpg", {"lowres": "f1.jpg", "highres": "f1_hr.jpg"}], "mask_paths": ["m0.pbm", "m1.png"], "expert_queries": ["x"], "requires_search": true}"#;
        let path = dir.path().join("ann.jsonl");
        std::fs::write(&path, format!("{line}\n\n")).unwrap();
        let anns = SampleAnnotation::load_jsonl(&path).unwrap();
        assert_eq!(anns.len(), 1);
        let a = &anns[0];
        assert_eq!(a.frames[1].highres, dir.path().join("f1_hr.jpg"));
        assert_eq!(a.component_areas(), vec![4, 4]);
        assert_eq!(a.gt_prompt(0).unwrap().bbox, [1.0, 1.0, 2.0, 2.0]);
        assert_eq!(a.category.as_deref(), Some("one_hop"));

        std::fs::write(&path, "{\"id\": 3}\n").unwrap();
        assert!(matches!(
            SampleAnnotation::load_jsonl(&path),
            Err(AnnotationError::Json { line: 1, .. })
        ));
    }
}
