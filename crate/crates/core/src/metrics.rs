//! Segmentation metrics: region similarity J, boundary accuracy F, gIoU/cIoU,
//! plus the connected-component utilities the outcome reward builds on.

use serde::Serialize;
use thiserror::Error;

use crate::mask::{BinaryMask, MaskError};

/// Default boundary tolerance as a fraction of the image diagonal.
pub const DEFAULT_BOUNDARY_TOLERANCE: f64 = 0.008;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("metric requires at least one sample")]
    NoSamples,
}

/// Intersection and union pixel counts of two equally sized masks.
pub fn overlap(pred: &BinaryMask, gt: &BinaryMask) -> Result<(usize, usize), MaskError> {
    pred.same_dims(gt)?;
    let mut inter = 0;
    let mut union = 0;
    for (a, b) in pred.bits().iter().zip(gt.bits()) {
        inter += usize::from(*a && *b);
        union += usize::from(*a || *b);
    }
    Ok((inter, union))
}

/// Region similarity. Two empty masks score 1.
pub fn jaccard(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64, MaskError> {
    let (inter, union) = overlap(pred, gt)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Foreground pixels with at least one 4-neighbour in the background.
/// Pixels beyond the image border do not count as background.
pub fn boundary(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    BinaryMask::from_fn(w, h, |x, y| {
        if !mask.get(x, y) {
            return false;
        }
        (x > 0 && !mask.get(x - 1, y))
            || (x + 1 < w && !mask.get(x + 1, y))
            || (y > 0 && !mask.get(x, y - 1))
            || (y + 1 < h && !mask.get(x, y + 1))
    })
    .expect("dimensions come from a valid mask")
}

/// Matching radius in pixels for a tolerance given as a fraction of the diagonal.
pub fn tolerance_radius(width: usize, height: usize, tolerance_ratio: f64) -> usize {
    let diag = ((width * width + height * height) as f64).sqrt();
    (tolerance_ratio * diag).ceil().max(0.0) as usize
}

fn dilate_disk(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let mut out = BinaryMask::empty(mask.width(), mask.height()).expect("valid dimensions");
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x as usize, y as usize) {
                continue;
            }
            for (dx, dy) in &offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && ny >= 0 && nx < w && ny < h {
                    out.set(nx as usize, ny as usize, true);
                }
            }
        }
    }
    out
}

/// Boundary F-measure with disk-dilation matching of radius
/// `ceil(tolerance_ratio * diagonal)`.
pub fn boundary_f(pred: &BinaryMask, gt: &BinaryMask, tolerance_ratio: f64) -> Result<f64, MaskError> {
    pred.same_dims(gt)?;
    let pred_b = boundary(pred);
    let gt_b = boundary(gt);
    let n_pred = pred_b.area();
    let n_gt = gt_b.area();
    if n_pred == 0 && n_gt == 0 {
        return Ok(1.0);
    }
    if n_pred == 0 || n_gt == 0 {
        return Ok(0.0);
    }
    let radius = tolerance_radius(pred.width(), pred.height(), tolerance_ratio);
    let gt_zone = dilate_disk(&gt_b, radius);
    let pred_zone = dilate_disk(&pred_b, radius);
    let matched = |b: &BinaryMask, zone: &BinaryMask| {
        b.bits()
            .iter()
            .zip(zone.bits())
            .filter(|(p, z)| **p && **z)
            .count()
    };
    let precision = matched(&pred_b, &gt_zone) as f64 / n_pred as f64;
    let recall = matched(&gt_b, &pred_zone) as f64 / n_gt as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// gIoU (mean per-sample IoU) and cIoU (cumulative intersection over
/// cumulative union).
pub fn giou_ciou(pairs: &[(BinaryMask, BinaryMask)]) -> Result<(f64, f64), MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    let mut sum_iou = 0.0;
    let mut total_inter = 0usize;
    let mut total_union = 0usize;
    for (pred, gt) in pairs {
        let (inter, union) = overlap(pred, gt)?;
        sum_iou += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        total_inter += inter;
        total_union += union;
    }
    let giou = sum_iou / pairs.len() as f64;
    let ciou = if total_union == 0 {
        1.0
    } else {
        total_inter as f64 / total_union as f64
    };
    Ok((giou, ciou))
}

/// 8-connected component labelling of the foreground.
#[derive(Debug, Clone)]
pub struct Components {
    width: usize,
    /// `0` is background; components are numbered from 1 in raster order of
    /// their first pixel.
    labels: Vec<u32>,
    sizes: Vec<usize>,
}

impl Components {
    pub fn label(mask: &BinaryMask) -> Self {
        let (w, h) = (mask.width(), mask.height());
        let mut parent: Vec<u32> = vec![0];
        let mut provisional = vec![0u32; w * h];

        fn find(parent: &mut [u32], mut x: u32) -> u32 {
            while parent[x as usize] != x {
                parent[x as usize] = parent[parent[x as usize] as usize];
                x = parent[x as usize];
            }
            x
        }

        for y in 0..h {
            for x in 0..w {
                if !mask.get(x, y) {
                    continue;
                }
                // Already-visited 8-neighbours: W, NW, N, NE.
                let mut neighbours = [0u32; 4];
                if x > 0 {
                    neighbours[0] = provisional[y * w + x - 1];
                }
                if y > 0 {
                    let up = (y - 1) * w;
                    if x > 0 {
                        neighbours[1] = provisional[up + x - 1];
                    }
                    neighbours[2] = provisional[up + x];
                    if x + 1 < w {
                        neighbours[3] = provisional[up + x + 1];
                    }
                }
                let mut root = 0u32;
                for &n in neighbours.iter().filter(|n| **n != 0) {
                    let r = find(&mut parent, n);
                    if root == 0 {
                        root = r;
                    } else if r != root {
                        let (lo, hi) = (root.min(r), root.max(r));
                        parent[hi as usize] = lo;
                        root = lo;
                    }
                }
                if root == 0 {
                    root = parent.len() as u32;
                    parent.push(root);
                }
                provisional[y * w + x] = root;
            }
        }

        // Resolve to dense labels in raster order of first appearance.
        let mut dense = vec![0u32; parent.len()];
        let mut sizes = Vec::new();
        let mut labels = vec![0u32; w * h];
        for (i, p) in provisional.iter().enumerate() {
            if *p == 0 {
                continue;
            }
            let root = find(&mut parent, *p) as usize;
            if dense[root] == 0 {
                sizes.push(0);
                dense[root] = sizes.len() as u32;
            }
            let label = dense[root];
            labels[i] = label;
            sizes[label as usize - 1] += 1;
        }
        Components { width: w, labels, sizes }
    }

    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Pixel count of each component, indexed by `label - 1`.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn label_at(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Label of the largest component; ties go to the lower label.
    pub fn largest(&self) -> Option<u32> {
        let mut best: Option<(usize, u32)> = None;
        for (i, &size) in self.sizes.iter().enumerate() {
            if best.is_none_or(|(s, _)| size > s) {
                best = Some((size, i as u32 + 1));
            }
        }
        best.map(|(_, label)| label)
    }

    pub fn pixels(&self, label: u32) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, l)| **l == label)
            .map(move |(i, _)| (i % w, i / w))
    }
}

/// Area of the largest 8-connected foreground component; 0 for an empty mask.
pub fn largest_component_area(mask: &BinaryMask) -> usize {
    Components::label(mask).sizes().iter().copied().max().unwrap_or(0)
}

/// Ground-truth positional prompt derived from a mask, in mask pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GtPrompt {
    /// Tight inclusive box `[x1, y1, x2, y2]` of the largest component.
    pub bbox: [f64; 4],
    /// Rounded centroid of the largest component, snapped to the nearest
    /// component pixel when the centroid lands outside it.
    pub point: [f64; 2],
}

impl GtPrompt {
    pub fn scaled(&self, sx: f64, sy: f64) -> GtPrompt {
        GtPrompt {
            bbox: [self.bbox[0] * sx, self.bbox[1] * sy, self.bbox[2] * sx, self.bbox[3] * sy],
            point: [self.point[0] * sx, self.point[1] * sy],
        }
    }
}

pub fn derive_gt_prompt(mask: &BinaryMask) -> Result<GtPrompt, MaskError> {
    let comps = Components::label(mask);
    let label = comps.largest().ok_or(MaskError::NoForeground)?;

    let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0, 0);
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (x, y) in comps.pixels(label) {
        x1 = x1.min(x);
        y1 = y1.min(y);
        x2 = x2.max(x);
        y2 = y2.max(y);
        sx += x as f64;
        sy += y as f64;
        n += 1;
    }
    let (cx, cy) = (sx / n as f64, sy / n as f64);
    let (rx, ry) = (cx.round() as usize, cy.round() as usize);
    let point = if comps.label_at(rx, ry) == label {
        (rx, ry)
    } else {
        let mut best = (f64::INFINITY, (0, 0));
        for (x, y) in comps.pixels(label) {
            let d = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            if d < best.0 {
                best = (d, (x, y));
            }
        }
        best.1
    };
    Ok(GtPrompt {
        bbox: [x1 as f64, y1 as f64, x2 as f64, y2 as f64],
        point: [point.0 as f64, point.1 as f64],
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub frame_j: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub frame_f: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<f64>,
    #[serde(rename = "j_and_f", skip_serializing_if = "Option::is_none")]
    pub jf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub giou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ciou: Option<f64>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// J, F and J&F over the frames of one video (prediction, ground truth).
pub fn evaluate_video(
    frames: &[(BinaryMask, BinaryMask)],
    tolerance_ratio: f64,
) -> Result<MetricReport, MetricsError> {
    if frames.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    let mut frame_j = Vec::with_capacity(frames.len());
    let mut frame_f = Vec::with_capacity(frames.len());
    for (pred, gt) in frames {
        frame_j.push(jaccard(pred, gt)?);
        frame_f.push(boundary_f(pred, gt, tolerance_ratio)?);
    }
    let j = mean(&frame_j);
    let f = mean(&frame_f);
    Ok(MetricReport {
        frame_j,
        frame_f,
        j: Some(j),
        f: Some(f),
        jf: Some((j + f) / 2.0),
        ..Default::default()
    })
}

/// Averages per-video reports: J and F are means over videos.
pub fn combine_videos(reports: &[MetricReport]) -> Result<MetricReport, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    let js: Vec<f64> = reports.iter().filter_map(|r| r.j).collect();
    let fs: Vec<f64> = reports.iter().filter_map(|r| r.f).collect();
    let (j, f) = (mean(&js), mean(&fs));
    Ok(MetricReport {
        j: Some(j),
        f: Some(f),
        jf: Some((j + f) / 2.0),
        ..Default::default()
    })
}

pub fn evaluate_images(pairs: &[(BinaryMask, BinaryMask)]) -> Result<MetricReport, MetricsError> {
    let (giou, ciou) = giou_ciou(pairs)?;
    Ok(MetricReport {
        giou: Some(giou),
        ciou: Some(ciou),
        ..Default::default()
    })
}
