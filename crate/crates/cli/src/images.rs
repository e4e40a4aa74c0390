//! Binary PGM (P5) and PPM (P6) images.

use lasermix_core::prior::AreaClassHistogram;
use lasermix_core::{ClassId, PointCloud, RangeImage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray {
    pub w: usize,
    pub h: usize,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb {
    pub w: usize,
    pub h: usize,
    pub data: Vec<[u8; 3]>,
}

impl Gray {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.w, self.h).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

impl Rgb {
    pub fn new(w: usize, h: usize, fill: [u8; 3]) -> Self {
        Rgb {
            w,
            h,
            data: vec![fill; w * h],
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.w, self.h).into_bytes();
        for px in &self.data {
            out.extend_from_slice(px);
        }
        out
    }

    pub fn count(&self, color: [u8; 3]) -> usize {
        self.data.iter().filter(|&&c| c == color).count()
    }
}

pub const BLACK: [u8; 3] = [0, 0, 0];
pub const GRAY: [u8; 3] = [128, 128, 128];
pub const GREEN: [u8; 3] = [0, 200, 0];
pub const RED: [u8; 3] = [230, 0, 0];

const PALETTE: [[u8; 3]; 10] = [
    [255, 0, 255],
    [100, 150, 245],
    [255, 200, 0],
    [135, 60, 0],
    [0, 175, 0],
    [255, 30, 30],
    [80, 240, 150],
    [150, 240, 255],
    [90, 30, 150],
    [255, 150, 255],
];

pub fn class_color(c: ClassId) -> [u8; 3] {
    if c.is_ignored() {
        GRAY
    } else {
        PALETTE[c.index() % PALETTE.len()]
    }
}

/// Range scaled so `max_range` is white; empty pixels are black.
pub fn range_gray(img: &RangeImage, max_range: f64) -> Gray {
    let data = (0..img.h * img.w)
        .map(|p| {
            if img.is_occupied(p) {
                (1.0 + 254.0 * (img.range[p] as f64 / max_range).clamp(0.0, 1.0)).round() as u8
            } else {
                0
            }
        })
        .collect();
    Gray {
        w: img.w,
        h: img.h,
        data,
    }
}

pub fn label_rgb(img: &RangeImage) -> Rgb {
    let data = (0..img.h * img.w)
        .map(|p| {
            if img.is_occupied(p) {
                class_color(img.label[p])
            } else {
                BLACK
            }
        })
        .collect();
    Rgb {
        w: img.w,
        h: img.h,
        data,
    }
}

/// One row per area, one column per class. Brightness is `p(class | area)`
/// divided by its maximum over areas, so each class column spans the full
/// scale. Each cell is `cell × cell` pixels.
pub fn heatmap(hist: &AreaClassHistogram, cell: usize) -> Rgb {
    let mut img = Rgb::new(hist.k * cell, hist.m * cell, BLACK);
    let totals = hist.area_totals();
    let cond = |a: usize, y: usize| {
        if totals[a] == 0 {
            0.0
        } else {
            hist.get(a + 1, y) as f64 / totals[a] as f64
        }
    };
    for y in 0..hist.k {
        let peak = (0..hist.m).map(|a| cond(a, y)).fold(0.0, f64::max);
        for a in 0..hist.m {
            let v = if peak > 0.0 {
                (255.0 * cond(a, y) / peak).round() as u8
            } else {
                0
            };
            for dy in 0..cell {
                for dx in 0..cell {
                    img.data[(a * cell + dy) * img.w + y * cell + dx] = [v, v / 2, 255 - v];
                }
            }
        }
    }
    img
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCounts {
    pub correct: usize,
    pub incorrect: usize,
}

fn verdict(truth: ClassId, pred: ClassId) -> [u8; 3] {
    if truth.is_ignored() {
        GRAY
    } else if truth == pred {
        GREEN
    } else {
        RED
    }
}

/// Range-view error map: each occupied pixel shows the verdict for the point
/// it holds. Also returns point-level counts over all non-ignored points.
pub fn range_error_map(
    img: &RangeImage,
    cloud: &PointCloud,
    pred: &[ClassId],
) -> (Rgb, ErrorCounts) {
    let truth = cloud.labels().expect("error maps need ground truth");
    let mut out = Rgb::new(img.w, img.h, BLACK);
    for p in 0..img.h * img.w {
        if img.is_occupied(p) {
            let i = img.point_index[p] as usize;
            out.data[p] = verdict(truth[i], pred[i]);
        }
    }
    let mut counts = ErrorCounts::default();
    for (t, q) in truth.iter().zip(pred) {
        if !t.is_ignored() {
            if t == q {
                counts.correct += 1;
            } else {
                counts.incorrect += 1;
            }
        }
    }
    (out, counts)
}

/// Bird's-eye error map over `extent × extent` meters centered on the sensor,
/// `+x` up and `+y` left. Within a cell red beats green beats gray.
pub fn bev_error_map(cloud: &PointCloud, pred: &[ClassId], extent: f64, px: usize) -> Rgb {
    let truth = cloud.labels().expect("error maps need ground truth");
    let mut out = Rgb::new(px, px, BLACK);
    let rank = |c: [u8; 3]| match c {
        RED => 3,
        GREEN => 2,
        GRAY => 1,
        _ => 0,
    };
    let scale = px as f64 / extent;
    for (i, p) in cloud.coords().iter().enumerate() {
        let row = ((0.5 * extent - p[0] as f64) * scale).floor();
        let col = ((0.5 * extent - p[1] as f64) * scale).floor();
        if row < 0.0 || col < 0.0 || row >= px as f64 || col >= px as f64 {
            continue;
        }
        let cell = &mut out.data[row as usize * px + col as usize];
        let v = verdict(truth[i], pred[i]);
        if rank(v) > rank(*cell) {
            *cell = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headers() {
        let g = Gray {
            w: 2,
            h: 1,
            data: vec![0, 255],
        };
        assert_eq!(g.encode(), b"P5\n2 1\n255\n\x00\xff");
        let c = Rgb::new(1, 1, [1, 2, 3]);
        assert_eq!(c.encode(), b"P6\n1 1\n255\n\x01\x02\x03");
    }
}
