//! Point-cloud container and label taxonomy.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A semantic class index. Valid ids are `0..K` for the active [`LabelMap`];
/// [`ClassId::IGNORED`] marks points excluded from losses and metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassId(pub u16);

impl ClassId {
    pub const IGNORED: ClassId = ClassId(u16::MAX);

    #[inline]
    pub fn is_ignored(self) -> bool {
        self == Self::IGNORED
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// An immutable point cloud. Point order is stable and significant.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    coords: Vec<[f32; 3]>,
    intensity: Vec<f32>,
    labels: Option<Vec<ClassId>>,
}

impl PointCloud {
    pub fn new(coords: Vec<[f32; 3]>, intensity: Vec<f32>) -> Result<Self> {
        if coords.len() != intensity.len() {
            return Err(Error::arg(alloc::format!(
                "{} coordinates but {} intensities",
                coords.len(),
                intensity.len()
            )));
        }
        if let Some(i) = coords.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::arg(alloc::format!(
                "non-finite coordinate at point {i}"
            )));
        }
        Ok(PointCloud {
            coords,
            intensity,
            labels: None,
        })
    }

    /// Cloud with all intensities zero.
    pub fn from_coords(coords: Vec<[f32; 3]>) -> Result<Self> {
        let n = coords.len();
        Self::new(coords, alloc::vec![0.0; n])
    }

    pub fn empty() -> Self {
        PointCloud {
            coords: Vec::new(),
            intensity: Vec::new(),
            labels: None,
        }
    }

    pub fn attach_labels(mut self, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != self.coords.len() {
            return Err(Error::arg(alloc::format!(
                "{} labels for {} points",
                labels.len(),
                self.coords.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn coords(&self) -> &[[f32; 3]] {
        &self.coords
    }

    #[inline]
    pub fn intensity(&self) -> &[f32] {
        &self.intensity
    }

    #[inline]
    pub fn labels(&self) -> Option<&[ClassId]> {
        self.labels.as_deref()
    }

    #[inline]
    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    /// Coordinates of point `i` widened to `f64`.
    #[inline]
    pub fn point(&self, i: usize) -> [f64; 3] {
        let p = self.coords[i];
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }

    /// Points at `indices`, in the order given.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::arg(alloc::format!(
                "index {bad} out of range for {} points",
                self.len()
            )));
        }
        Ok(PointCloud {
            coords: indices.iter().map(|&i| self.coords[i]).collect(),
            intensity: indices.iter().map(|&i| self.intensity[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        })
    }

    /// `a` followed by `b`. Both or neither must be labeled.
    pub fn concat(a: &PointCloud, b: &PointCloud) -> Result<Self> {
        let labels = match (&a.labels, &b.labels) {
            (Some(la), Some(lb)) => Some(la.iter().chain(lb).copied().collect()),
            (None, None) => None,
            _ => {
                return Err(Error::arg(
                    "cannot concatenate a labeled and an unlabeled cloud",
                ))
            }
        };
        Ok(PointCloud {
            coords: a.coords.iter().chain(&b.coords).copied().collect(),
            intensity: a.intensity.iter().chain(&b.intensity).copied().collect(),
            labels,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelEntry {
    pub raw: u32,
    pub id: u16,
    pub name: String,
}

/// Mapping from raw dataset label ids to contiguous class ids `0..K`.
///
/// `ignored_id` is the raw id reserved for [`ClassId::IGNORED`]; unknown raw
/// ids also map to IGNORED. Several raw ids may share one class; writers emit
/// the smallest raw id of a class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelMap {
    pub classes: Vec<LabelEntry>,
    pub ignored_id: u32,
}

impl LabelMap {
    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        for c in 0..k {
            if !self.classes.iter().any(|e| e.id as usize == c) {
                return Err(Error::arg(alloc::format!(
                    "class ids are not contiguous: {c} missing"
                )));
            }
        }
        if self.classes.iter().any(|e| e.id == ClassId::IGNORED.0) {
            return Err(Error::arg("class id 65535 is reserved for IGNORED"));
        }
        for (i, e) in self.classes.iter().enumerate() {
            if e.raw == self.ignored_id {
                return Err(Error::arg(alloc::format!(
                    "raw id {} is both a class and ignored",
                    e.raw
                )));
            }
            if self.classes[..i].iter().any(|o| o.raw == e.raw) {
                return Err(Error::arg(alloc::format!("raw id {} mapped twice", e.raw)));
            }
        }
        Ok(())
    }

    /// K: the number of classes.
    pub fn num_classes(&self) -> usize {
        self.classes
            .iter()
            .map(|e| e.id as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// `None` for unmapped raw ids; `Some(IGNORED)` for the ignored raw id.
    pub fn lookup(&self, raw: u32) -> Option<ClassId> {
        if raw == self.ignored_id {
            return Some(ClassId::IGNORED);
        }
        self.classes
            .iter()
            .find(|e| e.raw == raw)
            .map(|e| ClassId(e.id))
    }

    pub fn raw_of(&self, id: ClassId) -> u32 {
        if id.is_ignored() {
            return self.ignored_id;
        }
        self.classes
            .iter()
            .filter(|e| e.id == id.0)
            .map(|e| e.raw)
            .min()
            .unwrap_or(self.ignored_id)
    }

    pub fn name_of(&self, id: ClassId) -> &str {
        if id.is_ignored() {
            return "ignored";
        }
        self.classes
            .iter()
            .find(|e| e.id == id.0)
            .map(|e| e.name.as_str())
            .unwrap_or("unknown")
    }

    /// The five-class taxonomy of the synthetic simulator, using
    /// SemanticKITTI raw ids.
    pub fn synthetic() -> Self {
        let e = |raw, id, name: &str| LabelEntry {
            raw,
            id,
            name: name.into(),
        };
        LabelMap {
            classes: alloc::vec![
                e(40, 0, "road"),
                e(10, 1, "car"),
                e(50, 2, "building"),
                e(71, 3, "trunk"),
                e(70, 4, "vegetation"),
            ],
            ignored_id: 0,
        }
    }
}
