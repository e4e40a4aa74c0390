//! Spatial-prior analytics.
//!
//! The histogram estimator measures how predictable the class of a point is
//! from the area it falls in: `H(Y|A) = Σ_a p(a) Σ_y −p(y|a) ln p(y|a)`, in
//! nats. It uses label statistics only. The input-conditioned quantity is
//! reached through [`marginal_prediction`] with a trained model: each area is
//! completed with other scans' points outside it and the model's per-point
//! distributions are averaged over those fillings.

use alloc::vec::Vec;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::math;
use crate::partition::{assign_areas, PartitionKind, PartitionSpec};

/// `m × K` point counts; row `a - 1` holds area `a`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AreaClassHistogram {
    pub m: usize,
    pub k: usize,
    pub counts: Vec<u64>,
}

impl AreaClassHistogram {
    pub fn new(m: usize, k: usize) -> Self {
        AreaClassHistogram {
            m,
            k,
            counts: alloc::vec![0; m * k],
        }
    }

    /// Count for 1-based `area` and class `y`.
    pub fn get(&self, area: usize, y: usize) -> u64 {
        self.counts[(area - 1) * self.k + y]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn area_totals(&self) -> Vec<u64> {
        self.counts.chunks(self.k).map(|r| r.iter().sum()).collect()
    }

    pub fn class_totals(&self) -> Vec<u64> {
        (0..self.k)
            .map(|y| (0..self.m).map(|a| self.counts[a * self.k + y]).sum())
            .collect()
    }

    /// Adds another histogram of the same shape.
    pub fn merge(&mut self, other: &AreaClassHistogram) -> Result<()> {
        if (self.m, self.k) != (other.m, other.k) {
            return Err(Error::arg("histogram shapes differ"));
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }
}

/// Per-area class counts over a labeled dataset; IGNORED points are skipped.
pub fn accumulate_histogram<'a, I>(
    dataset: I,
    spec: &PartitionSpec,
    k: usize,
) -> Result<AreaClassHistogram>
where
    I: IntoIterator<Item = &'a PointCloud>,
{
    spec.validate()?;
    let mut hist = AreaClassHistogram::new(spec.m, k);
    for (s, cloud) in dataset.into_iter().enumerate() {
        let labels = cloud
            .labels()
            .ok_or_else(|| Error::arg(alloc::format!("scan {s} has no labels")))?;
        let areas = assign_areas(cloud, spec)?;
        for (&a, &y) in areas.area_of.iter().zip(labels) {
            if y.is_ignored() {
                continue;
            }
            if y.index() >= k {
                return Err(Error::arg(alloc::format!(
                    "class {} out of range for K = {k}",
                    y.0
                )));
            }
            hist.counts[(a as usize - 1) * k + y.index()] += 1;
        }
    }
    Ok(hist)
}

fn entropy_of_counts(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    -counts
        .iter()
        .map(|&c| math::xlogx(c as f64 / t))
        .sum::<f64>()
}

/// `H(Y|A)` in nats.
pub fn conditional_entropy(hist: &AreaClassHistogram) -> Result<f64> {
    let total = hist.total();
    if total == 0 {
        return Err(Error::arg("empty histogram"));
    }
    let t = total as f64;
    Ok(hist
        .counts
        .chunks(hist.k)
        .map(|row| {
            let n: u64 = row.iter().sum();
            n as f64 / t * entropy_of_counts(row)
        })
        .sum())
}

/// Unconditional class entropy `H(Y)` from the histogram's column sums.
pub fn class_entropy(hist: &AreaClassHistogram) -> Result<f64> {
    if hist.total() == 0 {
        return Err(Error::arg("empty histogram"));
    }
    Ok(entropy_of_counts(&hist.class_totals()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyRow {
    pub kind: PartitionKind,
    pub m: usize,
    pub h_conditional: f64,
    /// `H(Y)`, identical on every row.
    pub h_marginal: f64,
}

/// One conditional entropy per spec, next to the unconditional class entropy.
pub fn partition_entropy_report(
    dataset: &[PointCloud],
    specs: &[PartitionSpec],
    k: usize,
) -> Result<Vec<EntropyRow>> {
    specs
        .iter()
        .map(|spec| {
            let hist = accumulate_histogram(dataset, spec, k)?;
            Ok(EntropyRow {
                kind: spec.kind,
                m: spec.m,
                h_conditional: conditional_entropy(&hist)?,
                h_marginal: class_entropy(&hist)?,
            })
        })
        .collect()
}

/// Anything that maps a full scan to per-point class distributions
/// (row-major `N × K`).
pub trait PointModel {
    fn num_classes(&self) -> usize;
    fn predict_points(&self, cloud: &PointCloud) -> Result<Vec<f64>>;
}

/// Brute-force marginal prediction.
///
/// For each area, the cloud's points inside it are completed with each
/// filling's points outside the same area (using up to `k_fill` fillings);
/// the model's distributions for the inside points are averaged over the
/// composites. Output rows follow the cloud's original point order.
pub fn marginal_prediction<M: PointModel + ?Sized>(
    model: &M,
    cloud: &PointCloud,
    spec: &PartitionSpec,
    fillings: &[PointCloud],
    k_fill: usize,
) -> Result<Vec<f64>> {
    if fillings.is_empty() || k_fill == 0 {
        return Err(Error::arg("marginal prediction needs at least one filling"));
    }
    let k = model.num_classes();
    let base = cloud.clone().without_labels();
    let areas = assign_areas(&base, spec)?;
    let fills: Vec<(PointCloud, Vec<u16>)> = fillings
        .iter()
        .take(k_fill)
        .map(|f| {
            let f = f.clone().without_labels();
            let a = assign_areas(&f, spec)?.area_of;
            Ok((f, a))
        })
        .collect::<Result<_>>()?;
    let used = fills.len() as f64;
    let mut out = alloc::vec![0.0; cloud.len() * k];
    for area in 1..=spec.m as u16 {
        let inside = areas.members(area);
        if inside.is_empty() {
            continue;
        }
        let kept = base.subset(&inside)?;
        for (f, fa) in &fills {
            let outside: Vec<usize> = (0..f.len()).filter(|&i| fa[i] != area).collect();
            let composite = PointCloud::concat(&kept, &f.subset(&outside)?)?;
            let pred = model.predict_points(&composite)?;
            for (row, &orig) in inside.iter().enumerate() {
                for c in 0..k {
                    out[orig * k + c] += pred[row * k + c] / used;
                }
            }
        }
    }
    Ok(out)
}

/// Mean over points of `Σ_y −p_y ln p_y`, for row-major `N × K` distributions.
pub fn marginal_entropy(dist: &[f64], k: usize) -> f64 {
    let n = dist.len() / k;
    if n == 0 {
        return 0.0;
    }
    -dist.iter().map(|&p| math::xlogx(p)).sum::<f64>() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::ClassId;

    fn spec(m: usize) -> PartitionSpec {
        PartitionSpec {
            kind: PartitionKind::Inclination,
            m,
            lo: -30.0,
            hi: 10.0,
            seed: 0,
        }
    }

    #[test]
    fn single_point_histogram() {
        // Two areas split at -10 degrees; z = 0 at 10 m sits in area 2.
        let c = PointCloud::from_coords(alloc::vec![[10.0, 0.0, 0.0]])
            .unwrap()
            .attach_labels(alloc::vec![ClassId(3)])
            .unwrap();
        let h = accumulate_histogram([&c], &spec(2), 5).unwrap();
        assert_eq!(h.get(2, 3), 1);
        assert_eq!(h.total(), 1);
        let h2 = accumulate_histogram([&c, &c], &spec(2), 5).unwrap();
        assert_eq!(h2.get(2, 3), 2);
    }

    #[test]
    fn unlabeled_rejected() {
        let c = PointCloud::from_coords(alloc::vec![[1.0, 0.0, 0.0]]).unwrap();
        assert!(accumulate_histogram([&c], &spec(2), 5).is_err());
    }

    #[test]
    fn pure_and_uniform_entropy() {
        let pure = AreaClassHistogram {
            m: 3,
            k: 3,
            counts: alloc::vec![5, 0, 0, 0, 2, 0, 0, 0, 9],
        };
        assert_eq!(conditional_entropy(&pure).unwrap(), 0.0);
        let uni = AreaClassHistogram {
            m: 2,
            k: 4,
            counts: alloc::vec![3; 8],
        };
        assert!((conditional_entropy(&uni).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(conditional_entropy(&AreaClassHistogram::new(2, 2)).is_err());
    }

    #[test]
    fn marginal_entropy_examples() {
        assert_eq!(marginal_entropy(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 3), 0.0);
        let u = alloc::vec![0.25; 8];
        assert!((marginal_entropy(&u, 4) - 4f64.ln()).abs() < 1e-12);
    }

    struct Constant(Vec<f64>);
    impl PointModel for Constant {
        fn num_classes(&self) -> usize {
            self.0.len()
        }
        fn predict_points(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
            Ok(self
                .0
                .iter()
                .copied()
                .cycle()
                .take(cloud.len() * self.0.len())
                .collect())
        }
    }

    #[test]
    fn constant_model_marginal() {
        let c = PointCloud::from_coords(alloc::vec![
            [10.0, 0.0, -3.0],
            [10.0, 1.0, 1.0],
            [5.0, 5.0, 0.0]
        ])
        .unwrap();
        let m = Constant(alloc::vec![0.1, 0.7, 0.2]);
        let out = marginal_prediction(&m, &c, &spec(3), &[c.clone(), c.clone()], 2).unwrap();
        for row in out.chunks(3) {
            for (a, b) in row.iter().zip(&m.0) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        assert!(marginal_prediction(&m, &c, &spec(3), &[], 2).is_err());
    }
}
