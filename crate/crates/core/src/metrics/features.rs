use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use super::Triggerer;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{distance, Network};
use crate::scalar::Scalar;
use crate::trigger::AttackTargeting;

/// Two leading principal components of a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca2 {
    pub coords: Vec<[f64; 2]>,
    /// Variance along each component, non-increasing.
    pub explained: [f64; 2],
}

/// Exact PCA onto two components. Each component is oriented so its first
/// nonzero loading is positive.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Pca2> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::invalid("pca needs at least one point"));
    }
    let d = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        crate::nn::check_dim(d, r.len(), i)?;
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let centred = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes = [vec![0.0; d], vec![0.0; d]];
    let mut explained = [0.0; 2];
    for (k, &idx) in order.iter().take(2).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        axes[k] = v;
        explained[k] = eig.eigenvalues[idx].max(0.0);
    }
    let coords = (0..n)
        .map(|i| {
            let row = centred.row(i);
            let p = |axis: &[f64]| row.iter().zip(axis).map(|(a, b)| a * b).sum::<f64>();
            [p(&axes[0]), p(&axes[1])]
        })
        .collect();
    Ok(Pca2 { coords, explained })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureGroup {
    Benign,
    Poisoned,
}

impl FeatureGroup {
    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::Benign => "benign",
            FeatureGroup::Poisoned => "poisoned",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow<T> {
    pub group: FeatureGroup,
    /// True label of the (untriggered) sample.
    pub label: usize,
    pub features: Vec<T>,
    pub pca: [f64; 2],
}

/// Penultimate-layer view of a benign panel and its triggered non-target
/// samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDiagnostic<T> {
    pub rows: Vec<FeatureRow<T>>,
    pub explained: [f64; 2],
    /// Distance between the poisoned centroid and the centroid of benign
    /// target-class samples.
    pub poisoned_to_target: T,
    /// Distance between the poisoned centroid and the centroid of the same
    /// samples before triggering.
    pub poisoned_to_own: T,
}

fn centroid<T: Scalar>(rows: &[&[T]]) -> Vec<T> {
    let d = rows.first().map_or(0, |r| r.len());
    let mut c = vec![T::zero(); d];
    for r in rows {
        for (a, &b) in c.iter_mut().zip(r.iter()) {
            *a += b;
        }
    }
    let n = T::count(rows.len().max(1));
    c.iter_mut().for_each(|a| *a /= n);
    c
}

/// Captures penultimate activations of every benign sample and of the
/// triggered version of every non-target sample, then projects all of them
/// with [`pca_2d`].
pub fn feature_diagnostic<T: Scalar>(
    net: &Network<T>,
    panel: &Dataset<T>,
    triggerer: &Triggerer<'_, T>,
    targeting: AttackTargeting,
) -> Result<FeatureDiagnostic<T>> {
    let mut rows = Vec::with_capacity(2 * panel.len());
    for (x, label) in panel.iter() {
        rows.push(FeatureRow { group: FeatureGroup::Benign, label, features: net.penultimate(x)?, pca: [0.0; 2] });
    }
    for (x, label) in panel.iter() {
        if label != targeting.target {
            let xt = triggerer.apply(x, panel.shape())?;
            rows.push(FeatureRow { group: FeatureGroup::Poisoned, label, features: net.penultimate(&xt)?, pca: [0.0; 2] });
        }
    }
    let pick = |f: &dyn Fn(&FeatureRow<T>) -> bool| -> Vec<&[T]> { rows.iter().filter(|r| f(r)).map(|r| r.features.as_slice()).collect() };
    let target_rows = pick(&|r| r.group == FeatureGroup::Benign && r.label == targeting.target);
    let own_rows = pick(&|r| r.group == FeatureGroup::Benign && r.label != targeting.target);
    let poisoned_rows = pick(&|r| r.group == FeatureGroup::Poisoned);
    if target_rows.is_empty() || poisoned_rows.is_empty() {
        return Err(Error::invalid("feature panel needs target-class and non-target samples"));
    }
    let pc = centroid(&poisoned_rows);
    let poisoned_to_target = distance(&pc, &centroid(&target_rows));
    let poisoned_to_own = distance(&pc, &centroid(&own_rows));
    let flat: Vec<Vec<f64>> = rows.iter().map(|r| r.features.iter().map(|v| v.as_f64()).collect()).collect();
    let pca = pca_2d(&flat)?;
    for (r, p) in rows.iter_mut().zip(pca.coords) {
        r.pca = p;
    }
    Ok(FeatureDiagnostic { rows, explained: pca.explained, poisoned_to_target, poisoned_to_own })
}

impl<T: Scalar> FeatureDiagnostic<T> {
    /// Writes `group,label,pc1,pc2` per sample.
    pub fn write_pca_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["group", "label", "pc1", "pc2"])?;
        for r in &self.rows {
            w.write_record([r.group.name().to_string(), r.label.to_string(), r.pca[0].to_string(), r.pca[1].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the two centroid distances as `pair,distance`.
    pub fn write_centroids_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["pair", "distance"])?;
        w.write_record(["poisoned-target", &self.poisoned_to_target.as_f64().to_string()])?;
        w.write_record(["poisoned-own", &self.poisoned_to_own.as_f64().to_string()])?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pca_of_planar_points_is_isometric() {
        let pts = vec![vec![0.0, 0.0], vec![3.0, 1.0], vec![-1.0, 2.0], vec![4.0, -2.5], vec![0.5, 0.25]];
        let p = pca_2d(&pts).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let d0 = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
                let d1 = ((p.coords[i][0] - p.coords[j][0]).powi(2) + (p.coords[i][1] - p.coords[j][1]).powi(2)).sqrt();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
        assert!(p.explained[0] >= p.explained[1]);
    }

    #[test]
    fn pca_is_deterministic_and_signed() {
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, -2.0 * i as f64 + 0.1 * (i % 3) as f64, 1.0]).collect();
        let a = pca_2d(&pts).unwrap();
        assert_eq!(a, pca_2d(&pts).unwrap());
        // first component follows +x (first loading positive)
        assert!(a.coords[19][0] > a.coords[0][0]);
    }

    #[test]
    fn pca_rejects_ragged() {
        assert!(pca_2d(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(pca_2d(&[]).is_err());
    }
}
