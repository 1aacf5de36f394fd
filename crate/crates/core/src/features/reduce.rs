//! PCA dimensionality reduction keeping a fraction of the total variance.

use super::FeatureError;
use crate::linalg::{self, dot};
use crate::textfmt::KvDocument;

const MAGIC: &str = "posefer-pca-reducer";

#[derive(Debug, Clone, PartialEq)]
pub struct PcaReducer {
    pub mean: Vec<f64>,
    /// Kept unit axes, by descending variance.
    pub axes: Vec<Vec<f64>>,
    /// Variance along each kept axis.
    pub variances: Vec<f64>,
    pub total_variance: f64,
    pub retained_fraction: f64,
}

impl PcaReducer {
    pub fn in_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn out_dim(&self) -> usize {
        self.axes.len()
    }

    /// Variance along kept axes over total variance (1 for constant data).
    pub fn retained_ratio(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.variances.iter().sum::<f64>() / self.total_variance
        } else {
            1.0
        }
    }

    pub fn to_text(&self) -> String {
        let mut d = KvDocument::new(MAGIC, 1);
        d.push("in_dim", self.in_dim());
        d.push("out_dim", self.out_dim());
        d.push_floats("retained_fraction", &[self.retained_fraction]);
        d.push_floats("total_variance", &[self.total_variance]);
        d.push_floats("mean", &self.mean);
        d.push_floats("variances", &self.variances);
        for (i, a) in self.axes.iter().enumerate() {
            d.push_floats(&format!("axis_{i}"), a);
        }
        d.to_string()
    }

    pub fn from_text(text: &str) -> Result<Self, FeatureError> {
        let d = KvDocument::parse(text)?;
        d.expect(MAGIC, 1)?;
        let in_dim: usize = d.value("in_dim")?;
        let out_dim: usize = d.value("out_dim")?;
        if in_dim == 0 || out_dim > in_dim {
            return Err(FeatureError::InvalidParams(format!(
                "out_dim {out_dim} incompatible with in_dim {in_dim}"
            )));
        }
        let retained_fraction = d.floats("retained_fraction", Some(1))?[0];
        if !(retained_fraction > 0.0 && retained_fraction <= 1.0) {
            return Err(FeatureError::InvalidParams(
                "retained_fraction must lie in (0, 1]".into(),
            ));
        }
        let total_variance = d.floats("total_variance", Some(1))?[0];
        let mean = d.floats("mean", Some(in_dim))?;
        let variances = d.floats("variances", Some(out_dim))?;
        let axes = (0..out_dim)
            .map(|i| d.floats(&format!("axis_{i}"), Some(in_dim)))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            mean,
            axes,
            variances,
            total_variance,
            retained_fraction,
        })
    }
}

/// Keeps the fewest leading principal axes whose variance reaches
/// `retained_fraction` of the total.
pub fn pca_reduce_fit(
    samples: &[Vec<f64>],
    retained_fraction: f64,
) -> Result<PcaReducer, FeatureError> {
    if !(retained_fraction > 0.0 && retained_fraction <= 1.0) {
        return Err(FeatureError::InvalidParams(
            "retained_fraction must lie in (0, 1]".into(),
        ));
    }
    let p = linalg::pca(samples)?;
    let target = retained_fraction * p.total_variance;
    let mut kept = 0;
    let mut acc = 0.0;
    // A little slack absorbs rounding when the kept axes span all variance.
    while kept < p.axes.len() && acc < target * (1.0 - 1e-12) {
        acc += p.variances[kept];
        kept += 1;
    }
    if p.total_variance > 0.0 && kept == 0 {
        kept = 1.min(p.axes.len());
    }
    let mut axes = p.axes;
    let mut variances = p.variances;
    axes.truncate(kept);
    variances.truncate(kept);
    Ok(PcaReducer {
        mean: p.mean,
        axes,
        variances,
        total_variance: p.total_variance,
        retained_fraction,
    })
}

/// Coordinates of `v - mean` along the kept axes.
pub fn pca_reduce_apply(reducer: &PcaReducer, v: &[f64]) -> Result<Vec<f64>, FeatureError> {
    if v.len() != reducer.in_dim() {
        return Err(FeatureError::DimensionMismatch {
            expected: reducer.in_dim(),
            found: v.len(),
        });
    }
    let centered: Vec<f64> = v.iter().zip(&reducer.mean).map(|(a, m)| a - m).collect();
    Ok(reducer.axes.iter().map(|a| dot(&centered, a)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank_two(m: usize) -> Vec<Vec<f64>> {
        (0..m)
            .map(|i| {
                let (a, b) = ((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos() * 3.0);
                (0..10)
                    .map(|j| a * (j as f64 - 4.5) + b * (j % 2) as f64 + 2.0)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn rank_two_data_keeps_two_axes() {
        let r = pca_reduce_fit(&rank_two(30), 0.95).unwrap();
        assert_eq!(r.out_dim(), 2);
        assert!(r.retained_ratio() >= 0.95);
    }

    #[test]
    fn mean_maps_to_origin_and_axis_to_unit() {
        let r = pca_reduce_fit(&rank_two(30), 1.0).unwrap();
        let z = pca_reduce_apply(&r, &r.mean).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
        let v: Vec<f64> = r.mean.iter().zip(&r.axes[0]).map(|(m, a)| m + a).collect();
        let e = pca_reduce_apply(&r, &v).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-9 && e[1].abs() < 1e-9);
    }

    #[test]
    fn text_round_trip() {
        let r = pca_reduce_fit(&rank_two(12), 0.9).unwrap();
        assert_eq!(PcaReducer::from_text(&r.to_text()).unwrap(), r);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            pca_reduce_fit(&[vec![1.0]], 0.9),
            Err(FeatureError::InsufficientSamples(1))
        ));
        assert!(pca_reduce_fit(&rank_two(4), 0.0).is_err());
        let r = pca_reduce_fit(&rank_two(4), 0.9).unwrap();
        assert!(matches!(
            pca_reduce_apply(&r, &[1.0]),
            Err(FeatureError::DimensionMismatch {
                expected: 10,
                found: 1
            })
        ));
    }
}
