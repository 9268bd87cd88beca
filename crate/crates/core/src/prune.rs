//! Selective embedding offsets: hard-threshold the text-embedding difference
//! at a percentile of its magnitudes and add what survives to the source
//! image embedding.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("embedding must have at least one entry".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("embedding entry {i} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Indices of nonzero entries.
    pub fn support(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&i| self.values[i] != 0.0).collect()
    }
}

/// Direction of the text offset added to the image embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OffsetSign {
    /// `src_txt − tgt_txt`, as the method is written.
    #[default]
    Paper,
    /// `tgt_txt − src_txt`.
    Reversed,
}

/// Linear-interpolation percentile (numpy's default method) of `|values|`.
pub fn percentile_threshold(values: &[f64], percentile: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::Parameter(format!(
            "percentile must be in [0, 100], got {percentile}"
        )));
    }
    if values.is_empty() {
        return Err(Error::Shape("percentile of an empty vector".into()));
    }
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let pos = percentile / 100.0 * (mags.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    let (a, b) = (mags[lo], mags[hi]);
    // numpy's lerp: evaluated from the nearer end
    Ok(if t >= 0.5 { b - (b - a) * (1.0 - t) } else { a + (b - a) * t })
}

/// Keeps `y[i]` where `|y[i]| ≥ tau`, zeroes the rest.
pub fn prune_with_threshold(y: &EmbeddingVector, tau: f64) -> EmbeddingVector {
    EmbeddingVector {
        values: y
            .values
            .iter()
            .map(|&v| if v.abs() >= tau { v } else { 0.0 })
            .collect(),
    }
}

/// Hard-thresholds `y` at the `tau_percentile`-th percentile of `|y|`.
pub fn prune(y: &EmbeddingVector, tau_percentile: f64) -> Result<EmbeddingVector> {
    let tau = percentile_threshold(&y.values, tau_percentile)?;
    Ok(prune_with_threshold(y, tau))
}

/// `src_img + prune(±(src_txt − tgt_txt))`.
pub fn interpolate(
    src_img: &EmbeddingVector,
    src_txt: &EmbeddingVector,
    tgt_txt: &EmbeddingVector,
    tau_percentile: f64,
    sign: OffsetSign,
) -> Result<EmbeddingVector> {
    let d = src_img.dim();
    if src_txt.dim() != d || tgt_txt.dim() != d {
        return Err(Error::Shape(format!(
            "embedding dims differ: image {d}, source text {}, target text {}",
            src_txt.dim(),
            tgt_txt.dim()
        )));
    }
    let offset: Vec<f64> = match sign {
        OffsetSign::Paper => src_txt.values.iter().zip(&tgt_txt.values).map(|(a, b)| a - b).collect(),
        OffsetSign::Reversed => tgt_txt.values.iter().zip(&src_txt.values).map(|(a, b)| a - b).collect(),
    };
    let pruned = prune(&EmbeddingVector { values: offset }, tau_percentile)?;
    Ok(EmbeddingVector {
        values: src_img
            .values
            .iter()
            .zip(&pruned.values)
            // skipping zero offsets keeps untouched entries bit-identical (incl. -0.0)
            .map(|(&a, &b)| if b == 0.0 { a } else { a + b })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn median_example() {
        let y = ev(&[0.5, -0.1, 0.05, -0.9]);
        assert!((percentile_threshold(y.values(), 50.0).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(prune(&y, 50.0).unwrap().values(), &[0.5, 0.0, 0.0, -0.9]);
    }

    #[test]
    fn zero_percentile_keeps_everything() {
        let y = ev(&[0.5, -0.1, 0.05, -0.9]);
        assert_eq!(prune(&y, 0.0).unwrap(), y);
    }

    #[test]
    fn full_percentile_keeps_ties() {
        let y = ev(&[0.25, -0.25, 0.25]);
        assert_eq!(prune(&y, 100.0).unwrap(), y);
        let y = ev(&[0.1, -0.7, 0.3]);
        assert_eq!(prune(&y, 100.0).unwrap().values(), &[0.0, -0.7, 0.0]);
    }

    #[test]
    fn percentile_range_checked() {
        let y = ev(&[1.0]);
        assert!(matches!(prune(&y, -0.1), Err(Error::Parameter(_))));
        assert!(matches!(prune(&y, 100.5), Err(Error::Parameter(_))));
        assert!(EmbeddingVector::new(vec![]).is_err());
    }

    #[test]
    fn interpolate_equal_text_is_identity() {
        let img = ev(&[0.3, -1.2, 4.0]);
        let txt = ev(&[1.0, 2.0, 3.0]);
        assert_eq!(interpolate(&img, &txt, &txt, 80.0, OffsetSign::Paper).unwrap(), img);
    }

    #[test]
    fn interpolate_signs() {
        let img = ev(&[0.0, 0.0]);
        let a = ev(&[1.0, 0.5]);
        let b = ev(&[0.0, 0.0]);
        assert_eq!(interpolate(&img, &a, &b, 0.0, OffsetSign::Paper).unwrap().values(), &[1.0, 0.5]);
        assert_eq!(interpolate(&img, &a, &b, 0.0, OffsetSign::Reversed).unwrap().values(), &[-1.0, -0.5]);
        assert!(interpolate(&img, &a, &ev(&[1.0]), 0.0, OffsetSign::Paper).is_err());
    }
}
