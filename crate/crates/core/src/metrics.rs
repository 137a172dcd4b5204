//! Recovery metrics against a ground-truth Laplacian.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Off-diagonal magnitude above which an estimated entry counts as an edge.
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 1e-5;

fn same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() || !a.is_square() {
        return Err(Error::Dimension(format!(
            "matrices must be square and equal in shape, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `||L_hat - L_star||_F / ||L_star||_F`.
pub fn relative_error(l_hat: &DMatrix<f64>, l_star: &DMatrix<f64>) -> Result<f64> {
    same_shape(l_hat, l_star)?;
    let denom = l_star.norm();
    if denom == 0.0 {
        return Err(Error::InvalidArgument("reference matrix is zero".into()));
    }
    Ok((l_hat - l_star).norm() / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SupportCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl SupportCounts {
    pub fn f_score(&self) -> f64 {
        let tp2 = 2.0 * self.tp as f64;
        let denom = tp2 + self.fp as f64 + self.fn_ as f64;
        if denom == 0.0 {
            1.0
        } else {
            tp2 / denom
        }
    }
}

/// Edge detection counts over the strict upper triangle.
pub fn support_counts(
    l_hat: &DMatrix<f64>,
    l_star: &DMatrix<f64>,
    tau: f64,
) -> Result<SupportCounts> {
    same_shape(l_hat, l_star)?;
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be >= 0, got {tau}")));
    }
    let p = l_hat.nrows();
    let mut c = SupportCounts::default();
    for j in 1..p {
        for i in 0..j {
            let est = l_hat[(i, j)].abs() > tau;
            let truth = l_star[(i, j)].abs() > tau;
            match (est, truth) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(c)
}

/// `2 tp / (2 tp + fp + fn)`; 1 means the support is recovered exactly.
pub fn f_score(l_hat: &DMatrix<f64>, l_star: &DMatrix<f64>, tau: f64) -> Result<f64> {
    let c = support_counts(l_hat, l_star, tau)?;
    if c.tp + c.fn_ == 0 {
        return Err(Error::InvalidArgument(
            "reference graph has no edges above the threshold".into(),
        ));
    }
    Ok(c.f_score())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laplacian::apply_p;

    fn truth() -> DMatrix<f64> {
        apply_p(&[1.0, 0.0, 2.0, 0.0, 0.0, 0.7], 4).unwrap()
    }

    #[test]
    fn relative_error_examples() {
        let l = truth();
        assert_eq!(relative_error(&l, &l).unwrap(), 0.0);
        assert!((relative_error(&DMatrix::zeros(4, 4), &l).unwrap() - 1.0).abs() < 1e-15);
        assert!((relative_error(&(&l * 2.0), &l).unwrap() - 1.0).abs() < 1e-15);
        assert!(relative_error(&l, &DMatrix::zeros(4, 4)).is_err());
        assert!(relative_error(&DMatrix::zeros(3, 3), &l).is_err());
    }

    #[test]
    fn f_score_examples() {
        let l = truth();
        assert_eq!(f_score(&l, &l, DEFAULT_SUPPORT_THRESHOLD).unwrap(), 1.0);
        assert_eq!(f_score(&DMatrix::zeros(4, 4), &l, 1e-5).unwrap(), 0.0);
        // tp = 2, fp = 1, fn = 0.
        let star = apply_p(&[1.0, 1.0, 0.0, 0.0, 0.0, 0.0], 4).unwrap();
        let hat = apply_p(&[1.0, 1.0, 0.5, 0.0, 0.0, 0.0], 4).unwrap();
        assert!((f_score(&hat, &star, 1e-5).unwrap() - 0.8).abs() < 1e-15);
        assert!(f_score(&l, &DMatrix::zeros(4, 4), 1e-5).is_err());
    }

    #[test]
    fn threshold_suppresses_tiny_entries() {
        let star = truth();
        let hat = apply_p(&[1.0, 1e-7, 2.0, 0.0, 0.0, 0.7], 4).unwrap();
        assert_eq!(f_score(&hat, &star, 1e-5).unwrap(), 1.0);
        assert!(f_score(&hat, &star, 0.0).unwrap() < 1.0);
    }
}
