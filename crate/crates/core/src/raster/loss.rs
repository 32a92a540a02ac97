use super::distance::DistanceFields;
use super::image::{MaskImage, SoftMask};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Distance-transform alignment loss and its gradient with respect to each soft value.
///
/// `mean_p [ m_p * d_out(p) + d_in(p) * (1 - lambda * m_p) ]`. With `lambda > 1` the
/// second term rewards rendered mass on the mask interior.
pub fn dt_loss<T: Real>(soft: &SoftMask<T>, fields: &DistanceFields<T>, lambda: T) -> Result<(T, Vec<T>)> {
    if (soft.height(), soft.width()) != (fields.height, fields.width) {
        return Err(Error::ShapeMismatch(format!(
            "soft mask {}x{} vs fields {}x{}",
            soft.height(),
            soft.width(),
            fields.height,
            fields.width
        )));
    }
    let n = T::of(soft.values().len());
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(soft.values().len());
    for ((&m, &dout), &din) in soft.values().iter().zip(&fields.d_out).zip(&fields.d_in) {
        total = total + m * dout + din * (T::one() - lambda * m);
        grad.push((dout - lambda * din) / n);
    }
    Ok((total / n, grad))
}

/// `1 - sum(m * M) / sum(m + M - m * M)` and its gradient.
pub fn soft_iou_loss<T: Real>(soft: &SoftMask<T>, mask: &MaskImage) -> Result<(T, Vec<T>)> {
    if (soft.height(), soft.width()) != (mask.height(), mask.width()) {
        return Err(Error::ShapeMismatch("soft mask and mask sizes differ".into()));
    }
    let target = mask.values().iter().map(|&v| if v != 0 { T::one() } else { T::zero() });
    let (mut inter, mut union) = (T::zero(), T::zero());
    for (&m, t) in soft.values().iter().zip(target.clone()) {
        inter = inter + m * t;
        union = union + m + t - m * t;
    }
    if !(union > T::zero()) {
        return Err(Error::Undefined("soft IoU of two all-zero masks".into()));
    }
    let u2 = union * union;
    // d(I/U)/dm = (t * U - I * (1 - t)) / U^2
    let grad = target.map(|t| -(t * union - inter * (T::one() - t)) / u2).collect();
    Ok((T::one() - inter / union, grad))
}

/// Share of rendered soft mass that lies outside the image frame.
pub fn out_of_frame_fraction<T: Real>(total_mass: T, in_frame_mass: T) -> Result<T> {
    if !(total_mass > T::zero()) {
        return Err(Error::Undefined("out-of-frame fraction with zero rendered mass".into()));
    }
    Ok((T::one() - in_frame_mass / total_mass).max(T::zero()).min(T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{dilate, distance_fields};

    #[test]
    fn dt_loss_zero_when_nothing_rendered_and_no_interior() {
        let soft = SoftMask::from_raw(3, 3, vec![0.0f64; 9]);
        let f = distance_fields::<f64>(&MaskImage::zeros(3, 3));
        assert_eq!(dt_loss(&soft, &f, 4.0).unwrap().0, 0.0);
    }

    #[test]
    fn dt_loss_rewards_exact_coverage() {
        let mask = dilate(&MaskImage::from_fn(9, 9, |r, c| (3..6).contains(&r) && (2..7).contains(&c)), 1.0);
        let f = distance_fields::<f64>(&mask);
        let soft = SoftMask::from_mask(&mask);
        let (loss, _) = dt_loss(&soft, &f, 4.0).unwrap();
        let direct: f64 = (0..81).filter(|&i| mask.values()[i] != 0).map(|i| f.d_in[i] * (1.0 - 4.0)).sum::<f64>() / 81.0;
        assert!((loss - direct).abs() < 1e-15);
        assert!(loss < 0.0);
    }

    #[test]
    fn dt_loss_shape_mismatch() {
        let soft = SoftMask::from_raw(2, 2, vec![0.0f64; 4]);
        let f = distance_fields::<f64>(&MaskImage::zeros(3, 3));
        assert!(dt_loss(&soft, &f, 4.0).is_err());
    }

    #[test]
    fn soft_iou_cases() {
        let m = MaskImage::from_fn(4, 4, |r, c| r < 2 && c < 3);
        assert_eq!(soft_iou_loss(&SoftMask::<f64>::from_mask(&m), &m).unwrap().0, 0.0);
        let other = MaskImage::from_fn(4, 4, |r, _| r >= 2);
        assert_eq!(soft_iou_loss(&SoftMask::<f64>::from_mask(&other), &m).unwrap().0, 1.0);
        let zero = MaskImage::zeros(4, 4);
        assert!(soft_iou_loss(&SoftMask::<f64>::from_mask(&zero), &zero).is_err());
    }

    #[test]
    fn out_of_frame_cases() {
        assert_eq!(out_of_frame_fraction(10.0f64, 10.0).unwrap(), 0.0);
        assert_eq!(out_of_frame_fraction(10.0f64, 0.0).unwrap(), 1.0);
        assert_eq!(out_of_frame_fraction(10.0f64, 5.0).unwrap(), 0.5);
        assert!(out_of_frame_fraction(0.0f64, 0.0).is_err());
    }
}
