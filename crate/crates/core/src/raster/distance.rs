use log::debug;

use super::image::MaskImage;
use crate::scalar::Real;

/// Squared-distance fields to the dilated mask and to its complement, divided by
/// the image diagonal `sqrt(H^2 + W^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceFields<T> {
    pub height: usize,
    pub width: usize,
    /// Zero on the mask, growing outside it.
    pub d_out: Vec<T>,
    /// Zero off the mask, growing toward its interior.
    pub d_in: Vec<T>,
}

/// One-dimensional lower envelope of parabolas rooted at the finite entries of `f`.
fn envelope_1d(f: &[f64], out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let pf = p as f64;
                    let s = ((fq + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while k + 1 < v.len() && z[k + 1] < qf {
            k += 1;
        }
        let d = qf - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance (in pixels²) from every pixel to the nearest
/// pixel where `site` is true; `+inf` when there are no sites.
pub fn squared_distance_transform(height: usize, width: usize, site: impl Fn(usize) -> bool) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..height * width).map(|i| if site(i) { 0.0 } else { f64::INFINITY }).collect();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    let mut col = vec![0.0; height];
    let mut col_out = vec![0.0; height];
    for c in 0..width {
        for r in 0..height {
            col[r] = grid[r * width + c];
        }
        envelope_1d(&col, &mut col_out, &mut v, &mut z);
        for r in 0..height {
            grid[r * width + c] = col_out[r];
        }
    }
    let mut row_out = vec![0.0; width];
    for r in 0..height {
        let row = &mut grid[r * width..(r + 1) * width];
        envelope_1d(row, &mut row_out, &mut v, &mut z);
        row.copy_from_slice(&row_out);
    }
    grid
}

/// Morphological dilation with a Euclidean disk of radius `r` pixels.
pub fn dilate(mask: &MaskImage, r: f64) -> MaskImage {
    let (h, w) = (mask.height(), mask.width());
    let sq = squared_distance_transform(h, w, |i| mask.values()[i] != 0);
    let r2 = r.max(0.0) * r.max(0.0);
    MaskImage::new(h, w, sq.iter().map(|&d| (d <= r2) as u8).collect()).expect("binary values")
}

/// Normalized squared distance fields of a mask.
///
/// A field with no reference pixels (empty mask for `d_out`, full mask for `d_in`)
/// is all zero.
pub fn distance_fields<T: Real>(mask: &MaskImage) -> DistanceFields<T> {
    let (h, w) = (mask.height(), mask.width());
    let diag = ((h * h + w * w) as f64).sqrt();
    let vals = mask.values();
    let normalize = |sq: Vec<f64>, what: &str| -> Vec<T> {
        if sq.first().is_some_and(|d| d.is_infinite()) {
            debug!("{what} field has no reference pixels; using zeros");
            return vec![T::zero(); sq.len()];
        }
        sq.into_iter().map(|d| T::lit(d / diag)).collect()
    };
    let d_out = normalize(squared_distance_transform(h, w, |i| vals[i] != 0), "outside");
    let d_in = normalize(squared_distance_transform(h, w, |i| vals[i] == 0), "inside");
    DistanceFields { height: h, width: w, d_out, d_in }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_site_corner() {
        let mut m = MaskImage::zeros(3, 3);
        m.set(0, 0, true);
        let f = distance_fields::<f64>(&m);
        let d = 18f64.sqrt();
        // pixel (row 0, col 1) is one pixel from the site
        assert_eq!(f.d_out[1], 1.0 / d);
        assert_eq!(f.d_out[8], 8.0 / d);
        assert_eq!(f.d_out[0], 0.0);
        assert_eq!(f.d_in[0], 1.0 / d);
        assert_eq!(f.d_in[4], 0.0);
    }

    #[test]
    fn empty_and_full_masks_use_zero_fields() {
        let f = distance_fields::<f64>(&MaskImage::zeros(4, 5));
        assert!(f.d_out.iter().chain(&f.d_in).all(|&v| v == 0.0));
        let full = MaskImage::from_fn(4, 5, |_, _| true);
        let f = distance_fields::<f64>(&full);
        assert!(f.d_out.iter().chain(&f.d_in).all(|&v| v == 0.0));
    }

    #[test]
    fn dilation_cases() {
        let m = MaskImage::from_fn(7, 7, |r, c| r == 3 && c == 3);
        assert_eq!(dilate(&m, 0.0), m);
        let d1 = dilate(&m, 1.0);
        let want = MaskImage::from_fn(7, 7, |r, c| (r as i32 - 3).abs() + (c as i32 - 3).abs() <= 1);
        assert_eq!(d1, want);
        let full = MaskImage::from_fn(4, 4, |_, _| true);
        assert_eq!(dilate(&full, 3.0), full);
        assert_eq!(dilate(&MaskImage::zeros(3, 3), 2.0), MaskImage::zeros(3, 3));
    }
}
