use super::DepthImage;
use crate::tensor::{bicubic_resize, Tensor};

pub const DEFAULT_D_MAX: f32 = 10_000.0;

/// Upscale factor of the SR block; HR targets are produced at `SR_UPSCALE`
/// times the low-resolution size.
pub const SR_UPSCALE: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DegradeError {
    #[error("unsupported downsampling factor {0}, expected 8 or 10")]
    Factor(usize),
    #[error("image {w}x{h} is not divisible by factor {factor}")]
    Indivisible { w: usize, h: usize, factor: usize },
    #[error("degrade expects a (1, H, W) image, got {0:?}")]
    Shape(Vec<usize>),
}

/// `255 * clamp(raw / d_max, 0, 1)` as a `(1, H, W)` tensor.
pub fn normalize(img: &DepthImage, d_max: f32) -> Tensor<f32> {
    assert!(d_max > 0.0, "d_max must be positive");
    let data = img
        .raw
        .iter()
        .map(|&v| 255.0 * (v as f32 / d_max).clamp(0.0, 1.0))
        .collect();
    Tensor::new(&[1, img.height, img.width], data).expect("image dimensions")
}

/// Bicubic low-resolution input and the matching SR target.
///
/// The target is the original image whenever it is exactly `SR_UPSCALE` times
/// the low-resolution size (factor 8); otherwise the original is resized to
/// that size (factor 10 gives 512x384 from 640x480).
pub fn degrade(img: &Tensor<f32>, factor: usize) -> Result<(Tensor<f32>, Tensor<f32>), DegradeError> {
    if factor != 8 && factor != 10 {
        return Err(DegradeError::Factor(factor));
    }
    let (h, w) = match img.shape() {
        &[1, h, w] => (h, w),
        s => return Err(DegradeError::Shape(s.to_vec())),
    };
    if h % factor != 0 || w % factor != 0 {
        return Err(DegradeError::Indivisible { w, h, factor });
    }
    let (lh, lw) = (h / factor, w / factor);
    let lr = bicubic_resize(img, lh, lw);
    let (th, tw) = (SR_UPSCALE * lh, SR_UPSCALE * lw);
    let hr = if (th, tw) == (h, w) {
        img.clone()
    } else {
        bicubic_resize(img, th, tw)
    };
    Ok((lr, hr))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_values() {
        let img = DepthImage::new(4, 1, vec![5000, 0, 10000, 65535]).unwrap();
        let t = normalize(&img, DEFAULT_D_MAX);
        assert_eq!(t.data(), &[127.5, 0.0, 255.0, 255.0]);
        assert_eq!(t.shape(), &[1, 1, 4]);
    }

    #[test]
    fn degrade_sizes() {
        let img = Tensor::full(&[1, 480, 640], 80.0);
        let (lr, hr) = degrade(&img, 8).unwrap();
        assert_eq!((lr.shape(), hr.shape()), (&[1, 60, 80][..], &[1, 480, 640][..]));
        let (lr, hr) = degrade(&img, 10).unwrap();
        assert_eq!((lr.shape(), hr.shape()), (&[1, 48, 64][..], &[1, 384, 512][..]));
        assert!(lr.data().iter().chain(hr.data()).all(|v| (v - 80.0).abs() < 1e-3));
        assert_eq!(degrade(&img, 4), Err(DegradeError::Factor(4)));
        let odd = Tensor::zeros(&[1, 61, 80]);
        assert!(matches!(degrade(&odd, 8), Err(DegradeError::Indivisible { .. })));
    }
}
