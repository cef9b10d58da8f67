use crate::docdata::GrayImage;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Nearest-neighbour resize to `height x width`, scaled to `[0, 1]` and
/// shifted by `-0.5`. Returns a `[1, height, width]` tensor.
pub fn image_to_model_input(image: &GrayImage, height: usize, width: usize) -> Result<Tensor> {
    if image.width == 0 || image.height == 0 {
        return Err(Error::InvalidArgument("image has zero extent".into()));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("target extent is zero".into()));
    }
    let mut data = Vec::with_capacity(height * width);
    for y in 0..height {
        let sy = y * image.height / height;
        for x in 0..width {
            let sx = x * image.width / width;
            data.push(f64::from(image.get(sx, sy)) / 255.0 - 0.5);
        }
    }
    Tensor::new(vec![1, height, width], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_and_black_pages() {
        let white = image_to_model_input(&GrayImage::new(8, 8, 255), 4, 4).unwrap();
        assert!(white.data().iter().all(|&v| v == 0.5));
        let black = image_to_model_input(&GrayImage::new(8, 8, 0), 4, 4).unwrap();
        assert!(black.data().iter().all(|&v| v == -0.5));
        assert_eq!(black.shape(), &[1, 4, 4]);
    }

    #[test]
    fn checkerboard_downsize_matches_per_pixel_oracle() {
        let mut img = GrayImage::new(8, 6, 0);
        for y in 0..6 {
            for x in 0..8 {
                img.set(x, y, if (x + y) % 2 == 0 { 255 } else { 0 });
            }
        }
        let t = image_to_model_input(&img, 3, 4).unwrap();
        // Nearest neighbour at 2x picks source pixel (2x, 2y): always even parity.
        for y in 0..3 {
            for x in 0..4 {
                let src = img.get(2 * x, 2 * y);
                assert_eq!(t.data()[y * 4 + x], f64::from(src) / 255.0 - 0.5);
                assert_eq!(t.data()[y * 4 + x], 0.5);
            }
        }
    }

    #[test]
    fn zero_extent_is_an_error() {
        let img = GrayImage { width: 0, height: 0, pixels: vec![] };
        assert!(image_to_model_input(&img, 4, 4).is_err());
    }
}
