use rand::Rng;

use crate::error::{Error, Result};

/// A channel-major (`[C, H, W]`) image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Image> {
        if channels == 0 || height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(Error::Data(format!(
                "image {channels}x{height}x{width} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Image {
        Image {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Data(format!(
                "crop {height}x{width} at ({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * height * width);
        for c in 0..self.channels {
            for y in top..top + height {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + left..row + left + width]);
            }
        }
        Image::new(self.channels, height, width, data)
    }
}

/// Bilinear resampling with pixel centres aligned (half-pixel offset).
pub fn resize_bilinear(img: &Image, height: usize, width: usize) -> Result<Image> {
    if height == 0 || width == 0 {
        return Err(Error::Data("resize target must be positive".into()));
    }
    if height == img.height && width == img.width {
        return Ok(img.clone());
    }
    let axis = |src: usize, dst: usize| -> Vec<(usize, usize, f32)> {
        let scale = src as f32 / dst as f32;
        (0..dst)
            .map(|i| {
                let pos = ((i as f32 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f32);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(src - 1);
                (lo, hi, pos - lo as f32)
            })
            .collect()
    };
    let ys = axis(img.height, height);
    let xs = axis(img.width, width);
    let mut data = Vec::with_capacity(img.channels * height * width);
    for c in 0..img.channels {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = img.at(c, y0, x0) * (1.0 - fx) + img.at(c, y0, x1) * fx;
                let bottom = img.at(c, y1, x0) * (1.0 - fx) + img.at(c, y1, x1) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Image::new(img.channels, height, width, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Test,
}

/// Top-left corner of the crop: uniform in `[0, resize - crop]²` for
/// training, centred for testing.
pub fn crop_offset(mode: Mode, resize: usize, crop: usize, rng: &mut impl Rng) -> Result<(usize, usize)> {
    if crop > resize {
        return Err(Error::Data(format!("crop {crop} is larger than resize {resize}")));
    }
    let slack = resize - crop;
    Ok(match mode {
        Mode::Test => (slack / 2, slack / 2),
        Mode::Train => (rng.random_range(0..=slack), rng.random_range(0..=slack)),
    })
}

/// Resize to `resize × resize`, then crop `crop × crop` (random for
/// training, centred for testing). No flipping.
pub fn preprocess(img: &Image, mode: Mode, resize: usize, crop: usize, rng: &mut impl Rng) -> Result<Image> {
    let (top, left) = crop_offset(mode, resize, crop, rng)?;
    resize_bilinear(img, resize, resize)?.crop(top, left, crop, crop)
}

/// Evenly spaced frame indices `floor(i · T / n)`; short clips repeat
/// frames.
pub fn sample_indices(total: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| i * total / n).collect()
}

/// Samples `num_frames` frames uniformly and resizes each to
/// `size × size`, returning `[C, T, size, size]` values.
pub fn sample_clip(frames: &[Image], num_frames: usize, size: usize) -> Result<Vec<f32>> {
    if frames.is_empty() {
        return Err(Error::Data("cannot sample a clip from zero frames".into()));
    }
    let c = frames[0].channels;
    if frames.iter().any(|f| f.channels != c) {
        return Err(Error::Data("frames disagree on channel count".into()));
    }
    let picked = sample_indices(frames.len(), num_frames)
        .into_iter()
        .map(|i| resize_bilinear(&frames[i], size, size))
        .collect::<Result<Vec<_>>>()?;
    let plane = size * size;
    let mut out = vec![0f32; c * num_frames * plane];
    for (t, f) in picked.iter().enumerate() {
        for ch in 0..c {
            let dst = (ch * num_frames + t) * plane;
            out[dst..dst + plane].copy_from_slice(&f.data[ch * plane..(ch + 1) * plane]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn center_crop_of_256_is_at_16() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(crop_offset(Mode::Test, 256, 224, &mut rng).unwrap(), (16, 16));
        assert!(crop_offset(Mode::Test, 200, 224, &mut rng).is_err());
    }

    #[test]
    fn clip_indices() {
        assert_eq!(sample_indices(16, 16), (0..16).collect::<Vec<_>>());
        assert_eq!(sample_indices(32, 16), (0..16).map(|i| 2 * i).collect::<Vec<_>>());
        assert_eq!(sample_indices(4, 16), (0..16).map(|i| i / 4).collect::<Vec<_>>());
    }
}
