//! Class-per-directory image layout.
//!
//! ```text
//! root/
//!   class00/0000.ppm
//!   class00/0001.ppm
//!   class01/...
//! ```
//!
//! Class indices are the lexicographic rank of the subdirectory names.
//! Export writes binary PPM (`P6`, 8 bits per channel, width/height/maxval
//! in the text header); loading accepts PPM, PNG and JPEG.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use super::preprocess::{resize_bilinear, sample_clip, Image};
use super::{Dataset, Split};
use crate::error::{Error, Result};

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::Data(format!("PPM export needs 3 channels, got {}", img.channels)));
    }
    let plane = img.height * img.width;
    let mut bytes = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            bytes.push((img.data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&bytes, img.width as u32, img.height as u32, ExtendedColorType::Rgb8)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Decodes any supported file to a 3-channel image in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Image> {
    let rgb = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let plane = w * h;
    let mut data = vec![0f32; 3 * plane];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px.0[c] as f32 / 255.0;
        }
    }
    Image::new(3, h, w, data)
}

/// Writes every sample of a 2D dataset as `root/<class>/<index>.ppm`.
pub fn export_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    let [c, h, w] = ds.sample_shape[..] else {
        return Err(Error::Data(format!("only image datasets export, got shape {:?}", ds.sample_shape)));
    };
    for name in &ds.class_names {
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for (i, (img, &label)) in ds.images.iter().zip(&ds.labels).enumerate() {
        let path = root.join(&ds.class_names[label]).join(format!("{i:05}.ppm"));
        write_ppm(&path, &Image::new(c, h, w, img.clone())?)?;
    }
    Ok(())
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() == want_dirs {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn class_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let dirs = sorted_entries(root, true)?;
    if dirs.is_empty() {
        return Err(Error::Data(format!("{} has no class subdirectories", root.display())));
    }
    Ok(dirs
        .into_iter()
        .map(|d| (d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(), d))
        .collect())
}

/// Loads `root/<class>/<image>` resized to `image_size × image_size`.
/// Unreadable files are skipped with a warning; a class without a single
/// readable image is an error.
pub fn load_image_directory(root: &Path, image_size: usize, split: Split) -> Result<Dataset> {
    let classes = class_dirs(root)?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (label, (name, dir)) in classes.iter().enumerate() {
        let before = images.len();
        for file in sorted_entries(dir, false)? {
            match read_image(&file) {
                Ok(img) => {
                    images.push(resize_bilinear(&img, image_size, image_size)?.data);
                    labels.push(label);
                }
                Err(e) => log::warn!("skipping {}: {e}", file.display()),
            }
        }
        if images.len() == before {
            return Err(Error::Data(format!("class {name} has no readable images")));
        }
    }
    let ds = Dataset {
        split,
        sample_shape: vec![3, image_size, image_size],
        class_names: classes.into_iter().map(|(n, _)| n).collect(),
        images,
        labels,
    };
    ds.validate()?;
    Ok(ds)
}

/// Loads `root/<class>/<clip>/<frame>`: each clip directory becomes one
/// `[3, num_frames, size, size]` sample by uniform temporal sampling.
pub fn load_clip_directory(root: &Path, num_frames: usize, size: usize, split: Split) -> Result<Dataset> {
    let classes = class_dirs(root)?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (label, (name, dir)) in classes.iter().enumerate() {
        let before = images.len();
        for clip in sorted_entries(dir, true)? {
            let mut frames = Vec::new();
            for file in sorted_entries(&clip, false)? {
                match read_image(&file) {
                    Ok(img) => frames.push(img),
                    Err(e) => log::warn!("skipping {}: {e}", file.display()),
                }
            }
            if frames.is_empty() {
                log::warn!("skipping clip {} without readable frames", clip.display());
                continue;
            }
            images.push(sample_clip(&frames, num_frames, size)?);
            labels.push(label);
        }
        if images.len() == before {
            return Err(Error::Data(format!("class {name} has no readable clips")));
        }
    }
    let ds = Dataset {
        split,
        sample_shape: vec![3, num_frames, size, size],
        class_names: classes.into_iter().map(|(n, _)| n).collect(),
        images,
        labels,
    };
    ds.validate()?;
    Ok(ds)
}
