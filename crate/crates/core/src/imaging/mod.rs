//! RGB rasters, pack-condition filters, label-preserving augmentation and
//! dataset files.

mod augment;
mod conditions;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::ComponentCategory;

pub use augment::{
    augment, expand_dataset, expand_many, sample_spec, AugmentSpec, Augmented, Flip, Rotation,
    DEFAULT_VARIANTS,
};
pub use conditions::{apply_condition, contamination_mask, Condition};

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("image codec error on {path}: {source}")]
    Codec {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("label file {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("label file {path}: unknown category `{name}`")]
    UnknownCategory { path: PathBuf, name: String },
    #[error("label {bbox:?} in {path} lies outside the {width}x{height} image")]
    LabelOutOfBounds {
        path: PathBuf,
        bbox: [u32; 4],
        width: u32,
        height: u32,
    },
    #[error("manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("unsupported image extension on {0}")]
    Extension(PathBuf),
    #[error("pixel buffer of {len} bytes does not match {width}x{height} RGB")]
    BufferSize { len: usize, width: u32, height: u32 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ImagingError + '_ {
    move |source| ImagingError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Row-major 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, fill: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            pixels.extend_from_slice(&fill);
        }
        RasterImage { width, height, pixels }
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImagingError> {
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(ImagingError::BufferSize {
                len: pixels.len(),
                width,
                height,
            });
        }
        Ok(RasterImage { width, height, pixels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.pixels.clone()).expect("sized buffer")
    }

    pub fn from_rgb_image(img: RgbImage) -> Self {
        RasterImage {
            width: img.width(),
            height: img.height(),
            pixels: img.into_raw(),
        }
    }

    pub fn write_png<W: Write>(&self, out: W) -> image::ImageResult<()> {
        image::codecs::png::PngEncoder::new(out).write_image(
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
        )
    }

    /// Binary PPM (`P6`).
    pub fn write_ppm<W: Write>(&self, out: W) -> image::ImageResult<()> {
        PnmEncoder::new(out)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(&self.pixels, self.width, self.height, image::ExtendedColorType::Rgb8)
    }

    /// Writes PNG or PPM depending on the extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImagingError> {
        let path = path.as_ref();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        let file = File::create(path).map_err(io_err(path))?;
        let mut out = BufWriter::new(file);
        let res = match ext.as_deref() {
            Some("png") => self.write_png(&mut out),
            Some("ppm") => self.write_ppm(&mut out),
            _ => return Err(ImagingError::Extension(path.to_path_buf())),
        };
        res.map_err(|source| ImagingError::Codec {
            path: path.to_path_buf(),
            source,
        })?;
        out.flush().map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImagingError> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| ImagingError::Codec {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(RasterImage::from_rgb_image(img.to_rgb8()))
    }
}

/// Bounding box with half-open pixel bounds `[u_min, u_max) x [v_min, v_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Label {
    pub category: ComponentCategory,
    pub bbox: [u32; 4],
}

impl Label {
    pub fn area(&self) -> u64 {
        let [u1, v1, u2, v2] = self.bbox;
        u64::from(u2.saturating_sub(u1)) * u64::from(v2.saturating_sub(v1))
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        let [u1, v1, u2, v2] = self.bbox;
        u1 < u2 && v1 < v2 && u2 <= width && v2 <= height
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabeledImage {
    pub image: RasterImage,
    pub labels: Vec<Label>,
}

impl LabeledImage {
    /// Every label has positive area and lies inside the image.
    pub fn labels_valid(&self) -> bool {
        self.labels
            .iter()
            .all(|l| l.area() >= 1 && l.within(self.image.width(), self.image.height()))
    }
}

/// One label per row: `category,u_min,v_min,u_max,v_max`.
pub fn write_labels<W: Write>(out: W, labels: &[Label]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["category", "u_min", "v_min", "u_max", "v_max"])?;
    for l in labels {
        let [u1, v1, u2, v2] = l.bbox;
        w.write_record([
            l.category.name().to_string(),
            u1.to_string(),
            v1.to_string(),
            u2.to_string(),
            v2.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_labels(path: impl AsRef<Path>, labels: &[Label]) -> Result<(), ImagingError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    write_labels(BufWriter::new(file), labels).map_err(|source| ImagingError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<Label>, ImagingError> {
    let path = path.as_ref();
    let csv_err = |source| ImagingError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut labels = Vec::new();
    for row in reader.deserialize::<(String, u32, u32, u32, u32)>() {
        let (name, u1, v1, u2, v2) = row.map_err(csv_err)?;
        let category = ComponentCategory::parse(&name).ok_or_else(|| ImagingError::UnknownCategory {
            path: path.to_path_buf(),
            name: name.clone(),
        })?;
        labels.push(Label {
            category,
            bbox: [u1, v1, u2, v2],
        });
    }
    Ok(labels)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Paths relative to the manifest's directory.
    pub image: String,
    pub labels: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImagingError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| ImagingError::Manifest {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImagingError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("serializable");
        text.push('\n');
        std::fs::write(path, text).map_err(io_err(path))
    }
}

/// Reads every image/label pair listed in `dir/manifest.json`, checking that
/// labels fit their images.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<(String, LabeledImage)>, ImagingError> {
    let dir = dir.as_ref();
    let manifest = Manifest::load(dir.join(MANIFEST_FILE))?;
    let mut out = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let image = RasterImage::load(dir.join(&entry.image))?;
        let label_path = dir.join(&entry.labels);
        let labels = load_labels(&label_path)?;
        if let Some(bad) = labels.iter().find(|l| !l.within(image.width(), image.height())) {
            return Err(ImagingError::LabelOutOfBounds {
                path: label_path,
                bbox: bad.bbox,
                width: image.width(),
                height: image.height(),
            });
        }
        let stem = Path::new(&entry.image)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        out.push((stem, LabeledImage { image, labels }));
    }
    Ok(out)
}

/// Writes `name.png` + `name.csv` for every item and a manifest listing them.
pub fn save_dataset(dir: impl AsRef<Path>, items: &[(String, LabeledImage)]) -> Result<Manifest, ImagingError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = Manifest::default();
    for (name, item) in items {
        let image = format!("{name}.png");
        let labels = format!("{name}.csv");
        item.image.save(dir.join(&image))?;
        save_labels(dir.join(&labels), &item.labels)?;
        manifest.entries.push(ManifestEntry { image, labels });
    }
    manifest.save(dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
