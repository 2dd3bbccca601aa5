//! Image-sequence datasets.
//!
//! A sequence is a directory with a `frames/` subdirectory of numbered image
//! files and an optional `masks/` subdirectory of label images, one per frame.
//! File names sort lexicographically into temporal order (zero-pad them).
//! Frames may be PPM, PGM or PNG. Masks are 8-bit PGM or grayscale/indexed PNG
//! whose raw values are object ids (0 is background).

use std::fs;
use std::io::{BufReader, BufWriter, Write};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use std::path::{Path, PathBuf};

use relvos_core::{LabelImage, RgbFrame};

use crate::error::{IoError, Result};

/// Environment variable naming the directory that holds sequences by name.
pub const DATA_ROOT_ENV: &str = "RELVOS_DATA_ROOT";

const IMAGE_EXTENSIONS: [&str; 4] = ["ppm", "pgm", "pnm", "png"];

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<RgbFrame>,
    pub masks: Option<Vec<LabelImage>>,
    /// Inferred from the masks; 0 when there are none.
    pub num_objects: u8,
}

impl Sequence {
    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }
}

/// The data root from the environment, if set.
pub fn data_root() -> Option<PathBuf> {
    std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from)
}

/// Resolves a sequence name or path: existing paths win, otherwise the name is
/// looked up under `root`.
pub fn resolve(name: &str, root: Option<&Path>) -> Result<PathBuf> {
    let direct = PathBuf::from(name);
    if direct.is_dir() {
        return Ok(direct);
    }
    // Names must not escape the root.
    let plain = Path::new(name)
        .components()
        .all(|c| matches!(c, std::path::Component::Normal(_)));
    if let Some(root) = root {
        let p = root.join(name);
        if plain && p.is_dir() {
            return Ok(p);
        }
    }
    Err(IoError::UnknownSequence(name.to_string()))
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(IoError::io(dir, e)),
    };
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| IoError::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn read_frame(path: &Path) -> Result<RgbFrame> {
    let img = image::open(path)
        .map_err(|e| IoError::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(RgbFrame::from_rgb8(w, h, img.as_raw())?)
}

fn decode_err(path: &Path, message: impl ToString) -> IoError {
    IoError::Decode {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Raw 8-bit values of a grayscale or palette PNG, without palette expansion.
fn read_png_indices(path: &Path) -> Result<LabelImage> {
    let file = fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| decode_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| decode_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| decode_err(path, e))?;
    if !matches!(info.color_type, png::ColorType::Grayscale | png::ColorType::Indexed) {
        return Err(decode_err(path, "masks must be grayscale or indexed PNGs"));
    }
    let bits = match info.bit_depth {
        png::BitDepth::One => 1,
        png::BitDepth::Two => 2,
        png::BitDepth::Four => 4,
        png::BitDepth::Eight => 8,
        png::BitDepth::Sixteen => return Err(decode_err(path, "16-bit masks are not supported")),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        for x in 0..w {
            let bit = x * bits;
            let byte = row[bit / 8];
            let shift = 8 - bits - bit % 8;
            data.push((byte >> shift) & ((1u16 << bits) - 1) as u8);
        }
    }
    Ok(LabelImage::new(w, h, data)?)
}

pub fn read_mask(path: &Path) -> Result<LabelImage> {
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        return read_png_indices(path);
    }
    let img = image::open(path).map_err(|e| decode_err(path, e))?;
    if img.color().channel_count() != 1 {
        return Err(decode_err(path, "masks must be single-channel"));
    }
    let img = img.to_luma8();
    Ok(LabelImage::new(img.width() as usize, img.height() as usize, img.into_raw())?)
}

fn check_size(path: &Path, w: usize, h: usize, ew: usize, eh: usize) -> Result<()> {
    if (w, h) != (ew, eh) {
        return Err(IoError::DimensionMismatch {
            path: path.to_path_buf(),
            width: w,
            height: h,
            expected_width: ew,
            expected_height: eh,
        });
    }
    Ok(())
}

/// Number of objects in `masks`; ids must be exactly `1..=K`.
pub fn infer_num_objects(masks: &[LabelImage]) -> Result<u8> {
    let mut seen = [false; 256];
    for m in masks {
        for &v in &m.data {
            seen[v as usize] = true;
        }
    }
    let found: Vec<u8> = (1..=255u8).filter(|&k| seen[k as usize]).collect();
    let k = found.len() as u8;
    if found.iter().enumerate().any(|(i, &id)| id as usize != i + 1) {
        return Err(IoError::NonContiguousIds { found });
    }
    Ok(k)
}

pub fn load_sequence(path: &Path) -> Result<Sequence> {
    let frame_files = image_files(&path.join("frames"))?;
    if frame_files.is_empty() {
        return Err(IoError::MissingFrames { path: path.to_path_buf() });
    }
    let mut frames = Vec::with_capacity(frame_files.len());
    for f in &frame_files {
        let frame = read_frame(f)?;
        if let Some(first) = frames.first() {
            let first: &RgbFrame = first;
            check_size(f, frame.width, frame.height, first.width, first.height)?;
        }
        frames.push(frame);
    }
    let (w, h) = (frames[0].width, frames[0].height);

    let mask_dir = path.join("masks");
    let masks = if mask_dir.is_dir() {
        let files = image_files(&mask_dir)?;
        if files.len() != frames.len() {
            return Err(IoError::MaskCountMismatch {
                path: mask_dir,
                frames: frames.len(),
                masks: files.len(),
            });
        }
        let mut masks = Vec::with_capacity(files.len());
        for f in &files {
            let m = read_mask(f)?;
            check_size(f, m.width, m.height, w, h)?;
            masks.push(m);
        }
        Some(masks)
    } else {
        None
    };
    let num_objects = match &masks {
        Some(m) => infer_num_objects(m)?,
        None => 0,
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Sequence {
        name,
        frames,
        masks,
        num_objects,
    })
}

fn write_pnm(path: &Path, subtype: PnmSubtype, bytes: &[u8], w: usize, h: usize, color: ExtendedColorType) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut out = BufWriter::new(file);
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(bytes, w as u32, h as u32, color)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => IoError::io(path, io),
            other => decode_err(path, other),
        })?;
    out.flush().map_err(|e| IoError::io(path, e))
}

/// Binary PPM (P6).
pub fn write_frame(path: &Path, frame: &RgbFrame) -> Result<()> {
    let subtype = PnmSubtype::Pixmap(SampleEncoding::Binary);
    write_pnm(path, subtype, &frame.to_rgb8(), frame.width, frame.height, ExtendedColorType::Rgb8)
}

/// Binary PGM (P5) of raw label values.
pub fn write_mask(path: &Path, mask: &LabelImage) -> Result<()> {
    let subtype = PnmSubtype::Graymap(SampleEncoding::Binary);
    write_pnm(path, subtype, &mask.data, mask.width, mask.height, ExtendedColorType::L8)
}

/// Writes `frames/NNNNN.ppm` and, if given, `masks/NNNNN.pgm`.
pub fn write_sequence(dir: &Path, frames: &[RgbFrame], masks: Option<&[LabelImage]>) -> Result<()> {
    let fdir = dir.join("frames");
    fs::create_dir_all(&fdir).map_err(|e| IoError::io(&fdir, e))?;
    for (t, f) in frames.iter().enumerate() {
        write_frame(&fdir.join(format!("{t:05}.ppm")), f)?;
    }
    if let Some(masks) = masks {
        let mdir = dir.join("masks");
        fs::create_dir_all(&mdir).map_err(|e| IoError::io(&mdir, e))?;
        for (t, m) in masks.iter().enumerate() {
            write_mask(&mdir.join(format!("{t:05}.pgm")), m)?;
        }
    }
    Ok(())
}
