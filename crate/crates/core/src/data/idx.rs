//! IDX image/label files (the MNIST distribution format), optionally gzipped.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::images::ImageSet;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads an image file and its label file. Files starting with the gzip
/// signature are decompressed transparently.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<ImageSet> {
    let images = read_maybe_gz(images_path.as_ref())?;
    let labels = read_maybe_gz(labels_path.as_ref())?;
    parse_idx(&images, &labels)
}

pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<ImageSet> {
    let mut img = Cursor::new(images, "images");
    let magic = img.u32("images magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            field: "images magic",
            detail: format!("expected {IMAGES_MAGIC:#010x}, found {magic:#010x}"),
        });
    }
    let n = img.u32("images count")? as usize;
    let rows = img.u32("images rows")? as usize;
    let cols = img.u32("images cols")? as usize;
    let pixels = img.bytes(n * rows * cols, "images pixels")?;

    let mut lab = Cursor::new(labels, "labels");
    let magic = lab.u32("labels magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            field: "labels magic",
            detail: format!("expected {LABELS_MAGIC:#010x}, found {magic:#010x}"),
        });
    }
    let m = lab.u32("labels count")? as usize;
    if m != n {
        return Err(Error::Format {
            field: "labels count",
            detail: format!("{m} labels for {n} images"),
        });
    }
    let label_bytes = lab.bytes(n, "labels values")?;
    let pixels = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    ImageSet::new(pixels, label_bytes.to_vec(), rows, cols)
}

/// Serializes to the two IDX byte streams. Pixels are stored as
/// `round(255·v)`, which inverts the `/255` of [`parse_idx`] exactly.
pub fn encode_idx(set: &ImageSet) -> (Vec<u8>, Vec<u8>) {
    let (rows, cols) = set.shape();
    let mut images = Vec::with_capacity(16 + set.pixels().len());
    for v in [IMAGES_MAGIC, set.len() as u32, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(set.pixels().iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut labels = Vec::with_capacity(8 + set.len());
    for v in [LABELS_MAGIC, set.len() as u32] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    labels.extend_from_slice(set.labels());
    (images, labels)
}

/// Writes both files; paths ending in `.gz` are gzipped.
pub fn write_idx(set: &ImageSet, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let (images, labels) = encode_idx(set);
    write_maybe_gz(images_path.as_ref(), &images)?;
    write_maybe_gz(labels_path.as_ref(), &labels)
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes)?;
        fs::write(path, enc.finish()?)?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    file: &'static str,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8], file: &'static str) -> Self {
        Self { buf, pos: 0, file }
    }

    fn bytes(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Truncated(format!(
                "{} file ends at byte {} while reading {field}",
                self.file,
                self.buf.len()
            ))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.bytes(4, field)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ImageSet {
        let pixels = (0..2 * 3 * 2).map(|i| f64::from(i as u8 * 20) / 255.0).collect();
        ImageSet::new(pixels, vec![7, 1], 3, 2).unwrap()
    }

    #[test]
    fn encode_parse_round_trip() {
        let set = tiny();
        let (img, lab) = encode_idx(&set);
        assert_eq!(&img[..4], &[0, 0, 8, 3]);
        let back = parse_idx(&img, &lab).unwrap();
        assert_eq!(back, set);
        assert_eq!(encode_idx(&back), (img, lab));
    }

    #[test]
    fn wrong_magic_names_the_field() {
        let (img, _) = encode_idx(&tiny());
        let err = parse_idx(&img, &img).unwrap_err();
        assert!(matches!(err, Error::Format { field: "labels magic", .. }), "{err}");
    }

    #[test]
    fn truncation_and_count_mismatch() {
        let (img, lab) = encode_idx(&tiny());
        assert!(matches!(parse_idx(&[], &lab), Err(Error::Truncated(_))));
        assert!(matches!(parse_idx(&img[..img.len() - 1], &lab), Err(Error::Truncated(_))));
        let mut short = lab.clone();
        short[7] = 1;
        assert!(matches!(
            parse_idx(&img, &short),
            Err(Error::Format { field: "labels count", .. })
        ));
    }

    #[test]
    fn gz_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i.gz"), dir.path().join("l"));
        write_idx(&tiny(), &ip, &lp).unwrap();
        assert_eq!(&fs::read(&ip).unwrap()[..2], &[0x1f, 0x8b]);
        assert_eq!(load_idx(&ip, &lp).unwrap(), tiny());
    }
}
