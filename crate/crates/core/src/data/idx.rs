//! The IDX container used by the MNIST distribution: big-endian headers,
//! unsigned byte payloads.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// One raw digit: `rows·cols` pixel bytes and its class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digit {
    pub pixels: Vec<u8>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigitSet {
    pub rows: usize,
    pub cols: usize,
    pub digits: Vec<Digit>,
}

impl DigitSet {
    pub fn len(&self) -> usize {
        self.digits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!(
                    "truncated: {what} needs bytes {}..{end}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            ));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_magic(r: &mut Reader, expected: u32) -> Result<()> {
    let magic = r.u32("magic")?;
    if magic != expected {
        return Err(Error::format(
            r.path,
            format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"),
        ));
    }
    Ok(())
}

/// Header `(rows, cols)` and pixel bytes of an IDX image file.
pub fn read_images(path: &Path) -> Result<(usize, usize, Vec<Vec<u8>>)> {
    let bytes = read(path)?;
    let mut r = Reader { path, bytes: &bytes, pos: 0 };
    check_magic(&mut r, IMAGE_MAGIC)?;
    let count = r.u32("count")? as usize;
    let rows = r.u32("rows")? as usize;
    let cols = r.u32("cols")? as usize;
    let images = (0..count)
        .map(|i| r.take(rows * cols, &format!("image {i}")).map(<[u8]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, cols, images))
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read(path)?;
    let mut r = Reader { path, bytes: &bytes, pos: 0 };
    check_magic(&mut r, LABEL_MAGIC)?;
    let count = r.u32("count")? as usize;
    let labels = r.take(count, "labels")?.to_vec();
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::format(path, format!("label {bad} outside 0..=9")));
    }
    Ok(labels)
}

/// Pair an image file with its label file.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<DigitSet> {
    let (rows, cols, images) = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(Error::format(
            labels_path,
            format!(
                "{} labels but {} images in {}",
                labels.len(),
                images.len(),
                images_path.display()
            ),
        ));
    }
    let digits = images
        .into_iter()
        .zip(labels)
        .map(|(pixels, label)| Digit { pixels, label })
        .collect();
    Ok(DigitSet { rows, cols, digits })
}

pub fn encode_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGE_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        assert_eq!(img.len(), rows * cols, "image size differs from header");
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Write a digit set as an image file and a label file.
pub fn write_idx(set: &DigitSet, images_path: &Path, labels_path: &Path) -> Result<()> {
    let images: Vec<Vec<u8>> = set.digits.iter().map(|d| d.pixels.clone()).collect();
    let labels: Vec<u8> = set.digits.iter().map(|d| d.label).collect();
    fs::write(images_path, encode_images(set.rows, set.cols, &images)).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, encode_labels(&labels)).map_err(|e| Error::io(labels_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> DigitSet {
        DigitSet {
            rows: 28,
            cols: 28,
            digits: vec![
                Digit {
                    pixels: (0..784).map(|i| (i % 256) as u8).collect(),
                    label: 3,
                },
                Digit {
                    pixels: vec![255; 784],
                    label: 9,
                },
            ],
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        let set = fixture();
        write_idx(&set, &ip, &lp).unwrap();
        assert_eq!(load_idx(&ip, &lp).unwrap(), set);
    }

    #[test]
    fn header_layout_is_big_endian() {
        let bytes = encode_images(2, 3, &[vec![1, 2, 3, 4, 5, 6]]);
        assert_eq!(&bytes[..16], &[0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 3]);
        assert_eq!(&encode_labels(&[7])[..], &[0, 0, 8, 1, 0, 0, 0, 1, 7]);
    }

    #[test]
    fn rejects_bad_magic_truncation_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let set = fixture();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx(&set, &ip, &lp).unwrap();

        // label file given as image file
        let err = load_idx(&lp, &lp).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");

        let mut bytes = fs::read(&ip).unwrap();
        bytes.truncate(bytes.len() - 1);
        let short = dir.path().join("short");
        fs::write(&short, &bytes).unwrap();
        let err = load_idx(&short, &lp).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        let one = dir.path().join("one");
        fs::write(&one, encode_labels(&[1])).unwrap();
        let err = load_idx(&ip, &one).unwrap_err().to_string();
        assert!(err.contains("1 labels but 2 images"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let r = load_idx(Path::new("/nonexistent/a"), Path::new("/nonexistent/b"));
        assert!(matches!(r, Err(Error::Io { .. })));
    }
}
