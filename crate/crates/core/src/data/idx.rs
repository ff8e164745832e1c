//! IDX binary format: big-endian headers, row-major `u8` payload.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::Shape;
use crate::scalar::Scalar;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, field: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format { field, detail: format!("header truncated at byte {at}") })
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn read_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, "images magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format { field: "images magic", detail: format!("expected {IMAGES_MAGIC:#010x}, found {magic:#010x}") });
    }
    let count = be_u32(bytes, 4, "images count")? as usize;
    let rows = be_u32(bytes, 8, "images rows")? as usize;
    let cols = be_u32(bytes, 12, "images cols")? as usize;
    let need = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(Error::Format { field: "images payload", detail: format!("expected {need} pixel bytes, found {}", payload.len()) });
    }
    Ok((count, rows, cols, payload[..need].to_vec()))
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "labels magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format { field: "labels magic", detail: format!("expected {LABELS_MAGIC:#010x}, found {magic:#010x}") });
    }
    let count = be_u32(bytes, 4, "labels count")? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::Format { field: "labels payload", detail: format!("expected {count} label bytes, found {}", payload.len()) });
    }
    Ok(payload[..count].to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Loads an image/label IDX pair. Pixels are scaled by `1/255`; the class
/// count is the largest label plus one (at least two).
pub fn load_idx<T: Scalar>(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let (count, rows, cols, pixels) = read_idx_images(&read(images_path.as_ref())?)?;
    let labels = read_idx_labels(&read(labels_path.as_ref())?)?;
    if labels.len() != count {
        return Err(Error::Format { field: "labels count", detail: format!("{} labels for {count} images", labels.len()) });
    }
    let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0).max(2);
    let scale = T::lit(255.0);
    let features = pixels.into_iter().map(|p| T::count(p as usize) / scale).collect();
    Dataset::new(Shape::image(rows, cols), classes, features, labels.into_iter().map(usize::from).collect())
}

/// Writes a single-channel dataset as an IDX pair, quantizing pixels to
/// `round(255 * v)`.
pub fn write_idx<T: Scalar>(ds: &Dataset<T>, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let shape = ds.shape();
    if shape.channels != 1 {
        return Err(Error::invalid("IDX images are single-channel"));
    }
    if ds.classes() > 256 {
        return Err(Error::invalid("IDX labels are single bytes"));
    }
    let mut img = Vec::with_capacity(16 + ds.len() * shape.len());
    for v in [IMAGES_MAGIC, ds.len() as u32, shape.height as u32, shape.width as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    for (x, _) in ds.iter() {
        img.extend(x.iter().map(|&v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    lab.extend(ds.labels().iter().map(|&l| l as u8));
    fs::write(images_path, img)?;
    fs::write(labels_path, lab)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut out = magic.to_be_bytes().to_vec();
        for d in dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out
    }

    fn write_pair(dir: &Path, images: &[u8], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("images.idx");
        let lp = dir.join("labels.idx");
        fs::write(&ip, images).unwrap();
        fs::write(&lp, labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn hand_built_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let mut images = header(0x0803, &[2, 2, 2]);
        images.extend_from_slice(&[0, 255, 51, 102, 255, 0, 0, 153]);
        let mut labels = header(0x0801, &[2]);
        labels.extend_from_slice(&[3, 1]);
        let (ip, lp) = write_pair(dir.path(), &images, &labels);
        let ds = load_idx::<f64>(ip, lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.shape(), Shape::image(2, 2));
        assert_eq!(ds.sample(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.sample(1), &[1.0, 0.0, 0.0, 0.6]);
        assert_eq!(ds.labels(), &[3, 1]);
        assert_eq!(ds.classes(), 4);
    }

    #[test]
    fn wrong_image_magic() {
        let mut images = header(0x0801, &[1, 1, 1]);
        images.push(0);
        let err = read_idx_images(&images).unwrap_err();
        assert!(err.to_string().contains("images magic"), "{err}");
    }

    #[test]
    fn truncated_payload() {
        let mut images = header(0x0803, &[2, 2, 2]);
        images.extend_from_slice(&[1, 2, 3]);
        let err = read_idx_images(&images).unwrap_err();
        assert!(err.to_string().contains("images payload"), "{err}");
        let err = read_idx_images(&[0, 0, 8]).unwrap_err();
        assert!(err.to_string().contains("images magic"), "{err}");
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut images = header(0x0803, &[2, 1, 1]);
        images.extend_from_slice(&[1, 2]);
        let mut labels = header(0x0801, &[1]);
        labels.push(0);
        let (ip, lp) = write_pair(dir.path(), &images, &labels);
        let err = load_idx::<f64>(ip, lp).unwrap_err();
        assert!(err.to_string().contains("labels count"), "{err}");
    }

    /// Set `FASHION_MNIST_DIR` to a directory holding the uncompressed
    /// training files to run this check.
    #[test]
    fn real_fashion_mnist_train_file() {
        let Ok(dir) = std::env::var("FASHION_MNIST_DIR") else { return };
        let dir = Path::new(&dir);
        let ds = load_idx::<f32>(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte")).unwrap();
        assert_eq!(ds.len(), 60000);
        assert_eq!(ds.shape(), Shape::image(28, 28));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn write_then_read_is_lossless(
            pixels in proptest::collection::vec(0u8..=255, 3 * 4 * 5),
            labels in proptest::collection::vec(0usize..7, 3),
        ) {
            let features: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
            let ds = Dataset::new(Shape::image(4, 5), 7, features, labels.clone()).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
            write_idx(&ds, &ip, &lp).unwrap();
            let back = load_idx::<f64>(&ip, &lp).unwrap();
            prop_assert_eq!(back.labels(), ds.labels());
            for i in 0..ds.len() {
                prop_assert_eq!(back.sample(i), ds.sample(i));
            }
        }
    }
}
