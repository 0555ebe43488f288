//! Big-endian IDX files (optionally gzip-compressed) as used by MNIST.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use super::dataset::{Dataset, Provenance, Targets};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(buf: &[u8], at: usize) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_err(at, format!("truncated header: need 4 bytes at offset {at}, file has {}", buf.len())))
}

fn check_magic(buf: &[u8], want: u32) -> Result<()> {
    let got = be_u32(buf, 0)?;
    if got != want {
        return Err(format_err(0, format!("bad magic 0x{got:08x}, expected 0x{want:08x}")));
    }
    Ok(())
}

fn payload<'a>(buf: &'a [u8], header: usize, dims: &[u32]) -> Result<&'a [u8]> {
    let mut need: usize = 1;
    for (i, &d) in dims.iter().enumerate() {
        need = need
            .checked_mul(d as usize)
            .ok_or_else(|| format_err(4 + 4 * i, format!("dimension {d} overflows the payload size")))?;
    }
    let have = buf.len() - header;
    if have < need {
        return Err(format_err(buf.len(), format!("truncated payload: header promises {need} bytes, found {have} (short by {})", need - have)));
    }
    Ok(&buf[header..header + need])
}

/// Decodes an image file into raw bytes and `(n, rows, cols)`.
pub fn parse_idx_images(buf: &[u8]) -> Result<(Vec<u8>, usize, usize, usize)> {
    check_magic(buf, IMAGE_MAGIC)?;
    let dims = [be_u32(buf, 4)?, be_u32(buf, 8)?, be_u32(buf, 12)?];
    let data = payload(buf, 16, &dims)?;
    Ok((data.to_vec(), dims[0] as usize, dims[1] as usize, dims[2] as usize))
}

pub fn parse_idx_labels(buf: &[u8]) -> Result<Vec<u8>> {
    check_magic(buf, LABEL_MAGIC)?;
    let n = be_u32(buf, 4)?;
    Ok(payload(buf, 8, &[n])?.to_vec())
}

/// Images scaled to [0, 1], shape `[N, 1, rows, cols]`.
pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    let (bytes, n, rows, cols) = parse_idx_images(&read_all(path)?)?;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(format_err(4, "image file with a zero dimension"));
    }
    Tensor::new(&[n, 1, rows, cols], bytes.iter().map(|&b| f64::from(b) / 255.0).collect())
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    Ok(parse_idx_labels(&read_all(path)?)?.into_iter().map(usize::from).collect())
}

pub fn write_idx_images(w: &mut impl Write, bytes: &[u8], n: usize, rows: usize, cols: usize) -> Result<()> {
    if bytes.len() != n * rows * cols {
        return Err(crate::error::shape_err!("{} bytes for {n} images of {rows}x{cols}", bytes.len()));
    }
    w.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    for d in [n, rows, cols] {
        w.write_all(&(d as u32).to_be_bytes())?;
    }
    w.write_all(bytes)?;
    Ok(())
}

pub fn write_idx_labels(w: &mut impl Write, labels: &[u8]) -> Result<()> {
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    Ok(())
}

/// Standard MNIST file names under `dir`, `.gz` or uncompressed.
fn locate(dir: &Path, stem: &str) -> Result<std::path::PathBuf> {
    for name in [format!("{stem}.gz"), stem.to_string()] {
        let p = dir.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{} has no {stem}[.gz]", dir.display()),
    )))
}

/// Loads one split (`"train"` or `"t10k"`) of an MNIST-layout directory.
pub fn load_mnist_split(dir: &Path, split: &str) -> Result<Dataset> {
    let images = load_idx_images(&locate(dir, &format!("{split}-images-idx3-ubyte"))?)?;
    let labels = load_idx_labels(&locate(dir, &format!("{split}-labels-idx1-ubyte"))?)?;
    let mut prov = Provenance::new(format!("mnist:{}:{split}", dir.display()));
    prov.notes.push(("samples".into(), labels.len().to_string()));
    Dataset::new(images, Targets::Classes(labels), prov)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let bytes: Vec<u8> = (0..2 * 28 * 28).map(|i| (i * 7 % 256) as u8).collect();
        let mut buf = Vec::new();
        write_idx_images(&mut buf, &bytes, 2, 28, 28).unwrap();
        buf
    }

    #[test]
    fn two_image_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img");
        fs::write(&p, fixture()).unwrap();
        let t = load_idx_images(&p).unwrap();
        assert_eq!(t.shape(), &[2, 1, 28, 28]);
        assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(t.data()[1], 7.0 / 255.0);
    }

    #[test]
    fn gzip_is_transparent() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.gz");
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        enc.write_all(&fixture()).unwrap();
        fs::write(&p, enc.finish().unwrap()).unwrap();
        assert_eq!(load_idx_images(&p).unwrap().shape(), &[2, 1, 28, 28]);
    }

    #[test]
    fn image_magic_in_label_slot() {
        match parse_idx_labels(&fixture()).unwrap_err() {
            Error::Format { offset, message } => {
                assert_eq!(offset, 0);
                assert!(message.contains("0x00000803"));
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn truncated_payload_names_shortfall() {
        let mut buf = fixture();
        buf.truncate(buf.len() - 10);
        match parse_idx_images(&buf).unwrap_err() {
            Error::Format { message, .. } => assert!(message.contains("short by 10"), "{message}"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn truncated_header() {
        assert!(matches!(parse_idx_images(&[0, 0, 8, 3, 0]), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn overflowing_dimensions() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        for _ in 0..3 {
            buf.extend_from_slice(&u32::MAX.to_be_bytes());
        }
        let err = parse_idx_images(&buf).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err:?}");
    }
}
