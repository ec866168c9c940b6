//! Binary tensor and descriptor files, and 8-bit PGM patches.
//!
//! Tensor file: `"EMKT"`, `u32 n`, `u32 d`, then `n^2 d` little-endian `f32`
//! values, position-major then channel.
//!
//! Descriptor file: `"EMKD"`, `u32 count`, `u32 D`, then `count * D`
//! little-endian `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::aggregation::FeatureTensor;
use crate::error::{format_err, Error, Result};
use crate::feature_backend::Patch;

pub const TENSOR_MAGIC: &[u8; 4] = b"EMKT";
pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"EMKD";

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| format_err(format!("truncated header: missing {what}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| format_err("file too short for magic"))?;
    if &b != magic {
        return Err(format_err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

fn read_f32s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 4];
    r.read_exact(&mut buf)
        .map_err(|_| format_err(format!("truncated payload: expected {count} f32 values")))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(format_err(format!("{} trailing bytes after payload", rest.len())));
    }
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn write_f32s<'a>(w: &mut impl Write, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_tensor(w: &mut impl Write, tensor: &FeatureTensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(tensor.n() as u32).to_le_bytes())?;
    w.write_all(&(tensor.d() as u32).to_le_bytes())?;
    write_f32s(w, tensor.matrix().iter())
}

pub fn read_tensor(r: &mut impl Read) -> Result<FeatureTensor> {
    read_magic(r, TENSOR_MAGIC)?;
    let n = read_u32(r, "n")? as usize;
    let d = read_u32(r, "d")? as usize;
    if n == 0 || d == 0 {
        return Err(format_err(format!("tensor header has n={n}, d={d}")));
    }
    let values = read_f32s(r, n * n * d)?;
    FeatureTensor::from_vec(n, d, values).map_err(|e| match e {
        Error::Numerical(m) => Error::Format(m),
        other => other,
    })
}

pub fn export_tensor(path: impl AsRef<Path>, tensor: &FeatureTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, tensor)?;
    w.flush()?;
    Ok(())
}

pub fn import_tensor(path: impl AsRef<Path>) -> Result<FeatureTensor> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

/// Descriptors read from or written to an `EMKD` file, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub rows: Array2<f64>,
}

impl DescriptorSet {
    pub fn new(rows: Array2<f64>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }
}

pub fn write_descriptors(w: &mut impl Write, set: &DescriptorSet) -> Result<()> {
    w.write_all(DESCRIPTOR_MAGIC)?;
    w.write_all(&(set.len() as u32).to_le_bytes())?;
    w.write_all(&(set.dim() as u32).to_le_bytes())?;
    write_f32s(w, set.rows.iter())
}

pub fn read_descriptors(r: &mut impl Read) -> Result<DescriptorSet> {
    read_magic(r, DESCRIPTOR_MAGIC)?;
    let count = read_u32(r, "count")? as usize;
    let dim = read_u32(r, "dimension")? as usize;
    let values = read_f32s(r, count * dim)?;
    let rows = Array2::from_shape_vec((count, dim), values).map_err(|e| format_err(e.to_string()))?;
    Ok(DescriptorSet { rows })
}

pub fn save_descriptors(path: impl AsRef<Path>, set: &DescriptorSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_descriptors(&mut w, set)?;
    w.flush()?;
    Ok(())
}

pub fn load_descriptors(path: impl AsRef<Path>) -> Result<DescriptorSet> {
    read_descriptors(&mut BufReader::new(File::open(path)?))
}

fn pgm_token(data: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(format_err("truncated PGM header"));
    }
    Ok(String::from_utf8_lossy(&data[start..*pos]).into_owned())
}

/// Decodes a binary 8-bit PGM (`P5`) into pixel values scaled to `[0, 1]`.
pub fn decode_pgm(data: &[u8]) -> Result<Array2<f64>> {
    let mut pos = 0;
    if pgm_token(data, &mut pos)? != "P5" {
        return Err(format_err("not a binary PGM (P5)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        pgm_token(data, &mut pos)?
            .parse::<usize>()
            .map_err(|_| format_err(format!("bad PGM {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(format_err(format!("only 8-bit PGM is supported, maxval={maxval}")));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let need = width * height;
    if data.len() < pos + need {
        return Err(format_err("truncated PGM raster"));
    }
    let raster = &data[pos..pos + need];
    let scale = 1.0 / maxval as f64;
    Array2::from_shape_vec((height, width), raster.iter().map(|&b| b as f64 * scale).collect())
        .map_err(|e| format_err(e.to_string()))
}

pub fn read_patch(path: impl AsRef<Path>) -> Result<Patch> {
    let data = std::fs::read(path)?;
    Patch::new(decode_pgm(&data)?).map_err(|e| format_err(e.to_string()))
}

/// Encodes values in `[0, 1]` as an 8-bit binary PGM.
pub fn encode_pgm(pixels: &Array2<f64>) -> Vec<u8> {
    let (h, w) = pixels.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pgm(path: impl AsRef<Path>, pixels: &Array2<f64>) -> Result<()> {
    std::fs::write(path, encode_pgm(pixels))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tensor_bytes(t: &FeatureTensor) -> Vec<u8> {
        let mut buf = Vec::new();
        write_tensor(&mut buf, t).unwrap();
        buf
    }

    proptest! {
        #[test]
        fn tensor_round_trip_is_bit_exact(n in 1usize..5, d in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..n * n * d).map(|_| rng.random_range(-10.0f32..10.0) as f64).collect();
            let t = FeatureTensor::from_vec(n, d, vals).unwrap();
            let bytes = tensor_bytes(&t);
            let back = read_tensor(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(tensor_bytes(&back), bytes);
        }
    }

    #[test]
    fn tensor_size_arithmetic() {
        let t = FeatureTensor::zeros(8, 128);
        let bytes = tensor_bytes(&t);
        assert_eq!(bytes.len(), 12 + 64 * 128 * 4);
        let back = read_tensor(&mut bytes.as_slice()).unwrap();
        assert_eq!((back.n(), back.d()), (8, 128));
    }

    #[test]
    fn truncated_and_bad_magic() {
        let bytes = tensor_bytes(&FeatureTensor::zeros(2, 3));
        for cut in [0, 3, 6, 11, bytes.len() - 1] {
            assert!(matches!(read_tensor(&mut &bytes[..cut]), Err(Error::Format(_))));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor(&mut bad.as_slice()), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(read_tensor(&mut long.as_slice()), Err(Error::Format(_))));
        let desc = {
            let mut b = Vec::new();
            write_descriptors(&mut b, &DescriptorSet::new(Array2::ones((2, 3)))).unwrap();
            b
        };
        assert!(matches!(read_tensor(&mut desc.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn descriptor_file_layout() {
        let set = DescriptorSet::new(Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.5));
        let mut buf = Vec::new();
        write_descriptors(&mut buf, &set).unwrap();
        assert_eq!(&buf[..4], b"EMKD");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 4);
        assert_eq!(f32::from_le_bytes(buf[12 + 4 * 5..12 + 4 * 6].try_into().unwrap()), 2.5);
        assert_eq!(read_descriptors(&mut buf.as_slice()).unwrap(), set);
    }

    #[test]
    fn pgm_round_trip() {
        let px = Array2::from_shape_fn((3, 3), |(y, x)| ((y * 3 + x) * 25) as f64 / 255.0);
        let mut bytes = b"P5\n# comment\n3 3\n255\n".to_vec();
        bytes.extend(px.iter().map(|v| (v * 255.0).round() as u8));
        let back = decode_pgm(&bytes).unwrap();
        assert_eq!(back, px);
        assert_eq!(decode_pgm(&encode_pgm(&px)).unwrap(), px);
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n2 2\n65535\n").is_err());
    }
}
