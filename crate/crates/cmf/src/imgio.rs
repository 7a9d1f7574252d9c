//! Binary PGM (P5) and PPM (P6) images, 8 bits per sample.
//!
//! Gray images map to rank-2 tensors in [0, 1]; color images to rank-3
//! `3 x H x W` tensors. Indexed instance maps are PGMs whose pixel value is
//! the instance id (0 = background).

use std::fs;
use std::path::Path;

use crate::error::{CmfError, Result};
use crate::mask::BinaryMask;
use crate::metrics::InstanceSet;
use crate::tensor::Tensor;

fn quantize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn header(magic: &str, w: usize, h: usize) -> Vec<u8> {
    format!("{magic}\n{w} {h}\n255\n").into_bytes()
}

/// Parse a PNM header, returning (magic, width, height, maxval, payload).
fn parse_pnm(bytes: &[u8]) -> Result<(u8, usize, usize, usize, &[u8])> {
    let err = |d: &str| CmfError::Format(format!("PNM: {d}"));
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(err("missing magic"));
    }
    let kind = bytes[1];
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| err("bad header number"))?;
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err("missing separator after maxval"));
    }
    pos += 1;
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval == 0 || maxval > 255 {
        return Err(err("only 8-bit samples supported"));
    }
    Ok((kind, w, h, maxval, &bytes[pos..]))
}

/// Write a gray image (rank-2 tensor in [0, 1]) as binary PGM.
pub fn write_pgm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    if image.rank() != 2 {
        return Err(CmfError::shape(
            "write_pgm",
            format!("expected HxW, got rank {}", image.rank()),
        ));
    }
    let (h, w) = (image.dims()[0], image.dims()[1]);
    let mut bytes = header("P5", w, h);
    bytes.extend(image.data().iter().map(|&v| quantize(v)));
    fs::write(path.as_ref(), bytes).map_err(|e| CmfError::io(path.as_ref(), e))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CmfError::io(path, e))?;
    let (kind, w, h, maxval, payload) =
        parse_pnm(&bytes).map_err(|e| CmfError::parse(path, e.to_string()))?;
    if kind != b'5' {
        return Err(CmfError::parse(
            path,
            "expected binary PGM (P5)".to_string(),
        ));
    }
    if payload.len() != w * h {
        return Err(CmfError::parse(path, "payload size mismatch".to_string()));
    }
    let data = payload.iter().map(|&b| b as f32 / maxval as f32).collect();
    Tensor::new(vec![h, w], data)
}

/// Write a color image (`3 x H x W` in [0, 1]) as binary PPM. A rank-2 or
/// single-channel tensor is replicated to gray.
pub fn write_ppm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let (c, h, w) = match image.dims() {
        [h, w] => (1usize, *h, *w),
        [c, h, w] if *c == 1 || *c == 3 => (*c, *h, *w),
        other => {
            return Err(CmfError::shape(
                "write_ppm",
                format!("expected HxW, 1xHxW or 3xHxW, got {other:?}"),
            ))
        }
    };
    let plane = h * w;
    let mut bytes = header("P6", w, h);
    for i in 0..plane {
        for ch in 0..3 {
            let src = if c == 3 { ch * plane + i } else { i };
            bytes.push(quantize(image.data()[src]));
        }
    }
    fs::write(path.as_ref(), bytes).map_err(|e| CmfError::io(path.as_ref(), e))
}

/// Read a P5 or P6 image into `C x H x W` (C = 1 or 3) in [0, 1].
pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CmfError::io(path, e))?;
    let (kind, w, h, maxval, payload) =
        parse_pnm(&bytes).map_err(|e| CmfError::parse(path, e.to_string()))?;
    let channels = match kind {
        b'5' => 1,
        b'6' => 3,
        other => {
            return Err(CmfError::parse(
                path,
                format!("unsupported PNM kind P{}", other as char),
            ))
        }
    };
    if payload.len() != w * h * channels {
        return Err(CmfError::parse(path, "payload size mismatch".to_string()));
    }
    let plane = w * h;
    let mut data = vec![0.0f32; channels * plane];
    for i in 0..plane {
        for c in 0..channels {
            data[c * plane + i] = payload[i * channels + c] as f32 / maxval as f32;
        }
    }
    Tensor::new(vec![channels, h, w], data)
}

/// Indexed instance map: pixel value = instance id, 0 = background.
pub fn write_index_map(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    ids: &[u8],
) -> Result<()> {
    if ids.len() != width * height {
        return Err(CmfError::invalid(
            "write_index_map",
            format!("{} ids for {}x{} map", ids.len(), width, height),
        ));
    }
    let mut bytes = header("P5", width, height);
    bytes.extend_from_slice(ids);
    fs::write(path.as_ref(), bytes).map_err(|e| CmfError::io(path.as_ref(), e))
}

pub fn read_index_map(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CmfError::io(path, e))?;
    let (kind, w, h, _maxval, payload) =
        parse_pnm(&bytes).map_err(|e| CmfError::parse(path, e.to_string()))?;
    if kind != b'5' {
        return Err(CmfError::parse(path, "index maps must be P5".to_string()));
    }
    if payload.len() != w * h {
        return Err(CmfError::parse(path, "payload size mismatch".to_string()));
    }
    Ok((w, h, payload.to_vec()))
}

/// Instance set from an indexed map: one mask per id in 1..=max.
pub fn instances_from_index_map(width: usize, height: usize, ids: &[u8]) -> Result<InstanceSet> {
    let max_id = ids.iter().copied().max().unwrap_or(0);
    let mut masks = Vec::new();
    for id in 1..=max_id {
        let data = ids.iter().map(|&v| v == id).collect();
        let mask = BinaryMask::new(width, height, data)?;
        if !mask.is_empty_mask() {
            masks.push(mask);
        }
    }
    InstanceSet::from_masks(width, height, masks)
}

/// Indexed map from an instance set; higher scores claim contested pixels.
pub fn instances_to_index_map(set: &InstanceSet) -> Result<Vec<u8>> {
    if set.len() > 255 {
        return Err(CmfError::invalid(
            "instances_to_index_map",
            format!("{} instances exceed the 8-bit id space", set.len()),
        ));
    }
    let resolved = set.resolve_overlaps();
    let mut ids = vec![0u8; set.width() * set.height()];
    for (i, mask) in resolved.masks().iter().enumerate() {
        for (j, &on) in mask.data().iter().enumerate() {
            if on {
                ids[j] = (i + 1) as u8;
            }
        }
    }
    Ok(ids)
}

/// Distinct color for an instance id (id 0 maps to black).
pub fn instance_color(id: u8) -> [u8; 3] {
    if id == 0 {
        return [0, 0, 0];
    }
    // low-discrepancy hue walk
    let hue = (id as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let x = (1.0 - ((hue % 2.0) - 1.0).abs()) * 255.0;
    let (r, g, b) = match hue as usize {
        0 => (255.0, x, 0.0),
        1 => (x, 255.0, 0.0),
        2 => (0.0, 255.0, x),
        3 => (0.0, x, 255.0),
        4 => (x, 0.0, 255.0),
        _ => (255.0, 0.0, x),
    };
    [r as u8, g as u8, b as u8]
}

/// Write an indexed map as a colored PPM.
pub fn write_color_index_map(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    ids: &[u8],
) -> Result<()> {
    if ids.len() != width * height {
        return Err(CmfError::invalid(
            "write_color_index_map",
            "id count does not match dims".to_string(),
        ));
    }
    let mut bytes = header("P6", width, height);
    for &id in ids {
        bytes.extend_from_slice(&instance_color(id));
    }
    fs::write(path.as_ref(), bytes).map_err(|e| CmfError::io(path.as_ref(), e))
}

/// Map a depth map into an 8-bit PGM normalized over `[d_min, d_max]`.
pub fn depth_to_pgm(path: impl AsRef<Path>, depth: &Tensor, d_min: f64, d_max: f64) -> Result<()> {
    if depth.rank() != 2 {
        return Err(CmfError::shape(
            "depth_to_pgm",
            format!("expected HxW, got rank {}", depth.rank()),
        ));
    }
    if !(d_max > d_min) {
        return Err(CmfError::invalid("depth_to_pgm", "empty depth range"));
    }
    let span = d_max - d_min;
    let norm = depth.map(|v| ((v as f64 - d_min) / span) as f32);
    write_pgm(path, &norm)
}

/// Per-channel heatmaps normalized to each channel's own min/max, written
/// as `channel_NNN.pgm` under `dir`.
pub fn write_channel_heatmaps(dir: impl AsRef<Path>, tensor: &Tensor) -> Result<usize> {
    if tensor.rank() != 3 {
        return Err(CmfError::shape(
            "write_channel_heatmaps",
            format!("expected CxHxW, got rank {}", tensor.rank()),
        ));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| CmfError::io(dir, e))?;
    let (c, h, w) = (tensor.dims()[0], tensor.dims()[1], tensor.dims()[2]);
    let plane = h * w;
    for ci in 0..c {
        let slice = &tensor.data()[ci * plane..][..plane];
        let lo = slice.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = slice.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let norm: Vec<f32> = slice.iter().map(|&v| (v - lo) / span).collect();
        let img = Tensor::new(vec![h, w], norm)?;
        write_pgm(dir.join(format!("channel_{ci:03}.pgm")), &img)?;
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrip_is_exact_at_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let data: Vec<f32> = (0..24).map(|i| (i as f32) / 23.0).collect();
        let img = Tensor::new(vec![4, 6], data).unwrap();
        write_pgm(&path, &img).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back.dims(), &[4, 6]);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn ppm_roundtrip_preserves_channels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let mut rng = crate::test_rng(3);
        let img = Tensor::random_uniform(&[3, 5, 7], 0.0, 1.0, &mut rng).unwrap();
        write_ppm(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.dims(), &[3, 5, 7]);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let mut bytes = b"P5\n# a comment\n3 2\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255, 10, 20, 30]);
        std::fs::write(&path, bytes).unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!(img.dims(), &[2, 3]);
        assert_eq!(img.data()[2], 1.0);
    }

    #[test]
    fn index_maps_roundtrip_through_instances() {
        let a = BinaryMask::from_rect(6, 4, 0, 0, 2, 2);
        let b = BinaryMask::from_rect(6, 4, 3, 1, 6, 4);
        let set = InstanceSet::from_masks(6, 4, vec![a.clone(), b.clone()]).unwrap();
        let ids = instances_to_index_map(&set).unwrap();
        let back = instances_from_index_map(6, 4, &ids).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.masks()[0], a);
        assert_eq!(back.masks()[1], b);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.pgm");
        write_index_map(&path, 6, 4, &ids).unwrap();
        let (w, h, ids2) = read_index_map(&path).unwrap();
        assert_eq!((w, h), (6, 4));
        assert_eq!(ids, ids2);
    }

    #[test]
    fn depth_pgm_normalizes_over_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pgm");
        let depth = Tensor::new(vec![1, 3], vec![1.0, 1.5, 2.0]).unwrap();
        depth_to_pgm(&path, &depth, 1.0, 2.0).unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!(img.data()[0], 0.0);
        assert!((img.data()[1] - 0.5).abs() < 1e-2);
        assert_eq!(img.data()[2], 1.0);
    }

    #[test]
    fn heatmaps_cover_all_channels() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = crate::test_rng(5);
        let t = Tensor::random_uniform(&[3, 4, 4], -2.0, 2.0, &mut rng).unwrap();
        let n = write_channel_heatmaps(dir.path(), &t).unwrap();
        assert_eq!(n, 3);
        assert!(dir.path().join("channel_002.pgm").exists());
    }

    #[test]
    fn rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        std::fs::write(&path, b"P5\n3 2\n255\n\x00\x01").unwrap(); // short payload
        assert!(read_pgm(&path).is_err());
        std::fs::write(&path, b"P7\n3 2\n255\n").unwrap();
        assert!(read_image(&path).is_err());
    }
}
