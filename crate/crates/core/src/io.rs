//! File formats: PGM images with a sidecar header, a raw f64 image format,
//! sparse projection matrices, and sinogram CSV.
//!
//! - `*.pgm`: binary (P5) 8-bit PGM carrying `round(v * 255)`, plus a sidecar
//!   text header `<path>.meta` with the side length, value domain, and mask
//!   radius. Lossless for binary and 8-bit-quantized gray images.
//! - raw image: 16-byte magic `TOMOEPIMG1` (zero padded), little-endian
//!   `u32` side, `u8` domain tag, `u8` mask kind, 2 zero bytes, then
//!   `side*side` little-endian `f64` values in row-major order. Lossless for
//!   any image.
//! - sparse matrix: text header `M N nnz mode`, then one `row col value`
//!   triplet per line.
//! - sinogram: CSV `index,value`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::EntryMode;
use crate::image::{Domain, Image, Mask};
use crate::sparse::SparseMatrix;

const RAW_MAGIC: &[u8; 16] = b"TOMOEPIMG1\0\0\0\0\0\0";

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta");
    s.into()
}

/// Write an image as 8-bit PGM plus sidecar metadata.
pub fn write_pgm(img: &Image, path: &Path) -> Result<()> {
    let side = img.side();
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P5\n{side} {side}\n255\n")?;
    let mut bytes = Vec::with_capacity(side * side);
    for &v in img.grid_values() {
        bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    out.write_all(&bytes)?;
    out.flush()?;

    let mask_radius = img.mask().clip_radius().map_or(-1.0, |_| img.mask().nominal_radius());
    let meta = format!(
        "side={}\ndomain={}\nmask_radius={}\n",
        side,
        img.domain().as_str(),
        mask_radius
    );
    fs::write(meta_path(path), meta)?;
    Ok(())
}

/// Read a PGM written by [`write_pgm`] (sidecar required).
pub fn read_pgm(path: &Path) -> Result<Image> {
    let meta = fs::read_to_string(meta_path(path)).map_err(|e| {
        Error::Format(format!("missing sidecar {:?}: {e}", meta_path(path)))
    })?;
    let mut side = None;
    let mut domain = None;
    let mut mask_radius = None;
    for line in meta.lines() {
        let Some((k, v)) = line.split_once('=') else { continue };
        match k.trim() {
            "side" => side = Some(v.trim().parse::<usize>().map_err(|e| Error::Format(e.to_string()))?),
            "domain" => domain = Some(Domain::parse(v.trim())?),
            "mask_radius" => mask_radius = Some(v.trim().parse::<f64>().map_err(|e| Error::Format(e.to_string()))?),
            _ => {}
        }
    }
    let side = side.ok_or_else(|| Error::Format("sidecar missing side".into()))?;
    let domain = domain.ok_or_else(|| Error::Format("sidecar missing domain".into()))?;
    let masked = mask_radius.is_some_and(|r| r >= 0.0);

    let data = fs::read(path)?;
    let body = parse_pgm_header(&data, side)?;
    let mask = if masked { Mask::circular(side) } else { Mask::full(side) };
    let mut vals = Vec::with_capacity(mask.pixel_count());
    for &(r, c) in mask.pixels() {
        let b = body[r * side + c];
        let v = match domain {
            Domain::Binary => match b {
                0 => 0.0,
                255 => 1.0,
                other => {
                    return Err(Error::Format(format!(
                        "binary PGM has byte {other} at ({r},{c})"
                    )))
                }
            },
            Domain::Continuous => b as f64 / 255.0,
        };
        vals.push(v);
    }
    Image::from_masked_values(mask, domain, &vals)
}

fn parse_pgm_header(data: &[u8], side: usize) -> Result<&[u8]> {
    // P5\n<w> <h>\n255\n followed by w*h bytes
    let header_end = data
        .windows(4)
        .position(|w| w == b"255\n")
        .ok_or_else(|| Error::Format("not a maxval-255 P5 PGM".into()))?
        + 4;
    let header = std::str::from_utf8(&data[..header_end])
        .map_err(|_| Error::Format("non-utf8 PGM header".into()))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some("P5") {
        return Err(Error::Format("missing P5 magic".into()));
    }
    let w: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Format("bad PGM width".into()))?;
    let h: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Format("bad PGM height".into()))?;
    if w != side || h != side {
        return Err(Error::Format(format!(
            "PGM is {w}x{h}, sidecar says {side}x{side}"
        )));
    }
    let body = &data[header_end..];
    if body.len() != side * side {
        return Err(Error::Format(format!(
            "PGM body has {} bytes, expected {}",
            body.len(),
            side * side
        )));
    }
    Ok(body)
}

/// Write the full-precision raw image format.
pub fn write_raw(img: &Image, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(RAW_MAGIC)?;
    out.write_all(&(img.side() as u32).to_le_bytes())?;
    out.write_all(&[match img.domain() {
        Domain::Binary => 0u8,
        Domain::Continuous => 1u8,
    }])?;
    out.write_all(&[if img.mask().clip_radius().is_some() { 0u8 } else { 1u8 }])?;
    out.write_all(&[0u8; 2])?;
    for &v in img.grid_values() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Read the raw image format.
pub fn read_raw(path: &Path) -> Result<Image> {
    let mut f = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 16];
    f.read_exact(&mut magic)?;
    if &magic != RAW_MAGIC {
        return Err(Error::Format("bad raw image magic".into()));
    }
    let mut b4 = [0u8; 4];
    f.read_exact(&mut b4)?;
    let side = u32::from_le_bytes(b4) as usize;
    let mut b1 = [0u8; 1];
    f.read_exact(&mut b1)?;
    let domain = match b1[0] {
        0 => Domain::Binary,
        1 => Domain::Continuous,
        other => return Err(Error::Format(format!("bad domain byte {other}"))),
    };
    f.read_exact(&mut b1)?;
    let mask = match b1[0] {
        0 => Mask::circular(side),
        1 => Mask::full(side),
        other => return Err(Error::Format(format!("bad mask byte {other}"))),
    };
    let mut pad = [0u8; 2];
    f.read_exact(&mut pad)?;
    let mut grid = vec![0.0f64; side * side];
    let mut b8 = [0u8; 8];
    for v in grid.iter_mut() {
        f.read_exact(&mut b8)?;
        *v = f64::from_le_bytes(b8);
    }
    let vals: Vec<f64> = mask.pixels().iter().map(|&(r, c)| grid[r * side + c]).collect();
    Image::from_masked_values(mask, domain, &vals)
}

/// Write a sparse matrix: header `M N nnz mode`, then `row col value` lines.
pub fn write_sparse(m: &SparseMatrix, mode: EntryMode, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{} {} {} {}", m.nrows(), m.ncols(), m.nnz(), mode.as_str())?;
    for (r, c, v) in m.iter_entries() {
        writeln!(out, "{r} {c} {v:.17e}")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a sparse matrix written by [`write_sparse`].
pub fn read_sparse(path: &Path) -> Result<(SparseMatrix, EntryMode)> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut lines = f.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty sparse matrix file".into()))??;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 {
        return Err(Error::Format("sparse header must be 'M N nnz mode'".into()));
    }
    let nrows: usize = parts[0].parse().map_err(|_| Error::Format("bad M".into()))?;
    let ncols: usize = parts[1].parse().map_err(|_| Error::Format("bad N".into()))?;
    let nnz: usize = parts[2].parse().map_err(|_| Error::Format("bad nnz".into()))?;
    let mode = EntryMode::parse(parts[3])?;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
    let mut count = 0usize;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let r: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Format("bad row index".into()))?;
        let c: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Format("bad col index".into()))?;
        let v: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Format("bad value".into()))?;
        if r >= nrows {
            return Err(Error::Format(format!("row {r} out of bounds")));
        }
        rows[r].push((c, v));
        count += 1;
    }
    if count != nnz {
        return Err(Error::Format(format!("header says {nnz} entries, found {count}")));
    }
    Ok((SparseMatrix::from_rows(rows, ncols)?, mode))
}

/// Write a sinogram as `index,value` CSV.
pub fn write_sinogram(p: &[f64], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "index,value")?;
    for (i, v) in p.iter().enumerate() {
        writeln!(out, "{i},{v:.17e}")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a sinogram CSV.
pub fn read_sinogram(path: &Path) -> Result<Vec<f64>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut values = Vec::new();
    for (lineno, line) in f.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || (lineno == 0 && t.starts_with("index")) {
            continue;
        }
        let (idx, val) = t
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("line {lineno}: expected index,value")))?;
        let idx: usize = idx.trim().parse().map_err(|_| Error::Format("bad index".into()))?;
        if idx != values.len() {
            return Err(Error::Format(format!(
                "sinogram indices out of order at line {lineno}"
            )));
        }
        values.push(val.trim().parse::<f64>().map_err(|_| Error::Format("bad value".into()))?);
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::generate_random_phantom;

    #[test]
    fn pgm_round_trips_binary_and_quantized_gray() {
        let dir = tempfile::tempdir().unwrap();
        for mode in [Domain::Binary, Domain::Continuous] {
            let img = generate_random_phantom(50, 6, 11, mode).unwrap();
            let path = dir.path().join(format!("img_{}.pgm", mode.as_str()));
            write_pgm(&img, &path).unwrap();
            let back = read_pgm(&path).unwrap();
            assert_eq!(back.domain(), mode);
            assert_eq!(back.grid_values(), img.grid_values());
        }
    }

    #[test]
    fn raw_round_trips_full_precision() {
        let dir = tempfile::tempdir().unwrap();
        let mask = Mask::circular(20);
        let n = mask.pixel_count();
        let vals: Vec<f64> = (0..n).map(|i| ((i as f64).sin() * 0.5 + 0.5) * 0.999).collect();
        let img = Image::from_masked_values(mask, Domain::Continuous, &vals).unwrap();
        let path = dir.path().join("img.f64");
        write_raw(&img, &path).unwrap();
        let back = read_raw(&path).unwrap();
        assert_eq!(back.grid_values(), img.grid_values());
        assert_eq!(back.domain(), Domain::Continuous);
    }

    #[test]
    fn sparse_and_sinogram_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = SparseMatrix::from_rows(
            vec![vec![(0, 1.25), (3, -0.5)], vec![(2, std::f64::consts::PI)]],
            4,
        )
        .unwrap();
        let path = dir.path().join("mat.txt");
        write_sparse(&m, EntryMode::Length, &path).unwrap();
        let (back, mode) = read_sparse(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(mode, EntryMode::Length);

        let p = vec![1.0, -2.5, 1e-17, 3.25];
        let spath = dir.path().join("sino.csv");
        write_sinogram(&p, &spath).unwrap();
        assert_eq!(read_sinogram(&spath).unwrap(), p);
    }
}
