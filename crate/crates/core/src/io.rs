//! File formats: the binary experience dump and parameter checkpoints.
//!
//! Experience dump: packed rows of `row_width` little-endian 32-bit
//! floats, concatenated, no header; the state dimension travels
//! out-of-band in config.
//!
//! Checkpoint: `<path>` holds the named weight arrays concatenated as
//! little-endian 32-bit floats in a fixed order; `<path>.manifest` is a
//! text file with one `name rows cols` line per array in file order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dueling::{Dense, DuelingParams};
use crate::error::{Error, Result};
use crate::experience::{pack_experience, unpack_experience, Experience, PackedRow, RowLayout};
use crate::mat::Mat;

/// Append packed experiences to a writer; returns rows written.
pub fn write_experience_dump(
    w: &mut impl Write,
    exps: &[Experience],
    layout: &RowLayout,
) -> Result<u64> {
    let mut written = 0u64;
    for exp in exps {
        let row = pack_experience(exp, layout)?;
        for v in row.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        written += 1;
    }
    Ok(written)
}

/// Read every whole row from a reader; trailing partial rows are an error.
pub fn read_experience_dump(r: &mut impl Read, layout: &RowLayout) -> Result<Vec<Experience>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let row_bytes = layout.row_width() * 4;
    if bytes.len() % row_bytes != 0 {
        return Err(Error::CorruptRow(format!(
            "dump length {} is not a multiple of the {}-byte row",
            bytes.len(),
            row_bytes
        )));
    }
    let mut out = Vec::with_capacity(bytes.len() / row_bytes);
    for chunk in bytes.chunks_exact(row_bytes) {
        let values: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push(unpack_experience(&PackedRow::new(values), layout)?);
    }
    Ok(out)
}

pub fn write_experience_dump_file(
    path: &Path,
    exps: &[Experience],
    layout: &RowLayout,
) -> Result<u64> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = write_experience_dump(&mut w, exps, layout)?;
    w.flush()?;
    Ok(n)
}

pub fn read_experience_dump_file(path: &Path, layout: &RowLayout) -> Result<Vec<Experience>> {
    let mut r = BufReader::new(File::open(path)?);
    read_experience_dump(&mut r, layout)
}

fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest");
    path.with_file_name(name)
}

/// Write a checkpoint: binary weights at `path`, text manifest alongside.
pub fn save_checkpoint(path: &Path, params: &DuelingParams<f32>) -> Result<()> {
    params.validate()?;
    let mut bin = BufWriter::new(File::create(path)?);
    let mut manifest = String::new();
    for (name, rows, cols, data) in params.named_arrays() {
        manifest.push_str(&format!("{name} {rows} {cols}\n"));
        for v in data {
            bin.write_all(&v.to_le_bytes())?;
        }
    }
    bin.flush()?;
    std::fs::write(manifest_path(path), manifest)?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<DuelingParams<f32>> {
    let manifest = std::fs::read_to_string(manifest_path(path))?;
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;

    let mut arrays: Vec<(String, usize, usize, Vec<f32>)> = Vec::new();
    let mut offset = 0usize;
    for (lineno, line) in manifest.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::CorruptRow(format!(
                "manifest line {}: expected `name rows cols`, got {line:?}",
                lineno + 1
            )));
        }
        let rows: usize = fields[1]
            .parse()
            .map_err(|_| Error::CorruptRow(format!("manifest line {}: bad rows", lineno + 1)))?;
        let cols: usize = fields[2]
            .parse()
            .map_err(|_| Error::CorruptRow(format!("manifest line {}: bad cols", lineno + 1)))?;
        let len = rows * cols * 4;
        if offset + len > bytes.len() {
            return Err(Error::CorruptRow(
                "checkpoint binary shorter than manifest claims".into(),
            ));
        }
        let data: Vec<f32> = bytes[offset..offset + len]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        offset += len;
        arrays.push((fields[0].to_string(), rows, cols, data));
    }
    if offset != bytes.len() {
        return Err(Error::CorruptRow(
            "checkpoint binary longer than manifest claims".into(),
        ));
    }

    let mut find = |name: &str| -> Result<(usize, usize, Vec<f32>)> {
        arrays
            .iter()
            .position(|(n, _, _, _)| n == name)
            .map(|i| {
                let (_, r, c, d) = arrays.remove(i);
                (r, c, d)
            })
            .ok_or_else(|| Error::CorruptRow(format!("checkpoint missing array {name}")))
    };
    let mut dense = |wname: &str, bname: &str| -> Result<Dense<f32>> {
        let (wr, wc, wd) = find(wname)?;
        let (_, _, bd) = find(bname)?;
        Ok(Dense {
            w: Mat::from_vec(wr, wc, wd),
            b: bd,
        })
    };
    let params = DuelingParams {
        shared: dense("shared.w", "shared.b")?,
        value_hidden: dense("value_hidden.w", "value_hidden.b")?,
        value_head: dense("value_head.w", "value_head.b")?,
        adv_hidden: dense("adv_hidden.w", "adv_hidden.b")?,
        adv_head: dense("adv_head.w", "adv_head.b")?,
    };
    params.validate()?;
    Ok(params)
}
