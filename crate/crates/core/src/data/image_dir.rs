//! PNG directory plus `id,label` CSV, with an optional decoded-bytes cache.

use std::fs;
use std::hash::{Hash, Hasher};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};

/// Directory for decoded-image caches; unset disables caching.
pub const CACHE_ENV: &str = "HISTOBENCH_CACHE";

const SIDE: usize = 96;
const CACHE_MAGIC: &[u8; 4] = b"HBIC";

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    id: String,
    label: u8,
}

fn read_rows(labels_csv: &Path) -> Result<Vec<Row>> {
    let mut reader = csv::Reader::from_path(labels_csv).map_err(|e| csv_error(labels_csv, e))?;
    let headers = reader.headers().map_err(|e| csv_error(labels_csv, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "label"] {
        return Err(Error::Format(format!(
            "{}: expected header id,label, found {}",
            labels_csv.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(labels_csv, e)))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Format(format!("{}: {kind:?}", path.display())),
    }
}

fn decode_png(path: &Path) -> Result<Vec<u8>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let bad = |m: String| Error::Format(format!("{}: {m}", path.display()));
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| bad("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    if (w, h) != (SIDE, SIDE) {
        return Err(bad(format!("expected {SIDE}x{SIDE} pixels, found {w}x{h}")));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(bad(format!("unsupported color type {other:?}"))),
    };
    let pixels = &buf[..info.buffer_size()];
    let plane = w * h;
    let mut chw = vec![0u8; 3 * plane];
    for (i, px) in pixels.chunks_exact(channels).enumerate() {
        for c in 0..3 {
            chw[c * plane + i] = if channels < 3 { px[0] } else { px[c] };
        }
    }
    Ok(chw)
}

fn cache_path(cache_dir: &Path, dir: &Path, csv_bytes: &[u8]) -> PathBuf {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    dir.canonicalize().unwrap_or_else(|_| dir.to_path_buf()).hash(&mut h);
    csv_bytes.hash(&mut h);
    cache_dir.join(format!("imagedir-{:016x}.bin", h.finish()))
}

fn read_cache(path: &Path, labels: &[u8]) -> Option<Vec<u8>> {
    let mut raw = Vec::new();
    fs::File::open(path).ok()?.read_to_end(&mut raw).ok()?;
    let (magic, rest) = raw.split_at_checked(4)?;
    let (n, rest) = rest.split_at_checked(8)?;
    let n = u64::from_le_bytes(n.try_into().ok()?) as usize;
    if magic != CACHE_MAGIC || n != labels.len() || rest.len() != n * 3 * SIDE * SIDE {
        log::warn!("ignoring stale cache {}", path.display());
        return None;
    }
    Some(rest.to_vec())
}

fn write_cache(path: &Path, bytes: &[u8], n: usize) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = BufWriter::new(fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?);
    f.write_all(CACHE_MAGIC)
        .and_then(|_| f.write_all(&(n as u64).to_le_bytes()))
        .and_then(|_| f.write_all(bytes))
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Load `<dir>/<id>.png` for every CSV row, in row order.
///
/// When [`CACHE_ENV`] names a directory, decoded bytes are stored there keyed
/// by the directory path and CSV contents, and reused on later loads.
pub fn load_image_dir(dir: &Path, labels_csv: &Path) -> Result<LabeledDataset> {
    let csv_bytes = fs::read(labels_csv).map_err(|e| Error::io(labels_csv, e))?;
    let rows = read_rows(labels_csv)?;
    if rows.is_empty() {
        return Err(Error::Load(format!("{} lists no images", labels_csv.display())));
    }
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let description = format!("image-dir {}", dir.display());

    let cache = std::env::var_os(CACHE_ENV).map(|d| cache_path(Path::new(&d), dir, &csv_bytes));
    if let Some(bytes) = cache.as_deref().and_then(|p| read_cache(p, &labels)) {
        log::debug!("decoded images served from cache");
        return LabeledDataset::from_bytes([3, SIDE, SIDE], bytes, labels, &description);
    }

    let missing: Vec<&str> = rows
        .iter()
        .filter(|r| !dir.join(format!("{}.png", r.id)).is_file())
        .map(|r| r.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Load(format!(
            "{} image(s) missing from {}: {}",
            missing.len(),
            dir.display(),
            missing.join(", ")
        )));
    }
    let mut bytes = Vec::with_capacity(rows.len() * 3 * SIDE * SIDE);
    for r in &rows {
        bytes.extend(decode_png(&dir.join(format!("{}.png", r.id)))?);
    }
    if let Some(path) = cache {
        if let Err(e) = fs::create_dir_all(path.parent().unwrap_or(Path::new("."))).map_err(|e| Error::io(&path, e))
            .and_then(|_| write_cache(&path, &bytes, rows.len()))
        {
            log::warn!("could not write image cache: {e}");
        }
    }
    LabeledDataset::from_bytes([3, SIDE, SIDE], bytes, labels, &description)
}

/// Write a 96×96 RGB dataset as `<dir>/<id>.png` files plus `<dir>/labels.csv`.
///
/// Ids are `{prefix}{index:06}`. Returns the CSV path.
pub fn write_image_dir(dataset: &LabeledDataset, dir: &Path, prefix: &str) -> Result<PathBuf> {
    if dataset.image_shape() != [3, SIDE, SIDE] {
        return Err(Error::dim(format!(
            "image directories hold 3x96x96 images, dataset has {:?}",
            dataset.image_shape()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let plane = SIDE * SIDE;
    let mut rows = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let id = format!("{prefix}{i:06}");
        let chw = dataset.image_bytes(i)?;
        let hwc: Vec<u8> = (0..plane).flat_map(|p| [chw[p], chw[plane + p], chw[2 * plane + p]]).collect();
        let path = dir.join(format!("{id}.png"));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), SIDE as u32, SIDE as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        encoder
            .write_header()
            .and_then(|mut w| w.write_image_data(&hwc))
            .map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
        rows.push(Row {
            id,
            label: dataset.labels()[i],
        });
    }
    let csv_path = dir.join("labels.csv");
    let tmp = dir.join("labels.csv.tmp");
    let mut writer = csv::Writer::from_path(&tmp).map_err(|e| csv_error(&tmp, e))?;
    for r in &rows {
        writer.serialize(r).map_err(|e| csv_error(&tmp, e))?;
    }
    writer.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(writer);
    fs::rename(&tmp, &csv_path).map_err(|e| Error::io(&csv_path, e))?;
    Ok(csv_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, w: u32, h: u32, rgb: [u8; 3]) {
        let file = fs::File::create(path).unwrap();
        let mut e = png::Encoder::new(file, w, h);
        e.set_color(png::ColorType::Rgb);
        e.set_depth(png::BitDepth::Eight);
        let data: Vec<u8> = (0..w * h).flat_map(|_| rgb).collect();
        e.write_header().unwrap().write_image_data(&data).unwrap();
    }

    #[test]
    fn csv_order_is_dataset_order() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("b.png"), 96, 96, [255, 255, 255]);
        write_png(&dir.path().join("a.png"), 96, 96, [0, 10, 20]);
        write_png(&dir.path().join("c.png"), 96, 96, [1, 2, 3]);
        let csv = dir.path().join("labels.csv");
        fs::write(&csv, "id,label\nb,1\na,0\nc,1\n").unwrap();
        let ds = load_image_dir(dir.path(), &csv).unwrap();
        assert_eq!(ds.labels(), &[1, 0, 1]);
        assert!(ds.batch_tensor(&[0]).unwrap().data().iter().all(|&v| v == 1.0));
        let a = ds.image_bytes(1).unwrap();
        assert_eq!((a[0], a[96 * 96], a[2 * 96 * 96]), (0, 10, 20));
    }

    #[test]
    fn missing_files_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("x.png"), 96, 96, [0, 0, 0]);
        let csv = dir.path().join("labels.csv");
        fs::write(&csv, "id,label\nx,0\nghost1,1\nghost2,0\n").unwrap();
        match load_image_dir(dir.path(), &csv) {
            Err(Error::Load(m)) => assert!(m.contains("ghost1") && m.contains("ghost2") && !m.contains("x,")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_size_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("s.png"), 64, 96, [0, 0, 0]);
        let csv = dir.path().join("labels.csv");
        fs::write(&csv, "id,label\ns,0\n").unwrap();
        assert!(matches!(load_image_dir(dir.path(), &csv), Err(Error::Format(m)) if m.contains("64x96")));
    }

    #[test]
    fn bad_header_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("labels.csv");
        fs::write(&csv, "name,y\ns,0\n").unwrap();
        assert!(matches!(load_image_dir(dir.path(), &csv), Err(Error::Format(_))));
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = crate::data::synth_center_blob(4, 0.1, 1).unwrap();
        let csv = write_image_dir(&ds, dir.path(), "s").unwrap();
        let cache_dir = dir.path().join("cache");
        fs::create_dir(&cache_dir).unwrap();
        let path = cache_path(&cache_dir, dir.path(), &fs::read(&csv).unwrap());
        let bytes: Vec<u8> = (0..4).flat_map(|i| ds.image_bytes(i).unwrap()).collect();
        write_cache(&path, &bytes, 4).unwrap();
        assert_eq!(read_cache(&path, ds.labels()).unwrap(), bytes);
        assert!(read_cache(&path, &[0, 1]).is_none());
    }
}
