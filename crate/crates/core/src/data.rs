//! Dataset loading and synthetic generators.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TabularDataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub feature_names: Vec<String>,
    pub output_name: String,
    /// Public bound on the range of the outputs, if known.
    pub output_bound_d: Option<f64>,
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Keeps only the named features, in the given order.
    pub fn select_features(&self, names: &[&str]) -> Result<Self> {
        let cols = names
            .iter()
            .map(|n| {
                self.feature_names
                    .iter()
                    .position(|f| f == n)
                    .ok_or_else(|| Error::MissingColumn(n.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            x: DMatrix::from_fn(self.len(), cols.len(), |i, j| self.x[(i, cols[j])]),
            feature_names: names.iter().map(|s| s.to_string()).collect(),
            ..self.clone()
        })
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            x: DMatrix::from_fn(rows.len(), self.dim(), |i, j| self.x[(rows[i], j)]),
            y: DVector::from_fn(rows.len(), |i, _| self.y[rows[i]]),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct CsvLoad {
    pub dataset: TabularDataset,
    /// Rows dropped for missing or non-finite values.
    pub skipped_rows: usize,
}

/// Reads a headed CSV, using every column except `output_column` as a feature.
pub fn load_csv(path: impl AsRef<Path>, output_column: &str) -> Result<TabularDataset> {
    let load = load_csv_report(path, output_column)?;
    if load.skipped_rows > 0 {
        log::warn!("skipped {} rows with missing values", load.skipped_rows);
    }
    Ok(load.dataset)
}

pub fn load_csv_report(path: impl AsRef<Path>, output_column: &str) -> Result<CsvLoad> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let out = headers
        .iter()
        .position(|h| h == output_column)
        .ok_or_else(|| Error::MissingColumn(output_column.to_string()))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != out)
        .map(|(_, h)| h.clone())
        .collect();
    let mut rows: Vec<f64> = Vec::new();
    let mut ys = Vec::new();
    let mut skipped = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let mut values = Vec::with_capacity(headers.len());
        let mut missing = false;
        for field in record.iter() {
            if field.is_empty() || field.eq_ignore_ascii_case("na") || field.eq_ignore_ascii_case("nan") {
                missing = true;
                values.push(f64::NAN);
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line: line + 2,
                message: format!("cannot parse `{field}` as a number"),
            })?;
            missing |= !v.is_finite();
            values.push(v);
        }
        if values.len() != headers.len() {
            return Err(Error::Parse {
                line: line + 2,
                message: format!("expected {} fields, found {}", headers.len(), values.len()),
            });
        }
        if missing {
            skipped += 1;
            continue;
        }
        ys.push(values[out]);
        rows.extend(values.iter().enumerate().filter(|(i, _)| *i != out).map(|(_, v)| *v));
    }
    if ys.is_empty() {
        return Err(invalid("rows", 0, "no complete rows in the file"));
    }
    let n = ys.len();
    Ok(CsvLoad {
        dataset: TabularDataset {
            x: DMatrix::from_row_slice(n, feature_names.len(), &rows),
            y: DVector::from_vec(ys),
            feature_names,
            output_name: output_column.to_string(),
            output_bound_d: None,
        },
        skipped_rows: skipped,
    })
}

/// Writes features then output, with shortest round-trip float formatting.
pub fn write_csv(path: impl AsRef<Path>, data: &TabularDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = data.feature_names.clone();
    header.push(data.output_name.clone());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = (0..data.dim()).map(|j| data.x[(i, j)].to_string()).collect();
        row.push(data.y[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// IDX / MNIST

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_SIDE: usize = 28;
pub const DOWNSAMPLED_SIDE: usize = 15;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx(format!("truncated header at byte {at}")))
}

/// Raw images from an IDX3 file.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[i * size..(i + 1) * size]
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Idx(format!(
            "image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() != need {
        return Err(Error::Idx(format!(
            "image file has {} bytes, header implies {need}",
            bytes.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Idx(format!(
            "label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    if bytes.len() != 8 + count {
        return Err(Error::Idx(format!(
            "label file has {} bytes, header implies {}",
            bytes.len(),
            8 + count
        )));
    }
    Ok(bytes[8..].to_vec())
}

/// Area-weighted box resampling of a square `side × side` image to `out × out`.
pub fn downsample(image: &[f64], side: usize, out: usize) -> Vec<f64> {
    let scale = side as f64 / out as f64;
    // overlap[o] lists (source index, overlap length) for output cell o.
    let overlap: Vec<Vec<(usize, f64)>> = (0..out)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            (lo.floor() as usize..(hi.ceil() as usize).min(side))
                .map(|s| (s, (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0)))
                .filter(|(_, w)| *w > 0.0)
                .collect()
        })
        .collect();
    let area = scale * scale;
    let mut result = vec![0.0; out * out];
    for (r, rows) in overlap.iter().enumerate() {
        for (c, cols) in overlap.iter().enumerate() {
            let mut acc = 0.0;
            for &(sr, wr) in rows {
                for &(sc, wc) in cols {
                    acc += wr * wc * image[sr * side + sc];
                }
            }
            result[r * out + c] = acc / area;
        }
    }
    result
}

/// Digits 0–4 map to −1, 5–9 to +1.
pub fn binary_label(digit: u8) -> f64 {
    if digit <= 4 {
        -1.0
    } else {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    /// One downsampled image per row, pixel range 0–255.
    pub images: DMatrix<f64>,
    pub labels: DVector<f64>,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Downsamples and relabels the records at `indices`.
pub fn binary_images(images: &IdxImages, labels: &[u8], indices: &[usize]) -> Result<ImageDataset> {
    if images.rows != images.cols {
        return Err(Error::Idx(format!(
            "images are {}×{}, expected square",
            images.rows, images.cols
        )));
    }
    let side = images.rows;
    let out = DOWNSAMPLED_SIDE;
    let mut data = DMatrix::zeros(indices.len(), out * out);
    for (row, &i) in indices.iter().enumerate() {
        let px: Vec<f64> = images.image(i).iter().map(|&p| p as f64).collect();
        for (j, v) in downsample(&px, side, out).into_iter().enumerate() {
            data[(row, j)] = v;
        }
    }
    Ok(ImageDataset {
        images: data,
        labels: DVector::from_iterator(indices.len(), indices.iter().map(|&i| binary_label(labels[i]))),
    })
}

/// Loads IDX images and labels, draws `n_train + n_test` distinct records and
/// returns them downsampled to 15×15 with binary labels.
pub fn load_mnist_binary<R: Rng + ?Sized>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    n_train: usize,
    n_test: usize,
    rng: &mut R,
) -> Result<(ImageDataset, ImageDataset)> {
    let images = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    if labels.len() != images.count {
        return Err(Error::Idx(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    let wanted = n_train + n_test;
    if wanted > images.count {
        return Err(Error::InsufficientRecords {
            requested: wanted,
            available: images.count,
        });
    }
    let picked = sample(rng, images.count, wanted).into_vec();
    Ok((
        binary_images(&images, &labels, &picked[..n_train])?,
        binary_images(&images, &labels, &picked[n_train..])?,
    ))
}

// ---------------------------------------------------------------------------
// Synthetic generators

/// Side of the square the stripes live on.
pub const STRIPES_EXTENT: f64 = 10.0;
/// Decay scale of the vertical sampling density.
pub const STRIPES_DENSITY_SCALE: f64 = 4.0;

/// Noise-free stripe class: sign of a sinusoid along the diagonal, period 8.
/// The phase keeps integer-aligned grids off the class boundary.
pub fn stripe_label(x1: f64, x2: f64) -> f64 {
    if (PI * (x1 + x2) / 4.0 + PI / 8.0).sin() >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Noisy diagonal class stripes on `[0, 10]²`, densest along the bottom edge.
pub fn gen_stripes<R: Rng + ?Sized>(n: usize, noise_flip_prob: f64, rng: &mut R) -> Result<TabularDataset> {
    if n == 0 {
        return Err(invalid("n", 0, "need at least one point"));
    }
    if !(0.0..=1.0).contains(&noise_flip_prob) {
        return Err(invalid("noise_flip_prob", noise_flip_prob, "must lie in [0, 1]"));
    }
    let tail = 1.0 - (-STRIPES_EXTENT / STRIPES_DENSITY_SCALE).exp();
    let mut x = DMatrix::zeros(n, 2);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let x1 = rng.random_range(0.0..STRIPES_EXTENT);
        let u: f64 = rng.random();
        let x2 = -STRIPES_DENSITY_SCALE * (1.0 - u * tail).ln();
        let mut label = stripe_label(x1, x2);
        if rng.random_bool(noise_flip_prob) {
            label = -label;
        }
        x[(i, 0)] = x1;
        x[(i, 1)] = x2;
        y[i] = label;
    }
    Ok(TabularDataset {
        x,
        y,
        feature_names: vec!["x1".into(), "x2".into()],
        output_name: "class".into(),
        output_bound_d: Some(2.0),
    })
}

/// Noise-free labels on a `side × side` grid starting at the origin with
/// spacing `10 / side` (the integer locations for `side = 10`).
pub fn stripes_grid(side: usize) -> TabularDataset {
    let step = STRIPES_EXTENT / side as f64;
    let n = side * side;
    let x = DMatrix::from_fn(n, 2, |i, j| {
        let k = if j == 0 { i % side } else { i / side };
        k as f64 * step
    });
    let y = DVector::from_fn(n, |i, _| stripe_label(x[(i, 0)], x[(i, 1)]));
    TabularDataset {
        x,
        y,
        feature_names: vec!["x1".into(), "x2".into()],
        output_name: "class".into(),
        output_bound_d: Some(2.0),
    }
}

/// Share of kung-like records drawn from the young, dense component.
pub const KUNG_DENSE_SHARE: f64 = 0.9;
pub const KUNG_HEIGHT_RANGE: (f64, f64) = (50.0, 150.0);

/// Adult-height growth curve in centimetres.
pub fn kung_growth(age: f64) -> f64 {
    50.0 + 95.0 * (1.0 - (-age / 8.0).exp())
}

/// Heights against age and weight: most ages in 0–30, a sparse tail in
/// 60–90, heights on a saturating growth curve with 5 cm noise, clipped to
/// [50, 150] so the range bound `d = 100` holds.
pub fn gen_kung_like<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<TabularDataset> {
    if n < 10 {
        return Err(invalid("n", n, "need at least 10 records"));
    }
    let (lo, hi) = KUNG_HEIGHT_RANGE;
    let mut x = DMatrix::zeros(n, 2);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let age = if rng.random_bool(KUNG_DENSE_SHARE) {
            rng.random_range(0.0..30.0)
        } else {
            rng.random_range(60.0..90.0)
        };
        let noise: f64 = rng.sample(StandardNormal);
        let height = (kung_growth(age) + 5.0 * noise).clamp(lo, hi);
        let wnoise: f64 = rng.sample(StandardNormal);
        let weight = (3.5 + 45.0 * ((height - lo) / 95.0).powi(2) + 2.0 * wnoise).clamp(2.0, 70.0);
        x[(i, 0)] = age;
        x[(i, 1)] = weight;
        y[i] = height;
    }
    Ok(TabularDataset {
        x,
        y,
        feature_names: vec!["age".into(), "weight".into()],
        output_name: "height".into(),
        output_bound_d: Some(hi - lo),
    })
}

/// Indices of a sample that is as balanced as possible across strata:
/// `n` is shared evenly over the nonempty strata (spare capacity of small
/// strata passed on to larger ones) and each stratum is sampled uniformly.
pub fn stratified_sample<R: Rng + ?Sized>(strata: &[(i64, i64)], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n > strata.len() {
        return Err(Error::InsufficientRecords {
            requested: n,
            available: strata.len(),
        });
    }
    let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, key) in strata.iter().enumerate() {
        cells.entry(*key).or_default().push(i);
    }
    let mut cells: Vec<Vec<usize>> = cells.into_values().collect();
    cells.sort_by_key(|c| c.len());
    let mut remaining = n;
    let mut out = Vec::with_capacity(n);
    let count = cells.len();
    for (k, members) in cells.iter().enumerate() {
        let share = remaining.div_ceil(count - k).min(members.len());
        out.extend(sample(rng, members.len(), share).into_iter().map(|j| members[j]));
        remaining -= share;
    }
    out.sort_unstable();
    Ok(out)
}

/// Balanced draw of `n` loan records over (delinquent-lines bucket × default)
/// cells. Delinquency counts at or above `max_bucket` share one bucket.
pub fn hel_biased_sample<R: Rng + ?Sized>(
    data: &TabularDataset,
    delinq_column: &str,
    max_bucket: i64,
    n: usize,
    rng: &mut R,
) -> Result<TabularDataset> {
    let col = data
        .feature_names
        .iter()
        .position(|f| f == delinq_column)
        .ok_or_else(|| Error::MissingColumn(delinq_column.to_string()))?;
    let strata: Vec<(i64, i64)> = (0..data.len())
        .map(|i| {
            (
                (data.x[(i, col)].round() as i64).min(max_bucket),
                data.y[i].round() as i64,
            )
        })
        .collect();
    Ok(data.subset(&stratified_sample(&strata, n, rng)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn small_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "age,height\n1,60\n20.5,140\n");
        let d = load_csv(&p, "height").unwrap();
        assert_eq!((d.len(), d.dim()), (2, 1));
        assert_eq!(d.x[(1, 0)], 20.5);
        assert_eq!(d.y[1], 140.0);
    }

    #[test]
    fn missing_values_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "age,weight,height\n1,3,60\n2,NaN,70\n3,,80\n4,9,90\n");
        let r = load_csv_report(&p, "height").unwrap();
        assert_eq!(r.skipped_rows, 2);
        assert_eq!(r.dataset.len(), 2);
        assert_eq!(r.dataset.dim(), 2);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "age,height\n1,abc\n");
        assert!(matches!(load_csv(&p, "height"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(load_csv(&p, "weight"), Err(Error::MissingColumn(_))));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let d = gen_kung_like(40, &mut rng(1)).unwrap();
        let p = dir.path().join("k.csv");
        write_csv(&p, &d).unwrap();
        let back = load_csv(&p, "height").unwrap();
        assert_eq!(back.x, d.x);
        assert_eq!(back.y, d.y);
        assert_eq!(back.feature_names, d.feature_names);
    }

    fn idx_images(images: &[Vec<u8>], side: u32) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(IDX_IMAGES_MAGIC.to_be_bytes());
        b.extend((images.len() as u32).to_be_bytes());
        b.extend(side.to_be_bytes());
        b.extend(side.to_be_bytes());
        for im in images {
            b.extend(im);
        }
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(IDX_LABELS_MAGIC.to_be_bytes());
        b.extend((labels.len() as u32).to_be_bytes());
        b.extend(labels);
        b
    }

    #[test]
    fn handcrafted_idx_files() {
        let a: Vec<u8> = (0..4).collect();
        let b = vec![255u8; 4];
        let parsed = parse_idx_images(&idx_images(&[a.clone(), b.clone()], 2)).unwrap();
        assert_eq!((parsed.count, parsed.rows, parsed.cols), (2, 2, 2));
        assert_eq!(parsed.image(0), &a[..]);
        assert_eq!(parsed.image(1), &b[..]);
        assert_eq!(parse_idx_labels(&idx_labels(&[3, 7])).unwrap(), vec![3, 7]);

        let mut bad = idx_images(std::slice::from_ref(&a), 2);
        bad[3] = 0x01;
        assert!(parse_idx_images(&bad).is_err());
        let mut short = idx_images(&[a], 2);
        short.pop();
        assert!(parse_idx_images(&short).is_err());
        assert!(parse_idx_labels(&idx_labels(&[1])[..6]).is_err());
    }

    #[test]
    fn class_split() {
        assert_eq!(binary_label(3), -1.0);
        assert_eq!(binary_label(7), 1.0);
        assert_eq!(binary_label(4), -1.0);
        assert_eq!(binary_label(5), 1.0);
    }

    #[test]
    fn downsampling_preserves_constants_and_mass() {
        assert!(downsample(&vec![0.0; 784], 28, 15).iter().all(|v| *v == 0.0));
        assert!(downsample(&vec![128.0; 784], 28, 15)
            .iter()
            .all(|v| (v - 128.0).abs() < 1e-12));
        let mut r = rng(3);
        let img: Vec<f64> = (0..784).map(|_| r.random_range(0.0..255.0)).collect();
        let small = downsample(&img, 28, 15);
        let scale = (28.0f64 / 15.0).powi(2);
        let mass_in: f64 = img.iter().sum();
        let mass_out: f64 = small.iter().sum::<f64>() * scale;
        assert!((mass_in - mass_out).abs() < 1e-8 * mass_in);
        assert!(small.iter().all(|v| (0.0..=255.0).contains(v)));
    }

    #[test]
    fn mnist_loading_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let images: Vec<Vec<u8>> = (0..6).map(|i| vec![(i * 40) as u8; 784]).collect();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        fs::write(&ip, idx_images(&images, 28)).unwrap();
        fs::write(&lp, idx_labels(&[0, 1, 5, 6, 9, 4])).unwrap();
        let (train, test) = load_mnist_binary(&ip, &lp, 4, 2, &mut rng(0)).unwrap();
        assert_eq!((train.len(), test.len()), (4, 2));
        assert_eq!(train.images.ncols(), 225);
        for set in [&train, &test] {
            for i in 0..set.len() {
                let v = set.images[(i, 0)];
                let digit = [0, 1, 5, 6, 9, 4][(v / 40.0).round() as usize];
                assert_eq!(set.labels[i], binary_label(digit));
            }
        }
        assert!(matches!(
            load_mnist_binary(&ip, &lp, 5, 2, &mut rng(0)),
            Err(Error::InsufficientRecords { .. })
        ));
    }

    #[test]
    fn stripes_properties() {
        let d = gen_stripes(200, 0.0, &mut rng(1)).unwrap();
        assert_eq!(d.len(), 200);
        for i in 0..200 {
            assert!(d.x.row(i).iter().all(|v| (0.0..=10.0).contains(v)));
            assert_eq!(d.y[i], stripe_label(d.x[(i, 0)], d.x[(i, 1)]));
        }
        for seed in 0..50 {
            let d = gen_stripes(200, 0.1, &mut rng(seed)).unwrap();
            let top = d.x.column(1).iter().filter(|v| **v > 5.0).count();
            assert!(top < 100, "seed {seed}: {top} points in the top half");
        }
        let grid = stripes_grid(10);
        assert_eq!(grid.len(), 100);
        let pos = grid.y.iter().filter(|v| **v > 0.0).count();
        assert_eq!(pos, 52);
    }

    #[test]
    fn coin_flip_labels_carry_no_position_information() {
        let d = gen_stripes(20_000, 0.5, &mut rng(2)).unwrap();
        // Mutual information between the clean stripe class and the label.
        let mut counts = [[0.0f64; 2]; 2];
        for i in 0..d.len() {
            let a = (stripe_label(d.x[(i, 0)], d.x[(i, 1)]) > 0.0) as usize;
            let b = (d.y[i] > 0.0) as usize;
            counts[a][b] += 1.0;
        }
        let n = d.len() as f64;
        let mut mi = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                let pab = counts[a][b] / n;
                let pa = (counts[a][0] + counts[a][1]) / n;
                let pb = (counts[0][b] + counts[1][b]) / n;
                if pab > 0.0 {
                    mi += pab * (pab / (pa * pb)).ln();
                }
            }
        }
        assert!(mi < 1e-3, "{mi}");
    }

    #[test]
    fn kung_like_properties() {
        let d = gen_kung_like(300, &mut rng(5)).unwrap();
        assert_eq!(d.output_bound_d, Some(100.0));
        assert!(d.y.iter().all(|h| (50.0..=150.0).contains(h)));
        let dense = d.x.column(0).iter().filter(|a| **a < 30.0).count();
        assert!(dense as f64 >= 0.8 * 300.0);
        assert_eq!(d, gen_kung_like(300, &mut rng(5)).unwrap());
        assert!(gen_kung_like(9, &mut rng(0)).is_err());
        let one_d = d.select_features(&["age"]).unwrap();
        assert_eq!(one_d.dim(), 1);
        assert_eq!(one_d.x.column(0), d.x.column(0));
    }

    #[test]
    fn stratified_sampling_balances_cells() {
        let mut strata = vec![(0, 0); 100];
        strata.extend(vec![(0, 1); 10]);
        strata.extend(vec![(3, 1); 40]);
        let picked = stratified_sample(&strata, 60, &mut rng(0)).unwrap();
        assert_eq!(picked.len(), 60);
        let mut seen = std::collections::HashSet::new();
        assert!(picked.iter().all(|i| seen.insert(*i)));
        let count = |key| picked.iter().filter(|&&i| strata[i] == key).count();
        assert_eq!(count((0, 1)), 10);
        assert_eq!(count((0, 0)), 25);
        assert_eq!(count((3, 1)), 25);
    }

    #[test]
    fn hel_sample_uses_delinquency_buckets() {
        let x = DMatrix::from_fn(40, 1, |i, _| (i % 8) as f64);
        let y = DVector::from_fn(40, |i, _| (i % 2) as f64);
        let data = TabularDataset {
            x,
            y,
            feature_names: vec!["DELINQ".into()],
            output_name: "BAD".into(),
            output_bound_d: None,
        };
        let s = hel_biased_sample(&data, "DELINQ", 3, 16, &mut rng(1)).unwrap();
        assert_eq!(s.len(), 16);
        assert!(hel_biased_sample(&data, "LOAN", 3, 16, &mut rng(1)).is_err());
    }
}
