//! Synthetic dataset generators and CSV ingestion.
//!
//! Three generators target the failure modes the acquisition experiments
//! probe: `gen_repeated_clusters` plants near-duplicates (top-B acquisition
//! keeps buying copies of the same point), `gen_imbalanced_groups` tags an
//! under-represented subgroup for predictive-parity tracking, and
//! `gen_high_aleatoric` mixes in label-noise points that no amount of
//! labeling can resolve. All class blobs are unit-variance Gaussians with
//! means `6/sqrt(2)` along distinct coordinate axes, so inter-mean distance
//! is exactly 6 and the clean task is steeply learnable.

use std::io;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::rng::{Purpose, RngState};

const BLOB_SEPARATION: f64 = 6.0;

/// Labeled tabular data, optionally with a per-example subgroup tag.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    features: Array2<f64>,
    labels: Vec<usize>,
    subgroup: Option<Vec<usize>>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        labels: Vec<usize>,
        subgroup: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::input("dataset is empty"));
        }
        if labels.len() != n {
            return Err(Error::input(format!("{n} rows but {} labels", labels.len())));
        }
        if num_classes < 2 {
            return Err(Error::input("need at least 2 classes"));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::input(format!("label {y} out of range for {num_classes} classes")));
        }
        if let Some(groups) = &subgroup {
            if groups.len() != n {
                return Err(Error::input(format!("{n} rows but {} group tags", groups.len())));
            }
        }
        if let Some(((r, c), &v)) =
            features.indexed_iter().find(|(_, v)| !v.is_finite())
        {
            return Err(Error::input(format!("non-finite feature at ({r}, {c}): {v}")));
        }
        Ok(Self { name: name.into(), features, labels, subgroup, num_classes })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees at least one row
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn subgroup(&self) -> Option<&[usize]> {
        self.subgroup.as_deref()
    }

    /// Rows gathered by dataset index into a fresh matrix.
    pub fn feature_rows(&self, idx: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((idx.len(), self.dim()));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&self.features.row(i));
        }
        out
    }

    pub fn labels_at(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Disjoint initial-train / pool / test index sets, each sorted ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitIndices {
    train0: Vec<usize>,
    pool: Vec<usize>,
    test: Vec<usize>,
}

impl SplitIndices {
    pub fn new(
        mut train0: Vec<usize>,
        mut pool: Vec<usize>,
        mut test: Vec<usize>,
        n: usize,
    ) -> Result<Self> {
        if train0.is_empty() {
            return Err(Error::parameter("train0", "initial train set is empty"));
        }
        train0.sort_unstable();
        pool.sort_unstable();
        test.sort_unstable();
        let mut seen = vec![false; n];
        for &i in train0.iter().chain(&pool).chain(&test) {
            if i >= n {
                return Err(Error::input(format!("split index {i} out of range for {n} rows")));
            }
            if seen[i] {
                return Err(Error::input(format!("split index {i} appears twice")));
            }
            seen[i] = true;
        }
        Ok(Self { train0, pool, test })
    }

    pub fn train0(&self) -> &[usize] {
        &self.train0
    }

    pub fn pool(&self) -> &[usize] {
        &self.pool
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }
}

/// Unit-variance class means: `6/sqrt(2)` along axis c, pairwise distance
/// exactly 6. Needs d ≥ C axes.
fn blob_means(num_classes: usize, d: usize) -> Result<Vec<Array1<f64>>> {
    if d < num_classes {
        return Err(Error::parameter(
            "d",
            format!("need d >= num_classes to place {num_classes} separated means, got d = {d}"),
        ));
    }
    let radius = BLOB_SEPARATION / std::f64::consts::SQRT_2;
    Ok((0..num_classes)
        .map(|c| {
            let mut mean = Array1::zeros(d);
            mean[c] = radius;
            mean
        })
        .collect())
}

fn validate_common(num_classes: usize, points_per_class: usize, d: usize) -> Result<()> {
    if num_classes < 2 {
        return Err(Error::parameter("num_classes", "must be at least 2"));
    }
    if points_per_class == 0 {
        return Err(Error::parameter("points_per_class", "must be positive"));
    }
    if d == 0 {
        return Err(Error::parameter("d", "must be positive"));
    }
    Ok(())
}

/// Gaussian class blobs where every base point reappears `repetitions − 1`
/// more times, perturbed by isotropic noise of standard deviation
/// `noise_sd`. Layout: the full base block first (class-major), then one
/// whole perturbed copy block per extra repetition. N = C·n·R.
pub fn gen_repeated_clusters(
    num_classes: usize,
    points_per_class: usize,
    repetitions: usize,
    noise_sd: f64,
    d: usize,
    rng: &RngState,
) -> Result<Dataset> {
    validate_common(num_classes, points_per_class, d)?;
    if repetitions == 0 {
        return Err(Error::parameter("repetitions", "must be at least 1"));
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::parameter("noise_sd", "must be finite and >= 0"));
    }
    let means = blob_means(num_classes, d)?;
    let base_count = num_classes * points_per_class;
    let gen = rng.with_purpose(Purpose::DataGen);
    let mut base_stream = gen.with_lane(0).stream();
    let mut features = Array2::zeros((base_count * repetitions, d));
    let mut labels = Vec::with_capacity(base_count * repetitions);
    for (c, mean) in means.iter().enumerate() {
        for p in 0..points_per_class {
            let row = c * points_per_class + p;
            for j in 0..d {
                features[(row, j)] = mean[j] + base_stream.next_normal();
            }
            labels.push(c);
        }
    }
    let mut copy_stream = gen.with_lane(1).stream();
    for r in 1..repetitions {
        for i in 0..base_count {
            let row = r * base_count + i;
            for j in 0..d {
                features[(row, j)] = features[(i, j)] + noise_sd * copy_stream.next_normal();
            }
            labels.push(labels[i]);
        }
    }
    Dataset::new(
        format!("repeated-clusters(c{num_classes},n{points_per_class},r{repetitions})"),
        features,
        labels,
        None,
        num_classes,
    )
}

/// Two subgroups per class: subgroup 0 holds `majority_fraction` of each
/// class at the class mean, subgroup 1 holds the rest at the class mean
/// shifted by 2.5/sqrt(d) in every coordinate.
pub fn gen_imbalanced_groups(
    num_classes: usize,
    points_per_class: usize,
    majority_fraction: f64,
    d: usize,
    rng: &RngState,
) -> Result<Dataset> {
    validate_common(num_classes, points_per_class, d)?;
    if !(majority_fraction > 0.5 && majority_fraction < 1.0) {
        return Err(Error::parameter("majority_fraction", "must lie in (0.5, 1)"));
    }
    let means = blob_means(num_classes, d)?;
    let shift = 2.5 / (d as f64).sqrt();
    let n = num_classes * points_per_class;
    let mut stream = rng.with_purpose(Purpose::DataGen).stream();
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    let majority = (points_per_class as f64 * majority_fraction).round() as usize;
    for (c, mean) in means.iter().enumerate() {
        for p in 0..points_per_class {
            let row = c * points_per_class + p;
            let group = usize::from(p >= majority);
            for j in 0..d {
                features[(row, j)] = mean[j] + group as f64 * shift + stream.next_normal();
            }
            labels.push(c);
            groups.push(group);
        }
    }
    Dataset::new(
        format!("imbalanced-groups(c{num_classes},n{points_per_class},f{majority_fraction})"),
        features,
        labels,
        Some(groups),
        num_classes,
    )
}

/// Class blobs where each example is independently occluded with
/// probability `occlusion_fraction`: its features are replaced by noise
/// around the global centroid and its label is redrawn uniformly, making it
/// irreducibly ambiguous. Occluded examples carry subgroup tag 1, clean
/// ones 0. Clean examples are identical across occlusion fractions under
/// the same rng.
pub fn gen_high_aleatoric(
    num_classes: usize,
    points_per_class: usize,
    occlusion_fraction: f64,
    d: usize,
    rng: &RngState,
) -> Result<Dataset> {
    validate_common(num_classes, points_per_class, d)?;
    if !(occlusion_fraction.is_finite() && (0.0..1.0).contains(&occlusion_fraction)) {
        return Err(Error::parameter("occlusion_fraction", "must lie in [0, 1)"));
    }
    let means = blob_means(num_classes, d)?;
    let centroid: Array1<f64> =
        means.iter().fold(Array1::zeros(d), |acc, m| acc + m) / num_classes as f64;
    let n = num_classes * points_per_class;
    let gen = rng.with_purpose(Purpose::DataGen);
    let mut blob_stream = gen.with_lane(0).stream();
    let flag_rng = gen.with_lane(1);
    let occlusion_rng = gen.with_lane(2);
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for p in 0..points_per_class {
            let row = c * points_per_class + p;
            for j in 0..d {
                features[(row, j)] = mean[j] + blob_stream.next_normal();
            }
            labels.push(c);
            groups.push(0);
        }
    }
    for row in 0..n {
        if flag_rng.uniform_at(row as u64) < occlusion_fraction {
            let mut s = occlusion_rng.with_lane(row as u64).stream();
            for j in 0..d {
                features[(row, j)] = centroid[j] + s.next_normal();
            }
            labels[row] = s.next_below(num_classes);
            groups[row] = 1;
        }
    }
    Dataset::new(
        format!("high-aleatoric(c{num_classes},n{points_per_class},f{occlusion_fraction})"),
        features,
        labels,
        Some(groups),
        num_classes,
    )
}

/// Column layout for CSV ingestion: every column that is not the label or
/// the group column is a feature, in header order.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvSchema {
    pub label_column: String,
    pub group_column: Option<String>,
}

/// Reads a header-first CSV per the schema. Works on any reader so callers
/// can ingest files, buffers, or test fixtures alike.
pub fn read_csv(reader: impl io::Read, schema: &CsvSchema, name: &str) -> Result<Dataset> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| Error::Parse { line: 1, reason: e.to_string() })?
        .clone();
    let label_col = headers
        .iter()
        .position(|h| h == schema.label_column)
        .ok_or_else(|| Error::schema(format!("missing label column `{}`", schema.label_column)))?;
    let group_col = match &schema.group_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::schema(format!("missing group column `{name}`")))?,
        ),
        None => None,
    };
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != label_col && Some(i) != group_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::schema("no feature columns left after label/group"));
    }

    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                reason: format!("{} fields, header has {}", record.len(), headers.len()),
            });
        }
        for &col in &feature_cols {
            let v: f64 = record[col].trim().parse().map_err(|_| Error::Parse {
                line,
                reason: format!("feature `{}` is not a number: `{}`", &headers[col], &record[col]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    reason: format!("feature `{}` is not finite", &headers[col]),
                });
            }
            rows.push(v);
        }
        let label: i64 = record[label_col].trim().parse().map_err(|_| Error::Parse {
            line,
            reason: format!("label is not an integer: `{}`", &record[label_col]),
        })?;
        if label < 0 {
            return Err(Error::schema(format!("negative label {label} at line {line}")));
        }
        labels.push(label as usize);
        if let Some(col) = group_col {
            let group: i64 = record[col].trim().parse().map_err(|_| Error::Parse {
                line,
                reason: format!("group is not an integer: `{}`", &record[col]),
            })?;
            if group < 0 {
                return Err(Error::schema(format!("negative group {group} at line {line}")));
            }
            groups.push(group as usize);
        }
    }
    if labels.is_empty() {
        return Err(Error::input("CSV has no data rows"));
    }
    let features =
        Array2::from_shape_vec((labels.len(), feature_cols.len()), rows).expect("row-major fill");
    let num_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(name, features, labels, group_col.map(|_| groups), num_classes)
}

/// Reads a CSV file; the dataset is named after the file stem.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let name = path.file_stem().map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into());
    read_csv(io::BufReader::new(file), schema, &name)
}

/// Writes `f0..f{d-1},label[,group]` with full-precision floats, the layout
/// [`read_csv`] round-trips exactly.
pub fn write_csv(dataset: &Dataset, writer: impl io::Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let d = dataset.dim();
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    if dataset.subgroup().is_some() {
        header.push("group".into());
    }
    csv.write_record(&header).map_err(io_from_csv)?;
    for i in 0..dataset.len() {
        let mut row: Vec<String> =
            (0..d).map(|j| format!("{}", dataset.features()[(i, j)])).collect();
        row.push(dataset.labels()[i].to_string());
        if let Some(groups) = dataset.subgroup() {
            row.push(groups[i].to_string());
        }
        csv.write_record(&row).map_err(io_from_csv)?;
    }
    csv.flush()?;
    Ok(())
}

fn io_from_csv(e: csv::Error) -> Error {
    Error::input(format!("CSV write failed: {e}"))
}

/// Uniformly random disjoint test and initial-train sets; the remainder is
/// the pool. Test size is round(N · test_fraction).
pub fn make_splits(
    dataset: &Dataset,
    n0: usize,
    test_fraction: f64,
    rng: &RngState,
) -> Result<SplitIndices> {
    let n = dataset.len();
    if !(test_fraction.is_finite() && (0.0..1.0).contains(&test_fraction)) {
        return Err(Error::parameter("test_fraction", "must lie in [0, 1)"));
    }
    let test_count = (n as f64 * test_fraction).round() as usize;
    if n0 == 0 {
        return Err(Error::parameter("n0", "initial train set must be nonempty"));
    }
    if n0 + test_count > n {
        return Err(Error::parameter(
            "n0",
            format!("n0 ({n0}) + test size ({test_count}) exceeds {n} examples"),
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    rng.with_purpose(Purpose::Split).stream().shuffle(&mut idx);
    let test = idx[..test_count].to_vec();
    let train0 = idx[test_count..test_count + n0].to_vec();
    let pool = idx[test_count + n0..].to_vec();
    if pool.is_empty() {
        log::warn!("empty pool: n0 ({n0}) + test ({test_count}) covers all {n} examples");
    }
    SplitIndices::new(train0, pool, test, n)
}
