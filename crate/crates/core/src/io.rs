//! On-disk formats.
//!
//! * Sequence CSV: header `t,c0,c1,..`, one row per time step, optional
//!   `#` comment lines.
//! * Dataset directory: paired `input_####.csv` / `target_####.csv` plus a
//!   `manifest.txt` in `key = value` form with `steps`, `n_x`, `n_y`,
//!   `count` and either explicit `train`/`test` index lists (`0-39,45`) or
//!   a `train_fraction` with an optional `split_seed`.
//! * Matrix file: `key = value` metadata, then blocks introduced by
//!   `matrix <name> <rows> <cols>` followed by one whitespace-separated line
//!   per row. Values use the shortest round-trip form, so reads are exact.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::config::Config;
use crate::conv::ConvParams;
use crate::error::{Error, Result};
use crate::ntk::GramMatrix;
use crate::rnn::{InitVariances, RnnParams};
use crate::sampler::SeededSampler;
use crate::scales::{ScaleProvenance, ScaleVector};
use crate::seq::{Dataset, Sequence};

pub const MANIFEST: &str = "manifest.txt";

fn parse_err(path: &Path, line: u64, column: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, column, msg: msg.into() }
}

fn dataset_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Dataset { path: path.to_path_buf(), msg: msg.into() }
}

pub fn write_sequence_csv(path: &Path, seq: &Sequence, comment: &str) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for line in comment.lines() {
        writeln!(out, "# {line}")?;
    }
    let header: Vec<String> =
        std::iter::once("t".to_string()).chain((0..seq.channels()).map(|c| format!("c{c}"))).collect();
    writeln!(out, "{}", header.join(","))?;
    for t in 0..seq.steps() {
        let mut row = t.to_string();
        for c in 0..seq.channels() {
            write!(row, ",{:e}", seq.data()[(t, c)]).unwrap();
        }
        writeln!(out, "{row}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a sequence CSV. Errors carry the 1-based line and column of the
/// offending field.
pub fn read_sequence_csv(path: &Path) -> Result<Sequence> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| dataset_err(path, e.to_string()))?;
    let header = rdr.headers().map_err(|e| dataset_err(path, e.to_string()))?.clone();
    let header_line = rdr.position().line().max(1);
    if header.is_empty() || &header[0] != "t" {
        return Err(parse_err(path, header_line, 1, "header must start with `t`"));
    }
    let channels = header.len() - 1;
    if channels == 0 {
        return Err(parse_err(path, header_line, 2, "no channel columns"));
    }
    for (c, name) in header.iter().skip(1).enumerate() {
        if name != format!("c{c}") {
            return Err(parse_err(path, header_line, c + 2, format!("expected column `c{c}`, found `{name}`")));
        }
    }
    let mut values = Vec::new();
    let mut rows = 0;
    let mut last_line = header_line;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| dataset_err(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        last_line = line;
        if rec.len() != channels + 1 {
            return Err(parse_err(
                path,
                line,
                rec.len().min(channels + 1) + 1,
                format!("row has {} fields, expected {}", rec.len(), channels + 1),
            ));
        }
        if rec[0].parse::<usize>().ok() != Some(rows) {
            return Err(parse_err(path, line, 1, format!("expected time index {rows}, found `{}`", &rec[0])));
        }
        for (c, field) in rec.iter().skip(1).enumerate() {
            let v: f64 =
                field.parse().map_err(|_| parse_err(path, line, c + 2, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, c + 2, format!("non-finite value `{field}`")));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(path, last_line + 1, 1, "no data rows"));
    }
    Sequence::from_rows(rows, channels, &values)
}

/// Train/test membership of a dataset's sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded shuffle, the first `round(fraction N)` going to training.
    pub fn by_fraction(n: usize, fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidArgument(format!("train fraction {fraction} outside [0, 1]")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        let mut s = SeededSampler::new(seed, 0x5b11);
        for i in (1..n).rev() {
            idx.swap(i, s.below(i + 1));
        }
        let n_tr = (fraction * n as f64).round() as usize;
        let mut train = idx[..n_tr].to_vec();
        let mut test = idx[n_tr..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok(Self { train, test })
    }
}

/// `0-3,7` -> `[0, 1, 2, 3, 7]`.
pub fn parse_index_list(s: &str) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
                if b < a {
                    return None;
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().ok()?),
        }
    }
    Some(out)
}

pub fn format_index_list(idx: &[usize]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && idx[j + 1] == idx[j] + 1 {
            j += 1;
        }
        parts.push(if j > i { format!("{}-{}", idx[i], idx[j]) } else { idx[i].to_string() });
        i = j + 1;
    }
    parts.join(",")
}

fn input_name(i: usize) -> String {
    format!("input_{i:04}.csv")
}

fn target_name(i: usize) -> String {
    format!("target_{i:04}.csv")
}

/// Writes every sequence of `data` plus a manifest with an explicit split.
pub fn write_dataset(dir: &Path, data: &Dataset, split: &Split, comment: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    for i in 0..data.len() {
        write_sequence_csv(&dir.join(input_name(i)), &data.inputs()[i], comment)?;
        write_sequence_csv(&dir.join(target_name(i)), &data.targets()[i], comment)?;
    }
    let mut m = Config::default();
    m.set("steps", data.steps());
    m.set("n_x", data.input_channels());
    m.set("n_y", data.output_channels());
    m.set("count", data.len());
    m.set("train", format_index_list(&split.train));
    m.set("test", format_index_list(&split.test));
    let mut text = String::new();
    for line in comment.lines() {
        writeln!(text, "# {line}").unwrap();
    }
    text.push_str(&m.canonical());
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

/// Loads and validates a dataset directory.
pub fn read_dataset(dir: &Path) -> Result<(Dataset, Split)> {
    let mpath = dir.join(MANIFEST);
    if !mpath.exists() {
        return Err(dataset_err(dir, "missing manifest.txt"));
    }
    let m = Config::load(&mpath)?;
    m.check_keys(&["steps", "n_x", "n_y", "count", "train", "test", "train_fraction", "split_seed"])?;
    let need = |k: &str| -> Result<usize> {
        match m.get_str(k) {
            None => Err(dataset_err(&mpath, format!("manifest lacks `{k}`"))),
            Some(_) => m.get_or(k, 0usize),
        }
    };
    let (steps, nx, ny) = (need("steps")?, need("n_x")?, need("n_y")?);
    let listed: Vec<usize> = {
        let mut v = Vec::new();
        for entry in fs::read_dir(dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(num) = name.strip_prefix("input_").and_then(|r| r.strip_suffix(".csv")) {
                v.push(num.parse().map_err(|_| dataset_err(dir, format!("bad file name `{name}`")))?);
            }
        }
        v.sort_unstable();
        v
    };
    let count = match m.get_str("count") {
        Some(_) => need("count")?,
        None => listed.len(),
    };
    if listed != (0..count).collect::<Vec<_>>() {
        return Err(dataset_err(
            dir,
            format!(
                "expected input_0000.csv .. input_{:04}.csv, found {} input files",
                count.saturating_sub(1),
                listed.len()
            ),
        ));
    }
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for i in 0..count {
        let tp = dir.join(target_name(i));
        if !tp.exists() {
            return Err(dataset_err(dir, format!("{} has no matching {}", input_name(i), target_name(i))));
        }
        for (path, channels, out) in [(dir.join(input_name(i)), nx, &mut inputs), (tp, ny, &mut targets)] {
            let s = read_sequence_csv(&path)?;
            if s.steps() != steps || s.channels() != channels {
                return Err(dataset_err(
                    &path,
                    format!("shape {}x{} does not match manifest {}x{}", s.steps(), s.channels(), steps, channels),
                ));
            }
            out.push(s);
        }
    }
    let data = Dataset::new(inputs, targets)?;
    let split = match (m.get_str("train"), m.get_str("test")) {
        (Some(tr), Some(ts)) => {
            let bad = || dataset_err(&mpath, "malformed train/test index list");
            let split =
                Split { train: parse_index_list(tr).ok_or_else(bad)?, test: parse_index_list(ts).ok_or_else(bad)? };
            let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
            all.sort_unstable();
            if all != (0..count).collect::<Vec<_>>() {
                return Err(dataset_err(&mpath, "train and test must partition 0..count"));
            }
            split
        }
        (None, None) => Split::by_fraction(count, m.get_or("train_fraction", 0.8)?, m.get_or("split_seed", 0u64)?)?,
        _ => return Err(dataset_err(&mpath, "give both `train` and `test`, or neither")),
    };
    Ok((data, split))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatrixFile {
    pub meta: Vec<(String, String)>,
    pub matrices: Vec<(String, DMatrix<f64>)>,
}

impl MatrixFile {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn matrix(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.matrices.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    fn require(&self, path: &Path, name: &str) -> Result<&DMatrix<f64>> {
        self.matrix(name).ok_or_else(|| dataset_err(path, format!("missing matrix `{name}`")))
    }

    fn meta_f64(&self, path: &Path, key: &str) -> Result<f64> {
        self.meta(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| dataset_err(path, format!("missing or malformed `{key}`")))
    }

    pub fn write(&self, path: &Path, comment: &str) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        for line in comment.lines() {
            writeln!(out, "# {line}")?;
        }
        for (k, v) in &self.meta {
            writeln!(out, "{k} = {v}")?;
        }
        for (name, m) in &self.matrices {
            writeln!(out, "matrix {name} {} {}", m.nrows(), m.ncols())?;
            let mut row = String::new();
            for i in 0..m.nrows() {
                row.clear();
                for j in 0..m.ncols() {
                    if j > 0 {
                        row.push(' ');
                    }
                    write!(row, "{:e}", m[(i, j)]).unwrap();
                }
                writeln!(out, "{row}")?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut file = MatrixFile::default();
        let mut lines = reader.lines().enumerate();
        while let Some((i, line)) = lines.next() {
            let line = line?;
            let lineno = i as u64 + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix("matrix ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                let dims = (parts.len() == 3).then(|| (parts[1].parse::<usize>().ok(), parts[2].parse::<usize>().ok()));
                let Some((Some(rows), Some(cols))) = dims else {
                    return Err(parse_err(path, lineno, 1, "expected `matrix <name> <rows> <cols>`"));
                };
                let mut m = DMatrix::zeros(rows, cols);
                for r in 0..rows {
                    let Some((ri, row)) = lines.next() else {
                        return Err(parse_err(
                            path,
                            lineno + r as u64 + 1,
                            1,
                            format!("matrix `{}` truncated", parts[0]),
                        ));
                    };
                    let row = row?;
                    let vals: Vec<&str> = row.split_whitespace().collect();
                    if vals.len() != cols {
                        return Err(parse_err(
                            path,
                            ri as u64 + 1,
                            vals.len() + 1,
                            format!("expected {cols} values, found {}", vals.len()),
                        ));
                    }
                    for (c, v) in vals.iter().enumerate() {
                        m[(r, c)] = v
                            .parse()
                            .map_err(|_| parse_err(path, ri as u64 + 1, c + 1, format!("`{v}` is not a number")))?;
                    }
                }
                file.matrices.push((parts[0].to_string(), m));
            } else if let Some((k, v)) = trimmed.split_once('=') {
                file.meta.push((k.trim().to_string(), v.trim().to_string()));
            } else {
                return Err(parse_err(path, lineno, 1, format!("unrecognized line `{trimmed}`")));
            }
        }
        Ok(file)
    }
}

fn variance_meta(v: InitVariances) -> Vec<(String, String)> {
    vec![
        ("nu_w".into(), format!("{:e}", v.nu_w)),
        ("nu_f".into(), format!("{:e}", v.nu_f)),
        ("nu_c".into(), format!("{:e}", v.nu_c)),
    ]
}

pub fn save_rnn(path: &Path, p: &RnnParams, comment: &str) -> Result<()> {
    let mut meta = vec![
        ("kind".into(), "rnn".into()),
        ("n".into(), p.hidden().to_string()),
        ("n_x".into(), p.input_channels().to_string()),
        ("n_y".into(), p.output_channels().to_string()),
    ];
    if let Some(v) = p.variances {
        meta.extend(variance_meta(v));
    }
    let file = MatrixFile {
        meta,
        matrices: vec![("W".into(), p.w.clone()), ("F".into(), p.f.clone()), ("C".into(), p.c.clone())],
    };
    file.write(path, comment)
}

pub fn load_rnn(path: &Path) -> Result<RnnParams> {
    let file = MatrixFile::read(path)?;
    if file.meta("kind") != Some("rnn") {
        return Err(dataset_err(path, "not an RNN checkpoint"));
    }
    let mut p = RnnParams::new(
        file.require(path, "W")?.clone(),
        file.require(path, "F")?.clone(),
        file.require(path, "C")?.clone(),
    )?;
    if file.meta("nu_w").is_some() {
        p.variances = Some(InitVariances::new(
            file.meta_f64(path, "nu_w")?,
            file.meta_f64(path, "nu_f")?,
            file.meta_f64(path, "nu_c")?,
        ));
    }
    Ok(p)
}

fn provenance_meta(s: &ScaleVector) -> Vec<(String, String)> {
    match s.provenance() {
        ScaleProvenance::Analytic { nu_w, nu_f, nu_c } => {
            let mut m = vec![("scales".to_string(), "analytic".to_string())];
            m.extend(variance_meta(InitVariances::new(nu_w, nu_f, nu_c)));
            m
        }
        ScaleProvenance::Unit => vec![("scales".into(), "unit".into())],
        ScaleProvenance::Custom => vec![("scales".into(), "custom".into())],
    }
}

pub fn save_conv(path: &Path, p: &ConvParams, comment: &str) -> Result<()> {
    let mut meta = vec![
        ("kind".into(), "conv".into()),
        ("steps".into(), p.steps().to_string()),
        ("n_x".into(), p.input_channels().to_string()),
        ("n_y".into(), p.output_channels().to_string()),
    ];
    meta.extend(provenance_meta(p.scales()));
    let mut matrices = vec![("rho".to_string(), DMatrix::from_row_slice(1, p.steps(), p.scales().rho()))];
    matrices.extend(p.theta().iter().enumerate().map(|(j, t)| (format!("theta_{j}"), t.clone())));
    MatrixFile { meta, matrices }.write(path, comment)
}

pub fn load_conv(path: &Path) -> Result<ConvParams> {
    let file = MatrixFile::read(path)?;
    if file.meta("kind") != Some("conv") {
        return Err(dataset_err(path, "not a convolution checkpoint"));
    }
    let rho: Vec<f64> = file.require(path, "rho")?.iter().copied().collect();
    let scales = match file.meta("scales") {
        Some("analytic") => {
            let v = (file.meta_f64(path, "nu_w")?, file.meta_f64(path, "nu_f")?, file.meta_f64(path, "nu_c")?);
            let s = ScaleVector::with_provenance(rho, ScaleProvenance::Analytic { nu_w: v.0, nu_f: v.1, nu_c: v.2 })?;
            if s != crate::conv::scale_factors(s.len(), v.0, v.1, v.2)? {
                return Err(dataset_err(path, "stored scale factors disagree with their variances"));
            }
            s
        }
        Some("unit") if rho.iter().all(|&r| r == 1.0) => ScaleVector::unit(rho.len()),
        Some("custom") => ScaleVector::custom(rho)?,
        _ => return Err(dataset_err(path, "unknown or inconsistent scale provenance")),
    };
    let theta =
        (0..scales.len()).map(|j| file.require(path, &format!("theta_{j}")).cloned()).collect::<Result<Vec<_>>>()?;
    ConvParams::new(theta, scales)
}

pub fn save_gram(path: &Path, g: &GramMatrix, kernel: &str, provenance: &str, seed: u64, comment: &str) -> Result<()> {
    let meta = vec![
        ("kind".into(), "gram".into()),
        ("kernel".into(), kernel.into()),
        ("scales".into(), provenance.into()),
        ("seed".into(), seed.to_string()),
        ("block_size".into(), g.block_size.to_string()),
        ("lambda_min".into(), format!("{:e}", g.lambda_min)),
        ("lambda_max".into(), format!("{:e}", g.lambda_max)),
    ];
    MatrixFile { meta, matrices: vec![("G".into(), g.matrix.clone())] }.write(path, comment)
}

/// Ensures `dir` exists and is writable.
pub fn prepare_out_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)?;
    Ok(dir.to_path_buf())
}
