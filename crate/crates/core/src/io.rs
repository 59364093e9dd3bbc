//! On-disk formats: trajectory and sweep CSVs, problem-instance files, and
//! iterate checkpoints.
//!
//! Floats are written in scientific notation with 17 significant digits,
//! which round-trips every `f64` exactly.
//!
//! Matrix files store a dense matrix in column-major order, either binary
//! (`SGDMAT\0\x01`, then rows and cols as little-endian `u64`, then the
//! little-endian `f64` entries) or text (a `rows cols` line followed by one
//! whitespace-separated line per row).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::experiments::{parse_key_values, Axis, ExperimentRecord, Outcome, ProblemSpec, Seeds};
use crate::problem::GroundTruth;
use crate::rng::{RNG_NAME, RNG_VERSION};
use crate::solver::{Algorithm, Trajectory};

pub const FORMAT_VERSION: u32 = 1;

pub const TRAJECTORY_HEADER: [&str; 9] = [
    "iter",
    "loss",
    "rel_err_fro",
    "rel_err_op",
    "sigma_min_scaled",
    "misalign",
    "gamma_norm",
    "overparam_norm",
    "elapsed_ms",
];

pub const SWEEP_HEADER: [&str; 9] = [
    "axis",
    "axis_value",
    "trial",
    "algorithm",
    "iters_to_target",
    "final_rel_err_fro",
    "final_rel_err_op",
    "stop_reason",
    "wall_ms",
];

const MATRIX_MAGIC: &[u8; 8] = b"SGDMAT\0\x01";
const CHECKPOINT_MAGIC: &[u8; 8] = b"SGDCKPT\x01";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// One parsed row of a trajectory CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub iter: usize,
    pub loss: f64,
    pub rel_err_fro: Option<f64>,
    pub rel_err_op: Option<f64>,
    pub sigma_min_scaled: Option<f64>,
    pub misalign: Option<f64>,
    pub gamma_norm: Option<f64>,
    pub overparam_norm: Option<f64>,
    pub elapsed_ms: Option<f64>,
}

impl TrajectoryRow {
    fn fields(&self) -> [String; 9] {
        [
            self.iter.to_string(),
            fmt_f64(self.loss),
            fmt_opt(self.rel_err_fro),
            fmt_opt(self.rel_err_op),
            fmt_opt(self.sigma_min_scaled),
            fmt_opt(self.misalign),
            fmt_opt(self.gamma_norm),
            fmt_opt(self.overparam_norm),
            fmt_opt(self.elapsed_ms),
        ]
    }
}

/// Rows of a trajectory; `timing = false` leaves `elapsed_ms` empty.
pub fn trajectory_rows(traj: &Trajectory, timing: bool) -> Vec<TrajectoryRow> {
    traj.records
        .iter()
        .map(|rec| TrajectoryRow {
            iter: rec.t,
            loss: rec.loss,
            rel_err_fro: rec.rel_err_fro,
            rel_err_op: rec.rel_err_op,
            sigma_min_scaled: rec.phase.map(|p| p.sigma_min_scaled),
            misalign: rec.phase.map(|p| p.misalign),
            gamma_norm: rec.phase.map(|p| p.gamma_norm),
            overparam_norm: rec.phase.map(|p| p.overparam_norm),
            elapsed_ms: timing.then(|| rec.elapsed_ns as f64 / 1e6),
        })
        .collect()
}

pub fn write_trajectory_rows(rows: &[TrajectoryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(TRAJECTORY_HEADER).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row.fields()).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_trajectory_csv(traj: &Trajectory, path: &Path, timing: bool) -> Result<()> {
    write_trajectory_rows(&trajectory_rows(traj, timing), path)
}

fn open_csv(path: &Path, header: &[&str]) -> Result<csv::Reader<File>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let got = r.headers().map_err(csv_err(path))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(parse_err(path, format!("unexpected header `{}`", got.iter().collect::<Vec<_>>().join(","))));
    }
    Ok(r)
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(path, format!("bad `{name}` field `{}`", rec.get(i).unwrap_or(""))))
}

fn opt_field(path: &Path, rec: &csv::StringRecord, i: usize, name: &str) -> Result<Option<f64>> {
    match rec.get(i) {
        Some("") | None => Ok(None),
        Some(_) => field(path, rec, i, name).map(Some),
    }
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = open_csv(path, &TRAJECTORY_HEADER)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let h = TRAJECTORY_HEADER;
        out.push(TrajectoryRow {
            iter: field(path, &rec, 0, h[0])?,
            loss: field(path, &rec, 1, h[1])?,
            rel_err_fro: opt_field(path, &rec, 2, h[2])?,
            rel_err_op: opt_field(path, &rec, 3, h[3])?,
            sigma_min_scaled: opt_field(path, &rec, 4, h[4])?,
            misalign: opt_field(path, &rec, 5, h[5])?,
            gamma_norm: opt_field(path, &rec, 6, h[6])?,
            overparam_norm: opt_field(path, &rec, 7, h[7])?,
            elapsed_ms: opt_field(path, &rec, 8, h[8])?,
        });
    }
    Ok(out)
}

fn sweep_fields(rec: &ExperimentRecord) -> [String; 9] {
    [
        rec.axis.name().to_string(),
        fmt_f64(rec.axis_value),
        rec.trial.to_string(),
        rec.algorithm.name().to_string(),
        rec.iters_to_target.map(|v| v.to_string()).unwrap_or_default(),
        fmt_f64(rec.final_rel_err_fro),
        fmt_f64(rec.final_rel_err_op),
        rec.stop_reason.name().to_string(),
        fmt_opt(rec.wall_ms),
    ]
}

pub fn write_sweep_csv(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(SWEEP_HEADER).map_err(csv_err(path))?;
    for rec in records {
        w.write_record(sweep_fields(rec)).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut r = open_csv(path, &SWEEP_HEADER)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let axis: Axis = rec.get(0).unwrap_or("").parse()?;
        let algorithm: Algorithm = rec.get(3).unwrap_or("").parse()?;
        let stop_reason: Outcome = rec.get(7).unwrap_or("").parse()?;
        let iters_to_target = match rec.get(4) {
            Some("") | None => None,
            Some(_) => Some(field(path, &rec, 4, "iters_to_target")?),
        };
        out.push(ExperimentRecord {
            axis,
            axis_value: field(path, &rec, 1, "axis_value")?,
            trial: field(path, &rec, 2, "trial")?,
            algorithm,
            iters_to_target,
            final_rel_err_fro: field(path, &rec, 5, "final_rel_err_fro")?,
            final_rel_err_op: field(path, &rec, 6, "final_rel_err_op")?,
            stop_reason,
            wall_ms: opt_field(path, &rec, 8, "wall_ms")?,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixFormat {
    Binary,
    Text,
}

impl MatrixFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MatrixFormat::Binary => "bin",
            MatrixFormat::Text => "txt",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MatrixFormat::Binary => "binary",
            MatrixFormat::Text => "text",
        }
    }
}

impl std::str::FromStr for MatrixFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "bin" => Ok(MatrixFormat::Binary),
            "text" | "txt" => Ok(MatrixFormat::Text),
            other => Err(Error::invalid(format!("unknown matrix format `{other}`"))),
        }
    }
}

pub fn write_matrix(m: &DMatrix<f64>, path: &Path, format: MatrixFormat) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    match format {
        MatrixFormat::Binary => {
            w.write_all(MATRIX_MAGIC).map_err(io)?;
            w.write_all(&(m.nrows() as u64).to_le_bytes()).map_err(io)?;
            w.write_all(&(m.ncols() as u64).to_le_bytes()).map_err(io)?;
            for v in m.iter() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        MatrixFormat::Text => {
            writeln!(w, "{} {}", m.nrows(), m.ncols()).map_err(io)?;
            for row in m.row_iter() {
                let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
                writeln!(w, "{}", line.join(" ")).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s(r: &mut impl Read, count: usize, path: &Path) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Reads a matrix file, detecting the format from its first bytes.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MATRIX_MAGIC) {
        let mut r = &bytes[8..];
        let rows = read_u64(&mut r, path)? as usize;
        let cols = read_u64(&mut r, path)? as usize;
        let data = read_f64s(&mut r, rows * cols, path)?;
        return Ok(DMatrix::from_vec(rows, cols, data));
    }
    let text = String::from_utf8(bytes).map_err(|_| parse_err(path, "not a matrix file"))?;
    let mut lines = text.lines();
    let dims: Vec<usize> = lines
        .next()
        .unwrap_or("")
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| parse_err(path, "bad dimension line")))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(parse_err(path, "expected `rows cols` on the first line"));
    };
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        let line = lines.next().ok_or_else(|| parse_err(path, format!("missing row {i}")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| parse_err(path, format!("bad number `{s}` in row {i}"))))
            .collect::<Result<_>>()?;
        if vals.len() != cols {
            return Err(parse_err(path, format!("row {i} has {} entries, expected {cols}", vals.len())));
        }
        for (j, v) in vals.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

pub fn write_key_values(pairs: &[(String, String)], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    for (k, v) in pairs {
        writeln!(w, "{k} = {v}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_key_values(&text).map_err(|e| parse_err(path, e.to_string()))
}

/// A problem instance as stored by `gen`.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredInstance {
    pub spec: ProblemSpec,
    pub seeds: Seeds,
    pub truth: GroundTruth,
}

/// Paths `(metadata, matrix)` for an instance rooted at `base`.
pub fn instance_paths(base: &Path, format: MatrixFormat) -> (PathBuf, PathBuf) {
    let s = base.as_os_str().to_string_lossy();
    (
        PathBuf::from(format!("{s}.meta")),
        PathBuf::from(format!("{s}.{}", format.extension())),
    )
}

/// Writes `u_star` to a matrix file and everything else to a metadata file.
pub fn write_instance(inst: &StoredInstance, base: &Path, format: MatrixFormat) -> Result<(PathBuf, PathBuf)> {
    let (meta, matrix) = instance_paths(base, format);
    write_matrix(inst.truth.u_star(), &matrix, format)?;
    let sigma: Vec<String> = inst.truth.sigma_star().iter().map(|v| fmt_f64(*v)).collect();
    let file_name = matrix
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let kv = |k: &str, v: String| (k.to_string(), v);
    let pairs = vec![
        kv("format_version", FORMAT_VERSION.to_string()),
        kv("rng", format!("{RNG_NAME}/{RNG_VERSION}")),
        kv("n", inst.spec.n.to_string()),
        kv("r_star", inst.spec.r_star.to_string()),
        kv("kappa", fmt_f64(inst.spec.kappa)),
        kv("spectrum", inst.spec.spectrum.to_string()),
        kv("sigma_star", sigma.join(",")),
        kv("seed", inst.seeds.truth.to_string()),
        kv("m", inst.spec.m.to_string()),
        kv("backend", inst.spec.backend.to_string()),
        kv("operator_seed", inst.seeds.operator.to_string()),
        kv("noise_sigma", fmt_f64(inst.spec.noise_sigma)),
        kv("noise_seed", inst.seeds.noise.to_string()),
        kv("init_seed", inst.seeds.init.to_string()),
        kv("matrix", "u_star".to_string()),
        kv("matrix_format", format.name().to_string()),
        kv("matrix_file", file_name),
    ];
    write_key_values(&pairs, &meta)?;
    Ok((meta, matrix))
}

pub fn read_instance(meta_path: &Path) -> Result<StoredInstance> {
    let pairs = read_key_values(meta_path)?;
    let get = |key: &str| -> Result<&str> {
        pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| parse_err(meta_path, format!("missing key `{key}`")))
    };
    let num = |key: &str| -> Result<f64> {
        get(key)?.parse().map_err(|_| parse_err(meta_path, format!("bad `{key}`")))
    };
    let int = |key: &str| -> Result<u64> {
        get(key)?.parse().map_err(|_| parse_err(meta_path, format!("bad `{key}`")))
    };
    let version = int("format_version")?;
    if version != FORMAT_VERSION as u64 {
        return Err(parse_err(meta_path, format!("unsupported format_version {version}")));
    }
    let matrix_path = meta_path
        .parent()
        .unwrap_or(Path::new(""))
        .join(get("matrix_file")?);
    let u_star = read_matrix(&matrix_path)?;
    let sigma: Vec<f64> = get("sigma_star")?
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| parse_err(meta_path, "bad `sigma_star`")))
        .collect::<Result<_>>()?;
    let seeds = Seeds {
        truth: int("seed")?,
        operator: int("operator_seed")?,
        noise: int("noise_seed")?,
        init: int("init_seed")?,
    };
    let truth = GroundTruth::from_parts(u_star, DVector::from_vec(sigma), seeds.truth)?;
    let spec = ProblemSpec {
        n: int("n")? as usize,
        r_star: int("r_star")? as usize,
        kappa: num("kappa")?,
        spectrum: get("spectrum")?.parse()?,
        m: int("m")? as usize,
        backend: get("backend")?.parse()?,
        noise_sigma: num("noise_sigma")?,
        memory_cap: crate::sensing::DEFAULT_MEMORY_CAP,
    };
    if truth.n() != spec.n || truth.r_star() != spec.r_star {
        return Err(parse_err(meta_path, "matrix shape disagrees with n / r_star"));
    }
    Ok(StoredInstance { spec, seeds, truth })
}

/// Writes `(t, X_t)` pairs; all iterates must share one shape.
pub fn write_checkpoints(checkpoints: &[(usize, DMatrix<f64>)], path: &Path) -> Result<()> {
    let (n, r) = checkpoints.first().map_or((0, 0), |(_, x)| x.shape());
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    for v in [n as u64, r as u64, checkpoints.len() as u64] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for (t, x) in checkpoints {
        if x.shape() != (n, r) {
            return Err(Error::invalid("checkpoints must share one shape"));
        }
        w.write_all(&(*t as u64).to_le_bytes()).map_err(io)?;
        for v in x.iter() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_checkpoints(path: &Path) -> Result<Vec<(usize, DMatrix<f64>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(parse_err(path, "not a checkpoint file"));
    }
    let n = read_u64(&mut r, path)? as usize;
    let rank = read_u64(&mut r, path)? as usize;
    let count = read_u64(&mut r, path)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let t = read_u64(&mut r, path)? as usize;
        out.push((t, DMatrix::from_vec(n, rank, read_f64s(&mut r, n * rank, path)?)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::make_ground_truth;
    use crate::solver::StopReason;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("scaledgd-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, f64::MIN_POSITIVE, std::f64::consts::PI] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(fmt_f64(f64::INFINITY).parse::<f64>().unwrap(), f64::INFINITY);
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let p = tmp("empty.csv");
        write_sweep_csv(&[], &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().trim_end(), SWEEP_HEADER.join(","));
        assert!(read_sweep_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn sweep_csv_parse_back() {
        let recs = vec![
            ExperimentRecord {
                axis: Axis::Kappa,
                axis_value: 7.0,
                trial: 0,
                algorithm: Algorithm::ScaledGdLambda,
                iters_to_target: Some(123),
                final_rel_err_fro: 9.87654321e-10,
                final_rel_err_op: 1.0 / 3.0 * 1e-10,
                stop_reason: Outcome::Stopped(StopReason::TargetReached),
                wall_ms: Some(12.5),
            },
            ExperimentRecord {
                axis: Axis::Kappa,
                axis_value: 7.0,
                trial: 0,
                algorithm: Algorithm::Gd,
                iters_to_target: None,
                final_rel_err_fro: f64::INFINITY,
                final_rel_err_op: f64::INFINITY,
                stop_reason: Outcome::Diverged,
                wall_ms: None,
            },
        ];
        let p = tmp("sweep.csv");
        write_sweep_csv(&recs, &p).unwrap();
        assert_eq!(read_sweep_csv(&p).unwrap(), recs);
    }

    #[test]
    fn matrices_round_trip_bitwise() {
        let m = DMatrix::from_fn(4, 3, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0) - 0.7);
        for fmt in [MatrixFormat::Binary, MatrixFormat::Text] {
            let p = tmp(&format!("m.{}", fmt.extension()));
            write_matrix(&m, &p, fmt).unwrap();
            let back = read_matrix(&p).unwrap();
            assert_eq!(back.shape(), m.shape());
            assert!(back.iter().zip(m.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn instance_round_trip() {
        let mut spec = ProblemSpec::new(12, 2, 3.0);
        spec.noise_sigma = 0.01;
        let seeds = Seeds::single(4);
        let truth = make_ground_truth(12, 2, 3.0, seeds.truth).unwrap();
        let inst = StoredInstance { spec, seeds, truth };
        for fmt in [MatrixFormat::Binary, MatrixFormat::Text] {
            let base = tmp(&format!("inst-{}", fmt.name()));
            let (meta, _) = write_instance(&inst, &base, fmt).unwrap();
            assert_eq!(read_instance(&meta).unwrap(), inst);
        }
    }

    #[test]
    fn checkpoints_round_trip() {
        let cps = vec![(0, DMatrix::from_element(3, 2, 0.5)), (10, DMatrix::from_element(3, 2, -1.25))];
        let p = tmp("ckpt.bin");
        write_checkpoints(&cps, &p).unwrap();
        assert_eq!(read_checkpoints(&p).unwrap(), cps);
    }

    #[test]
    fn io_errors_carry_path() {
        let missing = Path::new("/nonexistent/dir/file.csv");
        let err = read_sweep_csv(missing).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/file.csv"));
    }
}
