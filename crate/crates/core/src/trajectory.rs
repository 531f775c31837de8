//! Recorded trajectories, block-Hankel matrices and persistency of excitation.
//!
//! Signals are stored column-wise: column `t` of an `n x N` matrix is the
//! sample at time `t`.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result, dim_err};
use crate::linalg::numerical_rank;
use crate::model::LtiSystem;

/// What the `outputs` of a recording are.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    /// Outputs are measured outputs `y`.
    OutputFeedback,
    /// Outputs are full states `x`.
    StateFeedback,
}

impl DataKind {
    fn as_str(self) -> &'static str {
        match self {
            DataKind::OutputFeedback => "output-feedback",
            DataKind::StateFeedback => "state-feedback",
        }
    }
}

/// An offline input/output (or input/state) recording of length `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryData {
    pub inputs: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    pub kind: DataKind,
}

impl TrajectoryData {
    pub fn new(inputs: DMatrix<f64>, outputs: DMatrix<f64>, kind: DataKind) -> Result<Self> {
        if inputs.ncols() != outputs.ncols() {
            return dim_err(format!(
                "input and output lengths differ ({} vs {})",
                inputs.ncols(),
                outputs.ncols()
            ));
        }
        if inputs.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("trajectory contains non-finite samples".into()));
        }
        Ok(Self { inputs, outputs, kind })
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.nrows()
    }

    /// Writes `t,u0..,y0..` rows with lossless float formatting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# kind={}", self.kind.as_str())?;
        let mut wtr = csv::Writer::from_writer(&mut w);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.input_dim()).map(|i| format!("u{i}")));
        header.extend((0..self.output_dim()).map(|i| format!("y{i}")));
        wtr.write_record(&header)?;
        for t in 0..self.len() {
            let mut row = vec![t.to_string()];
            row.extend(self.inputs.column(t).iter().map(|v| format!("{v:e}")));
            row.extend(self.outputs.column(t).iter().map(|v| format!("{v:e}")));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Parses the format written by [`TrajectoryData::write_csv`]. Lines
    /// starting with `#` are metadata; `kind=` selects the data kind.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut kind = DataKind::OutputFeedback;
        let mut body = String::new();
        for line in r.lines() {
            let line = line?;
            if let Some(meta) = line.strip_prefix('#') {
                if let Some(k) = meta.trim().strip_prefix("kind=") {
                    kind = match k.trim() {
                        "output-feedback" => DataKind::OutputFeedback,
                        "state-feedback" => DataKind::StateFeedback,
                        other => return Err(Error::Parse(format!("unknown data kind '{other}'"))),
                    };
                }
                continue;
            }
            body.push_str(&line);
            body.push('\n');
        }
        let mut rdr = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("t") {
            return Err(Error::Parse("first column must be 't'".into()));
        }
        let n_u = header.iter().filter(|h| h.starts_with('u')).count();
        let n_y = header.iter().filter(|h| h.starts_with('y')).count();
        if 1 + n_u + n_y != header.len() {
            return Err(Error::Parse(format!("unexpected columns in header {header:?}")));
        }
        let mut u = Vec::new();
        let mut y = Vec::new();
        for (row_idx, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Parse(format!("row {row_idx} has {} fields", rec.len())));
            }
            let t: usize = rec[0]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("row {row_idx}: bad time index: {e}")))?;
            if t != row_idx {
                return Err(Error::Parse(format!("row {row_idx}: time index {t} out of order")));
            }
            for k in 0..n_u + n_y {
                let v: f64 = rec[1 + k]
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("row {row_idx}: {e}")))?;
                if k < n_u { u.push(v) } else { y.push(v) }
            }
        }
        let n = u.len() / n_u.max(1);
        let inputs = DMatrix::from_vec(n_u, if n_u == 0 { 0 } else { n }, u);
        let outputs = DMatrix::from_vec(n_y, y.len().checked_div(n_y).unwrap_or(0), y);
        Self::new(inputs, outputs, kind)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Block-Hankel matrix of depth `L`: column `j` stacks samples `j..j+L-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelMatrix {
    pub matrix: DMatrix<f64>,
    pub depth: usize,
    pub signal_dim: usize,
}

impl HankelMatrix {
    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Rows belonging to block `i` (sample offset `i` within each column).
    pub fn block(&self, i: usize) -> DMatrix<f64> {
        self.matrix.rows(i * self.signal_dim, self.signal_dim).into_owned()
    }

    /// Blocks `start..start+count`.
    pub fn blocks(&self, start: usize, count: usize) -> DMatrix<f64> {
        self.matrix
            .rows(start * self.signal_dim, count * self.signal_dim)
            .into_owned()
    }
}

/// Builds `H_L(seq)`; needs `N >= L`.
pub fn hankel(seq: &DMatrix<f64>, depth: usize) -> Result<HankelMatrix> {
    let (n, len) = seq.shape();
    if depth == 0 {
        return Err(Error::InvalidArgument("Hankel depth must be positive".into()));
    }
    if len < depth {
        return Err(Error::DataTooShort { required: depth, got: len });
    }
    let cols = len - depth + 1;
    let mut m = DMatrix::zeros(n * depth, cols);
    for j in 0..cols {
        for i in 0..depth {
            m.view_mut((i * n, j), (n, 1)).copy_from(&seq.column(i + j));
        }
    }
    Ok(HankelMatrix { matrix: m, depth, signal_dim: n })
}

/// Stacks samples `t1..=t2` into one vector.
pub fn stacked_window(seq: &DMatrix<f64>, t1: usize, t2: usize) -> Result<DVector<f64>> {
    if t1 > t2 || t2 >= seq.ncols() {
        return Err(Error::InvalidArgument(format!(
            "window [{t1}, {t2}] outside a signal of length {}",
            seq.ncols()
        )));
    }
    let n = seq.nrows();
    let mut v = DVector::zeros(n * (t2 - t1 + 1));
    for t in t1..=t2 {
        v.rows_mut((t - t1) * n, n).copy_from(&seq.column(t));
    }
    Ok(v)
}

/// `rank H_order(u) == n_u * order`.
pub fn is_persistently_exciting(u: &DMatrix<f64>, order: usize) -> bool {
    match hankel(u, order) {
        Ok(h) => numerical_rank(&h.matrix) == u.nrows() * order,
        Err(_) => false,
    }
}

/// Minimum length for an input to be persistently exciting of `order`.
pub fn min_pe_length(n_u: usize, order: usize) -> usize {
    (n_u + 1) * order - 1
}

/// Draws i.i.d. uniform `[-1, 1]` inputs until the result is persistently
/// exciting of `order` (at most 10 draws).
pub fn generate_pe_input(n_u: usize, len: usize, order: usize, seed: u64) -> Result<DMatrix<f64>> {
    let required = min_pe_length(n_u, order);
    if len < required {
        return Err(Error::DataTooShort { required, got: len });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rank = 0;
    for _ in 0..10 {
        let u = DMatrix::from_fn(n_u, len, |_, _| rng.random_range(-1.0..=1.0));
        let h = hankel(&u, order)?;
        rank = numerical_rank(&h.matrix);
        if rank == n_u * order {
            return Ok(u);
        }
    }
    Err(Error::NotPersistentlyExciting { order, rank, required: n_u * order })
}

/// Simulates the plant from `x0` under `u` and records the outputs.
pub fn collect_offline_data(sys: &LtiSystem, u: &DMatrix<f64>, x0: &DVector<f64>, kind: DataKind) -> Result<TrajectoryData> {
    if u.nrows() != sys.input_dim() {
        return dim_err(format!("input has {} channels, plant has {}", u.nrows(), sys.input_dim()));
    }
    let (y, _) = sys.simulate(x0, u)?;
    TrajectoryData::new(u.clone(), y, kind)
}
