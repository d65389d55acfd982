//! Sampled-signal containers, CSV ingestion and window stacking.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Uniformly sampled (u, y) segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    t0: f64,
    dt: f64,
    u: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
}

/// Uniformly sampled latent or residual sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentWindow {
    t0: f64,
    dt: f64,
    samples: Vec<DVector<f64>>,
}

/// Window stacked into one vector, each block scaled by 1/sqrt(M).
#[derive(Debug, Clone, PartialEq)]
pub struct StackedVector {
    pub entries: DVector<f64>,
}

fn check_samples(samples: &[DVector<f64>], what: &str) -> Result<usize> {
    let dim = samples.first().map(|s| s.len()).unwrap_or(0);
    for (k, s) in samples.iter().enumerate() {
        if s.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "{what} sample {k} has length {} (expected {dim})",
                s.len()
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("{what} sample {k}")));
        }
    }
    Ok(dim)
}

fn check_grid(t0: f64, dt: f64) -> Result<()> {
    if !t0.is_finite() || !dt.is_finite() {
        return Err(Error::NonFiniteValue("time grid".into()));
    }
    if dt <= 0.0 {
        return Err(Error::InvalidWindow(format!("dt = {dt} must be positive")));
    }
    Ok(())
}

impl SignalWindow {
    pub fn new(t0: f64, dt: f64, u: Vec<DVector<f64>>, y: Vec<DVector<f64>>) -> Result<Self> {
        check_grid(t0, dt)?;
        if u.len() != y.len() {
            return Err(Error::LengthMismatch { left: u.len(), right: y.len() });
        }
        if u.is_empty() {
            return Err(Error::EmptyWindow);
        }
        check_samples(&u, "u")?;
        check_samples(&y, "y")?;
        Ok(Self { t0, dt, u, y })
    }

    /// Build from stacked z = (u; y) samples with p input channels.
    pub fn from_z(t0: f64, dt: f64, p: usize, z: &[DVector<f64>]) -> Result<Self> {
        let mut u = Vec::with_capacity(z.len());
        let mut y = Vec::with_capacity(z.len());
        for s in z {
            if s.len() < p {
                return Err(Error::DimensionMismatch(format!("z sample shorter than p = {p}")));
            }
            u.push(s.rows(0, p).into_owned());
            y.push(s.rows(p, s.len() - p).into_owned());
        }
        Self::new(t0, dt, u, y)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn len(&self) -> usize {
        self.u.len()
    }
    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
    pub fn p(&self) -> usize {
        self.u[0].len()
    }
    pub fn m(&self) -> usize {
        self.y[0].len()
    }
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }
    pub fn u(&self) -> &[DVector<f64>] {
        &self.u
    }
    pub fn y(&self) -> &[DVector<f64>] {
        &self.y
    }

    /// Sample k of z = (u; y).
    pub fn z(&self, k: usize) -> DVector<f64> {
        let (p, m) = (self.p(), self.m());
        let mut z = DVector::zeros(p + m);
        z.rows_mut(0, p).copy_from(&self.u[k]);
        z.rows_mut(p, m).copy_from(&self.y[k]);
        z
    }

    pub fn z_samples(&self) -> Vec<DVector<f64>> {
        (0..self.len()).map(|k| self.z(k)).collect()
    }

    /// Sub-window of `len` samples starting at sample `start`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyWindow);
        }
        if start + len > self.len() {
            return Err(Error::GridMismatch(format!(
                "slice {start}..{} exceeds window of {} samples",
                start + len,
                self.len()
            )));
        }
        Ok(Self {
            t0: self.time(start),
            dt: self.dt,
            u: self.u[start..start + len].to_vec(),
            y: self.y[start..start + len].to_vec(),
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.p()).map(|i| format!("u_{i}")));
        header.extend((1..=self.m()).map(|i| format!("y_{i}")));
        write_series_csv(path, &header, self.t0, self.dt, &self.z_samples())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::MalformedHeader(e.to_string()))?
            .iter()
            .map(|s| s.to_string())
            .collect();
        let (p, m) = parse_header(&header)?;

        let mut times = Vec::new();
        let mut z = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::MalformedHeader(format!("row {}: {e}", row + 1)))?;
            if rec.len() != 1 + p + m {
                return Err(Error::DimensionMismatch(format!("row {} has {} fields", row + 1, rec.len())));
            }
            let mut vals = Vec::with_capacity(rec.len());
            for (col, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::NonFiniteValue(format!("row {} column {}: {field:?}", row + 1, header[col])))?;
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue(format!("row {} column {}", row + 1, header[col])));
                }
                vals.push(v);
            }
            times.push(vals[0]);
            z.push(DVector::from_column_slice(&vals[1..]));
        }
        if times.is_empty() {
            return Err(Error::EmptyWindow);
        }
        let dt = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
        if dt <= 0.0 {
            return Err(Error::NonUniformGrid { row: 1, step: dt, expected: dt });
        }
        for i in 1..times.len() {
            let step = times[i] - times[i - 1];
            if (step - dt).abs() > 1e-9 * dt {
                return Err(Error::NonUniformGrid { row: i, step, expected: dt });
            }
        }
        Self::from_z(times[0], dt, p, &z)
    }
}

fn parse_header(header: &[String]) -> Result<(usize, usize)> {
    if header.first().map(String::as_str) != Some("t") {
        return Err(Error::MalformedHeader("first column must be `t`".into()));
    }
    let mut p = 0;
    let mut m = 0;
    for name in &header[1..] {
        if m == 0 && *name == format!("u_{}", p + 1) {
            p += 1;
        } else if *name == format!("y_{}", m + 1) {
            m += 1;
        } else {
            return Err(Error::MalformedHeader(format!("unexpected column `{name}`")));
        }
    }
    if p == 0 || m == 0 {
        return Err(Error::MalformedHeader("need at least one u_ and one y_ column".into()));
    }
    Ok((p, m))
}

impl LatentWindow {
    pub fn new(t0: f64, dt: f64, samples: Vec<DVector<f64>>) -> Result<Self> {
        check_grid(t0, dt)?;
        if samples.is_empty() {
            return Err(Error::EmptyWindow);
        }
        check_samples(&samples, "latent")?;
        Ok(Self { t0, dt, samples })
    }

    /// Samples of f(t) on the grid t0 + k dt, k < len.
    pub fn from_fn(t0: f64, dt: f64, len: usize, f: impl Fn(f64) -> DVector<f64>) -> Result<Self> {
        Self::new(t0, dt, (0..len).map(|k| f(t0 + k as f64 * dt)).collect())
    }

    pub fn zeros(t0: f64, dt: f64, len: usize, dim: usize) -> Result<Self> {
        Self::new(t0, dt, vec![DVector::zeros(dim); len])
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }
    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }
}

/// Stack a window: blocks z(k)/sqrt(M).
pub fn stack(window: &SignalWindow) -> StackedVector {
    stack_samples(&window.z_samples())
}

/// Stack an arbitrary aligned sample sequence.
pub fn stack_samples(samples: &[DVector<f64>]) -> StackedVector {
    let mlen = samples.len();
    if mlen == 0 {
        return StackedVector { entries: DVector::zeros(0) };
    }
    let d = samples[0].len();
    let w = 1.0 / (mlen as f64).sqrt();
    let mut entries = DVector::zeros(mlen * d);
    for (k, s) in samples.iter().enumerate() {
        entries.rows_mut(k * d, d).copy_from(&(s * w));
    }
    StackedVector { entries }
}

pub fn half_energy(v: &StackedVector) -> f64 {
    0.5 * v.entries.norm_squared()
}

/// Write `t,<names...>` rows for a uniformly sampled vector sequence.
pub fn write_series_csv(path: &Path, header: &[String], t0: f64, dt: f64, samples: &[DVector<f64>]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "{}", header.join(","))?;
    for (k, s) in samples.iter().enumerate() {
        write!(buf, "{:e}", t0 + k as f64 * dt)?;
        for v in s.iter() {
            write!(buf, ",{v:e}")?;
        }
        writeln!(buf)?;
    }
    write_atomic(path, &buf)
}

/// Write a file via a temporary sibling and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("invalid output path {}", path.display())))?
        .to_string_lossy()
        .into_owned();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn parses_three_rows() {
        let w = SignalWindow::parse_csv("t,u_1,y_1\n0,1,0\n0.1,1,0\n0.2,1,0\n").unwrap();
        assert_eq!(w.len(), 3);
        assert!((w.dt() - 0.1).abs() < 1e-15);
        assert_eq!((w.p(), w.m()), (1, 1));
    }

    #[test]
    fn rejects_nonuniform_grid() {
        let e = SignalWindow::parse_csv("t,u_1,y_1\n0,1,0\n0.1,1,0\n0.25,1,0\n").unwrap_err();
        assert!(matches!(e, Error::NonUniformGrid { .. }));
    }

    #[test]
    fn rejects_nan() {
        let e = SignalWindow::parse_csv("t,u_1,y_1\n0,NaN,0\n0.1,1,0\n").unwrap_err();
        assert!(matches!(e, Error::NonFiniteValue(_)));
    }

    #[test]
    fn rejects_bad_header() {
        for text in ["x,u_1,y_1\n0,0,0\n", "t,y_1,u_1\n0,0,0\n", "t,u_1\n0,0\n", "t,u_2,y_1\n0,0,0\n"] {
            assert!(matches!(SignalWindow::parse_csv(text), Err(Error::MalformedHeader(_))), "{text}");
        }
    }

    #[test]
    fn stack_examples() {
        let w = SignalWindow::new(0.0, 1.0, vec![dv(&[2.0])], vec![dv(&[0.0])]).unwrap();
        assert_eq!(stack(&w).entries.len(), 2);
        assert!((stack(&w).entries.norm_squared() - 4.0).abs() < 1e-15);

        let w = SignalWindow::new(0.0, 1.0, vec![dv(&[1.0]); 4], vec![dv(&[0.0]); 4]).unwrap();
        assert!((stack(&w).entries.norm_squared() - 1.0).abs() < 1e-15);

        let w = SignalWindow::new(0.0, 1.0, vec![dv(&[0.0]); 3], vec![dv(&[0.0]); 3]).unwrap();
        assert_eq!(stack(&w).entries.norm(), 0.0);
    }

    #[test]
    fn half_energy_examples() {
        let h = |v: &[f64]| half_energy(&StackedVector { entries: dv(v) });
        assert_eq!(h(&[2.0, 0.0]), 2.0);
        assert_eq!(h(&[0.0, 0.0]), 0.0);
        assert_eq!(h(&[1.0, 1.0, 1.0, 1.0]), 2.0);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        let u: Vec<_> = (0..5).map(|k| dv(&[(k as f64 * 0.37).sin(), 1.0 / 3.0])).collect();
        let y: Vec<_> = (0..5).map(|k| dv(&[(k as f64).exp() * 1e-7])).collect();
        let w = SignalWindow::new(0.5, 0.01, u, y).unwrap();
        w.save_csv(&path).unwrap();
        let r = SignalWindow::load_csv(&path).unwrap();
        assert_eq!((r.p(), r.m(), r.len()), (2, 1, 5));
        assert!((r.dt() - 0.01).abs() < 1e-12 && (r.t0() - 0.5).abs() < 1e-12);
        for k in 0..5 {
            assert!((r.z(k) - w.z(k)).amax() < 1e-12);
        }
    }

    #[test]
    fn window_invariants() {
        assert!(matches!(SignalWindow::new(0.0, 1.0, vec![], vec![]), Err(Error::EmptyWindow)));
        assert!(SignalWindow::new(0.0, 0.0, vec![dv(&[1.0])], vec![dv(&[1.0])]).is_err());
        assert!(SignalWindow::new(0.0, 1.0, vec![dv(&[1.0])], vec![]).is_err());
    }
}
