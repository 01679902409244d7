//! CSV and structured-text serialization: trajectories, gramians with
//! metadata sidecars, reduction bases, node traces, and dense-matrix model
//! files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::balance::ReductionBasis;
use crate::error::{Error, Result};
use crate::gramian::NodeTrace;
use crate::linalg::Gramian;
use crate::model::{BilinearModel, LtvModel};
use crate::ode::Trajectory;
use crate::scalar::{to_f64, Scalar};

/// 17 significant digits, round-trippable for f64.
pub fn format_value<T: Scalar>(v: T) -> String {
    format!("{:.16e}", to_f64(v))
}

/// `t,x1,...,xn[,y1,...,yq]`, one row per grid point.
pub fn write_trajectory_csv<T: Scalar>(path: &Path, traj: &Trajectory<T>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let n = traj.state_dim();
    let q = traj.output_dim();
    let mut header = String::from("t");
    for i in 1..=n {
        header.push_str(&format!(",x{i}"));
    }
    for i in 1..=q {
        header.push_str(&format!(",y{i}"));
    }
    writeln!(out, "{header}")?;
    for (k, &t) in traj.grid.iter().enumerate() {
        let mut row = format_value(t);
        for v in traj.states[k].iter() {
            row.push(',');
            row.push_str(&format_value(*v));
        }
        if let Some(ys) = &traj.outputs {
            for v in ys[k].iter() {
                row.push(',');
                row.push_str(&format_value(*v));
            }
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

/// Dense matrix CSV with a generic column header.
pub fn write_matrix_csv<T: Scalar>(path: &Path, m: &DMatrix<T>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (1..=m.ncols()).map(|j| format!("c{j}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_value(m[(i, j)])).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Gramian CSV plus a `.meta` sidecar with provenance.
pub fn write_gramian<T: Scalar>(base: &Path, gramian: &Gramian<T>) -> Result<()> {
    let csv_path = base.with_extension("csv");
    write_matrix_csv(&csv_path, &gramian.matrix)?;
    let meta_path = base.with_extension("meta");
    let mut out = BufWriter::new(File::create(meta_path)?);
    writeln!(out, "method = {}", gramian.method)?;
    writeln!(out, "dim = {}", gramian.dim())?;
    writeln!(out, "horizon = {}", format_value(gramian.horizon))?;
    writeln!(out, "quadrature = {}", gramian.quadrature)?;
    writeln!(out, "sets = {}", gramian.set_summary)?;
    writeln!(out, "clipped_mass = {}", format_value(gramian.clipped_mass))?;
    Ok(())
}

/// `V` and `W` side by side, preceded by a `hankel` line.
pub fn write_basis_csv<T: Scalar>(path: &Path, basis: &ReductionBasis<T>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let hankel: Vec<String> = basis.hankel.iter().map(|s| format_value(*s)).collect();
    writeln!(out, "hankel,{}", hankel.join(","))?;
    let k = basis.order();
    let mut header: Vec<String> = (1..=k).map(|j| format!("v{j}")).collect();
    header.extend((1..=k).map(|j| format!("w{j}")));
    writeln!(out, "{}", header.join(","))?;
    for i in 0..basis.full_dim() {
        let mut row: Vec<String> = (0..k).map(|j| format_value(basis.v[(i, j)])).collect();
        row.extend((0..k).map(|j| format_value(basis.w[(i, j)])));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Quadrature-node diagnostics: integrand trace and condition numbers.
pub fn write_node_trace_csv<T: Scalar>(path: &Path, trace: &NodeTrace<T>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let with_cond = !trace.condition.is_empty();
    if with_cond {
        writeln!(out, "t,integrand_trace,condition")?;
    } else {
        writeln!(out, "t,integrand_trace")?;
    }
    for j in 0..trace.times.len() {
        let mut row = format!(
            "{},{}",
            format_value(trace.times[j]),
            format_value(trace.integrand_trace[j])
        );
        if with_cond {
            row.push(',');
            row.push_str(&format_value(trace.condition[j]));
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

/// Structured-text (TOML) LTI model: dense row-major `A`, `B`, `C`.
#[derive(Debug, Serialize, Deserialize)]
pub struct LtiModelFile {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
}

impl LtiModelFile {
    pub fn from_model(model: &LtvModel<f64>) -> Self {
        let (n, p, q) = (model.state_dim(), model.input_dim(), model.output_dim());
        let a = model.a_at(0.0);
        let b = model.b_at(0.0);
        let c = model.c_at(0.0);
        LtiModelFile {
            n,
            p,
            q,
            a: row_major(&a),
            b: row_major(&b),
            c: row_major(&c),
        }
    }

    pub fn to_model(&self) -> Result<LtvModel<f64>> {
        if self.a.len() != self.n * self.n
            || self.b.len() != self.n * self.p
            || self.c.len() != self.q * self.n
        {
            return Err(Error::Config(
                "LTI model file has inconsistent matrix lengths".into(),
            ));
        }
        let a = DMatrix::from_row_slice(self.n, self.n, &self.a);
        let b = DMatrix::from_row_slice(self.n, self.p, &self.b);
        let c = DMatrix::from_row_slice(self.q, self.n, &self.c);
        LtvModel::constant(a, b, c)
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn save_lti_model(path: &Path, model: &LtvModel<f64>) -> Result<()> {
    let file = LtiModelFile::from_model(model);
    let text = toml::to_string(&file).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_lti_model(path: &Path) -> Result<LtvModel<f64>> {
    let text = std::fs::read_to_string(path)?;
    let file: LtiModelFile = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    file.to_model()
}

/// Structured-text (TOML) bilinear model with its nilpotency index.
#[derive(Debug, Serialize, Deserialize)]
pub struct BilinearModelFile {
    pub nb: usize,
    pub nilpotency_index: Option<usize>,
    #[serde(rename = "Ahat")]
    pub ahat: Vec<f64>,
    #[serde(rename = "Nhat")]
    pub nhat: Vec<f64>,
    #[serde(rename = "Bhat")]
    pub bhat: Vec<f64>,
    #[serde(rename = "Chat")]
    pub chat: Vec<f64>,
}

impl BilinearModelFile {
    pub fn from_model(model: &BilinearModel<f64>) -> Self {
        let nb = model.dim();
        BilinearModelFile {
            nb,
            nilpotency_index: model.nilpotency_index(nb),
            ahat: row_major(&model.ahat),
            nhat: row_major(&model.nhat),
            bhat: model.bhat.iter().copied().collect(),
            chat: model.chat.iter().copied().collect(),
        }
    }

    pub fn to_model(&self) -> Result<BilinearModel<f64>> {
        let nb = self.nb;
        if self.ahat.len() != nb * nb
            || self.nhat.len() != nb * nb
            || self.bhat.len() != nb
            || self.chat.len() != nb
        {
            return Err(Error::Config(
                "bilinear model file has inconsistent matrix lengths".into(),
            ));
        }
        BilinearModel::new(
            DMatrix::from_row_slice(nb, nb, &self.ahat),
            DMatrix::from_row_slice(nb, nb, &self.nhat),
            DVector::from_row_slice(&self.bhat),
            RowDVector::from_row_slice(&self.chat),
        )
    }
}

pub fn save_bilinear_model(path: &Path, model: &BilinearModel<f64>) -> Result<()> {
    let file = BilinearModelFile::from_model(model);
    let text = toml::to_string(&file).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_bilinear_model(path: &Path) -> Result<BilinearModel<f64>> {
    let text = std::fs::read_to_string(path)?;
    let file: BilinearModelFile =
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    file.to_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_stable_lti;
    use tempfile::tempdir;

    #[test]
    fn value_formatting_has_17_digits() {
        let s = format_value(std::f64::consts::PI);
        assert_eq!(s, "3.1415926535897931e0");
        let parsed: f64 = s.parse().unwrap();
        assert_eq!(parsed, std::f64::consts::PI);
    }

    #[test]
    fn trajectory_csv_layout() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let traj = Trajectory {
            grid: vec![0.0, 0.5, 1.0],
            states: vec![
                DVector::from_vec(vec![1.0, 2.0]),
                DVector::from_vec(vec![3.0, 4.0]),
                DVector::from_vec(vec![5.0, 6.0]),
            ],
            outputs: Some(vec![
                DVector::from_vec(vec![1.0]),
                DVector::from_vec(vec![3.0]),
                DVector::from_vec(vec![5.0]),
            ]),
        };
        write_trajectory_csv(&path, &traj).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x1,x2,y1");
        assert_eq!(text.lines().count(), 4);
        assert!(!text.contains('\r'));
    }

    #[test]
    fn lti_model_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.toml");
        let model = random_stable_lti::<f64>(4, 77).unwrap();
        save_lti_model(&path, &model).unwrap();
        let loaded = load_lti_model(&path).unwrap();
        assert_eq!(model.a_at(0.0), loaded.a_at(0.0));
        assert_eq!(model.b_at(0.0), loaded.b_at(0.0));
        assert_eq!(model.c_at(0.0), loaded.c_at(0.0));
    }

    #[test]
    fn bilinear_model_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bilinear.toml");
        let mut nhat = DMatrix::zeros(3, 3);
        nhat[(2, 0)] = 1.5;
        let model = BilinearModel::new(
            -DMatrix::<f64>::identity(3, 3),
            nhat,
            DVector::from_vec(vec![1.0, 0.0, 2.0]),
            RowDVector::from_vec(vec![0.5, 0.0, 0.0]),
        )
        .unwrap();
        save_bilinear_model(&path, &model).unwrap();
        let loaded = load_bilinear_model(&path).unwrap();
        assert_eq!(model.ahat, loaded.ahat);
        assert_eq!(model.nhat, loaded.nhat);
        assert_eq!(model.bhat, loaded.bhat);
        assert_eq!(model.chat, loaded.chat);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("nilpotency_index = 2"));
    }
}
