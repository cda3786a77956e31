//! Dataset container and the fixed on-disk formats.
//!
//! A dataset is a set of `n` spatial sites with `q` site-level covariates, a
//! set of simulations (each a `p`-vector of inputs, labeled train or test),
//! and the `n x H_total` response matrix. On disk this is three CSVs with
//! fixed schemas:
//!
//! - `sites.csv`:     `site_id,s1,s2,x1..xq`
//! - `inputs.csv`:    `sim_id,split,z1..zp`
//! - `responses.csv`: `sim_id,site_id,y` (sim-major order)
//!
//! Floats are written with the shortest round-trip representation, so a
//! write/read/write cycle is byte-identical. All file writes in the crate go
//! through [`atomic_write`]: a temp file in the target directory renamed into
//! place, so readers never observe partial files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Site coordinates, `[n, 2]`.
    pub sites: Tensor,
    /// Site-level covariates, `[n, q]`.
    pub covariates: Tensor,
    /// Simulation inputs, `[H_total, p]`.
    pub inputs: Tensor,
    /// Responses, `[n, H_total]`; column `h` is the field for simulation `h`.
    pub responses: Tensor,
    /// Simulation ids used for fitting.
    pub train_sims: Vec<usize>,
    /// Held-out simulation ids.
    pub test_sims: Vec<usize>,
}

impl Dataset {
    pub fn n_sites(&self) -> usize {
        self.sites.rows()
    }

    pub fn n_sims(&self) -> usize {
        self.inputs.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariates.cols()
    }

    /// Check internal consistency: shapes line up and the train/test ids
    /// partition `0..n_sims`.
    pub fn validate(&self) -> Result<()> {
        if self.sites.cols() != 2 {
            return Err(Error::Config(format!(
                "sites must have 2 coordinates, got {}",
                self.sites.cols()
            )));
        }
        if self.covariates.rows() != self.n_sites() {
            return Err(Error::Config("covariate rows != site count".into()));
        }
        if self.responses.rows() != self.n_sites() || self.responses.cols() != self.n_sims() {
            return Err(Error::Config(format!(
                "responses shaped {:?}, expected [{}, {}]",
                self.responses.shape(),
                self.n_sites(),
                self.n_sims()
            )));
        }
        let mut seen = vec![false; self.n_sims()];
        for &h in self.train_sims.iter().chain(&self.test_sims) {
            if h >= self.n_sims() || seen[h] {
                return Err(Error::Config(format!(
                    "train/test ids must partition simulations; id {h} repeated or out of range"
                )));
            }
            seen[h] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config(
                "train/test ids must cover every simulation".into(),
            ));
        }
        Ok(())
    }

    /// All (site, sim) pairs for the given simulation ids, sim-major.
    pub fn pairs_for(&self, sims: &[usize]) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(sims.len() * self.n_sites());
        for &h in sims {
            for i in 0..self.n_sites() {
                out.push((i, h));
            }
        }
        out
    }

    /// Assemble batch tensors (sites, inputs, covariates, responses) for a
    /// list of (site, sim) pairs.
    pub fn gather(&self, pairs: &[(usize, usize)]) -> GatheredBatch {
        let b = pairs.len();
        let (p, q) = (self.input_dim(), self.covariate_dim());
        let mut s = Tensor::zeros(vec![b, 2]);
        let mut z = Tensor::zeros(vec![b, p]);
        let mut x = Tensor::zeros(vec![b, q]);
        let mut y = Vec::with_capacity(b);
        for (row, &(i, h)) in pairs.iter().enumerate() {
            s.row_mut(row).copy_from_slice(self.sites.row(i));
            z.row_mut(row).copy_from_slice(self.inputs.row(h));
            x.row_mut(row).copy_from_slice(self.covariates.row(i));
            y.push(self.responses.at(i, h));
        }
        GatheredBatch { s, z, x, y }
    }

    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        let (n, q, p) = (self.n_sites(), self.covariate_dim(), self.input_dim());
        let mut sites = String::from("site_id,s1,s2");
        for j in 1..=q {
            let _ = write!(sites, ",x{j}");
        }
        sites.push('\n');
        for i in 0..n {
            let _ = write!(sites, "{i},{},{}", self.sites.at(i, 0), self.sites.at(i, 1));
            for j in 0..q {
                let _ = write!(sites, ",{}", self.covariates.at(i, j));
            }
            sites.push('\n');
        }
        atomic_write(&dir.join("sites.csv"), sites.as_bytes())?;

        let mut inputs = String::from("sim_id,split");
        for j in 1..=p {
            let _ = write!(inputs, ",z{j}");
        }
        inputs.push('\n');
        let is_train: Vec<bool> = {
            let mut v = vec![false; self.n_sims()];
            for &h in &self.train_sims {
                v[h] = true;
            }
            v
        };
        for h in 0..self.n_sims() {
            let _ = write!(inputs, "{h},{}", if is_train[h] { "train" } else { "test" });
            for j in 0..p {
                let _ = write!(inputs, ",{}", self.inputs.at(h, j));
            }
            inputs.push('\n');
        }
        atomic_write(&dir.join("inputs.csv"), inputs.as_bytes())?;

        let mut resp = String::from("sim_id,site_id,y\n");
        for h in 0..self.n_sims() {
            for i in 0..n {
                let _ = write!(resp, "{h},{i},{}\n", self.responses.at(i, h));
            }
        }
        atomic_write(&dir.join("responses.csv"), resp.as_bytes())?;
        Ok(())
    }

    pub fn read_csv(dir: &Path) -> Result<Dataset> {
        let sites_rows = read_csv_rows(&dir.join("sites.csv"))?;
        let header = sites_rows
            .first()
            .ok_or_else(|| Error::Format("sites.csv is empty".into()))?;
        if header.len() < 3 || header[0] != "site_id" {
            return Err(Error::Format("sites.csv: expected header site_id,s1,s2,x..".into()));
        }
        let q = header.len() - 3;
        let n = sites_rows.len() - 1;
        let mut sites = Tensor::zeros(vec![n, 2]);
        let mut covariates = Tensor::zeros(vec![n, q]);
        for (line, row) in sites_rows.iter().skip(1).enumerate() {
            if row.len() != 3 + q {
                return Err(Error::Format(format!(
                    "sites.csv line {}: expected {} fields, got {}",
                    line + 2,
                    3 + q,
                    row.len()
                )));
            }
            let id: usize = parse_field(&row[0], "sites.csv", line + 2)?;
            if id != line {
                return Err(Error::Format(format!(
                    "sites.csv line {}: site ids must be dense and ordered",
                    line + 2
                )));
            }
            sites.set(line, 0, parse_field(&row[1], "sites.csv", line + 2)?);
            sites.set(line, 1, parse_field(&row[2], "sites.csv", line + 2)?);
            for j in 0..q {
                covariates.set(line, j, parse_field(&row[3 + j], "sites.csv", line + 2)?);
            }
        }

        let input_rows = read_csv_rows(&dir.join("inputs.csv"))?;
        let header = input_rows
            .first()
            .ok_or_else(|| Error::Format("inputs.csv is empty".into()))?;
        if header.len() < 3 || header[0] != "sim_id" || header[1] != "split" {
            return Err(Error::Format(
                "inputs.csv: expected header sim_id,split,z..".into(),
            ));
        }
        let p = header.len() - 2;
        let h_total = input_rows.len() - 1;
        let mut inputs = Tensor::zeros(vec![h_total, p]);
        let (mut train_sims, mut test_sims) = (Vec::new(), Vec::new());
        for (line, row) in input_rows.iter().skip(1).enumerate() {
            if row.len() != 2 + p {
                return Err(Error::Format(format!(
                    "inputs.csv line {}: expected {} fields, got {}",
                    line + 2,
                    2 + p,
                    row.len()
                )));
            }
            let id: usize = parse_field(&row[0], "inputs.csv", line + 2)?;
            if id != line {
                return Err(Error::Format(format!(
                    "inputs.csv line {}: sim ids must be dense and ordered",
                    line + 2
                )));
            }
            match row[1].as_str() {
                "train" => train_sims.push(id),
                "test" => test_sims.push(id),
                other => {
                    return Err(Error::Format(format!(
                        "inputs.csv line {}: split must be train or test, got {other:?}",
                        line + 2
                    )))
                }
            }
            for j in 0..p {
                inputs.set(line, j, parse_field(&row[2 + j], "inputs.csv", line + 2)?);
            }
        }

        let resp_rows = read_csv_rows(&dir.join("responses.csv"))?;
        let header = resp_rows
            .first()
            .ok_or_else(|| Error::Format("responses.csv is empty".into()))?;
        if header != &["sim_id", "site_id", "y"] {
            return Err(Error::Format(
                "responses.csv: expected header sim_id,site_id,y".into(),
            ));
        }
        if resp_rows.len() - 1 != n * h_total {
            return Err(Error::Format(format!(
                "responses.csv: expected {} rows, got {}",
                n * h_total,
                resp_rows.len() - 1
            )));
        }
        let mut responses = Tensor::zeros(vec![n, h_total]);
        for (line, row) in resp_rows.iter().skip(1).enumerate() {
            if row.len() != 3 {
                return Err(Error::Format(format!(
                    "responses.csv line {}: expected 3 fields",
                    line + 2
                )));
            }
            let h: usize = parse_field(&row[0], "responses.csv", line + 2)?;
            let i: usize = parse_field(&row[1], "responses.csv", line + 2)?;
            if h >= h_total || i >= n {
                return Err(Error::Format(format!(
                    "responses.csv line {}: ids out of range",
                    line + 2
                )));
            }
            responses.set(i, h, parse_field(&row[2], "responses.csv", line + 2)?);
        }

        let data = Dataset {
            sites,
            covariates,
            inputs,
            responses,
            train_sims,
            test_sims,
        };
        data.validate()?;
        Ok(data)
    }
}

/// Batch tensors gathered from a dataset (one row per requested pair).
pub struct GatheredBatch {
    pub s: Tensor,
    pub z: Tensor,
    pub x: Tensor,
    pub y: Vec<f64>,
}

/// One summarized prediction for a (simulation, site) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub sim_id: usize,
    pub site_id: usize,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut out = String::from("sim_id,site_id,mean,sd,lower,upper\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.sim_id, r.site_id, r.mean, r.sd, r.lower, r.upper
        );
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let rows = read_csv_rows(path)?;
    let header = rows
        .first()
        .ok_or_else(|| Error::Format("predictions file is empty".into()))?;
    if header != &["sim_id", "site_id", "mean", "sd", "lower", "upper"] {
        return Err(Error::Format(
            "predictions: expected header sim_id,site_id,mean,sd,lower,upper".into(),
        ));
    }
    let mut out = Vec::with_capacity(rows.len() - 1);
    for (line, row) in rows.iter().skip(1).enumerate() {
        if row.len() != 6 {
            return Err(Error::Format(format!(
                "predictions line {}: expected 6 fields",
                line + 2
            )));
        }
        out.push(PredictionRow {
            sim_id: parse_field(&row[0], "predictions", line + 2)?,
            site_id: parse_field(&row[1], "predictions", line + 2)?,
            mean: parse_field(&row[2], "predictions", line + 2)?,
            sd: parse_field(&row[3], "predictions", line + 2)?,
            lower: parse_field(&row[4], "predictions", line + 2)?,
            upper: parse_field(&row[5], "predictions", line + 2)?,
        });
    }
    Ok(out)
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|f| f.to_string()).collect())
        .collect())
}

fn parse_field<T: std::str::FromStr>(field: &str, file: &str, line: usize) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Format(format!("{file} line {line}: cannot parse {field:?}")))
}

/// Write via a temp file in the same directory plus rename, so the target
/// path never holds a partially written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = std::path::PathBuf::from(tmp);
    fs::write(&tmp_path, bytes)?;
    fs::rename(&tmp_path, path)?;
    Ok(())
}
