//! On-disk formats: plain CSV matrices written at full precision with JSON
//! sidecars, dataset directories, trajectory tables and step checkpoints.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::decimation::{DecimationTrajectory, StepResult};
use crate::error::{Error, Result};
use crate::model::{CouplingMatrix, SampleSet, TransmissionSpec};

pub const DATASET_CSV: &str = "dataset.csv";
pub const DATASET_META: &str = "dataset.json";
pub const TRANSMISSION_STEM: &str = "transmission";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Sidecar describing a matrix file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub n: usize,
    pub w: usize,
    pub s: f64,
    pub sigma: f64,
    pub seed: u64,
    pub shifted: bool,
    /// File name of the mask, relative to the matrix file.
    pub mask_path: Option<String>,
}

/// Sidecar describing a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub w: usize,
    pub s: f64,
    pub sigma_noise: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    pub shifted: bool,
    pub channel_means: Vec<f64>,
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

/// Sidecar path: `x.csv` becomes `x.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
}

fn write_rows<I, R>(path: &Path, rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut out = BufWriter::new(fs::File::create(path)?);
    for row in rows {
        let cells: Vec<String> = row.into_iter().collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn read_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|c| c.trim().to_string()).collect())
        .collect())
}

fn to_array(path: &Path, rows: Vec<Vec<f64>>) -> Result<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some((r, _)) = rows.iter().enumerate().find(|(_, row)| row.len() != ncols) {
        return Err(parse_err(path, format!("row {r} has a different column count")));
    }
    let nrows = rows.len();
    Array2::from_shape_vec((nrows, ncols), rows.into_iter().flatten().collect())
        .map_err(|e| parse_err(path, e.to_string()))
}

/// Writes one matrix row per line with 17 significant digits.
pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    write_rows(path, m.rows().into_iter().map(|r| r.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>()))
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let rows = read_rows(path)?
        .into_iter()
        .enumerate()
        .map(|(r, row)| {
            row.iter()
                .map(|c| c.parse::<f64>().map_err(|e| parse_err(path, format!("row {r}: {c:?}: {e}"))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    to_array(path, rows)
}

pub fn write_mask(path: &Path, mask: &Array2<bool>) -> Result<()> {
    write_rows(
        path,
        mask.rows()
            .into_iter()
            .map(|r| r.iter().map(|&b| if b { "1" } else { "0" }.to_string()).collect::<Vec<_>>()),
    )
}

pub fn read_mask(path: &Path) -> Result<Array2<bool>> {
    let values = read_matrix(path)?;
    if let Some(bad) = values.iter().find(|&&x| x != 0.0 && x != 1.0) {
        return Err(parse_err(path, format!("mask entry {bad} is not 0 or 1")));
    }
    Ok(values.mapv(|x| x == 1.0))
}

/// Writes `stem.csv`, `stem.mask.csv` and the `stem.json` sidecar.
pub fn write_model(stem: &Path, m: &CouplingMatrix, mut meta: MatrixMeta) -> Result<()> {
    let csv = stem.with_extension("csv");
    let mask = stem.with_extension("mask.csv");
    write_matrix(&csv, &m.entries().to_owned())?;
    write_mask(&mask, &m.mask().to_owned())?;
    meta.n = m.n();
    meta.mask_path = mask.file_name().map(|f| f.to_string_lossy().into_owned());
    write_json(&sidecar_path(&csv), &meta)
}

/// Reads a model written by [`write_model`].
pub fn read_model(stem: &Path) -> Result<(CouplingMatrix, MatrixMeta)> {
    let csv = stem.with_extension("csv");
    let meta: MatrixMeta = read_json(&sidecar_path(&csv))?;
    let mask_name = meta
        .mask_path
        .clone()
        .ok_or_else(|| parse_err(&csv, "sidecar has no mask_path"))?;
    let mask_path = csv.parent().unwrap_or(Path::new(".")).join(mask_name);
    let m = CouplingMatrix::from_parts(read_matrix(&csv)?, read_mask(&mask_path)?)?;
    if m.n() != meta.n {
        return Err(parse_err(&csv, format!("sidecar says n = {}, file has {}", meta.n, m.n())));
    }
    Ok((m, meta))
}

/// Writes the ground-truth channel as `stem.csv` plus sidecar.
pub fn write_transmission(stem: &Path, spec: &TransmissionSpec) -> Result<()> {
    let csv = stem.with_extension("csv");
    write_matrix(&csv, &spec.t)?;
    let meta = MatrixMeta {
        n: 2 * spec.t.nrows(),
        w: spec.w,
        s: spec.s,
        sigma: spec.sigma,
        seed: spec.seed,
        shifted: false,
        mask_path: None,
    };
    write_json(&sidecar_path(&csv), &meta)
}

pub fn read_transmission(stem: &Path) -> Result<TransmissionSpec> {
    let csv = stem.with_extension("csv");
    let meta: MatrixMeta = read_json(&sidecar_path(&csv))?;
    let spec = TransmissionSpec {
        w: meta.w,
        s: meta.s,
        t: read_matrix(&csv)?,
        sigma: meta.sigma,
        seed: meta.seed,
    };
    spec.validate()?;
    Ok(spec)
}

/// Writes `dataset.csv` and `dataset.json` into `dir`.
pub fn write_dataset(dir: &Path, ds: &SampleSet, w: usize, s: f64, sigma_noise: f64, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix(&dir.join(DATASET_CSV), &ds.data().to_owned())?;
    let meta = DatasetMeta {
        w,
        s,
        sigma_noise,
        m: ds.len(),
        seed,
        shifted: ds.is_shifted(),
        channel_means: ds.channel_means().to_vec(),
    };
    write_json(&dir.join(DATASET_META), &meta)
}

pub fn read_dataset(dir: &Path) -> Result<(SampleSet, DatasetMeta)> {
    let csv = dir.join(DATASET_CSV);
    let meta: DatasetMeta = read_json(&dir.join(DATASET_META))?;
    let data = read_matrix(&csv)?;
    if data.nrows() != meta.m || data.ncols() != 2 * meta.w * meta.w {
        return Err(parse_err(
            &csv,
            format!("shape {:?} disagrees with M = {}, w = {}", data.dim(), meta.m, meta.w),
        ));
    }
    let ds = SampleSet::from_parts(data, Array1::from(meta.channel_means.clone()), meta.shifted)?;
    Ok((ds, meta))
}

/// `step,K,k,L,TIC,AIC,AICc,BIC`, one line per step.
pub fn write_trajectory(path: &Path, traj: &DecimationTrajectory) -> Result<()> {
    let header = ["step", "K", "k", "L", "TIC", "AIC", "AICc", "BIC"].map(String::from);
    let rows = traj.records.iter().map(|r| {
        vec![
            r.step.to_string(),
            r.k_active.to_string(),
            format!("{:.16e}", r.k_frac),
            format!("{:.16e}", r.l_value),
            format!("{:.16e}", r.tic),
            format!("{:.16e}", r.aic),
            format!("{:.16e}", r.aicc),
            format!("{:.16e}", r.bic),
        ]
    });
    write_rows(path, std::iter::once(header.to_vec()).chain(rows))
}

/// Per-step state saved during a decimation run.
///
/// Step `k` lives in `dir/step_kkkk.{csv,mask.csv,json}`, where the sidecar
/// holds the [`StepResult`]. `dir/config.json` records the settings the
/// steps were computed under so that a resume with different settings is
/// refused.
pub struct Checkpoint {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct StepFile {
    result: StepResult,
    model: MatrixMeta,
}

impl Checkpoint {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn stem(&self, step: usize) -> PathBuf {
        self.dir.join(format!("step_{step:04}"))
    }

    /// Prepares the directory for a run keyed by `fingerprint`. Returns the
    /// completed steps when the directory already holds a run with the same
    /// key, and clears it otherwise.
    pub fn open<T: Serialize>(&self, fingerprint: &T) -> Result<Vec<(StepResult, CouplingMatrix)>> {
        let key = serde_json::to_value(fingerprint)?;
        let config = self.dir.join("config.json");
        if config.exists() {
            let saved: serde_json::Value = read_json(&config)?;
            if saved == key {
                return self.load();
            }
            log::warn!("checkpoint in {} belongs to a different configuration; starting over", self.dir.display());
            fs::remove_dir_all(&self.dir)?;
        }
        fs::create_dir_all(&self.dir)?;
        write_json(&config, &key)?;
        Ok(Vec::new())
    }

    /// Completed steps in order, stopping at the first gap.
    pub fn load(&self) -> Result<Vec<(StepResult, CouplingMatrix)>> {
        let mut steps = Vec::new();
        loop {
            let stem = self.stem(steps.len());
            let json = stem.with_extension("json");
            if !json.exists() {
                break;
            }
            let file: StepFile = read_json(&json)?;
            let mask = self.dir.join(file.model.mask_path.as_deref().unwrap_or_default());
            let m = CouplingMatrix::from_parts(read_matrix(&stem.with_extension("csv"))?, read_mask(&mask)?)?;
            steps.push((file.result, m));
        }
        Ok(steps)
    }

    /// Saves one completed step; the sidecar is written last so a partially
    /// written step is never picked up.
    pub fn save(&self, res: &StepResult, m: &CouplingMatrix, meta: &MatrixMeta) -> Result<()> {
        let stem = self.stem(res.step);
        let csv = stem.with_extension("csv");
        let mask = stem.with_extension("mask.csv");
        write_matrix(&csv, &m.entries().to_owned())?;
        write_mask(&mask, &m.mask().to_owned())?;
        let mut model = meta.clone();
        model.n = m.n();
        model.mask_path = mask.file_name().map(|f| f.to_string_lossy().into_owned());
        let file = StepFile {
            result: res.clone(),
            model,
        };
        let tmp = stem.with_extension("json.tmp");
        write_json(&tmp, &file)?;
        fs::rename(tmp, stem.with_extension("json"))?;
        Ok(())
    }
}
