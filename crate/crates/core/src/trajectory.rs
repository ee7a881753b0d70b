//! Seeded trajectory simulation and the CSV + JSON sidecar exchange format.
//!
//! Random numbers come from `ChaCha8Rng::seed_from_u64(seed)`; Gaussian
//! variates are drawn with `rand_distr::StandardNormal` (ziggurat). Draw
//! order: the `n` components of `x₀`, then for every step `k` the `q`
//! components of `w_k` (skipped at `k = 0`) followed by the `m` components
//! of `v_k`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::SymmetricEigen;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_diagonal, mod_cholesky, Matrix, Vector};
use crate::models::{ModelSpec, ParametricModel};

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub theta_true: Vec<f64>,
    pub model: ModelSpec,
    pub states: Vec<Vector>,
    pub measurements: Vec<Vector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar { seed: self.seed, theta_true: self.theta_true.clone(), model: self.model.clone(), n: self.len() }
    }
}

/// A square root `S` with `S·Sᵀ = C` for a positive semidefinite `C`.
fn psd_sqrt(c: &Matrix) -> Matrix {
    if is_diagonal(c) {
        return Matrix::from_diagonal(&c.diagonal().map(|v| v.max(0.0).sqrt()));
    }
    if let Ok(f) = mod_cholesky(c) {
        let sqrt_d = f.d.as_vector().map(f64::sqrt);
        let mut s = f.u.into_matrix();
        for (j, mut col) in s.column_iter_mut().enumerate() {
            col *= sqrt_d[j];
        }
        return s;
    }
    let eig = SymmetricEigen::new((c + c.transpose()) * 0.5);
    let mut s = eig.eigenvectors;
    for (j, mut col) in s.column_iter_mut().enumerate() {
        col *= eig.eigenvalues[j].max(0.0).sqrt();
    }
    s
}

/// Seed of replication `index` under a root seed. Depends only on the pair,
/// so results do not change with scheduling.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(index);
    rng.next_u64()
}

fn normals(rng: &mut ChaCha8Rng, k: usize) -> Vector {
    Vector::from_fn(k, |_, _| rng.sample(StandardNormal))
}

pub fn simulate(model: &dyn ParametricModel, theta: &[f64], n_steps: usize, seed: u64) -> Result<Trajectory> {
    let ss = model.eval(theta)?;
    ss.validate()?;
    let d = ss.dims();
    let (sq, sr, sp) = (psd_sqrt(&ss.q), psd_sqrt(&ss.r), psd_sqrt(&ss.pi0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = &sp * normals(&mut rng, d.n);
    let mut states = Vec::with_capacity(n_steps);
    let mut measurements = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        if k > 0 {
            let w = &sq * normals(&mut rng, d.q);
            x = &ss.f * &x + &ss.g * w;
        }
        let v = &sr * normals(&mut rng, d.m);
        measurements.push(&ss.h * &x + v);
        states.push(x.clone());
    }
    Ok(Trajectory { seed, theta_true: theta.to_vec(), model: model.spec(), states, measurements })
}

/// JSON sidecar written next to a measurement CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub seed: u64,
    pub theta_true: Vec<f64>,
    pub model: ModelSpec,
    #[serde(rename = "N")]
    pub n: usize,
}

/// Writes `k,z1..zm` rows. Floats use Rust's shortest round-trip formatting.
pub fn write_measurements_csv<W: Write>(out: W, m: usize, measurements: &[Vector]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["k".to_string()];
    header.extend((1..=m).map(|i| format!("z{i}")));
    w.write_record(&header)?;
    for (k, z) in measurements.iter().enumerate() {
        if z.len() != m {
            return Err(Error::shape(format!("measurement {k} has length {}, expected {m}", z.len())));
        }
        let mut row = vec![k.to_string()];
        row.extend(z.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a measurement CSV written by [`write_measurements_csv`].
pub fn read_measurements_csv<R: Read>(input: R, m: usize) -> Result<Vec<Vector>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers()?.clone();
    let expected: Vec<String> = std::iter::once("k".to_string()).chain((1..=m).map(|i| format!("z{i}"))).collect();
    if header.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Input(format!(
            "header must be {:?}, found {:?}",
            expected,
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record.map_err(|e| Error::Input(format!("row {}: {e}", row + 1)))?;
        if record.len() != m + 1 {
            return Err(Error::Input(format!("row {}: expected {} columns, found {}", row + 1, m + 1, record.len())));
        }
        let k: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("row {}, column k: not an index: {:?}", row + 1, &record[0])))?;
        if k != row {
            return Err(Error::Input(format!("row {}, column k: expected {row}, found {k}", row + 1)));
        }
        let mut z = Vector::zeros(m);
        for i in 0..m {
            let cell = record[i + 1].trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Input(format!("row {}, column z{}: not a number: {cell:?}", row + 1, i + 1)))?;
            if !v.is_finite() {
                return Err(Error::Input(format!("row {}, column z{}: non-finite value", row + 1, i + 1)));
            }
            z[i] = v;
        }
        out.push(z);
    }
    Ok(out)
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn export(traj: &Trajectory, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let m = traj.model.build()?.dims().m;
    let csv_file = fs::File::create(dir.join(format!("{stem}.csv")))?;
    write_measurements_csv(csv_file, m, &traj.measurements)?;
    let json = serde_json::to_string_pretty(&traj.sidecar())?;
    fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
    Ok(())
}

/// Reads a measurement CSV and its sidecar (`<csv stem>.json`). States are
/// not part of the exchange format and come back empty.
pub fn import(csv_path: &Path) -> Result<Trajectory> {
    let sidecar_path = csv_path.with_extension("json");
    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(&sidecar_path)?)?;
    let m = sidecar.model.build()?.dims().m;
    let measurements = read_measurements_csv(fs::File::open(csv_path)?, m)?;
    if measurements.len() != sidecar.n {
        return Err(Error::Input(format!(
            "sidecar declares N = {} but the CSV has {} rows",
            sidecar.n,
            measurements.len()
        )));
    }
    Ok(Trajectory {
        seed: sidecar.seed,
        theta_true: sidecar.theta_true,
        model: sidecar.model,
        states: Vec::new(),
        measurements,
    })
}
