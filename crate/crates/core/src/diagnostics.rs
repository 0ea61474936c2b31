//! Error reports, spectra, timestep sweeps and CSV exports.

use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dg::Mesh;
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// Formats with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Per-time errors of a prediction against a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub times: Vec<f64>,
    pub l2: Vec<f64>,
    /// `l2 / ||ref||`, or `l2` itself where the reference vanishes.
    pub relative: Vec<f64>,
    pub max_abs: Vec<f64>,
}

impl ErrorReport {
    pub fn max_l2(&self) -> f64 {
        self.l2.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_relative(&self) -> f64 {
        self.relative.iter().copied().fold(0.0, f64::max)
    }

    /// Index of the sample closest to `t`.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "l2_error", "relative_error", "max_abs_error"])?;
        for i in 0..self.times.len() {
            w.write_record([
                fmt17(self.times[i]),
                fmt17(self.l2[i]),
                fmt17(self.relative[i]),
                fmt17(self.max_abs[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn is_multiple(coarse: f64, fine: f64) -> Option<usize> {
    let r = coarse / fine;
    let n = r.round();
    (n >= 1.0 && (r - n).abs() <= 1e-9 * r).then_some(n as usize)
}

/// Shared sample pairs `(i_a, i_b)` of two uniformly sampled series; one
/// sampling interval must be an integer multiple of the other.
pub fn aligned_indices(a: &Trajectory, b: &Trajectory) -> Result<Vec<(usize, usize)>> {
    let scale = a.dt.max(b.dt);
    if (a.t0 - b.t0).abs() > 1e-9 * scale {
        return Err(Error::TimeGrid(format!("start times differ: {} vs {}", a.t0, b.t0)));
    }
    let (sa, sb) = if let Some(s) = is_multiple(a.dt, b.dt) {
        (1, s)
    } else if let Some(s) = is_multiple(b.dt, a.dt) {
        (s, 1)
    } else {
        return Err(Error::TimeGrid(format!(
            "sampling intervals {} and {} are not integer multiples",
            a.dt, b.dt
        )));
    };
    Ok((0..)
        .map(|n| (n * sa, n * sb))
        .take_while(|&(i, j)| i < a.len() && j < b.len())
        .collect())
}

/// Errors of `pred` against `reference` at every shared time, in the DG norm
/// of `mesh` or, without a mesh, the Euclidean norm.
pub fn compare_fields(pred: &Trajectory, reference: &Trajectory, mesh: Option<&Mesh>) -> Result<ErrorReport> {
    if pred.dim() != reference.dim() {
        return Err(Error::Dimension {
            expected: reference.dim(),
            got: pred.dim(),
        });
    }
    if let Some(m) = mesh {
        m.check_len(reference.state(0))?;
    }
    let norm = |v: &[f64]| match mesh {
        Some(m) => m.norm(v),
        None => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
    };
    let pairs = aligned_indices(pred, reference)?;
    let mut rep = ErrorReport {
        times: Vec::with_capacity(pairs.len()),
        l2: Vec::with_capacity(pairs.len()),
        relative: Vec::with_capacity(pairs.len()),
        max_abs: Vec::with_capacity(pairs.len()),
    };
    for (i, j) in pairs {
        let (p, r) = (pred.state(i), reference.state(j));
        let diff: Vec<f64> = p.iter().zip(r).map(|(a, b)| a - b).collect();
        let e = norm(&diff);
        let rn = norm(r);
        rep.times.push(reference.time(j));
        rep.l2.push(e);
        rep.relative.push(if rn > 0.0 { e / rn } else { e });
        rep.max_abs.push(diff.iter().fold(0.0, |m, d| m.max(d.abs())));
    }
    Ok(rep)
}

/// Energy per wavenumber `k = 1..N/2-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub k: Vec<usize>,
    pub e: Vec<f64>,
}

impl Spectrum {
    /// Wavenumber of maximal energy.
    pub fn peak(&self) -> usize {
        let i = self
            .e
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.k.get(i).copied().unwrap_or(0)
    }

    pub fn total(&self) -> f64 {
        self.e.iter().sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "E"])?;
        for (k, e) in self.k.iter().zip(&self.e) {
            w.write_record([k.to_string(), fmt17(*e)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Spectrum of `N` uniform samples: `E(k) = E_hat(k) + E_hat(-k)` with
/// `E_hat(k) = |F_k|^2 / (2 N^2)`, so `sin(x)` carries `E(1) = 1/4` and
/// `(1/2N) sum u^2 = sum_k E(k)` for zero-mean signals.
pub fn spectrum_of_samples(u: &[f64]) -> Result<Spectrum> {
    let n = u.len();
    if !n.is_power_of_two() || n < 4 {
        return Err(Error::Invalid(format!("spectrum needs a power-of-two sample count >= 4, got {n}")));
    }
    let mut c: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut c);
    let denom = 2.0 * (n as f64).powi(2);
    let e_hat = |k: usize| c[k].norm_sqr() / denom;
    let k: Vec<usize> = (1..n / 2).collect();
    let e = k.iter().map(|&k| e_hat(k) + e_hat(n - k)).collect();
    Ok(Spectrum { k, e })
}

/// Values of the piecewise polynomial at `n` uniform points `x0 + j L / n`.
pub fn sample_uniform(mesh: &Mesh, u: &[f64], n: usize) -> Result<Vec<f64>> {
    mesh.check_len(u)?;
    let l = mesh.length();
    Ok((0..n).map(|j| mesh.eval(u, mesh.x0 + l * j as f64 / n as f64)).collect())
}

/// Spectrum of a DG field sampled at `n` uniform points.
pub fn energy_spectrum(mesh: &Mesh, u: &[f64], n: usize) -> Result<Spectrum> {
    spectrum_of_samples(&sample_uniform(mesh, u, n)?)
}

/// `sqrt(sum_k (log10 a_k - log10 b_k)^2)` over the shared wavenumbers
/// `1..=k_max`; energies are floored at 1e-300.
pub fn log_spectrum_distance(a: &Spectrum, b: &Spectrum, k_max: usize) -> f64 {
    a.k.iter()
        .zip(&a.e)
        .zip(b.k.iter().zip(&b.e))
        .take_while(|((ka, _), _)| **ka <= k_max)
        .map(|((_, ea), (_, eb))| (ea.max(1e-300).log10() - eb.max(1e-300).log10()).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// One cell per `(method, dt, time)`; `None` marks a run that blew up.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub dt: f64,
    pub errors: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub times: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn get(&self, method: &str, dt: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && (r.dt - dt).abs() <= 1e-12 * dt.abs().max(1.0))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["method", "dt", "t", "relative_error"])?;
        for r in &self.rows {
            for (t, e) in self.times.iter().zip(&r.errors) {
                w.write_record([r.method.clone(), fmt17(r.dt), fmt17(*t), e.map(fmt17).unwrap_or_default()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// A prediction method: rollout of length `ceil(horizon / dt)` from the
/// reference initial state.
pub type SweepMethod<'a> = (&'a str, &'a (dyn Fn(f64, usize) -> Result<Trajectory> + Sync));

/// Relative errors at `times` for every method and timestep. Blowups, and
/// times off a method's time grid, leave the cell empty; any other failure
/// aborts.
pub fn timestep_sweep(
    methods: &[SweepMethod<'_>],
    dts: &[f64],
    reference: &Trajectory,
    mesh: Option<&Mesh>,
    times: &[f64],
) -> Result<SweepTable> {
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let mut rows = Vec::new();
    for &(name, run) in methods {
        for &dt in dts {
            let n_steps = (horizon / dt - 1e-9).ceil().max(0.0) as usize;
            let errors = match run(dt, n_steps) {
                Ok(pred) => {
                    let rep = compare_fields(&pred, reference, mesh)?;
                    times
                        .iter()
                        .map(|&t| {
                            rep.index_at(t)
                                .filter(|&i| (rep.times[i] - t).abs() <= 1e-9 * t.max(1.0) + 0.5 * dt.min(reference.dt))
                                .map(|i| rep.relative[i])
                        })
                        .collect()
                }
                Err(e) if e.is_blowup() => vec![None; times.len()],
                Err(e) => return Err(e),
            };
            rows.push(SweepRow {
                method: name.to_string(),
                dt,
                errors,
            });
        }
    }
    Ok(SweepTable {
        times: times.to_vec(),
        rows,
    })
}

/// Long-format `(t, x, u)` CSV, time-major.
pub fn export_xt(traj: &Trajectory, coords: &[f64], path: &Path) -> Result<()> {
    if coords.len() != traj.dim() {
        return Err(Error::Dimension {
            expected: traj.dim(),
            got: coords.len(),
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "x", "u"])?;
    for n in 0..traj.len() {
        let t = fmt17(traj.time(n));
        for (x, u) in coords.iter().zip(traj.state(n)) {
            w.write_record([t.as_str(), &fmt17(*x), &fmt17(*u)])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn uniform(n: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..n).map(|j| f(2.0 * PI * j as f64 / n as f64)).collect()
    }

    #[test]
    fn sine_anchor() {
        let s = spectrum_of_samples(&uniform(64, f64::sin)).unwrap();
        assert_eq!(s.k.len(), 31);
        assert!((s.e[0] - 0.25).abs() < 1e-12);
        assert!(s.e[1..].iter().all(|e| e.abs() < 1e-25));
        let c = spectrum_of_samples(&[3.0; 32]).unwrap();
        assert!(c.e.iter().all(|e| *e < 1e-25));
    }

    #[test]
    fn dg_field_spectrum_of_sine() {
        let mesh = Mesh::new(16, 0.0, 2.0 * PI, 6).unwrap();
        let u = mesh.interpolate(|x| (3.0 * x).sin());
        let s = energy_spectrum(&mesh, &u, 64).unwrap();
        assert_eq!(s.peak(), 3);
        assert!((s.e[2] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn identical_fields_have_zero_error_and_offset_is_exact() {
        let mesh = Mesh::new(4, 0.0, 1.0, 2).unwrap();
        let zero = Trajectory::from_states(0.0, 0.1, &[vec![0.0; 12], vec![0.0; 12]]).unwrap();
        let rep = compare_fields(&zero, &zero, Some(&mesh)).unwrap();
        assert!(rep.l2.iter().all(|e| *e == 0.0));
        let shifted = Trajectory::from_states(0.0, 0.1, &[vec![0.3; 12], vec![-0.3; 12]]).unwrap();
        let rep = compare_fields(&shifted, &zero, Some(&mesh)).unwrap();
        assert!(rep.l2.iter().all(|e| (e - 0.3).abs() < 1e-14));
        assert_eq!(rep.max_abs, vec![0.3, 0.3]);
    }

    #[test]
    fn coarser_prediction_is_matched_by_subsampling() {
        let fine = Trajectory::from_states(0.0, 0.1, &(0..11).map(|i| vec![i as f64]).collect::<Vec<_>>()).unwrap();
        let coarse = fine.subsample(5);
        let rep = compare_fields(&coarse, &fine, None).unwrap();
        assert_eq!(rep.times.len(), 3);
        assert!(rep.l2.iter().all(|e| *e == 0.0));
        assert!((rep.times[2] - 1.0).abs() < 1e-12);
        let odd = Trajectory::from_states(0.0, 0.15, &[vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(compare_fields(&odd, &fine, None), Err(Error::TimeGrid(_))));
    }

    #[test]
    fn sweep_records_blowups_as_missing() {
        let reference = Trajectory::from_states(0.0, 0.1, &vec![vec![1.0]; 11]).unwrap();
        let exact = |dt: f64, n: usize| Trajectory::from_states(0.0, dt, &vec![vec![1.0]; n + 1]);
        let boom = |dt: f64, _n: usize| -> Result<Trajectory> {
            if dt > 0.15 {
                Err(Error::Blowup { step: Some(3), stage: 1 })
            } else {
                Trajectory::from_states(0.0, dt, &vec![vec![2.0]; 20])
            }
        };
        let table = timestep_sweep(&[("exact", &exact), ("boom", &boom)], &[0.1, 0.2], &reference, None, &[0.4, 1.0]).unwrap();
        assert_eq!(table.get("exact", 0.2).unwrap().errors, vec![Some(0.0), Some(0.0)]);
        assert_eq!(table.get("boom", 0.2).unwrap().errors, vec![None, None]);
        assert_eq!(table.get("boom", 0.1).unwrap().errors, vec![Some(1.0), Some(1.0)]);
    }

    #[test]
    fn xt_export_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("xt.csv");
        let tr = Trajectory::from_states(0.0, 0.1, &[vec![1.0 / 3.0, PI], vec![-2.5e-7, 1e10 / 7.0]]).unwrap();
        export_xt(&tr, &[0.0, 0.5], &path).unwrap();
        let mut rd = csv::Reader::from_path(&path).unwrap();
        let rows: Vec<Vec<f64>> = rd
            .records()
            .map(|r| r.unwrap().iter().map(|s| s.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[1], vec![0.0, 0.5, PI]);
        assert_eq!(rows[3][2], 1e10 / 7.0);
        assert!(rows.windows(2).all(|w| w[0][0] <= w[1][0]));
    }
}
