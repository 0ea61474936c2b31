//! Fixed-step explicit Runge–Kutta integration.
//!
//! A scheme is described by its Butcher tableau. Stages whose results never
//! reach the update (for example the error-estimation stage of Tsit5, which
//! has a zero weight) are skipped when stepping.

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// States with any component above this magnitude count as a blowup.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// Right-hand side `du/dt = f(t, u)` of a system of ODEs.
pub trait Rhs: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, u: &[f64], du: &mut [f64]);
}

impl<F> Rhs for (usize, F)
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.0
    }

    fn eval(&self, t: f64, u: &[f64], du: &mut [f64]) {
        (self.1)(t, u, du)
    }
}

/// Coefficients of an `s`-stage explicit Runge–Kutta scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    name: String,
    /// Row-major `s x s`, strictly lower triangular.
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    order: u32,
}

impl ButcherTableau {
    /// Builds a tableau from its rows. `a[i]` holds the `i` coefficients of
    /// stage `i` (so `a[0]` is empty).
    pub fn new(
        name: &str,
        order: u32,
        a: &[&[f64]],
        b: &[f64],
        c: &[f64],
    ) -> Result<Self> {
        let s = b.len();
        if s == 0 || c.len() != s || a.len() != s {
            return Err(Error::Invalid(format!(
                "tableau {name}: inconsistent stage counts (a: {}, b: {}, c: {})",
                a.len(),
                s,
                c.len()
            )));
        }
        let mut full = vec![0.0; s * s];
        for (i, row) in a.iter().enumerate() {
            if row.len() > i {
                return Err(Error::Invalid(format!(
                    "tableau {name}: row {i} is not strictly lower triangular"
                )));
            }
            full[i * s..i * s + row.len()].copy_from_slice(row);
        }
        let tableau = ButcherTableau {
            name: name.to_string(),
            a: full,
            b: b.to_vec(),
            c: c.to_vec(),
            order,
        };
        tableau.validate(1e-12)?;
        Ok(tableau)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.stages() + j]
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// Checks explicitness, `sum(b) = 1` and the row-sum condition `c_i = sum_j a_ij`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let s = self.stages();
        for i in 0..s {
            for j in i..s {
                if self.a(i, j) != 0.0 {
                    return Err(Error::Invalid(format!(
                        "tableau {}: a[{i}][{j}] != 0, scheme is not explicit",
                        self.name
                    )));
                }
            }
            let row: f64 = (0..i).map(|j| self.a(i, j)).sum();
            if (row - self.c[i]).abs() > tol {
                return Err(Error::Invalid(format!(
                    "tableau {}: c[{i}] = {} but row sum is {row}",
                    self.name, self.c[i]
                )));
            }
        }
        let bsum: f64 = self.b.iter().sum();
        if (bsum - 1.0).abs() > tol {
            return Err(Error::Invalid(format!(
                "tableau {}: weights sum to {bsum}",
                self.name
            )));
        }
        Ok(())
    }

    /// Stages whose values reach the final update, in order.
    pub fn active_stages(&self) -> Vec<usize> {
        let s = self.stages();
        let mut needed = vec![false; s];
        for i in (0..s).rev() {
            needed[i] = self.b[i] != 0.0 || (i + 1..s).any(|k| needed[k] && self.a(k, i) != 0.0);
        }
        (0..s).filter(|&i| needed[i]).collect()
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "rk4" | "erk4" => Ok(tableau_rk4()),
            "tsit5" => Ok(tableau_tsit5()),
            "euler" => Ok(tableau_euler()),
            other => Err(Error::Invalid(format!("unknown integrator '{other}'"))),
        }
    }
}

/// The classical fourth-order scheme.
pub fn tableau_rk4() -> ButcherTableau {
    ButcherTableau::new(
        "rk4",
        4,
        &[&[], &[0.5], &[0.0, 0.5], &[0.0, 0.0, 1.0]],
        &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
        &[0.0, 0.5, 0.5, 1.0],
    )
    .expect("rk4 tableau is consistent")
}

/// Tsitouras' 7-stage, fifth-order pair (2011). Only the fifth-order
/// solution is used; the last stage carries zero weight.
pub fn tableau_tsit5() -> ButcherTableau {
    const A: [&[f64]; 7] = [
        &[],
        &[0.161],
        &[-0.008480655492356989, 0.335480655492357],
        &[2.897153057105493, -6.359448489975075, 4.3622954328695815],
        &[
            5.325864828439257,
            -11.748883564062828,
            7.4955393428898365,
            -0.09249506636175525,
        ],
        &[
            5.86145544294642,
            -12.92096931784711,
            8.159367898576159,
            -0.071584973281401,
            -0.028269050394068383,
        ],
        &[
            0.09646076681806523,
            0.01,
            0.4798896504144996,
            1.379008574103742,
            -3.290069515436081,
            2.324710524099774,
        ],
    ];
    let b = [
        0.09646076681806523,
        0.01,
        0.4798896504144996,
        1.379008574103742,
        -3.290069515436081,
        2.324710524099774,
        0.0,
    ];
    let c = [0.0, 0.161, 0.327, 0.9, 0.9800255409045097, 1.0, 1.0];
    ButcherTableau::new("tsit5", 5, &A, &b, &c).expect("tsit5 tableau is consistent")
}

pub fn tableau_euler() -> ButcherTableau {
    ButcherTableau::new("euler", 1, &[&[]], &[1.0], &[0.0]).expect("euler tableau")
}

fn check_state(u: &[f64], stage: usize) -> Result<()> {
    if u.iter().all(|x| x.is_finite() && x.abs() <= BLOWUP_THRESHOLD) {
        Ok(())
    } else {
        Err(Error::Blowup { step: None, stage })
    }
}

/// Reusable workspace for repeated steps of one scheme on one system size.
pub struct ErkStepper<'a> {
    tableau: &'a ButcherTableau,
    active: Vec<usize>,
    k: Vec<Vec<f64>>,
    stage: Vec<f64>,
}

impl<'a> ErkStepper<'a> {
    pub fn new(tableau: &'a ButcherTableau, dim: usize) -> Self {
        let s = tableau.stages();
        ErkStepper {
            tableau,
            active: tableau.active_stages(),
            k: vec![vec![0.0; dim]; s],
            stage: vec![0.0; dim],
        }
    }

    /// Advances `u` in place by one step of size `dt`.
    pub fn step(&mut self, rhs: &dyn Rhs, t: f64, u: &mut [f64], dt: f64) -> Result<()> {
        let tab = self.tableau;
        for (pos, &i) in self.active.iter().enumerate() {
            self.stage.copy_from_slice(u);
            for &j in &self.active[..pos] {
                let aij = tab.a(i, j);
                if aij != 0.0 {
                    let coef = dt * aij;
                    for (s, kj) in self.stage.iter_mut().zip(&self.k[j]) {
                        *s += coef * kj;
                    }
                }
            }
            check_state(&self.stage, i)?;
            rhs.eval(t + tab.c[i] * dt, &self.stage, &mut self.k[i]);
            check_state(&self.k[i], i)?;
        }
        for &i in &self.active {
            let coef = dt * tab.b[i];
            if coef != 0.0 {
                for (x, ki) in u.iter_mut().zip(&self.k[i]) {
                    *x += coef * ki;
                }
            }
        }
        check_state(u, tab.stages())
    }
}

/// One step of the scheme from `(t, u)`.
pub fn erk_step(
    tableau: &ButcherTableau,
    rhs: &dyn Rhs,
    t: f64,
    u: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Invalid(format!("timestep must be positive, got {dt}")));
    }
    if u.len() != rhs.dim() {
        return Err(Error::Dimension {
            expected: rhs.dim(),
            got: u.len(),
        });
    }
    check_state(u, 0)?;
    let mut out = u.to_vec();
    ErkStepper::new(tableau, u.len()).step(rhs, t, &mut out, dt)?;
    Ok(out)
}

/// Integrates `n_steps` uniform steps and stores every state.
pub fn integrate(
    tableau: &ButcherTableau,
    rhs: &dyn Rhs,
    u0: &[f64],
    t0: f64,
    dt: f64,
    n_steps: usize,
) -> Result<Trajectory> {
    integrate_strided(tableau, rhs, u0, t0, dt, n_steps, 1)
}

/// Like [`integrate`] but keeps only every `stride`-th state.
pub fn integrate_strided(
    tableau: &ButcherTableau,
    rhs: &dyn Rhs,
    u0: &[f64],
    t0: f64,
    dt: f64,
    n_steps: usize,
    stride: usize,
) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return Err(Error::Invalid(format!("timestep must be positive, got {dt}")));
    }
    if stride == 0 || n_steps % stride != 0 {
        return Err(Error::Invalid(format!(
            "store stride {stride} must divide the step count {n_steps}"
        )));
    }
    let d = rhs.dim();
    if u0.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: u0.len(),
        });
    }
    check_state(u0, 0).map_err(|e| e.at_step(0))?;
    let mut traj = Trajectory::new(t0, dt * stride as f64, d);
    traj.push(u0)?;
    let mut stepper = ErkStepper::new(tableau, d);
    let mut u = u0.to_vec();
    for n in 0..n_steps {
        stepper
            .step(rhs, t0 + n as f64 * dt, &mut u, dt)
            .map_err(|e| e.at_step(n))?;
        if (n + 1) % stride == 0 {
            traj.push(&u)?;
        }
    }
    Ok(traj)
}

/// Advances `u` by `n_steps` without storing intermediate states.
pub fn advance(
    tableau: &ButcherTableau,
    rhs: &dyn Rhs,
    u: &mut [f64],
    t0: f64,
    dt: f64,
    n_steps: usize,
) -> Result<()> {
    let mut stepper = ErkStepper::new(tableau, u.len());
    for n in 0..n_steps {
        stepper
            .step(rhs, t0 + n as f64 * dt, u, dt)
            .map_err(|e| e.at_step(n))?;
    }
    Ok(())
}
