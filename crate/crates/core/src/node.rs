//! Explicit Runge–Kutta steps recorded on a tape, so a rollout of the
//! source-augmented system can be differentiated with respect to the network
//! parameters.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ode::{ButcherTableau, BLOWUP_THRESHOLD};

/// Autonomous right-hand side that can be recorded for a batch of states.
pub trait TapeRhs: Sync {
    fn dim(&self) -> usize;

    /// Tendency of every row of `u` (`batch x dim`), given the parameter
    /// leaves in slot order.
    fn record(&self, tape: &mut Tape, params: &[Var], u: Var) -> Result<Var>;
}

/// One ERK step of every row of `u`.
pub fn erk_step_on_tape(
    tape: &mut Tape,
    tableau: &ButcherTableau,
    rhs: &dyn TapeRhs,
    params: &[Var],
    u: Var,
    dt: f64,
) -> Result<Var> {
    let active = tableau.active_stages();
    let mut k: Vec<Option<Var>> = vec![None; tableau.stages()];
    for (pos, &i) in active.iter().enumerate() {
        let mut terms = vec![(u, 1.0)];
        for &j in &active[..pos] {
            let aij = tableau.a(i, j);
            if aij != 0.0 {
                terms.push((k[j].expect("earlier stage recorded"), dt * aij));
            }
        }
        let stage = if terms.len() == 1 { u } else { tape.lincomb(&terms)? };
        check(tape, stage, i)?;
        let ki = rhs.record(tape, params, stage)?;
        check(tape, ki, i)?;
        k[i] = Some(ki);
    }
    let mut terms = vec![(u, 1.0)];
    for &i in &active {
        let bi = tableau.b()[i];
        if bi != 0.0 {
            terms.push((k[i].expect("stage recorded"), dt * bi));
        }
    }
    let next = tape.lincomb(&terms)?;
    check(tape, next, tableau.stages())?;
    Ok(next)
}

/// `m` successive steps from `u0`; returns the `m` new states.
pub fn rollout_on_tape(
    tape: &mut Tape,
    tableau: &ButcherTableau,
    rhs: &dyn TapeRhs,
    params: &[Var],
    u0: Var,
    dt: f64,
    m: usize,
) -> Result<Vec<Var>> {
    let mut out = Vec::with_capacity(m);
    let mut u = u0;
    for n in 0..m {
        u = erk_step_on_tape(tape, tableau, rhs, params, u, dt).map_err(|e| e.at_step(n))?;
        out.push(u);
    }
    Ok(out)
}

/// Flags the first batch row holding a non-finite or oversized entry.
fn check(tape: &Tape, v: Var, stage: usize) -> Result<()> {
    let cols = tape.shape(v).1.max(1);
    if let Some(i) = tape
        .value(v)
        .iter()
        .position(|x| !x.is_finite() || x.abs() > BLOWUP_THRESHOLD)
    {
        return Err(Error::SampleBlowup {
            sample: i / cols,
            source: Box::new(Error::Blowup { step: None, stage }),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{backward, record, Tensor};
    use crate::ode::{erk_step, tableau_rk4, tableau_tsit5};

    /// `du/dt = theta * u`, a one-parameter linear toy.
    struct Linear;
    impl TapeRhs for Linear {
        fn dim(&self) -> usize {
            1
        }
        fn record(&self, tape: &mut Tape, params: &[Var], u: Var) -> Result<Var> {
            tape.matmul(u, params[0])
        }
    }

    #[test]
    fn tape_step_matches_plain_step() {
        for tab in [tableau_rk4(), tableau_tsit5()] {
            let theta = Tensor::row(vec![-0.7]);
            let (loss, _) = record(&[&theta], |tape, p| {
                let u = tape.input(1, 1, vec![1.3])?;
                let v = erk_step_on_tape(tape, &tab, &Linear, p, u, 0.1)?;
                Ok(tape.sum(v))
            })
            .unwrap();
            let plain = erk_step(&tab, &(1, |_t: f64, u: &[f64], du: &mut [f64]| du[0] = -0.7 * u[0]), 0.0, &[1.3], 0.1)
                .unwrap();
            assert!((loss - plain[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn single_step_gradient_matches_chain_rule() {
        // RK4 on u' = a u: u1 = u0 (1 + z + z^2/2 + z^3/6 + z^4/24), z = a h.
        // d/da [(u1 - y)^2] = 2 (u1 - y) u0 h (1 + z + z^2/2 + z^3/6).
        let (a, h, u0, y) = (0.4, 0.2, 1.5, 1.0);
        let theta = Tensor::row(vec![a]);
        let (_, tape) = record(&[&theta], |tape, p| {
            let u = tape.input(1, 1, vec![u0])?;
            let v = rollout_on_tape(tape, &tableau_rk4(), &Linear, p, u, h, 1)?[0];
            let t = tape.input(1, 1, vec![y])?;
            let d = tape.sub(v, t)?;
            let s = tape.square(d);
            Ok(tape.sum(s))
        })
        .unwrap();
        let z: f64 = a * h;
        let u1 = u0 * (1.0 + z + z * z / 2.0 + z.powi(3) / 6.0 + z.powi(4) / 24.0);
        let expected = 2.0 * (u1 - y) * u0 * h * (1.0 + z + z * z / 2.0 + z.powi(3) / 6.0);
        let g = backward(&tape).tensors[0].data[0];
        assert!((g - expected).abs() < 1e-13, "{g} vs {expected}");
    }

    #[test]
    fn blowup_is_reported_with_step() {
        let theta = Tensor::row(vec![1e7]);
        let err = record(&[&theta], |tape, p| {
            let u = tape.input(1, 1, vec![1e6])?;
            let v = rollout_on_tape(tape, &tableau_rk4(), &Linear, p, u, 1.0, 3)?;
            Ok(tape.sum(v[2]))
        })
        .unwrap_err();
        assert!(err.is_blowup(), "{err}");
    }
}
