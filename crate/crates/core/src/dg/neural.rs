//! Low-order DG systems augmented by a learned source, `du/dt = R(u) + S_theta(u)`.

use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::mlp::{mlp_on_tape, MlpParams};
use crate::node::TapeRhs;
use crate::ode::Rhs;

use super::operator::DgOperator;

/// Tape form of the augmented system, used for training.
pub struct DgNeuralTape {
    op: Arc<DgOperator>,
}

impl DgNeuralTape {
    pub fn new(op: DgOperator) -> Self {
        DgNeuralTape { op: Arc::new(op) }
    }

    pub fn operator(&self) -> &DgOperator {
        &self.op
    }
}

impl TapeRhs for DgNeuralTape {
    fn dim(&self) -> usize {
        self.op.dofs()
    }

    fn record(&self, tape: &mut Tape, params: &[Var], u: Var) -> Result<Var> {
        let r = tape.map(u, self.op.clone())?;
        let s = mlp_on_tape(tape, params, u)?;
        tape.add(r, s)
    }
}

/// Plain form of the augmented system, used for prediction.
pub struct DgNeuralRhs<'a> {
    pub op: &'a DgOperator,
    pub params: &'a MlpParams,
}

impl<'a> DgNeuralRhs<'a> {
    pub fn new(op: &'a DgOperator, params: &'a MlpParams) -> Result<Self> {
        params.expect_dims(op.dofs(), op.dofs())?;
        Ok(DgNeuralRhs { op, params })
    }
}

impl Rhs for DgNeuralRhs<'_> {
    fn dim(&self) -> usize {
        self.op.dofs()
    }

    fn eval(&self, _t: f64, u: &[f64], du: &mut [f64]) {
        self.op.tendency(u, du);
        let s = self.params.forward(u).expect("dimensions checked at construction");
        for (d, si) in du.iter_mut().zip(s) {
            *d += si;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dg::{Mesh, PdeConfig};

    #[test]
    fn zero_network_leaves_operator_unchanged() {
        let op = DgOperator::new(PdeConfig::burgers(0.01), Mesh::new(4, 0.0, 1.0, 1).unwrap()).unwrap();
        let params = MlpParams::init(8, 8, 1).unwrap().zeroed();
        let rhs = DgNeuralRhs::new(&op, &params).unwrap();
        let u: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let (mut a, mut b) = (vec![0.0; 8], vec![0.0; 8]);
        rhs.eval(0.0, &u, &mut a);
        op.tendency(&u, &mut b);
        assert_eq!(a, b);
        assert!(DgNeuralRhs::new(&op, &MlpParams::init(6, 6, 1).unwrap()).is_err());
    }
}
