use crate::adjoint::AdjointSolution;
use crate::forward::PathEnsemble;
use crate::model::{ControlProblem, Matrix, Vector};

/// `<p, b> + Tr(q' sigma) - f` at `(t, x, u)`.
pub fn hamiltonian_at(problem: &ControlProblem, t: f64, x: &Vector, u: &Vector, p: &Vector, q: &Matrix) -> f64 {
    p.dot(&problem.drift(t, x, u)) + (q.transpose() * problem.diffusion(t, x, u)).trace()
        - problem.running_cost(t, x, u)
}

/// Everything the Hamiltonians need at one `(node, path)` of a reference
/// ensemble: the reference state and control and both adjoints.
#[derive(Debug, Clone)]
pub struct HamiltonianContext<'a> {
    pub problem: &'a ControlProblem,
    pub node: usize,
    pub path: usize,
    pub t: f64,
    /// Reference state.
    pub x: Vector,
    /// Reference control.
    pub u: Vector,
    pub p: Vector,
    pub q: Matrix,
    /// Second-order adjoint.
    pub big_p: Matrix,
}

impl<'a> HamiltonianContext<'a> {
    /// Context at step `node < N` of `path`.
    pub fn at(
        problem: &'a ControlProblem,
        base: &PathEnsemble,
        adjoints: &AdjointSolution,
        path: usize,
        node: usize,
    ) -> Self {
        Self {
            problem,
            node,
            path,
            t: base.grid.node(node),
            x: base.state(path, node),
            u: base.control(path, node),
            p: adjoints.first.p(path, node),
            q: adjoints.first.q(path, node),
            big_p: adjoints.second.p(path, node),
        }
    }

    pub fn hamiltonian(&self, u: &Vector) -> f64 {
        hamiltonian_at(self.problem, self.t, &self.x, u, &self.p, &self.q)
    }

    /// The second-order Hamiltonian at state `x`:
    /// `H(t, x, u) - 1/2 Tr(s' P s) + 1/2 Tr((sigma(t, x, u) - s)' P (sigma(t, x, u) - s))`
    /// with `s` the diffusion along the reference pair.
    pub fn script_h_at(&self, x: &Vector, u: &Vector) -> f64 {
        let pr = self.problem;
        let sbar = pr.diffusion(self.t, &self.x, &self.u);
        let ds = pr.diffusion(self.t, x, u) - &sbar;
        hamiltonian_at(pr, self.t, x, u, &self.p, &self.q) - 0.5 * (sbar.transpose() * &self.big_p * &sbar).trace()
            + 0.5 * (ds.transpose() * &self.big_p * &ds).trace()
    }

    /// [`Self::script_h_at`] on the reference state, the form used by the
    /// maximum condition.
    pub fn script_h(&self, u: &Vector) -> f64 {
        self.script_h_at(&self.x, u)
    }
}

pub fn hamiltonian(ctx: &HamiltonianContext<'_>, u: &Vector) -> f64 {
    ctx.hamiltonian(u)
}

pub fn script_h(ctx: &HamiltonianContext<'_>, u: &Vector) -> f64 {
    ctx.script_h(u)
}
