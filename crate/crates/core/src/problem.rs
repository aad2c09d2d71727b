use std::sync::Arc;

use crate::grid::{Field, Grid};
use crate::integrand::Integrand;
use crate::{Error, Result};

/// Minimize `∫ F(x, Du)` over `u = g` on the boundary with `u >= psi` row-wise.
#[derive(Clone, Debug)]
pub struct ObstacleProblem {
    integrand: Integrand,
    psi: Field,
    g: Field,
}

impl ObstacleProblem {
    /// `g` supplies the Dirichlet values at boundary nodes and the default
    /// initial iterate. Requires `g >= psi` at every boundary node.
    pub fn new(integrand: Integrand, psi: Field, g: Field) -> Result<Self> {
        psi.same_shape(&g, "obstacle vs boundary datum")?;
        let grid = psi.grid().clone();
        let nc = psi.components();
        for node in (0..grid.node_count()).filter(|n| grid.is_boundary(*n)) {
            for i in 0..nc {
                let (gv, pv) = (g.values()[node * nc + i], psi.values()[node * nc + i]);
                if gv < pv - 1e-12 * (1.0 + pv.abs()) {
                    let x = grid.coord(node);
                    return Err(Error::Precondition(format!(
                        "boundary datum below obstacle at node {node} ({:?}), row {i}: g = {gv}, psi = {pv}",
                        &x[..grid.dim()]
                    )));
                }
            }
        }
        Ok(ObstacleProblem { integrand, psi, g })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.psi.grid()
    }

    pub fn integrand(&self) -> &Integrand {
        &self.integrand
    }

    pub fn psi(&self) -> &Field {
        &self.psi
    }

    pub fn g(&self) -> &Field {
        &self.g
    }

    pub fn components(&self) -> usize {
        self.psi.components()
    }

    /// Fails unless `u` has the problem's shape and equals `g` on boundary nodes.
    pub fn check_dirichlet(&self, u: &Field) -> Result<()> {
        u.same_shape(&self.g, "iterate vs boundary datum")?;
        let nc = self.components();
        let grid = self.grid();
        for node in (0..grid.node_count()).filter(|n| grid.is_boundary(*n)) {
            let (a, b) = (u.node(node), self.g.node(node));
            if a != b {
                return Err(Error::Precondition(format!(
                    "iterate violates Dirichlet data at boundary node {node}: {a:?} vs {b:?}"
                )));
            }
        }
        debug_assert_eq!(u.values().len(), grid.node_count() * nc);
        Ok(())
    }

    /// Copy of `u` with the boundary nodes overwritten by `g`.
    pub fn with_boundary(&self, u: &Field) -> Result<Field> {
        u.same_shape(&self.g, "iterate vs boundary datum")?;
        let nc = self.components();
        let mut out = u.clone();
        let grid = self.grid().clone();
        for node in (0..grid.node_count()).filter(|n| grid.is_boundary(*n)) {
            out.values_mut()[node * nc..(node + 1) * nc].copy_from_slice(self.g.node(node));
        }
        Ok(out)
    }
}
