//! Central finite-difference verification of backward passes.
//!
//! The checker treats every trainable entry of a [`ParameterSet`] as a
//! coordinate vector: tensors under test (including "inputs") are simply
//! registered as parameters and fed to the graph through [`Graph::param`].

use crate::graph::{Graph, GraphError, NodeId};
use crate::params::ParameterSet;
use crate::tensor::Real;

/// Finite-difference step. Central differences lose `eps * |f| / (2h)` to
/// float cancellation, so the f32 build needs a fairly coarse step to keep
/// that noise well under the 1e-3 tolerance; the f64 build can afford a
/// smaller step and a much tighter tolerance.
#[cfg(not(feature = "f64"))]
pub const FD_STEP: Real = 2e-2;
#[cfg(feature = "f64")]
pub const FD_STEP: Real = 1e-4;

/// Tolerance matching the build's scalar type: relative error < 1e-3 in
/// f32, < 1e-6 in f64.
#[cfg(not(feature = "f64"))]
pub const FD_TOLERANCE: Real = 1e-3;
#[cfg(feature = "f64")]
pub const FD_TOLERANCE: Real = 1e-6;

/// Denominator floor for the relative error: coordinates whose analytic
/// and numeric derivatives are both below this magnitude are compared
/// absolutely at `floor * tolerance`, which keeps float-cancellation noise
/// in the loss evaluation from failing near-zero gradients.
#[cfg(not(feature = "f64"))]
pub const FD_REL_FLOOR: Real = 0.05;
#[cfg(feature = "f64")]
pub const FD_REL_FLOOR: Real = 1e-3;

#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel_err: Real,
    pub coords_checked: usize,
}

/// Compares analytic gradients against central finite differences.
///
/// `loss_fn` must deterministically rebuild the same scalar-loss graph from
/// the current parameter values. Up to `max_coords_per_param` evenly spaced
/// coordinates are probed per trainable parameter. The relative error of a
/// coordinate is `|fd - analytic| / max(|fd|, |analytic|, rel_floor)`.
pub fn fd_check<F>(
    ps: &mut ParameterSet,
    mut loss_fn: F,
    step: Real,
    max_coords_per_param: usize,
    rel_floor: Real,
) -> Result<FdReport, GraphError>
where
    F: FnMut(&mut Graph, &ParameterSet) -> Result<NodeId, GraphError>,
{
    let analytic: Vec<(String, Vec<Real>)> = {
        let mut g = Graph::new();
        let loss = loss_fn(&mut g, ps)?;
        ps.zero_grads();
        g.backward(loss, ps)?;
        ps.entries()
            .filter(|(_, e)| e.trainable)
            .map(|(name, e)| (name.to_string(), e.grad.clone().expect("zeroed before backward")))
            .collect()
    };

    let eval = |ps: &ParameterSet, loss_fn: &mut F| -> Result<Real, GraphError> {
        let mut g = Graph::new();
        let loss = loss_fn(&mut g, ps)?;
        Ok(g.value(loss).data()[0])
    };

    let mut max_rel_err: Real = 0.0;
    let mut coords_checked = 0;
    for (name, grad) in &analytic {
        let n = grad.len();
        let probes = n.min(max_coords_per_param);
        for p in 0..probes {
            let i = p * n / probes;
            let orig = ps.get(name).unwrap().data()[i];

            ps.value_mut(name).unwrap().data_mut()[i] = orig + step;
            let f_plus = eval(ps, &mut loss_fn)?;
            ps.value_mut(name).unwrap().data_mut()[i] = orig - step;
            let f_minus = eval(ps, &mut loss_fn)?;
            ps.value_mut(name).unwrap().data_mut()[i] = orig;

            let fd = (f_plus - f_minus) / (2.0 * step);
            let an = grad[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(rel_floor);
            if rel > max_rel_err {
                max_rel_err = rel;
            }
            coords_checked += 1;
        }
    }
    Ok(FdReport { max_rel_err, coords_checked })
}
