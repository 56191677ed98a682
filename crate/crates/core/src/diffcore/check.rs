//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DiffError, Graph, ParamId, ParamSet, Var};
use crate::scalar::Scalar;

/// Gradients smaller than this are compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat coordinate with the largest error.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares backprop gradients of `loss_fn` with central differences on
/// `n_coords` trainable coordinates drawn uniformly (all of them when fewer exist).
///
/// `loss_fn` must be deterministic: it is re-evaluated twice per coordinate.
pub fn finite_diff_check<T, F>(
    params: &mut ParamSet<T>,
    loss_fn: F,
    n_coords: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport, DiffError>
where
    T: Scalar,
    F: Fn(&mut Graph<'_, T>) -> Result<Var, DiffError>,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let eval = |p: &ParamSet<T>| -> Result<f64, DiffError> {
        let mut g = Graph::new(p);
        let l = loss_fn(&mut g)?;
        Ok(g.value(l).item().to_f64_lossy())
    };

    let grads = {
        let mut g = Graph::new(params);
        let l = loss_fn(&mut g)?;
        g.backward(l)?
    };

    let coords: Vec<(ParamId, usize)> = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(id, p)| (0..p.value.len()).map(move |i| (id, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<usize> = if n_coords >= coords.len() {
        (0..coords.len()).collect()
    } else {
        sample(&mut rng, coords.len(), n_coords).into_vec()
    };

    let step = T::lit(eps);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coords_checked: picked.len(),
    };
    for k in picked {
        let (id, i) = coords[k];
        let analytic = grads.get(id).map_or(0.0, |g| g.data()[i].to_f64_lossy());
        let orig = params.value(id).data()[i];
        params.value_mut(id).data_mut()[i] = orig + step;
        let plus = eval(params)?;
        params.value_mut(id).data_mut()[i] = orig - step;
        let minus = eval(params)?;
        params.value_mut(id).data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic, numeric);
        if err >= report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some((params.get(id).name.clone(), i));
        }
    }
    Ok(report)
}
