//! Central finite-difference verification of analytic gradients.

use super::params::ParamStore;
use super::tensor::Tensor;
use super::AdError;
use crate::rng;
use rand::Rng;

/// One loss evaluation as seen by the checker.
pub struct LossEval {
    pub value: f64,
    /// Smallest |input - kink| over all hinge/abs ops in the pass.
    pub kink_margin: f64,
    /// Hash of the hinge/abs branch pattern; differing hashes between the
    /// two sides of a central difference mean the secant crossed a kink.
    pub kink_signature: u64,
    /// Per-parameter gradients, present when requested.
    pub grads: Option<Vec<Tensor>>,
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Number of coordinates to sample across all parameters; 0 checks all.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            tolerance: 1e-3,
            max_coords: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoordResult {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct ParamSummary {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamSummary>,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub worst: Option<CoordResult>,
    pub passed: bool,
}

/// Compares analytic gradients of `loss` against central differences.
///
/// `loss` must be a deterministic function of the parameters. Coordinates
/// whose two perturbed evaluations fall on opposite sides of a hinge kink,
/// or whose evaluations come within `10 * epsilon` of one, are skipped
/// rather than failed (the secant there does not estimate the one-sided
/// derivative the backward pass is defined to return).
pub fn grad_check<F>(
    params: &ParamStore,
    loss: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, AdError>
where
    F: Fn(&ParamStore, bool) -> Result<LossEval, AdError>,
{
    let base = loss(params, true)?;
    let grads = base.grads.ok_or(AdError::Param {
        detail: "loss closure did not return gradients".into(),
    })?;

    let coords = pick_coords(params, opts);
    let mut work = params.clone();

    let mut per_param: Vec<ParamSummary> = (0..params.len())
        .map(|i| ParamSummary {
            name: params.name(i).to_string(),
            checked: 0,
            skipped: 0,
            max_rel_err: 0.0,
        })
        .collect();
    let mut worst: Option<CoordResult> = None;
    let (mut checked, mut skipped) = (0usize, 0usize);
    let mut max_rel = 0.0f64;

    for (pi, ei) in coords {
        let orig = work.tensor(pi).data()[ei];
        work.tensor_mut(pi).data_mut()[ei] = orig + opts.epsilon;
        let plus = loss(&work, false)?;
        work.tensor_mut(pi).data_mut()[ei] = orig - opts.epsilon;
        let minus = loss(&work, false)?;
        work.tensor_mut(pi).data_mut()[ei] = orig;

        let near_kink = plus.kink_signature != minus.kink_signature
            || plus.kink_margin.min(minus.kink_margin) < 10.0 * opts.epsilon;
        if near_kink {
            skipped += 1;
            per_param[pi].skipped += 1;
            continue;
        }

        let numeric = (plus.value - minus.value) / (2.0 * opts.epsilon);
        let analytic = grads[pi].data()[ei];
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
        checked += 1;
        per_param[pi].checked += 1;
        if rel > per_param[pi].max_rel_err {
            per_param[pi].max_rel_err = rel;
        }
        if rel > max_rel {
            max_rel = rel;
            worst = Some(CoordResult {
                param: params.name(pi).to_string(),
                index: ei,
                analytic,
                numeric,
                rel_err: rel,
            });
        }
    }

    Ok(GradCheckReport {
        per_param,
        checked,
        skipped,
        max_rel_err: max_rel,
        worst,
        passed: checked > 0 && max_rel < opts.tolerance,
    })
}

fn pick_coords(params: &ParamStore, opts: &GradCheckOptions) -> Vec<(usize, usize)> {
    let total = params.scalar_count();
    let flat_to_coord = |mut flat: usize| {
        for pi in 0..params.len() {
            let n = params.tensor(pi).len();
            if flat < n {
                return (pi, flat);
            }
            flat -= n;
        }
        unreachable!("flat index within total");
    };
    if opts.max_coords == 0 || opts.max_coords >= total {
        return (0..total).map(flat_to_coord).collect();
    }
    let mut rng = rng::stream(opts.seed, "gradcheck");
    let mut seen = std::collections::BTreeSet::new();
    while seen.len() < opts.max_coords {
        seen.insert(rng.gen_range(0..total));
    }
    seen.into_iter().map(flat_to_coord).collect()
}
