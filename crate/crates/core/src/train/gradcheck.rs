//! Central finite-difference checks of analytic parameter gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Model, Parameters};

/// Comparison at one parameter entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Which entries of each tensor are probed.
#[derive(Debug, Clone, Copy)]
pub struct ProbePlan {
    /// Entries with the largest analytic gradient magnitude.
    pub largest: usize,
    /// Additional uniformly drawn entries.
    pub random: usize,
    pub seed: u64,
    pub eps: f64,
    /// Denominator floor. Central differences at `eps = 1e-5` carry about
    /// 1e-10 of absolute roundoff, so smaller gradients are compared absolutely.
    pub floor: f64,
}

impl Default for ProbePlan {
    fn default() -> Self {
        ProbePlan {
            largest: 2,
            random: 2,
            seed: 0,
            eps: 1e-5,
            floor: 1e-5,
        }
    }
}

/// Compare `analytic` against `(loss(θ+ε) − loss(θ−ε)) / 2ε` at the planned
/// entries of every tensor. `loss` must be a pure function of the model.
pub fn check_gradients<F>(model: &Model, analytic: &Parameters, plan: &ProbePlan, mut loss: F) -> Vec<EntryCheck>
where
    F: FnMut(&Model) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let grads = analytic.named_tensors();
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (t, (name, _, g)) in grads.iter().enumerate() {
        let mut order: Vec<usize> = (0..g.len()).collect();
        order.sort_by(|&a, &b| g.data[b].abs().total_cmp(&g.data[a].abs()).then(a.cmp(&b)));
        let mut picks: Vec<usize> = order.iter().take(plan.largest).copied().collect();
        for _ in 0..plan.random {
            picks.push(rng.gen_range(0..g.len()));
        }
        picks.sort_unstable();
        picks.dedup();
        for index in picks {
            let original = model.params.named_tensors()[t].2.data[index];
            let mut eval = |value: f64| {
                probe.params.tensors_mut()[t].data[index] = value;
                loss(&probe)
            };
            let plus = eval(original + plan.eps);
            let minus = eval(original - plan.eps);
            probe.params.tensors_mut()[t].data[index] = original;
            let numeric = (plus - minus) / (2.0 * plan.eps);
            let a = g.data[index];
            out.push(EntryCheck {
                tensor: name.clone(),
                index,
                analytic: a,
                numeric,
                relative_error: relative_error(a, numeric, plan.floor),
            });
        }
    }
    out
}
