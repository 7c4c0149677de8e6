//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;

use crate::autograd::{Mat, Tape, Var};
use crate::nn::ParamStore;
use crate::rng;

/// Worst relative error seen for one input or parameter group.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub max_rel: f64,
    pub checked: usize,
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Compares analytic gradients of the scalar `f` against central
/// differences for up to `per_group` entries of every input and every
/// parameter group. The error floor of each group is `1e-3` times its
/// largest analytic gradient, so entries whose gradient is pure rounding
/// noise do not dominate.
pub fn check<F>(store: &ParamStore, inputs: &[Mat], f: F, per_group: usize, seed: u64) -> Vec<CheckResult>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |store: &ParamStore, inputs: &[Mat]| -> f64 {
        let mut t = Tape::new(store);
        let vars: Vec<Var> = inputs.iter().map(|m| t.input(m.clone())).collect();
        let out = f(&mut t, &vars);
        t.value(out)[[0, 0]]
    };
    let mut t = Tape::new(store);
    let vars: Vec<Var> = inputs.iter().map(|m| t.input(m.clone())).collect();
    let out = f(&mut t, &vars);
    let grads = t.backward(out);
    let mut rng = rng::stream(seed, "gradcheck");
    let mut results = Vec::new();

    for (i, v) in vars.iter().enumerate() {
        let g = grads.wrt(*v).cloned().unwrap_or_else(|| Mat::zeros(inputs[i].dim()));
        let floor = 1e-3 * g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let n = g.len();
        let mut worst = 0.0f64;
        let picks = sample(&mut rng, n, per_group.min(n));
        for idx in picks.iter() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let x = inputs[i].as_slice().expect("standard layout")[idx];
            let h = 1e-6 * x.abs().max(1.0);
            plus[i].as_slice_mut().unwrap()[idx] += h;
            minus[i].as_slice_mut().unwrap()[idx] -= h;
            let num = (eval(store, &plus) - eval(store, &minus)) / (2.0 * h);
            worst = worst.max(rel_error(g.as_slice().unwrap()[idx], num, floor));
        }
        results.push(CheckResult {
            name: format!("input{i}"),
            max_rel: worst,
            checked: picks.len(),
        });
    }

    let pgrads = grads.params();
    for group in store.groups() {
        let ids: Vec<usize> = (0..store.len()).filter(|&id| store.group(id) == group).collect();
        let floor = 1e-3
            * ids
                .iter()
                .flat_map(|&id| pgrads[id].iter())
                .fold(0.0f64, |a, b| a.max(b.abs()));
        let entries: Vec<(usize, usize)> = ids.iter().flat_map(|&id| (0..pgrads[id].len()).map(move |e| (id, e))).collect();
        let picks = sample(&mut rng, entries.len(), per_group.min(entries.len()));
        let mut worst = 0.0f64;
        let mut work = store.clone();
        for p in picks.iter() {
            let (id, e) = entries[p];
            let x = store.value(id).as_slice().expect("standard layout")[e];
            let h = 1e-6 * x.abs().max(1.0);
            work.value_mut(id).as_slice_mut().unwrap()[e] = x + h;
            let fp = eval(&work, inputs);
            work.value_mut(id).as_slice_mut().unwrap()[e] = x - h;
            let fm = eval(&work, inputs);
            work.value_mut(id).as_slice_mut().unwrap()[e] = x;
            let num = (fp - fm) / (2.0 * h);
            worst = worst.max(rel_error(pgrads[id].as_slice().unwrap()[e], num, floor));
        }
        results.push(CheckResult {
            name: group,
            max_rel: worst,
            checked: picks.len(),
        });
    }
    results
}
