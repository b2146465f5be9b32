//! Box-constrained Nelder-Mead simplex search.
//!
//! Vertices that leave the box are projected back onto it. The search works
//! on whatever coordinates the caller passes; callers with badly scaled
//! parameters should normalize to the unit box first.

/// Stopping rule and initial simplex size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Stop when `max(cost) - min(cost)` over the simplex drops below this.
    pub cost_spread_tol: f64,
    pub max_iterations: usize,
    /// Edge length of the initial simplex, as a fraction of each box side.
    pub initial_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            cost_spread_tol: 1e-7,
            max_iterations: 500,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub point: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

fn project(p: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, &lo), &hi) in p.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(lo, hi);
    }
}

/// Minimizes `cost` over the box `[lower, upper]` starting from `start`.
///
/// NaN costs are treated as `+inf`.
pub fn minimize_bounded<F>(
    cost: F,
    start: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &SimplexOptions,
) -> SimplexResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    assert!(n > 0 && lower.len() == n && upper.len() == n);
    let mut evaluations = 0usize;
    let mut eval = |p: &[f64]| {
        evaluations += 1;
        let c = cost(p);
        if c.is_nan() {
            f64::INFINITY
        } else {
            c
        }
    };

    let mut x0 = start.to_vec();
    project(&mut x0, lower, upper);
    let mut simplex = vec![x0.clone()];
    for i in 0..n {
        let mut v = x0.clone();
        let width = upper[i] - lower[i];
        let step = opts.initial_step * width;
        // step inward when the start sits on the upper face
        v[i] = if v[i] + step <= upper[i] { v[i] + step } else { v[i] - step };
        simplex.push(v);
    }
    let mut costs: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let mut order: Vec<usize> = (0..=n).collect();
    let mut iterations = 0;
    let mut converged = false;
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];

    while iterations < opts.max_iterations {
        // stable sort keeps the search deterministic under ties
        order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];
        if costs[worst] - costs[best] < opts.cost_spread_tol {
            converged = true;
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &i in &order[..n] {
            for (c, v) in centroid.iter_mut().zip(&simplex[i]) {
                *c += v / n as f64;
            }
        }

        for j in 0..n {
            trial[j] = centroid[j] + REFLECT * (centroid[j] - simplex[worst][j]);
        }
        project(&mut trial, lower, upper);
        let c_reflect = eval(&trial);

        if c_reflect < costs[best] {
            for j in 0..n {
                trial2[j] = centroid[j] + EXPAND * (trial[j] - centroid[j]);
            }
            project(&mut trial2, lower, upper);
            let c_expand = eval(&trial2);
            if c_expand < c_reflect {
                simplex[worst].copy_from_slice(&trial2);
                costs[worst] = c_expand;
            } else {
                simplex[worst].copy_from_slice(&trial);
                costs[worst] = c_reflect;
            }
            continue;
        }
        if c_reflect < costs[second_worst] {
            simplex[worst].copy_from_slice(&trial);
            costs[worst] = c_reflect;
            continue;
        }

        // outside contraction if the reflection helped at all, inside otherwise
        let (towards, c_ref) = if c_reflect < costs[worst] {
            (trial.clone(), c_reflect)
        } else {
            (simplex[worst].clone(), costs[worst])
        };
        for j in 0..n {
            trial2[j] = centroid[j] + CONTRACT * (towards[j] - centroid[j]);
        }
        project(&mut trial2, lower, upper);
        let c_contract = eval(&trial2);
        if c_contract < c_ref {
            simplex[worst].copy_from_slice(&trial2);
            costs[worst] = c_contract;
            continue;
        }

        let anchor = simplex[best].clone();
        for &i in &order[1..] {
            for j in 0..n {
                simplex[i][j] = anchor[j] + SHRINK * (simplex[i][j] - anchor[j]);
            }
            costs[i] = eval(&simplex[i]);
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)))
        .expect("simplex is non-empty");
    SimplexResult {
        point: simplex[best].clone(),
        cost: costs[best],
        iterations,
        evaluations,
        converged,
    }
}
