//! Central finite-difference verification of tape gradients.

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::prng::Prng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of a gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Which coordinates of each parameter to perturb.
#[derive(Debug, Clone)]
pub enum Coordinates {
    All,
    /// At most this many distinct coordinates per parameter, drawn from the seed.
    Sample { per_param: usize, seed: u64 },
    /// Exactly these flat coordinates, one list per parameter.
    Listed(Vec<Vec<usize>>),
}

fn evaluate<F, S>(f: &S, params: &[Tensor<F>]) -> Result<(F, Tape<F>, Vec<Var>, Var)>
where
    F: Float,
    S: Fn(&mut Tape<F>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let value = tape.value(loss).item()?;
    Ok((value, tape, vars, loss))
}

fn loss_only<F, S>(f: &S, params: &[Tensor<F>]) -> Result<F>
where
    F: Float,
    S: Fn(&mut Tape<F>, &[Var]) -> Result<Var>,
{
    Ok(evaluate(f, params)?.0)
}

/// Compares the tape gradient of the scalar function `f` against central
/// differences `(f(x + eps) - f(x - eps)) / 2 eps` at every coordinate.
pub fn finite_diff_check<F, S>(f: S, params: &[Tensor<F>], epsilon: f64) -> Result<GradCheckReport>
where
    F: Float,
    S: Fn(&mut Tape<F>, &[Var]) -> Result<Var>,
{
    finite_diff_check_with(f, params, epsilon, Coordinates::All)
}

pub fn finite_diff_check_with<F, S>(f: S, params: &[Tensor<F>], epsilon: f64, coords: Coordinates) -> Result<GradCheckReport>
where
    F: Float,
    S: Fn(&mut Tape<F>, &[Var]) -> Result<Var>,
{
    if !(1e-5..=1e-2).contains(&epsilon) {
        return Err(TensorError::config(
            "finite_diff_check",
            format!("epsilon {epsilon} outside [1e-5, 1e-2]"),
        ));
    }
    if let Coordinates::Listed(lists) = &coords {
        if lists.len() != params.len() {
            return Err(TensorError::config(
                "finite_diff_check",
                format!("{} coordinate lists for {} parameters", lists.len(), params.len()),
            ));
        }
        if let Some((pi, &i)) = lists.iter().enumerate().find_map(|(pi, l)| l.iter().find(|&&i| i >= params[pi].len()).map(|i| (pi, i))) {
            return Err(TensorError::config(
                "finite_diff_check",
                format!("coordinate {i} outside parameter {pi} of {} elements", params[pi].len()),
            ));
        }
    }
    let (base, tape, vars, loss_var) = evaluate(&f, params)?;
    let again = loss_only(&f, params)?;
    if base.as_f64().to_bits() != again.as_f64().to_bits() {
        return Err(TensorError::OracleInvalid(format!(
            "two evaluations at the same point differ ({base} vs {again})"
        )));
    }
    let grads = tape.backward(loss_var)?;

    let mut sampler = match coords {
        Coordinates::Sample { seed, .. } => Some(Prng::new(seed)),
        Coordinates::All | Coordinates::Listed(_) => None,
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let mut work: Vec<Tensor<F>> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("params are differentiable leaves").clone();
        let n = params[pi].len();
        let picked: Vec<usize> = match (&coords, sampler.as_mut()) {
            (Coordinates::Listed(lists), _) => lists[pi].clone(),
            (Coordinates::Sample { per_param, .. }, Some(rng)) if *per_param < n => {
                let mut idx: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut idx);
                idx.truncate(*per_param);
                idx.sort_unstable();
                idx
            }
            _ => (0..n).collect(),
        };
        for i in picked {
            let orig = work[pi].data()[i];
            let eps = F::from_f64(epsilon);
            work[pi].data_mut()[i] = orig + eps;
            let plus = loss_only(&f, &work)?;
            work[pi].data_mut()[i] = orig - eps;
            let minus = loss_only(&f, &work)?;
            work[pi].data_mut()[i] = orig;
            let numeric = (plus.as_f64() - minus.as_f64()) / (2.0 * epsilon);
            let a = analytic.data()[i].as_f64();
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.coordinates += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((pi, i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_self_test() {
        let theta = Tensor::<f64>::from_vec(&[3], vec![0.3, -1.2, 2.0]).unwrap();
        let w = Tensor::<f64>::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let report = finite_diff_check(
            |tape, v| {
                // sum(w * theta^2) via a custom square node
                let x = tape.value(v[0]).clone();
                let sq = tape.custom(
                    "square",
                    &[v[0]],
                    x.map(|a| a * a),
                    Box::new(|g, xs| {
                        let d = xs[0].data().iter().zip(g.data()).map(|(a, b)| 2.0 * a * b).collect();
                        vec![Some(Tensor::from_vec(xs[0].dims(), d).unwrap())]
                    }),
                );
                tape.weighted_sum(sq, w.clone())
            },
            &[theta],
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert_eq!(report.coordinates, 3);
    }

    #[test]
    fn epsilon_out_of_range_is_rejected() {
        let p = Tensor::<f64>::zeros(&[1]).unwrap();
        let r = finite_diff_check(|t, v| Ok(t.sum(v[0])), &[p], 0.5);
        assert!(matches!(r, Err(TensorError::Config { .. })));
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let p = Tensor::<f64>::zeros(&[1]).unwrap();
        let r = finite_diff_check(
            |t, v| {
                calls.set(calls.get() + 1.0);
                let s = t.sum(v[0]);
                let bump = t.constant(Tensor::scalar(calls.get()));
                t.add(s, bump)
            },
            &[p],
            1e-3,
        );
        assert!(matches!(r, Err(TensorError::OracleInvalid(_))));
    }

    #[test]
    fn listed_coordinates_only() {
        let p = Tensor::<f64>::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::<f64>::from_vec(&[4], vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let f = |t: &mut Tape<f64>, v: &[Var]| t.weighted_sum(v[0], w.clone());
        let r = finite_diff_check_with(f, std::slice::from_ref(&p), 1e-3, Coordinates::Listed(vec![vec![1, 3]])).unwrap();
        assert_eq!(r.coordinates, 2);
        assert!(r.max_rel_error < 1e-9);
        let bad = finite_diff_check_with(f, std::slice::from_ref(&p), 1e-3, Coordinates::Listed(vec![vec![4]]));
        assert!(matches!(bad, Err(TensorError::Config { .. })));
        let bad = finite_diff_check_with(f, &[p], 1e-3, Coordinates::Listed(vec![]));
        assert!(matches!(bad, Err(TensorError::Config { .. })));
    }
}
