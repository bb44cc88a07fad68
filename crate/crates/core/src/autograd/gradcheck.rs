//! Central finite-difference gradient checking.
//!
//! Entries whose `+eps` or `-eps` evaluation flips a relu activation or a
//! max-pool winner are excluded from the report and counted as skipped;
//! the function is not differentiable there.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Largest `|analytic - numeric|`; separates roundoff on near-zero
    /// gradients from real disagreement.
    pub max_abs_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub eps: f64,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.params.iter().map(|p| p.skipped).sum()
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

fn evaluate<F>(f: &F, store: &ParamStore) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let value = g.value(out);
    if value.numel() != 1 {
        return Err(Error::Input(format!(
            "gradient check needs a scalar function, got shape {:?}",
            value.shape()
        )));
    }
    Ok((value.data()[0], g.kink_signature()))
}

/// Compares the reverse-mode gradient of `f` with central differences for
/// every entry of every parameter in `store`. `f` runs in evaluation mode,
/// so dropout is off.
pub fn finite_diff_check<F>(store: &ParamStore, eps: f64, tolerance: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config(format!("gradient check eps must be positive, got {eps}")));
    }
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    if g.value(out).numel() != 1 {
        return Err(Error::Input(format!(
            "gradient check needs a scalar function, got shape {:?}",
            g.value(out).shape()
        )));
    }
    let base_signature = g.kink_signature();
    let grads = g.backward(out)?;

    let mut work = store.clone();
    let mut params = Vec::with_capacity(store.len());
    for id in store.ids() {
        let n = store.get(id).numel();
        let analytic: Vec<f64> = match grads.param(id) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; n],
        };
        let mut check = ParamCheck {
            name: store.name(id).to_string(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            checked: 0,
            skipped: 0,
        };
        for j in 0..n {
            let original = store.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = original + eps;
            let (plus, sig_plus) = evaluate(&f, &work)?;
            work.get_mut(id).data_mut()[j] = original - eps;
            let (minus, sig_minus) = evaluate(&f, &work)?;
            work.get_mut(id).data_mut()[j] = original;

            if sig_plus != base_signature || sig_minus != base_signature {
                check.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[j], numeric);
            check.max_rel_error = check.max_rel_error.max(err);
            check.max_abs_error = check.max_abs_error.max((analytic[j] - numeric).abs());
            check.checked += 1;
        }
        params.push(check);
    }

    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    let max_abs_error = params.iter().map(|p| p.max_abs_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params,
        eps,
        tolerance,
        max_rel_error,
        max_abs_error,
        passed: max_rel_error < tolerance,
    })
}

/// Convenience wrapper: checks a function of plain input tensors.
pub fn check_inputs<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("input{i}"), t.clone()))
        .collect();
    finite_diff_check(&store, eps, DEFAULT_TOLERANCE, |g, s| {
        let vars = ids.iter().map(|&id| g.param(s, id)).collect::<Result<Vec<_>>>()?;
        f(g, &vars)
    })
}


fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Reduces an arbitrary-shape output to a scalar with fixed random
/// weights so every output entry contributes a distinct gradient.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.value(y).dims2();
    let w = g.constant(random(r, c, seed))?;
    let y = g.reshape(y, vec![r, c])?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>);

/// Checks every differentiable primitive, plus the `linear` and
/// `layer_norm` composites, on small random operands. Dropout is the
/// identity in evaluation mode and is covered by its own unit test.
pub fn check_primitives(eps: f64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let a = random(3, 4, 1);
    let b = random(4, 2, 2);
    let c = random(3, 4, 3);
    let cases: Vec<Case> = vec![
        ("matmul", vec![a.clone(), b.clone()], Box::new(|g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y, 10)
        })),
        ("matmul_sorted", vec![a.clone(), b.clone()], Box::new(|g, v| {
            let y = g.matmul_sorted(v[0], v[1])?;
            weighted_sum(g, y, 30)
        })),
        ("add", vec![a.clone(), c.clone()], Box::new(|g, v| {
            let y = g.add(v[0], v[1])?;
            weighted_sum(g, y, 11)
        })),
        ("mul", vec![a.clone(), c.clone()], Box::new(|g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y, 12)
        })),
        ("scale", vec![a.clone()], Box::new(|g, v| {
            let y = g.scale(v[0], -1.7)?;
            weighted_sum(g, y, 13)
        })),
        ("relu", vec![a.clone()], Box::new(|g, v| {
            let y = g.relu(v[0])?;
            weighted_sum(g, y, 14)
        })),
        ("softmax_rows", vec![a.clone()], Box::new(|g, v| {
            let y = g.softmax_rows(v[0])?;
            weighted_sum(g, y, 15)
        })),
        ("layer_norm_rows", vec![a.clone()], Box::new(|g, v| {
            let y = g.layer_norm_rows(v[0], 1e-5)?;
            weighted_sum(g, y, 16)
        })),
        ("conv1d", vec![random(5, 2, 4), random(6, 3, 5)], Box::new(|g, v| {
            let y = g.conv1d(v[0], v[1], 3)?;
            weighted_sum(g, y, 17)
        })),
        ("max_pool_rows", vec![a.clone()], Box::new(|g, v| {
            let y = g.max_pool_rows(v[0])?;
            weighted_sum(g, y, 18)
        })),
        ("concat_cols", vec![a.clone(), random(3, 2, 6)], Box::new(|g, v| {
            let y = g.concat_cols(&[v[0], v[1]])?;
            weighted_sum(g, y, 19)
        })),
        ("concat_rows", vec![a.clone(), random(1, 4, 7)], Box::new(|g, v| {
            let y = g.concat_rows(&[v[0], v[1]])?;
            weighted_sum(g, y, 20)
        })),
        ("broadcast_rows", vec![random(1, 4, 8)], Box::new(|g, v| {
            let y = g.broadcast_rows(v[0], 3)?;
            weighted_sum(g, y, 21)
        })),
        ("flatten", vec![a.clone()], Box::new(|g, v| {
            let y = g.flatten(v[0])?;
            weighted_sum(g, y, 22)
        })),
        ("gather_rows", vec![a.clone()], Box::new(|g, v| {
            let y = g.gather_rows(v[0], &[Some(2), None, Some(0), Some(2)])?;
            weighted_sum(g, y, 23)
        })),
        ("softmax_cross_entropy", vec![a.clone()], Box::new(|g, v| {
            g.softmax_cross_entropy(v[0], &[1, 3, 0])
        })),
        ("transpose", vec![a.clone()], Box::new(|g, v| {
            let y = g.transpose(v[0])?;
            weighted_sum(g, y, 24)
        })),
        ("slice_cols", vec![a.clone()], Box::new(|g, v| {
            let y = g.slice_cols(v[0], 1, 2)?;
            weighted_sum(g, y, 25)
        })),
        ("linear", vec![a.clone(), b.clone(), random(1, 2, 9)], Box::new(|g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            weighted_sum(g, y, 26)
        })),
        ("layer_norm", vec![a.clone(), random(1, 4, 27), random(1, 4, 28)], Box::new(|g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            weighted_sum(g, y, 29)
        })),
    ];
    cases
        .into_iter()
        .map(|(name, inputs, f)| Ok((name, check_inputs(&inputs, eps, |g, v| f(g, v))?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_passes(report: &GradCheckReport, what: &str) {
        assert!(
            report.passed,
            "{what}: max rel error {} ({:?})",
            report.max_rel_error,
            report.worst()
        );
        assert!(report.checked() > 0, "{what}: nothing checked");
    }

    #[test]
    fn linear_map_is_exact() {
        let x = Tensor::row_vector(vec![0.5, -1.0, 2.0]);
        let w = Tensor::matrix(3, 1, vec![0.1, 0.2, -0.3]);
        let r = check_inputs(&[x, w], DEFAULT_EPS, |g, v| {
            let y = g.matmul(v[0], v[1])?;
            g.sum(y)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-10, "{}", r.max_rel_error);
    }

    #[test]
    fn every_primitive_matches_central_differences() {
        for (name, report) in check_primitives(DEFAULT_EPS).unwrap() {
            assert_passes(&report, name);
        }
    }

    #[test]
    fn relu_kink_entries_are_excluded() {
        // 2e-6 sits inside the +-1e-5 perturbation band around the kink
        let x = Tensor::row_vector(vec![2e-6, 0.5]);
        let report = check_inputs(&[x], DEFAULT_EPS, |g, v| {
            let y = g.relu(v[0])?;
            g.sum(y)
        })
        .unwrap();
        assert_eq!(report.skipped(), 1);
        assert_eq!(report.checked(), 1);
        assert!(report.passed);
    }

    #[test]
    fn non_scalar_function_is_rejected() {
        let x = Tensor::row_vector(vec![1.0, 2.0]);
        let err = check_inputs(&[x], DEFAULT_EPS, |g, v| g.scale(v[0], 2.0)).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let z = Tensor::row_vector(vec![1.2, -0.4, 0.1, 2.2]);
        let report = check_inputs(&[z], 1e-5, |g, v| g.softmax_cross_entropy(v[0], &[2])).unwrap();
        assert_passes(&report, "ce");
    }
}
