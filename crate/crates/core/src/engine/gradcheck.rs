//! Central-difference gradient oracle.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Perturbation size, must lie in `[1e-6, 1e-3]`.
    pub h: f64,
    /// Maximum allowed relative error.
    pub tol: f64,
    /// Coordinates sampled per tensor; smaller tensors are checked in full.
    pub coords_per_tensor: usize,
    /// Denominator floor for the relative error, so that gradients which are
    /// zero up to round-off compare on an absolute scale.
    pub magnitude_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-4,
            tol: 1e-4,
            coords_per_tensor: 20,
            magnitude_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// (flat index, analytic, numeric) of the worst coordinate.
    pub worst: (usize, f64, f64),
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(|t| !t.passed)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backprop gradients of the scalar built by `loss` against
/// central differences `(L(θ+h) − L(θ−h)) / 2h` for every tensor in `store`.
///
/// `loss` must rebuild the graph from scratch on every call. Parameter values
/// and gradient buffers are restored before returning.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    mut loss: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&opts.h) {
        return Err(Error::Config(format!("h must lie in [1e-6, 1e-3], got {}", opts.h)));
    }
    let eval = |store: &ParamStore, loss: &mut F| -> Result<f64> {
        let mut g = Graph::new();
        let root = loss(&mut g, store)?;
        g.forward(store)?;
        g.scalar(root)
    };

    let first = eval(store, &mut loss)?;
    let second = eval(store, &mut loss)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::OracleInvalid(format!(
            "loss differs across identical calls: {first} vs {second}"
        )));
    }

    store.zero_grads();
    {
        let mut g = Graph::new();
        let root = loss(&mut g, store)?;
        g.forward(store)?;
        g.backward(root, store)?;
    }
    let analytic: Vec<_> = store.iter().map(|t| t.grad.clone()).collect();
    store.zero_grads();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ids: Vec<ParamId> = store.ids().collect();
    let mut tensors = Vec::with_capacity(ids.len());
    for id in ids {
        let len = store.get(id).len();
        let coords: Vec<usize> = if len <= opts.coords_per_tensor {
            (0..len).collect()
        } else {
            let mut picked = sample(&mut rng, len, opts.coords_per_tensor).into_vec();
            picked.sort_unstable();
            picked
        };
        let mut max_rel: f64 = 0.0;
        let mut worst = (0, 0.0, 0.0);
        for &k in &coords {
            let original = store.get(id).values.as_slice()[k];
            store.get_mut(id).values.as_mut_slice()[k] = original + opts.h;
            let plus = eval(store, &mut loss);
            store.get_mut(id).values.as_mut_slice()[k] = original - opts.h;
            let minus = eval(store, &mut loss);
            store.get_mut(id).values.as_mut_slice()[k] = original;
            let numeric = (plus? - minus?) / (2.0 * opts.h);
            let a = analytic[id.0].as_slice()[k];
            let rel = relative_error(a, numeric, opts.magnitude_floor);
            if rel >= max_rel {
                max_rel = rel;
                worst = (k, a, numeric);
            }
        }
        tensors.push(TensorCheck {
            name: store.get(id).name.clone(),
            checked: coords.len(),
            max_rel_error: max_rel,
            worst,
            passed: max_rel < opts.tol,
        });
    }
    Ok(GradCheckReport {
        tol: opts.tol,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::graph::CORRUPT_HADAMARD_BACKWARD;
    use crate::engine::{Matrix, ParameterTensor};

    fn matrix_param(store: &mut ParamStore, name: &str, rows: usize, cols: usize, seed: u64) -> ParamId {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        store
            .add(ParameterTensor::new(name, &[rows, cols], Matrix::from_vec(rows, cols, data)).unwrap())
            .unwrap()
    }

    #[test]
    fn sum_sigmoid_wx_passes() {
        let mut store = ParamStore::new();
        let w = matrix_param(&mut store, "W", 3, 3, 1);
        let x = Matrix::from_vec(3, 1, vec![0.4, -1.3, 0.8]);
        let report = finite_diff_check(
            &mut store,
            |g, _| {
                let wv = g.param(w);
                let xv = g.input(x.clone());
                let y = g.matmul(wv, xv);
                let s = g.sigmoid(y);
                Ok(g.sum(s))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.tensors[0].checked, 9);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut store = ParamStore::new();
        let w = matrix_param(&mut store, "W", 2, 2, 3);
        let report = finite_diff_check(
            &mut store,
            |g, _| {
                let _unused = g.param(w);
                let c = g.input(Matrix::scalar(4.2));
                Ok(g.sum(c))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed());
        assert_eq!(report.tensors[0].worst.1, 0.0);
        assert_eq!(report.tensors[0].worst.2, 0.0);
    }

    #[test]
    fn corrupted_hadamard_backward_is_caught() {
        let mut store = ParamStore::new();
        let a = matrix_param(&mut store, "a", 2, 4, 5);
        let b = matrix_param(&mut store, "b", 2, 4, 6);
        let build = |g: &mut Graph, _: &ParamStore| {
            let av = g.param(a);
            let bv = g.param(b);
            let h = g.hadamard(av, bv);
            let s = g.sigmoid(h);
            Ok(g.sum(s))
        };
        let clean = finite_diff_check(&mut store, build, &GradCheckOptions::default()).unwrap();
        assert!(clean.passed());

        CORRUPT_HADAMARD_BACKWARD.with(|c| c.set(true));
        let corrupted = finite_diff_check(&mut store, build, &GradCheckOptions::default());
        CORRUPT_HADAMARD_BACKWARD.with(|c| c.set(false));
        let corrupted = corrupted.unwrap();
        assert!(!corrupted.passed());
        let failed: Vec<_> = corrupted.failures().map(|t| t.name.as_str()).collect();
        assert_eq!(failed, vec!["b"]);
    }

    #[test]
    fn rejects_out_of_range_step() {
        let mut store = ParamStore::new();
        matrix_param(&mut store, "W", 1, 1, 0);
        let opts = GradCheckOptions {
            h: 1e-2,
            ..GradCheckOptions::default()
        };
        let res = finite_diff_check(&mut store, |g, _| Ok(g.input(Matrix::scalar(0.0))), &opts);
        assert!(matches!(res, Err(Error::Config(_))));
    }

    #[test]
    fn non_deterministic_loss_is_rejected() {
        let mut store = ParamStore::new();
        matrix_param(&mut store, "W", 1, 1, 0);
        let mut calls = 0.0;
        let res = finite_diff_check(
            &mut store,
            |g, _| {
                calls += 1.0;
                Ok(g.input(Matrix::scalar(calls)))
            },
            &GradCheckOptions::default(),
        );
        assert!(matches!(res, Err(Error::OracleInvalid(_))));
    }
}
