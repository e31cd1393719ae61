//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Mode, Var};
use super::params::ParamStore;
use crate::tensor::TensorError;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tol: f64,
    /// Entries sampled per parameter; `None` checks every entry.
    pub max_entries_per_param: Option<usize>,
    /// Drives entry sampling and every graph's dropout masks.
    pub seed: u64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero up to round-off compare on an absolute scale.
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            max_entries_per_param: None,
            seed: 0,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> Vec<&ParamCheck> {
        self.params.iter().filter(|p| !p.passed).collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of `loss_fn` against central differences for
/// every parameter in `store`. `loss_fn` must build its graph only from the
/// supplied graph and store; it runs on a fresh training-mode graph with the
/// same seed each time, so dropout masks are identical across evaluations.
/// Parameter values are restored before returning.
pub fn check_gradients<F, E>(
    store: &mut ParamStore,
    mut loss_fn: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport, E>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var, E>,
    E: From<TensorError>,
{
    store.zero_grad();
    {
        let mut g = Graph::with_seed(Mode::Train, opts.seed);
        let loss = loss_fn(&mut g, store)?;
        g.backward(loss, store)?;
    }
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.data().to_vec()).collect();

    let mut eval = |store: &ParamStore| -> Result<f64, E> {
        let mut g = Graph::with_seed(Mode::Train, opts.seed);
        let loss = loss_fn(&mut g, store)?;
        Ok(g.value(loss).item()?)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let ids: Vec<_> = store.ids().collect();
    let mut params = Vec::with_capacity(ids.len());
    for (pi, id) in ids.into_iter().enumerate() {
        let n = store.get(id).value.len();
        let entries: Vec<usize> = match opts.max_entries_per_param {
            Some(k) if k < n => {
                let mut e = sample(&mut rng, n, k).into_vec();
                e.sort_unstable();
                e
            }
            _ => (0..n).collect(),
        };
        let mut worst = (0.0, 0, 0.0, 0.0);
        for &j in &entries {
            let orig = store.get(id).value.data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + opts.step;
            let plus = eval(store);
            store.get_mut(id).value.data_mut()[j] = orig - opts.step;
            let minus = eval(store);
            store.get_mut(id).value.data_mut()[j] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.step);
            let a = analytic[pi][j];
            let err = relative_error(a, numeric, opts.abs_floor);
            if err > worst.0 || entries.len() == 1 {
                worst = (err, j, a, numeric);
            }
        }
        params.push(ParamCheck {
            name: store.get(id).name.clone(),
            max_rel_error: worst.0,
            worst_index: worst.1,
            analytic: worst.2,
            numeric: worst.3,
            checked: entries.len(),
            passed: worst.0 < opts.tol,
        });
    }
    Ok(GradCheckReport { tol: opts.tol, params })
}
