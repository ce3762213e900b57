//! Finite-difference verification of every analytic gradient the learner
//! uses: the three towers and the fast weights of the per-item loss, and
//! the first-order meta-gradient of the query loss.

use std::fmt;

use crate::data::RatedItem;
use crate::error::{Error, Result};
use crate::meta::{init_local, local_adapt, query_meta_grad, MetaHyper, MetaState};
use crate::model::{backward_all, forward, loss, FastWeights, ModelDims, ParamSet};
use crate::numerics::{finite_diff_grad, relative_error, Params, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub dims: ModelDims,
    pub slots: usize,
    /// Test hook: perturbs one analytic coordinate so the check must fail.
    pub corrupt: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 50,
            epsilon: 1e-5,
            tolerance: 1e-4,
            seed: 0,
            dims: ModelDims {
                user_dim: 6,
                item_dim: 5,
                embed_dim: 8,
                layers: 2,
            },
            slots: 3,
            corrupt: false,
        }
    }
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.instances == 0 {
            return Err(Error::Config("at least one instance is needed".into()));
        }
        self.dims.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub name: &'static str,
    pub max_relative_error: f64,
    /// Coordinates compared, summed over instances.
    pub coordinates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupResult>,
    pub tolerance: f64,
    pub instances: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_relative_error < self.tolerance)
    }

    pub fn group(&self, name: &str) -> Option<&GroupResult> {
        self.groups.iter().find(|g| g.name == name)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            let verdict = if g.max_relative_error < self.tolerance { "PASS" } else { "FAIL" };
            writeln!(
                f,
                "{verdict} {:<13} max relative error {:.3e} over {} coordinates",
                g.name, g.max_relative_error, g.coordinates
            )?;
        }
        write!(
            f,
            "{} ({} instances, tolerance {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.instances,
            self.tolerance
        )
    }
}

pub const GROUPS: [&str; 5] = ["user_tower", "item_tower", "rating_head", "fast_weights", "meta_gradient"];

fn worst(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

fn random_item(rng: &mut Rng, dims: &ModelDims, id: usize) -> RatedItem {
    RatedItem {
        item_id: format!("item{id}"),
        profile: rng.uniform_vec(dims.item_dim, -1.0, 1.0),
        rating: rng.uniform(1.0, 5.0),
        order_key: id as i64,
    }
}

pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    cfg.validate()?;
    let dims = cfg.dims;
    let mut errors = [0.0f64; 5];
    let mut counts = [0usize; 5];

    for instance in 0..cfg.instances {
        let mut rng = Rng::stream(cfg.seed, instance as u64);

        // Per-item loss at a random point.
        let params = ParamSet::init(&dims, &mut rng)?;
        let fast = FastWeights::new(rng.normal_matrix(dims.embed_dim, 2 * dims.embed_dim, 0.3))?;
        let pu = rng.uniform_vec(dims.user_dim, -1.0, 1.0);
        let pi = rng.uniform_vec(dims.item_dim, -1.0, 1.0);
        let y = rng.uniform(1.0, 5.0);
        let pred = forward(&params, &fast, &pu, &pi)?;
        let mut g = backward_all(&pred, y, &params, &fast)?;
        if cfg.corrupt {
            let mut v = g.params.user.flatten();
            v[0] += 1e-3 * (1.0 + v[0].abs());
            g.params.user.assign(&v);
        }
        let numeric = finite_diff_grad(
            |(p, f): &(ParamSet, FastWeights)| {
                forward(p, f, &pu, &pi).map_or(f64::NAN, |pred| loss(&pred, y))
            },
            &(params.clone(), fast.clone()),
            cfg.epsilon,
        )?;
        let (np, nf) = numeric;
        let pairs = [
            (g.params.user.flatten(), np.user.flatten()),
            (g.params.item.flatten(), np.item.flatten()),
            (g.params.head.flatten(), np.head.flatten()),
            (g.fast.as_slice().to_vec(), nf.flatten()),
        ];
        for (i, (a, n)) in pairs.iter().enumerate() {
            errors[i] = errors[i].max(worst(a, n));
            counts[i] += a.len();
        }

        // First-order meta-gradient: query-loss gradient at the adapted point.
        let mut state = MetaState::init(&dims, cfg.slots, MetaHyper::default(), cfg.seed ^ instance as u64)?;
        for slot in state.features.grads_mut() {
            let n = slot.num_params();
            slot.assign(&rng.uniform_vec(n, -0.5, 0.5));
        }
        let support: Vec<RatedItem> = (0..3).map(|i| random_item(&mut rng, &dims, i)).collect();
        let query: Vec<RatedItem> = (3..5).map(|i| random_item(&mut rng, &dims, i)).collect();
        let profile = rng.uniform_vec(dims.user_dim, 0.0, 1.0);
        let user = local_adapt(init_local(&state, &profile)?, &support, 0.05, 1)?;
        let analytic = query_meta_grad(&user, &query)?;
        let numeric = finite_diff_grad(
            |p: &ParamSet| {
                let total: f64 = query
                    .iter()
                    .map(|q| forward(p, &user.fast, &user.profile, &q.profile).map_or(f64::NAN, |pred| loss(&pred, q.rating)))
                    .sum();
                total / query.len() as f64
            },
            &user.local,
            cfg.epsilon,
        )?;
        let a = analytic.flatten();
        errors[4] = errors[4].max(worst(&a, &numeric.flatten()));
        counts[4] += a.len();
    }

    Ok(GradcheckReport {
        groups: GROUPS
            .iter()
            .zip(errors.iter().zip(counts))
            .map(|(&name, (&e, c))| GroupResult {
                name,
                max_relative_error: e,
                coordinates: c,
            })
            .collect(),
        tolerance: cfg.tolerance,
        instances: cfg.instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes() {
        let report = run_gradcheck(&GradcheckConfig { instances: 5, ..Default::default() }).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.groups.len(), 5);
        assert!(report.groups.iter().all(|g| g.coordinates > 0));
    }

    #[test]
    fn corrupted_gradient_fails() {
        let report = run_gradcheck(&GradcheckConfig {
            instances: 2,
            corrupt: true,
            ..Default::default()
        })
        .unwrap();
        assert!(!report.passed());
        assert!(report.group("user_tower").unwrap().max_relative_error >= 1e-4);
        assert!(report.group("item_tower").unwrap().max_relative_error < 1e-4);
    }

    #[test]
    fn zero_epsilon_is_config_error() {
        let err = run_gradcheck(&GradcheckConfig { epsilon: 0.0, ..Default::default() }).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
