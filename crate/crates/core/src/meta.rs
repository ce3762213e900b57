//! Meta-optimisation: personalised initialisation from the memory banks,
//! per-item local adaptation on a user's support set, first-order global
//! updates from query losses, and the training / testing loops.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Episode, RatedItem};
use crate::error::{Error, Result};
use crate::memory::{
    attend, bias_term, read_task, write_grad, write_profile, write_task, AttentionVector,
    FeatureMemory, MemoryHyper, TaskMemory,
};
use crate::model::{backward_all, forward, loss, FastWeights, LayerStack, ModelDims, ParamSet};
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaHyper {
    /// Local (per-user) learning rate.
    pub rho: f64,
    /// Global learning rate.
    pub lambda: f64,
    pub memory: MemoryHyper,
    /// Users per global update.
    pub user_batch: usize,
    pub epochs: usize,
    /// Passes over the support set during local adaptation.
    pub support_passes: usize,
}

impl Default for MetaHyper {
    fn default() -> Self {
        Self {
            rho: 0.01,
            lambda: 0.05,
            memory: MemoryHyper::default(),
            user_batch: 32,
            epochs: 30,
            support_passes: 1,
        }
    }
}

impl MetaHyper {
    pub fn validate(&self) -> Result<()> {
        self.memory.validate()?;
        for (name, v) in [("rho", self.rho), ("lambda", self.lambda)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if self.user_batch == 0 {
            return Err(Error::Config("user_batch must be at least 1".into()));
        }
        if self.support_passes == 0 {
            return Err(Error::Config("support_passes must be at least 1".into()));
        }
        Ok(())
    }

    /// The no-memory reduction of `self`: no bias term and the gradient
    /// memory never written. Pair with a single memory slot.
    pub fn without_memory(mut self) -> Self {
        self.memory.tau = 0.0;
        self.memory.beta = 0.0;
        self
    }
}

/// Everything the meta-learner owns: the shared initialisation and both
/// memory banks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaState {
    pub global: ParamSet,
    pub features: FeatureMemory,
    pub tasks: TaskMemory,
    pub hyper: MetaHyper,
}

impl MetaState {
    /// Seeded initial state: global towers, then profile memory, then task
    /// memory, all drawn from one stream.
    pub fn init(dims: &ModelDims, slots: usize, hyper: MetaHyper, seed: u64) -> Result<Self> {
        dims.validate()?;
        hyper.validate()?;
        if slots == 0 {
            return Err(Error::Config("memory slot count K must be at least 1".into()));
        }
        let mut rng = Rng::new(seed);
        let global = ParamSet::init(dims, &mut rng)?;
        let features = FeatureMemory::init(slots, &global.user, &mut rng)?;
        let tasks = TaskMemory::init(slots, dims.embed_dim, &mut rng)?;
        let state = Self {
            global,
            features,
            tasks,
            hyper,
        };
        state.check_consistency()?;
        Ok(state)
    }

    pub fn dims(&self) -> ModelDims {
        self.global.dims()
    }

    pub fn slots(&self) -> usize {
        self.features.slots()
    }

    pub fn check_consistency(&self) -> Result<()> {
        let d = self.dims();
        let ok = self.features.profile_dim() == d.user_dim
            && self.features.grads().iter().all(|g| g.same_shape(&self.global.user))
            && self.tasks.len() == self.features.slots()
            && self.tasks.embed_dim() == d.embed_dim
            && self.global.head.output_dim() == 1
            && self.global.item.output_dim() == d.embed_dim
            && self.global.head.input_dim() == d.embed_dim;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract("meta state members disagree on shapes".into()))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.global.is_finite() && self.features.is_finite() && self.tasks.is_finite()
    }
}

/// A user's local model, from initialisation through adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedUser {
    pub profile: Vec<f64>,
    pub local: ParamSet,
    pub fast: FastWeights,
    pub attention: AttentionVector,
    pub bias: LayerStack,
    /// Mean support-set user-tower gradient at the initialisation point;
    /// zero until [`local_adapt`] runs.
    pub init_grad_user: LayerStack,
}

/// `θ_u = φ_u - τ b_u`, `θ_i = φ_i`, `θ_r = φ_r`, fast weights read from the
/// task memory, all under the attention computed from `profile`.
pub fn init_local(state: &MetaState, profile: &[f64]) -> Result<AdaptedUser> {
    state.check_consistency()?;
    let attention = attend(profile, &state.features)?;
    let bias = bias_term(&attention, &state.features)?;
    let mut local = state.global.clone();
    local.user.axpy(-state.hyper.memory.tau, &bias)?;
    let fast = read_task(&attention, &state.tasks)?;
    Ok(AdaptedUser {
        profile: profile.to_vec(),
        init_grad_user: bias.zeros_like(),
        local,
        fast,
        attention,
        bias,
    })
}

/// One gradient step per support item, in order, on all three towers and
/// the fast weights. Before stepping, records the mean user-tower gradient
/// over the support set at the initialisation point.
pub fn local_adapt(
    mut user: AdaptedUser,
    support: &[RatedItem],
    rho: f64,
    passes: usize,
) -> Result<AdaptedUser> {
    if support.is_empty() {
        return Err(Error::Contract("local adaptation needs a non-empty support set".into()));
    }
    let mut init_grad = user.local.user.zeros_like();
    for (idx, item) in support.iter().enumerate() {
        let pred = forward(&user.local, &user.fast, &user.profile, &item.profile)?;
        if !pred.value.is_finite() {
            return Err(Error::Divergence(format!("non-finite prediction at support item {idx}")));
        }
        let g = backward_all(&pred, item.rating, &user.local, &user.fast)?;
        init_grad.axpy(1.0, &g.params.user)?;
    }
    init_grad.scale(1.0 / support.len() as f64);
    user.init_grad_user = init_grad;

    for _ in 0..passes {
        for (idx, item) in support.iter().enumerate() {
            let pred = forward(&user.local, &user.fast, &user.profile, &item.profile)?;
            let l = loss(&pred, item.rating);
            if !l.is_finite() {
                return Err(Error::Divergence(format!("non-finite loss at support item {idx}")));
            }
            let g = backward_all(&pred, item.rating, &user.local, &user.fast)?;
            user.local.axpy(-rho, &g.params)?;
            user.fast.matrix_mut().axpy(-rho, &g.fast)?;
        }
    }
    Ok(user)
}

/// First-order meta-gradient: the mean query-loss gradient at the adapted
/// parameters, used as the gradient for the shared initialisation.
pub fn query_meta_grad(user: &AdaptedUser, query: &[RatedItem]) -> Result<ParamSet> {
    if query.is_empty() {
        return Err(Error::Contract("meta-gradient needs a non-empty query set".into()));
    }
    let mut total = user.local.zeros_like();
    for item in query {
        let pred = forward(&user.local, &user.fast, &user.profile, &item.profile)?;
        let g = backward_all(&pred, item.rating, &user.local, &user.fast)?;
        total.axpy(1.0, &g.params)?;
    }
    total.scale(1.0 / query.len() as f64);
    if !total.is_finite() {
        return Err(Error::Divergence("non-finite meta-gradient".into()));
    }
    Ok(total)
}

/// `φ ← φ - λ · mean(batch_grads)`.
pub fn global_update(state: &mut MetaState, batch_grads: &[ParamSet], lambda: f64) -> Result<()> {
    let first = batch_grads
        .first()
        .ok_or_else(|| Error::Contract("global update needs at least one gradient".into()))?;
    let mut mean = first.zeros_like();
    for g in batch_grads {
        if !g.same_shape(&state.global) {
            return Err(Error::Contract("meta-gradient shape differs from global parameters".into()));
        }
        mean.axpy(1.0, g)?;
    }
    state.global.axpy(-lambda / batch_grads.len() as f64, &mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_query_mae: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Seeds the per-epoch user order.
    pub seed: u64,
    /// Predictions are clamped to this range for the logged MAE only.
    pub rating_range: (f64, f64),
    /// Threads used for the per-user work inside a batch.
    pub workers: usize,
    /// First epoch to run; non-zero when resuming.
    pub start_epoch: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            rating_range: (1.0, 5.0),
            workers: 1,
            start_epoch: 0,
        }
    }
}

/// What one training user contributes to a batch.
struct UserOutcome {
    user_id: u64,
    meta_grad: ParamSet,
    adapted: AdaptedUser,
    abs_errors: Vec<f64>,
}

fn run_training_user(state: &MetaState, ep: &Episode, range: (f64, f64)) -> Result<UserOutcome> {
    let user = init_local(state, &ep.user_profile)?;
    let adapted = local_adapt(user, &ep.support, state.hyper.rho, state.hyper.support_passes)?;
    let meta_grad = query_meta_grad(&adapted, &ep.query)?;
    let abs_errors = ep
        .query
        .iter()
        .map(|item| {
            let p = forward(&adapted.local, &adapted.fast, &adapted.profile, &item.profile)?;
            Ok((p.value.clamp(range.0, range.1) - item.rating).abs())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UserOutcome {
        user_id: ep.user_id,
        meta_grad,
        adapted,
        abs_errors,
    })
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Runs the training loop, calling `on_epoch` after each completed epoch.
///
/// Users in a batch are adapted against the same snapshot of the state;
/// the global update and the per-user memory writes are then applied in
/// ascending user-id order, so the result does not depend on `workers`.
pub fn train_with<F>(
    state: &mut MetaState,
    episodes: &[Episode],
    opts: &TrainOptions,
    mut on_epoch: F,
) -> Result<Vec<EpochMetrics>>
where
    F: FnMut(&MetaState, &EpochMetrics) -> Result<()>,
{
    state.hyper.validate()?;
    state.check_consistency()?;
    if episodes.is_empty() {
        return Err(Error::Data("no training episodes".into()));
    }
    if let Some(ep) = episodes.iter().find(|e| e.support.is_empty() || e.query.is_empty()) {
        return Err(Error::Data(format!(
            "training user {} needs non-empty support and query sets",
            ep.user_id
        )));
    }
    let pool = thread_pool(opts.workers)?;
    let hyper = state.hyper;
    let mut log = Vec::new();

    for epoch in opts.start_epoch..hyper.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..episodes.len()).collect();
        Rng::stream(opts.seed, epoch as u64 + 1).shuffle(&mut order);

        let mut abs_sum = 0.0;
        let mut abs_count = 0usize;
        for batch in order.chunks(hyper.user_batch) {
            let snapshot: &MetaState = state;
            let mut outcomes = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| run_training_user(snapshot, &episodes[i], opts.rating_range))
                    .collect::<Vec<_>>()
            });
            // Report the first failure in user order, whatever the scheduling.
            outcomes.sort_by_key(|o| o.as_ref().map(|o| o.user_id).unwrap_or(0));
            let mut outcomes = outcomes
                .into_iter()
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Divergence(format!("epoch {epoch}: {e}")))?;
            outcomes.sort_by_key(|o| o.user_id);

            let grads: Vec<ParamSet> = outcomes.iter().map(|o| o.meta_grad.clone()).collect();
            global_update(state, &grads, hyper.lambda)?;
            for o in &outcomes {
                let a = &o.adapted;
                write_profile(&mut state.features, &a.attention, &a.profile, hyper.memory.alpha)?;
                write_grad(&mut state.features, &a.attention, &a.init_grad_user, hyper.memory.beta)?;
                write_task(&mut state.tasks, &a.attention, &a.fast, hyper.memory.gamma)?;
                abs_sum += o.abs_errors.iter().sum::<f64>();
                abs_count += o.abs_errors.len();
            }
            if !state.is_finite() {
                let who = outcomes.last().map_or(0, |o| o.user_id);
                return Err(Error::Divergence(format!(
                    "epoch {epoch}: state became non-finite after the batch ending at user {who}"
                )));
            }
        }
        let metrics = EpochMetrics {
            epoch,
            train_query_mae: abs_sum / abs_count as f64,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: train query MAE {:.4}", metrics.train_query_mae);
        on_epoch(state, &metrics)?;
        log.push(metrics);
    }
    Ok(log)
}

pub fn train(state: &mut MetaState, episodes: &[Episode], opts: &TrainOptions) -> Result<Vec<EpochMetrics>> {
    train_with(state, episodes, opts, |_, _| Ok(()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserPredictions {
    pub user_id: u64,
    /// Raw predictions, aligned with the episode's query items.
    pub predictions: Vec<f64>,
    /// False when the support set was empty and the initialised parameters
    /// were used as-is.
    pub adapted: bool,
}

/// Adapts to the episode's support set and predicts its query items. The
/// state is only read.
pub fn test_user(state: &MetaState, episode: &Episode) -> Result<UserPredictions> {
    let mut user = init_local(state, &episode.user_profile)?;
    let adapted = !episode.support.is_empty();
    if adapted {
        user = local_adapt(user, &episode.support, state.hyper.rho, state.hyper.support_passes)?;
    }
    let predictions = episode
        .query
        .iter()
        .map(|item| forward(&user.local, &user.fast, &user.profile, &item.profile).map(|p| p.value))
        .collect::<Result<Vec<_>>>()?;
    Ok(UserPredictions {
        user_id: episode.user_id,
        predictions,
        adapted,
    })
}

/// [`test_user`] over many episodes, in the order given.
pub fn test_users(state: &MetaState, episodes: &[Episode], workers: usize) -> Result<Vec<UserPredictions>> {
    let pool = thread_pool(workers)?;
    pool.install(|| episodes.par_iter().map(|ep| test_user(state, ep)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ProfileVector;
    use crate::numerics::{finite_diff_grad, relative_error, Matrix, Params};
    use approx::assert_abs_diff_eq;

    fn dims() -> ModelDims {
        ModelDims {
            user_dim: 6,
            item_dim: 5,
            embed_dim: 8,
            layers: 2,
        }
    }

    fn item(rng: &mut Rng, id: usize) -> RatedItem {
        RatedItem {
            item_id: format!("i{id}"),
            profile: rng.uniform_vec(5, 0.0, 1.0),
            rating: (1 + rng.below(5)) as f64,
            order_key: id as i64,
        }
    }

    fn episode(rng: &mut Rng, user_id: u64, support: usize, query: usize) -> Episode {
        let items: Vec<RatedItem> = (0..support + query).map(|i| item(rng, i)).collect();
        Episode {
            user_id,
            user_profile: ProfileVector::new(rng.uniform_vec(6, 0.0, 1.0), "test"),
            support: items[..support].to_vec(),
            query: items[support..].to_vec(),
            scenarios: Vec::new(),
        }
    }

    fn state(seed: u64) -> MetaState {
        let mut s = MetaState::init(&dims(), 3, MetaHyper::default(), seed).unwrap();
        let mut rng = Rng::new(seed + 100);
        for g in s.features.grads_mut() {
            let n = g.num_params();
            g.assign(&rng.uniform_vec(n, -1.0, 1.0));
        }
        s
    }

    #[test]
    fn zero_tau_keeps_shared_user_tower() {
        let mut s = state(1);
        s.hyper.memory.tau = 0.0;
        let u = init_local(&s, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(u.local, s.global);
    }

    #[test]
    fn zero_gradient_memory_keeps_shared_user_tower() {
        let s = MetaState::init(&dims(), 3, MetaHyper::default(), 2).unwrap();
        let u = init_local(&s, &[0.5; 6]).unwrap();
        assert_eq!(u.local, s.global);
    }

    #[test]
    fn bias_shifts_user_tower_by_tau() {
        let mut s = MetaState::init(&dims(), 1, MetaHyper::default(), 3).unwrap();
        s.global.user.layers_mut()[0].weights[(0, 0)] = 1.0;
        s.features.grads_mut()[0].layers_mut()[0].weights[(0, 0)] = 2.0;
        s.hyper.memory.tau = 0.1;
        let u = init_local(&s, &[0.5; 6]).unwrap();
        assert_abs_diff_eq!(u.local.user.layers()[0].weights[(0, 0)], 0.8, epsilon = 1e-15);
        assert_eq!(u.local.item, s.global.item);
        assert_eq!(u.local.head, s.global.head);
        assert_eq!(u.fast.matrix(), &s.tasks.slots()[0]);
    }

    #[test]
    fn zero_rho_adapts_nothing_but_records_gradient() {
        let s = state(4);
        let mut rng = Rng::new(4);
        let ep = episode(&mut rng, 1, 5, 2);
        let u = init_local(&s, &ep.user_profile).unwrap();
        let a = local_adapt(u.clone(), &ep.support, 0.0, 1).unwrap();
        assert_eq!(a.local, u.local);
        assert_eq!(a.fast, u.fast);
        assert!(a.init_grad_user.values().any(|x| x != 0.0));
    }

    #[test]
    fn exact_support_item_leaves_parameters() {
        let s = state(5);
        let mut rng = Rng::new(5);
        let mut ep = episode(&mut rng, 1, 1, 1);
        let u = init_local(&s, &ep.user_profile).unwrap();
        ep.support[0].rating = forward(&u.local, &u.fast, &u.profile, &ep.support[0].profile)
            .unwrap()
            .value;
        let a = local_adapt(u.clone(), &ep.support, 0.5, 1).unwrap();
        assert_eq!(a.local, u.local);
        assert_eq!(a.fast, u.fast);
        assert!(local_adapt(u, &[], 0.1, 1).is_err());
    }

    #[test]
    fn single_step_matches_finite_difference_step() {
        let s = state(6);
        let mut rng = Rng::new(6);
        let ep = episode(&mut rng, 1, 1, 1);
        let rho = 0.05;
        let u = init_local(&s, &ep.user_profile).unwrap();
        let it = &ep.support[0];
        let numeric = finite_diff_grad(
            |(p, f): &(ParamSet, FastWeights)| loss(&forward(p, f, &u.profile, &it.profile).unwrap(), it.rating),
            &(u.local.clone(), u.fast.clone()),
            1e-5,
        )
        .unwrap();
        let mut expected = (u.local.clone(), u.fast.clone()).flatten();
        for (e, g) in expected.iter_mut().zip(numeric.flatten()) {
            *e -= rho * g;
        }
        let a = local_adapt(u, &ep.support, rho, 1).unwrap();
        for (x, e) in (a.local, a.fast).flatten().iter().zip(&expected) {
            assert_abs_diff_eq!(*x, *e, epsilon = 1e-8);
        }
    }

    #[test]
    fn small_step_decreases_item_loss() {
        for seed in 0..20 {
            let s = state(40 + seed);
            let mut rng = Rng::new(seed);
            let ep = episode(&mut rng, 1, 1, 1);
            let u = init_local(&s, &ep.user_profile).unwrap();
            let it = &ep.support[0];
            let before = loss(&forward(&u.local, &u.fast, &u.profile, &it.profile).unwrap(), it.rating);
            let a = local_adapt(u, &ep.support, 1e-3, 1).unwrap();
            let after = loss(&forward(&a.local, &a.fast, &a.profile, &it.profile).unwrap(), it.rating);
            assert!(after < before || before == 0.0, "seed {seed}: {after} >= {before}");
        }
    }

    #[test]
    fn support_order_is_pinned() {
        let s = state(7);
        let mut rng = Rng::new(7);
        let ep = episode(&mut rng, 1, 4, 1);
        let u = init_local(&s, &ep.user_profile).unwrap();
        let forward_order = local_adapt(u.clone(), &ep.support, 0.2, 1).unwrap();
        let mut reversed = ep.support.clone();
        reversed.reverse();
        let backward_order = local_adapt(u, &reversed, 0.2, 1).unwrap();
        // Per-item steps do not commute; the initial gradient record does.
        assert_ne!(forward_order.local, backward_order.local);
        for (a, b) in forward_order
            .init_grad_user
            .values()
            .zip(backward_order.init_grad_user.values())
        {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn meta_grad_zero_for_exact_queries_and_matches_fd() {
        let s = state(8);
        let mut rng = Rng::new(8);
        let mut ep = episode(&mut rng, 1, 3, 1);
        let u = local_adapt(init_local(&s, &ep.user_profile).unwrap(), &ep.support, 0.05, 1).unwrap();

        let q = &ep.query[0];
        let numeric = finite_diff_grad(
            |p: &ParamSet| loss(&forward(p, &u.fast, &u.profile, &q.profile).unwrap(), q.rating),
            &u.local,
            1e-5,
        )
        .unwrap();
        let g = query_meta_grad(&u, &ep.query).unwrap();
        assert!(g.same_shape(&s.global));
        for (a, n) in g.flatten().iter().zip(numeric.flatten()) {
            assert!(relative_error(*a, n) < 1e-4, "{a} vs {n}");
        }

        ep.query[0].rating = forward(&u.local, &u.fast, &u.profile, &q.profile).unwrap().value;
        let g = query_meta_grad(&u, &ep.query).unwrap();
        assert!(g.flatten().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn global_update_cases() {
        let base = state(9);
        let zero = base.global.zeros_like();

        let mut s = base.clone();
        global_update(&mut s, &[zero.clone()], 0.5).unwrap();
        assert_eq!(s, base);

        let mut rng = Rng::new(9);
        let mut g1 = zero.clone();
        g1.assign(&rng.uniform_vec(g1.num_params(), -1.0, 1.0));
        let mut g2 = zero.clone();
        g2.assign(&rng.uniform_vec(g2.num_params(), -1.0, 1.0));

        let mut s = base.clone();
        global_update(&mut s, &[g1.clone()], 1.0).unwrap();
        for ((x, p), g) in s.global.flatten().iter().zip(base.global.flatten()).zip(g1.flatten()) {
            assert_eq!(*x, p - g);
        }

        let mut s = base.clone();
        global_update(&mut s, &[g1.clone(), g2.clone()], 0.3).unwrap();
        let (f1, f2) = (g1.flatten(), g2.flatten());
        for (i, (x, p)) in s.global.flatten().iter().zip(base.global.flatten()).enumerate() {
            assert_abs_diff_eq!(*x, p - 0.3 * (f1[i] + f2[i]) / 2.0, epsilon = 1e-14);
        }
        assert!(global_update(&mut s, &[], 0.1).is_err());
    }

    #[test]
    fn zero_epochs_and_disabled_updates_leave_state() {
        let mut rng = Rng::new(10);
        let eps: Vec<Episode> = (0..10).map(|u| episode(&mut rng, u, 5, 2)).collect();

        let mut s = state(10);
        s.hyper.epochs = 0;
        let before = s.clone();
        assert!(train(&mut s, &eps, &TrainOptions::default()).unwrap().is_empty());
        assert_eq!(s, before);

        let mut s = state(10);
        s.hyper = MetaHyper {
            rho: 0.0,
            lambda: 0.0,
            memory: MemoryHyper {
                alpha: 0.0,
                beta: 0.0,
                gamma: 0.0,
                tau: 0.1,
            },
            user_batch: 3,
            epochs: 3,
            support_passes: 1,
        };
        let before = s.clone();
        let log = train(&mut s, &eps, &TrainOptions::default()).unwrap();
        assert_eq!(log.len(), 3);
        assert_eq!(s, before);
    }

    #[test]
    fn training_is_deterministic_across_worker_counts() {
        let mut rng = Rng::new(11);
        let eps: Vec<Episode> = (0..20).map(|u| episode(&mut rng, u, 5, 3)).collect();
        let run = |workers| {
            let mut s = state(11);
            s.hyper.epochs = 2;
            s.hyper.user_batch = 6;
            let log = train(&mut s, &eps, &TrainOptions { workers, seed: 3, ..Default::default() }).unwrap();
            (s, log.iter().map(|m| m.train_query_mae).collect::<Vec<_>>())
        };
        let (a, la) = run(1);
        let (b, lb) = run(4);
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn testing_leaves_state_untouched() {
        let s = state(12);
        let before = s.clone();
        let mut rng = Rng::new(12);
        for u in 0..1000 {
            let ep = episode(&mut rng, u, 3, 2);
            test_user(&s, &ep).unwrap();
        }
        assert_eq!(s, before);
    }

    #[test]
    fn empty_support_predicts_from_initialisation() {
        let s = state(13);
        let mut rng = Rng::new(13);
        let ep = episode(&mut rng, 1, 0, 3);
        let out = test_user(&s, &ep).unwrap();
        assert!(!out.adapted);
        let u = init_local(&s, &ep.user_profile).unwrap();
        for (p, it) in out.predictions.iter().zip(&ep.query) {
            assert_eq!(*p, forward(&u.local, &u.fast, &u.profile, &it.profile).unwrap().value);
        }
    }

    /// Shared-initialisation learner with no memory machinery at all.
    fn plain_shared_init(
        global: &ParamSet,
        fast: &Matrix,
        ep: &Episode,
        rho: f64,
    ) -> Vec<f64> {
        let mut p = global.clone();
        let mut f = FastWeights::new(fast.clone()).unwrap();
        for it in &ep.support {
            let pred = forward(&p, &f, &ep.user_profile, &it.profile).unwrap();
            let g = backward_all(&pred, it.rating, &p, &f).unwrap();
            p.axpy(-rho, &g.params).unwrap();
            f.matrix_mut().axpy(-rho, &g.fast).unwrap();
        }
        ep.query
            .iter()
            .map(|it| forward(&p, &f, &ep.user_profile, &it.profile).unwrap().value)
            .collect()
    }

    #[test]
    fn no_memory_ablation_matches_plain_learner() {
        let hyper = MetaHyper::default().without_memory();
        let s = MetaState::init(&dims(), 1, hyper, 14).unwrap();
        let mut rng = Rng::new(14);
        for u in 0..20 {
            let ep = episode(&mut rng, u, 6, 3);
            let ours = test_user(&s, &ep).unwrap().predictions;
            let plain = plain_shared_init(&s.global, &s.tasks.slots()[0], &ep, hyper.rho);
            for (a, b) in ours.iter().zip(&plain) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
        }
    }
}
