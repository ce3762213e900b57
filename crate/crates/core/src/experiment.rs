//! End-to-end runs shared by the command line, the bindings and the
//! acceptance checks: prepare a corpus, train, evaluate, and the paired
//! memory / no-memory ablation.

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{Corpus, Episode, PreparedData};
use crate::error::{Error, Result};
use crate::eval::{scenario_metrics, MetricsReport, TaggedResult};
use crate::meta::{test_users, train_with, EpochMetrics, MetaState, TrainOptions};
use crate::model::ModelDims;

/// A corpus prepared under one configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfig,
    pub data: PreparedData,
    pub dims: ModelDims,
    pub user_schema: String,
    pub item_schema: String,
}

impl Experiment {
    pub fn new(config: RunConfig, corpus: &Corpus) -> Result<Self> {
        config.validate()?;
        let data = corpus.prepare(&config.prepare_options())?;
        if data.train.is_empty() {
            return Err(Error::Data("the split left no training users".into()));
        }
        Ok(Self {
            dims: config.model_dims(&corpus.schema),
            user_schema: corpus.schema.user.id.clone(),
            item_schema: corpus.schema.item.id.clone(),
            config,
            data,
        })
    }

    /// The seeded untrained state.
    pub fn initial_state(&self) -> Result<MetaState> {
        MetaState::init(&self.dims, self.config.slots, self.config.meta_hyper(), self.config.seed)
    }

    pub fn train_options(&self, start_epoch: usize) -> TrainOptions {
        TrainOptions {
            seed: self.config.seed,
            rating_range: self.data.rating_range,
            workers: self.config.workers,
            start_epoch,
        }
    }

    pub fn checkpoint(&self, state: MetaState, completed_epochs: usize) -> Checkpoint {
        Checkpoint::new(state, self.config.seed, completed_epochs, &self.user_schema, &self.item_schema)
    }

    /// Trains from `state` (epoch `start_epoch` onward), handing a
    /// checkpoint to `on_epoch` after every epoch.
    pub fn train_from<F>(&self, state: &mut MetaState, start_epoch: usize, mut on_epoch: F) -> Result<Vec<EpochMetrics>>
    where
        F: FnMut(&Checkpoint, &EpochMetrics) -> Result<()>,
    {
        train_with(state, &self.data.train, &self.train_options(start_epoch), |s, m| {
            on_epoch(&self.checkpoint(s.clone(), m.epoch + 1), m)
        })
    }

    pub fn train(&self) -> Result<(MetaState, Vec<EpochMetrics>)> {
        let mut state = self.initial_state()?;
        let log = self.train_from(&mut state, 0, |_, _| Ok(()))?;
        Ok((state, log))
    }

    /// Test-set report for `state`.
    pub fn evaluate(&self, state: &MetaState) -> Result<MetricsReport> {
        if state.dims() != self.dims {
            return Err(Error::Config(format!(
                "checkpoint dimensions {:?} do not match the data schema {:?}",
                state.dims(),
                self.dims
            )));
        }
        evaluate_episodes(state, &self.data.test, &self.config.ndcg_n, self.data.rating_range, self.config.workers)
    }

    /// The no-memory reduction of this experiment: one slot, no bias term,
    /// gradient memory never written.
    pub fn ablation(&self) -> Self {
        let mut e = self.clone();
        e.config = ablation_config(&self.config);
        e
    }
}

pub fn ablation_config(cfg: &RunConfig) -> RunConfig {
    RunConfig {
        slots: 1,
        tau: 0.0,
        beta: 0.0,
        ..cfg.clone()
    }
}

/// Adapts every episode and scores its query records by scenario.
pub fn evaluate_episodes(
    state: &MetaState,
    episodes: &[Episode],
    ns: &[usize],
    range: (f64, f64),
    workers: usize,
) -> Result<MetricsReport> {
    if episodes.is_empty() {
        return Err(Error::Data("no test users to evaluate".into()));
    }
    let preds = test_users(state, episodes, workers)?;
    let mut results = Vec::new();
    for (ep, p) in episodes.iter().zip(&preds) {
        if ep.scenarios.len() != ep.query.len() {
            return Err(Error::Contract(format!("test user {} has unlabelled query records", ep.user_id)));
        }
        results.extend(ep.query.iter().zip(&ep.scenarios).zip(&p.predictions).map(|((q, s), y)| {
            TaggedResult {
                scenario: *s,
                prediction: *y,
                actual: q.rating,
            }
        }));
    }
    scenario_metrics(&results, ns, range)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: MetaState,
    pub log: Vec<EpochMetrics>,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub memory: RunOutcome,
    pub ablation: RunOutcome,
}

/// Trains and evaluates the memory model and its no-memory reduction on
/// the same data and seed.
pub fn run_ablation(exp: &Experiment) -> Result<AblationOutcome> {
    let run = |e: &Experiment| -> Result<RunOutcome> {
        let (state, log) = e.train()?;
        let report = e.evaluate(&state)?;
        Ok(RunOutcome { state, log, report })
    };
    Ok(AblationOutcome {
        memory: run(exp)?,
        ablation: run(&exp.ablation())?,
    })
}
