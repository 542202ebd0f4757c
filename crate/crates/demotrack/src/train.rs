//! Training schedulers around [`ParameterStore`].
//!
//! Deterministic mode steps the training workers round-robin on one thread
//! and runs one testing episode after every finished training episode, so a
//! fixed seed reproduces the log bit for bit. Threaded mode runs every worker
//! on its own thread against the shared store; testing workers wake up when a
//! training episode finishes.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;

use demotrack_core::nn::{ModelConfig, PolicyValueNet};
use demotrack_core::optim::AdamConfig;
use demotrack_core::tracker::{TrainedModel, TrainingMeta};
use demotrack_core::trainer::{
    max_horizon, CurriculumState, LogRecord, RolloutReport, TestOutcome, TestingWorker,
    TrainConfig, TrainingItem, Worker, WorkerKind,
};

use crate::error::{Error, Result};
use crate::store::{ParameterStore, StoreStats};

pub struct TrainOutcome {
    pub model: TrainedModel,
    pub log: Vec<LogRecord>,
    pub curriculum: CurriculumState,
    pub stats: StoreStats,
}

/// Called with every periodic checkpoint (`checkpoint_every` finished episodes).
pub type CheckpointSink<'s> = &'s (dyn Fn(&TrainedModel) -> Result<()> + Sync);

pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    pool: &[TrainingItem],
) -> Result<TrainOutcome> {
    train_with(model_cfg, cfg, pool, &|_| Ok(()))
}

pub fn train_with(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    pool: &[TrainingItem],
    sink: CheckpointSink<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::Invalid(
            "no positive demonstrations to train on".into(),
        ));
    }
    let init = PolicyValueNet::init(model_cfg, cfg.seed)?;
    let store = ParameterStore::new(
        init.params.clone(),
        AdamConfig::with_lr(cfg.lr),
        cfg.weight_decay,
    );
    let run = Run {
        model_cfg,
        cfg,
        pool,
        store: &store,
        template: init,
        sink,
    };
    if cfg.deterministic {
        run.deterministic()
    } else {
        run.threaded()
    }
}

struct Run<'a> {
    model_cfg: &'a ModelConfig,
    cfg: &'a TrainConfig,
    pool: &'a [TrainingItem],
    store: &'a ParameterStore,
    template: PolicyValueNet,
    sink: CheckpointSink<'a>,
}

impl Run<'_> {
    fn workers(&self) -> Result<Vec<Worker<'_>>> {
        self.cfg
            .worker_kinds()
            .into_iter()
            .enumerate()
            .map(|(i, k)| {
                Worker::new(k, i, self.model_cfg, self.cfg, self.pool).map_err(Error::from)
            })
            .collect()
    }

    fn model(&self, cur: &CurriculumState, episodes: usize) -> TrainedModel {
        let mut net = self.template.clone();
        let (params, _) = self.store.snapshot();
        net.params = params;
        let s = self.store.stats();
        TrainedModel {
            net,
            meta: TrainingMeta {
                episodes: episodes as u64,
                imitation_updates: s.imitation_updates,
                rl_updates: s.rl_updates,
                version: s.version,
                horizon: cur.horizon as u64,
            },
        }
    }

    /// Applies a rollout gradient. Non-finite gradients are dropped (and
    /// counted by the store) instead of aborting the run.
    fn apply(&self, rep: &RolloutReport) -> Result<u64> {
        match self.store.apply_gradients(&rep.grads, rep.kind) {
            Ok(v) => Ok(v),
            Err(Error::Core(demotrack_core::Error::Domain { .. })) => {
                Ok(self.store.stats().version)
            }
            Err(e) => Err(e),
        }
    }

    fn train_record(
        &self,
        episode: usize,
        rep: &RolloutReport,
        horizon: usize,
        version: u64,
    ) -> Option<LogRecord> {
        rep.finished.as_ref().map(|s| LogRecord {
            episode,
            kind: rep.kind,
            loss: s.loss,
            sum_reward: s.sum_reward,
            sum_demo_reward: s.sum_demo_reward,
            horizon,
            version,
        })
    }

    fn test_record(episode: usize, o: &TestOutcome, horizon: usize, version: u64) -> LogRecord {
        LogRecord {
            episode,
            kind: WorkerKind::Testing,
            loss: 0.0,
            sum_reward: o.sum_reward,
            sum_demo_reward: o.sum_demo_reward,
            horizon,
            version,
        }
    }

    fn deterministic(self) -> Result<TrainOutcome> {
        let cfg = self.cfg;
        let mut workers = self.workers()?;
        let mut testers: Vec<TestingWorker> = (0..cfg.testing_workers)
            .map(|i| TestingWorker::new(i, cfg, self.pool))
            .collect();
        let mut cur = CurriculumState::from_config(cfg, max_horizon(self.pool));
        let mut test_net = self.template.clone();
        let mut log = Vec::new();
        let mut finished = 0usize;
        'run: while finished < cfg.episodes {
            for w in workers.iter_mut() {
                self.store.snapshot_into(w.local_params_mut())?;
                let horizon = cur.horizon;
                let rep = w.rollout(horizon)?;
                let version = self.apply(&rep)?;
                let Some(rec) = self.train_record(finished + 1, &rep, horizon, version) else {
                    continue;
                };
                finished += 1;
                log.push(rec);
                for t in testers.iter_mut() {
                    let v = self.store.snapshot_into(&mut test_net.params)?;
                    let h = cur.horizon;
                    let o = t.run(&test_net, h)?;
                    cur.push(o.success);
                    cur.advance(cfg.tau);
                    log.push(Self::test_record(finished, &o, h, v));
                }
                if cfg.checkpoint_every > 0 && finished % cfg.checkpoint_every == 0 {
                    (self.sink)(&self.model(&cur, finished))?;
                }
                if finished >= cfg.episodes {
                    break 'run;
                }
            }
        }
        Ok(TrainOutcome {
            model: self.model(&cur, finished),
            log,
            stats: self.store.stats(),
            curriculum: cur,
        })
    }

    fn threaded(self) -> Result<TrainOutcome> {
        let cfg = self.cfg;
        let workers = self.workers()?;
        let cur = Mutex::new(CurriculumState::from_config(cfg, max_horizon(self.pool)));
        let log = Mutex::new(Vec::new());
        let finished = AtomicUsize::new(0);
        let stop = AtomicBool::new(false);
        // Finished training episodes not yet matched by a testing episode.
        let pending = Mutex::new(0usize);
        let wake = Condvar::new();
        let failure: Mutex<Option<Error>> = Mutex::new(None);

        let fail = |e: Error| {
            failure.lock().unwrap().get_or_insert(e);
            stop.store(true, Ordering::SeqCst);
            wake.notify_all();
        };
        let horizon = || cur.lock().unwrap().horizon;

        thread::scope(|s| {
            for mut w in workers {
                let (fail, horizon) = (&fail, &horizon);
                let (this, log, finished, stop, pending, wake, cur) =
                    (&self, &log, &finished, &stop, &pending, &wake, &cur);
                s.spawn(move || {
                    let step = |w: &mut Worker| -> Result<()> {
                        this.store.snapshot_into(w.local_params_mut())?;
                        let h = horizon();
                        let rep = w.rollout(h)?;
                        let version = this.apply(&rep)?;
                        if rep.finished.is_none() {
                            return Ok(());
                        }
                        let n = finished.fetch_add(1, Ordering::SeqCst) + 1;
                        if n > cfg.episodes {
                            return Ok(());
                        }
                        log.lock()
                            .unwrap()
                            .extend(this.train_record(n, &rep, h, version));
                        *pending.lock().unwrap() += 1;
                        wake.notify_one();
                        if cfg.checkpoint_every > 0 && n % cfg.checkpoint_every == 0 {
                            let c = cur.lock().unwrap().clone();
                            (this.sink)(&this.model(&c, n))?;
                        }
                        if n == cfg.episodes {
                            stop.store(true, Ordering::SeqCst);
                            wake.notify_all();
                        }
                        Ok(())
                    };
                    while !stop.load(Ordering::SeqCst) {
                        if let Err(e) = step(&mut w) {
                            fail(e);
                        }
                    }
                });
            }
            for i in 0..cfg.testing_workers {
                let fail = &fail;
                let (this, log, finished, stop, pending, wake, cur) =
                    (&self, &log, &finished, &stop, &pending, &wake, &cur);
                s.spawn(move || {
                    let mut tester = TestingWorker::new(i, cfg, this.pool);
                    let mut net = this.template.clone();
                    loop {
                        {
                            let mut p = pending.lock().unwrap();
                            while *p == 0 && !stop.load(Ordering::SeqCst) {
                                p = wake.wait(p).unwrap();
                            }
                            if *p == 0 {
                                return;
                            }
                            *p -= 1;
                        }
                        let mut run = || -> Result<()> {
                            let v = this.store.snapshot_into(&mut net.params)?;
                            let h = cur.lock().unwrap().horizon;
                            let o = tester.run(&net, h)?;
                            {
                                let mut c = cur.lock().unwrap();
                                c.push(o.success);
                                c.advance(cfg.tau);
                            }
                            let n = finished.load(Ordering::SeqCst).min(cfg.episodes);
                            log.lock().unwrap().push(Run::test_record(n, &o, h, v));
                            Ok(())
                        };
                        if let Err(e) = run() {
                            fail(e);
                            return;
                        }
                    }
                });
            }
        });

        if let Some(e) = failure.into_inner().unwrap() {
            return Err(e);
        }
        let cur = cur.into_inner().unwrap();
        let episodes = finished.load(Ordering::SeqCst).min(cfg.episodes);
        Ok(TrainOutcome {
            model: self.model(&cur, episodes),
            log: log.into_inner().unwrap(),
            stats: self.store.stats(),
            curriculum: cur,
        })
    }
}
