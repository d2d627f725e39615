//! Thread-pool scheduler for replay plans.

use std::collections::BTreeSet;
use std::sync::{Condvar, Mutex};

use retro_core::engine::{ReplayPlan, ReplayWork, Scheduler, SerialScheduler};
use retro_core::error::EngineError;

/// Runs ready plan nodes on `workers` threads. Claiming a node and completing it
/// happen under one lock; execution happens outside it. Before a node starts the
/// scheduler checks that it conflicts with nothing in flight.
#[derive(Debug, Clone, Copy)]
pub struct ParallelScheduler {
    pub workers: usize,
}

impl ParallelScheduler {
    pub fn new(workers: usize) -> Self {
        ParallelScheduler { workers: workers.max(1) }
    }
}

struct State<'w, 'a> {
    work: &'w mut dyn ReplayWork<'a>,
    indeg: Vec<usize>,
    ready: BTreeSet<usize>,
    inflight: BTreeSet<usize>,
    order: Vec<usize>,
    done: bool,
    err: Option<EngineError>,
}

impl Scheduler for ParallelScheduler {
    fn run<'a>(&self, plan: &ReplayPlan, work: &mut dyn ReplayWork<'a>) -> Result<Vec<usize>, EngineError> {
        if self.workers <= 1 || plan.len() <= 1 {
            return SerialScheduler.run(plan, work);
        }
        let succ = plan.successors();
        let indeg: Vec<usize> = plan.preds.iter().map(Vec::len).collect();
        let ready = indeg.iter().enumerate().filter(|(_, &d)| d == 0).map(|(i, _)| i).collect();
        let state = Mutex::new(State { work, indeg, ready, inflight: BTreeSet::new(), order: Vec::new(), done: false, err: None });
        let cv = Condvar::new();
        let n = plan.len();
        std::thread::scope(|s| {
            for _ in 0..self.workers.min(n) {
                s.spawn(|| worker(plan, &succ, &state, &cv));
            }
        });
        let st = state.into_inner().expect("scheduler lock poisoned");
        match st.err {
            Some(e) => Err(e),
            None => Ok(st.order),
        }
    }
}

fn worker(plan: &ReplayPlan, succ: &[Vec<usize>], state: &Mutex<State<'_, '_>>, cv: &Condvar) {
    let mut g = state.lock().expect("scheduler lock poisoned");
    loop {
        if g.done || g.err.is_some() {
            break;
        }
        let Some(i) = g.ready.pop_first() else {
            if g.inflight.is_empty() {
                g.done = true;
                break;
            }
            g = cv.wait(g).expect("scheduler lock poisoned");
            continue;
        };
        if let Some(&j) = g.inflight.iter().find(|&&j| plan.conflicts(i, j)) {
            g.err = Some(EngineError::Schedule(format!("{} started while conflicting {} in flight", plan.nodes[i].node, plan.nodes[j].node)));
            break;
        }
        let job = match g.work.prepare(i) {
            Ok(job) => job,
            Err(e) => {
                g.err = Some(e);
                break;
            }
        };
        g.inflight.insert(i);
        drop(g);
        let out = job.run();
        g = state.lock().expect("scheduler lock poisoned");
        g.inflight.remove(&i);
        if g.done || g.err.is_some() {
            break;
        }
        match out.and_then(|o| g.work.complete(i, o)) {
            Ok(stop) => {
                g.order.push(i);
                if stop || g.order.len() == plan.len() {
                    g.done = true;
                } else {
                    for &k in &succ[i] {
                        g.indeg[k] -= 1;
                        if g.indeg[k] == 0 {
                            g.ready.insert(k);
                        }
                    }
                }
            }
            Err(e) => g.err = Some(e),
        }
        cv.notify_all();
    }
    cv.notify_all();
}
