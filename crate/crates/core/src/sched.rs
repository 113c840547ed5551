//! Demand-driven task dispatch with dependencies.
//!
//! Workers pull the oldest ready task (lowest id) whenever they go idle. A
//! running task may spawn further tasks, whose dependencies may include
//! tasks that have not finished yet.

use std::collections::BTreeSet;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

pub type TaskId = usize;

/// When and where one task ran, relative to the start of dispatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskRecord {
    pub task: TaskId,
    pub worker: usize,
    pub start: Duration,
    pub end: Duration,
}

struct Slot<P> {
    payload: Option<P>,
    waiting_on: usize,
    dependents: Vec<TaskId>,
    done: bool,
}

struct State<P> {
    slots: Vec<Slot<P>>,
    ready: BTreeSet<TaskId>,
    running: usize,
}

struct Shared<P> {
    state: Mutex<State<P>>,
    wake: Condvar,
}

/// Handle for adding tasks, given to the seeding closure and to every task.
pub struct Spawner<'a, P> {
    shared: &'a Shared<P>,
}

impl<P> Spawner<'_, P> {
    /// Adds a task that becomes ready once every task in `deps` has finished.
    ///
    /// # Panics
    ///
    /// If a dependency id has not been issued.
    pub fn spawn(&self, payload: P, deps: &[TaskId]) -> TaskId {
        let mut st = self.shared.state.lock().unwrap();
        let id = st.slots.len();
        let mut waiting_on = 0;
        for &d in deps {
            assert!(d < id, "unknown dependency {d}");
            if !st.slots[d].done {
                st.slots[d].dependents.push(id);
                waiting_on += 1;
            }
        }
        st.slots.push(Slot {
            payload: Some(payload),
            waiting_on,
            dependents: Vec::new(),
            done: false,
        });
        if waiting_on == 0 {
            st.ready.insert(id);
            self.shared.wake.notify_one();
        }
        id
    }
}

/// Runs every task on `n_workers` threads and returns one record per task,
/// ordered by task id. `exec` receives the task id, its payload, the
/// worker index and a spawner.
///
/// `seed` adds the initial tasks. Dispatch ends when no task is ready or
/// running; tasks whose dependencies can never finish are not run.
pub fn dispatch<P, S, F>(n_workers: usize, seed: S, exec: F) -> Vec<TaskRecord>
where
    P: Send,
    S: FnOnce(&Spawner<'_, P>),
    F: Fn(TaskId, P, usize, &Spawner<'_, P>) + Sync,
{
    let shared = Shared {
        state: Mutex::new(State {
            slots: Vec::new(),
            ready: BTreeSet::new(),
            running: 0,
        }),
        wake: Condvar::new(),
    };
    seed(&Spawner { shared: &shared });
    let t0 = Instant::now();
    let records = Mutex::new(Vec::new());

    let worker = |w: usize| {
        let spawner = Spawner { shared: &shared };
        let mut st = shared.state.lock().unwrap();
        loop {
            if let Some(id) = st.ready.pop_first() {
                let payload = st.slots[id].payload.take().expect("task runs once");
                st.running += 1;
                drop(st);

                let start = t0.elapsed();
                exec(id, payload, w, &spawner);
                let end = t0.elapsed();
                records.lock().unwrap().push(TaskRecord {
                    task: id,
                    worker: w,
                    start,
                    end,
                });

                st = shared.state.lock().unwrap();
                st.running -= 1;
                st.slots[id].done = true;
                let dependents = std::mem::take(&mut st.slots[id].dependents);
                for d in dependents {
                    st.slots[d].waiting_on -= 1;
                    if st.slots[d].waiting_on == 0 {
                        st.ready.insert(d);
                    }
                }
                shared.wake.notify_all();
            } else if st.running == 0 {
                shared.wake.notify_all();
                return;
            } else {
                st = shared.wake.wait(st).unwrap();
            }
        }
    };

    let n = n_workers.max(1);
    if n == 1 {
        worker(0);
    } else {
        std::thread::scope(|s| {
            for w in 0..n {
                let worker = &worker;
                s.spawn(move || worker(w));
            }
        });
    }
    let mut records = records.into_inner().unwrap();
    records.sort_by_key(|r| r.task);
    records
}
