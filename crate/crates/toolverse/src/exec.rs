//! Bounded parallelism: a worker-pool map, a tool executor that runs the
//! calls of one step concurrently, and deadline guards for per-item budgets.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use toolverse_core::call::{FunctionCall, ResultSource, ToolResult};
use toolverse_core::gateway::ToolExecutor;
use toolverse_core::llm::{ChatError, ChatRequest, ChatService, Completion};

/// Applies `f` to every item on at most `jobs` threads. Results come back
/// in input order whatever the completion order.
pub fn parallel_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    parallel_map_with(jobs, items, |_| (), |_, i, t| f(i, t))
}

/// [`parallel_map`] where each worker first builds its own state from its
/// worker number (`0..jobs`) and then uses it for every item it takes.
pub fn parallel_map_with<T, S, R, I, F>(jobs: usize, items: &[T], init: I, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    I: Fn(usize) -> S + Sync,
    F: Fn(&mut S, usize, &T) -> R + Sync,
{
    let workers = jobs.max(1).min(items.len());
    if workers <= 1 {
        let mut state = init(0);
        return items.iter().enumerate().map(|(i, t)| f(&mut state, i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for w in 0..workers {
            let (next, slots, init, f) = (&next, &slots, &init, &f);
            s.spawn(move || {
                let mut state = init(w);
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= items.len() {
                        break;
                    }
                    let r = f(&mut state, i, &items[i]);
                    *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap_or_else(|e| e.into_inner()).expect("worker filled every slot"))
        .collect()
}

/// Runs the calls of a batch concurrently on up to `width` threads.
pub struct ParallelExecutor<E> {
    inner: E,
    width: usize,
}

impl<E: ToolExecutor> ParallelExecutor<E> {
    pub fn new(inner: E, width: usize) -> Self {
        ParallelExecutor { inner, width: width.max(1) }
    }
}

impl<E: ToolExecutor> ToolExecutor for ParallelExecutor<E> {
    fn execute(&self, call: &FunctionCall) -> ToolResult {
        self.inner.execute(call)
    }

    fn execute_batch(&self, calls: &[FunctionCall]) -> Vec<ToolResult> {
        parallel_map(self.width, calls, |_, c| self.inner.execute(c))
    }
}

pub const DEADLINE_KIND: &str = "deadline";

/// A point in time after which guarded services refuse work.
#[derive(Debug, Clone, Copy)]
pub struct Deadline {
    start: Instant,
    budget: Duration,
}

impl Deadline {
    pub fn after(budget: Duration) -> Self {
        Deadline {
            start: Instant::now(),
            budget,
        }
    }

    pub fn elapsed(&self) -> Duration {
        self.start.elapsed()
    }

    pub fn expired(&self) -> bool {
        self.elapsed() >= self.budget
    }

    pub fn budget(&self) -> Duration {
        self.budget
    }
}

/// Fails every completion once the deadline has passed, so a stuck run
/// winds down at its next generation.
pub struct DeadlineChat<'a> {
    pub inner: &'a dyn ChatService,
    pub deadline: Deadline,
}

impl ChatService for DeadlineChat<'_> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, ChatError> {
        if self.deadline.expired() {
            return Err(ChatError::Transport(format!("item exceeded {:?}", self.deadline.budget())));
        }
        self.inner.complete(request)
    }
}

pub struct DeadlineExecutor<'a> {
    pub inner: &'a dyn ToolExecutor,
    pub deadline: Deadline,
}

impl DeadlineExecutor<'_> {
    fn refused(&self, call: &FunctionCall) -> ToolResult {
        ToolResult::error(&call.call_id, DEADLINE_KIND, format!("item exceeded {:?}", self.deadline.budget()), ResultSource::Builtin)
    }
}

impl ToolExecutor for DeadlineExecutor<'_> {
    fn execute(&self, call: &FunctionCall) -> ToolResult {
        if self.deadline.expired() {
            return self.refused(call);
        }
        self.inner.execute(call)
    }

    fn execute_batch(&self, calls: &[FunctionCall]) -> Vec<ToolResult> {
        if self.deadline.expired() {
            return calls.iter().map(|c| self.refused(c)).collect();
        }
        self.inner.execute_batch(calls)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::{json, Map};
    use toolverse_core::llm::EchoChat;

    struct Slow;

    impl ToolExecutor for Slow {
        fn execute(&self, call: &FunctionCall) -> ToolResult {
            let ms = call.arguments["ms"].as_u64().unwrap();
            std::thread::sleep(Duration::from_millis(ms));
            ToolResult::ok(&call.call_id, json!(ms), ResultSource::Builtin)
        }
    }

    fn call(id: &str, ms: u64) -> FunctionCall {
        let mut args = Map::new();
        args.insert("ms".into(), json!(ms));
        FunctionCall::new(id, "slow", args)
    }

    #[test]
    fn batch_keeps_call_order() {
        let ex = ParallelExecutor::new(Slow, 4);
        let calls = [call("a", 30), call("b", 1), call("c", 15)];
        let ids: Vec<_> = ex.execute_batch(&calls).into_iter().map(|r| r.call_id).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn map_is_ordered_and_total() {
        let items: Vec<u32> = (0..50).collect();
        assert_eq!(parallel_map(7, &items, |_, x| x * 2), items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(parallel_map(3, &[] as &[u32], |_, x| *x).is_empty());
    }

    #[test]
    fn worker_state_is_per_worker() {
        let items: Vec<u32> = (0..40).collect();
        let seen = parallel_map_with(4, &items, |w| w, |w, _, _| *w);
        assert!(seen.iter().all(|w| *w < 4));
    }

    #[test]
    fn expired_deadline_refuses() {
        let d = Deadline::after(Duration::ZERO);
        let chat = DeadlineChat { inner: &EchoChat, deadline: d };
        assert!(chat.complete(&ChatRequest::single("x")).is_err());
        let ex = DeadlineExecutor { inner: &Slow, deadline: d };
        assert_eq!(ex.execute(&call("a", 0)).error_kind(), Some(DEADLINE_KIND));
        let open = DeadlineChat { inner: &EchoChat, deadline: Deadline::after(Duration::from_secs(60)) };
        assert!(open.complete(&ChatRequest::single("x")).is_ok());
    }
}
