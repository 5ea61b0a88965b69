//! Single-threaded discrete-event engine.
//!
//! Events are processed in `(time, kind priority, insertion sequence)` order.
//! At equal times, state transitions (timer expiries, trap releases) run before
//! new stimuli (dark counts, photons).

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::time::TimePs;

/// Event kinds in tie-break priority order: lower variants process first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    TimerExpiry,
    TrapRelease,
    DarkCount,
    PhotonArrival,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimEvent {
    pub time: TimePs,
    pub kind: EventKind,
    /// Kind-specific data: arrival index, timer generation, ...
    pub payload: u64,
}

impl SimEvent {
    pub fn new(time: TimePs, kind: EventKind, payload: u64) -> Self {
        SimEvent { time, kind, payload }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    time: TimePs,
    kind: EventKind,
    seq: u64,
    payload: u64,
}

#[derive(Debug, Default, Clone)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Key>>,
    seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, ev: SimEvent) {
        let key = Key {
            time: ev.time,
            kind: ev.kind,
            seq: self.seq,
            payload: ev.payload,
        };
        self.seq += 1;
        self.heap.push(Reverse(key));
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop().map(|Reverse(k)| SimEvent {
            time: k.time,
            kind: k.kind,
            payload: k.payload,
        })
    }

    pub fn peek_time(&self) -> Option<TimePs> {
        self.heap.peek().map(|Reverse(k)| k.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Handle given to event handlers for scheduling follow-up events.
pub struct Scheduler<'a> {
    queue: &'a mut EventQueue,
    now: TimePs,
}

impl Scheduler<'_> {
    pub fn now(&self) -> TimePs {
        self.now
    }

    pub fn schedule(&mut self, ev: SimEvent) -> Result<(), SimError> {
        if ev.time < self.now {
            return Err(SimError::EventInPast {
                kind: ev.kind,
                at: ev.time,
                now: self.now,
            });
        }
        self.queue.push(ev);
        Ok(())
    }
}

#[derive(Debug, Default, Clone)]
pub struct Engine {
    queue: EventQueue,
    now: TimePs,
}

impl Engine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_queue(queue: EventQueue) -> Result<Self, SimError> {
        let engine = Engine {
            queue,
            now: TimePs::ZERO,
        };
        if let Some(t) = engine.queue.peek_time() {
            if t.is_negative() {
                return Err(SimError::EventInPast {
                    kind: engine.queue.heap.peek().unwrap().0.kind,
                    at: t,
                    now: TimePs::ZERO,
                });
            }
        }
        Ok(engine)
    }

    pub fn now(&self) -> TimePs {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, ev: SimEvent) -> Result<(), SimError> {
        Scheduler {
            queue: &mut self.queue,
            now: self.now,
        }
        .schedule(ev)
    }

    /// Processes events up to and including `t_end`; returns how many ran.
    /// Events later than `t_end` stay queued.
    pub fn run<H>(&mut self, t_end: TimePs, mut handler: H) -> Result<u64, SimError>
    where
        H: FnMut(&SimEvent, &mut Scheduler<'_>) -> Result<(), SimError>,
    {
        let mut processed = 0;
        while let Some(t) = self.queue.peek_time() {
            if t > t_end {
                break;
            }
            let ev = self.queue.pop().expect("peeked");
            debug_assert!(ev.time >= self.now);
            self.now = ev.time;
            let mut sched = Scheduler {
                queue: &mut self.queue,
                now: self.now,
            };
            handler(&ev, &mut sched)?;
            processed += 1;
        }
        Ok(processed)
    }
}

/// Convenience wrapper: runs a fresh engine over `queue`.
pub fn run<H>(queue: EventQueue, t_end: TimePs, handler: H) -> Result<u64, SimError>
where
    H: FnMut(&SimEvent, &mut Scheduler<'_>) -> Result<(), SimError>,
{
    Engine::with_queue(queue)?.run(t_end, handler)
}
