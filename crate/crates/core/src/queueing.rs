//! Per-model FIFO queues and task lifecycle bookkeeping.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("unknown model id {model}")]
    UnknownModel { model: usize },
    #[error("dequeue of {want} tasks from model {model} queue of length {have}")]
    BatchTooLarge {
        model: usize,
        want: usize,
        have: usize,
    },
    #[error("clock regression: now {now} us is before arrival {arrival} us")]
    ClockRegression { now: u64, arrival: u64 },
}

/// Task identity: queue id plus a per-queue monotone sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskId {
    pub model: usize,
    pub seq: u64,
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "m{}-{}", self.model, self.seq)
    }
}

/// One inference request. Dispatch, completion, and the served exit are
/// unset until the task is scheduled onto the GPU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub id: TaskId,
    pub arrival_us: u64,
    pub dispatch_us: Option<u64>,
    pub complete_us: Option<u64>,
    pub exit: Option<usize>,
}

impl Task {
    /// Total latency T = completion - arrival; defined once completed.
    pub fn total_latency_us(&self) -> Option<u64> {
        self.complete_us.map(|c| c - self.arrival_us)
    }

    /// Queuing delay w = dispatch - arrival; defined once dispatched.
    pub fn wait_us(&self) -> Option<u64> {
        self.dispatch_us.map(|d| d - self.arrival_us)
    }
}

/// Current queuing time w of a pending task: time elapsed since arrival.
pub fn queuing_time(task: &Task, now_us: u64) -> Result<u64, QueueError> {
    if now_us < task.arrival_us {
        return Err(QueueError::ClockRegression {
            now: now_us,
            arrival: task.arrival_us,
        });
    }
    Ok(now_us - task.arrival_us)
}

/// FIFO queue for one model. Arrival order in equals dispatch order out.
#[derive(Debug, Clone)]
pub struct FifoQueue {
    pub model: usize,
    pending: VecDeque<Task>,
    next_seq: u64,
}

impl FifoQueue {
    pub fn new(model: usize) -> Self {
        Self {
            model,
            pending: VecDeque::new(),
            next_seq: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn front(&self) -> Option<&Task> {
        self.pending.front()
    }

    /// Pending tasks in arrival order.
    pub fn iter(&self) -> impl Iterator<Item = &Task> {
        self.pending.iter()
    }

    pub fn get(&self, idx: usize) -> Option<&Task> {
        self.pending.get(idx)
    }

    /// Total tasks ever enqueued; pending + dispatched.
    pub fn enqueued(&self) -> u64 {
        self.next_seq
    }
}

/// All queues plus the GPU occupancy horizon at one scheduling instant.
#[derive(Debug, Clone)]
pub struct SystemState {
    pub now_us: u64,
    pub gpu_busy_until_us: u64,
    queues: Vec<FifoQueue>,
}

impl SystemState {
    pub fn new(model_count: usize) -> Self {
        Self {
            now_us: 0,
            gpu_busy_until_us: 0,
            queues: (0..model_count).map(FifoQueue::new).collect(),
        }
    }

    pub fn model_count(&self) -> usize {
        self.queues.len()
    }

    pub fn queue(&self, model: usize) -> Result<&FifoQueue, QueueError> {
        self.queues
            .get(model)
            .ok_or(QueueError::UnknownModel { model })
    }

    pub fn queues(&self) -> &[FifoQueue] {
        &self.queues
    }

    pub fn gpu_idle(&self) -> bool {
        self.gpu_busy_until_us <= self.now_us
    }

    /// Appends a task to the model's queue. Requests are accepted
    /// regardless of GPU state; there is no admission control.
    pub fn enqueue(&mut self, model: usize, arrival_us: u64) -> Result<TaskId, QueueError> {
        if arrival_us < self.now_us {
            return Err(QueueError::ClockRegression {
                now: self.now_us,
                arrival: arrival_us,
            });
        }
        let q = self
            .queues
            .get_mut(model)
            .ok_or(QueueError::UnknownModel { model })?;
        let id = TaskId {
            model,
            seq: q.next_seq,
        };
        q.next_seq += 1;
        q.pending.push_back(Task {
            id,
            arrival_us,
            dispatch_us: None,
            complete_us: None,
            exit: None,
        });
        Ok(id)
    }

    /// Removes and returns the `count` oldest tasks of the model's queue,
    /// in arrival order.
    pub fn dequeue_batch(&mut self, model: usize, count: usize) -> Result<Vec<Task>, QueueError> {
        let q = self
            .queues
            .get_mut(model)
            .ok_or(QueueError::UnknownModel { model })?;
        if count > q.pending.len() {
            return Err(QueueError::BatchTooLarge {
                model,
                want: count,
                have: q.pending.len(),
            });
        }
        Ok(q.pending.drain(..count).collect())
    }
}
