//! FIFO waiting lines at lift bases with fixed-headway vehicles.
//!
//! Boarding keeps groups together: a group that fits in one vehicle only
//! boards an empty one, a larger group fills vehicles one after another.
//! Seats left after the head group either ride empty or, with top-off
//! enabled, go to later groups that fit entirely.

use std::collections::VecDeque;

use crate::types::step_of;

/// Identifier of a group inside one simulation.
pub type GroupId = u32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Waiting {
    pub group: GroupId,
    /// Skiers of the group still in line.
    pub remaining: u32,
    pub size: u32,
    pub enqueue_time: f64,
}

impl Waiting {
    /// Some skiers of the group already left in an earlier vehicle.
    pub fn is_split(&self) -> bool {
        self.remaining < self.size
    }
}

/// Seats taken by one group in one vehicle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Boarding {
    pub group: GroupId,
    pub seats: u32,
    pub enqueue_time: f64,
    /// The last skiers of the group are in this vehicle.
    pub completes_group: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WaitAccum {
    /// Sum over boarded skiers of their wait, seconds.
    pub total_wait: f64,
    pub skiers: u64,
}

impl WaitAccum {
    pub fn mean(&self) -> f64 {
        if self.skiers == 0 {
            0.0
        } else {
            self.total_wait / self.skiers as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct LiftQueue {
    pub lift: usize,
    line: VecDeque<Waiting>,
    /// Time of the next scheduled departure, if one is pending.
    pub next_vehicle_time: Option<f64>,
    waits_by_step: Vec<WaitAccum>,
    enqueued: u64,
    boarded: u64,
    withdrawn: u64,
}

impl LiftQueue {
    pub fn new(lift: usize) -> Self {
        LiftQueue {
            lift,
            line: VecDeque::new(),
            next_vehicle_time: None,
            waits_by_step: Vec::new(),
            enqueued: 0,
            boarded: 0,
            withdrawn: 0,
        }
    }

    pub fn enqueue(&mut self, group: GroupId, size: u32, time: f64) {
        self.line.push_back(Waiting { group, remaining: size, size, enqueue_time: time });
        self.enqueued += size as u64;
    }

    pub fn is_empty(&self) -> bool {
        self.line.is_empty()
    }

    pub fn line(&self) -> impl Iterator<Item = &Waiting> {
        self.line.iter()
    }

    pub fn waiting_skiers(&self) -> u64 {
        self.line.iter().map(|w| w.remaining as u64).sum()
    }

    pub fn enqueued_skiers(&self) -> u64 {
        self.enqueued
    }

    pub fn boarded_skiers(&self) -> u64 {
        self.boarded
    }

    pub fn withdrawn_skiers(&self) -> u64 {
        self.withdrawn
    }

    /// Loads one vehicle leaving at `time`.
    pub fn dispatch_vehicle(&mut self, capacity: u32, time: f64, topoff: bool) -> Vec<Boarding> {
        let mut out = Vec::new();
        let Some(head) = self.line.front_mut() else {
            return out;
        };
        let mut free = capacity;
        if head.remaining > capacity {
            head.remaining -= capacity;
            out.push(Boarding { group: head.group, seats: capacity, enqueue_time: head.enqueue_time, completes_group: false });
            free = 0;
        } else {
            let w = self.line.pop_front().expect("non-empty");
            free -= w.remaining;
            out.push(Boarding { group: w.group, seats: w.remaining, enqueue_time: w.enqueue_time, completes_group: true });
        }
        if topoff && free > 0 {
            let mut i = 0;
            while i < self.line.len() && free > 0 {
                let w = self.line[i];
                if !w.is_split() && w.remaining <= free {
                    free -= w.remaining;
                    out.push(Boarding { group: w.group, seats: w.remaining, enqueue_time: w.enqueue_time, completes_group: true });
                    self.line.remove(i);
                } else {
                    i += 1;
                }
            }
        }
        for b in &out {
            self.record_wait(time, b.seats, time - b.enqueue_time);
        }
        out
    }

    fn record_wait(&mut self, time: f64, seats: u32, wait: f64) {
        let step = step_of(time) as usize;
        if self.waits_by_step.len() <= step {
            self.waits_by_step.resize(step + 1, WaitAccum::default());
        }
        let acc = &mut self.waits_by_step[step];
        acc.total_wait += wait * seats as f64;
        acc.skiers += seats as u64;
        self.boarded += seats as u64;
    }

    /// Mean realized wait of the skiers who boarded during the metrics step
    /// before the one containing `time`; 0 when nobody boarded.
    pub fn expected_wait(&self, time: f64) -> f64 {
        let step = step_of(time);
        if step == 0 {
            return 0.0;
        }
        self.waits_by_step.get(step as usize - 1).map_or(0.0, WaitAccum::mean)
    }

    /// Seconds until the last skier of a group of `size` joining now would
    /// leave, assuming no top-off: every waiting group needs its own
    /// vehicles, a split remainder included.
    pub fn predicted_wait(&self, size: u32, capacity: u32, headway: f64, opening: f64, time: f64) -> f64 {
        let vehicles = |n: u32| n.div_ceil(capacity) as f64;
        let ahead: f64 = self.line.iter().map(|w| vehicles(w.remaining)).sum();
        let first = self.next_vehicle_time.unwrap_or_else(|| next_departure(opening, headway, time));
        first + (ahead + vehicles(size) - 1.0) * headway - time
    }

    pub fn waits_by_step(&self) -> &[WaitAccum] {
        &self.waits_by_step
    }

    /// Removes every group that has not started boarding. A split group at
    /// the head stays in line.
    pub fn withdraw_unstarted(&mut self) -> Vec<Waiting> {
        let mut kept = VecDeque::new();
        let mut gone = Vec::new();
        for w in self.line.drain(..) {
            if w.is_split() {
                kept.push_back(w);
            } else {
                gone.push(w);
            }
        }
        self.line = kept;
        self.withdrawn += gone.iter().map(|w| w.remaining as u64).sum::<u64>();
        gone
    }
}

/// First departure strictly after `time` on the grid
/// `opening + k * headway`, k >= 0.
pub fn next_departure(opening: f64, headway: f64, time: f64) -> f64 {
    if time < opening {
        return opening;
    }
    let k = ((time - opening) / headway).floor() + 1.0;
    let mut t = opening + k * headway;
    // Guard against rounding landing on or before `time`.
    while t <= time {
        t += headway;
    }
    t
}
