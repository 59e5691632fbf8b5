use std::collections::VecDeque;

use rand::Rng;

use crate::envs::Transition;
use crate::error::{Error, Result};

/// A transition plus the hierarchical context it was collected under.
#[derive(Clone, Debug, PartialEq)]
pub struct Stored {
    pub tr: Transition,
    /// Goal in representation space, fixed for the window.
    pub goal: Vec<f64>,
    /// High-level action that produced `goal`.
    pub delta: Vec<f64>,
    /// Task context seen by the high level.
    pub context: Vec<f64>,
    pub episode: u64,
}

/// Widths of the vector fields; fixed by the first push.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Dims {
    obs: usize,
    action: usize,
    goal: usize,
    delta: usize,
    context: usize,
}

impl Dims {
    fn of(s: &Stored) -> Self {
        Self {
            obs: s.tr.obs.len(),
            action: s.tr.action.len(),
            goal: s.goal.len(),
            delta: s.delta.len(),
            context: s.context.len(),
        }
    }

    fn stride(&self) -> usize {
        2 * self.obs + self.action + self.goal + self.delta + self.context
    }
}

#[derive(Clone, Copy, Debug)]
struct Meta {
    reward: f64,
    done: bool,
    terminal: bool,
    window_pos: usize,
    episode: u64,
}

/// Borrowed view of one stored step.
#[derive(Clone, Copy, Debug)]
pub struct StepRef<'a> {
    row: &'a [f64],
    meta: &'a Meta,
    dims: Dims,
}

impl<'a> StepRef<'a> {
    fn field(&self, offset: usize, len: usize) -> &'a [f64] {
        &self.row[offset..offset + len]
    }

    pub fn obs(&self) -> &'a [f64] {
        self.field(0, self.dims.obs)
    }

    pub fn next_obs(&self) -> &'a [f64] {
        self.field(self.dims.obs, self.dims.obs)
    }

    pub fn action(&self) -> &'a [f64] {
        self.field(2 * self.dims.obs, self.dims.action)
    }

    pub fn goal(&self) -> &'a [f64] {
        self.field(2 * self.dims.obs + self.dims.action, self.dims.goal)
    }

    pub fn delta(&self) -> &'a [f64] {
        self.field(2 * self.dims.obs + self.dims.action + self.dims.goal, self.dims.delta)
    }

    pub fn context(&self) -> &'a [f64] {
        let d = self.dims;
        self.field(2 * d.obs + d.action + d.goal + d.delta, d.context)
    }

    pub fn reward(&self) -> f64 {
        self.meta.reward
    }

    pub fn done(&self) -> bool {
        self.meta.done
    }

    pub fn terminal(&self) -> bool {
        self.meta.terminal
    }

    pub fn window_pos(&self) -> usize {
        self.meta.window_pos
    }

    pub fn episode(&self) -> u64 {
        self.meta.episode
    }
}

/// Up to `c` consecutive steps of one episode starting at a decision.
#[derive(Clone, Copy, Debug)]
pub struct Window<'a> {
    buf: &'a ReplayBuffer,
    first: usize,
    len: usize,
}

impl<'a> Window<'a> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn step(&self, k: usize) -> StepRef<'a> {
        assert!(k < self.len, "step {k} of a window of {}", self.len);
        self.buf.slot((self.first + k) % self.buf.capacity)
    }

    pub fn first(&self) -> StepRef<'a> {
        self.step(0)
    }

    pub fn last(&self) -> StepRef<'a> {
        self.step(self.len - 1)
    }

    /// `s_{t+k}` for `k ∈ [0, len]`.
    pub fn state(&self, k: usize) -> &'a [f64] {
        if k == 0 {
            self.first().obs()
        } else {
            self.step(k - 1).next_obs()
        }
    }

    /// `a_t ⊕ .. ⊕ a_{t+len-1}`
    pub fn actions_flat(&self) -> Vec<f64> {
        (0..self.len).flat_map(|k| self.step(k).action().iter().copied()).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        (0..self.len).map(|k| self.step(k).reward()).collect()
    }

    /// The window ended because the target was reached.
    pub fn terminal(&self) -> bool {
        self.last().terminal()
    }
}

/// Ring buffer of transitions that tracks where decision windows start.
/// Steps live in one flat array, so a full buffer never reallocates.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    c: usize,
    capacity: usize,
    dims: Option<Dims>,
    data: Vec<f64>,
    meta: Vec<Meta>,
    /// Sequence number of the next push.
    next: u64,
    /// `(start, len)` of every finished window whose steps are still stored.
    windows: VecDeque<(u64, usize)>,
    /// Starts of the windows with exactly `c` steps.
    full: VecDeque<u64>,
    open: Option<u64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, c: usize) -> Result<Self> {
        if capacity == 0 || c == 0 || capacity < c {
            return Err(Error::Invalid(format!("replay capacity {capacity} with c = {c}")));
        }
        Ok(Self {
            c,
            capacity,
            dims: None,
            data: Vec::new(),
            meta: Vec::new(),
            next: 0,
            windows: VecDeque::new(),
            full: VecDeque::new(),
            open: None,
        })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn n_windows(&self) -> usize {
        self.windows.len()
    }

    pub fn n_full_windows(&self) -> usize {
        self.full.len()
    }

    fn oldest(&self) -> u64 {
        self.next - self.len() as u64
    }

    fn slot(&self, i: usize) -> StepRef<'_> {
        let dims = self.dims.expect("non-empty buffer has dims");
        let w = dims.stride();
        StepRef {
            row: &self.data[i * w..(i + 1) * w],
            meta: &self.meta[i],
            dims,
        }
    }

    fn get(&self, seq: u64) -> StepRef<'_> {
        self.slot((seq % self.capacity as u64) as usize)
    }

    /// Appends a step. `window_pos` must count up from 0 within each
    /// decision and the step that ends an episode must have `done` set.
    pub fn push(&mut self, s: Stored) -> Result<()> {
        let pos = s.tr.window_pos;
        if pos >= self.c {
            return Err(Error::OutOfRange {
                what: "window_pos",
                index: pos,
                limit: self.c,
            });
        }
        let dims = *self.dims.get_or_insert_with(|| Dims::of(&s));
        if Dims::of(&s) != dims || s.tr.next_obs.len() != dims.obs {
            return Err(Error::Invalid(format!("step shape {:?} differs from the buffer's {dims:?}", Dims::of(&s))));
        }
        if self.data.is_empty() {
            self.data.reserve_exact(self.capacity * dims.stride());
            self.meta.reserve_exact(self.capacity);
        }
        let seq = self.next;
        if pos == 0 {
            self.open = Some(seq);
        }
        // a window is valid only if every step since its start is present,
        // in order, from one episode
        let valid_start = self.open.filter(|&start| {
            seq - start == pos as u64 && (start == seq || self.get(start).episode() == s.episode)
        });
        let closes = s.tr.done || pos + 1 == self.c;
        let meta = Meta {
            reward: s.tr.reward,
            done: s.tr.done,
            terminal: s.tr.terminal,
            window_pos: pos,
            episode: s.episode,
        };
        let fields = [&s.tr.obs, &s.tr.next_obs, &s.tr.action, &s.goal, &s.delta, &s.context];
        if self.len() < self.capacity {
            for f in fields {
                self.data.extend_from_slice(f);
            }
            self.meta.push(meta);
        } else {
            let slot = (seq % self.capacity as u64) as usize;
            let w = dims.stride();
            let mut at = slot * w;
            for f in fields {
                self.data[at..at + f.len()].copy_from_slice(f);
                at += f.len();
            }
            self.meta[slot] = meta;
        }
        self.next += 1;
        let oldest = self.oldest();
        while self.windows.front().is_some_and(|&(start, _)| start < oldest) {
            self.windows.pop_front();
        }
        while self.full.front().is_some_and(|&start| start < oldest) {
            self.full.pop_front();
        }
        if closes {
            if let Some(start) = valid_start.filter(|&st| st >= oldest) {
                self.windows.push_back((start, pos + 1));
                if pos + 1 == self.c {
                    self.full.push_back(start);
                }
            }
            self.open = None;
        }
        Ok(())
    }

    /// The most recently pushed step.
    pub fn last(&self) -> Option<StepRef<'_>> {
        (!self.is_empty()).then(|| self.get(self.next - 1))
    }

    fn window(&self, start: u64, len: usize) -> Window<'_> {
        Window {
            buf: self,
            first: (start % self.capacity as u64) as usize,
            len,
        }
    }

    /// `n` windows of exactly `c` steps, uniform over stored starts.
    pub fn sample_full<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Window<'_>>> {
        if self.full.is_empty() {
            return Err(Error::Invalid("replay holds no complete window".into()));
        }
        Ok((0..n)
            .map(|_| self.window(self.full[rng.gen_range(0..self.full.len())], self.c))
            .collect())
    }

    /// `n` decision windows, including ones cut short by the episode end.
    pub fn sample_decisions<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Window<'_>>> {
        if self.windows.is_empty() {
            return Err(Error::Invalid("replay holds no finished window".into()));
        }
        Ok((0..n)
            .map(|_| {
                let (start, len) = self.windows[rng.gen_range(0..self.windows.len())];
                self.window(start, len)
            })
            .collect())
    }

    /// `n` observations drawn uniformly from the stored steps.
    pub fn sample_states<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&[f64]>> {
        if self.is_empty() {
            return Err(Error::Invalid("replay is empty".into()));
        }
        Ok((0..n).map(|_| self.slot(rng.gen_range(0..self.len())).obs()).collect())
    }
}
