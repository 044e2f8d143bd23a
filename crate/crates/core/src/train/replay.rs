//! Experience replay of hard examples.

use std::collections::VecDeque;

use rand::Rng;

pub const REPLAY_CAPACITY: usize = 50;
pub const REPLAY_PROBABILITY: f64 = 0.2;
pub const REPLAY_WINDOW: usize = 250;
/// Admitted losses must rank in this top fraction of the window.
pub const REPLAY_TOP_FRACTION: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct ReplayBuffer<E> {
    items: VecDeque<(E, f64)>,
    window: VecDeque<f64>,
    pub capacity: usize,
    pub probability: f64,
    pub window_len: usize,
}

impl<E: Clone> Default for ReplayBuffer<E> {
    fn default() -> Self {
        Self::new(REPLAY_CAPACITY, REPLAY_PROBABILITY, REPLAY_WINDOW)
    }
}

impl<E: Clone> ReplayBuffer<E> {
    pub fn new(capacity: usize, probability: f64, window_len: usize) -> Self {
        Self { items: VecDeque::new(), window: VecDeque::new(), capacity, probability, window_len }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn losses(&self) -> impl Iterator<Item = f64> + '_ {
        self.items.iter().map(|i| i.1)
    }

    /// With the replay probability, a uniformly chosen stored item;
    /// otherwise `None` (use a fresh example). Always `None` when empty.
    pub fn draw(&self, rng: &mut impl Rng) -> Option<E> {
        if self.items.is_empty() || !rng.gen_bool(self.probability) {
            return None;
        }
        Some(self.items[rng.gen_range(0..self.items.len())].0.clone())
    }

    /// Records `loss` in the window and admits `item` when fewer than 20% of
    /// the window's losses are strictly greater. Returns whether it was
    /// admitted.
    pub fn observe(&mut self, item: E, loss: f64) -> bool {
        self.window.push_back(loss);
        while self.window.len() > self.window_len {
            self.window.pop_front();
        }
        let greater = self.window.iter().filter(|&&l| l > loss).count();
        let admit = (greater as f64) < REPLAY_TOP_FRACTION * self.window.len() as f64;
        if admit {
            self.items.push_back((item, loss));
            while self.items.len() > self.capacity {
                self.items.pop_front();
            }
        }
        admit
    }
}
