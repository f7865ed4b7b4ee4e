/// Ring buffer holding the last `m + 1` states `y_{k-m}, ..., y_k`.
///
/// Seeded with the sampled initial segment, so negative indices resolve to
/// `xi(j * step)` until they are overwritten.
#[derive(Debug, Clone)]
pub struct DelayBuffer {
    dim: usize,
    lag: usize,
    data: Vec<f64>,
    /// Index of the newest state held.
    newest: i64,
    /// Slot holding the newest state.
    head: usize,
}

impl DelayBuffer {
    /// `initial` is the `(lag + 1) x dim` grid `y_{-lag}, ..., y_0`.
    pub fn from_initial(initial: &[f64], dim: usize, lag: usize) -> Self {
        assert_eq!(initial.len(), (lag + 1) * dim, "initial grid must hold lag + 1 states");
        DelayBuffer {
            dim,
            lag,
            data: initial.to_vec(),
            newest: 0,
            head: lag,
        }
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn newest_index(&self) -> i64 {
        self.newest
    }

    /// State `y_j`; panics unless `newest - lag <= j <= newest`.
    #[inline]
    pub fn get(&self, j: i64) -> &[f64] {
        let back = self.newest - j;
        assert!(
            (0..=self.lag as i64).contains(&back),
            "index {j} outside the window [{}, {}]",
            self.newest - self.lag as i64,
            self.newest
        );
        let cap = self.lag + 1;
        let slot = (self.head + cap - back as usize) % cap;
        &self.data[slot * self.dim..(slot + 1) * self.dim]
    }

    /// Appends `y_{newest + 1}`, dropping `y_{newest - lag}`.
    pub fn push(&mut self, state: &[f64]) {
        let cap = self.lag + 1;
        self.head = (self.head + 1) % cap;
        self.data[self.head * self.dim..(self.head + 1) * self.dim].copy_from_slice(state);
        self.newest += 1;
    }
}
