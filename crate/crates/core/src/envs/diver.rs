use std::hash::{Hash, Hasher};

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvError, Environment, FrameStep, Observation};
use crate::nn::{Tensor, TensorShape};

pub const DIVER_WIDTH: usize = 8;
/// Rows `0..DIVER_DEPTH`; row 0 is the surface.
pub const DIVER_DEPTH: usize = 10;
pub const MAX_OXYGEN: u32 = 40;
const ENEMY_ROWS: [usize; 3] = [3, 5, 7];
const TARGET_COUNT: usize = 2;
/// Enemies move one cell every this many frames.
const ENEMY_PERIOD: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiverAction {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Noop = 4,
}

impl DiverAction {
    pub const ALL: [DiverAction; 5] =
        [DiverAction::Up, DiverAction::Down, DiverAction::Left, DiverAction::Right, DiverAction::Noop];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Enemy {
    pub row: usize,
    pub col: usize,
    /// +1 moving right, -1 moving left.
    pub dir: i8,
}

/// Full state of a ToyDiver episode.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ToyDiverState {
    pub row: usize,
    pub col: usize,
    pub oxygen: u32,
    pub enemies: Vec<Enemy>,
    pub targets: Vec<(usize, usize)>,
    pub frame: u64,
    pub terminal: bool,
}

/// Miniature diving game: collect targets, dodge enemies on fixed rows and
/// surface before the oxygen runs out.
///
/// Per frame: the diver moves, oxygen drops by one below the surface (and
/// refills at the surface), enemies bounce horizontally every second frame,
/// contact with an enemy or an empty tank ends the episode with -1, and
/// touching a target pays +1 and respawns it at a seeded position.
#[derive(Debug, Clone)]
pub struct ToyDiver {
    state: ToyDiverState,
    rng: ChaCha8Rng,
    max_frames: u32,
    truncated: bool,
}

impl ToyDiver {
    pub fn new(max_frames: u32) -> Self {
        let mut env = Self {
            state: ToyDiverState {
                row: 0,
                col: 0,
                oxygen: MAX_OXYGEN,
                enemies: Vec::new(),
                targets: Vec::new(),
                frame: 0,
                terminal: false,
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            max_frames,
            truncated: false,
        };
        env.reset(0);
        env
    }

    /// Place the episode in an explicit state; respawns draw from `seed`.
    pub fn with_state(state: ToyDiverState, seed: u64, max_frames: u32) -> Self {
        Self { state, rng: ChaCha8Rng::seed_from_u64(seed), max_frames, truncated: false }
    }

    pub fn state(&self) -> &ToyDiverState {
        &self.state
    }

    fn spawn_target(&mut self) -> (usize, usize) {
        loop {
            let row = self.rng.gen_range(1..DIVER_DEPTH);
            let col = self.rng.gen_range(0..DIVER_WIDTH);
            let clash = ENEMY_ROWS.contains(&row)
                || (row, col) == (self.state.row, self.state.col)
                || self.state.targets.contains(&(row, col));
            if !clash {
                return (row, col);
            }
        }
    }
}

impl Environment for ToyDiver {
    fn basis_action_count(&self) -> usize {
        DiverAction::ALL.len()
    }

    fn observation_shape(&self) -> TensorShape {
        TensorShape::image(DIVER_DEPTH, DIVER_WIDTH, 4).expect("non-empty")
    }

    fn reset(&mut self, episode_seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(episode_seed);
        self.truncated = false;
        self.state = ToyDiverState {
            row: 0,
            col: DIVER_WIDTH / 2,
            oxygen: MAX_OXYGEN,
            enemies: Vec::new(),
            targets: Vec::new(),
            frame: 0,
            terminal: false,
        };
        for row in ENEMY_ROWS {
            let col = self.rng.gen_range(0..DIVER_WIDTH);
            let dir = if self.rng.gen::<bool>() { 1 } else { -1 };
            self.state.enemies.push(Enemy { row, col, dir });
        }
        for _ in 0..TARGET_COUNT {
            let t = self.spawn_target();
            self.state.targets.push(t);
        }
    }

    fn step(&mut self, basis: usize) -> Result<FrameStep, EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeOver);
        }
        let action =
            DiverAction::from_index(basis).ok_or(EnvError::InvalidAction { action: basis, count: 5 })?;
        let s = &mut self.state;
        match action {
            DiverAction::Up => s.row = s.row.saturating_sub(1),
            DiverAction::Down => s.row = (s.row + 1).min(DIVER_DEPTH - 1),
            DiverAction::Left => s.col = s.col.saturating_sub(1),
            DiverAction::Right => s.col = (s.col + 1).min(DIVER_WIDTH - 1),
            DiverAction::Noop => {}
        }
        if s.row == 0 {
            s.oxygen = MAX_OXYGEN;
        } else {
            s.oxygen = s.oxygen.saturating_sub(1);
        }
        if s.frame % ENEMY_PERIOD == ENEMY_PERIOD - 1 {
            for e in &mut s.enemies {
                let next = e.col as i64 + e.dir as i64;
                if next < 0 || next >= DIVER_WIDTH as i64 {
                    e.dir = -e.dir;
                }
                e.col = (e.col as i64 + e.dir as i64) as usize;
            }
        }
        s.frame += 1;

        let mut reward = 0.0;
        if s.enemies.iter().any(|e| (e.row, e.col) == (s.row, s.col)) {
            s.terminal = true;
            reward = -1.0;
        } else {
            if let Some(i) = s.targets.iter().position(|&t| t == (s.row, s.col)) {
                reward += 1.0;
                s.targets.remove(i);
                let t = self.spawn_target();
                self.state.targets.insert(i, t);
            }
            if self.state.oxygen == 0 {
                self.state.terminal = true;
                reward -= 1.0;
            }
        }
        let terminal = self.state.terminal;
        self.truncated = !terminal && self.state.frame >= self.max_frames as u64;
        Ok(FrameStep { reward, terminal, truncated: self.truncated })
    }

    fn is_done(&self) -> bool {
        self.state.terminal || self.truncated
    }

    fn observe(&self) -> Observation {
        let shape = self.observation_shape();
        let mut data = vec![0.0; shape.len()];
        let idx = |row: usize, col: usize, ch: usize| (row * DIVER_WIDTH + col) * 4 + ch;
        data[idx(self.state.row, self.state.col, 0)] = 1.0;
        for e in &self.state.enemies {
            data[idx(e.row, e.col, 1)] = 1.0;
        }
        for &(r, c) in &self.state.targets {
            data[idx(r, c, 2)] = 1.0;
        }
        let o2 = self.state.oxygen as f64 / MAX_OXYGEN as f64;
        for cell in 0..DIVER_DEPTH * DIVER_WIDTH {
            data[cell * 4 + 3] = o2;
        }
        Tensor::new(shape, data).expect("shape matches")
    }

    fn state_key(&self) -> u64 {
        let mut h = FnvHasher::default();
        let s = &self.state;
        (s.row, s.col, s.oxygen, &s.enemies, &s.targets, s.terminal).hash(&mut h);
        // enemy timing depends on frame parity
        (s.frame % ENEMY_PERIOD).hash(&mut h);
        h.finish()
    }
}
