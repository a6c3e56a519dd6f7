use crate::error::{Error, Result};

/// Grid cell; `y` grows downwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pos {
    pub x: usize,
    pub y: usize,
}

impl Pos {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: Pos) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Pickup,
    Toggle,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Pickup,
        Action::Toggle,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Action> {
        Self::ALL.get(id).copied()
    }

    fn delta(self) -> Option<(isize, isize)> {
        match self {
            Action::Up => Some((0, -1)),
            Action::Down => Some((0, 1)),
            Action::Left => Some((-1, 0)),
            Action::Right => Some((1, 0)),
            Action::Pickup | Action::Toggle => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    Open,
    FourRoom,
    DoorKey,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Open => "open",
            EnvKind::FourRoom => "fourroom",
            EnvKind::DoorKey => "doorkey",
        }
    }
}

/// How an episode ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Goal,
    Elsewhere,
    Timeout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct State {
    pub agent: Pos,
    pub has_key: bool,
    pub door_open: bool,
    /// Actions taken so far in the episode.
    pub t: usize,
}

impl State {
    pub fn at(agent: Pos) -> Self {
        Self {
            agent,
            has_key: false,
            door_open: false,
            t: 0,
        }
    }

    /// The planning-relevant part of the state (everything but the clock).
    pub(crate) fn key(&self) -> (Pos, bool, bool) {
        (self.agent, self.has_key, self.door_open)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub state: State,
    pub reward: f64,
    pub done: bool,
}

/// Immutable gridworld description.
#[derive(Clone, Debug, PartialEq)]
pub struct Env {
    pub kind: EnvKind,
    pub width: usize,
    pub height: usize,
    walls: Vec<bool>,
    pub goal: Pos,
    pub key: Option<Pos>,
    pub door: Option<Pos>,
    pub max_steps: usize,
    pub gamma: f64,
    starts: Vec<Pos>,
}

pub const DEFAULT_MAX_STEPS: usize = 100;

impl Env {
    /// Wall-free room.
    pub fn open_room(width: usize, height: usize, goal: Pos, max_steps: usize) -> Result<Env> {
        let walls = vec![false; width * height];
        let mut env = Env {
            kind: EnvKind::Open,
            width,
            height,
            walls,
            goal,
            key: None,
            door: None,
            max_steps,
            gamma: 0.99,
            starts: Vec::new(),
        };
        env.starts = env.cells().filter(|&p| p != goal).collect();
        env.validate()?;
        Ok(env)
    }

    /// Square grid split into four rooms by a wall cross with one gap per
    /// wall segment. The goal sits in the bottom-right room.
    pub fn four_room(size: usize) -> Result<Env> {
        if size < 5 {
            return Err(Error::contract(format!("four_room: size {size} < 5")));
        }
        let mid = size / 2;
        let (ga, gb) = (mid / 2, mid + (size - mid) / 2);
        let mut walls = vec![false; size * size];
        for i in 0..size {
            walls[mid * size + i] = true;
            walls[i * size + mid] = true;
        }
        for (x, y) in [(mid, ga), (mid, gb), (ga, mid), (gb, mid)] {
            walls[y * size + x] = false;
        }
        let goal = Pos::new(size - 2, size - 2);
        let mut env = Env {
            kind: EnvKind::FourRoom,
            width: size,
            height: size,
            walls,
            goal,
            key: None,
            door: None,
            max_steps: DEFAULT_MAX_STEPS,
            gamma: 0.99,
            starts: Vec::new(),
        };
        env.starts = env.cells().filter(|&p| env.is_open(p) && p != goal).collect();
        env.validate()?;
        Ok(env)
    }

    /// Two rooms split by a vertical wall with a locked door. The agent starts
    /// in the left room next to the key; the goal is in the right room.
    pub fn door_key(size: usize) -> Result<Env> {
        if size < 5 {
            return Err(Error::contract(format!("door_key: size {size} < 5")));
        }
        let mid = size / 2;
        let mut walls = vec![false; size * size];
        for y in 0..size {
            walls[y * size + mid] = true;
        }
        let door = Pos::new(mid, 1);
        walls[door.y * size + door.x] = false;
        let key = Pos::new(1, size - 2);
        let goal = Pos::new(size - 2, size - 2);
        let mut env = Env {
            kind: EnvKind::DoorKey,
            width: size,
            height: size,
            walls,
            goal,
            key: Some(key),
            door: Some(door),
            max_steps: DEFAULT_MAX_STEPS,
            gamma: 0.99,
            starts: Vec::new(),
        };
        env.starts = env
            .cells()
            .filter(|&p| p.x < mid && p != key && env.is_open(p))
            .collect();
        env.validate()?;
        Ok(env)
    }

    /// Environment by CLI name.
    pub fn by_name(name: &str) -> Result<Env> {
        match name {
            "fourroom" => Env::four_room(9),
            "doorkey" => Env::door_key(9),
            other => Err(Error::Config(format!("unknown env {other:?}"))),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.max_steps == 0 {
            return Err(Error::contract("env dimensions and max_steps must be positive"));
        }
        if !self.in_bounds(self.goal) || self.is_wall(self.goal) {
            return Err(Error::contract(format!("goal {:?} is not a free cell", self.goal)));
        }
        if self.starts.is_empty() {
            return Err(Error::contract("env has no start cells"));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn n_actions(&self) -> usize {
        match self.kind {
            EnvKind::DoorKey => 6,
            _ => 4,
        }
    }

    /// `one-hot(agent) ++ one-hot(goal) ++ [key flag, door flag]`.
    pub fn state_dim(&self) -> usize {
        2 * self.n_cells() + 2
    }

    pub fn cell_index(&self, p: Pos) -> usize {
        p.y * self.width + p.x
    }

    pub fn cell_at(&self, index: usize) -> Pos {
        Pos::new(index % self.width, index / self.width)
    }

    pub fn cells(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.n_cells()).map(|i| self.cell_at(i))
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.x < self.width && p.y < self.height
    }

    pub fn is_wall(&self, p: Pos) -> bool {
        self.walls[self.cell_index(p)]
    }

    /// Not a wall; a closed door counts as open here.
    pub fn is_open(&self, p: Pos) -> bool {
        self.in_bounds(p) && !self.is_wall(p)
    }

    /// Valid episode start cells.
    pub fn start_cells(&self) -> &[Pos] {
        &self.starts
    }

    pub fn initial_state(&self, start: Pos) -> Result<State> {
        let s = State::at(start);
        self.check_state(&s)?;
        Ok(s)
    }

    fn check_state(&self, s: &State) -> Result<()> {
        if !self.is_open(s.agent) {
            return Err(Error::contract(format!("agent at {:?} is not a free cell", s.agent)));
        }
        if Some(s.agent) == self.door && !s.door_open {
            return Err(Error::contract("agent inside a closed door"));
        }
        Ok(())
    }

    /// Effect of `action` ignoring the clock and termination.
    pub(crate) fn transit(&self, s: &State, action: Action) -> State {
        let mut next = *s;
        match action {
            Action::Pickup => {
                if Some(s.agent) == self.key {
                    next.has_key = true;
                }
            }
            Action::Toggle => {
                if let Some(door) = self.door {
                    if s.has_key && s.agent.manhattan(door) == 1 {
                        next.door_open = true;
                    }
                }
            }
            mv => {
                let (dx, dy) = mv.delta().expect("movement action");
                let nx = s.agent.x as isize + dx;
                let ny = s.agent.y as isize + dy;
                if nx >= 0 && ny >= 0 {
                    let p = Pos::new(nx as usize, ny as usize);
                    let blocked_door = Some(p) == self.door && !s.door_open;
                    if self.is_open(p) && !blocked_door {
                        next.agent = p;
                    }
                }
            }
        }
        next
    }

    pub fn action(&self, id: usize) -> Result<Action> {
        if id >= self.n_actions() {
            return Err(Error::contract(format!(
                "action {id} outside the {}-action set of {}",
                self.n_actions(),
                self.kind.name()
            )));
        }
        Ok(Action::from_id(id).expect("id below n_actions"))
    }

    /// Success reward after `k` actions.
    pub fn goal_reward(&self, k: usize) -> f64 {
        100.0 * (1.0 - 0.9 * k as f64 / self.max_steps as f64)
    }

    pub fn step(&self, s: &State, action: usize) -> Result<StepResult> {
        let a = self.action(action)?;
        self.check_state(s)?;
        let mut next = self.transit(s, a);
        next.t = s.t + 1;
        if next.agent == self.goal {
            return Ok(StepResult {
                state: next,
                reward: self.goal_reward(next.t),
                done: true,
            });
        }
        Ok(StepResult {
            state: next,
            reward: 0.0,
            done: next.t >= self.max_steps,
        })
    }

    pub fn features(&self, s: &State) -> Vec<f32> {
        let n = self.n_cells();
        let mut f = vec![0.0; self.state_dim()];
        f[self.cell_index(s.agent)] = 1.0;
        f[n + self.cell_index(self.goal)] = 1.0;
        f[2 * n] = if s.has_key { 1.0 } else { 0.0 };
        f[2 * n + 1] = if s.door_open { 1.0 } else { 0.0 };
        f
    }

    /// Inverse of [`Env::features`] up to the clock, which is set to zero.
    pub fn decode(&self, f: &[f32]) -> Result<State> {
        if f.len() != self.state_dim() {
            return Err(Error::contract(format!(
                "feature length {} != {}",
                f.len(),
                self.state_dim()
            )));
        }
        let n = self.n_cells();
        let hot: Vec<usize> = (0..n).filter(|&i| f[i] != 0.0).collect();
        if hot.len() != 1 {
            return Err(Error::contract("agent one-hot must have exactly one entry"));
        }
        Ok(State {
            agent: self.cell_at(hot[0]),
            has_key: f[2 * n] != 0.0,
            door_open: f[2 * n + 1] != 0.0,
            t: 0,
        })
    }
}
