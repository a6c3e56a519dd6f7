use std::collections::{HashMap, HashSet, VecDeque};

use super::corpus::{Label, Trajectory};
use super::env::{Action, Env, Pos, State};
use crate::error::{Error, Result};

type Key = (Pos, bool, bool);

/// Breadth-first search over (cell, key, door) from `start`, never entering
/// `blocked`. Returns the action sequence to the first state satisfying
/// `target`; ties resolve by action order.
pub fn shortest_path(
    env: &Env,
    start: &State,
    blocked: Option<Pos>,
    target: impl Fn(&State) -> bool,
) -> Option<Vec<usize>> {
    if target(start) {
        return Some(Vec::new());
    }
    let actions: Vec<Action> = (0..env.n_actions()).filter_map(Action::from_id).collect();
    let mut parent: HashMap<Key, (Key, usize)> = HashMap::new();
    let mut queue = VecDeque::from([*start]);
    parent.insert(start.key(), (start.key(), usize::MAX));
    while let Some(s) = queue.pop_front() {
        for &a in &actions {
            let next = env.transit(&s, a);
            if next.key() == s.key() || Some(next.agent) == blocked || parent.contains_key(&next.key()) {
                continue;
            }
            parent.insert(next.key(), (s.key(), a.id()));
            if target(&next) {
                let mut path = Vec::new();
                let mut k = next.key();
                while k != start.key() {
                    let (prev, act) = parent[&k];
                    path.push(act);
                    k = prev;
                }
                path.reverse();
                return Some(path);
            }
            queue.push_back(next);
        }
    }
    None
}

/// Cells reachable from `start` without entering `blocked`, in BFS order.
pub(crate) fn reachable_cells(env: &Env, start: &State, blocked: Option<Pos>) -> Vec<Pos> {
    let actions: Vec<Action> = (0..env.n_actions()).filter_map(Action::from_id).collect();
    let mut seen: HashSet<Key> = HashSet::from([start.key()]);
    let mut cells = vec![start.agent];
    let mut queue = VecDeque::from([*start]);
    while let Some(s) = queue.pop_front() {
        for &a in &actions {
            let next = env.transit(&s, a);
            if Some(next.agent) == blocked || !seen.insert(next.key()) {
                continue;
            }
            if !cells.contains(&next.agent) {
                cells.push(next.agent);
            }
            queue.push_back(next);
        }
    }
    cells
}

/// Shortest successful demonstration from `start`.
pub fn plan_expert(env: &Env, start: Pos, id: usize) -> Result<Trajectory> {
    let s0 = env.initial_state(start)?;
    if start == env.goal {
        return Err(Error::Generation("expert start is the goal".into()));
    }
    let path = shortest_path(env, &s0, None, |s| s.agent == env.goal)
        .ok_or_else(|| Error::Generation(format!("goal unreachable from {start:?}")))?;
    if path.len() > env.max_steps {
        return Err(Error::Generation(format!(
            "shortest path of {} exceeds max_steps {}",
            path.len(),
            env.max_steps
        )));
    }
    Trajectory::record(env, id, Label::Clean, s0, &path)
}
