//! The apple-picking gridworld.
//!
//! The agent walks around an obstacle between a basket and an apple tree.
//! States are `(free cell, carrying)` pairs; actions are the four moves.
//! Entering the tree without an apple picks one up, entering the basket while
//! carrying drops it and pays reward 1.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{BpdError, Result};
use crate::mdp::TabularMdp;

/// Grid coordinate; `y = 0` is the top row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::Up, Move::Down, Move::Left, Move::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Move> {
        Move::ALL.get(i).copied()
    }
}

pub const NUM_MOVES: usize = 4;

/// Which way a walker goes around the obstacle, relative to its own heading:
/// `Left` keeps the obstacle on the walker's right hand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    LeftAround,
    RightAround,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::LeftAround => Side::RightAround,
            Side::RightAround => Side::LeftAround,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridworldConfig {
    pub width: usize,
    pub height: usize,
    pub obstacle: Vec<Cell>,
    pub tree_cell: Cell,
    pub basket_cell: Cell,
    pub discount: f64,
}

impl Default for GridworldConfig {
    fn default() -> Self {
        let obstacle = (1..=3)
            .flat_map(|y| (1..=3).map(move |x| Cell::new(x, y)))
            .collect();
        GridworldConfig {
            width: 5,
            height: 5,
            obstacle,
            tree_cell: Cell::new(4, 0),
            basket_cell: Cell::new(0, 4),
            discount: 0.9,
        }
    }
}

impl GridworldConfig {
    /// 3×3 ring around a single obstacle cell, with tree and basket in
    /// opposite corners: 8 free cells, 16 states, 4 moves per leg.
    ///
    /// Small enough that at β = 10 the MaxEnt policy still collects a
    /// sizeable share of the optimal return, which the default layout does
    /// not (its MaxEnt return is under 2% of optimal).
    pub fn compact_ring() -> Self {
        GridworldConfig {
            width: 3,
            height: 3,
            obstacle: vec![Cell::new(1, 1)],
            tree_cell: Cell::new(2, 0),
            basket_cell: Cell::new(0, 2),
            discount: 0.9,
        }
    }
}

/// Gridworld geometry plus the tabular MDP built from it.
#[derive(Debug, Clone)]
pub struct AppleGridworld {
    cfg: GridworldConfig,
    free: Vec<Cell>,
    index: Vec<Option<usize>>,
    /// `neighbors[c][m]`: cell reached from free cell `c` by move `m`.
    neighbors: Vec<[usize; NUM_MOVES]>,
    mdp: TabularMdp,
}

impl AppleGridworld {
    pub fn new(cfg: GridworldConfig) -> Result<Self> {
        if cfg.width == 0 || cfg.height == 0 {
            return Err(BpdError::config("gridworld.size", "width and height must be positive"));
        }
        let in_bounds = |c: Cell| c.x < cfg.width && c.y < cfg.height;
        for (name, c) in [("tree_cell", cfg.tree_cell), ("basket_cell", cfg.basket_cell)] {
            if !in_bounds(c) {
                return Err(BpdError::config(format!("gridworld.{name}"), "outside the grid"));
            }
            if cfg.obstacle.contains(&c) {
                return Err(BpdError::config(format!("gridworld.{name}"), "cell is blocked"));
            }
        }
        if cfg.tree_cell == cfg.basket_cell {
            return Err(BpdError::config("gridworld.tree_cell", "must differ from basket_cell"));
        }
        let mut index = vec![None; cfg.width * cfg.height];
        let mut free = Vec::new();
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                let c = Cell::new(x, y);
                if !cfg.obstacle.contains(&c) {
                    index[y * cfg.width + x] = Some(free.len());
                    free.push(c);
                }
            }
        }
        let lookup = |c: Cell| index[c.y * cfg.width + c.x];
        let neighbors: Vec<[usize; NUM_MOVES]> = free
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut out = [i; NUM_MOVES];
                for m in Move::ALL {
                    let target = match m {
                        Move::Up if c.y > 0 => Some(Cell::new(c.x, c.y - 1)),
                        Move::Down if c.y + 1 < cfg.height => Some(Cell::new(c.x, c.y + 1)),
                        Move::Left if c.x > 0 => Some(Cell::new(c.x - 1, c.y)),
                        Move::Right if c.x + 1 < cfg.width => Some(Cell::new(c.x + 1, c.y)),
                        _ => None,
                    };
                    if let Some(j) = target.and_then(lookup) {
                        out[m.index()] = j;
                    }
                }
                out
            })
            .collect();

        // connectivity of the free region
        let mut seen = vec![false; free.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(c) = queue.pop_front() {
            for &n in &neighbors[c] {
                if !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(BpdError::config("gridworld.obstacle", "free cells are not connected"));
        }

        let mut world = AppleGridworld {
            cfg,
            free,
            index,
            neighbors,
            mdp: TabularMdp::new(1, 1, vec![1.0], vec![0.0], 0.0, vec![1.0])?,
        };
        world.mdp = world.build_mdp()?;
        Ok(world)
    }

    fn build_mdp(&self) -> Result<TabularMdp> {
        let ns = self.num_states();
        let na = NUM_MOVES;
        let mut transitions = vec![0.0; ns * na * ns];
        let mut rewards = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                let (next, r) = self.step(s, a);
                transitions[(s * na + a) * ns + next] = 1.0;
                rewards[s * na + a] = r;
            }
        }
        let mut start = vec![0.0; ns];
        start[self.state(self.basket(), false)] = 1.0;
        TabularMdp::new(ns, na, transitions, rewards, self.cfg.discount, start)
    }

    pub fn config(&self) -> &GridworldConfig {
        &self.cfg
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn num_cells(&self) -> usize {
        self.free.len()
    }

    pub fn num_states(&self) -> usize {
        2 * self.free.len()
    }

    pub fn cell(&self, idx: usize) -> Cell {
        self.free[idx]
    }

    pub fn cell_index(&self, c: Cell) -> Option<usize> {
        if c.x >= self.cfg.width || c.y >= self.cfg.height {
            return None;
        }
        self.index[c.y * self.cfg.width + c.x]
    }

    pub fn tree(&self) -> usize {
        self.cell_index(self.cfg.tree_cell).expect("validated")
    }

    pub fn basket(&self) -> usize {
        self.cell_index(self.cfg.basket_cell).expect("validated")
    }

    /// State index of `(cell, carrying)`.
    pub fn state(&self, cell: usize, carrying: bool) -> usize {
        2 * cell + usize::from(carrying)
    }

    /// Inverse of [`AppleGridworld::state`].
    pub fn decode(&self, state: usize) -> (usize, bool) {
        (state / 2, state % 2 == 1)
    }

    /// Cell reached by a move; walls and obstacles leave the walker in place.
    pub fn move_cell(&self, cell: usize, action: usize) -> usize {
        self.neighbors[cell][action]
    }

    /// Pick-up / drop-off rule applied on arrival at `cell`.
    /// Returns the new carrying flag and the reward earned.
    pub fn arrive(&self, cell: usize, carrying: bool) -> (bool, f64) {
        if cell == self.tree() && !carrying {
            (true, 0.0)
        } else if cell == self.basket() && carrying {
            (false, 1.0)
        } else {
            (carrying, 0.0)
        }
    }

    /// Deterministic single-agent transition.
    pub fn step(&self, state: usize, action: usize) -> (usize, f64) {
        let (cell, carrying) = self.decode(state);
        let next = self.move_cell(cell, action);
        let (carry2, r) = self.arrive(next, carrying);
        (self.state(next, carry2), r)
    }

    /// Moves that take `from` to the adjacent cell `to`, if any.
    pub fn move_between(&self, from: usize, to: usize) -> Option<usize> {
        (0..NUM_MOVES).find(|&m| self.neighbors[from][m] == to && from != to)
    }

    /// Free cells adjacent to `cell`.
    pub fn adjacent(&self, cell: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.neighbors[cell].iter().cloned().filter(|&n| n != cell).collect();
        out.dedup();
        out
    }

    /// The two routes from basket to tree around the obstacle.
    ///
    /// Requires the free region to be a simple ring (every free cell has
    /// exactly two free neighbours), which is what makes "go around on one
    /// side or the other" well defined.
    pub fn routes(&self) -> Result<RingRoutes> {
        for c in 0..self.num_cells() {
            if self.adjacent(c).len() != 2 {
                return Err(BpdError::config(
                    "gridworld.obstacle",
                    "obstacle must leave a ring of free cells with exactly two routes",
                ));
            }
        }
        let basket = self.basket();
        let tree = self.tree();
        let mut arcs = Vec::new();
        for first in self.adjacent(basket) {
            let mut path = vec![basket];
            let mut prev = basket;
            let mut cur = first;
            while cur != tree {
                if cur == basket {
                    return Err(BpdError::config("gridworld", "tree is not on the ring"));
                }
                path.push(cur);
                let next = self.adjacent(cur).into_iter().find(|&n| n != prev).expect("ring");
                prev = cur;
                cur = next;
            }
            path.push(tree);
            arcs.push(path);
        }
        let (a, b) = (arcs.remove(0), arcs.remove(0));
        // cycle: out along `a`, back along `b`; positive shoelace in y-down
        // coordinates is clockwise on screen, i.e. obstacle on the right.
        let mut cycle: Vec<Cell> = a.iter().map(|&c| self.cell(c)).collect();
        cycle.extend(b.iter().rev().skip(1).take(b.len().saturating_sub(2)).map(|&c| self.cell(c)));
        let mut area = 0i64;
        for i in 0..cycle.len() {
            let p = cycle[i];
            let q = cycle[(i + 1) % cycle.len()];
            area += p.x as i64 * q.y as i64 - q.x as i64 * p.y as i64;
        }
        let (left, right) = if area > 0 { (a, b) } else { (b, a) };
        let mut side_of_cell = vec![None; self.num_cells()];
        for &c in &left[1..left.len() - 1] {
            side_of_cell[c] = Some(Side::LeftAround);
        }
        for &c in &right[1..right.len() - 1] {
            side_of_cell[c] = Some(Side::RightAround);
        }
        Ok(RingRoutes {
            to_tree_left: left,
            to_tree_right: right,
            side_of_cell,
        })
    }
}

/// Both arcs of the ring, stored as cell-index paths from basket to tree.
#[derive(Debug, Clone)]
pub struct RingRoutes {
    pub to_tree_left: Vec<usize>,
    pub to_tree_right: Vec<usize>,
    /// Which arc (named for the basket→tree heading) an interior cell lies on.
    side_of_cell: Vec<Option<Side>>,
}

impl RingRoutes {
    /// Cell path for a leg. `to_tree` selects the heading; `side` is relative
    /// to that heading, so the tree→basket left-around path runs along the
    /// basket→tree right-around arc.
    pub fn path(&self, to_tree: bool, side: Side) -> Vec<usize> {
        match (to_tree, side) {
            (true, Side::LeftAround) => self.to_tree_left.clone(),
            (true, Side::RightAround) => self.to_tree_right.clone(),
            (false, Side::LeftAround) => self.to_tree_right.iter().rev().cloned().collect(),
            (false, Side::RightAround) => self.to_tree_left.iter().rev().cloned().collect(),
        }
    }

    /// Side of the leg a walker is on when standing at an interior `cell`
    /// with the given heading; `None` at the basket and tree.
    pub fn side_at(&self, cell: usize, to_tree: bool) -> Option<Side> {
        self.side_of_cell[cell].map(|s| if to_tree { s } else { s.other() })
    }

    /// Length (in moves) of a leg.
    pub fn leg_len(&self, to_tree: bool, side: Side) -> usize {
        self.path(to_tree, side).len() - 1
    }
}

/// Build the apple-gridworld MDP from a configuration.
pub fn build_apple_gridworld(cfg: GridworldConfig) -> Result<TabularMdp> {
    Ok(AppleGridworld::new(cfg)?.mdp().clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dimensions() {
        let w = AppleGridworld::new(GridworldConfig::default()).unwrap();
        assert_eq!(w.num_cells(), 16);
        assert_eq!(w.mdp().num_states(), 32);
        assert_eq!(w.mdp().num_actions(), 4);
        assert_eq!(w.mdp().discount(), 0.9);
        let start = w.mdp().start_dist();
        assert_eq!(start[w.state(w.basket(), false)], 1.0);
    }

    #[test]
    fn blocked_move_is_noop() {
        let w = AppleGridworld::new(GridworldConfig::default()).unwrap();
        // (2, 4) is directly below the obstacle
        let c = w.cell_index(Cell::new(2, 4)).unwrap();
        assert_eq!(w.move_cell(c, Move::Up.index()), c);
        let s = w.state(c, false);
        assert_eq!(w.mdp().next_dist(s, Move::Up.index())[s], 1.0);
        // and the outer wall
        assert_eq!(w.move_cell(c, Move::Down.index()), c);
    }

    #[test]
    fn pick_and_deposit() {
        let w = AppleGridworld::new(GridworldConfig::default()).unwrap();
        let near_tree = w.cell_index(Cell::new(3, 0)).unwrap();
        let (s2, r) = w.step(w.state(near_tree, false), Move::Right.index());
        assert_eq!(w.decode(s2), (w.tree(), true));
        assert_eq!(r, 0.0);
        let near_basket = w.cell_index(Cell::new(0, 3)).unwrap();
        let (s3, r) = w.step(w.state(near_basket, true), Move::Down.index());
        assert_eq!(w.decode(s3), (w.basket(), false));
        assert_eq!(r, 1.0);
        // no reward for arriving empty-handed
        assert_eq!(w.step(w.state(near_basket, false), Move::Down.index()).1, 0.0);
    }

    #[test]
    fn rejects_blocked_and_disconnected() {
        let mut cfg = GridworldConfig::default();
        cfg.obstacle.push(Cell::new(4, 0));
        assert!(AppleGridworld::new(cfg).is_err());

        let mut cfg = GridworldConfig::default();
        // wall off the left column from the rest
        cfg.obstacle.push(Cell::new(1, 0));
        cfg.obstacle.push(Cell::new(1, 4));
        assert!(AppleGridworld::new(cfg).is_err());
    }

    #[test]
    fn ring_routes_have_equal_length_and_sides() {
        let w = AppleGridworld::new(GridworldConfig::default()).unwrap();
        let r = w.routes().unwrap();
        assert_eq!(r.leg_len(true, Side::LeftAround), 8);
        assert_eq!(r.leg_len(true, Side::RightAround), 8);
        // heading to the tree, left-around passes the top-left corner
        assert!(r.path(true, Side::LeftAround).contains(&w.cell_index(Cell::new(0, 0)).unwrap()));
        // heading back, left-around passes the bottom-right corner
        assert!(r.path(false, Side::LeftAround).contains(&w.cell_index(Cell::new(4, 4)).unwrap()));
        let corner = w.cell_index(Cell::new(0, 0)).unwrap();
        assert_eq!(r.side_at(corner, true), Some(Side::LeftAround));
        assert_eq!(r.side_at(corner, false), Some(Side::RightAround));
        assert_eq!(r.side_at(w.basket(), true), None);
    }

    #[test]
    fn non_ring_has_no_two_routes() {
        let cfg = GridworldConfig {
            width: 6,
            height: 6,
            obstacle: vec![Cell::new(2, 2), Cell::new(3, 3), Cell::new(2, 3), Cell::new(3, 2)],
            tree_cell: Cell::new(5, 0),
            basket_cell: Cell::new(0, 5),
            discount: 0.9,
        };
        let w = AppleGridworld::new(cfg).unwrap();
        assert!(w.routes().is_err());
    }
}
