//! Two-agent cooperative apple gridworld.
//!
//! A human and a robot move simultaneously on the same free cells and share
//! the reward: each apple either agent drops in the basket pays 1 to the team.
//! Agents never share a cell. If both target the same cell, or they try to
//! swap places, both stay put. An agent that moves into the cell of a
//! partner who stays also stays.

use serde::{Deserialize, Serialize};

use crate::error::{BpdError, Result};
use crate::gridworld::{AppleGridworld, GridworldConfig, NUM_MOVES};
use crate::mdp::{TabularMdp, TabularPolicy};

/// Largest joint state space [`compose_two_player`] will build.
pub const MAX_JOINT_STATES: usize = 100_000;

/// Positions and carrying flags of both agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointState {
    pub human_cell: usize,
    pub human_carrying: bool,
    pub robot_cell: usize,
    pub robot_carrying: bool,
}

#[derive(Debug, Clone)]
pub struct TwoPlayerGridworld {
    world: AppleGridworld,
    starts: Vec<usize>,
}

/// Build the two-player game on the gridworld described by `cfg`.
///
/// Episodes start with both agents empty-handed on the two cells next to the
/// basket, in either order.
pub fn compose_two_player(cfg: GridworldConfig) -> Result<TwoPlayerGridworld> {
    let world = AppleGridworld::new(cfg)?;
    let c = world.num_cells();
    let joint = c * c * 4;
    if joint > MAX_JOINT_STATES {
        return Err(BpdError::config(
            "gridworld",
            format!("joint state space of {joint} exceeds the cap of {MAX_JOINT_STATES}"),
        ));
    }
    let adj = world.adjacent(world.basket());
    if adj.len() < 2 {
        return Err(BpdError::config("gridworld.basket_cell", "needs two free neighbouring cells"));
    }
    let mut game = TwoPlayerGridworld { world, starts: Vec::new() };
    let (a, b) = (adj[0], adj[1]);
    game.starts = vec![
        game.encode(JointState {
            human_cell: a,
            human_carrying: false,
            robot_cell: b,
            robot_carrying: false,
        }),
        game.encode(JointState {
            human_cell: b,
            human_carrying: false,
            robot_cell: a,
            robot_carrying: false,
        }),
    ];
    Ok(game)
}

impl TwoPlayerGridworld {
    pub fn world(&self) -> &AppleGridworld {
        &self.world
    }

    pub fn num_states(&self) -> usize {
        let c = self.world.num_cells();
        c * c * 4
    }

    pub fn num_agent_actions(&self) -> usize {
        NUM_MOVES
    }

    pub fn discount(&self) -> f64 {
        self.world.mdp().discount()
    }

    /// Every start state; evaluation averages over all of them.
    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn encode(&self, s: JointState) -> usize {
        let c = self.world.num_cells();
        ((s.human_cell * c + s.robot_cell) * 2 + usize::from(s.human_carrying)) * 2 + usize::from(s.robot_carrying)
    }

    pub fn decode(&self, idx: usize) -> JointState {
        let c = self.world.num_cells();
        let robot_carrying = idx % 2 == 1;
        let human_carrying = (idx / 2) % 2 == 1;
        let pair = idx / 4;
        JointState {
            human_cell: pair / c,
            human_carrying,
            robot_cell: pair % c,
            robot_carrying,
        }
    }

    /// The human's single-agent gridworld state.
    pub fn human_view(&self, idx: usize) -> usize {
        let s = self.decode(idx);
        self.world.state(s.human_cell, s.human_carrying)
    }

    /// The robot's single-agent gridworld state.
    pub fn robot_view(&self, idx: usize) -> usize {
        let s = self.decode(idx);
        self.world.state(s.robot_cell, s.robot_carrying)
    }

    /// Cells occupied after both agents try to move.
    pub fn resolve_moves(&self, human: usize, robot: usize, a_h: usize, a_r: usize) -> (usize, usize) {
        let th = self.world.move_cell(human, a_h);
        let tr = self.world.move_cell(robot, a_r);
        if th == tr || (th == robot && tr == human) {
            return (human, robot);
        }
        let h = if th == robot && tr == robot { human } else { th };
        let r = if tr == human && th == human { robot } else { tr };
        (h, r)
    }

    /// Joint transition; the reward is the team total.
    pub fn step(&self, idx: usize, a_h: usize, a_r: usize) -> (usize, f64) {
        let s = self.decode(idx);
        let (h, r) = self.resolve_moves(s.human_cell, s.robot_cell, a_h, a_r);
        let (hc, rh) = self.world.arrive(h, s.human_carrying);
        let (rc, rr) = self.world.arrive(r, s.robot_carrying);
        let next = JointState {
            human_cell: h,
            human_carrying: hc,
            robot_cell: r,
            robot_carrying: rc,
        };
        (self.encode(next), rh + rr)
    }

    fn start_dist(&self) -> Vec<f64> {
        let mut start = vec![0.0; self.num_states()];
        for &s in &self.starts {
            start[s] += 1.0 / self.starts.len() as f64;
        }
        start
    }

    /// The full joint MDP with action index `a_h · 4 + a_r`.
    pub fn joint_mdp(&self) -> Result<TabularMdp> {
        let ns = self.num_states();
        let na = NUM_MOVES * NUM_MOVES;
        let mut p = vec![0.0; ns * na * ns];
        let mut r = vec![0.0; ns * na];
        for s in 0..ns {
            for ah in 0..NUM_MOVES {
                for ar in 0..NUM_MOVES {
                    let a = ah * NUM_MOVES + ar;
                    let (next, rew) = self.step(s, ah, ar);
                    p[(s * na + a) * ns + next] = 1.0;
                    r[s * na + a] = rew;
                }
            }
        }
        TabularMdp::new(ns, na, p, r, self.discount(), self.start_dist())
    }

    /// Single-agent MDP faced by the robot when the human follows the
    /// Markov policy `human` over its own gridworld state.
    pub fn induced_robot_mdp(&self, human: &TabularPolicy) -> Result<TabularMdp> {
        if human.num_states() != self.world.num_states() || human.num_actions() != NUM_MOVES {
            return Err(BpdError::ShapeMismatch("human policy does not match the gridworld".into()));
        }
        let ns = self.num_states();
        let na = NUM_MOVES;
        let mut p = vec![0.0; ns * na * ns];
        let mut r = vec![0.0; ns * na];
        for s in 0..ns {
            let row = human.row(self.human_view(s));
            for ar in 0..na {
                for (ah, &ph) in row.iter().enumerate() {
                    if ph == 0.0 {
                        continue;
                    }
                    let (next, rew) = self.step(s, ah, ar);
                    p[(s * na + ar) * ns + next] += ph;
                    r[s * na + ar] += ph * rew;
                }
            }
        }
        TabularMdp::new(ns, na, p, r, self.discount(), self.start_dist())
    }
}
