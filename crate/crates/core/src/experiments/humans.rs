//! Scripted humans that walk around the obstacle with a habitual side.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{BpdError, Result};
use crate::gridworld::{AppleGridworld, RingRoutes, Side};
use crate::mdp::{Step, Trajectory};
use crate::par;
use crate::rng::{self, Rng};

/// A human with a usual side per heading, taken with probability `consistency`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedHuman {
    pub consistency: f64,
    pub usual_dir_to_tree: Side,
    pub usual_dir_back: Side,
    pub seed: u64,
}

impl SimulatedHuman {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.consistency) {
            return Err(BpdError::config("human.consistency", "must lie in [0.5, 1]"));
        }
        Ok(())
    }

    pub fn usual(&self, to_tree: bool) -> Side {
        if to_tree {
            self.usual_dir_to_tree
        } else {
            self.usual_dir_back
        }
    }

    /// Side choice for one leg.
    pub fn choose_side(&self, to_tree: bool, rng: &mut Rng) -> Side {
        let usual = self.usual(to_tree);
        if rng.random::<f64>() < self.consistency {
            usual
        } else {
            usual.other()
        }
    }

    /// Population of humans at one consistency level; habitual sides are drawn
    /// uniformly per human.
    pub fn population(consistency: f64, count: usize, seed: u64) -> Vec<SimulatedHuman> {
        (0..count)
            .map(|i| {
                let mut r = rng::stream(seed, "human.population", i as u64);
                let pick = |r: &mut Rng| if r.random::<bool>() { Side::LeftAround } else { Side::RightAround };
                SimulatedHuman {
                    consistency,
                    usual_dir_to_tree: pick(&mut r),
                    usual_dir_back: pick(&mut r),
                    seed: r.random(),
                }
            })
            .collect()
    }
}

/// Per-episode walking state of a simulated human.
///
/// The human re-chooses its side whenever its heading changes (on picking an
/// apple or dropping one) and otherwise follows the chosen arc. If it finds
/// itself on the other arc (possible only when it starts off the basket), it
/// walks back toward the leg's origin first.
#[derive(Debug, Clone)]
pub struct HumanWalker<'a> {
    pub human: SimulatedHuman,
    routes: &'a RingRoutes,
    world: &'a AppleGridworld,
    leg: Option<(bool, Side)>,
    /// Every (heading, side) choice made so far.
    pub choices: Vec<(bool, Side)>,
}

impl<'a> HumanWalker<'a> {
    pub fn new(human: SimulatedHuman, world: &'a AppleGridworld, routes: &'a RingRoutes) -> Self {
        HumanWalker {
            human,
            routes,
            world,
            leg: None,
            choices: Vec::new(),
        }
    }

    /// Move index the human takes from `(cell, carrying)`.
    pub fn act(&mut self, cell: usize, carrying: bool, rng: &mut Rng) -> usize {
        let to_tree = !carrying;
        let side = match self.leg {
            Some((h, s)) if h == to_tree => s,
            _ => {
                let s = self.human.choose_side(to_tree, rng);
                self.leg = Some((to_tree, s));
                self.choices.push((to_tree, s));
                s
            }
        };
        let path = self.routes.path(to_tree, side);
        let target = if let Some(i) = path.iter().position(|&c| c == cell) {
            path[(i + 1).min(path.len() - 1)]
        } else {
            // on the opposite arc: retreat toward where this leg starts
            let back = self.routes.path(to_tree, side.other());
            let i = back.iter().position(|&c| c == cell).unwrap_or(1);
            back[i.saturating_sub(1)]
        };
        self.world.move_between(cell, target).unwrap_or(0)
    }
}

/// `episodes` trajectories of length `horizon` from one human, starting at
/// the basket, not carrying.
pub fn simulate_humans(
    world: &AppleGridworld,
    human: &SimulatedHuman,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    human.validate()?;
    if horizon == 0 {
        return Err(BpdError::config("horizon", "must be at least 1"));
    }
    let routes = world.routes()?;
    Ok(par::map_range(episodes, |e| {
        let mut rng = rng::stream(seed ^ human.seed, "human.episode", e as u64);
        let mut walker = HumanWalker::new(*human, world, &routes);
        let mut state = world.state(world.basket(), false);
        let mut steps = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let (cell, carrying) = world.decode(state);
            let action = walker.act(cell, carrying, &mut rng);
            steps.push(Step { state, action });
            state = world.step(state, action).0;
        }
        Trajectory::new(steps)
    }))
}

/// Side taken on each complete leg of a trajectory, with its heading.
pub fn leg_sides(world: &AppleGridworld, routes: &RingRoutes, traj: &Trajectory) -> Vec<(bool, Side)> {
    let mut out = Vec::new();
    let mut last: Option<(bool, Side)> = None;
    for st in &traj.steps {
        let (cell, carrying) = world.decode(st.state);
        if let Some(side) = routes.side_at(cell, !carrying) {
            let cur = (!carrying, side);
            if last.map(|l| l.0) != Some(cur.0) {
                out.push(cur);
            }
            last = Some(cur);
        }
    }
    out
}
