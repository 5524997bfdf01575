//! Recurrent next-action predictor trained on rollouts of sampled policies.
//!
//! A single-layer GRU reads `(s_{t−1}, a_{t−1}, s_t)` as concatenated one-hot
//! vectors (all-zero previous block at `t = 1`) and emits logits for `a_t`.

use serde::{Deserialize, Serialize};

use crate::bpd::model::LatentPolicyModel;
use crate::error::{BpdError, Result};
use crate::math::{self, sigmoid, softmax_in_place};
use crate::mdp::{rollout_policy, TabularMdp, Trajectory};
use crate::optim::Adam;
use crate::par;
use crate::predict::{OnlinePredictor, PredictionSession, PROB_FLOOR};
use crate::rng;

use rand::seq::SliceRandom;
use rand::Rng as _;

/// Parameter offsets inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    s: usize,
    a: usize,
    h: usize,
    /// input-to-gate tables `[gate][input][h]` for gates z, r, n
    w: usize,
    /// recurrent matrices `[gate][out][in]`
    u: usize,
    /// biases `[gate][h]` for z, r, n plus the recurrent n-bias
    b: usize,
    /// output `[action][h]`
    wo: usize,
    bo: usize,
    len: usize,
}

impl Layout {
    fn new(s: usize, a: usize, h: usize) -> Self {
        let d = 2 * s + a;
        let w = 0;
        let u = w + 3 * d * h;
        let b = u + 3 * h * h;
        let wo = b + 4 * h;
        let bo = wo + a * h;
        Layout {
            s,
            a,
            h,
            w,
            u,
            b,
            wo,
            bo,
            len: bo + a,
        }
    }

    fn input_dim(&self) -> usize {
        2 * self.s + self.a
    }

    fn w_row(&self, gate: usize, input: usize) -> usize {
        self.w + (gate * self.input_dim() + input) * self.h
    }

    fn u_mat(&self, gate: usize) -> usize {
        self.u + gate * self.h * self.h
    }

    fn bias(&self, gate: usize) -> usize {
        self.b + gate * self.h
    }

    /// Active one-hot positions for the step.
    fn inputs(&self, prev: Option<(usize, usize)>, s: usize) -> ([usize; 3], usize) {
        match prev {
            Some((ps, pa)) => ([ps, self.s + pa, self.s + self.a + s], 3),
            None => ([self.s + self.a + s, 0, 0], 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqPredictor {
    pub num_states: usize,
    pub num_actions: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

/// Per-step activations kept for backpropagation.
#[derive(Debug, Clone)]
struct StepCache {
    idx: [usize; 3],
    n_idx: usize,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    /// `U_n h_prev + b_un`
    g: Vec<f64>,
    h: Vec<f64>,
    probs: Vec<f64>,
}

impl SeqPredictor {
    pub fn new(num_states: usize, num_actions: usize, hidden: usize, seed: u64) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || hidden == 0 {
            return Err(BpdError::config("seq.hidden", "dimensions must be positive"));
        }
        let l = Layout::new(num_states, num_actions, hidden);
        let mut rng = rng::stream(seed, "seq.init", 0);
        let k = 1.0 / (hidden as f64).sqrt();
        let mut params: Vec<f64> = (0..l.len).map(|_| rng.random_range(-k..k)).collect();
        params[l.b..l.wo].iter_mut().for_each(|x| *x = 0.0);
        params[l.bo..].iter_mut().for_each(|x| *x = 0.0);
        Ok(SeqPredictor {
            num_states,
            num_actions,
            hidden,
            params,
        })
    }

    fn layout(&self) -> Layout {
        Layout::new(self.num_states, self.num_actions, self.hidden)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn step(&self, l: &Layout, h_prev: &[f64], prev: Option<(usize, usize)>, s: usize) -> StepCache {
        let h = l.h;
        let p = &self.params;
        let (idx, n_idx) = l.inputs(prev, s);
        let mut pre = [vec![0.0; h], vec![0.0; h], vec![0.0; h]];
        for (gate, out) in pre.iter_mut().enumerate() {
            out.copy_from_slice(&p[l.bias(gate)..l.bias(gate) + h]);
            for &i in &idx[..n_idx] {
                let row = &p[l.w_row(gate, i)..l.w_row(gate, i) + h];
                out.iter_mut().zip(row).for_each(|(o, w)| *o += w);
            }
        }
        let mut uh = [vec![0.0; h], vec![0.0; h], vec![0.0; h]];
        for (gate, out) in uh.iter_mut().enumerate() {
            let m = &p[l.u_mat(gate)..l.u_mat(gate) + h * h];
            for (i, o) in out.iter_mut().enumerate() {
                *o = m[i * h..(i + 1) * h].iter().zip(h_prev).map(|(a, b)| a * b).sum();
            }
        }
        let bun = &p[l.bias(3)..l.bias(3) + h];
        let [pz, pr, pn] = pre;
        let z: Vec<f64> = (0..h).map(|i| sigmoid(pz[i] + uh[0][i])).collect();
        let r: Vec<f64> = (0..h).map(|i| sigmoid(pr[i] + uh[1][i])).collect();
        let g: Vec<f64> = (0..h).map(|i| uh[2][i] + bun[i]).collect();
        let n: Vec<f64> = (0..h).map(|i| (pn[i] + r[i] * g[i]).tanh()).collect();
        let hn: Vec<f64> = (0..h).map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i]).collect();
        let mut probs = vec![0.0; l.a];
        for (a, o) in probs.iter_mut().enumerate() {
            let row = &p[l.wo + a * h..l.wo + (a + 1) * h];
            *o = p[l.bo + a] + row.iter().zip(&hn).map(|(x, y)| x * y).sum::<f64>();
        }
        softmax_in_place(&mut probs);
        StepCache {
            idx,
            n_idx,
            h_prev: h_prev.to_vec(),
            z,
            r,
            n,
            g,
            h: hn,
            probs,
        }
    }

    fn forward(&self, traj: &Trajectory) -> Vec<StepCache> {
        let l = self.layout();
        let mut h = vec![0.0; self.hidden];
        let mut prev = None;
        let mut out = Vec::with_capacity(traj.len());
        for st in &traj.steps {
            let c = self.step(&l, &h, prev, st.state);
            h.clone_from(&c.h);
            prev = Some((st.state, st.action));
            out.push(c);
        }
        out
    }

    /// Summed next-action negative log-likelihood of a trajectory and its
    /// gradient (accumulated into `grad`).
    fn nll_and_grad(&self, traj: &Trajectory, grad: &mut [f64]) -> f64 {
        let l = self.layout();
        let h = l.h;
        let p = &self.params;
        let caches = self.forward(traj);
        let mut nll = 0.0;
        let mut dh_next = vec![0.0; h];
        for (t, c) in caches.iter().enumerate().rev() {
            let a = traj.steps[t].action;
            nll -= c.probs[a].max(f64::MIN_POSITIVE).ln();
            let mut dh = dh_next.clone();
            for b in 0..l.a {
                let dl = c.probs[b] - f64::from(u8::from(a == b));
                grad[l.bo + b] += dl;
                let row = l.wo + b * h;
                for i in 0..h {
                    grad[row + i] += dl * c.h[i];
                    dh[i] += dl * p[row + i];
                }
            }
            let mut dh_prev: Vec<f64> = (0..h).map(|i| dh[i] * c.z[i]).collect();
            let mut da = [vec![0.0; h], vec![0.0; h], vec![0.0; h]];
            let mut dg = vec![0.0; h];
            for i in 0..h {
                let dn = dh[i] * (1.0 - c.z[i]);
                let dz = dh[i] * (c.h_prev[i] - c.n[i]);
                let dan = dn * (1.0 - c.n[i] * c.n[i]);
                let dr = dan * c.g[i];
                dg[i] = dan * c.r[i];
                da[0][i] = dz * c.z[i] * (1.0 - c.z[i]);
                da[1][i] = dr * c.r[i] * (1.0 - c.r[i]);
                da[2][i] = dan;
            }
            for (gate, dgate) in da.iter().enumerate() {
                let bo = l.bias(gate);
                for i in 0..h {
                    grad[bo + i] += dgate[i];
                }
                for &x in &c.idx[..c.n_idx] {
                    let row = l.w_row(gate, x);
                    for i in 0..h {
                        grad[row + i] += dgate[i];
                    }
                }
            }
            let bun = l.bias(3);
            for i in 0..h {
                grad[bun + i] += dg[i];
            }
            // recurrent matrices: z and r gates use da, the n gate uses dg
            for (gate, d) in [(0usize, &da[0]), (1, &da[1]), (2, &dg)] {
                let m = l.u_mat(gate);
                for i in 0..h {
                    let di = d[i];
                    if di == 0.0 {
                        continue;
                    }
                    let row = m + i * h;
                    for j in 0..h {
                        grad[row + j] += di * c.h_prev[j];
                        dh_prev[j] += di * p[row + j];
                    }
                }
            }
            dh_next = dh_prev;
        }
        nll
    }

    /// Summed next-action negative log-likelihood of a trajectory.
    pub fn trajectory_nll(&self, traj: &Trajectory) -> f64 {
        self.forward(traj)
            .iter()
            .zip(&traj.steps)
            .map(|(c, st)| -c.probs[st.action].max(f64::MIN_POSITIVE).ln())
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: SeqPredictor = serde_json::from_str(text)?;
        if p.params.len() != Layout::new(p.num_states, p.num_actions, p.hidden).len {
            return Err(BpdError::ShapeMismatch("sequence predictor parameter count".into()));
        }
        Ok(p)
    }
}

/// Output of [`seq_predict`]: the next-action distribution and the final
/// hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqOutput {
    pub dist: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// Run the predictor over `prefix` (steps before the current one) and predict
/// the action at `current_state`.
pub fn seq_predict(predictor: &SeqPredictor, prefix: &Trajectory, current_state: usize) -> Result<SeqOutput> {
    if current_state >= predictor.num_states {
        return Err(BpdError::OutOfRange(format!("state {current_state}")));
    }
    for st in &prefix.steps {
        if st.state >= predictor.num_states || st.action >= predictor.num_actions {
            return Err(BpdError::OutOfRange(format!("prefix step {st:?}")));
        }
    }
    let l = predictor.layout();
    let mut h = vec![0.0; predictor.hidden];
    let mut prev = None;
    for st in &prefix.steps {
        h = predictor.step(&l, &h, prev, st.state).h;
        prev = Some((st.state, st.action));
    }
    let c = predictor.step(&l, &h, prev, current_state);
    Ok(SeqOutput {
        dist: c.probs,
        hidden: c.h,
    })
}

struct SeqSession<'a> {
    predictor: &'a SeqPredictor,
    layout: Layout,
    h: Vec<f64>,
    prev: Option<(usize, usize)>,
    pending: Option<(usize, Vec<f64>)>,
}

impl PredictionSession for SeqSession<'_> {
    fn predict(&mut self, state: usize) -> Vec<f64> {
        let c = self.predictor.step(&self.layout, &self.h, self.prev, state);
        self.pending = Some((state, c.h));
        c.probs
    }

    fn observe(&mut self, state: usize, action: usize) {
        let h = match self.pending.take() {
            Some((s, h)) if s == state => h,
            _ => self.predictor.step(&self.layout, &self.h, self.prev, state).h,
        };
        self.h = h;
        self.prev = Some((state, action));
    }
}

impl OnlinePredictor for SeqPredictor {
    fn session(&self, _seed: u64) -> Box<dyn PredictionSession + '_> {
        Box::new(SeqSession {
            predictor: self,
            layout: self.layout(),
            h: vec![0.0; self.hidden],
            prev: None,
            pending: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeqTrainConfig {
    pub num_policies: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub epochs: usize,
    /// Episodes per gradient step.
    pub batch: usize,
    pub lr: f64,
    pub grad_clip: f64,
    /// Fraction of episodes held out for evaluation.
    pub heldout_frac: f64,
    pub seed: u64,
}

impl Default for SeqTrainConfig {
    fn default() -> Self {
        SeqTrainConfig {
            num_policies: 5000,
            horizon: 200,
            hidden: 64,
            epochs: 4,
            batch: 40,
            lr: 1e-3,
            grad_clip: 5.0,
            heldout_frac: 0.1,
            seed: 0,
        }
    }
}

impl SeqTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_policies < 100 {
            return Err(BpdError::config("seq.num_policies", "must be at least 100"));
        }
        for (name, v) in [
            ("seq.horizon", self.horizon),
            ("seq.hidden", self.hidden),
            ("seq.epochs", self.epochs),
            ("seq.batch", self.batch),
        ] {
            if v == 0 {
                return Err(BpdError::config(name, "must be positive"));
            }
        }
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) {
            return Err(BpdError::config("seq.lr", "learning rate and clip must be positive"));
        }
        if !(0.0 < self.heldout_frac && self.heldout_frac < 1.0) {
            return Err(BpdError::config("seq.heldout_frac", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SeqTrainResult {
    pub predictor: SeqPredictor,
    /// Mean per-step held-out cross-entropy (nats).
    pub heldout_ce: f64,
    /// Mean per-step training cross-entropy for each epoch.
    pub epoch_ce: Vec<f64>,
    pub heldout: Vec<Trajectory>,
}

/// Mean per-step CE of a predictor over a dataset, with the usual floor.
pub fn dataset_ce(predictor: &SeqPredictor, data: &[Trajectory]) -> f64 {
    let l = predictor.layout();
    let parts = par::map_slice(data, |t| {
        let mut h = vec![0.0; predictor.hidden];
        let mut prev = None;
        let mut acc = 0.0;
        for st in &t.steps {
            let c = predictor.step(&l, &h, prev, st.state);
            let p = math::floor_and_normalize(&c.probs, PROB_FLOOR);
            acc -= p[st.action].ln();
            h = c.h;
            prev = Some((st.state, st.action));
        }
        (acc, t.len())
    });
    let (s, n) = parts.iter().fold((0.0, 0usize), |(a, b), (c, d)| (a + c, b + d));
    s / n.max(1) as f64
}

/// Fit a sequence predictor on a fixed set of trajectories.
pub fn train_on_trajectories(
    data: Vec<Trajectory>,
    num_states: usize,
    num_actions: usize,
    cfg: &SeqTrainConfig,
) -> Result<SeqTrainResult> {
    if data.len() < 2 {
        return Err(BpdError::Empty("sequence predictor training data".into()));
    }
    let n_held = ((data.len() as f64 * cfg.heldout_frac).round() as usize).clamp(1, data.len() - 1);
    let mut data = data;
    let heldout = data.split_off(data.len() - n_held);
    let train = data;
    let mut predictor = SeqPredictor::new(num_states, num_actions, cfg.hidden, cfg.seed)?;
    let mut opt = Adam::new(predictor.num_params(), cfg.lr, 0.9);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = rng::stream(cfg.seed, "seq.shuffle", 0);
    let mut epoch_ce = Vec::with_capacity(cfg.epochs);
    let np = predictor.num_params();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut steps = 0usize;
        for batch in order.chunks(cfg.batch) {
            let pred = &predictor;
            let parts = par::map_slice(batch, |&i| {
                let mut g = vec![0.0; np];
                let nll = pred.nll_and_grad(&train[i], &mut g);
                (g, nll, train[i].len())
            });
            let n_steps: usize = parts.iter().map(|p| p.2).sum();
            let mut grad = vec![0.0; np];
            for (g, nll, _) in &parts {
                total += nll;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            steps += n_steps;
            grad.iter_mut().for_each(|x| *x /= n_steps.max(1) as f64);
            if grad.iter().any(|x| !x.is_finite()) {
                return Err(BpdError::Numerical(format!("non-finite sequence-model gradient in epoch {epoch}")));
            }
            math::clip_norm(&mut grad, cfg.grad_clip);
            opt.step(&mut predictor.params, &grad);
        }
        let ce = total / steps.max(1) as f64;
        log::info!("sequence predictor epoch {epoch}: train CE {ce:.4}");
        epoch_ce.push(ce);
    }
    let heldout_ce = dataset_ce(&predictor, &heldout);
    let baseline = (num_actions as f64).ln();
    if heldout_ce > baseline {
        return Err(BpdError::Underfit { heldout_ce, baseline });
    }
    Ok(SeqTrainResult {
        predictor,
        heldout_ce,
        epoch_ce,
        heldout,
    })
}

/// One rollout per policy sampled from the model; the latent of each policy
/// is returned alongside its trajectory.
pub fn sample_model_rollouts(
    model: &LatentPolicyModel,
    mdp: &TabularMdp,
    num_policies: usize,
    horizon: usize,
    seed: u64,
) -> Vec<(Vec<f64>, Trajectory)> {
    par::map_range(num_policies, |i| {
        let mut rng = rng::stream(seed, "seq.data", i as u64);
        let z = model.sample_latent(&mut rng);
        let pol = model.policy(&z);
        let t = rollout_policy(mdp, &pol, horizon, &mut rng);
        (z, t)
    })
}

/// Sample policies from the model, roll each out once, and fit the predictor.
pub fn train_sequence_predictor(
    model: &LatentPolicyModel,
    mdp: &TabularMdp,
    cfg: &SeqTrainConfig,
) -> Result<SeqTrainResult> {
    cfg.validate()?;
    if model.num_states() != mdp.num_states() || model.num_actions() != mdp.num_actions() {
        return Err(BpdError::ShapeMismatch("model and MDP dimensions differ".into()));
    }
    let data = sample_model_rollouts(model, mdp, cfg.num_policies, cfg.horizon, cfg.seed)
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    train_on_trajectories(data, mdp.num_states(), mdp.num_actions(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj() -> Trajectory {
        Trajectory::from_pairs(&[(0, 1), (2, 0), (1, 1), (2, 2), (0, 0)])
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = SeqPredictor::new(3, 3, 5, 7).unwrap();
        let t = traj();
        let mut g = vec![0.0; p.num_params()];
        p.nll_and_grad(&t, &mut g);
        let h = 1e-6;
        for i in (0..p.num_params()).step_by(7) {
            let mut a = p.clone();
            a.params[i] += h;
            let mut b = p.clone();
            b.params[i] -= h;
            let fd = (a.trajectory_nll(&t) - b.trajectory_nll(&t)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn session_matches_seq_predict() {
        let p = SeqPredictor::new(3, 3, 8, 1).unwrap();
        let t = traj();
        let mut sess = p.session(0);
        for (k, st) in t.steps.iter().enumerate() {
            let online = sess.predict(st.state);
            let prefix = Trajectory::new(t.steps[..k].to_vec());
            let batch = seq_predict(&p, &prefix, st.state).unwrap();
            assert_eq!(online, batch.dist);
            sess.observe(st.state, st.action);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = SeqPredictor::new(4, 2, 6, 3).unwrap();
        let back = SeqPredictor::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p, back);
        let out = seq_predict(&back, &Trajectory::default(), 1).unwrap();
        assert_eq!(out.hidden.len(), 6);
        assert!((out.dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let cfg = SeqTrainConfig {
            num_policies: 10,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(SeqTrainConfig::default().validate().is_ok());
    }
}
