//! Coordinated exploration: an 8x8 gridworld with four mines and a reward
//! multiplier key.
//!
//! Three mines land at random cells each episode with values drawn from
//! N(10, 2), N(10, 2) and N(20, 2); a fourth mine sits in a fixed corner
//! and is always worth 1. Mining happens whenever both agents stand on the
//! same mine square and pays that mine's value, tripled once both agents
//! have stood together on the key square. Agents see a 3x3 window around
//! themselves plus their own noisy copy of the mine values, and may act
//! only every 1, 2 or 4 timesteps depending on their speed trait. The
//! partner's speed is never observed.

use super::Move;
use crate::env::AgentAction;
use crate::meta::{EnvFamily, GroundTruthSupport, NoiseModel, StateSpaceDescriptor};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

pub const NUM_MINES: usize = 4;
/// Index of the fixed-position, fixed-value mine in the mine arrays.
pub const FIXED_MINE: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speed {
    High,
    Medium,
    Low,
}

impl Speed {
    /// An agent acts on timesteps divisible by its period and is forced to
    /// stay otherwise.
    pub fn period(self) -> usize {
        match self {
            Speed::High => 1,
            Speed::Medium => 2,
            Speed::Low => 4,
        }
    }

    pub const ALL: [Speed; 3] = [Speed::High, Speed::Medium, Speed::Low];

    pub fn index(self) -> usize {
        match self {
            Speed::High => 0,
            Speed::Medium => 1,
            Speed::Low => 2,
        }
    }
}

impl std::fmt::Display for Speed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Speed::High => write!(f, "high"),
            Speed::Medium => write!(f, "medium"),
            Speed::Low => write!(f, "low"),
        }
    }
}

/// Per-agent speed assignment: fixed for self-play and homogeneous
/// training, uniform over the three levels for meta-regime training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpeedSource {
    Fixed(Speed),
    Uniform,
}

impl SpeedSource {
    fn sample(self, rng: &mut RngStream) -> Speed {
        match self {
            SpeedSource::Fixed(s) => s,
            SpeedSource::Uniform => Speed::ALL[rng.index(3)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CeeConfig {
    pub grid: usize,
    pub horizon: usize,
    pub fixed_mine_value: f64,
    pub mine_means: [f64; 3],
    pub mine_sd: f64,
    pub obs_noise_sd: f64,
    pub key_multiplier: f64,
    pub speeds: [SpeedSource; 2],
}

impl Default for CeeConfig {
    fn default() -> Self {
        Self {
            grid: 8,
            horizon: 32,
            fixed_mine_value: 1.0,
            mine_means: [10.0, 10.0, 20.0],
            mine_sd: 2.0,
            obs_noise_sd: 2.0,
            key_multiplier: 3.0,
            speeds: [SpeedSource::Fixed(Speed::High); 2],
        }
    }
}

impl CeeConfig {
    /// Agents start in one corner; the always-worth-1 mine sits in the
    /// adjacent corner and the key in the corner farthest from the start.
    pub fn start(&self) -> (usize, usize) {
        (0, 0)
    }
    pub fn fixed_mine_pos(&self) -> (usize, usize) {
        (0, self.grid - 1)
    }
    pub fn key_pos(&self) -> (usize, usize) {
        (self.grid - 1, self.grid - 1)
    }

    /// The default corruption for this game: additive gaussian on the mine
    /// values; speeds are a trait, not an observation.
    pub fn default_noise(&self) -> NoiseModel {
        NoiseModel::Composite(vec![
            NoiseModel::AdditiveGaussian { sigma: self.obs_noise_sd },
            NoiseModel::SpeedIdentity,
        ])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CeeInstance {
    /// Positions of the three random mines plus the fixed mine.
    pub mine_pos: [(usize, usize); NUM_MINES],
    /// True (or, in an agent's copy, noisy) values per mine.
    pub mine_values: [f64; NUM_MINES],
    pub speeds: [Speed; 2],
}

#[derive(Clone, Debug)]
pub struct CeeState {
    pub pos: [(usize, usize); 2],
    pub keyed: [bool; 2],
    pub t: usize,
    mined_last: bool,
}

#[derive(Clone, Debug)]
pub struct CeeFamily {
    pub cfg: CeeConfig,
    heads: [usize; 1],
    /// Cells eligible for random mines: everything except the four corners.
    eligible: Vec<(usize, usize)>,
}

impl CeeFamily {
    pub fn new(cfg: CeeConfig) -> Self {
        assert!(cfg.grid >= 3, "grid too small");
        let g = cfg.grid;
        let corners = [(0, 0), (0, g - 1), (g - 1, 0), (g - 1, g - 1)];
        let eligible = (0..g)
            .flat_map(|x| (0..g).map(move |y| (x, y)))
            .filter(|c| !corners.contains(c))
            .collect();
        Self { cfg, heads: [Move::COUNT], eligible }
    }

    fn window_dim() -> usize {
        // wall, mine, key, other-agent channels over the 3x3 window
        4 * 9
    }

    /// value + presence per mine, own speed one-hot, own position, timestep
    pub fn obs_len(&self) -> usize {
        Self::window_dim() + 2 * NUM_MINES + 3 + 2 + 1
    }

    fn in_window(center: (usize, usize), cell: (usize, usize)) -> bool {
        let dx = cell.0 as isize - center.0 as isize;
        let dy = cell.1 as isize - center.1 as isize;
        dx.abs() <= 1 && dy.abs() <= 1
    }
}

fn step_pos(pos: (usize, usize), mv: Move, grid: usize) -> (usize, usize) {
    let (x, y) = (pos.0 as isize, pos.1 as isize);
    let (nx, ny) = match mv {
        Move::Up => (x, y + 1),
        Move::Down => (x, y - 1),
        Move::Left => (x - 1, y),
        Move::Right => (x + 1, y),
        Move::Stay => (x, y),
    };
    if nx < 0 || ny < 0 || nx >= grid as isize || ny >= grid as isize {
        pos
    } else {
        (nx as usize, ny as usize)
    }
}

impl EnvFamily for CeeFamily {
    type Instance = CeeInstance;
    type State = CeeState;

    fn num_agents(&self) -> usize {
        2
    }
    fn action_dims(&self) -> &[usize] {
        &self.heads
    }
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }
    fn obs_dim(&self) -> usize {
        self.obs_len()
    }

    fn ground_truth_support(&self) -> GroundTruthSupport {
        GroundTruthSupport { name: "cee".into(), bounds: None }
    }

    fn sample_instance(&self, rng: &mut RngStream) -> CeeInstance {
        // Three distinct eligible cells for the random mines.
        let mut picks: [usize; 3] = [0; 3];
        let mut chosen = 0;
        while chosen < 3 {
            let cand = rng.index(self.eligible.len());
            if !picks[..chosen].contains(&cand) {
                picks[chosen] = cand;
                chosen += 1;
            }
        }
        let mut mine_pos = [(0usize, 0usize); NUM_MINES];
        let mut mine_values = [0f64; NUM_MINES];
        for m in 0..3 {
            mine_pos[m] = self.eligible[picks[m]];
            mine_values[m] = rng.normal_scaled(self.cfg.mine_means[m], self.cfg.mine_sd);
        }
        mine_pos[FIXED_MINE] = self.cfg.fixed_mine_pos();
        mine_values[FIXED_MINE] = self.cfg.fixed_mine_value;
        let speeds = [self.cfg.speeds[0].sample(rng), self.cfg.speeds[1].sample(rng)];
        CeeInstance { mine_pos, mine_values, speeds }
    }

    fn corrupt(
        &self,
        truth: &CeeInstance,
        noise: &NoiseModel,
        agent: usize,
        rng: &mut RngStream,
    ) -> CeeInstance {
        let mut copy = truth.clone();
        fn apply(values: &mut [f64], noise: &NoiseModel, agent: usize, rng: &mut RngStream) {
            match noise {
                NoiseModel::AdditiveGaussian { sigma } => {
                    for v in values.iter_mut() {
                        *v += sigma * rng.normal();
                    }
                }
                NoiseModel::Composite(parts) => {
                    for p in parts {
                        apply(values, p, agent, rng);
                    }
                }
                _ => {}
            }
        }
        apply(&mut copy.mine_values, noise, agent, rng);
        copy
    }

    fn init_state(&self, _truth: &CeeInstance, _rng: &mut RngStream) -> CeeState {
        CeeState { pos: [self.cfg.start(); 2], keyed: [false; 2], t: 0, mined_last: false }
    }

    fn apply(
        &self,
        truth: &CeeInstance,
        state: &mut CeeState,
        joint: &[AgentAction],
        _rng: &mut RngStream,
    ) -> f64 {
        for agent in 0..2 {
            // Speed gating: off-cycle timesteps force a stay.
            let mv = if state.t % truth.speeds[agent].period() == 0 {
                Move::from_index(joint[agent][0])
            } else {
                Move::Stay
            };
            state.pos[agent] = step_pos(state.pos[agent], mv, self.cfg.grid);
        }
        let mut reward = 0.0;
        state.mined_last = false;
        if state.pos[0] == state.pos[1] {
            let here = state.pos[0];
            if here == self.cfg.key_pos() && !(state.keyed[0] && state.keyed[1]) {
                state.keyed = [true, true];
            }
            if let Some(m) = truth.mine_pos.iter().position(|&p| p == here) {
                let mult = if state.keyed[0] && state.keyed[1] {
                    self.cfg.key_multiplier
                } else {
                    1.0
                };
                reward = truth.mine_values[m] * mult;
                state.mined_last = true;
            }
        }
        state.t += 1;
        reward
    }

    fn coordinated(&self, _truth: &CeeInstance, state: &CeeState) -> bool {
        state.mined_last
    }

    fn observe(&self, own_copy: &CeeInstance, state: &CeeState, agent: usize, out: &mut [f32]) {
        out.fill(0.0);
        let me = state.pos[agent];
        let partner = state.pos[1 - agent];
        let g = self.cfg.grid as isize;
        // 3x3 window channels: wall, mine, key, other agent.
        let mut idx = 0;
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let cx = me.0 as isize + dx;
                let cy = me.1 as isize + dy;
                let off_grid = cx < 0 || cy < 0 || cx >= g || cy >= g;
                if off_grid {
                    out[idx] = 1.0;
                } else {
                    let cell = (cx as usize, cy as usize);
                    if own_copy.mine_pos.contains(&cell) {
                        out[idx + 9] = 1.0;
                    }
                    if cell == self.cfg.key_pos() && !(state.keyed[0] && state.keyed[1]) {
                        out[idx + 18] = 1.0;
                    }
                    if cell == partner {
                        out[idx + 27] = 1.0;
                    }
                }
                idx += 1;
            }
        }
        let mut cursor = Self::window_dim();
        // Noisy value and presence bit per mine; out-of-window mines stay at
        // the (0, 0) sentinel so nothing outside the view leaks.
        for m in 0..NUM_MINES {
            if CeeFamily::in_window(me, own_copy.mine_pos[m]) {
                out[cursor] = (own_copy.mine_values[m] / 30.0) as f32;
                out[cursor + NUM_MINES] = 1.0;
            }
            cursor += 1;
        }
        cursor += NUM_MINES;
        out[cursor + own_copy.speeds[agent].index()] = 1.0;
        cursor += 3;
        out[cursor] = me.0 as f32 / (self.cfg.grid - 1) as f32;
        out[cursor + 1] = me.1 as f32 / (self.cfg.grid - 1) as f32;
        cursor += 2;
        out[cursor] = state.t as f32 / self.cfg.horizon as f32;
    }

    fn steps_taken(&self, state: &CeeState) -> usize {
        state.t
    }

    fn state_descriptor(&self) -> StateSpaceDescriptor {
        StateSpaceDescriptor {
            components: vec![
                ("agent_positions".into(), 4),
                ("mine_layout".into(), 2 * NUM_MINES),
                ("mine_values".into(), NUM_MINES),
                ("key_flags".into(), 2),
                ("step".into(), 1),
            ],
            atoms: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::tag;

    fn family() -> CeeFamily {
        CeeFamily::new(CeeConfig::default())
    }

    fn fixed_instance(speeds: [Speed; 2]) -> CeeInstance {
        CeeInstance {
            mine_pos: [(2, 6), (4, 1), (5, 3), (0, 7)],
            mine_values: [22.34, 8.93, 11.54, 1.0],
            speeds,
        }
    }

    #[test]
    fn both_agents_start_at_origin() {
        let f = family();
        let mut rng = RngStream::new(1);
        let truth = f.sample_instance(&mut rng);
        let state = f.init_state(&truth, &mut rng);
        assert_eq!(state.pos, [(0, 0), (0, 0)]);
    }

    #[test]
    fn colocated_mining_pays_the_mine_value() {
        let f = family();
        let truth = fixed_instance([Speed::High; 2]);
        let mut rng = RngStream::new(2);
        let mut state = f.init_state(&truth, &mut rng);
        state.pos = [(2, 6), (2, 6)];
        let r = f.apply(&truth, &mut state, &[[4, 0], [4, 0]], &mut rng);
        assert_eq!(r, 22.34);
        assert!(f.coordinated(&truth, &state));
    }

    #[test]
    fn key_triples_mining_rewards() {
        let f = family();
        let mut truth = fixed_instance([Speed::High; 2]);
        truth.mine_values[1] = 10.0;
        let mut rng = RngStream::new(3);
        let mut state = f.init_state(&truth, &mut rng);
        state.keyed = [true, true];
        state.pos = [truth.mine_pos[1]; 2];
        let r = f.apply(&truth, &mut state, &[[4, 0], [4, 0]], &mut rng);
        assert_eq!(r, 30.0);
    }

    #[test]
    fn low_speed_agent_is_gated_to_stay() {
        let f = family();
        let truth = fixed_instance([Speed::Low, Speed::High]);
        let mut rng = RngStream::new(4);
        let mut state = f.init_state(&truth, &mut rng);
        // t = 0: everyone acts.
        f.apply(&truth, &mut state, &[[0, 0], [0, 0]], &mut rng);
        assert_eq!(state.pos[0], (0, 1));
        let before = state.pos[0];
        // t = 1: the low-speed agent's "up" is overridden to stay.
        f.apply(&truth, &mut state, &[[0, 0], [0, 0]], &mut rng);
        assert_eq!(state.pos[0], before);
        assert_eq!(state.pos[1], (0, 2));
    }

    #[test]
    fn low_speed_agent_moves_at_most_eight_times_per_episode() {
        let f = family();
        let truth = fixed_instance([Speed::Low, Speed::High]);
        let root = RngStream::new(5);
        for ep in 0..50u64 {
            let mut rng = root.derive2(tag::EPISODE, ep);
            let mut act = rng.derive(tag::POLICY);
            let mut state = f.init_state(&truth, &mut rng);
            let mut moves = 0;
            for _ in 0..f.horizon() {
                let before = state.pos[0];
                let joint = [[act.index(5), 0], [act.index(5), 0]];
                f.apply(&truth, &mut state, &joint, &mut rng);
                if state.pos[0] != before {
                    moves += 1;
                }
            }
            assert!(moves <= 8, "low-speed agent moved {moves} times");
        }
    }

    #[test]
    fn moves_off_grid_are_no_ops() {
        assert_eq!(step_pos((0, 0), Move::Left, 8), (0, 0));
        assert_eq!(step_pos((0, 0), Move::Down, 8), (0, 0));
        assert_eq!(step_pos((7, 7), Move::Right, 8), (7, 7));
        assert_eq!(step_pos((7, 7), Move::Up, 8), (7, 7));
        assert_eq!(step_pos((3, 3), Move::Right, 8), (4, 3));
    }

    #[test]
    fn random_mines_avoid_corners_and_do_not_overlap() {
        let f = family();
        let root = RngStream::new(6);
        let corners = [(0, 0), (0, 7), (7, 0), (7, 7)];
        for ep in 0..500u64 {
            let mut rng = root.derive2(tag::EPISODE, ep);
            let inst = f.sample_instance(&mut rng);
            for m in 0..3 {
                assert!(!corners.contains(&inst.mine_pos[m]));
                for other in (m + 1)..3 {
                    assert_ne!(inst.mine_pos[m], inst.mine_pos[other]);
                }
            }
            assert_eq!(inst.mine_pos[FIXED_MINE], (0, 7));
            assert_eq!(inst.mine_values[FIXED_MINE], 1.0);
        }
    }

    #[test]
    fn out_of_window_mines_report_sentinel_zero() {
        let f = family();
        let truth = fixed_instance([Speed::High; 2]);
        let mut rng = RngStream::new(7);
        let state = f.init_state(&truth, &mut rng);
        let mut obs = vec![0.0; f.obs_dim()];
        f.observe(&truth, &state, 0, &mut obs);
        let base = CeeFamily::window_dim();
        // All mines are far from (0, 0); every value slot and presence bit
        // must stay zero.
        for m in 0..3 {
            assert_eq!(obs[base + m], 0.0);
            assert_eq!(obs[base + NUM_MINES + m], 0.0);
        }
    }

    #[test]
    fn in_window_value_is_exact_when_noise_free() {
        let f = family();
        let truth = fixed_instance([Speed::High; 2]);
        let mut rng = RngStream::new(8);
        let mut state = f.init_state(&truth, &mut rng);
        state.pos[0] = (4, 2); // adjacent to mine 1 at (4, 1)
        let mut obs = vec![0.0; f.obs_dim()];
        // Using the truth as the agent's copy models a zero-noise copy.
        f.observe(&truth, &state, 0, &mut obs);
        let base = CeeFamily::window_dim();
        assert!((obs[base + 1] - (8.93 / 30.0) as f32).abs() < 1e-6);
        assert_eq!(obs[base + NUM_MINES + 1], 1.0);
    }

    #[test]
    fn fixed_mine_copy_is_one_plus_noise() {
        let f = family();
        let truth = fixed_instance([Speed::High; 2]);
        let root = RngStream::new(9);
        let noise = CeeConfig::default().default_noise();
        let n = 4000;
        let mut sum = 0.0;
        for ep in 0..n {
            let mut rng = root.derive2(tag::EPISODE, ep);
            let copy = f.corrupt(&truth, &noise, 0, &mut rng);
            sum += copy.mine_values[FIXED_MINE];
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 3.0 * 2.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn partner_appears_in_window_channel_only_when_close() {
        let f = family();
        let truth = fixed_instance([Speed::High; 2]);
        let mut rng = RngStream::new(10);
        let mut state = f.init_state(&truth, &mut rng);
        state.pos = [(3, 3), (4, 3)];
        let mut obs = vec![0.0; f.obs_dim()];
        f.observe(&truth, &state, 0, &mut obs);
        let agent_channel = &obs[27..36];
        assert_eq!(agent_channel.iter().filter(|&&v| v == 1.0).count(), 1);

        state.pos = [(3, 3), (7, 7)];
        f.observe(&truth, &state, 0, &mut obs);
        assert!(obs[27..36].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn speed_is_own_one_hot_never_partner() {
        let f = family();
        let truth = fixed_instance([Speed::Low, Speed::High]);
        let mut rng = RngStream::new(11);
        let state = f.init_state(&truth, &mut rng);
        let mut obs = vec![0.0; f.obs_dim()];
        f.observe(&truth, &state, 0, &mut obs);
        let base = CeeFamily::window_dim() + 2 * NUM_MINES;
        assert_eq!(&obs[base..base + 3], &[0.0, 0.0, 1.0]);
        f.observe(&truth, &state, 1, &mut obs);
        assert_eq!(&obs[base..base + 3], &[1.0, 0.0, 0.0]);
    }
}
