//! Mirrored visual coordination on a 3x12 grid split by an impassable
//! central barrier.
//!
//! Each side is a 3x6 subgrid; columns are indexed locally with 0 adjacent
//! to the barrier. Column reward values are drawn per episode (means 4, 8,
//! 12, 16, 20, 24 moving outward, sd 2) and mirrored across the barrier.
//! Every step each agent picks a movement and a guess of the partner's
//! secret token (9 values, resampled per step). They earn the current
//! square's value when they occupy mirrored squares and both guesses are
//! right, and -1 otherwise. An agent sees the `n` columns from its own
//! column toward and across the barrier, where `n` is its view size; it
//! knows its own view size exactly and the partner's only through a
//! categorical noise model.

use super::Move;
use crate::env::AgentAction;
use crate::meta::{EnvFamily, GroundTruthSupport, NoiseModel, StateSpaceDescriptor};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

pub const COLS: usize = 6;
pub const ROWS: usize = 3;
pub const TOKENS: usize = 9;
pub const VIEW_MIN: usize = 2;
pub const VIEW_MAX: usize = 12;

/// Per-agent view-size assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewSource {
    Fixed(usize),
    Uniform,
}

impl ViewSource {
    fn sample(self, rng: &mut RngStream) -> usize {
        match self {
            ViewSource::Fixed(v) => {
                assert!((VIEW_MIN..=VIEW_MAX).contains(&v), "view size {v} out of range");
                v
            }
            ViewSource::Uniform => VIEW_MIN + rng.index(VIEW_MAX - VIEW_MIN + 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SseConfig {
    pub horizon: usize,
    /// Column means from the barrier outward.
    pub column_means: [f64; COLS],
    pub reward_sd: f64,
    pub obs_noise_sd: f64,
    pub noncoord_penalty: f64,
    pub views: [ViewSource; 2],
}

impl Default for SseConfig {
    fn default() -> Self {
        Self {
            horizon: 16,
            column_means: [4.0, 8.0, 12.0, 16.0, 20.0, 24.0],
            reward_sd: 2.0,
            obs_noise_sd: 2.0,
            noncoord_penalty: -1.0,
            views: [ViewSource::Fixed(6); 2],
        }
    }
}

impl SseConfig {
    /// Additive gaussian on column values plus the categorical view-size
    /// observation noise.
    pub fn default_noise(&self) -> NoiseModel {
        NoiseModel::Composite(vec![
            NoiseModel::AdditiveGaussian { sigma: self.obs_noise_sd },
            NoiseModel::standard_view_noise(),
        ])
    }
}

/// Ground truth: mirrored column values and both agents' view sizes. In an
/// agent's noisy copy, `column_values` carries that agent's noisy values and
/// `partner_view_seen` its draw from the view-size noise model; the own view
/// size is always exact.
#[derive(Clone, Debug, PartialEq)]
pub struct SseInstance {
    pub column_values: [f64; COLS],
    pub views: [usize; 2],
    pub partner_view_seen: [usize; 2],
}

#[derive(Clone, Debug)]
pub struct SseState {
    /// (row, local column); column 0 touches the barrier. Each agent is
    /// confined to its own side by construction, so the barrier cannot be
    /// crossed.
    pub pos: [(usize, usize); 2],
    pub tokens: [usize; 2],
    pub t: usize,
    coordinated_last: bool,
}

#[derive(Clone, Debug)]
pub struct SseFamily {
    pub cfg: SseConfig,
    heads: [usize; 2],
}

impl SseFamily {
    pub fn new(cfg: SseConfig) -> Self {
        assert!(cfg.horizon >= 1);
        Self { cfg, heads: [Move::COUNT, TOKENS] }
    }

    /// Local columns of the agent's own side that fall inside its view:
    /// from its own column toward the barrier.
    fn own_side_visible(pos_col: usize, view: usize) -> std::ops::RangeInclusive<usize> {
        let lo = (pos_col + 1).saturating_sub(view);
        lo..=pos_col
    }

    /// Local columns of the partner's side inside the view (those reached
    /// after crossing the barrier).
    fn across_visible(pos_col: usize, view: usize) -> std::ops::Range<usize> {
        let across = view.saturating_sub(pos_col + 1).min(COLS);
        0..across
    }

    /// column values + visibility bits, own (row, col), partner presence +
    /// (row, col) + token one-hot, own token one-hot, own view, partner view
    /// estimate, timestep
    pub fn obs_len(&self) -> usize {
        COLS + COLS + 2 + (1 + 2 + TOKENS) + TOKENS + 1 + 1 + 1
    }

    /// Sample a noisy view-size estimate, clamping the categorical support
    /// to the legal range and renormalizing the remaining mass.
    pub fn noisy_view(true_view: usize, probs: &[(i64, f64)], rng: &mut RngStream) -> usize {
        let legal: Vec<(i64, f64)> = probs
            .iter()
            .copied()
            .filter(|&(off, _)| {
                let v = true_view as i64 + off;
                (VIEW_MIN as i64..=VIEW_MAX as i64).contains(&v)
            })
            .collect();
        let weights: Vec<f64> = legal.iter().map(|&(_, p)| p).collect();
        let pick = legal[rng.weighted(&weights)].0;
        (true_view as i64 + pick) as usize
    }
}

impl EnvFamily for SseFamily {
    type Instance = SseInstance;
    type State = SseState;

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
        GroundTruthSupport { name: "sse".into(), bounds: None }
    }

    fn sample_instance(&self, rng: &mut RngStream) -> SseInstance {
        let mut column_values = [0f64; COLS];
        for (c, v) in column_values.iter_mut().enumerate() {
            *v = rng.normal_scaled(self.cfg.column_means[c], self.cfg.reward_sd);
        }
        let views = [self.cfg.views[0].sample(rng), self.cfg.views[1].sample(rng)];
        SseInstance { column_values, views, partner_view_seen: views }
    }

    fn corrupt(
        &self,
        truth: &SseInstance,
        noise: &NoiseModel,
        agent: usize,
        rng: &mut RngStream,
    ) -> SseInstance {
        let mut copy = truth.clone();
        fn apply(copy: &mut SseInstance, noise: &NoiseModel, agent: usize, rng: &mut RngStream) {
            match noise {
                NoiseModel::AdditiveGaussian { sigma } => {
                    for v in copy.column_values.iter_mut() {
                        *v += sigma * rng.normal();
                    }
                }
                NoiseModel::CategoricalViewSize { probs } => {
                    let partner = 1 - agent;
                    copy.partner_view_seen[agent] =
                        SseFamily::noisy_view(copy.views[partner], probs, rng);
                }
                NoiseModel::Composite(parts) => {
                    for p in parts {
                        apply(copy, p, agent, rng);
                    }
                }
                NoiseModel::SpeedIdentity => {}
            }
        }
        apply(&mut copy, noise, agent, rng);
        copy
    }

    fn init_state(&self, _truth: &SseInstance, rng: &mut RngStream) -> SseState {
        SseState {
            pos: [(1, 0), (1, 0)],
            tokens: [rng.index(TOKENS), rng.index(TOKENS)],
            t: 0,
            coordinated_last: false,
        }
    }

    fn apply(
        &self,
        truth: &SseInstance,
        state: &mut SseState,
        joint: &[AgentAction],
        rng: &mut RngStream,
    ) -> f64 {
        for agent in 0..2 {
            let (r, c) = state.pos[agent];
            let (ri, ci) = (r as isize, c as isize);
            // Local coordinates: Left moves toward the barrier, Right away
            // from it, identically on both sides.
            let (nr, nc) = match Move::from_index(joint[agent][0]) {
                Move::Up => (ri - 1, ci),
                Move::Down => (ri + 1, ci),
                Move::Left => (ri, ci - 1),
                Move::Right => (ri, ci + 1),
                Move::Stay => (ri, ci),
            };
            if nr >= 0 && nr < ROWS as isize && nc >= 0 && nc < COLS as isize {
                state.pos[agent] = (nr as usize, nc as usize);
            }
        }
        let mirrored = state.pos[0] == state.pos[1];
        let guesses_right = joint[0][1] == state.tokens[1] && joint[1][1] == state.tokens[0];
        let reward = if mirrored && guesses_right {
            truth.column_values[state.pos[0].1]
        } else {
            self.cfg.noncoord_penalty
        };
        state.coordinated_last = mirrored && guesses_right;
        state.tokens = [rng.index(TOKENS), rng.index(TOKENS)];
        state.t += 1;
        reward
    }

    fn coordinated(&self, _truth: &SseInstance, state: &SseState) -> bool {
        state.coordinated_last
    }

    fn observe(&self, own_copy: &SseInstance, state: &SseState, agent: usize, out: &mut [f32]) {
        out.fill(0.0);
        let (row, col) = state.pos[agent];
        let view = own_copy.views[agent];
        let own_vis = Self::own_side_visible(col, view);
        let across = Self::across_visible(col, view);
        // A column's value is revealed if either its own-side or mirrored
        // square is within view (values are identical by construction).
        for c in 0..COLS {
            let visible = own_vis.contains(&c) || across.contains(&c);
            if visible {
                out[c] = ((own_copy.column_values[c] - 14.0) / 10.0) as f32;
                out[COLS + c] = 1.0;
            }
        }
        let mut cursor = 2 * COLS;
        out[cursor] = row as f32 / (ROWS - 1) as f32;
        out[cursor + 1] = col as f32 / (COLS - 1) as f32;
        cursor += 2;
        let partner = 1 - agent;
        let (prow, pcol) = state.pos[partner];
        if across.contains(&pcol) {
            out[cursor] = 1.0;
            out[cursor + 1] = prow as f32 / (ROWS - 1) as f32;
            out[cursor + 2] = pcol as f32 / (COLS - 1) as f32;
            out[cursor + 3 + state.tokens[partner]] = 1.0;
        }
        cursor += 3 + TOKENS;
        out[cursor + state.tokens[agent]] = 1.0;
        cursor += TOKENS;
        out[cursor] = view as f32 / VIEW_MAX as f32;
        out[cursor + 1] = own_copy.partner_view_seen[agent] as f32 / VIEW_MAX as f32;
        cursor += 2;
        out[cursor] = state.t as f32 / self.cfg.horizon as f32;
    }

    fn steps_taken(&self, state: &SseState) -> usize {
        state.t
    }

    fn state_descriptor(&self) -> StateSpaceDescriptor {
        StateSpaceDescriptor {
            components: vec![
                ("agent_positions".into(), 4),
                ("column_values".into(), COLS),
                ("tokens".into(), 2),
                ("view_sizes".into(), 2),
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

    fn family() -> SseFamily {
        SseFamily::new(SseConfig::default())
    }

    fn instance(views: [usize; 2]) -> SseInstance {
        SseInstance {
            column_values: [4.5, 7.5, 12.5, 16.5, 19.5, 24.5],
            views,
            partner_view_seen: views,
        }
    }

    #[test]
    fn coordination_pays_the_square_value() {
        let f = family();
        let truth = instance([6, 6]);
        let mut rng = RngStream::new(1);
        let mut state = f.init_state(&truth, &mut rng);
        state.pos = [(2, 5), (2, 5)];
        let tokens = state.tokens;
        // Stay and guess each other's current token correctly.
        let joint = [[4, tokens[1]], [4, tokens[0]]];
        let r = f.apply(&truth, &mut state, &joint, &mut rng);
        assert_eq!(r, 24.5);
        assert!(f.coordinated(&truth, &state));
    }

    #[test]
    fn one_wrong_guess_pays_the_penalty() {
        let f = family();
        let truth = instance([6, 6]);
        let mut rng = RngStream::new(2);
        let mut state = f.init_state(&truth, &mut rng);
        state.pos = [(1, 2), (1, 2)];
        let tokens = state.tokens;
        let wrong = (tokens[1] + 1) % TOKENS;
        let joint = [[4, wrong], [4, tokens[0]]];
        let r = f.apply(&truth, &mut state, &joint, &mut rng);
        assert_eq!(r, -1.0);
        assert!(!f.coordinated(&truth, &state));
    }

    #[test]
    fn column_one_coordination_pays_that_episode_draw() {
        let f = family();
        let mut rng = RngStream::new(3);
        let truth = f.sample_instance(&mut rng);
        let mut state = f.init_state(&truth, &mut rng);
        state.pos = [(0, 0), (0, 0)];
        let joint = [[4, state.tokens[1]], [4, state.tokens[0]]];
        let r = f.apply(&truth, &mut state, &joint, &mut rng);
        assert_eq!(r, truth.column_values[0]);
    }

    #[test]
    fn mirrored_positions_use_a_single_stored_value() {
        // Both orders of the same mirrored squares see one value array, so
        // the mirror constraint cannot drift.
        let f = family();
        let mut rng = RngStream::new(4);
        let truth = f.sample_instance(&mut rng);
        for c in 0..COLS {
            let mut state = f.init_state(&truth, &mut rng);
            state.pos = [(0, c), (0, c)];
            let joint = [[4, state.tokens[1]], [4, state.tokens[0]]];
            assert_eq!(f.apply(&truth, &mut state, &joint, &mut rng), truth.column_values[c]);
        }
    }

    #[test]
    fn barrier_and_walls_stop_movement() {
        let f = family();
        let truth = instance([6, 6]);
        let mut rng = RngStream::new(5);
        let mut state = f.init_state(&truth, &mut rng);
        state.pos = [(1, 0), (0, 5)];
        // Agent 0 pushes into the barrier, agent 1 away past the wall.
        f.apply(&truth, &mut state, &[[2, 0], [3, 0]], &mut rng);
        assert_eq!(state.pos[0], (1, 0));
        assert_eq!(state.pos[1], (0, 5));
    }

    #[test]
    fn agents_never_leave_their_subgrid() {
        let f = family();
        let truth = instance([6, 6]);
        let root = RngStream::new(6);
        for ep in 0..200u64 {
            let mut rng = root.derive2(tag::EPISODE, ep);
            let mut act = rng.derive(tag::POLICY);
            let mut state = f.init_state(&truth, &mut rng);
            for _ in 0..f.horizon() {
                let joint = [[act.index(5), act.index(9)], [act.index(5), act.index(9)]];
                f.apply(&truth, &mut state, &joint, &mut rng);
                for agent in 0..2 {
                    let (r, c) = state.pos[agent];
                    assert!(r < ROWS && c < COLS);
                }
            }
        }
    }

    #[test]
    fn tokens_resample_every_step() {
        let f = family();
        let truth = instance([6, 6]);
        let mut rng = RngStream::new(7);
        let mut state = f.init_state(&truth, &mut rng);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..64 {
            seen.insert(state.tokens);
            f.apply(&truth, &mut state, &[[4, 0], [4, 0]], &mut rng);
        }
        assert!(seen.len() > 10, "tokens barely changed: {}", seen.len());
    }

    #[test]
    fn view_window_extends_toward_and_across_the_barrier() {
        // Own column 2, view 5: own-side columns {2, 1, 0} and partner-side
        // columns {0, 1}.
        assert_eq!(SseFamily::own_side_visible(2, 5), 0..=2);
        assert_eq!(SseFamily::across_visible(2, 5), 0..2);
        // View 2 at column 4 stays on the own side.
        assert_eq!(SseFamily::own_side_visible(4, 2), 3..=4);
        assert_eq!(SseFamily::across_visible(4, 2), 0..0);
    }

    #[test]
    fn partner_token_is_masked_outside_the_view() {
        let f = family();
        let truth = instance([2, 12]);
        let mut rng = RngStream::new(8);
        let mut state = f.init_state(&truth, &mut rng);
        state.pos = [(1, 3), (1, 4)];
        let mut obs = vec![0.0; f.obs_dim()];
        // Agent 0 has view 2: from column 3 it sees columns 2 and 3 on its
        // own side only; the partner at across-column 4 is invisible.
        f.observe(&truth, &state, 0, &mut obs);
        let partner_block = 2 * COLS + 2;
        assert!(obs[partner_block..partner_block + 3 + TOKENS].iter().all(|&v| v == 0.0));
        // Agent 1 has view 12 and sees everything, including the token.
        f.observe(&truth, &state, 1, &mut obs);
        assert_eq!(obs[partner_block], 1.0);
        let token_slot = partner_block + 3 + state.tokens[0];
        assert_eq!(obs[token_slot], 1.0);
    }

    #[test]
    fn out_of_view_values_cannot_leak_into_observations() {
        let f = family();
        let mut copy = instance([2, 6]);
        let mut rng = RngStream::new(9);
        let mut state = f.init_state(&copy, &mut rng);
        state.pos = [(1, 1), (1, 1)];
        let mut before = vec![0.0; f.obs_dim()];
        f.observe(&copy, &state, 0, &mut before);
        // Perturb far columns that view 2 at column 1 cannot reach.
        copy.column_values[3] += 100.0;
        copy.column_values[5] -= 50.0;
        let mut after = vec![0.0; f.obs_dim()];
        f.observe(&copy, &state, 0, &mut after);
        assert_eq!(before, after);
    }

    #[test]
    fn own_view_is_exact_partner_view_is_noisy() {
        let f = family();
        let truth = instance([5, 5]);
        let noise = SseConfig::default().default_noise();
        let root = RngStream::new(10);
        let n = 20_000;
        let mut exact = 0;
        for ep in 0..n {
            let mut rng = root.derive2(tag::EPISODE, ep);
            let copy = f.corrupt(&truth, &noise, 0, &mut rng);
            assert_eq!(copy.views[0], 5);
            if copy.partner_view_seen[0] == 5 {
                exact += 1;
            }
        }
        let p = exact as f64 / n as f64;
        assert!((p - 0.5).abs() < 0.015, "P(exact view) = {p}");
    }

    #[test]
    fn clamped_view_noise_renormalizes_remaining_mass() {
        // True view 2: offsets -1 and -2 are illegal, so the mass {0.5,
        // 0.15, 0.1} on {0, +1, +2} renormalizes to {2/3, 0.2, 2/15}.
        let probs = match NoiseModel::standard_view_noise() {
            NoiseModel::CategoricalViewSize { probs } => probs,
            _ => unreachable!(),
        };
        let mut rng = RngStream::new(11);
        let n = 30_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let v = SseFamily::noisy_view(2, &probs, &mut rng);
            assert!((2..=4).contains(&v));
            counts[v - 2] += 1;
        }
        let p0 = counts[0] as f64 / n as f64;
        assert!((p0 - 2.0 / 3.0).abs() < 0.02, "P(2) = {p0}");
    }
}
