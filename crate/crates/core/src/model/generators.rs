//! Named model generators used by configs and fixtures.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{JointActionCodec, MmdpSpec, ZeroSumGameSpec};
use crate::error::{MarlError, Result};

/// Parameters of a random "garnet" model: each `(s, a)` row spreads its mass
/// over `branching` distinct next states with exponential-normalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GarnetParams {
    pub n_states: usize,
    pub agents: Vec<usize>,
    pub branching: usize,
    pub gamma: f64,
    pub r_max: f64,
    pub reward_noise: f64,
    pub seed: u64,
}

fn random_row(rng: &mut ChaCha8Rng, n_states: usize, branching: usize) -> Vec<f64> {
    let mut targets: Vec<usize> = (0..n_states).collect();
    targets.shuffle(rng);
    let mut row = vec![0.0; n_states];
    let mut total = 0.0;
    for &t in &targets[..branching] {
        // 1 - u lies in (0, 1], so every chosen successor gets positive mass.
        let w = -(1.0 - rng.random::<f64>()).ln() + 1e-3;
        row[t] = w;
        total += w;
    }
    row.iter_mut().for_each(|p| *p /= total);
    // Put the rounding residue on the largest entry so the row sums to 1.
    let residue = 1.0 - row.iter().sum::<f64>();
    let (argmax, _) = row
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
    row[argmax] += residue;
    row
}

fn check_branching(n_states: usize, branching: usize) -> Result<()> {
    if branching == 0 || branching > n_states {
        return Err(MarlError::Config(format!(
            "branching {branching} must be in 1..={n_states}"
        )));
    }
    Ok(())
}

/// Largest reward-mean magnitude that keeps every noisy sample inside
/// `[-r_max, r_max]`, so clamping never shifts the sample mean. `spread` bounds
/// the per-sample noise in units of `reward_noise`.
fn mean_amplitude(r_max: f64, reward_noise: f64, spread: f64) -> Result<f64> {
    let amplitude = r_max - spread * reward_noise;
    if !(reward_noise >= 0.0) || !(amplitude > 0.0) {
        return Err(MarlError::Config(format!(
            "reward_noise {reward_noise} leaves no room for reward means within r_max {r_max}"
        )));
    }
    Ok(amplitude)
}

/// Reward means are uniform on `[-(r_max - w), r_max - w]` for noise half-width `w`.
pub fn random_garnet(params: &GarnetParams) -> Result<MmdpSpec> {
    check_branching(params.n_states, params.branching)?;
    let amplitude = mean_amplitude(params.r_max, params.reward_noise, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_actions: usize = params.agents.iter().product();
    let cells = params.n_states * n_actions;
    let mut transition = Vec::with_capacity(cells * params.n_states);
    for _ in 0..cells {
        transition.extend(random_row(&mut rng, params.n_states, params.branching));
    }
    let reward_mean = params
        .agents
        .iter()
        .map(|_| {
            (0..cells)
                .map(|_| amplitude * (2.0 * rng.random::<f64>() - 1.0))
                .collect()
        })
        .collect();
    MmdpSpec::new(
        params.n_states,
        params.agents.clone(),
        transition,
        reward_mean,
        params.reward_noise,
        params.gamma,
        params.r_max,
    )
}

/// Random two-team zero-sum game. Team 1 rewards are uniform; Team 2 rewards
/// cancel Team 1's total plus a zero-mean perturbation, and the whole reward
/// tensor is scaled so its largest entry has magnitude `r_max - 2w` for noise
/// half-width `w` (centered team noise stays within `2w`).
#[allow(clippy::too_many_arguments)]
pub fn random_zero_sum_game(
    n_states: usize,
    team1_agents: Vec<usize>,
    team2_agents: Vec<usize>,
    branching: usize,
    gamma: f64,
    r_max: f64,
    reward_noise: f64,
    seed: u64,
) -> Result<ZeroSumGameSpec> {
    check_branching(n_states, branching)?;
    let amplitude = mean_amplitude(r_max, reward_noise, 2.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: usize = team1_agents.iter().product();
    let b: usize = team2_agents.iter().product();
    let cells = n_states * a * b;
    let mut transition = Vec::with_capacity(cells * n_states);
    for _ in 0..cells {
        transition.extend(random_row(&mut rng, n_states, branching));
    }
    let n = team1_agents.len();
    let m = team2_agents.len();
    let mut team1 = vec![vec![0.0; cells]; n];
    let mut team2 = vec![vec![0.0; cells]; m];
    let mut perturb = vec![0.0; m];
    for cell in 0..cells {
        let mut total = 0.0;
        for table in team1.iter_mut() {
            table[cell] = 2.0 * rng.random::<f64>() - 1.0;
            total += table[cell];
        }
        for p in perturb.iter_mut() {
            *p = 0.5 * (2.0 * rng.random::<f64>() - 1.0);
        }
        let centre = perturb.iter().sum::<f64>() / m as f64;
        for (table, p) in team2.iter_mut().zip(&perturb) {
            table[cell] = -total / m as f64 + (p - centre);
        }
    }
    let largest = team1
        .iter()
        .chain(&team2)
        .flatten()
        .fold(0.0f64, |acc, r| acc.max(r.abs()));
    let scale = if largest > 0.0 { amplitude / largest } else { 1.0 };
    for r in team1.iter_mut().chain(team2.iter_mut()).flatten() {
        *r *= scale;
    }
    ZeroSumGameSpec::new(
        n_states,
        team1_agents,
        team2_agents,
        transition,
        team1,
        team2,
        reward_noise,
        gamma,
        r_max,
    )
}

/// Line of `n_states` cells. Every agent votes left (0) or right (1); the
/// majority moves the system one cell, a tie stays, and with probability
/// `slip` the move is reversed. Reaching the right end pays `R = r_max - w`;
/// agent `i` pays `0.1 * R * (i + 1) / N` for voting right.
pub fn chain(
    n_states: usize,
    n_agents: usize,
    slip: f64,
    gamma: f64,
    r_max: f64,
    reward_noise: f64,
) -> Result<MmdpSpec> {
    if n_states < 2 || n_agents == 0 {
        return Err(MarlError::Config("chain needs n_states >= 2 and n_agents >= 1".into()));
    }
    if !(0.0..=1.0).contains(&slip) {
        return Err(MarlError::Config(format!("slip {slip} outside [0, 1]")));
    }
    let pay = mean_amplitude(r_max, reward_noise, 1.0)?;
    let agents = vec![2; n_agents];
    let codec = JointActionCodec::new(&agents);
    let n_actions = codec.len();
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward_mean = vec![vec![0.0; n_states * n_actions]; n_agents];
    for s in 0..n_states {
        for joint in 0..n_actions {
            let votes = codec.decode(joint);
            let right = votes.iter().filter(|&&v| v == 1).count();
            let left = n_agents - right;
            let step: isize = match right.cmp(&left) {
                std::cmp::Ordering::Greater => 1,
                std::cmp::Ordering::Less => -1,
                std::cmp::Ordering::Equal => 0,
            };
            let clampi = |x: isize| x.clamp(0, n_states as isize - 1) as usize;
            let forward = clampi(s as isize + step);
            let backward = clampi(s as isize - step);
            let row = &mut transition[(s * n_actions + joint) * n_states..][..n_states];
            row[forward] += 1.0 - slip;
            row[backward] += slip;
            for (i, table) in reward_mean.iter_mut().enumerate() {
                let goal = if s == n_states - 1 { pay } else { 0.0 };
                let cost = if votes[i] == 1 {
                    0.1 * pay * (i + 1) as f64 / n_agents as f64
                } else {
                    0.0
                };
                table[s * n_actions + joint] = goal - cost;
            }
        }
    }
    MmdpSpec::new(n_states, agents, transition, reward_mean, reward_noise, gamma, r_max)
}

/// `width x height` grid moved jointly: each agent picks stay/up/down/left/right,
/// the system moves one step along each axis in the sign of the summed votes,
/// and with probability `slip` stays put. The top-right goal pays
/// `R = r_max - w` to every agent and resets to cell 0; each moving vote
/// costs `0.05 * R`.
pub fn gridworld(
    width: usize,
    height: usize,
    n_agents: usize,
    slip: f64,
    gamma: f64,
    r_max: f64,
    reward_noise: f64,
) -> Result<MmdpSpec> {
    if width * height < 2 || n_agents == 0 {
        return Err(MarlError::Config("gridworld needs at least 2 cells and 1 agent".into()));
    }
    if !(0.0..=1.0).contains(&slip) {
        return Err(MarlError::Config(format!("slip {slip} outside [0, 1]")));
    }
    let reward = mean_amplitude(r_max, reward_noise, 1.0)?;
    const MOVES: [(isize, isize); 5] = [(0, 0), (0, 1), (0, -1), (-1, 0), (1, 0)];
    let agents = vec![MOVES.len(); n_agents];
    let codec = JointActionCodec::new(&agents);
    let n_actions = codec.len();
    let n_states = width * height;
    let goal = n_states - 1;
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward_mean = vec![vec![0.0; n_states * n_actions]; n_agents];
    for s in 0..n_states {
        let (x, y) = ((s % width) as isize, (s / width) as isize);
        for joint in 0..n_actions {
            let votes = codec.decode(joint);
            let dx: isize = votes.iter().map(|&v| MOVES[v].0).sum();
            let dy: isize = votes.iter().map(|&v| MOVES[v].1).sum();
            let nx = (x + dx.signum()).clamp(0, width as isize - 1);
            let ny = (y + dy.signum()).clamp(0, height as isize - 1);
            let moved = (ny as usize) * width + nx as usize;
            let row = &mut transition[(s * n_actions + joint) * n_states..][..n_states];
            if s == goal {
                row[0] = 1.0;
            } else {
                row[moved] += 1.0 - slip;
                row[s] += slip;
            }
            for (i, table) in reward_mean.iter_mut().enumerate() {
                let pay = if s == goal { reward } else { 0.0 };
                let cost = if votes[i] != 0 { 0.05 * reward } else { 0.0 };
                table[s * n_actions + joint] = pay - cost;
            }
        }
    }
    MmdpSpec::new(n_states, agents, transition, reward_mean, reward_noise, gamma, r_max)
}
