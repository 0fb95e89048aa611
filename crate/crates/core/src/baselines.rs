//! Non-learning comparison policies: a particle-swarm trajectory planner
//! with a tracking controller, a receding-horizon maximin game policy and
//! greedy goal pursuit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{Environment, WorldConfig, WorldState};
use crate::error::{Error, Result};
use crate::seeds;
use crate::simcore::{
    evaluate_trajectory, integrate, ControlInput, CostWeights, KinematicLimits, ThreatSource, Trajectory, UavState,
    Vec2,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsoParams {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Free waypoints between start and goal.
    pub waypoints: usize,
    /// Per-coordinate velocity limit as a fraction of the field size.
    pub velocity_clamp_fraction: f64,
    /// Initial scatter around the straight line, as a fraction of the field.
    pub init_spread_fraction: f64,
    pub cost_weights: CostWeights,
    /// Environment steps between replans.
    pub replan_interval: u32,
    /// Distance (m) at which the follower moves to the next waypoint.
    pub capture_radius: f64,
}

impl Default for PsoParams {
    fn default() -> Self {
        Self {
            swarm_size: 30,
            iterations: 200,
            inertia: 0.7,
            cognitive: 1.5,
            social: 1.5,
            waypoints: 8,
            velocity_clamp_fraction: 0.1,
            init_spread_fraction: 0.1,
            cost_weights: CostWeights {
                path_length: 1.0,
                threat: 10.0,
            },
            replan_interval: 10,
            capture_radius: 50.0,
        }
    }
}

impl PsoParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::Validation(format!("baselines.pso.{f}: {m}")));
        if self.swarm_size == 0 {
            return bad("swarm_size", "must be positive");
        }
        if self.iterations == 0 {
            return bad("iterations", "must be positive");
        }
        if !(self.inertia > 0.0 && self.inertia < 1.0) {
            return bad("inertia", "must lie in (0, 1)");
        }
        if !(self.cognitive > 0.0 && self.social > 0.0) {
            return bad("cognitive", "cognitive and social weights must be positive");
        }
        if self.waypoints == 0 {
            return bad("waypoints", "must be positive");
        }
        if !(self.velocity_clamp_fraction > 0.0) {
            return bad("velocity_clamp_fraction", "must be positive");
        }
        if !(self.init_spread_fraction >= 0.0) {
            return bad("init_spread_fraction", "must be non-negative");
        }
        if self.replan_interval == 0 {
            return bad("replan_interval", "must be positive");
        }
        if !(self.capture_radius > 0.0) {
            return bad("capture_radius", "must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameTheoryParams {
    pub horizon: usize,
}

impl Default for GameTheoryParams {
    fn default() -> Self {
        Self { horizon: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub pso: PsoParams,
    pub game_theory: GameTheoryParams,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        self.pso.validate()?;
        if self.game_theory.horizon == 0 {
            return Err(Error::validation("baselines.game_theory.horizon: must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoPlan {
    pub trajectory: Trajectory,
    pub fitness: f64,
    /// Global-best fitness after initialization and after every iteration.
    pub fitness_history: Vec<f64>,
}

fn route(start: Vec2, goal: Vec2, flat: &[f64]) -> Result<Trajectory> {
    let mut pts = Vec::with_capacity(flat.len() / 2 + 2);
    pts.push(start);
    pts.extend(flat.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])));
    pts.push(goal);
    Trajectory::new(pts)
}

/// Particle-swarm search over the free waypoints of a start-to-goal route,
/// scored by the weighted path-length and threat cost.
pub fn pso_plan(
    start: Vec2,
    goal: Vec2,
    threats: &[ThreatSource],
    field_size: f64,
    params: &PsoParams,
    seed: u64,
) -> Result<PsoPlan> {
    params.validate()?;
    let inside = |p: Vec2| (0.0..=field_size).contains(&p.x) && (0.0..=field_size).contains(&p.y);
    if !inside(start) || !inside(goal) {
        return Err(Error::validation("pso start and goal must lie inside the field"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 2 * params.waypoints;
    let vmax = params.velocity_clamp_fraction * field_size;
    let spread = params.init_spread_fraction * field_size;
    let fitness = |x: &[f64]| -> Result<f64> { evaluate_trajectory(&route(start, goal, x)?, threats, params.cost_weights) };

    let mut swarm = Vec::with_capacity(params.swarm_size);
    for _ in 0..params.swarm_size {
        let mut position = Vec::with_capacity(dim);
        for j in 0..params.waypoints {
            let t = (j + 1) as f64 / (params.waypoints + 1) as f64;
            let base = start + (goal - start) * t;
            for v in [base.x, base.y] {
                let jitter = if spread > 0.0 { rng.gen_range(-spread..=spread) } else { 0.0 };
                position.push((v + jitter).clamp(0.0, field_size));
            }
        }
        let velocity = (0..dim).map(|_| rng.gen_range(-vmax..=vmax) * 0.1).collect();
        let f = fitness(&position)?;
        swarm.push(Particle {
            best_position: position.clone(),
            position,
            velocity,
            best_fitness: f,
        });
    }
    let mut g = 0;
    for (i, p) in swarm.iter().enumerate() {
        if p.best_fitness < swarm[g].best_fitness {
            g = i;
        }
    }
    let mut gbest = swarm[g].best_position.clone();
    let mut gbest_f = swarm[g].best_fitness;
    let mut history = Vec::with_capacity(params.iterations + 1);
    history.push(gbest_f);

    for _ in 0..params.iterations {
        for p in &mut swarm {
            for d in 0..dim {
                let r1: f64 = rng.gen();
                let r2: f64 = rng.gen();
                let v = params.inertia * p.velocity[d]
                    + params.cognitive * r1 * (p.best_position[d] - p.position[d])
                    + params.social * r2 * (gbest[d] - p.position[d]);
                p.velocity[d] = v.clamp(-vmax, vmax);
                p.position[d] = (p.position[d] + p.velocity[d]).clamp(0.0, field_size);
            }
            let f = fitness(&p.position)?;
            if f < p.best_fitness {
                p.best_fitness = f;
                p.best_position.clone_from(&p.position);
            }
        }
        for p in &swarm {
            if p.best_fitness < gbest_f {
                gbest_f = p.best_fitness;
                gbest.clone_from(&p.best_position);
            }
        }
        history.push(gbest_f);
    }
    Ok(PsoPlan {
        trajectory: route(start, goal, &gbest)?,
        fitness: gbest_f,
        fitness_history: history,
    })
}

/// Action whose one-step integration lands closest to `aim`. Ties go to
/// the lowest index.
pub fn lookahead_action(state: &UavState, aim: Vec2, actions: &[ControlInput], limits: &KinematicLimits) -> Result<usize> {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &u) in actions.iter().enumerate() {
        let d = integrate(state, u, limits)?.position.distance(aim);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    Ok(best)
}

/// Tracks a planned route waypoint by waypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct PsoFollower {
    plan: Trajectory,
    target: usize,
    capture_radius: f64,
}

impl PsoFollower {
    pub fn new(plan: Trajectory, capture_radius: f64) -> Self {
        let target = if plan.len() > 1 { 1 } else { 0 };
        Self {
            plan,
            target,
            capture_radius,
        }
    }

    pub fn plan(&self) -> &Trajectory {
        &self.plan
    }

    /// Index of the waypoint currently tracked.
    pub fn target_index(&self) -> usize {
        self.target
    }

    pub fn next_action(&mut self, state: &UavState, actions: &[ControlInput], limits: &KinematicLimits) -> Result<usize> {
        let wps = self.plan.waypoints();
        while self.target + 1 < wps.len() && state.position.distance(wps[self.target]) < self.capture_radius {
            self.target += 1;
        }
        lookahead_action(state, wps[self.target], actions, limits)
    }
}

/// Per-episode PSO controller: replans against the current enemy
/// positions every `replan_interval` steps.
#[derive(Debug, Clone)]
pub struct PsoController {
    params: PsoParams,
    seed: u64,
    follower: Option<PsoFollower>,
    replans: u64,
    /// Fitness history of every replan, for inspection.
    pub histories: Vec<Vec<f64>>,
}

impl PsoController {
    pub fn new(params: PsoParams, seed: u64) -> Self {
        Self {
            params,
            seed,
            follower: None,
            replans: 0,
            histories: Vec::new(),
        }
    }

    pub fn threats(world: &WorldConfig, state: &WorldState) -> Result<Vec<ThreatSource>> {
        let sf = world.enemies.detect_range;
        state
            .enemies
            .iter()
            .map(|e| ThreatSource::new(e.state.position, sf, sf))
            .collect()
    }

    pub fn next_action(&mut self, env: &Environment, state: &WorldState) -> Result<usize> {
        let world = env.config();
        if self.follower.is_none() || state.time_step % self.params.replan_interval == 0 {
            let threats = Self::threats(world, state)?;
            let f = world.field_size;
            let start = Vec2::new(state.friendly.position.x.clamp(0.0, f), state.friendly.position.y.clamp(0.0, f));
            let plan = pso_plan(
                start,
                world.target.center,
                &threats,
                f,
                &self.params,
                seeds::derive(self.seed, 0, self.replans),
            )?;
            self.replans += 1;
            self.histories.push(plan.fitness_history);
            self.follower = Some(PsoFollower::new(plan.trajectory, self.params.capture_radius));
        }
        self.follower
            .as_mut()
            .expect("plan exists")
            .next_action(&state.friendly, env.actions(), &world.friendly.limits)
    }
}

/// One-step lookahead toward the target centre. Ignores enemies.
pub fn greedy_policy(env: &Environment, state: &WorldState) -> Result<usize> {
    let world = env.config();
    lookahead_action(&state.friendly, world.target.center, env.actions(), &world.friendly.limits)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PayoffMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl PayoffMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::validation("payoff matrix needs rows * cols entries"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("payoff matrix entry is not finite".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    /// Security strategy: the row with the largest row minimum, lowest
    /// index on ties. Returns `(row, value)`.
    pub fn maximin(&self) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for r in 0..self.rows {
            let m = self.values[r * self.cols..(r + 1) * self.cols]
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if m > best.1 {
                best = (r, m);
            }
        }
        best
    }

    pub fn max_max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// H-step score of holding `own` while the chosen enemy holds `enemy`.
/// Other enemies stay where they are.
fn rollout_score(
    world: &WorldConfig,
    state: &WorldState,
    enemy_id: usize,
    own: ControlInput,
    enemy: ControlInput,
    horizon: usize,
) -> Result<f64> {
    let rc = &world.reward;
    let mut f = state.friendly;
    let mut e = state.enemies[enemy_id].state;
    let mut d_prev = f.position.distance(world.target.center);
    let mut score = 0.0;
    for _ in 0..horizon {
        f = integrate(&f, own, &world.friendly.limits)?;
        e = integrate(&e, enemy, &world.enemies.limits)?;
        let d = f.position.distance(world.target.center);
        score += -rc.lambda_dis * (d - d_prev);
        d_prev = d;
        if d < world.target.effective_radius {
            score += rc.c_dest;
            break;
        }
        if !world.in_field(f.position) {
            score += rc.c_out;
            break;
        }
        let exposed = state
            .enemies
            .iter()
            .enumerate()
            .map(|(i, u)| if i == enemy_id { e.position } else { u.state.position })
            .any(|p| p.distance(f.position) < world.enemies.detect_range);
        if exposed {
            score += rc.c_enemy;
        }
    }
    Ok(score)
}

/// Payoff of every own action against every action of the nearest sensed
/// enemy, or `None` when no enemy is sensed.
pub fn payoff_matrix(env: &Environment, state: &WorldState, horizon: usize) -> Result<Option<PayoffMatrix>> {
    let Some(&(enemy_id, _)) = env.sensed_enemies(state).first() else {
        return Ok(None);
    };
    let world = env.config();
    let actions = env.actions();
    let mut values = Vec::with_capacity(actions.len() * actions.len());
    for &own in actions {
        for &enemy in actions {
            values.push(rollout_score(world, state, enemy_id, own, enemy, horizon)?);
        }
    }
    PayoffMatrix::new(actions.len(), actions.len(), values).map(Some)
}

/// Maximin action over the payoff matrix; greedy pursuit when no enemy
/// is sensed.
pub fn game_theory_action(env: &Environment, state: &WorldState, horizon: usize) -> Result<usize> {
    match payoff_matrix(env, state, horizon)? {
        Some(m) => Ok(m.maximin().0),
        None => greedy_policy(env, state),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn env() -> Environment {
        Environment::new(WorldConfig::desk_scale()).unwrap()
    }

    #[test]
    fn maximin_examples() {
        let m = PayoffMatrix::new(2, 2, vec![1.0, -1.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.maximin(), (1, 0.0));
        assert!(m.maximin().1 <= m.max_max());
        let tie = PayoffMatrix::new(2, 1, vec![3.0, 3.0]).unwrap();
        assert_eq!(tie.maximin().0, 0);
        assert!(PayoffMatrix::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn lookahead_examples() {
        let e = env();
        let limits = e.config().friendly.limits;
        let s = UavState::new(Vec2::new(500.0, 500.0), 25.0, 0.0);
        let ahead = lookahead_action(&s, Vec2::new(1500.0, 500.0), e.actions(), &limits).unwrap();
        assert_eq!(e.actions()[ahead], ControlInput::new(0.0, 0.0));
        let left = lookahead_action(&s, Vec2::new(500.0, 1000.0), e.actions(), &limits).unwrap();
        assert_eq!(e.actions()[left], ControlInput::new(0.0, 0.3));
    }

    #[test]
    fn greedy_examples() {
        let e = env();
        let (mut state, _) = e.reset(0).unwrap();
        let g = e.config().target.center;
        state.friendly = UavState::new(g - Vec2::new(800.0, 0.0), 20.0, 0.0);
        let a = greedy_policy(&e, &state).unwrap();
        assert_eq!(e.actions()[a], ControlInput::new(2.0, 0.0));
        state.friendly = UavState::new(g - Vec2::new(800.0, 0.0), 20.0, std::f64::consts::PI);
        let a = greedy_policy(&e, &state).unwrap();
        assert_eq!(e.actions()[a].turn_rate.abs(), 0.3);
    }

    #[test]
    fn follower_advances_on_capture() {
        let e = env();
        let limits = e.config().friendly.limits;
        let plan = Trajectory::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(100.0, 0.0),
            Vec2::new(100.0, 400.0),
        ])
        .unwrap();
        let mut f = PsoFollower::new(plan, 50.0);
        let far = UavState::new(Vec2::new(0.0, 0.0), 25.0, 0.0);
        f.next_action(&far, e.actions(), &limits).unwrap();
        assert_eq!(f.target_index(), 1);
        let near = UavState::new(Vec2::new(80.0, 0.0), 25.0, FRAC_PI_2);
        f.next_action(&near, e.actions(), &limits).unwrap();
        assert_eq!(f.target_index(), 2);
    }

    #[test]
    fn pso_is_deterministic_and_stays_in_bounds() {
        let threats = [ThreatSource::new(Vec2::new(1000.0, 1000.0), 300.0, 300.0).unwrap()];
        let params = PsoParams {
            iterations: 40,
            ..PsoParams::default()
        };
        let a = pso_plan(Vec2::new(200.0, 200.0), Vec2::new(1800.0, 1800.0), &threats, 2000.0, &params, 4).unwrap();
        let b = pso_plan(Vec2::new(200.0, 200.0), Vec2::new(1800.0, 1800.0), &threats, 2000.0, &params, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fitness_history.len(), 41);
        assert!(a.fitness_history.windows(2).all(|w| w[1] <= w[0]));
        for p in a.trajectory.waypoints() {
            assert!((0.0..=2000.0).contains(&p.x) && (0.0..=2000.0).contains(&p.y));
        }
        assert!(pso_plan(Vec2::new(-1.0, 0.0), Vec2::new(10.0, 10.0), &[], 2000.0, &params, 0).is_err());
    }

    #[test]
    fn game_theory_without_sensed_enemies_is_greedy() {
        let e = env();
        let (state, _) = e.reset(5).unwrap();
        assert!(e.sensed_enemies(&state).is_empty());
        assert_eq!(
            game_theory_action(&e, &state, 5).unwrap(),
            greedy_policy(&e, &state).unwrap()
        );
    }

    #[test]
    fn game_theory_with_a_sensed_enemy_builds_the_full_matrix() {
        let e = env();
        let (mut state, _) = e.reset(5).unwrap();
        state.enemies[0].state.position = state.friendly.position + Vec2::new(350.0, 0.0);
        let m = payoff_matrix(&e, &state, 5).unwrap().unwrap();
        assert_eq!((m.rows(), m.cols()), (15, 15));
        let a = game_theory_action(&e, &state, 5).unwrap();
        assert_eq!(a, m.maximin().0);
    }
}
