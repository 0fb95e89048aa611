//! The infiltration battlefield: friendly UAV, patrolling enemies, a target
//! zone, detection geometry, shaped rewards and the episode lifecycle.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simcore::{self, heading_of, normalize_angle, ControlInput, KinematicLimits, UavState, Vec2};

pub const WORLD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FriendlyConfig {
    pub limits: KinematicLimits,
    pub sensor_range: f64,
    pub start: Vec2,
    pub start_speed: f64,
    /// Initial heading; `None` points the vehicle at the target.
    pub start_heading: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnemyConfig {
    pub count: usize,
    pub limits: KinematicLimits,
    pub patrol_speed: f64,
    pub detect_range: f64,
    pub attack_range: f64,
    /// Distance from the target center to each patrol-loop center.
    pub patrol_ring_radius: f64,
    pub patrol_loop_radius: f64,
    pub patrol_waypoints: usize,
    pub waypoint_capture_radius: f64,
    /// Seconds without detection before an interceptor returns to patrol.
    pub lose_track_timeout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub center: Vec2,
    pub effective_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub lambda_dis: f64,
    pub c_dest: f64,
    pub c_enemy: f64,
    pub c_out: f64,
    pub c_fail: f64,
    pub t_safe: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda_dis: 0.1,
            c_dest: 100.0,
            c_enemy: -5.0,
            c_out: -50.0,
            c_fail: -100.0,
            t_safe: 10.0,
        }
    }
}

/// Discrete control levels; actions are their Cartesian product with the
/// acceleration level as the major index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionConfig {
    pub accel_levels: Vec<f64>,
    pub turn_levels: Vec<f64>,
}

impl Default for ActionConfig {
    fn default() -> Self {
        Self {
            accel_levels: vec![-2.0, 0.0, 2.0],
            turn_levels: vec![-0.3, -0.15, 0.0, 0.15, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub schema_version: u32,
    /// Side length of the square mission area `[0, field_size]^2`, meters.
    pub field_size: f64,
    pub friendly: FriendlyConfig,
    pub enemies: EnemyConfig,
    pub target: TargetConfig,
    pub reward: RewardConfig,
    pub actions: ActionConfig,
    /// Number of enemy slots in the observation vector.
    pub enemy_slots: usize,
    pub max_steps: u32,
    pub seed: u64,
}

impl WorldConfig {
    /// The 10 km battlefield with five enemies.
    pub fn full_scale() -> Self {
        Self {
            schema_version: WORLD_SCHEMA_VERSION,
            field_size: 10_000.0,
            friendly: FriendlyConfig {
                limits: KinematicLimits::default(),
                sensor_range: 2000.0,
                start: Vec2::new(1000.0, 1000.0),
                start_speed: 25.0,
                start_heading: None,
            },
            enemies: EnemyConfig {
                count: 5,
                limits: KinematicLimits {
                    v_max: 15.0,
                    v_min: 0.0,
                    a_max: 5.0,
                    turn_rate_max: 0.3,
                    dt: 1.0,
                },
                patrol_speed: 15.0,
                detect_range: 1500.0,
                attack_range: 800.0,
                patrol_ring_radius: 2800.0,
                patrol_loop_radius: 1000.0,
                patrol_waypoints: 8,
                waypoint_capture_radius: 60.0,
                lose_track_timeout: 20.0,
            },
            target: TargetConfig {
                center: Vec2::new(8000.0, 8000.0),
                effective_radius: 1000.0,
            },
            reward: RewardConfig::default(),
            actions: ActionConfig::default(),
            enemy_slots: 5,
            max_steps: 1200,
            seed: 0,
        }
    }

    /// A 2 km field with two enemies and all ranges scaled by 1/5.
    pub fn desk_scale() -> Self {
        let mut cfg = Self::full_scale();
        cfg.field_size = 2000.0;
        cfg.friendly.sensor_range = 400.0;
        cfg.friendly.start = Vec2::new(200.0, 200.0);
        cfg.enemies.count = 2;
        cfg.enemies.detect_range = 300.0;
        cfg.enemies.attack_range = 160.0;
        cfg.enemies.patrol_ring_radius = 550.0;
        cfg.enemies.patrol_loop_radius = 150.0;
        cfg.target.center = Vec2::new(1600.0, 1600.0);
        cfg.target.effective_radius = 200.0;
        cfg.enemy_slots = 2;
        cfg.max_steps = 300;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let v = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::validation(msg.to_string()))
            }
        };
        v(
            self.schema_version == WORLD_SCHEMA_VERSION,
            "world.schema_version: unsupported schema version",
        )?;
        v(self.field_size > 0.0 && self.field_size.is_finite(), "world.field_size must be > 0")?;
        self.friendly
            .limits
            .validate()
            .map_err(|e| Error::validation(format!("world.friendly.limits: {e}")))?;
        self.enemies
            .limits
            .validate()
            .map_err(|e| Error::validation(format!("world.enemies.limits: {e}")))?;
        v(self.friendly.sensor_range > 0.0, "world.friendly.sensor_range must be > 0")?;
        v(
            self.friendly.start_speed >= self.friendly.limits.v_min
                && self.friendly.start_speed <= self.friendly.limits.v_max,
            "world.friendly.start_speed must lie within [v_min, v_max]",
        )?;
        v(self.friendly.start.is_finite(), "world.friendly.start must be finite")?;
        v(
            self.friendly.limits.dt == self.enemies.limits.dt,
            "world.enemies.limits.dt must equal world.friendly.limits.dt",
        )?;
        let e = &self.enemies;
        v(e.detect_range > 0.0, "world.enemies.detect_range must be > 0")?;
        v(e.attack_range > 0.0, "world.enemies.attack_range must be > 0")?;
        v(
            e.patrol_speed > 0.0 && e.patrol_speed <= e.limits.v_max,
            "world.enemies.patrol_speed must lie in (0, enemies.limits.v_max]",
        )?;
        v(e.patrol_waypoints >= 3, "world.enemies.patrol_waypoints must be >= 3")?;
        v(e.patrol_loop_radius > 0.0, "world.enemies.patrol_loop_radius must be > 0")?;
        v(e.waypoint_capture_radius > 0.0, "world.enemies.waypoint_capture_radius must be > 0")?;
        v(e.lose_track_timeout >= 0.0, "world.enemies.lose_track_timeout must be >= 0")?;
        v(
            e.patrol_ring_radius - e.patrol_loop_radius > self.target.effective_radius,
            "world.enemies: patrol loops must stay outside the target effective radius",
        )?;
        v(
            self.target.effective_radius > 0.0,
            "world.target.effective_radius must be > 0",
        )?;
        v(self.in_field(self.target.center), "world.target.center must lie inside the field")?;
        v(self.in_field(self.friendly.start), "world.friendly.start must lie inside the field")?;
        v(
            self.friendly.start.distance(self.target.center) >= self.target.effective_radius,
            "world.friendly.start lies inside the target effective radius",
        )?;
        let r = &self.reward;
        v(
            [r.lambda_dis, r.c_dest, r.c_enemy, r.c_out, r.c_fail, r.t_safe]
                .iter()
                .all(|x| x.is_finite()),
            "world.reward constants must be finite",
        )?;
        v(r.t_safe >= 0.0, "world.reward.t_safe must be >= 0")?;
        v(
            !self.actions.accel_levels.is_empty() && !self.actions.turn_levels.is_empty(),
            "world.actions needs at least one level per channel",
        )?;
        v(
            self.actions
                .accel_levels
                .iter()
                .all(|a| a.abs() <= self.friendly.limits.a_max),
            "world.actions.accel_levels exceed friendly a_max",
        )?;
        v(
            self.actions
                .turn_levels
                .iter()
                .all(|w| w.abs() <= self.friendly.limits.turn_rate_max),
            "world.actions.turn_levels exceed friendly turn_rate_max",
        )?;
        v(self.max_steps > 0, "world.max_steps must be > 0")?;
        Ok(())
    }

    pub fn in_field(&self, p: Vec2) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.field_size && p.y <= self.field_size
    }

    pub fn field_diagonal(&self) -> f64 {
        self.field_size * std::f64::consts::SQRT_2
    }

    /// Length of the base observation vector.
    pub fn observation_len(&self) -> usize {
        OBS_OWN_FEATURES + OBS_SLOT_FEATURES * self.enemy_slots + 1
    }
}

/// Friendly position, velocity and goal position.
pub const OBS_OWN_FEATURES: usize = 6;
/// Relative position, velocity and valid flag of one enemy slot.
pub const OBS_SLOT_FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnemyMode {
    Patrol,
    Intercept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnemyUnit {
    pub state: UavState,
    pub mode: EnemyMode,
    pub patrol_center: Vec2,
    pub patrol_waypoints: Vec<Vec2>,
    pub next_waypoint: usize,
    /// Seconds since the friendly was last inside detection range.
    pub last_seen_timer: f64,
    pub last_seen_position: Option<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Success,
    FailAttack,
    FailOutOfBounds,
    FailTimeout,
}

impl Terminal {
    pub fn is_success(self) -> bool {
        self == Terminal::Success
    }

    /// Timeouts truncate an episode; every other outcome ends it.
    pub fn ends_episode_dynamics(self) -> bool {
        self != Terminal::FailTimeout
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Terminal::Success => "success",
            Terminal::FailAttack => "fail_attack",
            Terminal::FailOutOfBounds => "fail_out_of_bounds",
            Terminal::FailTimeout => "fail_timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub time_step: u32,
    pub friendly: UavState,
    pub enemies: Vec<EnemyUnit>,
    pub under_attack_accum: f64,
    pub terminal: Option<Terminal>,
    pub rng: ChaCha8Rng,
}

impl WorldState {
    pub fn is_terminal(&self) -> bool {
        self.terminal.is_some()
    }
}

/// Normalized observation vector plus the identity of the enemy in each slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub values: Vec<f64>,
    pub slot_enemies: Vec<Option<usize>>,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slot_valid(&self, slot: usize) -> bool {
        self.slot_enemies.get(slot).copied().flatten().is_some()
    }

    pub fn nearest_distance_feature(&self) -> f64 {
        *self.values.last().expect("observation is never empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub nav: f64,
    pub threat: f64,
    pub constraint: f64,
}

impl RewardWeights {
    pub const UNIT: RewardWeights = RewardWeights {
        nav: 1.0,
        threat: 1.0,
        constraint: 1.0,
    };

    pub const fn new(nav: f64, threat: f64, constraint: f64) -> Self {
        Self {
            nav,
            threat,
            constraint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_nav: f64,
    pub r_threat: f64,
    pub r_const: f64,
    pub goal: bool,
    pub detected: bool,
    pub out_of_bounds: bool,
    pub failed: bool,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        self.r_nav + self.r_threat + self.r_const
    }

    /// Scalar reward under `weights`, given a breakdown computed with unit
    /// weights.
    pub fn weighted(&self, weights: RewardWeights) -> f64 {
        weights.nav * self.r_nav + weights.threat * self.r_threat + weights.constraint * self.r_const
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioLabel {
    /// No enemy sensed.
    SafeCruise,
    /// Enemy sensed but not yet detecting the friendly.
    PreemptiveStealth,
    /// Friendly inside an enemy's detection range.
    HostileBreakthrough,
}

impl ScenarioLabel {
    pub const ALL: [ScenarioLabel; 3] = [
        ScenarioLabel::SafeCruise,
        ScenarioLabel::PreemptiveStealth,
        ScenarioLabel::HostileBreakthrough,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn roman(self) -> &'static str {
        match self {
            ScenarioLabel::SafeCruise => "I",
            ScenarioLabel::PreemptiveStealth => "II",
            ScenarioLabel::HostileBreakthrough => "III",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: RewardBreakdown,
    pub terminal: Option<Terminal>,
    pub scenario: ScenarioLabel,
}

/// The discrete action set: accel-major product of the configured levels.
pub fn action_table(config: &WorldConfig) -> Vec<ControlInput> {
    let mut out = Vec::with_capacity(config.actions.accel_levels.len() * config.actions.turn_levels.len());
    for &a in &config.actions.accel_levels {
        for &w in &config.actions.turn_levels {
            out.push(ControlInput::new(a, w));
        }
    }
    out
}

/// Steering toward `aim` at `speed`, saturated to `limits`.
fn pursue(state: &UavState, aim: Vec2, speed: f64, limits: &KinematicLimits) -> ControlInput {
    let turn_rate = match heading_of(aim - state.position) {
        Ok(desired) => normalize_angle(desired - state.heading) / limits.dt,
        Err(_) => 0.0,
    };
    let accel = (speed - state.speed) / limits.dt;
    ControlInput::new(accel, turn_rate).clamped(limits)
}

/// Updates the enemy's mode and returns its control for this step.
///
/// Patrolling enemies cycle through their loop waypoints at patrol speed.
/// An enemy that detects the friendly switches to pure pursuit at full
/// speed, and returns to the nearest loop waypoint after losing the track
/// for longer than the configured timeout.
pub fn enemy_policy(enemy: &mut EnemyUnit, friendly: &UavState, config: &WorldConfig) -> ControlInput {
    let ec = &config.enemies;
    let dt = ec.limits.dt;
    let sees = enemy.state.position.distance(friendly.position) < ec.detect_range;
    if sees {
        enemy.mode = EnemyMode::Intercept;
        enemy.last_seen_timer = 0.0;
        enemy.last_seen_position = Some(friendly.position);
    } else if enemy.mode == EnemyMode::Intercept {
        enemy.last_seen_timer += dt;
        if enemy.last_seen_timer > ec.lose_track_timeout {
            enemy.mode = EnemyMode::Patrol;
            enemy.last_seen_position = None;
            enemy.next_waypoint = nearest_index(&enemy.patrol_waypoints, enemy.state.position);
        }
    }
    match enemy.mode {
        EnemyMode::Intercept => {
            let aim = enemy.last_seen_position.unwrap_or(friendly.position);
            pursue(&enemy.state, aim, ec.limits.v_max, &ec.limits)
        }
        EnemyMode::Patrol => {
            let n = enemy.patrol_waypoints.len();
            if enemy.state.position.distance(enemy.patrol_waypoints[enemy.next_waypoint])
                < ec.waypoint_capture_radius
            {
                enemy.next_waypoint = (enemy.next_waypoint + 1) % n;
            }
            let aim = enemy.patrol_waypoints[enemy.next_waypoint];
            pursue(&enemy.state, aim, ec.patrol_speed, &ec.limits)
        }
    }
}

fn nearest_index(points: &[Vec2], p: Vec2) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, q) in points.iter().enumerate() {
        let d = q.distance(p);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Episode driver for one [`WorldConfig`].
#[derive(Debug, Clone)]
pub struct Environment {
    config: WorldConfig,
    actions: Vec<ControlInput>,
}

impl Environment {
    pub fn new(config: WorldConfig) -> Result<Self> {
        config.validate()?;
        let actions = action_table(&config);
        Ok(Self { config, actions })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn actions(&self) -> &[ControlInput] {
        &self.actions
    }

    pub fn action_count(&self) -> usize {
        self.actions.len()
    }

    pub fn observation_len(&self) -> usize {
        self.config.observation_len()
    }

    pub fn reset(&self, seed: u64) -> Result<(WorldState, Observation)> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = cfg.target.center;
        let start = cfg.friendly.start;
        let heading = match cfg.friendly.start_heading {
            Some(h) => h,
            None => heading_of(target - start).unwrap_or(0.0),
        };
        let friendly = UavState::new(start, cfg.friendly.start_speed, heading);

        let ec = &cfg.enemies;
        let base: f64 = rng.gen_range(0.0..2.0 * PI);
        let mut enemies = Vec::with_capacity(ec.count);
        for k in 0..ec.count {
            let angle = base + 2.0 * PI * k as f64 / ec.count as f64;
            let center = target + Vec2::from_polar(ec.patrol_ring_radius, angle);
            let n = ec.patrol_waypoints;
            let waypoints: Vec<Vec2> = (0..n)
                .map(|j| center + Vec2::from_polar(ec.patrol_loop_radius, 2.0 * PI * j as f64 / n as f64))
                .collect();
            let phase: f64 = rng.gen_range(0.0..n as f64);
            let seg = (phase.floor() as usize).min(n - 1);
            let frac = phase - seg as f64;
            let next = (seg + 1) % n;
            let position = waypoints[seg] + (waypoints[next] - waypoints[seg]) * frac;
            let heading = heading_of(waypoints[next] - position).unwrap_or(0.0);
            if position.distance(start) <= ec.attack_range {
                return Err(Error::validation(format!(
                    "world.friendly.start lies inside the attack zone of enemy {k} for seed {seed}"
                )));
            }
            enemies.push(EnemyUnit {
                state: UavState::new(position, ec.patrol_speed, heading),
                mode: EnemyMode::Patrol,
                patrol_center: center,
                patrol_waypoints: waypoints,
                next_waypoint: next,
                last_seen_timer: 0.0,
                last_seen_position: None,
            });
        }
        let state = WorldState {
            time_step: 0,
            friendly,
            enemies,
            under_attack_accum: 0.0,
            terminal: None,
            rng,
        };
        let obs = self.observe(&state);
        Ok((state, obs))
    }

    /// Enemy ids within friendly sensor range, nearest first.
    pub fn sensed_enemies(&self, state: &WorldState) -> Vec<(usize, f64)> {
        let p = state.friendly.position;
        let mut sensed: Vec<(usize, f64)> = state
            .enemies
            .iter()
            .enumerate()
            .map(|(i, e)| (i, e.state.position.distance(p)))
            .filter(|&(_, d)| d < self.config.friendly.sensor_range)
            .collect();
        sensed.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        sensed
    }

    pub fn observe(&self, state: &WorldState) -> Observation {
        let cfg = &self.config;
        let f = cfg.field_size;
        let vref = cfg.friendly.limits.v_max;
        let p = state.friendly.position;
        let v = state.friendly.velocity();
        let g = cfg.target.center;
        let mut values = Vec::with_capacity(cfg.observation_len());
        values.extend_from_slice(&[
            2.0 * p.x / f - 1.0,
            2.0 * p.y / f - 1.0,
            v.x / vref,
            v.y / vref,
            2.0 * g.x / f - 1.0,
            2.0 * g.y / f - 1.0,
        ]);
        let sensed = self.sensed_enemies(state);
        let mut slot_enemies = vec![None; cfg.enemy_slots];
        for slot in 0..cfg.enemy_slots {
            match sensed.get(slot) {
                Some(&(id, _)) => {
                    let e = &state.enemies[id].state;
                    let rel = e.position - p;
                    let ev = e.velocity();
                    values.extend_from_slice(&[rel.x / f, rel.y / f, ev.x / vref, ev.y / vref, 1.0]);
                    slot_enemies[slot] = Some(id);
                }
                None => values.extend_from_slice(&[0.0; OBS_SLOT_FEATURES]),
            }
        }
        let nearest = sensed
            .first()
            .map(|&(_, d)| d / cfg.field_diagonal())
            .unwrap_or(1.0);
        values.push(nearest);
        Observation {
            values,
            slot_enemies,
        }
    }

    pub fn distance_to_goal(&self, state: &WorldState) -> f64 {
        state.friendly.position.distance(self.config.target.center)
    }

    pub fn nearest_enemy_distance(&self, state: &WorldState) -> Option<f64> {
        state
            .enemies
            .iter()
            .map(|e| e.state.position.distance(state.friendly.position))
            .min_by(f64::total_cmp)
    }

    pub fn is_detected(&self, state: &WorldState) -> bool {
        self.nearest_enemy_distance(state)
            .is_some_and(|d| d < self.config.enemies.detect_range)
    }

    pub fn classify_scenario(&self, state: &WorldState) -> ScenarioLabel {
        match self.nearest_enemy_distance(state) {
            Some(d) if d < self.config.enemies.detect_range => ScenarioLabel::HostileBreakthrough,
            Some(d) if d < self.config.friendly.sensor_range => ScenarioLabel::PreemptiveStealth,
            _ => ScenarioLabel::SafeCruise,
        }
    }

    /// Reward for the transition `prev -> next`. Event flags follow the
    /// termination priority, so a goal entry suppresses failure penalties.
    pub fn compute_reward(&self, prev: &WorldState, next: &WorldState, weights: RewardWeights) -> RewardBreakdown {
        let rc = &self.config.reward;
        let d_prev = self.distance_to_goal(prev);
        let d_next = self.distance_to_goal(next);
        let goal = d_next < self.config.target.effective_radius;
        let failed = !goal && next.under_attack_accum > rc.t_safe;
        let out_of_bounds = !goal && !failed && !self.config.in_field(next.friendly.position);
        let detected = self.is_detected(next);
        let goal_term = if goal { rc.c_dest } else { 0.0 };
        let r_nav = weights.nav * (-rc.lambda_dis * (d_next - d_prev) + goal_term);
        let r_threat = weights.threat * if detected { rc.c_enemy } else { 0.0 };
        let out_term = if out_of_bounds { rc.c_out } else { 0.0 };
        let fail_term = if failed { rc.c_fail } else { 0.0 };
        let r_const = weights.constraint * (out_term + fail_term);
        RewardBreakdown {
            r_nav,
            r_threat,
            r_const,
            goal,
            detected,
            out_of_bounds,
            failed,
        }
    }

    pub fn step(&self, state: &mut WorldState, action_index: usize) -> Result<StepOutcome> {
        let control = *self.actions.get(action_index).ok_or_else(|| {
            Error::Usage(format!(
                "action index {action_index} out of range for {} actions",
                self.actions.len()
            ))
        })?;
        self.step_control(state, control)
    }

    /// Advances the world with an arbitrary (saturated) friendly control.
    pub fn step_control(&self, state: &mut WorldState, control: ControlInput) -> Result<StepOutcome> {
        if let Some(t) = state.terminal {
            return Err(Error::Usage(format!(
                "step called on a terminated episode (outcome {})",
                t.as_str()
            )));
        }
        let cfg = &self.config;
        let prev = state.clone();
        let friendly_before = state.friendly;
        state.friendly = simcore::integrate(&state.friendly, control, &cfg.friendly.limits)?;
        for enemy in &mut state.enemies {
            let u = enemy_policy(enemy, &friendly_before, cfg);
            enemy.state = simcore::integrate(&enemy.state, u, &cfg.enemies.limits)?;
            let offset = enemy.state.position - cfg.target.center;
            let dist = offset.norm();
            let fence = cfg.target.effective_radius;
            if dist < fence {
                let dir = if dist > 0.0 { offset * (1.0 / dist) } else { Vec2::new(1.0, 0.0) };
                enemy.state.position = cfg.target.center + dir * (fence * (1.0 + 1e-9));
            }
        }
        let attacked = state.enemies.iter().any(|e| {
            e.mode == EnemyMode::Intercept
                && e.state.position.distance(state.friendly.position) < cfg.enemies.attack_range
        });
        if attacked {
            state.under_attack_accum += cfg.friendly.limits.dt;
        } else {
            state.under_attack_accum = 0.0;
        }
        state.time_step += 1;

        let reward = self.compute_reward(&prev, state, RewardWeights::UNIT);
        let terminal = if reward.goal {
            Some(Terminal::Success)
        } else if reward.failed {
            Some(Terminal::FailAttack)
        } else if reward.out_of_bounds {
            Some(Terminal::FailOutOfBounds)
        } else if state.time_step >= cfg.max_steps {
            Some(Terminal::FailTimeout)
        } else {
            None
        };
        state.terminal = terminal;
        Ok(StepOutcome {
            observation: self.observe(state),
            reward,
            terminal,
            scenario: self.classify_scenario(state),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env_with(f: impl FnOnce(&mut WorldConfig)) -> Environment {
        let mut cfg = WorldConfig::full_scale();
        f(&mut cfg);
        Environment::new(cfg).unwrap()
    }

    fn place_enemy(state: &mut WorldState, idx: usize, pos: Vec2) {
        state.enemies[idx].state.position = pos;
    }

    #[test]
    fn reset_is_deterministic() {
        let env = env_with(|_| {});
        let (a, oa) = env.reset(42).unwrap();
        let (b, ob) = env.reset(42).unwrap();
        assert_eq!(a, b);
        assert_eq!(oa, ob);
    }

    #[test]
    fn reset_places_patrolling_enemies() {
        let env = env_with(|_| {});
        let (s, obs) = env.reset(1).unwrap();
        assert_eq!(s.enemies.len(), 5);
        assert!(s.enemies.iter().all(|e| e.mode == EnemyMode::Patrol));
        assert_eq!(obs.slot_enemies.len(), 5);
        assert_eq!(obs.len(), env.observation_len());
        for e in &s.enemies {
            assert!(e.state.position.distance(env.config().target.center) > 1000.0);
        }
    }

    #[test]
    fn seeds_change_enemy_phases() {
        let env = env_with(|_| {});
        let (a, _) = env.reset(1).unwrap();
        let (b, _) = env.reset(2).unwrap();
        assert_ne!(a.enemies[0].state.position, b.enemies[0].state.position);
    }

    #[test]
    fn start_inside_target_is_rejected() {
        let mut cfg = WorldConfig::full_scale();
        cfg.friendly.start = cfg.target.center;
        assert!(Environment::new(cfg).is_err());
    }

    #[test]
    fn start_inside_attack_zone_is_rejected() {
        let mut cfg = WorldConfig::full_scale();
        cfg.enemies.attack_range = 9000.0;
        let env = Environment::new(cfg).unwrap();
        assert!(env.reset(0).is_err());
    }

    #[test]
    fn step_into_target_succeeds() {
        let env = env_with(|c| c.enemies.count = 0);
        let (mut s, _) = env.reset(0).unwrap();
        let g = env.config().target.center;
        s.friendly = UavState::new(g - Vec2::new(1010.0, 0.0), 25.0, 0.0);
        let straight = 7; // accel 0, turn 0
        assert_eq!(env.actions()[straight], ControlInput::new(0.0, 0.0));
        let out = env.step(&mut s, straight).unwrap();
        assert_eq!(out.terminal, Some(Terminal::Success));
        assert!((out.reward.r_nav - (2.5 + 100.0)).abs() < 1e-9);
        assert!(env.step(&mut s, straight).is_err());
    }

    #[test]
    fn prolonged_attack_fails() {
        let env = env_with(|c| c.enemies.count = 1);
        let (mut s, _) = env.reset(3).unwrap();
        s.friendly = UavState::new(Vec2::new(5000.0, 5000.0), 25.0, 0.0);
        s.enemies[0].state = UavState::new(Vec2::new(5100.0, 5000.0), 15.0, PI);
        s.enemies[0].mode = EnemyMode::Intercept;
        s.under_attack_accum = env.config().reward.t_safe;
        let out = env.step(&mut s, 7).unwrap();
        assert_eq!(out.terminal, Some(Terminal::FailAttack));
        assert_eq!(out.reward.r_const, -100.0);
        assert!(out.reward.failed);
    }

    #[test]
    fn leaving_the_field_fails() {
        let env = env_with(|c| c.enemies.count = 0);
        let (mut s, _) = env.reset(0).unwrap();
        s.friendly = UavState::new(Vec2::new(9990.0, 1000.0), 25.0, 0.0);
        let out = env.step(&mut s, 7).unwrap();
        assert_eq!(out.terminal, Some(Terminal::FailOutOfBounds));
        assert_eq!(out.reward.r_const, -50.0);
    }

    #[test]
    fn timeout_after_max_steps() {
        let env = env_with(|c| {
            c.enemies.count = 0;
            c.max_steps = 3;
        });
        let (mut s, _) = env.reset(0).unwrap();
        let mut last = None;
        for _ in 0..3 {
            last = env.step(&mut s, 7).unwrap().terminal;
        }
        assert_eq!(last, Some(Terminal::FailTimeout));
    }

    #[test]
    fn observation_masking_and_order() {
        let env = env_with(|c| c.enemies.count = 3);
        let (mut s, _) = env.reset(0).unwrap();
        let p = Vec2::new(5000.0, 5000.0);
        s.friendly.position = p;
        for i in 0..3 {
            place_enemy(&mut s, i, p + Vec2::new(3000.0 + i as f64, 0.0));
        }
        let obs = env.observe(&s);
        assert!(obs.slot_enemies.iter().all(Option::is_none));
        assert_eq!(obs.nearest_distance_feature(), 1.0);

        place_enemy(&mut s, 2, p + Vec2::new(1800.0, 0.0));
        let obs = env.observe(&s);
        assert_eq!(obs.slot_enemies[0], Some(2));
        assert!(obs.slot_enemies[1..].iter().all(Option::is_none));
        assert_eq!(obs.values[OBS_OWN_FEATURES + 4], 1.0);
        assert_eq!(obs.values[OBS_OWN_FEATURES + OBS_SLOT_FEATURES + 4], 0.0);

        place_enemy(&mut s, 0, p + Vec2::new(0.0, 1200.0));
        place_enemy(&mut s, 1, p + Vec2::new(-900.0, 0.0));
        let obs = env.observe(&s);
        assert_eq!(&obs.slot_enemies[..3], &[Some(1), Some(0), Some(2)]);
        assert!((obs.nearest_distance_feature() - 900.0 / env.config().field_diagonal()).abs() < 1e-15);
        assert!(obs.values.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn reward_examples() {
        let env = env_with(|c| c.enemies.count = 1);
        let (mut prev, _) = env.reset(0).unwrap();
        let g = env.config().target.center;
        prev.friendly.position = g - Vec2::new(5000.0, 0.0);
        place_enemy(&mut prev, 0, Vec2::new(100.0, 9900.0));
        let mut next = prev.clone();
        next.friendly.position = g - Vec2::new(4975.0, 0.0);
        let r = env.compute_reward(&prev, &next, RewardWeights::UNIT);
        assert!((r.r_nav - 2.5).abs() < 1e-12);
        assert_eq!(r.r_threat, 0.0);
        assert_eq!(r.r_const, 0.0);

        let near = next.friendly.position + Vec2::new(1400.0, 0.0);
        place_enemy(&mut next, 0, near);
        let r = env.compute_reward(&prev, &next, RewardWeights::UNIT);
        assert_eq!(r.r_threat, -5.0);
        assert!(r.detected);
        let r = env.compute_reward(&prev, &next, RewardWeights::new(1.0, 0.0, 1.0));
        assert_eq!(r.r_threat, 0.0);
    }

    #[test]
    fn scenario_ranges() {
        let env = env_with(|c| c.enemies.count = 1);
        let (mut s, _) = env.reset(0).unwrap();
        let p = Vec2::new(5000.0, 5000.0);
        s.friendly.position = p;
        for (d, want) in [
            (2500.0, ScenarioLabel::SafeCruise),
            (1800.0, ScenarioLabel::PreemptiveStealth),
            (1200.0, ScenarioLabel::HostileBreakthrough),
        ] {
            place_enemy(&mut s, 0, p + Vec2::new(d, 0.0));
            assert_eq!(env.classify_scenario(&s), want);
        }
    }

    #[test]
    fn enemy_pursuit_geometry() {
        let cfg = WorldConfig::full_scale();
        let env = Environment::new(cfg.clone()).unwrap();
        let (s, _) = env.reset(0).unwrap();
        let mut enemy = s.enemies[0].clone();
        let origin = Vec2::new(5000.0, 5000.0);
        enemy.state = UavState::new(origin, 10.0, 0.0);

        let far = UavState::new(origin + Vec2::new(5000.0, 0.0), 25.0, 0.0);
        let mut e = enemy.clone();
        let _ = enemy_policy(&mut e, &far, &cfg);
        assert_eq!(e.mode, EnemyMode::Patrol);

        let ahead = UavState::new(origin + Vec2::new(1000.0, 0.0), 25.0, 0.0);
        let mut e = enemy.clone();
        let u = enemy_policy(&mut e, &ahead, &cfg);
        assert_eq!(e.mode, EnemyMode::Intercept);
        assert!(u.turn_rate.abs() < 1e-12);
        assert_eq!(u.accel, cfg.enemies.limits.a_max);

        let beside = UavState::new(origin + Vec2::new(0.0, 1000.0), 25.0, 0.0);
        let mut e = enemy.clone();
        let u = enemy_policy(&mut e, &beside, &cfg);
        assert_eq!(u.turn_rate, cfg.enemies.limits.turn_rate_max);
    }

    #[test]
    fn interceptor_gives_up_after_timeout() {
        let cfg = WorldConfig::full_scale();
        let env = Environment::new(cfg.clone()).unwrap();
        let (s, _) = env.reset(0).unwrap();
        let mut e = s.enemies[0].clone();
        let near = UavState::new(e.state.position + Vec2::new(500.0, 0.0), 25.0, 0.0);
        enemy_policy(&mut e, &near, &cfg);
        assert_eq!(e.mode, EnemyMode::Intercept);
        let gone = UavState::new(Vec2::new(0.0, 0.0), 25.0, 0.0);
        for _ in 0..20 {
            enemy_policy(&mut e, &gone, &cfg);
            assert_eq!(e.mode, EnemyMode::Intercept);
        }
        enemy_policy(&mut e, &gone, &cfg);
        assert_eq!(e.mode, EnemyMode::Patrol);
    }

    #[test]
    fn action_table_layout() {
        let cfg = WorldConfig::full_scale();
        let table = action_table(&cfg);
        assert_eq!(table.len(), 15);
        assert_eq!(table[0], ControlInput::new(-2.0, -0.3));
        assert_eq!(table[14], ControlInput::new(2.0, 0.3));
        let lim = cfg.friendly.limits;
        assert!(table
            .iter()
            .all(|u| u.accel.abs() <= lim.a_max && u.turn_rate.abs() <= lim.turn_rate_max));
    }

    #[test]
    fn breakdown_reweighting_matches_direct_computation() {
        let env = env_with(|c| c.enemies.count = 2);
        let (mut s, _) = env.reset(5).unwrap();
        for step in 0..200 {
            let prev = s.clone();
            let out = env.step(&mut s, (step * 7) % 15).unwrap();
            for w in [RewardWeights::new(1.0, 0.0, 1.0), RewardWeights::new(0.2, 3.0, 1.0)] {
                let direct = env.compute_reward(&prev, &s, w);
                assert_eq!(out.reward.weighted(w), direct.total());
            }
            assert_eq!(out.reward.total(), env.compute_reward(&prev, &s, RewardWeights::UNIT).total());
            if out.scenario == ScenarioLabel::HostileBreakthrough {
                assert!(out.reward.detected);
            }
            if out.terminal.is_some() {
                break;
            }
        }
    }

    #[test]
    fn shaping_telescopes() {
        let env = env_with(|c| c.enemies.count = 0);
        let (mut s, _) = env.reset(0).unwrap();
        let d0 = env.distance_to_goal(&s);
        let mut sum = 0.0;
        for step in 0..40 {
            let out = env.step(&mut s, (step * 4) % 15).unwrap();
            assert!(out.terminal.is_none());
            sum += out.reward.r_nav;
        }
        let expect = -0.1 * (env.distance_to_goal(&s) - d0);
        assert!((sum - expect).abs() < 1e-9, "{sum} vs {expect}");
    }

    #[test]
    fn enemies_respect_speed_and_fence() {
        let env = env_with(|_| {});
        for seed in 0..5 {
            let (mut s, _) = env.reset(seed).unwrap();
            for step in 0..400 {
                let out = env.step(&mut s, (step * 3 + seed as usize) % 15).unwrap();
                for e in &s.enemies {
                    assert!(e.state.speed <= env.config().enemies.limits.v_max);
                    if e.mode == EnemyMode::Patrol {
                        assert!(
                            e.state.position.distance(env.config().target.center)
                                >= env.config().target.effective_radius
                        );
                    }
                }
                if out.terminal.is_some() {
                    break;
                }
            }
        }
    }

    #[test]
    fn config_json_roundtrip() {
        let cfg = WorldConfig::desk_scale();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: WorldConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert!(back.validate().is_ok());
        let bad = text.replace("\"lambda_dis\"", "\"lambda_distance\"");
        assert!(serde_json::from_str::<WorldConfig>(&bad).is_err());
    }
}
