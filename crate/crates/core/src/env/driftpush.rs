//! Disc-pushing task with a seeded random impulse on the disc every
//! step. Stale actions let the disc drift away from the push line, so
//! the task rewards responsive correction.

use super::{clamp01, clip_action, Env, StepOut};
use crate::error::{CoreError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DT: f64 = 0.1;
pub const DAMPING: f64 = 0.9;
pub const DISC_DAMPING: f64 = 0.88;
pub const MAX_STEPS: usize = 80;

pub const GOAL: (f64, f64) = (0.78, 0.78);
pub const GOAL_RADIUS: f64 = 0.1;
pub const CONTACT_RADIUS: f64 = 0.08;
pub const PUSH_GAIN: f64 = 30.0;

/// Disturbance magnitude rho*, calibrated once with the stale-expert
/// oracle and frozen here.
pub const RHO_STAR: f64 = 0.01;

pub struct DriftPush {
    agent_pos: (f64, f64),
    agent_vel: (f64, f64),
    disc_pos: (f64, f64),
    disc_vel: (f64, f64),
    rho: f64,
    rng: ChaCha8Rng,
    steps: usize,
    done: bool,
    success: bool,
    started: bool,
}

impl DriftPush {
    pub fn new() -> Self {
        Self::with_rho(RHO_STAR)
    }

    pub fn with_rho(rho: f64) -> Self {
        DriftPush {
            agent_pos: (0.2, 0.2),
            agent_vel: (0.0, 0.0),
            disc_pos: (0.4, 0.4),
            disc_vel: (0.0, 0.0),
            rho,
            rng: ChaCha8Rng::seed_from_u64(0),
            steps: 0,
            done: true,
            success: false,
            started: false,
        }
    }

    pub fn disc_pos(&self) -> (f64, f64) {
        self.disc_pos
    }

    /// Test hook: move the disc (e.g. straight into the goal region).
    pub fn place_disc(&mut self, pos: (f64, f64)) {
        self.disc_pos = pos;
        if Self::disc_at_goal(pos) {
            self.done = true;
            self.success = true;
        }
    }

    fn disc_at_goal(p: (f64, f64)) -> bool {
        ((p.0 - GOAL.0).powi(2) + (p.1 - GOAL.1).powi(2)).sqrt() <= GOAL_RADIUS
    }

    fn observe(&self) -> Vec<f64> {
        vec![
            self.agent_pos.0,
            self.agent_pos.1,
            self.agent_vel.0,
            self.agent_vel.1,
            self.disc_pos.0,
            self.disc_pos.1,
            self.disc_vel.0,
            self.disc_vel.1,
            GOAL.0,
            GOAL.1,
        ]
    }

    /// Closed-loop proportional push controller: stay behind the disc on
    /// the goal line and regulate its speed toward the goal.
    pub fn expert_action(&self) -> Vec<f64> {
        Self::expert_action_for(self.agent_pos, self.agent_vel, self.disc_pos, self.disc_vel)
    }

    /// Same controller from explicit (possibly stale) state readings.
    pub fn expert_action_for(
        agent_pos: (f64, f64),
        agent_vel: (f64, f64),
        disc_pos: (f64, f64),
        disc_vel: (f64, f64),
    ) -> Vec<f64> {
        let to_goal = (GOAL.0 - disc_pos.0, GOAL.1 - disc_pos.1);
        let dist_goal = (to_goal.0 * to_goal.0 + to_goal.1 * to_goal.1).sqrt().max(1e-9);
        let dir = (to_goal.0 / dist_goal, to_goal.1 / dist_goal);
        let v_want = (1.5 * dist_goal).clamp(0.12, 0.4);
        // regulate the full disc velocity vector, not just the speed along
        // the goal line, so lateral drift gets corrected too
        let err = (
            dir.0 * v_want - disc_vel.0,
            dir.1 * v_want - disc_vel.1,
        );
        let err_norm = (err.0 * err.0 + err.1 * err.1).sqrt();
        let rel = (agent_pos.0 - disc_pos.0, agent_pos.1 - disc_pos.1);
        let target = if err_norm < 0.05 {
            // disc is on track: hover behind it without touching
            (
                disc_pos.0 - dir.0 * (CONTACT_RADIUS + 0.03),
                disc_pos.1 - dir.1 * (CONTACT_RADIUS + 0.03),
            )
        } else {
            let p = (err.0 / err_norm, err.1 / err_norm);
            let behind = rel.0 * p.0 + rel.1 * p.1 < 0.0;
            if !behind {
                // swing around to the push side without shoving the disc
                let side = (-p.1, p.0);
                let s = if rel.0 * side.0 + rel.1 * side.1 >= 0.0 { 1.0 } else { -1.0 };
                (
                    disc_pos.0 + s * side.0 * 0.14 - p.0 * 0.1,
                    disc_pos.1 + s * side.1 * 0.14 - p.1 * 0.1,
                )
            } else {
                // lean in along the velocity-error direction, deeper when
                // the error is larger
                let depth = (0.2 * err_norm).clamp(0.015, 0.06);
                (
                    disc_pos.0 - p.0 * (CONTACT_RADIUS - depth),
                    disc_pos.1 - p.1 * (CONTACT_RADIUS - depth),
                )
            }
        };
        let kp = 8.0;
        let kd = 3.0;
        let ax = kp * (target.0 - agent_pos.0) - kd * agent_vel.0;
        let ay = kp * (target.1 - agent_pos.1) - kd * agent_vel.1;
        vec![ax.clamp(-1.0, 1.0), ay.clamp(-1.0, 1.0)]
    }
}

impl Default for DriftPush {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for DriftPush {
    fn env_id(&self) -> &'static str {
        "drift_push"
    }

    fn obs_dim(&self) -> usize {
        10
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn max_steps(&self) -> usize {
        MAX_STEPS
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.agent_pos = (
            0.2 + 0.06 * (rng.gen::<f64>() - 0.5),
            0.2 + 0.06 * (rng.gen::<f64>() - 0.5),
        );
        self.agent_vel = (0.0, 0.0);
        self.disc_pos = (
            0.4 + 0.1 * (rng.gen::<f64>() - 0.5),
            0.4 + 0.1 * (rng.gen::<f64>() - 0.5),
        );
        self.disc_vel = (0.0, 0.0);
        self.rng = rng;
        self.steps = 0;
        self.done = false;
        self.success = false;
        self.started = true;
        if Self::disc_at_goal(self.disc_pos) {
            self.done = true;
            self.success = true;
        }
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOut> {
        if !self.started || self.done {
            return Err(CoreError::Env {
                step: self.steps,
                msg: "step on finished episode".into(),
            });
        }
        let (ax, ay) = clip_action(action);
        self.agent_vel.0 = DAMPING * (self.agent_vel.0 + ax * DT);
        self.agent_vel.1 = DAMPING * (self.agent_vel.1 + ay * DT);
        self.agent_pos.0 = clamp01(self.agent_pos.0 + self.agent_vel.0 * DT);
        self.agent_pos.1 = clamp01(self.agent_pos.1 + self.agent_vel.1 * DT);

        // contact push: spring along the agent->disc normal
        let rel = (
            self.disc_pos.0 - self.agent_pos.0,
            self.disc_pos.1 - self.agent_pos.1,
        );
        let dist = (rel.0 * rel.0 + rel.1 * rel.1).sqrt().max(1e-9);
        if dist < CONTACT_RADIUS {
            let overlap = CONTACT_RADIUS - dist;
            let n = (rel.0 / dist, rel.1 / dist);
            self.disc_vel.0 += PUSH_GAIN * overlap * n.0 * DT;
            self.disc_vel.1 += PUSH_GAIN * overlap * n.1 * DT;
        }

        // seeded random impulse every step
        let angle = self.rng.gen::<f64>() * std::f64::consts::TAU;
        self.disc_vel.0 += self.rho * angle.cos();
        self.disc_vel.1 += self.rho * angle.sin();

        self.disc_vel.0 *= DISC_DAMPING;
        self.disc_vel.1 *= DISC_DAMPING;
        self.disc_pos.0 = clamp01(self.disc_pos.0 + self.disc_vel.0 * DT);
        self.disc_pos.1 = clamp01(self.disc_pos.1 + self.disc_vel.1 * DT);

        self.steps += 1;
        if Self::disc_at_goal(self.disc_pos) {
            self.done = true;
            self.success = true;
        } else if self.steps >= MAX_STEPS {
            self.done = true;
            self.success = false;
        }
        Ok(StepOut {
            obs: self.observe(),
            done: self.done,
            success: self.success,
        })
    }

    fn done(&self) -> bool {
        self.done
    }

    fn success(&self) -> bool {
        self.success
    }

    fn steps_taken(&self) -> usize {
        self.steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_expert(rho: f64, seed: u64, delay: usize) -> bool {
        let mut env = DriftPush::with_rho(rho);
        env.reset(seed);
        // stale-observation oracle: act on state readings `delay` steps old
        let mut history = vec![(env.agent_pos, env.agent_vel, env.disc_pos, env.disc_vel)];
        while !env.done() {
            let idx = history.len().saturating_sub(1 + delay);
            let (ap, av, dp, dv) = history[idx];
            let a = DriftPush::expert_action_for(ap, av, dp, dv);
            env.step(&a).unwrap();
            history.push((env.agent_pos, env.agent_vel, env.disc_pos, env.disc_vel));
        }
        env.success()
    }

    #[test]
    fn expert_succeeds_without_disturbance() {
        let ok = (0..100).filter(|&s| run_expert(0.0, s, 0)).count();
        assert_eq!(ok, 100, "expert succeeded {}/100 at rho=0", ok);
    }

    #[test]
    fn expert_succeeds_at_calibrated_disturbance() {
        let ok = (0..100).filter(|&s| run_expert(RHO_STAR, s, 0)).count();
        assert!(ok >= 95, "expert succeeded {}/100 at rho*", ok);
    }

    #[test]
    fn stale_expert_degrades_at_calibrated_disturbance() {
        let fresh = (0..100).filter(|&s| run_expert(RHO_STAR, s, 0)).count();
        let stale = (0..100).filter(|&s| run_expert(RHO_STAR, s, 8)).count();
        assert!(
            fresh as i64 - stale as i64 >= 30,
            "fresh {}/100 vs stale {}/100",
            fresh,
            stale
        );
    }

    #[test]
    fn disc_in_goal_at_reset_is_immediate_success() {
        let mut env = DriftPush::new();
        env.reset(0);
        env.place_disc(GOAL);
        assert!(env.done());
        assert!(env.success());
    }

    #[test]
    fn trajectory_is_deterministic() {
        let run = || {
            let mut env = DriftPush::new();
            env.reset(3);
            let mut tail = Vec::new();
            for _ in 0..30 {
                let out = env.step(&[0.5, 0.5]).unwrap();
                tail = out.obs;
                if out.done {
                    break;
                }
            }
            tail
        };
        assert_eq!(run(), run());
    }
}
