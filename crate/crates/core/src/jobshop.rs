//! Synthetic two-agent jobshop world and its three hidden expert heuristics.
//!
//! Tasks sit at points in the unit square. Agents travel at a fixed speed and
//! the square is cut into a 10×10 grid; no two agents may stand in or be
//! reserved to the same cell. An assignment is legal only when the agent can
//! reach and finish the task before its deadline.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::serial::FORMAT_VERSION;

pub const GRID_CELLS: usize = 10;
/// Distance covered per tick.
pub const SPEED: f64 = 0.1;
pub const EPISODE_CAP: u32 = 400;
pub const MAX_DURATION: u32 = 10;
/// Largest random slack added on top of the tightest feasible deadline.
pub const MAX_EXTRA_SLACK: u32 = 100;
const SLACK_SCALE: f64 = 100.0;
const DEADLINE_SCALE: f64 = 150.0;

pub const STATE_FEATURES: usize = 6;
pub const ACTION_FEATURES: usize = 5;

pub type Point = [f64; 2];
pub type Cell = (usize, usize);

pub fn cell_of(p: Point) -> Cell {
    let c = |v: f64| ((v * GRID_CELLS as f64).floor().max(0.0) as usize).min(GRID_CELLS - 1);
    (c(p[0]), c(p[1]))
}

pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Ticks to cover `dist`, rounded up.
pub fn travel_ticks(dist: f64) -> u32 {
    // absorb representation error so that e.g. 0.5 / 0.1 stays 5
    (dist / SPEED - 1e-9).ceil().max(0.0) as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: usize,
    pub location: Point,
    pub duration: u32,
    pub deadline: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskStatus {
    Pending,
    InProgress { agent: usize },
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: usize,
    pub position: Point,
    pub busy_until: u32,
    pub task: Option<usize>,
}

impl Agent {
    pub fn cell(&self) -> Cell {
        cell_of(self.position)
    }

    pub fn is_busy(&self) -> bool {
        self.task.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchedulingAction {
    Assign { agent: usize, task: usize },
    Wait,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulingState {
    pub clock: u32,
    pub tasks: Vec<Task>,
    pub status: Vec<TaskStatus>,
    pub agents: Vec<Agent>,
    /// Set when a WAIT found nobody working and nothing assignable.
    pub deadlocked: bool,
}

/// Generates a random instance. Every task is feasible in isolation: any
/// agent starting from its origin can reach and finish it by the deadline.
pub fn generate_instance(seed: u64, num_tasks: usize, num_agents: usize) -> Result<SchedulingState> {
    if num_tasks == 0 || num_agents == 0 {
        return usage("need at least one task and one agent");
    }
    if num_agents > GRID_CELLS * GRID_CELLS {
        return usage("more agents than grid cells");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agents: Vec<Agent> = Vec::with_capacity(num_agents);
    while agents.len() < num_agents {
        let p = [rng.gen::<f64>(), rng.gen::<f64>()];
        if agents.iter().all(|a| a.cell() != cell_of(p)) {
            agents.push(Agent {
                id: agents.len(),
                position: p,
                busy_until: 0,
                task: None,
            });
        }
    }
    let tasks = (0..num_tasks)
        .map(|id| {
            let location = [rng.gen::<f64>(), rng.gen::<f64>()];
            let duration = rng.gen_range(1..=MAX_DURATION);
            let reach = agents
                .iter()
                .map(|a| travel_ticks(distance(a.position, location)))
                .max()
                .unwrap_or(0);
            let deadline = duration + reach + rng.gen_range(0..=MAX_EXTRA_SLACK);
            Task {
                id,
                location,
                duration,
                deadline,
            }
        })
        .collect();
    Ok(SchedulingState {
        clock: 0,
        tasks,
        status: vec![TaskStatus::Pending; num_tasks],
        agents,
        deadlocked: false,
    })
}

impl SchedulingState {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    /// Stable integer id: `agent · num_tasks + task`, WAIT last.
    pub fn action_id(&self, action: SchedulingAction) -> usize {
        match action {
            SchedulingAction::Assign { agent, task } => agent * self.num_tasks() + task,
            SchedulingAction::Wait => self.wait_id(),
        }
    }

    pub fn wait_id(&self) -> usize {
        self.num_agents() * self.num_tasks()
    }

    /// Size of the fixed action catalogue.
    pub fn num_action_slots(&self) -> usize {
        self.wait_id() + 1
    }

    pub fn action_from_id(&self, id: usize) -> Result<SchedulingAction> {
        if id == self.wait_id() {
            Ok(SchedulingAction::Wait)
        } else if id < self.wait_id() {
            Ok(SchedulingAction::Assign {
                agent: id / self.num_tasks(),
                task: id % self.num_tasks(),
            })
        } else {
            usage(format!("action id {id} out of range"))
        }
    }

    pub fn pending(&self) -> impl Iterator<Item = &Task> {
        self.tasks
            .iter()
            .filter(move |t| self.status[t.id] == TaskStatus::Pending)
    }

    pub fn done_count(&self) -> usize {
        self.status.iter().filter(|s| **s == TaskStatus::Done).count()
    }

    /// Cells held by agents, each either where the agent stands or where it
    /// is reserved to work.
    pub fn occupancy(&self) -> BTreeMap<Cell, Vec<usize>> {
        let mut map: BTreeMap<Cell, Vec<usize>> = BTreeMap::new();
        for a in &self.agents {
            map.entry(a.cell()).or_default().push(a.id);
        }
        map
    }

    pub fn occupancy_ok(&self) -> bool {
        self.occupancy().values().all(|v| v.len() <= 1)
    }

    pub fn is_terminal(&self) -> bool {
        self.deadlocked
            || self.clock >= EPISODE_CAP
            || (self.pending().next().is_none() && self.agents.iter().all(|a| !a.is_busy()))
    }

    /// Travel plus processing ticks for `agent` to do `task` from here.
    pub fn work_ticks(&self, agent: usize, task: usize) -> u32 {
        let a = &self.agents[agent];
        let t = &self.tasks[task];
        travel_ticks(distance(a.position, t.location)) + t.duration
    }

    fn assign_legal(&self, agent: usize, task: usize) -> bool {
        let a = &self.agents[agent];
        let t = &self.tasks[task];
        if a.is_busy() || self.status[task] != TaskStatus::Pending {
            return false;
        }
        let dest = cell_of(t.location);
        let blocked = self.agents.iter().any(|o| o.id != agent && o.cell() == dest);
        !blocked && self.clock + self.work_ticks(agent, task) <= t.deadline
    }

    /// Legal actions in ascending action-id order.
    pub fn legal_actions(&self) -> Vec<SchedulingAction> {
        if self.is_terminal() {
            return Vec::new();
        }
        let mut out = Vec::new();
        for agent in 0..self.num_agents() {
            for task in 0..self.num_tasks() {
                if self.assign_legal(agent, task) {
                    out.push(SchedulingAction::Assign { agent, task });
                }
            }
        }
        let any_busy = self.agents.iter().any(|a| a.is_busy());
        let pending_left = self.pending().next().is_some();
        if any_busy || (out.is_empty() && pending_left) {
            out.push(SchedulingAction::Wait);
        }
        out
    }

    pub fn is_legal(&self, action: SchedulingAction) -> bool {
        match action {
            SchedulingAction::Assign { agent, task } => {
                agent < self.num_agents()
                    && task < self.num_tasks()
                    && !self.is_terminal()
                    && self.assign_legal(agent, task)
            }
            SchedulingAction::Wait => self.legal_actions().contains(&SchedulingAction::Wait),
        }
    }

    /// Applies a legal action. Illegal actions are rejected, never corrected.
    pub fn step(&self, action: SchedulingAction) -> Result<SchedulingState> {
        if !self.is_legal(action) {
            return usage(format!("illegal action {action:?} at clock {}", self.clock));
        }
        let mut next = self.clone();
        match action {
            SchedulingAction::Assign { agent, task } => {
                next.agents[agent].busy_until = self.clock + self.work_ticks(agent, task);
                next.agents[agent].position = self.tasks[task].location;
                next.agents[agent].task = Some(task);
                next.status[task] = TaskStatus::InProgress { agent };
            }
            SchedulingAction::Wait => {
                let wake = next
                    .agents
                    .iter()
                    .filter(|a| a.is_busy())
                    .map(|a| a.busy_until)
                    .min();
                match wake {
                    Some(tick) => {
                        next.clock = tick;
                        for a in next.agents.iter_mut() {
                            if a.is_busy() && a.busy_until <= tick {
                                let t = a.task.take().expect("busy agent holds a task");
                                next.status[t] = TaskStatus::Done;
                            }
                        }
                    }
                    None => {
                        // nobody working and nothing assignable: the episode is stuck
                        next.deadlocked = true;
                    }
                }
            }
        }
        Ok(next)
    }

    /// State features: fraction done, normalised clock, min/mean/max deadline
    /// slack over pending tasks, fraction of idle agents.
    pub fn state_features(&self) -> Vec<f64> {
        let slacks: Vec<f64> = self
            .pending()
            .map(|t| scale_slack(t.deadline as f64 - self.clock as f64))
            .collect();
        let (min, mean, max) = if slacks.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            (
                slacks.iter().cloned().fold(f64::INFINITY, f64::min),
                slacks.iter().sum::<f64>() / slacks.len() as f64,
                slacks.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            )
        };
        let idle = self.agents.iter().filter(|a| !a.is_busy()).count();
        vec![
            self.done_count() as f64 / self.num_tasks() as f64,
            self.clock as f64 / EPISODE_CAP as f64,
            min,
            mean,
            max,
            idle as f64 / self.num_agents() as f64,
        ]
    }

    /// Action features: deadline slack after finishing, duration, travel
    /// distance, normalised deadline, and whether another agent holds a cell
    /// next to the destination. WAIT maps to the zero vector.
    pub fn action_features(&self, action: SchedulingAction) -> Vec<f64> {
        match action {
            SchedulingAction::Wait => vec![0.0; ACTION_FEATURES],
            SchedulingAction::Assign { agent, task } => {
                let a = &self.agents[agent];
                let t = &self.tasks[task];
                let slack = t.deadline as f64 - (self.clock + self.work_ticks(agent, task)) as f64;
                let dest = cell_of(t.location);
                let congested = self.agents.iter().any(|o| {
                    let c = o.cell();
                    o.id != agent && c.0.abs_diff(dest.0) <= 1 && c.1.abs_diff(dest.1) <= 1
                });
                vec![
                    scale_slack(slack),
                    t.duration as f64 / MAX_DURATION as f64,
                    distance(a.position, t.location) / std::f64::consts::SQRT_2,
                    (t.deadline as f64 / DEADLINE_SCALE).min(1.5),
                    if congested { 1.0 } else { 0.0 },
                ]
            }
        }
    }

    /// State features plus one feature vector per legal action.
    pub fn featurize(&self) -> (Vec<f64>, BTreeMap<SchedulingAction, Vec<f64>>) {
        let per_action = self
            .legal_actions()
            .into_iter()
            .map(|a| (a, self.action_features(a)))
            .collect();
        (self.state_features(), per_action)
    }
}

fn scale_slack(ticks: f64) -> f64 {
    (ticks / SLACK_SCALE).clamp(-1.5, 1.5)
}

/// The three hidden expert policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Heuristic {
    /// Earliest deadline first.
    Edf,
    /// Nearest task first.
    Nearest,
    /// Shortest processing time first.
    Spt,
}

impl Heuristic {
    pub const ALL: [Heuristic; 3] = [Heuristic::Edf, Heuristic::Nearest, Heuristic::Spt];

    pub fn index(self) -> usize {
        match self {
            Heuristic::Edf => 0,
            Heuristic::Nearest => 1,
            Heuristic::Spt => 2,
        }
    }

    /// Primary key the heuristic minimises for an assignment.
    pub fn key(self, state: &SchedulingState, agent: usize, task: usize) -> f64 {
        let t = &state.tasks[task];
        match self {
            Heuristic::Edf => t.deadline as f64,
            Heuristic::Nearest => distance(state.agents[agent].position, t.location),
            Heuristic::Spt => t.duration as f64,
        }
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Heuristic::Edf => "EDF",
            Heuristic::Nearest => "NEAREST",
            Heuristic::Spt => "SPT",
        })
    }
}

impl FromStr for Heuristic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EDF" => Ok(Heuristic::Edf),
            "NEAREST" => Ok(Heuristic::Nearest),
            "SPT" => Ok(Heuristic::Spt),
            other => usage(format!("unknown heuristic {other}")),
        }
    }
}

/// The legal assignment minimising the policy's key, ties broken by lower
/// task id then lower agent id; WAIT when nothing can be assigned.
pub fn heuristic_action(policy: Heuristic, state: &SchedulingState) -> Result<SchedulingAction> {
    let legal = state.legal_actions();
    if legal.is_empty() {
        return usage("no legal action in a terminal state");
    }
    let best = legal
        .iter()
        .filter_map(|a| match *a {
            SchedulingAction::Assign { agent, task } => Some((policy.key(state, agent, task), task, agent)),
            SchedulingAction::Wait => None,
        })
        .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    Ok(match best {
        Some((_, task, agent)) => SchedulingAction::Assign { agent, task },
        None => SchedulingAction::Wait,
    })
}

/// One legal candidate as the learners see it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub action_id: usize,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoStep {
    pub state_features: Vec<f64>,
    pub actions: Vec<ActionRecord>,
    pub chosen_action_id: usize,
    pub next_state_features: Vec<f64>,
}

impl DemoStep {
    /// More than one legal action, so the demonstrator actually chose.
    pub fn is_decision(&self) -> bool {
        self.actions.len() > 1
    }

    /// Position of the chosen action in `actions`.
    pub fn chosen_index(&self) -> Result<usize> {
        self.actions
            .iter()
            .position(|a| a.action_id == self.chosen_action_id)
            .ok_or_else(|| {
                Error::Data(format!(
                    "chosen action {} is not among the recorded legal actions",
                    self.chosen_action_id
                ))
            })
    }
}

/// Evaluation-only metadata; loaders drop it before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOnly {
    pub hidden_policy: Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub format_version: u32,
    pub demonstrator_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_only: Option<EvalOnly>,
    pub num_agents: usize,
    pub num_tasks: usize,
    pub steps: Vec<DemoStep>,
}

impl Demonstration {
    pub fn hidden_policy(&self) -> Option<Heuristic> {
        self.eval_only.as_ref().map(|e| e.hidden_policy)
    }

    pub fn strip_eval_only(mut self) -> Self {
        self.eval_only = None;
        self
    }

    pub fn num_action_slots(&self) -> usize {
        self.num_agents * self.num_tasks + 1
    }

    pub fn decision_steps(&self) -> impl Iterator<Item = &DemoStep> {
        self.steps.iter().filter(|s| s.is_decision())
    }
}

/// How each step of a recorded episode picks its action.
#[derive(Debug, Clone, PartialEq)]
pub enum Behaviour {
    Pure(Heuristic),
    /// Fresh heuristic draw at every step from fixed weights.
    Mixture([f64; 3]),
}

/// Runs one episode to termination and records every step.
pub fn record_episode<R: Rng>(
    initial: SchedulingState,
    behaviour: &Behaviour,
    rng: &mut R,
) -> Result<Vec<DemoStep>> {
    let mut state = initial;
    let mut steps = Vec::new();
    let mixture = match behaviour {
        Behaviour::Mixture(w) => Some(
            WeightedIndex::new(w).map_err(|e| Error::Config(format!("mixture weights: {e}")))?,
        ),
        Behaviour::Pure(_) => None,
    };
    while !state.is_terminal() {
        let policy = match (behaviour, &mixture) {
            (Behaviour::Pure(h), _) => *h,
            (_, Some(dist)) => Heuristic::ALL[dist.sample(rng)],
            _ => unreachable!(),
        };
        let action = heuristic_action(policy, &state)?;
        let (state_features, per_action) = state.featurize();
        let next = state.step(action)?;
        steps.push(DemoStep {
            state_features,
            actions: per_action
                .into_iter()
                .map(|(a, features)| ActionRecord {
                    action_id: state.action_id(a),
                    features,
                })
                .collect(),
            chosen_action_id: state.action_id(action),
            next_state_features: next.state_features(),
        });
        state = next;
    }
    Ok(steps)
}

pub const DEFAULT_TASKS: usize = 20;
pub const DEFAULT_AGENTS: usize = 2;

/// `n_schedules` demonstrations, each on a fresh instance with one hidden
/// heuristic drawn from `policy_mix`. Ids are `<prefix>-<index>`.
pub fn generate_demonstrations(
    n_schedules: usize,
    policy_mix: [f64; 3],
    seed: u64,
    id_prefix: &str,
) -> Result<Vec<Demonstration>> {
    let mix = WeightedIndex::new(policy_mix)
        .map_err(|e| Error::Config(format!("policy mix {policy_mix:?}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_schedules)
        .map(|i| {
            let instance_seed = rng.gen::<u64>();
            let policy = Heuristic::ALL[mix.sample(&mut rng)];
            let instance = generate_instance(instance_seed, DEFAULT_TASKS, DEFAULT_AGENTS)?;
            let steps = record_episode(instance, &Behaviour::Pure(policy), &mut rng)?;
            Ok(Demonstration {
                format_version: FORMAT_VERSION,
                demonstrator_id: format!("{id_prefix}-{i}"),
                eval_only: Some(EvalOnly {
                    hidden_policy: policy,
                }),
                num_agents: DEFAULT_AGENTS,
                num_tasks: DEFAULT_TASKS,
                steps,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_state() -> SchedulingState {
        SchedulingState {
            clock: 0,
            tasks: vec![
                Task {
                    id: 0,
                    location: [0.3, 0.4],
                    duration: 5,
                    deadline: 50,
                },
                Task {
                    id: 1,
                    location: [0.9, 0.9],
                    duration: 2,
                    deadline: 60,
                },
            ],
            status: vec![TaskStatus::Pending; 2],
            agents: vec![
                Agent {
                    id: 0,
                    position: [0.0, 0.0],
                    busy_until: 0,
                    task: None,
                },
                Agent {
                    id: 1,
                    position: [0.55, 0.05],
                    busy_until: 0,
                    task: None,
                },
            ],
            deadlocked: false,
        }
    }

    #[test]
    fn instance_is_reproducible_and_fresh() {
        let a = generate_instance(9, 20, 2).unwrap();
        assert_eq!(a, generate_instance(9, 20, 2).unwrap());
        assert_eq!(a.pending().count(), 20);
        assert_eq!(a.clock, 0);
        assert!(a.agents.iter().all(|ag| !ag.is_busy()));
        assert!(a.occupancy_ok());
    }

    #[test]
    fn travel_and_busy_until() {
        let s = tiny_state();
        assert_eq!(travel_ticks(distance([0.0, 0.0], [0.3, 0.4])), 5);
        let n = s.step(SchedulingAction::Assign { agent: 0, task: 0 }).unwrap();
        assert_eq!(n.agents[0].busy_until, 10);
        assert_eq!(n.status[0], TaskStatus::InProgress { agent: 0 });
    }

    #[test]
    fn wait_completes_next_task() {
        let mut s = tiny_state();
        s.clock = 3;
        s.agents[0].busy_until = 7;
        s.agents[0].task = Some(0);
        s.agents[0].position = s.tasks[0].location;
        s.status[0] = TaskStatus::InProgress { agent: 0 };
        s.agents[1].busy_until = 20;
        s.agents[1].task = Some(1);
        s.agents[1].position = s.tasks[1].location;
        s.status[1] = TaskStatus::InProgress { agent: 1 };
        assert_eq!(s.legal_actions(), vec![SchedulingAction::Wait]);
        let n = s.step(SchedulingAction::Wait).unwrap();
        assert_eq!(n.clock, 7);
        assert_eq!(n.status[0], TaskStatus::Done);
        assert!(!n.agents[0].is_busy());
        assert!(n.agents[1].is_busy());
    }

    #[test]
    fn illegal_action_is_rejected() {
        let s = tiny_state();
        let n = s.step(SchedulingAction::Assign { agent: 0, task: 0 }).unwrap();
        assert!(matches!(
            n.step(SchedulingAction::Assign { agent: 0, task: 1 }),
            Err(Error::Usage(_))
        ));
        // task 0 is no longer pending for the other agent either
        assert!(n.step(SchedulingAction::Assign { agent: 1, task: 0 }).is_err());
    }

    #[test]
    fn occupied_destination_is_illegal() {
        let mut s = tiny_state();
        s.tasks[1].location = [0.31, 0.41];
        let n = s.step(SchedulingAction::Assign { agent: 0, task: 0 }).unwrap();
        assert!(!n.is_legal(SchedulingAction::Assign { agent: 1, task: 1 }));
    }

    #[test]
    fn single_pending_task_both_agents_legal() {
        let mut s = tiny_state();
        s.status[1] = TaskStatus::Done;
        let legal = s.legal_actions();
        assert_eq!(
            legal,
            vec![
                SchedulingAction::Assign { agent: 0, task: 0 },
                SchedulingAction::Assign { agent: 1, task: 0 }
            ]
        );
    }

    #[test]
    fn deadline_filter() {
        let mut s = tiny_state();
        s.tasks[0].deadline = 9;
        assert!(!s.is_legal(SchedulingAction::Assign { agent: 0, task: 0 }));
        s.tasks[0].deadline = 10;
        assert!(s.is_legal(SchedulingAction::Assign { agent: 0, task: 0 }));
    }

    #[test]
    fn edf_picks_earlier_deadline() {
        let mut s = tiny_state();
        s.tasks[0].deadline = 9;
        s.tasks[1].deadline = 5;
        // equalise what the other heuristics would see
        s.tasks[0].location = [0.5, 0.5];
        s.tasks[1].location = [0.5, 0.5];
        s.tasks[0].duration = 1;
        s.tasks[1].duration = 1;
        s.agents[0].position = [0.5, 0.45];
        s.agents[1].position = [0.05, 0.05];
        s.tasks[0].deadline = 40;
        s.tasks[1].deadline = 20;
        let a = heuristic_action(Heuristic::Edf, &s).unwrap();
        assert_eq!(a, SchedulingAction::Assign { agent: 0, task: 1 });
    }

    #[test]
    fn forced_move_is_shared_by_all_heuristics() {
        let mut s = tiny_state();
        s.status[1] = TaskStatus::Done;
        s.agents[1].task = Some(1);
        s.agents[1].busy_until = 30;
        let legal: Vec<_> = s
            .legal_actions()
            .into_iter()
            .filter(|a| *a != SchedulingAction::Wait)
            .collect();
        assert_eq!(legal.len(), 1);
        for h in Heuristic::ALL {
            assert_eq!(heuristic_action(h, &s).unwrap(), legal[0]);
        }
    }

    #[test]
    fn terminal_state_features() {
        let s = tiny_state();
        let mut st = s.clone();
        let mut guard = 0;
        while !st.is_terminal() {
            let a = heuristic_action(Heuristic::Spt, &st).unwrap();
            st = st.step(a).unwrap();
            guard += 1;
            assert!(guard < 100);
        }
        assert_eq!(st.state_features()[0], 1.0);
        assert!(st.legal_actions().is_empty());
    }

    #[test]
    fn wait_without_workers_marks_deadlock() {
        let mut s = tiny_state();
        s.clock = 100;
        assert_eq!(s.legal_actions(), vec![SchedulingAction::Wait]);
        let n = s.step(SchedulingAction::Wait).unwrap();
        assert!(n.deadlocked && n.is_terminal());
    }

    #[test]
    fn action_ids_round_trip() {
        let s = tiny_state();
        for a in s.legal_actions() {
            assert_eq!(s.action_from_id(s.action_id(a)).unwrap(), a);
        }
        assert_eq!(s.action_from_id(s.wait_id()).unwrap(), SchedulingAction::Wait);
        assert!(s.action_from_id(99).is_err());
    }

    #[test]
    fn generated_demonstrations_replay_legally() {
        let demos = generate_demonstrations(3, [1.0, 1.0, 1.0], 11, "t").unwrap();
        assert_eq!(demos.len(), 3);
        for d in &demos {
            for s in &d.steps {
                s.chosen_index().unwrap();
            }
        }
    }

    #[test]
    fn bad_mix_is_a_configuration_error() {
        assert!(matches!(
            generate_demonstrations(1, [0.0, 0.0, 0.0], 1, "t"),
            Err(Error::Config(_))
        ));
    }
}
