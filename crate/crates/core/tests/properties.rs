use std::collections::BTreeSet;

use homeassist_core::baselines::{CoelaAgent, MhpAgent, MhpConfig};
use homeassist_core::famer::{
    confirm_goals, decide_communication, filter_actions, infer_desires, CommBudget, InferenceParams,
};
use homeassist_core::harness::{run_episode, Seeds, TranscriptEntry};
use homeassist_core::lm::{MockBackend, MockScript};
use homeassist_core::tasks::{episode_score, on_placement, sample_values};
use homeassist_core::user::{scripted_goal_set, scripted_respond, UserBackend};
use homeassist_core::world::{apply_action, build_scene, legal_actions, observe, Location, ObjectId};
use homeassist_core::{
    builtin_task, builtin_tasks, Action, Agent, AgentError, AgentMemory, ChatBackend, ChatExchange, FamerAgent,
    FamerConfig, GoalSet, KeyFact, MentalModel, Observation, Room, SceneState, Score, StepOutcome, TaskSpec,
    TransitionEvent, UserReply, UserState,
};
use proptest::prelude::*;
use std::sync::Arc;

fn task_ids() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["snack-m", "snack-l", "table-m", "table-l"]).prop_map(str::to_string)
}

/// Every action shape over the scene's ids, legal or not.
fn candidate_actions(state: &SceneState) -> Vec<Action> {
    let ids: Vec<ObjectId> = state.objects.keys().copied().collect();
    let mut out: Vec<Action> = Room::ALL.iter().map(|r| Action::GoToRoom(*r)).collect();
    for &a in &ids {
        out.push(Action::Open(a));
        out.push(Action::Grab(a));
        for &b in &ids {
            out.push(Action::PutOn(a, b));
        }
    }
    out.push(Action::Wait);
    out
}

fn pick(state: &SceneState, choice: usize, legal_only: bool) -> Action {
    if legal_only {
        let legal: Vec<Action> = legal_actions(state)
            .into_iter()
            .map(|a| if matches!(a, Action::Send(_)) { Action::Send("hello".into()) } else { a })
            .collect();
        legal[choice % legal.len()].clone()
    } else {
        let all = candidate_actions(state);
        all[choice % all.len()].clone()
    }
}

fn walk(spec: &TaskSpec, seed: u64, choices: &[(usize, bool)]) -> Vec<SceneState> {
    let mut states = vec![build_scene(spec, seed).unwrap()];
    for &(c, legal_only) in choices {
        let s = states.last().unwrap();
        let a = pick(s, c, legal_only);
        states.push(apply_action(s, &a).0);
    }
    states
}

fn walk_strategy() -> impl Strategy<Value = (String, u64, Vec<(usize, bool)>)> {
    (task_ids(), any::<u64>(), prop::collection::vec((any::<usize>(), prop::bool::weighted(0.8)), 0..60))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn world_transition_invariants((id, seed, choices) in walk_strategy()) {
        let spec = builtin_task(&id).unwrap();
        let states = walk(&spec, seed, &choices);
        let ids: BTreeSet<ObjectId> = states[0].objects.keys().copied().collect();
        for w in states.windows(2) {
            prop_assert!(w[1].agent_hands.len() <= 2);
            prop_assert_eq!(w[1].objects.keys().copied().collect::<BTreeSet<_>>(), ids.clone());
            prop_assert_eq!(w[1].step_count, w[0].step_count + 1);
            prop_assert!(w[1].check_invariants().is_ok());
        }
    }

    #[test]
    fn legal_actions_are_exactly_the_accepted_ones((id, seed, choices) in walk_strategy()) {
        let spec = builtin_task(&id).unwrap();
        let state = walk(&spec, seed, &choices).pop().unwrap();
        let legal = legal_actions(&state);
        for a in candidate_actions(&state) {
            let accepted = !apply_action(&state, &a).1.is_rejected();
            prop_assert_eq!(legal.contains(&a), accepted, "{:?}", a);
        }
        prop_assert!(legal.contains(&Action::send_placeholder()));
        prop_assert!(!apply_action(&state, &Action::Send("hi".into())).1.is_rejected());
        prop_assert!(apply_action(&state, &Action::Send(String::new())).1.is_rejected());
    }

    #[test]
    fn observation_is_a_function_of_state((id, seed, choices) in walk_strategy()) {
        let spec = builtin_task(&id).unwrap();
        let state = walk(&spec, seed, &choices).pop().unwrap();
        let copy = SceneState::from_json(&state.to_json()).unwrap();
        prop_assert_eq!(&copy, &state);
        prop_assert_eq!(observe(&copy), observe(&state));
    }

    #[test]
    fn score_bounds_and_idempotence(
        id in task_ids(),
        picks in prop::collection::vec((any::<prop::sample::Index>(), any::<bool>()), 0..16),
        goal_seed in any::<u64>(),
    ) {
        let spec = builtin_task(&id).unwrap();
        let values = sample_values(&spec, goal_seed);
        let mut goal = scripted_goal_set(&spec, &values, goal_seed);
        let mut classes = spec.potential_goals.clone();
        classes.extend(spec.distractors.iter().cloned());
        let mut correct_twice = goal.clone();
        let mut sum = Score::ZERO;
        for (i, (idx, on_target)) in picks.iter().enumerate() {
            let class = idx.get(&classes).clone();
            let surface_class = if *on_target { spec.target_surface.clone() } else { "kitchencounter".into() };
            let event = TransitionEvent::Placed { object: ObjectId(i as u32), class_name: class, surface: ObjectId(999), surface_class };
            let delta = on_placement(&mut goal, &spec, &event).unwrap();
            sum += delta;
            let first = on_placement(&mut correct_twice, &spec, &event).unwrap();
            if first > Score::ZERO {
                prop_assert_eq!(on_placement(&mut correct_twice, &spec, &event).unwrap(), Score::ZERO);
            }
        }
        let score = episode_score(&goal, &spec);
        prop_assert_eq!(score, sum);
        prop_assert_eq!(episode_score(&correct_twice, &spec), score);
        prop_assert!(score <= Score::ONE);
        prop_assert_eq!(score == Score::ONE, goal.placed_correct == goal.goals && goal.placed_wrong.is_empty());
    }

    #[test]
    fn scripted_replies_are_deterministic_and_hints_sound(
        id in task_ids(),
        values_seed in any::<u64>(),
        guess in prop::collection::vec(any::<prop::sample::Index>(), 0..6),
        reply_seed in any::<u64>(),
        episode in 1u32..4,
    ) {
        let spec = builtin_task(&id).unwrap();
        let values = sample_values(&spec, values_seed);
        let goal = scripted_goal_set(&spec, &values, values_seed ^ 1);
        let state = UserState::new(values, goal.clone(), episode);
        let guessed: BTreeSet<String> = guess.iter().map(|i| i.get(&spec.potential_goals).clone()).collect();
        let a = scripted_respond(&state, &spec, &guessed, reply_seed);
        let b = scripted_respond(&state, &spec, &guessed, reply_seed);
        prop_assert_eq!(&a, &b);
        for tag in &a.hinted_properties {
            let carriers = goal
                .goals
                .iter()
                .filter(|g| !a.confirmed.contains(*g))
                .filter(|g| spec.property_table.get(*g).is_some_and(|t| t.contains(tag)))
                .count();
            prop_assert!(carriers > 0, "hint {} fits no unconfirmed goal", tag);
        }
    }

    #[test]
    fn mock_backend_is_pure(seed in any::<u64>(), turns in prop::collection::vec("[a-z ]{1,20}", 1..5)) {
        let history: Vec<ChatExchange> = turns.iter().map(ChatExchange::agent).collect();
        let a = MockBackend::new(seed, MockScript::default());
        let b = MockBackend::new(seed, MockScript::default());
        prop_assert_eq!(a.chat(&history).unwrap(), b.chat(&history).unwrap());
        prop_assert_eq!(a.chat(&history).unwrap(), a.chat(&history).unwrap());
    }
}

fn named(text: &str, spec: &TaskSpec) -> BTreeSet<String> {
    let words: BTreeSet<String> = text
        .split(|c: char| !c.is_ascii_alphanumeric())
        .map(str::to_ascii_lowercase)
        .collect();
    spec.potential_goals.iter().filter(|g| words.contains(*g)).cloned().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn belief_updates_stay_sound(
        medium in any::<bool>(),
        values_seed in any::<u64>(),
        guesses in prop::collection::vec((prop::collection::vec(any::<prop::sample::Index>(), 1..5), any::<u64>()), 1..6),
    ) {
        let spec = builtin_task(if medium { "snack-m" } else { "table-l" }).unwrap();
        let values = sample_values(&spec, values_seed);
        let goal = scripted_goal_set(&spec, &values, values_seed);
        let state = UserState::new(values, goal.clone(), 1);
        let mut mental = MentalModel::new(&spec);
        let mut confirmed = 0;
        for (turn, (guess, seed)) in guesses.iter().enumerate() {
            let guessed: BTreeSet<String> = guess.iter().map(|i| i.get(&spec.potential_goals).clone()).collect();
            let reply = scripted_respond(&state, &spec, &guessed, *seed);
            confirm_goals(&reply, turn as u32, &mut mental).unwrap();
            infer_desires(&mut mental, &spec, InferenceParams::default());
            prop_assert!(mental.confirmed.len() >= confirmed);
            confirmed = mental.confirmed.len();
            prop_assert!(mental.hypotheses.iter().any(|h| h.goals == goal.goals && h.weight > 0.0));
            let total: f64 = mental.hypotheses.iter().map(|h| h.weight).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(mental.hypotheses.iter().all(|h| h.weight >= 0.0));

            for reflective in [true, false] {
                if let Some(q) = decide_communication(&mental, &[], &spec, &CommBudget::default(), 0, reflective) {
                    let names = named(&q, &spec);
                    let settled: BTreeSet<String> = mental.confirmed.union(&mental.denied).cloned().collect();
                    prop_assert!(!names.is_subset(&settled), "{}", q);
                }
            }

            let scene = build_scene(&spec, *seed).unwrap();
            let obs = observe(&scene);
            let actions = legal_actions(&scene);
            let kept = filter_actions(&actions, &obs, &mental, &spec);
            for a in &actions {
                let confirmed_object = a.object().and_then(|o| obs.class_of(o)).is_some_and(|c| mental.confirmed.contains(c));
                if confirmed_object {
                    prop_assert!(kept.contains(a));
                }
            }
        }
    }
}

/// Memory holding the true location of every goal object.
fn oracle_memory(spec: &TaskSpec, scene: &SceneState, goal: &GoalSet) -> AgentMemory {
    let mut memory = AgentMemory::new(spec, true);
    for g in &goal.goals {
        let obj = scene.find_class(g).unwrap();
        let container = match obj.location {
            Location::Inside(c) => Some(scene.object(c).unwrap().class_name.clone()),
            _ => None,
        };
        memory.upsert(KeyFact {
            object: g.clone(),
            container,
            room: scene.room_of(obj.id).unwrap(),
            episode: 0,
            valid: true,
        });
    }
    memory
}

#[test]
fn preloaded_facts_never_slow_famer_down() {
    let mut searched = 0;
    for id in ["snack-m", "snack-l", "table-m", "table-l"] {
        let spec = builtin_task(id).unwrap();
        for s in 0..40 {
            let seeds = Seeds::from_base(s);
            let scene = build_scene(&spec, seeds.scene).unwrap();
            let values = sample_values(&spec, seeds.values);
            let goal = scripted_goal_set(&spec, &values, seeds.values);
            // Both runs already know the goal set; only object locations differ.
            let told = UserReply {
                text: String::new(),
                confirmed: goal.goals.clone(),
                denied: Default::default(),
                hinted_properties: Default::default(),
            };
            let run = |mut memory: AgentMemory| {
                confirm_goals(&told, 0, &mut memory.mental).unwrap();
                let mut agent = FamerAgent::with_memory(spec.clone(), FamerConfig::default(), seeds.agent, memory);
                let mut user = UserState::new(values.clone(), goal.clone(), 1);
                run_episode(&spec, &mut agent, &mut user, &UserBackend::Scripted, &seeds).unwrap()
            };
            let cold = run(AgentMemory::new(&spec, true));
            let warm = run(oracle_memory(&spec, &scene, &goal));
            assert!(warm.steps <= cold.steps, "{id} seed {s}: {} > {}", warm.steps, cold.steps);
            let holds_goal = |c: ObjectId| {
                goal.goals
                    .iter()
                    .any(|g| scene.find_class(g).unwrap().location == Location::Inside(c))
            };
            let wasted_opens = cold
                .transcript
                .iter()
                .filter(|t| {
                    matches!(t, TranscriptEntry::Step { event: TransitionEvent::Opened { container }, .. }
                        if !holds_goal(*container))
                })
                .count();
            if wasted_opens > 0 {
                searched += 1;
                assert!(warm.steps < cold.steps, "{id} seed {s}: {} == {}", warm.steps, cold.steps);
            }
        }
    }
    assert!(searched > 0);
}

/// Counts actions that were not offered as legal.
struct Audited {
    inner: Box<dyn Agent>,
    illegal: usize,
    acted: usize,
}

impl Agent for Audited {
    fn kind(&self) -> &str {
        self.inner.kind()
    }
    fn begin_episode(&mut self, episode: u32) {
        self.inner.begin_episode(episode)
    }
    fn act(&mut self, obs: &Observation, legal: &[Action]) -> Result<Action, AgentError> {
        let action = self.inner.act(obs, legal)?;
        let ok = match &action {
            Action::Send(text) => !text.is_empty() && legal.iter().any(|a| matches!(a, Action::Send(_))),
            a => legal.contains(a),
        };
        self.acted += 1;
        self.illegal += usize::from(!ok);
        Ok(action)
    }
    fn feedback(&mut self, outcome: &StepOutcome<'_>) {
        self.inner.feedback(outcome)
    }
    fn end_episode(&mut self) {
        self.inner.end_episode()
    }
    fn memory_document(&self) -> Option<String> {
        self.inner.memory_document()
    }
}

#[test]
fn baselines_only_choose_legal_actions() {
    for spec in builtin_tasks().into_iter().filter(|t| t.goal_count == 2) {
        for s in 0..3 {
            let seeds = Seeds::from_base(s);
            let backend: Arc<dyn ChatBackend> = Arc::new(MockBackend::new(s, MockScript::default()));
            let agents: Vec<Box<dyn Agent>> = vec![
                Box::new(MhpAgent::new(spec.clone(), MhpConfig::default(), seeds.agent)),
                Box::new(CoelaAgent::new(spec.clone(), backend.clone())),
                Box::new(homeassist_core::baselines::ProAgent::new(spec.clone(), backend)),
            ];
            for inner in agents {
                let mut agent = Audited { inner, illegal: 0, acted: 0 };
                let values = sample_values(&spec, seeds.values);
                let goal = scripted_goal_set(&spec, &values, seeds.values);
                let mut user = UserState::new(values, goal, 1);
                run_episode(&spec, &mut agent, &mut user, &UserBackend::Scripted, &seeds).unwrap();
                assert!(agent.acted > 0);
                assert_eq!(agent.illegal, 0, "{} on {}", agent.kind(), spec.id);
            }
        }
    }
}

#[test]
fn mhp_is_deterministic_for_a_fixed_seed() {
    let spec = builtin_task("table-m").unwrap();
    let scene = build_scene(&spec, 5).unwrap();
    let obs = observe(&scene);
    let legal = legal_actions(&scene);
    let decide = || {
        let mut agent = MhpAgent::new(spec.clone(), MhpConfig::default(), 11);
        agent.begin_episode(1);
        (0..5).map(|_| agent.act(&obs, &legal).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(decide(), decide());
}
