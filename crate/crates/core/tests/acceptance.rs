//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use homeassist_core::famer::mental::Hint;
use homeassist_core::famer::{confirm_goals, infer_desires, InferenceParams};
use homeassist_core::harness::{run_session, run_sessions, AgentKind, SessionConfig, SessionResult, TranscriptEntry};
use homeassist_core::tasks::{goal_hypothesis_count, on_placement, episode_score, sample_values};
use homeassist_core::user::{scripted_goal_set, scripted_respond};
use homeassist_core::world::{build_scene, Location, ObjectId};
use homeassist_core::{
    builtin_task, builtin_tasks, AgentMemory, ChatExchange, ChatRole, GoalSet, KeyFact, MentalModel, Room, Score,
    TaskSpec, TransitionEvent, UserState,
};
use num_rational::Ratio;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCORING_SEQUENCES: usize = 1000;
const SCORING_BUDGET: Duration = Duration::from_secs(5);
const EXTREME_SEEDS: u64 = 20;
const EXTREME_MIN_PERFECT: usize = 18;
const EXTREME_BUDGET: Duration = Duration::from_secs(60);
const SOUNDNESS_DIALOGUES: u64 = 500;
const KEYINFO_SEEDS: u64 = 40;
const KEYINFO_MIN_REDUCTION: f64 = 0.05;
const COMM_SEEDS: u64 = 20;
const COMM_MIN_MONOTONE: f64 = 0.8;
const MHP_SEEDS: u64 = 50;
const ROUNDTRIP_MEMORIES: u64 = 200;
const CAP_SEEDS: u64 = 3;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn sessions(task: &str, agent: AgentKind, seeds: std::ops::Range<u64>) -> Vec<SessionResult> {
    let configs: Vec<SessionConfig> = seeds.map(|s| SessionConfig::new(task, agent, s)).collect();
    run_sessions(&configs)
        .into_iter()
        .map(|r| r.expect("session runs"))
        .collect()
}

/// Score in units of 1/(2N): every correct class counts 2, every wrong
/// placement on the target counts -1.
fn oracle_half_units(spec: &TaskSpec, goals: &BTreeSet<String>, events: &[(String, String)]) -> i64 {
    let mut correct = BTreeSet::new();
    let mut wrong = 0;
    for (class, surface) in events {
        if surface != &spec.target_surface {
            continue;
        }
        if goals.contains(class) {
            correct.insert(class.clone());
        } else {
            wrong += 1;
        }
    }
    2 * correct.len() as i64 - wrong
}

fn c1_scoring() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for spec in builtin_tasks() {
        let mut classes = spec.potential_goals.clone();
        classes.extend(spec.distractors.iter().cloned());
        let surfaces: Vec<String> = spec.surfaces.iter().map(|f| f.class_name.clone()).collect();
        for _ in 0..SCORING_SEQUENCES {
            let goals: BTreeSet<String> =
                spec.potential_goals.choose_multiple(&mut rng, spec.goal_count).cloned().collect();
            let len = rng.random_range(0..12);
            let events: Vec<(String, String)> = (0..len)
                .map(|_| (classes.choose(&mut rng).unwrap().clone(), surfaces.choose(&mut rng).unwrap().clone()))
                .collect();
            let mut goal = GoalSet::new(goals.iter().cloned());
            let mut sum = Score::ZERO;
            for (i, (class, surface)) in events.iter().enumerate() {
                let event = TransitionEvent::Placed {
                    object: ObjectId(i as u32),
                    class_name: class.clone(),
                    surface: ObjectId(1000),
                    surface_class: surface.clone(),
                };
                sum += on_placement(&mut goal, &spec, &event).expect("placement");
            }
            let expected = Score(Ratio::new(oracle_half_units(&spec, &goals, &events), 2 * spec.goal_count as i64));
            if sum != episode_score(&goal, &spec) || sum != expected {
                mismatches += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        mismatches == 0 && elapsed < SCORING_BUDGET,
        format!("{mismatches} mismatches in {} sequences, {elapsed:.2?}", 4 * SCORING_SEQUENCES),
    )
}

fn c2_constants() -> Verdict {
    let mut problems = Vec::new();
    let expect_n = [("snack-m", 2, 200), ("snack-l", 4, 300), ("table-m", 2, 200), ("table-l", 4, 300)];
    for (id, n, steps) in expect_n {
        let t = builtin_task(id).unwrap();
        if (t.goal_count, t.max_steps) != (n, steps) {
            problems.push(format!("{id}: ({}, {})", t.goal_count, t.max_steps));
        }
    }
    let snack = builtin_task("snack-m").unwrap();
    let table = builtin_task("table-m").unwrap();
    if goal_hypothesis_count(&snack) != 45 {
        problems.push(format!("snack-m hypotheses {}", goal_hypothesis_count(&snack)));
    }
    let snack_goals = [
        "cupcake", "wine", "milk", "cereal", "chips", "apple", "juice", "pudding", "creamybuns", "chocolatesyrup",
    ];
    let table_goals = ["coffeepot", "breadslice", "cutleryknife", "mug", "plate", "wineglass", "cutleryfork", "waterglass"];
    let snack_dims = ["Hungry", "Thirsty", "SweetTooth", "Fruitarian", "Alcoholic"];
    let table_dims = ["NeedRefresh", "Thirsty", "MeatLove", "CaffeinTolerable", "Alcoholic"];
    for (t, goals, dims) in [(&snack, &snack_goals[..], &snack_dims[..]), (&table, &table_goals[..], &table_dims[..])] {
        let got: BTreeSet<&str> = t.potential_goals.iter().map(String::as_str).collect();
        if t.potential_goals.len() != goals.len() || got != goals.iter().copied().collect() {
            problems.push(format!("{} goals {:?}", t.id, t.potential_goals));
        }
        let names: Vec<&str> = t.value_dims.iter().map(|d| d.name.as_str()).collect();
        if names != dims {
            problems.push(format!("{} dims {names:?}", t.id));
        }
    }
    let levels: Vec<String> = homeassist_core::Level::ALL.iter().map(|l| format!("{l:?}")).collect();
    if levels != ["Not", "Somewhat", "Very"] {
        problems.push(format!("levels {levels:?}"));
    }
    verdict(problems.is_empty(), if problems.is_empty() { "all match".into() } else { problems.join("; ") })
}

fn c3_extremes() -> Verdict {
    let start = Instant::now();
    let results = sessions("snack-m", AgentKind::Famer, 0..EXTREME_SEEDS);
    let elapsed = start.elapsed();
    let perfect = results.iter().filter(|r| r.episodes[2].score == Score::ONE).count();
    let double_negative = results
        .iter()
        .filter(|r| r.episodes[1].score < Score::ZERO && r.episodes[2].score < Score::ZERO)
        .count();
    verdict(
        perfect >= EXTREME_MIN_PERFECT && double_negative == 0 && elapsed < EXTREME_BUDGET,
        format!("episode-3 score 1 on {perfect}/{EXTREME_SEEDS}, {double_negative} double negatives, {elapsed:.2?}"),
    )
}

fn c4_soundness() -> Verdict {
    let mut violations = 0;
    let mut checks = 0;
    for d in 0..SOUNDNESS_DIALOGUES {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + d);
        let spec = builtin_task(if d % 2 == 0 { "snack-m" } else { "table-m" }).unwrap();
        let values = sample_values(&spec, rng.random());
        let mut mental = MentalModel::new(&spec);
        for episode in 1..=rng.random_range(1..=3u32) {
            if episode > 1 {
                mental.begin_episode(&spec);
            }
            let goal = scripted_goal_set(&spec, &values, rng.random());
            let user = UserState::new(values.clone(), goal.clone(), episode);
            infer_desires(&mut mental, &spec, InferenceParams::default());
            for turn in 0..rng.random_range(1..6u32) {
                let k = rng.random_range(1..=spec.goal_count + 3);
                let guessed: BTreeSet<String> = spec.potential_goals.choose_multiple(&mut rng, k).cloned().collect();
                let reply = scripted_respond(&user, &spec, &guessed, rng.random());
                confirm_goals(&reply, turn, &mut mental).expect("scripted user never contradicts itself");
                infer_desires(&mut mental, &spec, InferenceParams::default());
                checks += 1;
                let kept = mental.hypotheses.iter().any(|h| h.goals == goal.goals && h.weight > 0.0);
                if !kept {
                    violations += 1;
                }
            }
        }
    }
    verdict(violations == 0, format!("true goal pruned in {violations}/{checks} updates"))
}

fn words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_ascii_lowercase)
        .collect()
}

/// User messages naming a goal the agent has not put forward itself.
fn leaks(result: &SessionResult) -> usize {
    let mut leaks = 0;
    for e in &result.episodes {
        let mut proposed = BTreeSet::new();
        for entry in &e.transcript {
            let TranscriptEntry::Message { role, text, .. } = entry else { continue };
            let w = words(text);
            match role {
                ChatRole::User => leaks += e.goal.iter().filter(|g| w.contains(*g) && !proposed.contains(*g)).count(),
                _ => proposed.extend(w),
            }
        }
    }
    leaks
}

fn c5_non_revelation() -> Verdict {
    let mut configs = Vec::new();
    for spec in builtin_tasks() {
        for agent in AgentKind::ALL.into_iter().filter(|a| !a.is_silent()) {
            configs.extend((0..10).map(|s| SessionConfig::new(&spec.id, agent, s)));
        }
    }
    let mut messages = 0;
    let mut leaked = 0;
    for r in run_sessions(&configs) {
        let r = r.expect("session runs");
        messages += r
            .episodes
            .iter()
            .flat_map(|e| &e.transcript)
            .filter(|t| matches!(t, TranscriptEntry::Message { role: ChatRole::User, .. }))
            .count();
        leaked += leaks(&r);
    }
    verdict(leaked == 0 && messages > 0, format!("{leaked} leaks in {messages} user messages"))
}

fn hidden_goal(result: &SessionResult, spec: &TaskSpec) -> bool {
    let scene = build_scene(spec, result.seeds.scene).expect("scene");
    result.episodes[1..].iter().flat_map(|e| &e.goal).any(|g| {
        scene
            .objects
            .values()
            .any(|o| &o.class_name == g && matches!(o.location, Location::Inside(_)))
    })
}

fn c6_keyinfo() -> Verdict {
    let spec = builtin_task("snack-m").unwrap();
    let with = sessions("snack-m", AgentKind::Famer, 0..KEYINFO_SEEDS);
    let without = sessions("snack-m", AgentKind::FamerWoKeyinfo, 0..KEYINFO_SEEDS);
    let pairs: Vec<(&SessionResult, &SessionResult)> =
        with.iter().zip(&without).filter(|(a, _)| hidden_goal(a, &spec)).collect();
    let n = pairs.len() as f64;
    let late = |r: &SessionResult| f64::from(r.episodes[1].steps + r.episodes[2].steps);
    let late_score = |r: &SessionResult| r.episodes[1].score + r.episodes[2].score;
    let steps_with = pairs.iter().map(|(a, _)| late(a)).sum::<f64>() / n;
    let steps_without = pairs.iter().map(|(_, b)| late(b)).sum::<f64>() / n;
    let score_with: Score = pairs.iter().map(|(a, _)| late_score(a)).sum();
    let score_without: Score = pairs.iter().map(|(_, b)| late_score(b)).sum();
    let reduction = 1.0 - steps_with / steps_without;
    verdict(
        !pairs.is_empty() && reduction >= KEYINFO_MIN_REDUCTION && score_with == score_without,
        format!(
            "{} paired seeds, steps {steps_with:.2} vs {steps_without:.2} ({:.1}% fewer), summed scores {score_with} vs {score_without}",
            pairs.len(),
            100.0 * reduction
        ),
    )
}

fn c7_communication() -> Verdict {
    let famer = sessions("snack-m", AgentKind::Famer, 0..COMM_SEEDS);
    let monotone = famer
        .iter()
        .filter(|r| r.episodes.windows(2).all(|w| w[0].comm_tokens >= w[1].comm_tokens))
        .count();
    let mut silent_tokens = 0;
    for spec in builtin_tasks() {
        for agent in AgentKind::ALL.into_iter().filter(|a| a.is_silent()) {
            for r in sessions(&spec.id, agent, 0..COMM_SEEDS) {
                silent_tokens += r.episodes.iter().map(|e| e.comm_tokens).sum::<usize>();
                silent_tokens += r
                    .episodes
                    .iter()
                    .flat_map(|e| &e.transcript)
                    .filter(|t| matches!(t, TranscriptEntry::Message { .. }))
                    .count();
            }
        }
    }
    let rate = monotone as f64 / COMM_SEEDS as f64;
    verdict(
        rate >= COMM_MIN_MONOTONE && silent_tokens == 0,
        format!("non-increasing on {monotone}/{COMM_SEEDS} seeds, silent baselines {silent_tokens} tokens"),
    )
}

fn c8_mhp_trend() -> Verdict {
    let results = sessions("snack-m", AgentKind::Mhp, 0..MHP_SEEDS);
    let means: Vec<f64> = (0..3)
        .map(|e| results.iter().map(|r| r.episodes[e].score.as_f64()).sum::<f64>() / MHP_SEEDS as f64)
        .collect();
    verdict(
        means[0] < means[1] && means[1] < means[2],
        format!("mean scores {:.3} {:.3} {:.3}", means[0], means[1], means[2]),
    )
}

fn printable(rng: &mut ChaCha8Rng, max: usize) -> String {
    let alphabet: Vec<char> = "abcdefghij XYZ0123456789 .,?!\"'\\/{}[]:é✓\n\t".chars().collect();
    (0..rng.random_range(0..=max)).map(|_| *alphabet.choose(rng).unwrap()).collect()
}

fn random_memory(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> AgentMemory {
    let names = &spec.potential_goals;
    let mut memory = AgentMemory::new(spec, rng.random_bool(0.7));
    if let Some(facts) = memory.key_facts.as_mut() {
        for _ in 0..rng.random_range(0..6) {
            facts.push(KeyFact {
                object: names.choose(rng).unwrap().clone(),
                container: rng.random_bool(0.5).then(|| "fridge".to_string()),
                room: *Room::ALL.choose(rng).unwrap(),
                episode: rng.random_range(1..4),
                valid: rng.random_bool(0.8),
            });
        }
    }
    for _ in 0..rng.random_range(0..3) {
        let k = rng.random_range(0..=spec.goal_count);
        let set: BTreeSet<String> = names.choose_multiple(rng, k).cloned().collect();
        memory.confirmed_by_episode.push(set.clone());
        memory.mental.past_episode_goals.push(set);
    }
    memory.mental.hypotheses.shuffle(rng);
    memory.mental.hypotheses.truncate(rng.random_range(0..20));
    for h in &mut memory.mental.hypotheses {
        h.weight = rng.random::<f64>();
    }
    for turn in 0..rng.random_range(0..4) {
        memory.mental.hints.push(Hint {
            tag: printable(rng, 8),
            turn,
            confirmed_at: names.choose_multiple(rng, 1).cloned().collect(),
        });
    }
    memory.mental.entropy_trace = (0..rng.random_range(0..4)).map(|_| rng.random::<f64>() * 4.0).collect();
    memory.mental.hint_conflict = rng.random_bool(0.1);
    for _ in 0..rng.random_range(0..6) {
        let text = printable(rng, 30);
        memory
            .dialogue_log
            .push(if rng.random_bool(0.5) { ChatExchange::agent(text) } else { ChatExchange::user(text) });
    }
    memory.action_log = (0..rng.random_range(0..5)).map(|_| printable(rng, 20)).collect();
    memory
}

fn c9_determinism() -> Verdict {
    let mut differing = Vec::new();
    for agent in AgentKind::ALL {
        let config = SessionConfig::new("table-m", agent, 17);
        let a = run_session(&config).expect("session runs").to_json();
        let b = run_session(&config).expect("session runs").to_json();
        if a != b {
            differing.push(agent.name());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tasks = builtin_tasks();
    let mut broken = 0;
    for _ in 0..ROUNDTRIP_MEMORIES {
        let spec = tasks.choose(&mut rng).unwrap();
        let memory = random_memory(spec, &mut rng);
        let doc = memory.persist();
        match AgentMemory::load(&doc) {
            Ok(back) if back == memory && back.persist() == doc => {}
            _ => broken += 1,
        }
    }
    verdict(
        differing.is_empty() && broken == 0,
        format!("non-deterministic agents {differing:?}, {broken}/{ROUNDTRIP_MEMORIES} memory round-trips broken"),
    )
}

fn c10_step_caps() -> Verdict {
    let mut configs = Vec::new();
    for spec in builtin_tasks() {
        for agent in AgentKind::ALL {
            configs.extend((0..CAP_SEEDS).map(|s| SessionConfig::new(&spec.id, agent, s)));
        }
    }
    let mut over = Vec::new();
    let mut episodes = 0;
    for r in run_sessions(&configs) {
        let r = r.expect("session runs");
        let cap = builtin_task(&r.task).unwrap().max_steps;
        for e in &r.episodes {
            episodes += 1;
            let steps = e.transcript.iter().filter(|t| matches!(t, TranscriptEntry::Step { .. })).count();
            if e.steps > cap || steps > cap as usize {
                over.push(format!("{} {} ep{} {}", r.task, r.agent, e.episode, steps));
            }
        }
    }
    verdict(over.is_empty(), format!("{} of {episodes} episodes over cap {over:?}", over.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("scoring oracle", c1_scoring),
        ("task constants", c2_constants),
        ("score extremes", c3_extremes),
        ("hypothesis soundness", c4_soundness),
        ("user non-revelation", c5_non_revelation),
        ("key-info effect", c6_keyinfo),
        ("communication efficiency", c7_communication),
        ("baseline adaptation trend", c8_mhp_trend),
        ("determinism and persistence", c9_determinism),
        ("step caps", c10_step_caps),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        println!("{} {:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
