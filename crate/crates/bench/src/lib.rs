//! Fixtures shared by the benchmarks.

use std::collections::BTreeSet;

use homeassist_core::famer::{confirm_goals, MentalModel};
use homeassist_core::world::{apply_action, build_scene, legal_actions};
use homeassist_core::{builtin_task, Action, SceneState, TaskSpec, UserReply};

pub fn task(id: &str) -> TaskSpec {
    builtin_task(id).expect("builtin task")
}

pub fn scene(spec: &TaskSpec, seed: u64) -> SceneState {
    build_scene(spec, seed).expect("scene builds")
}

/// Plays `steps` actions, always picking legal action `i mod |legal|`
/// with `i` the step index.
pub fn walk(state: &SceneState, steps: usize) -> SceneState {
    let mut state = state.clone();
    for i in 0..steps {
        let legal = legal_actions(&state);
        let action = legal
            .iter()
            .filter(|a| !matches!(a, Action::Send(_)))
            .nth(i % legal.len().max(1))
            .cloned()
            .unwrap_or(Action::Wait);
        state = apply_action(&state, &action).0;
    }
    state
}

/// A model after one exchange: the first potential goal confirmed, the
/// next two denied and a hint for the tags of the fourth.
pub fn answered_model(spec: &TaskSpec) -> MentalModel {
    let mut mental = MentalModel::new(spec);
    let g = &spec.potential_goals;
    let tag = spec.property_table[&g[3]].iter().next().cloned();
    let reply = UserReply {
        text: String::new(),
        confirmed: BTreeSet::from([g[0].clone()]),
        denied: BTreeSet::from([g[1].clone(), g[2].clone()]),
        hinted_properties: tag.into_iter().collect(),
    };
    confirm_goals(&reply, 1, &mut mental).expect("consistent reply");
    mental
}
