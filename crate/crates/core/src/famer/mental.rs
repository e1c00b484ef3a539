//! Beliefs about what the user wants.
//!
//! The hypothesis space is every N-subset of the potential goals,
//! enumerated exactly. Confirmations and denials prune it; hints and
//! earlier episodes re-weight what is left.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::agent::AgentError;
use crate::dialogue;
use crate::lm::{ChatExchange, ChatRole};
use crate::tasks::{goal_hypothesis_count, Level, TaskSpec};
use crate::user::UserReply;

/// Above this many subsets the model tracks per-object marginals only.
pub const MAX_ENUMERATED_HYPOTHESES: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hint {
    pub tag: String,
    pub turn: u32,
    /// Goals already confirmed when the hint was given; the hint refers
    /// to some other goal.
    pub confirmed_at: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub goals: BTreeSet<String>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentalModel {
    pub confirmed: BTreeSet<String>,
    pub denied: BTreeSet<String>,
    pub hints: Vec<Hint>,
    /// Sorted by descending weight.
    pub hypotheses: Vec<Hypothesis>,
    pub inferred_values: BTreeMap<String, Level>,
    pub past_episode_goals: Vec<BTreeSet<String>>,
    /// Set when hints ruled out every consistent hypothesis.
    #[serde(default)]
    pub hint_conflict: bool,
    /// Entropy of the hypothesis weights after each inference step.
    #[serde(default)]
    pub entropy_trace: Vec<f64>,
}

/// All `k`-subsets of `items`, in lexicographic index order.
pub fn subsets<T: Clone + Ord>(items: &[T], k: usize) -> Vec<BTreeSet<T>> {
    let n = items.len();
    if k > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i].clone()).collect());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

impl MentalModel {
    /// Uniform prior over every goal set the task allows.
    pub fn new(spec: &TaskSpec) -> Self {
        let mut model = MentalModel {
            confirmed: BTreeSet::new(),
            denied: BTreeSet::new(),
            hints: Vec::new(),
            hypotheses: Vec::new(),
            inferred_values: spec.value_dims.iter().map(|d| (d.name.clone(), Level::Not)).collect(),
            past_episode_goals: Vec::new(),
            hint_conflict: false,
            entropy_trace: Vec::new(),
        };
        model.reset_hypotheses(spec);
        model
    }

    pub fn uses_marginals(spec: &TaskSpec) -> bool {
        goal_hypothesis_count(spec) > MAX_ENUMERATED_HYPOTHESES
    }

    fn reset_hypotheses(&mut self, spec: &TaskSpec) {
        if Self::uses_marginals(spec) {
            self.hypotheses.clear();
            return;
        }
        let consistent: Vec<BTreeSet<String>> = subsets(&spec.potential_goals, spec.goal_count)
            .into_iter()
            .filter(|h| self.is_consistent(h))
            .collect();
        let w = 1.0 / consistent.len().max(1) as f64;
        self.hypotheses = consistent
            .into_iter()
            .map(|goals| Hypothesis { goals, weight: w })
            .collect();
    }

    /// Contains every confirmed goal and no denied one.
    pub fn is_consistent(&self, goals: &BTreeSet<String>) -> bool {
        self.confirmed.is_subset(goals) && self.denied.is_disjoint(goals)
    }

    /// Moves this episode's known goals into history and starts over
    /// with a fresh prior.
    pub fn begin_episode(&mut self, spec: &TaskSpec) {
        let known = self.known_goals();
        if !known.is_empty() {
            self.past_episode_goals.push(known);
        }
        self.confirmed.clear();
        self.denied.clear();
        self.hints.clear();
        self.hint_conflict = false;
        self.reset_hypotheses(spec);
    }

    /// Probability mass on each potential goal.
    pub fn marginals(&self, spec: &TaskSpec) -> Vec<(String, f64)> {
        if self.hypotheses.is_empty() {
            return spec
                .potential_goals
                .iter()
                .map(|g| {
                    let p = if self.confirmed.contains(g) {
                        1.0
                    } else if self.denied.contains(g) {
                        0.0
                    } else {
                        prior_factor(self, spec, g) * hint_factor(self, spec, g)
                    };
                    (g.clone(), p)
                })
                .collect();
        }
        spec.potential_goals
            .iter()
            .map(|g| {
                let p = self.hypotheses.iter().filter(|h| h.goals.contains(g)).map(|h| h.weight).sum();
                (g.clone(), p)
            })
            .collect()
    }

    /// Goals that are certain: confirmed ones, plus the members of the
    /// only remaining hypothesis.
    pub fn known_goals(&self) -> BTreeSet<String> {
        let mut known = self.confirmed.clone();
        if self.hypotheses.len() == 1 {
            known.extend(self.hypotheses[0].goals.iter().cloned());
        }
        known
    }

    /// Union of the `k` heaviest hypotheses.
    pub fn top_goals(&self, k: usize) -> BTreeSet<String> {
        self.hypotheses.iter().take(k).flat_map(|h| h.goals.iter().cloned()).collect()
    }

    pub fn entropy(&self) -> f64 {
        self.hypotheses
            .iter()
            .filter(|h| h.weight > 0.0)
            .map(|h| -h.weight * h.weight.ln())
            .sum()
    }

    pub fn contains_hypothesis(&self, goals: &BTreeSet<String>) -> bool {
        self.hypotheses.iter().any(|h| &h.goals == goals)
    }
}

/// Folds a user reply into the model and drops hypotheses it rules out.
pub fn confirm_goals(reply: &UserReply, turn: u32, mental: &mut MentalModel) -> Result<(), AgentError> {
    let clash: Vec<&String> = reply
        .confirmed
        .intersection(&mental.denied)
        .chain(reply.denied.intersection(&mental.confirmed))
        .chain(reply.confirmed.intersection(&reply.denied))
        .collect();
    if !clash.is_empty() {
        return Err(AgentError::Contradiction(format!("{clash:?}")));
    }
    mental.confirmed.extend(reply.confirmed.iter().cloned());
    mental.denied.extend(reply.denied.iter().cloned());
    for tag in &reply.hinted_properties {
        mental.hints.push(Hint {
            tag: tag.clone(),
            turn,
            confirmed_at: mental.confirmed.clone(),
        });
    }
    let before = mental.hypotheses.len();
    let (confirmed, denied) = (mental.confirmed.clone(), mental.denied.clone());
    mental
        .hypotheses
        .retain(|h| confirmed.is_subset(&h.goals) && denied.is_disjoint(&h.goals));
    if mental.hypotheses.len() != before {
        normalize(&mut mental.hypotheses);
    }
    Ok(())
}

fn normalize(hypotheses: &mut [Hypothesis]) {
    let total: f64 = hypotheses.iter().map(|h| h.weight).sum();
    if total > 0.0 {
        for h in hypotheses.iter_mut() {
            h.weight /= total;
        }
    } else if !hypotheses.is_empty() {
        let w = 1.0 / hypotheses.len() as f64;
        for h in hypotheses.iter_mut() {
            h.weight = w;
        }
    }
}

/// Tuning knobs for [`infer_desires`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceParams {
    /// Likelihood of a hint a hypothesis cannot explain.
    pub epsilon: f64,
    /// How strongly the user is assumed to prefer high-affinity objects
    /// when choosing goals; larger is closer to a strict top-N choice.
    pub value_sharpness: f64,
}

impl Default for InferenceParams {
    fn default() -> Self {
        InferenceParams {
            epsilon: 0.1,
            value_sharpness: 2.0,
        }
    }
}

/// Profiles beyond this count use the per-object fallback prior.
const MAX_VALUE_PROFILES: usize = 6561;

/// Every assignment of levels to the task's value dimensions, starting
/// with all `Not`.
pub fn value_profiles(spec: &TaskSpec) -> Vec<Vec<Level>> {
    let mut out = vec![Vec::new()];
    for _ in &spec.value_dims {
        out = out
            .into_iter()
            .flat_map(|p| {
                Level::ALL.iter().map(move |l| {
                    let mut q = p.clone();
                    q.push(*l);
                    q
                })
            })
            .collect();
    }
    out
}

/// Per potential goal, the summed level weight of its dimensions.
pub fn affinities(spec: &TaskSpec, profile: &[Level]) -> Vec<f64> {
    spec.potential_goals
        .iter()
        .map(|g| {
            spec.value_dims
                .iter()
                .zip(profile)
                .filter(|(d, _)| d.affects.contains(g))
                .map(|(_, l)| f64::from(l.weight()))
                .sum()
        })
        .collect()
}

fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// User model for goal choice: P(G | values) ∝ exp(κ · Σ affinity over G).
/// Holds, per value profile, the log-probability of every N-subset.
struct ChoiceModel {
    subsets: Vec<Vec<usize>>,
    /// [profile][subset] log-probabilities.
    log_p: Vec<Vec<f64>>,
    profiles: Vec<Vec<Level>>,
}

impl ChoiceModel {
    fn new(spec: &TaskSpec, sharpness: f64) -> Option<Self> {
        let profiles = value_profiles(spec);
        if profiles.len() > MAX_VALUE_PROFILES || MentalModel::uses_marginals(spec) {
            return None;
        }
        let index: Vec<usize> = (0..spec.potential_goals.len()).collect();
        let subsets = index_subsets(&index, spec.goal_count);
        let log_p = profiles
            .iter()
            .map(|p| {
                let aff = affinities(spec, p);
                let scores: Vec<f64> = subsets
                    .iter()
                    .map(|s| sharpness * s.iter().map(|&i| aff[i]).sum::<f64>())
                    .collect();
                let z = log_sum_exp(scores.iter().copied());
                scores.into_iter().map(|x| x - z).collect()
            })
            .collect();
        Some(ChoiceModel {
            subsets,
            log_p,
            profiles,
        })
    }

    /// Normalised log-posterior over profiles, given goal sets (possibly
    /// partial) known to have been chosen; uniform prior over profiles.
    fn log_posterior(&self, spec: &TaskSpec, evidence: &[&BTreeSet<String>]) -> Vec<f64> {
        let evidence: Vec<Vec<usize>> = evidence
            .iter()
            .map(|e| e.iter().filter_map(|g| spec.goal_index(g)).collect())
            .collect();
        let log_lik: Vec<f64> = self
            .log_p
            .iter()
            .map(|lp| {
                evidence
                    .iter()
                    .map(|e| {
                        log_sum_exp(
                            self.subsets
                                .iter()
                                .zip(lp)
                                .filter(|(s, _)| e.iter().all(|i| s.contains(i)))
                                .map(|(_, x)| *x),
                        )
                    })
                    .sum()
            })
            .collect();
        let z = log_sum_exp(log_lik.iter().copied());
        log_lik.into_iter().map(|x| x - z).collect()
    }

    /// Posterior-predictive probability of each goal set.
    fn predictive(&self, log_post: &[f64]) -> Vec<f64> {
        (0..self.subsets.len())
            .map(|s| {
                log_post
                    .iter()
                    .zip(&self.log_p)
                    .map(|(lw, lp)| (lw + lp[s]).exp())
                    .sum()
            })
            .collect()
    }
}

fn index_subsets(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    subsets(items, k).into_iter().map(|s| s.into_iter().collect()).collect()
}

fn shares_dimension(spec: &TaskSpec, a: &str, b: &str) -> bool {
    spec.dimensions_of(a).any(|d| spec.dimensions_of(b).any(|e| e == d))
}

/// Fallback prior when profiles cannot be enumerated: doubles an object's
/// weight for each earlier episode whose goals shared a dimension with it.
fn prior_factor(mental: &MentalModel, spec: &TaskSpec, object: &str) -> f64 {
    let episodes = mental
        .past_episode_goals
        .iter()
        .filter(|past| past.iter().any(|p| shares_dimension(spec, object, p)))
        .count();
    2f64.powi(episodes as i32)
}

fn hint_factor(mental: &MentalModel, spec: &TaskSpec, object: &str) -> f64 {
    mental
        .hints
        .iter()
        .map(|hint| {
            if spec.properties_of(object).any(|t| t == hint.tag) {
                1.0
            } else {
                InferenceParams::default().epsilon
            }
        })
        .product()
}

/// Prior weight of each hypothesis from earlier episodes' goals: the
/// posterior-predictive under the value-driven choice model. Uniform when
/// there is no history.
fn history_prior(mental: &MentalModel, spec: &TaskSpec, params: InferenceParams) -> Vec<f64> {
    if mental.past_episode_goals.is_empty() {
        return vec![1.0; mental.hypotheses.len()];
    }
    let Some(model) = ChoiceModel::new(spec, params.value_sharpness) else {
        return mental
            .hypotheses
            .iter()
            .map(|h| h.goals.iter().map(|g| prior_factor(mental, spec, g)).product())
            .collect();
    };
    let evidence: Vec<&BTreeSet<String>> = mental.past_episode_goals.iter().collect();
    let predictive = model.predictive(&model.log_posterior(spec, &evidence));
    let by_set: BTreeMap<BTreeSet<usize>, f64> = model
        .subsets
        .iter()
        .map(|s| s.iter().copied().collect())
        .zip(predictive)
        .collect();
    mental
        .hypotheses
        .iter()
        .map(|h| {
            let key: BTreeSet<usize> = h.goals.iter().filter_map(|g| spec.goal_index(g)).collect();
            by_set.get(&key).copied().unwrap_or(0.0)
        })
        .collect()
}

/// Re-weights the hypotheses from hints and earlier episodes and
/// re-estimates the user's value levels.
pub fn infer_desires(mental: &mut MentalModel, spec: &TaskSpec, params: InferenceParams) {
    let priors = history_prior(mental, spec, params);
    for (h, prior) in mental.hypotheses.iter_mut().zip(priors) {
        let mut w = prior;
        for hint in &mental.hints {
            let explained = h
                .goals
                .iter()
                .any(|g| !hint.confirmed_at.contains(g) && spec.properties_of(g).any(|t| t == hint.tag));
            if !explained {
                w *= params.epsilon;
            }
        }
        h.weight = w;
    }
    let total: f64 = mental.hypotheses.iter().map(|h| h.weight).sum();
    mental.hint_conflict = !mental.hypotheses.is_empty() && (total == 0.0 || !total.is_finite());
    if mental.hint_conflict {
        for h in mental.hypotheses.iter_mut() {
            h.weight = 1.0;
        }
    }
    normalize(&mut mental.hypotheses);
    // Stable: equal weights keep enumeration order.
    mental.hypotheses.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    mental.inferred_values = estimate_values(mental, spec, params);
    let entropy = mental.entropy();
    mental.entropy_trace.push(entropy);
}

/// Most probable value profile given past goals and this episode's
/// confirmations. Without evidence every level is `Not`.
fn estimate_values(mental: &MentalModel, spec: &TaskSpec, params: InferenceParams) -> BTreeMap<String, Level> {
    let mut evidence: Vec<&BTreeSet<String>> = mental.past_episode_goals.iter().collect();
    if !mental.confirmed.is_empty() {
        evidence.push(&mental.confirmed);
    }
    let not = || spec.value_dims.iter().map(|d| (d.name.clone(), Level::Not)).collect();
    if evidence.is_empty() {
        return not();
    }
    let Some(model) = ChoiceModel::new(spec, params.value_sharpness) else {
        return not();
    };
    let post = model.log_posterior(spec, &evidence);
    let best = (0..post.len()).fold(0, |b, i| if post[i] > post[b] { i } else { b });
    spec.value_dims
        .iter()
        .zip(&model.profiles[best])
        .map(|(d, l)| (d.name.clone(), *l))
        .collect()
}

/// Per-episode limits on how often the agent may ask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommBudget {
    pub min_interval: u32,
    pub max_per_episode: u32,
    pub sent: u32,
    pub last_sent_step: Option<u32>,
}

impl Default for CommBudget {
    fn default() -> Self {
        CommBudget {
            min_interval: 10,
            max_per_episode: 8,
            sent: 0,
            last_sent_step: None,
        }
    }
}

impl CommBudget {
    pub fn allows(&self, step: u32) -> bool {
        self.sent < self.max_per_episode
            && self.last_sent_step.is_none_or(|last| step >= last + self.min_interval)
    }

    pub fn record(&mut self, step: u32) {
        self.sent += 1;
        self.last_sent_step = Some(step);
    }

    pub fn reset(&mut self) {
        self.sent = 0;
        self.last_sent_step = None;
    }
}

fn normalize_text(text: &str) -> String {
    dialogue::words(text).collect::<Vec<_>>().join(" ")
}

/// True when `question` was sent before and got an answer.
pub fn already_answered(question: &str, dialogue_log: &[ChatExchange]) -> bool {
    let q = normalize_text(question);
    dialogue_log.windows(2).any(|pair| {
        pair[0].role == ChatRole::Agent
            && pair[1].role == ChatRole::User
            && normalize_text(&pair[0].content) == q
    })
}

/// Decides whether to ask the user something and, if so, what.
///
/// With `reflective` set, questions already asked and answered are
/// suppressed and the budget applies; without it the agent asks whenever
/// anything is uncertain.
pub fn decide_communication(
    mental: &MentalModel,
    dialogue_log: &[ChatExchange],
    spec: &TaskSpec,
    budget: &CommBudget,
    step: u32,
    reflective: bool,
) -> Option<String> {
    // Without reflection only explicit confirmations count as settled.
    let settled = if reflective {
        mental.known_goals().len()
    } else {
        mental.confirmed.len()
    };
    if settled >= spec.goal_count {
        return None;
    }
    if reflective && !budget.allows(step) {
        return None;
    }
    let mut candidates: Vec<(usize, String, f64)> = mental
        .marginals(spec)
        .into_iter()
        .enumerate()
        .filter(|(_, (g, _))| !mental.confirmed.contains(g) && !mental.denied.contains(g))
        .map(|(i, (g, p))| (i, g, p))
        .collect();
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    let limit = 3.min(spec.goal_count + 1);
    let names: Vec<&str> = candidates.iter().take(limit).map(|(_, g, _)| g.as_str()).collect();
    if names.is_empty() {
        return None;
    }
    let question = dialogue::question(&names);
    if reflective && already_answered(&question, dialogue_log) {
        return None;
    }
    Some(question)
}
