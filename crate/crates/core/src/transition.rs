//! Shift-reduce state machine over mention boundaries.
//!
//! `PUSH` marks a left boundary, `ADVANCE` moves the buffer, and `POP`/`PEEK`
//! emit the span from the stack top to the current token. The state is
//! `[stack, index, history]`; the cluster set lives in
//! [`ClusterMemory`](crate::clustering::ClusterMemory) and is updated by the
//! caller from the emitted [`MentionEvent`]s.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{ClusterMemory, CorefChoice};
use crate::corpus::{ClusterSet, Document, MentionSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Push,
    Advance,
    Pop,
    Peek,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Push, Action::Advance, Action::Pop, Action::Peek];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Action::Push => "PUSH",
            Action::Advance => "ADVANCE",
            Action::Pop => "POP",
            Action::Peek => "PEEK",
        }
    }

    pub fn emits_mention(self) -> bool {
        matches!(self, Action::Pop | Action::Peek)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.mnemonic() == s)
            .ok_or_else(|| format!("unknown action {s:?}"))
    }
}

/// A small set of actions, iterated in [`Action::ALL`] order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ActionSet(u8);

impl ActionSet {
    pub const EMPTY: ActionSet = ActionSet(0);

    pub fn insert(&mut self, action: Action) {
        self.0 |= 1 << action.index();
    }

    pub fn remove(&mut self, action: Action) {
        self.0 &= !(1 << action.index());
    }

    pub fn contains(self, action: Action) -> bool {
        self.0 & (1 << action.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }
}

impl FromIterator<Action> for ActionSet {
    fn from_iter<I: IntoIterator<Item = Action>>(iter: I) -> Self {
        let mut set = ActionSet::EMPTY;
        for a in iter {
            set.insert(a);
        }
        set
    }
}

/// Which rule forbids an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    /// ADVANCE on the final token needs an empty stack.
    AdvanceFinalNeedsEmptyStack,
    /// POP and PEEK need a non-empty stack.
    ReduceNeedsStack,
    /// At most one PUSH per buffer index.
    PushOncePerToken,
    /// PUSH may not directly follow POP or PEEK.
    PushAfterReduce,
    /// POP may not directly follow PEEK.
    PopAfterPeek,
    /// PEEK is not allowed on the final token.
    PeekOnFinalToken,
    /// PEEK may not directly follow PEEK.
    PeekAfterPeek,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            Constraint::AdvanceFinalNeedsEmptyStack => {
                "ADVANCE on the final token requires an empty stack"
            }
            Constraint::ReduceNeedsStack => "POP/PEEK require a non-empty stack",
            Constraint::PushOncePerToken => "PUSH already taken at this token",
            Constraint::PushAfterReduce => "PUSH cannot directly follow POP or PEEK",
            Constraint::PopAfterPeek => "POP cannot directly follow PEEK",
            Constraint::PeekOnFinalToken => "PEEK cannot be taken on the final token",
            Constraint::PeekAfterPeek => "PEEK cannot directly follow PEEK",
        };
        f.write_str(text)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TransitionError {
    #[error("no actions are valid in a terminal state")]
    Terminal,
    #[error("{action} is invalid: {constraint}")]
    Invalid {
        action: Action,
        constraint: Constraint,
    },
    #[error("step {step}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<TransitionError>,
    },
    #[error("{emitted} mentions emitted but {decisions} cluster decisions supplied")]
    DecisionCount { emitted: usize, decisions: usize },
    #[error("step {step}: cluster decision links to cluster {cluster} but only {available} exist")]
    BadDecision {
        step: usize,
        cluster: usize,
        available: usize,
    },
    #[error("action sequence stopped before the final state")]
    Incomplete,
}

/// A span proposed by POP or PEEK.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MentionEvent {
    pub span: MentionSpan,
    pub action: Action,
}

/// Stack of left boundaries, buffer index and action history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionState {
    stack: Vec<usize>,
    index: usize,
    history: Vec<Action>,
    pushed_at_current: bool,
    num_tokens: usize,
}

impl TransitionState {
    pub fn initial(num_tokens: usize) -> Self {
        TransitionState {
            stack: Vec::new(),
            index: 0,
            history: Vec::new(),
            pushed_at_current: false,
            num_tokens,
        }
    }

    pub fn stack(&self) -> &[usize] {
        &self.stack
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn history(&self) -> &[Action] {
        &self.history
    }

    pub fn pushed_at_current(&self) -> bool {
        self.pushed_at_current
    }

    pub fn num_tokens(&self) -> usize {
        self.num_tokens
    }

    pub fn is_terminal(&self) -> bool {
        self.index == self.num_tokens && self.stack.is_empty()
    }

    fn on_final_token(&self) -> bool {
        self.index + 1 == self.num_tokens
    }

    /// First constraint that forbids `action`, if any.
    pub fn violated_constraint(&self, action: Action) -> Option<Constraint> {
        let last = self.history.last().copied();
        let stack_empty = self.stack.is_empty();
        match action {
            Action::Advance => (self.on_final_token() && !stack_empty)
                .then_some(Constraint::AdvanceFinalNeedsEmptyStack),
            Action::Push => {
                if self.pushed_at_current {
                    Some(Constraint::PushOncePerToken)
                } else if matches!(last, Some(Action::Pop | Action::Peek)) {
                    Some(Constraint::PushAfterReduce)
                } else {
                    None
                }
            }
            Action::Pop => {
                if stack_empty {
                    Some(Constraint::ReduceNeedsStack)
                } else if last == Some(Action::Peek) {
                    Some(Constraint::PopAfterPeek)
                } else {
                    None
                }
            }
            Action::Peek => {
                if stack_empty {
                    Some(Constraint::ReduceNeedsStack)
                } else if self.on_final_token() {
                    Some(Constraint::PeekOnFinalToken)
                } else if last == Some(Action::Peek) {
                    Some(Constraint::PeekAfterPeek)
                } else {
                    None
                }
            }
        }
    }

    pub fn valid_actions(&self) -> Result<ActionSet, TransitionError> {
        if self.index >= self.num_tokens {
            return Err(TransitionError::Terminal);
        }
        Ok(Action::ALL
            .into_iter()
            .filter(|a| self.violated_constraint(*a).is_none())
            .collect())
    }

    /// Applies `action` in place, returning the emitted mention for POP/PEEK.
    pub fn apply(&mut self, action: Action) -> Result<Option<MentionEvent>, TransitionError> {
        if self.index >= self.num_tokens {
            return Err(TransitionError::Terminal);
        }
        if let Some(constraint) = self.violated_constraint(action) {
            return Err(TransitionError::Invalid { action, constraint });
        }
        let event = match action {
            Action::Push => {
                self.stack.push(self.index);
                self.pushed_at_current = true;
                None
            }
            Action::Advance => {
                self.index += 1;
                self.pushed_at_current = false;
                None
            }
            Action::Pop => {
                let left = self.stack.pop().expect("checked non-empty");
                Some(MentionEvent {
                    span: MentionSpan::new(left, self.index),
                    action,
                })
            }
            Action::Peek => {
                let left = *self.stack.last().expect("checked non-empty");
                Some(MentionEvent {
                    span: MentionSpan::new(left, self.index),
                    action,
                })
            }
        };
        self.history.push(action);
        Ok(event)
    }

    /// Value-returning variant of [`apply`](Self::apply).
    pub fn applied(
        &self,
        action: Action,
    ) -> Result<(TransitionState, Option<MentionEvent>), TransitionError> {
        let mut next = self.clone();
        let event = next.apply(action)?;
        Ok((next, event))
    }
}

/// Replays an action sequence with explicit cluster decisions, one per
/// emitted mention. Singletons are kept.
pub fn replay(
    doc: &Document,
    actions: &[Action],
    decisions: &[CorefChoice],
) -> Result<ClusterSet, TransitionError> {
    let mut state = TransitionState::initial(doc.num_tokens());
    let mut memory = ClusterMemory::new(0);
    let mut decisions_iter = decisions.iter();
    let mut emitted = 0;
    for (step, action) in actions.iter().enumerate() {
        let event = state.apply(*action).map_err(|e| TransitionError::AtStep {
            step,
            source: Box::new(e),
        })?;
        if let Some(event) = event {
            emitted += 1;
            let choice = decisions_iter
                .next()
                .ok_or(TransitionError::DecisionCount {
                    emitted,
                    decisions: decisions.len(),
                })?;
            if let CorefChoice::Link(cluster) = *choice {
                if cluster >= memory.len() {
                    return Err(TransitionError::BadDecision {
                        step,
                        cluster,
                        available: memory.len(),
                    });
                }
            }
            memory.apply_choice(*choice, event.span, &[]);
        }
    }
    if emitted != decisions.len() {
        return Err(TransitionError::DecisionCount {
            emitted,
            decisions: decisions.len(),
        });
    }
    if !state.is_terminal() {
        return Err(TransitionError::Incomplete);
    }
    Ok(memory.cluster_set(true))
}

/// One line per action; POP/PEEK lines carry the emitted span.
pub fn format_trace(actions: &[Action], num_tokens: usize) -> Result<String, TransitionError> {
    let mut state = TransitionState::initial(num_tokens);
    let mut out = String::new();
    for (step, action) in actions.iter().enumerate() {
        let event = state.apply(*action).map_err(|e| TransitionError::AtStep {
            step,
            source: Box::new(e),
        })?;
        match event {
            Some(e) => out.push_str(&format!("{} {} {}\n", action, e.span.start, e.span.end)),
            None => out.push_str(&format!("{action}\n")),
        }
    }
    Ok(out)
}
