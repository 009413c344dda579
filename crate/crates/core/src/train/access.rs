use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::data::{prev_interactions_at, Dataset, ItemId, PrevInteractionVector, TopicalDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Target,
    Source,
    Interactions,
}

/// One entry of the data-access log. Consecutive duplicates are collapsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Access {
    Read { field: Field, interval: usize },
    /// Top-N lists for `interval` were fixed.
    Predict { interval: usize },
    /// Ground truth of `interval` was read for scoring.
    Truth { interval: usize },
}

/// Dataset view that optionally records which intervals are touched.
pub struct Observed<'a> {
    dataset: &'a Dataset,
    log: Option<RefCell<Vec<Access>>>,
}

impl<'a> Observed<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        Observed { dataset, log: None }
    }

    pub fn enable_log(&mut self) {
        if self.log.is_none() {
            self.log = Some(RefCell::new(Vec::new()));
        }
    }

    pub fn log(&self) -> Vec<Access> {
        self.log.as_ref().map(|l| l.borrow().clone()).unwrap_or_default()
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn note(&self, access: Access) {
        if let Some(log) = &self.log {
            let mut log = log.borrow_mut();
            if log.last() != Some(&access) {
                log.push(access);
            }
        }
    }

    pub fn note_read(&self, field: Field, interval: usize) {
        self.note(Access::Read { field, interval });
    }

    pub fn target(&self, p: usize, t: usize) -> &'a TopicalDistribution {
        self.note_read(Field::Target, t);
        &self.dataset.users[p].target[t]
    }

    pub fn source(&self, p: usize, t: usize) -> Option<&'a TopicalDistribution> {
        self.note_read(Field::Source, t);
        self.dataset.users[p].source_at(t)
    }

    /// Interactions over intervals `< t`.
    pub fn prev(&self, p: usize, t: usize) -> PrevInteractionVector {
        if t > 0 {
            self.note_read(Field::Interactions, t - 1);
        }
        prev_interactions_at(self.dataset, p, t)
    }

    pub fn truth(&self, p: usize, s: usize) -> &'a [ItemId] {
        self.note(Access::Truth { interval: s });
        &self.dataset.users[p].interactions[s]
    }
}
