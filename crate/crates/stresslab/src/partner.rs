use diffcore::SeededRng;
use megsynth::TaskType;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

/// Within-task derangement `π` pairing each context with another context
/// of the same task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartnerMap {
    pub partner: Vec<usize>,
    pub seed: u64,
}

impl PartnerMap {
    /// Shuffles each task group with its own seeded stream and maps every
    /// member to the next one in the shuffled cycle.
    pub fn within_tasks(tasks: &[TaskType], seed: u64) -> Result<Self> {
        let mut partner = vec![usize::MAX; tasks.len()];
        for task in TaskType::ALL {
            let mut group: Vec<usize> = (0..tasks.len()).filter(|&i| tasks[i] == task).collect();
            if group.is_empty() {
                continue;
            }
            if group.len() < 2 {
                return Err(EvalError::Protocol(format!(
                    "task {} has a single context and no partner",
                    task.name()
                )));
            }
            SeededRng::named(seed, &format!("stresslab/partner/{}", task.name())).shuffle(&mut group);
            for k in 0..group.len() {
                partner[group[k]] = group[(k + 1) % group.len()];
            }
        }
        Ok(Self { partner, seed })
    }

    /// Checks that `π` is a permutation without fixed points that never
    /// crosses tasks.
    pub fn validate(&self, tasks: &[TaskType]) -> Result<()> {
        let n = tasks.len();
        if self.partner.len() != n {
            return Err(EvalError::Protocol(format!(
                "partner map covers {} of {n} contexts",
                self.partner.len()
            )));
        }
        let mut seen = vec![false; n];
        for (i, &j) in self.partner.iter().enumerate() {
            if j >= n || seen[j] {
                return Err(EvalError::Protocol(format!("partner map is not a permutation at {i}")));
            }
            seen[j] = true;
            if j == i {
                return Err(EvalError::Protocol(format!("context {i} is its own partner")));
            }
            if tasks[j] != tasks[i] {
                return Err(EvalError::Protocol(format!("context {i} is paired across tasks")));
            }
        }
        Ok(())
    }
}
