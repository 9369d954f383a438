use rand::seq::SliceRandom;

use super::Strategy;
use crate::autodiff::Graph;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::models::Network;
use crate::seed::rng_for;

pub(crate) fn check_xi(xi: f64) -> Result<()> {
    if !(xi > 0.0 && xi <= 1.0) {
        return Err(Error::config(
            "nr.xi",
            format!("must be in (0, 1], got {xi}"),
        ));
    }
    Ok(())
}

/// `ceil(xi * |items|)` items of task `task`, uniformly without replacement.
pub fn nr_select<T: Clone>(items: &[T], xi: f64, seed: u64, task: usize) -> Result<Vec<T>> {
    check_xi(xi)?;
    // The slack keeps decimal ratios exact: 0.1 * 30 is 3.0000000000000004 in binary.
    let n = ((xi * items.len() as f64 - 1e-9).ceil().max(0.0) as usize).min(items.len());
    let mut rng = rng_for(seed, &format!("nr/select/t{task}"));
    let picked = rand::seq::index::sample(&mut rng, items.len(), n);
    let mut idx = picked.into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| items[i].clone()).collect())
}

/// Union of already-selected history with the current task's data, shuffled
/// by a stream derived from `(seed, task)`.
pub fn nr_mix_selected<T: Clone>(
    selected: &[Vec<T>],
    current: &[T],
    seed: u64,
    task: usize,
) -> Vec<T> {
    let mut out: Vec<T> = selected.iter().flatten().cloned().collect();
    out.extend_from_slice(current);
    out.shuffle(&mut rng_for(seed, &format!("nr/mix/t{task}")));
    out
}

/// `D'_t = xi (D_0, ..., D_{t-1}) ∪ D_t`: `history[k]` is task k's full training set.
pub fn nr_mix<T: Clone>(
    history: &[Vec<T>],
    current: &[T],
    xi: f64,
    seed: u64,
    task: usize,
) -> Result<Vec<T>> {
    let selected = history
        .iter()
        .enumerate()
        .map(|(k, d)| nr_select(d, xi, seed, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(nr_mix_selected(&selected, current, seed, task))
}

/// Naive rehearsal: keeps a `xi` fraction of every finished task and mixes
/// it into later training sets.
#[derive(Debug, Clone)]
pub struct NaiveRehearsal {
    pub xi: f64,
    seed: u64,
    buffer: Vec<Vec<Sample>>,
}

impl NaiveRehearsal {
    pub fn new(xi: f64, seed: u64) -> Result<Self> {
        check_xi(xi)?;
        Ok(NaiveRehearsal {
            xi,
            seed,
            buffer: Vec::new(),
        })
    }

    pub fn stored(&self) -> usize {
        self.buffer.iter().map(Vec::len).sum()
    }
}

impl Strategy for NaiveRehearsal {
    fn name(&self) -> &'static str {
        "nr"
    }

    fn label(&self) -> String {
        format!("NR(xi={})", self.xi)
    }

    fn augment_data(&mut self, task: usize, train: &[Sample]) -> Result<Vec<Sample>> {
        if self.buffer.len() != task {
            return Err(Error::InvalidArgument(format!(
                "rehearsal buffer holds {} tasks before task {task}",
                self.buffer.len()
            )));
        }
        Ok(nr_mix_selected(&self.buffer, train, self.seed, task))
    }

    fn after_task(
        &mut self,
        _net: &mut dyn Network,
        _g: &mut Graph,
        task: usize,
        train: &[Sample],
    ) -> Result<()> {
        self.buffer
            .push(nr_select(train, self.xi, self.seed, task)?);
        Ok(())
    }

    fn buffer_bytes(&self) -> usize {
        self.buffer.iter().flatten().map(Sample::byte_size).sum()
    }

    fn state_json(&self) -> serde_json::Value {
        serde_json::json!({
            "xi": self.xi,
            "stored_per_task": self.buffer.iter().map(Vec::len).collect::<Vec<_>>(),
        })
    }
}
