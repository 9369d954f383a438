use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use super::qp::nonneg_qp;
use super::Strategy;
use crate::autodiff::Graph;
use crate::data::{batch_gradient, Sample};
use crate::error::{Error, Result};
use crate::models::{ForwardMode, Network};
use crate::seed::rng_for;

const QP_MAX_ITER: usize = 500;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GemProjection {
    pub grad: Vec<f64>,
    /// False when `g` already satisfied every constraint and was returned as is.
    pub projected: bool,
    /// False when the dual solve missed its tolerance and `g` was returned unchanged.
    pub converged: bool,
    pub kkt_residual: f64,
}

/// Projects `g` onto `{h : <h, g_k> >= 0 for all k}` in the Euclidean norm,
/// through the dual `min_{v>=0} 1/2 v'GG'v + (Gg)'v`, `h = G'v + g`.
pub fn gem_project(g: &[f64], memories: &[Vec<f64>]) -> Result<GemProjection> {
    for m in memories {
        if m.len() != g.len() {
            return Err(Error::Shape(format!(
                "memory gradient of length {} vs current gradient {}",
                m.len(),
                g.len()
            )));
        }
    }
    if g.iter()
        .chain(memories.iter().flatten())
        .any(|x| !x.is_finite())
    {
        return Err(Error::NonFinite("gem_project input"));
    }
    let q: Vec<f64> = memories.iter().map(|m| dot(m, g)).collect();
    if q.iter().all(|&x| x >= 0.0) {
        return Ok(GemProjection {
            grad: g.to_vec(),
            projected: false,
            converged: true,
            kkt_residual: 0.0,
        });
    }
    let k = memories.len();
    let gram = DMatrix::from_fn(k, k, |i, j| dot(&memories[i], &memories[j]));
    let sol = nonneg_qp(&gram, &q, QP_MAX_ITER, 1e-14);
    if !sol.converged {
        log::warn!(
            "GEM dual solve stopped at KKT residual {:.3e}; using the raw gradient",
            sol.kkt_residual
        );
        return Ok(GemProjection {
            grad: g.to_vec(),
            projected: false,
            converged: false,
            kkt_residual: sol.kkt_residual,
        });
    }
    let mut out = g.to_vec();
    for (m, v) in memories.iter().zip(&sol.v) {
        if *v != 0.0 {
            for (o, x) in out.iter_mut().zip(m) {
                *o += v * x;
            }
        }
    }
    Ok(GemProjection {
        grad: out,
        projected: true,
        converged: true,
        kkt_residual: sol.kkt_residual,
    })
}

/// Gradient episodic memory with a fixed total sample budget split evenly
/// over every task of the stream.
#[derive(Debug)]
pub struct Gem {
    pub budget: usize,
    quota: usize,
    seed: u64,
    memories: Vec<Vec<Sample>>,
    pub projections: usize,
    pub fallbacks: usize,
    pub steps: usize,
}

impl Gem {
    pub fn new(budget: usize, n_tasks: usize, seed: u64) -> Result<Self> {
        let quota = budget / n_tasks.max(1);
        if quota == 0 {
            return Err(Error::config(
                "gem.buffer",
                format!("budget {budget} leaves no room per task for {n_tasks} tasks"),
            ));
        }
        Ok(Gem {
            budget,
            quota,
            seed,
            memories: Vec::new(),
            projections: 0,
            fallbacks: 0,
            steps: 0,
        })
    }

    pub fn quota(&self) -> usize {
        self.quota
    }

    pub fn memory(&self, task: usize) -> Option<&[Sample]> {
        self.memories.get(task).map(Vec::as_slice)
    }
}

impl Strategy for Gem {
    fn name(&self) -> &'static str {
        "gem"
    }

    fn label(&self) -> String {
        format!("GEM-{}", self.budget)
    }

    fn post_batch(
        &mut self,
        net: &mut dyn Network,
        g: &mut Graph,
        task: usize,
        grad: &mut [f64],
    ) -> Result<()> {
        self.steps += 1;
        let past = self.memories.len().min(task);
        if past == 0 {
            return Ok(());
        }
        let idx = net.trainable(task);
        let mode = ForwardMode::Train {
            task,
            update_stats: false,
        };
        let mut refs = Vec::with_capacity(past);
        for mem in &self.memories[..past] {
            refs.push(batch_gradient(net, g, mem, mode, &idx)?.1);
        }
        let p = gem_project(grad, &refs)?;
        if !p.converged {
            self.fallbacks += 1;
        }
        if p.projected {
            self.projections += 1;
            grad.copy_from_slice(&p.grad);
        }
        Ok(())
    }

    fn after_task(
        &mut self,
        _net: &mut dyn Network,
        _g: &mut Graph,
        task: usize,
        train: &[Sample],
    ) -> Result<()> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(self.seed, &format!("gem/memory/t{task}")));
        self.memories.push(
            order
                .into_iter()
                .take(self.quota)
                .map(|i| train[i].clone())
                .collect(),
        );
        Ok(())
    }

    fn buffer_bytes(&self) -> usize {
        self.memories.iter().flatten().map(Sample::byte_size).sum()
    }

    fn state_json(&self) -> serde_json::Value {
        serde_json::json!({
            "budget": self.budget,
            "quota_per_task": self.quota,
            "stored_per_task": self.memories.iter().map(Vec::len).collect::<Vec<_>>(),
            "steps": self.steps,
            "projections": self.projections,
            "fallbacks": self.fallbacks,
        })
    }

    fn warnings(&self) -> Vec<String> {
        if self.fallbacks > 0 {
            vec![format!(
                "GEM fell back to the raw gradient on {} steps",
                self.fallbacks
            )]
        } else {
            Vec::new()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feasible_gradient_is_untouched() {
        let p = gem_project(&[1.0, 0.0], &[vec![0.0, 1.0]]).unwrap();
        assert!(!p.projected);
        assert_eq!(p.grad, vec![1.0, 0.0]);
    }

    #[test]
    fn single_half_space() {
        let p = gem_project(&[1.0, -1.0], &[vec![0.0, 1.0]]).unwrap();
        assert!(p.projected);
        assert!((p.grad[0] - 1.0).abs() < 1e-12 && p.grad[1].abs() < 1e-12);
    }

    #[test]
    fn quota_needs_room() {
        assert!(Gem::new(5, 6, 0).is_err());
        assert_eq!(Gem::new(128, 6, 0).unwrap().quota(), 21);
    }
}
