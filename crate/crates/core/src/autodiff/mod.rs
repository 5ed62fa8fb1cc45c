//! Dense reverse-mode automatic differentiation over `f64` tensors.

mod check;
mod graph;
mod optim;
mod tensor;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use check::{check_graph, finite_diff_check};
pub use graph::{Gradients, Graph, NodeId, BCE_EPS, LOG_SIGMA_MAX, LOG_SIGMA_MIN};
pub use optim::{warmup_lr, AdamHyper, Moments, OptimState};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Named parameter tensors.
pub type ParamStore = BTreeMap<String, Tensor>;

/// Serialized parameters plus optimizer progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub optimizer: Option<OptimState>,
    pub step: u64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        for (name, t) in &c.params {
            if t.len() != t.shape().iter().product::<usize>() || !t.is_finite() {
                return Err(Error::Format(format!("bad parameter tensor {name}")));
            }
        }
        Ok(c)
    }
}

/// Maps parameter names to graph leaves for one define-by-run pass.
#[derive(Debug, Default)]
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
}

impl Bound {
    /// Adds every parameter as a leaf; tracked unless `frozen` names it.
    pub fn bind(g: &mut Graph, params: &ParamStore, frozen: &[&str]) -> Result<Self> {
        let mut ids = BTreeMap::new();
        for (name, t) in params {
            let id = if frozen.contains(&name.as_str()) {
                g.constant(t.clone())?
            } else {
                g.param(t.clone())?
            };
            ids.insert(name.clone(), id);
        }
        Ok(Self { ids })
    }

    pub fn id(&self, name: &str) -> NodeId {
        self.ids[name]
    }

    /// Gradients keyed by parameter name, skipping `frozen`.
    pub fn gradients(&self, grads: &Gradients, frozen: &[&str]) -> ParamStore {
        self.ids
            .iter()
            .filter(|(n, _)| !frozen.contains(&n.as_str()))
            .map(|(n, &id)| (n.clone(), grads.wrt(id)))
            .collect()
    }
}
