//! Cache of gather plans. Plans depend only on shapes and config, so each
//! distinct (kind, key) pair is built once and shared across graph runs.

use std::collections::HashMap;
use std::sync::Arc;

use swintempo_autograd::GatherPlan;

#[derive(Default)]
pub struct PlanCache {
    map: HashMap<(&'static str, Vec<usize>), Arc<GatherPlan>>,
}

impl PlanCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_build(
        &mut self,
        kind: &'static str,
        key: &[usize],
        build: impl FnOnce() -> GatherPlan,
    ) -> Arc<GatherPlan> {
        self.map
            .entry((kind, key.to_vec()))
            .or_insert_with(|| Arc::new(build()))
            .clone()
    }
}
