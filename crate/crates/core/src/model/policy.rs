use std::collections::HashMap;
use std::sync::Arc;

use super::Model;
use crate::episodes::{Policy, PolicyInput};
use crate::error::Result;
use crate::sensors::Image;
use crate::world::Action;

/// Greedy model policy. Image vectors are memoized per frame, which is
/// sound because parameters do not change during a rollout.
pub struct ModelPolicy<'a> {
    model: &'a Model,
    vectors: HashMap<*const Image, (Arc<Image>, Vec<f64>)>,
    /// Decoded non-action tokens replaced by Stop.
    pub non_action: usize,
}

impl<'a> ModelPolicy<'a> {
    pub fn new(model: &'a Model) -> Self {
        ModelPolicy {
            model,
            vectors: HashMap::new(),
            non_action: 0,
        }
    }

    /// Drops memoized vectors; call between rollouts to bound memory.
    pub fn reset(&mut self) {
        self.vectors.clear();
    }

    fn vectors_for(&mut self, images: &[&Arc<Image>]) -> Result<Vec<Vec<f64>>> {
        let missing: Vec<&Arc<Image>> = images
            .iter()
            .copied()
            .filter(|i| !self.vectors.contains_key(&Arc::as_ptr(i)))
            .collect();
        let mut fresh: Vec<&Arc<Image>> = Vec::new();
        for m in missing {
            if !fresh.iter().any(|f| Arc::ptr_eq(f, m)) {
                fresh.push(m);
            }
        }
        let encoded = self
            .model
            .encode_images(&fresh.iter().map(|i| i.as_ref()).collect::<Vec<_>>())?;
        for (img, v) in fresh.into_iter().zip(encoded) {
            self.vectors.insert(Arc::as_ptr(img), (img.clone(), v));
        }
        Ok(images
            .iter()
            .map(|i| self.vectors[&Arc::as_ptr(i)].1.clone())
            .collect())
    }
}

impl Policy for ModelPolicy<'_> {
    fn act(&mut self, input: &PolicyInput, _k: usize) -> Result<Vec<Action>> {
        let images: Vec<&Arc<Image>> = input.history.iter().chain(std::iter::once(input.current)).collect();
        let vecs = self.vectors_for(&images)?;
        let out = self.model.decode_actions(input.prompt_tokens, &vecs)?;
        self.non_action += out.non_action;
        Ok(out.actions)
    }
}
