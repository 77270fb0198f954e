//! JSON description of a design-diversity world: inputs with their
//! probabilities, programs with failure indicators, and the two methodology
//! distributions to compare.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

use divlab::lm::LmWorld;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldFile {
    pub input_probs: Vec<f64>,
    /// failure[p][x] = 1 when program p fails on input x
    pub failure: Vec<Vec<u8>>,
    pub methodology_a: Vec<f64>,
    pub methodology_b: Vec<f64>,
}

impl WorldFile {
    pub fn load(path: &Path) -> Result<(LmWorld, Vec<f64>, Vec<f64>)> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading world {}", path.display()))?;
        let wf: WorldFile = serde_json::from_str(&text).context("parsing world JSON")?;
        let world = LmWorld {
            input_probs: wf.input_probs,
            failure: wf
                .failure
                .into_iter()
                .map(|row| row.into_iter().map(|b| b != 0).collect())
                .collect(),
        };
        world.validate()?;
        world.check_methodology(&wf.methodology_a)?;
        world.check_methodology(&wf.methodology_b)?;
        Ok((world, wf.methodology_a, wf.methodology_b))
    }
}
