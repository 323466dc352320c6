use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::flat::OutputSample2D;
use crate::models::Input2D;

/// Window length of the planar model.
pub const WINDOW: usize = 3;

/// The last `WINDOW` measurements and the last `WINDOW - 1` commands actually sent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControllerHistory {
    outputs: VecDeque<OutputSample2D>,
    inputs: VecDeque<Input2D>,
}

impl ControllerHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a full history directly (oldest first).
    pub fn from_parts(outputs: [OutputSample2D; WINDOW], inputs: [Input2D; WINDOW - 1]) -> Self {
        Self { outputs: outputs.into_iter().collect(), inputs: inputs.into_iter().collect() }
    }

    pub fn push_output(&mut self, y: OutputSample2D) {
        if self.outputs.len() == WINDOW {
            self.outputs.pop_front();
        }
        self.outputs.push_back(y);
    }

    pub fn push_input(&mut self, u: Input2D) {
        if self.inputs.len() == WINDOW - 1 {
            self.inputs.pop_front();
        }
        self.inputs.push_back(u);
    }

    pub fn is_full(&self) -> bool {
        self.outputs.len() == WINDOW && self.inputs.len() == WINDOW - 1
    }

    pub fn output_count(&self) -> usize {
        self.outputs.len()
    }

    /// Measurements oldest first; the last entry is the current step.
    pub fn outputs(&self) -> Result<[OutputSample2D; WINDOW]> {
        if self.outputs.len() < WINDOW {
            return Err(Error::HistoryIncomplete);
        }
        Ok([self.outputs[0], self.outputs[1], self.outputs[2]])
    }

    pub fn inputs(&self) -> Result<[Input2D; WINDOW - 1]> {
        if self.inputs.len() < WINDOW - 1 {
            return Err(Error::HistoryIncomplete);
        }
        Ok([self.inputs[0], self.inputs[1]])
    }

    pub fn latest_output(&self) -> Option<OutputSample2D> {
        self.outputs.back().copied()
    }
}
