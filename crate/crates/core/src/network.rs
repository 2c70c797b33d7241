//! Synchronous rounds of the estimator over a set of observers.

use crate::batch::{HistoryRecord, HistoryStep, Prior};
use crate::error::Result;
use crate::estimator::{
    broadcast, step, EstimatorState, NeighborMessage, ObserverId, StepWeights, SttParams,
};
use crate::geometry::{PseudoMeasurement, TransitionModel};

/// All observers' estimator states plus, optionally, the per-observer
/// histories consumed by the batch oracle.
#[derive(Clone, Debug)]
pub struct SttNetwork {
    model: TransitionModel,
    params: SttParams,
    states: Vec<EstimatorState>,
    histories: Option<Vec<HistoryRecord>>,
}

impl SttNetwork {
    pub fn new(model: TransitionModel, params: SttParams, initial: Vec<EstimatorState>) -> Self {
        Self {
            model,
            params,
            states: initial,
            histories: None,
        }
    }

    /// Also record every observer's inputs, with the initial states as priors.
    pub fn recording(mut self) -> Self {
        let histories = self
            .states
            .iter()
            .enumerate()
            .map(|(i, s)| {
                HistoryRecord::new(i, self.model, self.params).with_prior(Prior {
                    x0: s.x_hat,
                    m0: s.m_hat,
                })
            })
            .collect();
        self.histories = Some(histories);
        self
    }

    pub fn states(&self) -> &[EstimatorState] {
        &self.states
    }

    pub fn histories(&self) -> Option<&[HistoryRecord]> {
        self.histories.as_deref()
    }

    pub fn into_histories(self) -> Option<Vec<HistoryRecord>> {
        self.histories
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// One round. `inbox[i]` lists the observers whose broadcast reached
    /// observer `i` this round; weights are uniform over `{i} ∪ inbox[i]`.
    ///
    /// Returns the messages broadcast this round, indexed by sender.
    pub fn round(
        &mut self,
        measurements: &[PseudoMeasurement],
        inbox: &[Vec<ObserverId>],
    ) -> Result<Vec<NeighborMessage>> {
        assert_eq!(measurements.len(), self.states.len());
        assert_eq!(inbox.len(), self.states.len());
        let sent: Vec<NeighborMessage> = self
            .states
            .iter()
            .zip(measurements)
            .enumerate()
            .map(|(i, (s, m))| broadcast(i, s, &self.model, m))
            .collect();

        let (model, params) = (&self.model, &self.params);
        let outcomes: Vec<Result<(EstimatorState, Vec<NeighborMessage>, StepWeights)>> = self
            .states
            .iter()
            .enumerate()
            .map(|(i, state)| {
                let received: Vec<NeighborMessage> = inbox[i].iter().map(|&j| sent[j]).collect();
                let weights = StepWeights::uniform(i, &inbox[i]);
                let (next, _) = step(
                    i,
                    state,
                    model,
                    params,
                    &measurements[i],
                    &received,
                    &weights,
                )?;
                Ok((next, received, weights))
            })
            .collect();

        let mut next_states = Vec::with_capacity(self.states.len());
        for (i, outcome) in outcomes.into_iter().enumerate() {
            let (next, received, weights) = outcome?;
            if let Some(histories) = &mut self.histories {
                histories[i].push(HistoryStep {
                    own: sent[i],
                    neighbors: received,
                    weights,
                });
            }
            next_states.push(next);
        }
        self.states = next_states;
        Ok(sent)
    }
}
