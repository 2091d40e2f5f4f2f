//! Sender backed by a chat-completion provider.

use std::sync::Arc;

use crate::agents::{AgentError, Decision, SenderAgent};
use crate::game::GameConfig;
use crate::gateway::{ExchangeContext, Gateway, ProviderProfile, TranscriptSink, Verdict};
use crate::prompting::{
    aggregate_self_consistency, parse_amount, Objective, ObservationToggles, ReasoningStrategy, TemplateSet,
};
use crate::observation::SenderObservation;

/// Each round starts from a freshly composed prompt; no conversation history
/// is carried between rounds.
pub struct LlmSender {
    gateway: Arc<Gateway>,
    profile: ProviderProfile,
    templates: Arc<TemplateSet>,
    sink: Arc<dyn TranscriptSink>,
    objective: Objective,
    strategy: ReasoningStrategy,
    toggles: ObservationToggles,
    config: GameConfig,
    game_id: String,
    seed: u64,
}

impl LlmSender {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        gateway: Arc<Gateway>,
        profile: ProviderProfile,
        templates: Arc<TemplateSet>,
        sink: Arc<dyn TranscriptSink>,
        objective: Objective,
        strategy: ReasoningStrategy,
        toggles: ObservationToggles,
        config: GameConfig,
        game_id: impl Into<String>,
    ) -> Self {
        Self {
            gateway,
            profile,
            templates,
            sink,
            objective,
            strategy,
            toggles,
            config,
            game_id: game_id.into(),
            seed: 0,
        }
    }
}

impl SenderAgent for LlmSender {
    fn descriptor(&self) -> String {
        format!("llm:{}({})", self.profile.name, self.profile.model_id)
    }

    fn start_game(&mut self, seed: u64) {
        self.seed = seed;
    }

    fn decide(&mut self, obs: &SenderObservation) -> Result<Decision, AgentError> {
        let bundle = self
            .templates
            .compose(self.objective, self.strategy, &self.toggles, obs, &self.config)
            .map_err(|e| AgentError::Composition(e.to_string()))?;
        let reminder = self.templates.validity_reminder();
        let config = self.config;

        let mut amounts = Vec::new();
        let mut exchange_ids = Vec::new();
        for sample_index in 0..self.strategy.samples() {
            let ctx = ExchangeContext {
                game_id: self.game_id.clone(),
                round_index: obs.round_index,
                sample_index,
                seed: self.seed,
            };
            let (exchange, amount) = self
                .gateway
                .complete_validated(
                    bundle.messages.clone(),
                    &self.profile,
                    &ctx,
                    self.sink.as_ref(),
                    &reminder,
                    |text| match parse_amount(text, &config) {
                        Ok(v) => Verdict::Accept(v),
                        Err(e) if e.is_validity() => Verdict::Remind(e.to_string()),
                        Err(e) => Verdict::Retry(e.to_string()),
                    },
                )
                .map_err(|e| AgentError::Provider(e.to_string()))?;
            exchange_ids.extend(exchange.exchange_ids);
            amounts.push(amount);
        }
        let amount = if amounts.len() == 1 {
            amounts[0]
        } else {
            aggregate_self_consistency(&amounts, config.amount_granularity)
                .map_err(|e| AgentError::Provider(e.to_string()))?
        };
        Ok(Decision { amount, exchange_ids })
    }
}
