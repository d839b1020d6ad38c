"""Context-aware seq2seq chatbot: a dialogue-act CNN supplies a latent
conversation-context vector fused into a bidirectional-LSTM attention
decoder, with baselines, beam decoding, corpus pipelines, evaluation
metrics, and a chat service."""

__version__ = "0.1.0"
