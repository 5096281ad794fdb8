"""PSO-tuned attention-augmented CNN-LSTM for short-term load forecasting."""

__version__ = "0.1.0"
