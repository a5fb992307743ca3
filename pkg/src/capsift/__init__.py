"""capsift: caption-driven image triage at desk scale.

Captions images with a small attention LSTM, scores the captions against
natural-language search tasks, prioritizes images for transmission over a
simulated constrained downlink, and improves the captioner over time through
a reviewed-annotation aggregation and retraining pipeline.
"""

__version__ = "0.1.0"
