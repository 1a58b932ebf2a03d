"""Multi-agent hallucination mitigation pipeline with OVON envelopes and THS scoring."""

__version__ = "0.1.0"
