"""Multimodal wearable sensing for exoskeleton gait assistance: synthetic
data, causal signal conditioning, a small numpy neural-network engine, task
decoders, a streaming runtime, and evaluation tooling."""

__version__ = "0.1.0"
