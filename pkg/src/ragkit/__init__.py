"""ragkit: retrieval-augmented generation engine with a single-pass baseline
pipeline, an iterative agentic pipeline, and an evaluation harness."""

__version__ = "0.1.0"
