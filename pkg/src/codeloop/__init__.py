"""Tool-augmented reasoning: streamed code execution inside a model's
thinking, a multi-role refinement workflow, and a benchmark harness."""

__version__ = "0.1.0"
