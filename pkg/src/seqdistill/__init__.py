"""Data-curation toolkit for sequence-level distillation pipelines.

Builds synthetic SFT corpora from teacher/student model pairs: candidate
sampling with per-token logprobs, sentence-level likelihood analytics,
divergence-aware candidate selection, quality filtering, two-stage
temperature-scheduled dataset construction, and mixed-policy (student prefix +
teacher continuation) example emission. A fully enumerable toy LM backs exact
checks of the sequence-KL math the pipeline relies on.
"""

__version__ = "0.1.0"
