"""Interpretability workbench for multilingual language-model analysis.

Logit-lens language tracking, neuron specialization (activation frequency and
activation strength), code-mixed corpus generation and the statistics used to
compare them, all runnable against a small instrumented transformer.
"""

__version__ = "0.1.0"
