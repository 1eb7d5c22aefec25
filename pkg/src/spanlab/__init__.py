"""spanlab: a desk-scale laboratory for span-masked language model pretraining.

Everything runs on numpy with exact, handwritten reverse-mode gradients so
that every training mechanism (geometric span masking, the span boundary
objective, next-sentence prediction, span-selection fine-tuning) can be
verified against independent oracles: analytic distributions, finite
differences, and structural invariants.
"""

__version__ = "0.1.0"
