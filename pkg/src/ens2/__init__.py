"""ens2: a meta-AutoML harness.

Runs several diverse pipeline-search workers in parallel under a time
budget, collects the pipelines they discover together with cross-validation
scores and out-of-fold predictions, and produces final predictions either
by top-K majority voting or by a softmax stacker trained on the out-of-fold
predictions.  Ships with the benchmark statistics (fractional ranks,
Wilcoxon signed-rank, accuracy correlation) used to compare systems.
"""

__version__ = "0.1.0"
