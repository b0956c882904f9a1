"""Desk-scale adversarial-training laboratory.

Everything runs on plain numpy arrays; no GPU, no autograd framework. The
modules mirror the workflow: data -> net/losses -> attacks -> train ->
analysis, with checkpoint/config/plots/cli around them.
"""

__version__ = "0.1.0"
