"""Regenerate every bundled figure and table plan into ./results.

Full size this takes roughly 40 minutes on a single core; pass
``--trials 20`` for a quick look.
"""
import sys

from emimaging.scene import bundled

import run_experiment

if __name__ == "__main__":
    plans = [p for p in bundled("plans") if p != "smoke"]
    run_experiment.main(plans + sys.argv[1:])
