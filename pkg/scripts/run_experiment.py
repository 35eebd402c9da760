"""
Script for running the federated hyperparameter transfer experiment.

To run both phases with the default configuration::

    python scripts/run_experiment.py full \
        --config config/experiment.json \
        --out out/

To run only the per-task search, or only the federated comparison on top of an
earlier search saved in `out/`::

    python scripts/run_experiment.py phase1 --out out/
    python scripts/run_experiment.py phase2 --out out/

To print the saved comparison table again::

    python scripts/run_experiment.py report --out out/ --format markdown

Append `--seed N` to any command to override the master seed and `--verbose` for
per-trial and per-client logging.
"""

import sys

from fedhpo import cli

if __name__ == "__main__":
    sys.exit(cli.main())
