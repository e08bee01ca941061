"""Run one of the harness experiments from a YAML config, e.g.

    python scripts/run_experiment.py instability configs/instability.yaml
"""
import sys

from meanfield.cli import main

if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    sys.exit(main(["experiment", sys.argv[1], "--config", sys.argv[2]]))
