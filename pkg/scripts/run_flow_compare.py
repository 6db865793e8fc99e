"""Run spectral flow comparisons and invariant suites from the project checkout."""
import sys
from pathlib import Path

# Add project root to path
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from sflow.scripts.flow_cli import main


if __name__ == "__main__":
    sys.exit(main())
