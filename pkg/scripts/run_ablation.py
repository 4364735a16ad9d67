#!/usr/bin/env python3
"""Five-variant ablation (granularity/activation/dropout) at one fixed rank."""
import sys
from pathlib import Path

from ceralab.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "ablation.json"
sys.exit(main(["ablate", "--config", str(CONFIG), *sys.argv[1:]]))
