"""The eulalpha command line, driven from Python.

Each command prints a report ending in RESULT: PASS or FAIL and writes CSV
tables plus a text summary to the output directory.
"""

import os
import tempfile
from pathlib import Path

from eulalpha import cli

out = Path(tempfile.mkdtemp(prefix="eulalpha_"))
os.environ["EAF_OUTPUT_DIR"] = str(out)

cli.main(["suggest-params"])
cli.main(["check-params", "--config", str(out / "params.cfg")])
cli.main(["check-params", "--params", str(out / "params.cfg"), "--beta", "2"])
cli.main(["decompose-stress", "--samples", "1000"])
cli.main(["verify-pipes"])
cli.main(["glue", "--resolution", "128"])
cli.main(["conserve", "--init", "taylor-green", "--resolution", "64", "--dt", "0.01", "--t-final", "0.5"])

print("\nartifacts in", out)
for f in sorted(out.iterdir()):
    print("  ", f.name)
