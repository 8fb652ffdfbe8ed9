"""Write a small dataset to disk and run every stage through the command-line entry point."""
import json
import sys
import tempfile
from pathlib import Path

from trajforge import synth
from trajforge.cli import main
from trajforge.model import write_dataset

tmp = Path(tempfile.mkdtemp())
manifest = write_dataset("demo", synth.pipeline_fixture(tasks=3, per_task=4), tmp / "data")

code = main(["--manifest", str(manifest), "--out", str(tmp / "run"), "--workers", "1", "pipeline"])
print("exit code", code)
for p in sorted((tmp / "run").glob("*")):
    print(" ", p.relative_to(tmp / "run"))

print(json.dumps(json.loads((tmp / "run" / "representatives.json").read_text()), indent=2))
sys.exit(code)
