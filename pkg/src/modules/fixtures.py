"""Golden fixtures: digests and CSV heads of small, deterministic command runs."""

import hashlib
import logging
import tempfile
from contextlib import redirect_stdout
from io import StringIO
from pathlib import Path

from src.modules.commands import example1d, illustrate, sweeps
from src.modules.config import load_config
from src.modules.errors import FixtureMismatch
from src.modules.utils import read_json, write_json

logger = logging.getLogger(__name__)

MANIFEST = Path(__file__).resolve().parents[2] / "docs" / "fixtures" / "manifest.json"
HEAD_ROWS = 10

FIXTURES = [
    {"name": "illustrate", "command": "illustrate", "overrides": []},
    {"name": "example1d", "command": "example1d", "overrides": ["grid_points=81"]},
    {"name": "track-sweep", "command": "track-sweep", "overrides": ["q1_values=0.1,1", "sigma_sq_values=1", "mc_runs=2", "steps=20"], "variants": ["EKF", "DIEKF"]},
    {"name": "tdoa-sweep", "command": "tdoa-sweep", "overrides": ["q1_values=0.01", "q2_values=0.01", "mc_runs=2", "steps=20"], "variants": ["EKF", "DIEKF", "LS_DIEKF"]},
]


def _generate(fixture, out):
    command, overrides = fixture["command"], fixture["overrides"]
    if command == "illustrate":
        return illustrate.generate(load_config(None, overrides, "illustration"), out)
    if command == "example1d":
        return example1d.generate(load_config(None, overrides, "example1d"), out)
    name = "tracking" if command == "track-sweep" else "tdoa"
    _, paths = sweeps.generate(name, sweeps.sweep_values(name, None, overrides), out, fixture.get("variants"))
    return paths


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def csv_head(path, rows=HEAD_ROWS):
    with open(path) as f:
        return [line.rstrip("\n") for _, line in zip(range(rows + 1), f)]


def build_manifest():
    entries = {}
    with tempfile.TemporaryDirectory() as tmp:
        for fixture in FIXTURES:
            out = Path(tmp) / fixture["name"]
            with redirect_stdout(StringIO()):
                paths = _generate(fixture, out)
            files = {}
            for path in sorted(Path(p) for p in paths):
                files[path.name] = {"sha256": digest(path)}
                if path.suffix == ".csv":
                    files[path.name]["head"] = csv_head(path)
            entries[fixture["name"]] = {"command": fixture["command"], "overrides": fixture["overrides"], "variants": fixture.get("variants"), "files": files}
    return {"fixtures": entries}


def unpinned_fixtures(manifest):
    """Fixtures listed without any recorded file digests."""
    return sorted(name for name, entry in manifest.get("fixtures", {}).items() if not entry.get("files"))


def changed_fixtures(old, new):
    names = []
    old = old.get("fixtures", {})
    for name, entry in new["fixtures"].items():
        before = old.get(name, {}).get("files", {})
        if {k: v["sha256"] for k, v in before.items()} != {k: v["sha256"] for k, v in entry["files"].items()}:
            names.append(name)
    return names


def regenerate_fixtures(manifest_path=MANIFEST, check=False):
    """Rebuild every fixture; returns the names whose digests changed.

    With check=True nothing is written and any change raises FixtureMismatch.
    """
    manifest_path = Path(manifest_path)
    new = build_manifest()
    old = read_json(manifest_path) if manifest_path.is_file() else {}
    changed = changed_fixtures(old, new)
    if check:
        unpinned = unpinned_fixtures(old)
        if unpinned:
            logger.warning("no digests recorded for %s; run `python app.py fixtures` to pin them", ", ".join(unpinned))
        if changed:
            raise FixtureMismatch(changed)
        return []
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    write_json(new, manifest_path)
    for name in changed:
        logger.warning("fixture %s changed", name)
    return changed

