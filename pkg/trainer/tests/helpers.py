"""Cross-component plumbing shared by the trainer tests.

The exported documents are only worth anything if the deployed inference
engine accepts them, so several tests shell out to its CLI.  The engine is
a separate installation; these helpers locate it and bridge manifests into
the CSV row format its ``run`` verbs consume.
"""

import shutil
import subprocess

from trainer import manifest_windows

ENGINE = "ubnn"


def engine_path() -> str:
    path = shutil.which(ENGINE)
    assert path is not None, (
        f"the '{ENGINE}' inference CLI must be on PATH for parity tests"
    )
    return path


def run_engine(*args, cwd=None) -> subprocess.CompletedProcess:
    return subprocess.run(
        [engine_path(), *args], capture_output=True, text=True, cwd=cwd,
    )


def manifest_to_csv(manifest: dict, path) -> list[int]:
    """Write manifest inputs as CSV rows labelled with the exporter's own
    predictions; returns the prediction list.

    Each row flattens one window time-major (all channels of timestep 0,
    then timestep 1, ...), which is the layout the engine reads, with the
    expected class appended as the final column.
    """
    windows = manifest_windows(manifest)
    flat = windows.reshape(windows.shape[0], -1)
    predictions = manifest["predictions"]
    with open(path, "w", encoding="ascii") as f:
        for row, pred in zip(flat, predictions):
            cells = ",".join(str(int(v)) for v in row)
            f.write(f"{cells},{pred}\n")
    return list(predictions)
