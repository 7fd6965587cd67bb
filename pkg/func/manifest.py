"""Run manifest written next to every command's outputs."""

import json
import subprocess
from dataclasses import asdict, dataclass, field
from pathlib import Path

from func.base_logger import logger
from func.timer import RunTimer

MANIFEST_NAME = 'manifest.json'


def build_id() -> str:
    """
    git describe of the source tree, 'unknown' outside a git checkout.
    """
    try:
        return subprocess.check_output(['git', 'describe', '--always', '--dirty', '--tags'],
                                       cwd=Path(__file__).parent, stderr=subprocess.DEVNULL,
                                       timeout=10).decode().strip() or 'unknown'
    except (OSError, subprocess.SubprocessError):
        return 'unknown'


@dataclass
class RunManifest:
    command: str
    config: dict = field(default_factory=dict)
    dataset_checksums: dict = field(default_factory=dict)
    seed: int | None = None
    started: str = ''
    finished: str = ''
    seconds: float = 0.0
    outputs: list = field(default_factory=list)
    build: str = field(default_factory=build_id)
    exit_code: int = 0

    def add_output(self, path: Path):
        self.outputs.append(str(path))

    def write(self, out_dir: Path, timer: RunTimer | None = None) -> Path:
        """
        Stamps the finish time and writes manifest.json into out_dir.
        :return: Manifest path.
        """
        if timer is not None:
            self.started = timer.started_iso()
            self.seconds = round(timer.elapsed(), 3)
        self.finished = RunTimer.now_iso()
        path = Path(out_dir).joinpath(MANIFEST_NAME)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True), encoding='utf-8')
        logger.info(f"Wrote manifest of {self.command} with {len(self.outputs)} outputs to {path}")
        return path
