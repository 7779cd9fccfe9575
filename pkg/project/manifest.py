import hashlib
from collections import Counter
from pathlib import Path
from typing import Any

from pydantic import BaseModel, Field

TOOL_VERSION = "0.1.0"


class RunManifest(BaseModel):
    """
    Records how an artifact was produced: the command, its configuration, seeds and input digests.

    Nothing time-dependent is stored, so the same invocation reproduces the
    same manifest byte for byte.
    """

    command: str
    tool_version: str = TOOL_VERSION
    config: dict[str, Any] = Field(default_factory=dict)
    seeds: dict[str, int] = Field(default_factory=dict)
    inputs: dict[str, str] = Field(default_factory=dict)


def file_digest(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def build_manifest(
    command: str,
    config: dict[str, Any],
    seeds: dict[str, int] | None = None,
    inputs: list[str | Path] | None = None,
) -> RunManifest:
    """
    Creates a manifest, hashing each input file and keying it by file name.

    Inputs whose file names collide are keyed by their paths as given, so
    no digest is lost.
    """
    paths = [Path(p) for p in inputs or []]
    names = Counter(p.name for p in paths)
    return RunManifest(
        command=command,
        config=config,
        seeds=seeds or {},
        inputs={
            (p.name if names[p.name] == 1 else p.as_posix()): file_digest(p) for p in paths
        },
    )


def write_sidecar(manifest: RunManifest, out_path: str | Path) -> Path:
    sidecar = Path(f"{out_path}.manifest.json")
    sidecar.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return sidecar
