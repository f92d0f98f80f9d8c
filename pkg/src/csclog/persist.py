"""Stable on-disk formats and the fingerprint chain linking artifacts.

Every artifact is content-addressed with sha256. Each pipeline stage
writes a manifest recording the hashes of the inputs it read and the
outputs it produced; verify_chain replays those records and reports any
artifact that changed out from under its consumers.

All JSON is written with sorted keys and fixed separators so identical
content means identical bytes.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ArtifactError

MANIFEST_SUFFIX = ".manifest.json"
MANIFEST_VERSION = 1


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def fingerprint(path) -> str:
    """Content hash of a file."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return sha256_bytes(canonical_json(obj).encode("utf-8"))


def write_json(path, obj) -> None:
    Path(path).write_text(canonical_json(obj) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(canonical_json(rec) + "\n")


def read_jsonl(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out


def encode_array(arr: np.ndarray) -> dict:
    """Loss-free float64 array encoding (little-endian bytes, base64)."""
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {
        "shape": list(arr.shape),
        "dtype": "<f8",
        "b64": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def decode_array(rec: dict) -> np.ndarray:
    if rec.get("dtype") != "<f8":
        raise ArtifactError(f"unsupported tensor dtype {rec.get('dtype')!r}")
    flat = np.frombuffer(base64.b64decode(rec["b64"]), dtype="<f8")
    return flat.reshape(rec["shape"]).astype(np.float64, copy=True)


# ---------------------------------------------------------------------------
# stage manifests


@dataclass
class ArtifactManifest:
    stage: str
    inputs: dict[str, str] = field(default_factory=dict)  # relative name -> sha256
    outputs: dict[str, str] = field(default_factory=dict)
    config_hash: str = ""
    tool_version: str = __version__

    def to_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "stage": self.stage,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArtifactManifest":
        if d.get("version") != MANIFEST_VERSION:
            raise ArtifactError(f"unsupported manifest version {d.get('version')!r}")
        return cls(
            stage=d["stage"],
            inputs=dict(d["inputs"]),
            outputs=dict(d["outputs"]),
            config_hash=d["config_hash"],
            tool_version=d["tool_version"],
        )

    def save(self, out_dir) -> Path:
        path = Path(out_dir) / f"{self.stage}{MANIFEST_SUFFIX}"
        write_json(path, self.to_dict())
        return path


def write_stage_manifest(out_dir, stage: str, inputs: list, outputs: list, cfg_hash: str) -> ArtifactManifest:
    """Hash the named files relative to out_dir and record the stage."""
    out_dir = Path(out_dir)
    manifest = ArtifactManifest(stage=stage, config_hash=cfg_hash)
    for rel in inputs:
        manifest.inputs[str(rel)] = fingerprint(out_dir / rel)
    for rel in outputs:
        manifest.outputs[str(rel)] = fingerprint(out_dir / rel)
    manifest.save(out_dir)
    return manifest


@dataclass
class ChainIssue:
    stage: str
    artifact: str
    problem: str  # "missing" | "stale-input" | "stale-output"


@dataclass
class ChainReport:
    stages: list[str]
    issues: list[ChainIssue]

    @property
    def ok(self) -> bool:
        return not self.issues


def verify_chain(out_dir) -> ChainReport:
    """Walk every stage manifest under out_dir and re-hash what it recorded.

    An empty directory yields an empty, valid report.
    """
    out_dir = Path(out_dir)
    stages = []
    issues = []
    for manifest_path in sorted(out_dir.rglob(f"*{MANIFEST_SUFFIX}")):
        manifest = ArtifactManifest.from_dict(read_json(manifest_path))
        stages.append(manifest.stage)
        base = manifest_path.parent
        for kind, recorded in (("input", manifest.inputs), ("output", manifest.outputs)):
            for rel, expected in recorded.items():
                target = base / rel
                if not target.is_file():
                    issues.append(ChainIssue(manifest.stage, rel, "missing"))
                elif fingerprint(target) != expected:
                    issues.append(ChainIssue(manifest.stage, rel, f"stale-{kind}"))
    return ChainReport(stages=stages, issues=issues)
