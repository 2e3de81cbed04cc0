"""Binary tensor buffers and the labeled-dataset container format.

Buffer layout (shared with the wire protocol): magic ``BAGB``, format version
u16 LE, rank u8, dims as u32 LE, then float32 LE data, row-major,
channels-last.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"BAGB"
FORMAT_VERSION = 1


class BufferFormatError(ValueError):
    pass


def write_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim < 1 or arr.ndim > 255:
        raise BufferFormatError(f"unsupported rank: {arr.ndim}")
    head = MAGIC + struct.pack("<HB", FORMAT_VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def read_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise BufferFormatError("bad tensor magic")
    version, rank = struct.unpack_from("<HB", buf, 4)
    if version != FORMAT_VERSION:
        raise BufferFormatError(f"unsupported tensor format version: {version}")
    off = 7
    if len(buf) < off + 4 * rank:
        raise BufferFormatError("truncated tensor dims")
    dims = struct.unpack_from(f"<{rank}I", buf, off)
    off += 4 * rank
    count = 1
    for d in dims:
        count *= d
    expected = off + 4 * count
    if len(buf) != expected:
        raise BufferFormatError(f"tensor payload size {len(buf)} != expected {expected}")
    return np.frombuffer(buf[off:], dtype="<f4").reshape(dims).copy()


# ---------------------------------------------------------------------------
# dataset container


@dataclass
class StepSample:
    kind: str                       # "rearrange" or "lift"
    meta: dict[str, str]
    observation: np.ndarray         # H x W x 4 float32


@dataclass
class EpisodeSample:
    episode_id: int
    seed: int
    n_rigid: int
    n_cloth: int
    success: bool
    steps: list[StepSample] = field(default_factory=list)


def _dump_kv(meta: dict) -> str:
    lines = []
    for key, value in meta.items():
        if isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _parse_kv(text: str) -> dict[str, str]:
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def export_dataset(episodes: list[EpisodeSample], outdir) -> Path:
    """Write the dataset container; see README for the on-disk schema."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = [
        "# bagbench dataset",
        "version = 1",
        f"episodes = {len(episodes)}",
    ]
    for ep in episodes:
        epdir = outdir / f"ep{ep.episode_id:05d}"
        epdir.mkdir(exist_ok=True)
        n_rearrange = sum(1 for s in ep.steps if s.kind == "rearrange")
        n_lift = sum(1 for s in ep.steps if s.kind == "lift")
        manifest.append(
            f"episode.{ep.episode_id} = seed:{ep.seed} rigid:{ep.n_rigid} "
            f"cloth:{ep.n_cloth} steps:{n_rearrange} lifts:{n_lift} "
            f"success:{int(ep.success)}")
        step_i = 0
        for sample in ep.steps:
            stem = f"step{step_i:03d}" if sample.kind == "rearrange" else "lift"
            if sample.kind == "rearrange":
                step_i += 1
            try:
                (epdir / f"{stem}.meta").write_text(_dump_kv(sample.meta), encoding="utf-8")
                (epdir / f"{stem}.obs").write_bytes(write_tensor(sample.observation))
            except OSError as exc:
                raise OSError(f"failed writing {epdir / stem}: {exc}") from exc
    try:
        (outdir / "manifest").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"failed writing {outdir / 'manifest'}: {exc}") from exc
    return outdir


def read_dataset(path) -> list[EpisodeSample]:
    path = Path(path)
    kv = _parse_kv((path / "manifest").read_text(encoding="utf-8"))
    if int(kv.get("version", "0")) != 1:
        raise BufferFormatError(f"unsupported dataset version: {kv.get('version')}")
    episodes = []
    for key in sorted(k for k in kv if k.startswith("episode.")):
        ep_id = int(key.split(".", 1)[1])
        fields = dict(part.split(":", 1) for part in kv[key].split())
        ep = EpisodeSample(episode_id=ep_id, seed=int(fields["seed"]),
                           n_rigid=int(fields["rigid"]), n_cloth=int(fields["cloth"]),
                           success=bool(int(fields["success"])))
        epdir = path / f"ep{ep_id:05d}"
        stems = sorted(p.stem for p in epdir.glob("step*.meta"))
        if (epdir / "lift.meta").exists():
            stems.append("lift")
        for stem in stems:
            meta = _parse_kv((epdir / f"{stem}.meta").read_text(encoding="utf-8"))
            obs = read_tensor((epdir / f"{stem}.obs").read_bytes())
            ep.steps.append(StepSample(kind=meta.get("kind", "rearrange"),
                                       meta=meta, observation=obs))
        episodes.append(ep)
    return episodes
