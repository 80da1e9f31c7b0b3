"""Deterministic synthetic workloads with planted attention structure.

Every kind starts from i.i.d. N(0, 1)/√d_h queries and keys and N(0, 1)
values, then plants its structure:

* vertical: every query gets a unit component along a shared direction u,
  and each planted key row becomes ``strength·√d_h·u``, so the planted
  columns score exactly ``strength`` for every query.
* slash: key row j gains ``strength·√d_h·q_{j+c}/‖q_{j+c}‖²``, so query i
  scores ``strength`` (plus noise) against key i−c.
* sink_recent: vertical columns 0..sinks−1 plus slash bands for offsets
  0..window−1.
* block_local: queries and keys of each ``width``-token group share a latent
  direction scaled so same-group scores are about ``strength``.
"""

import logging
import math
from pathlib import Path

import numpy as np

from xattn.schemas import AttentionInputs, WorkloadKind, WorkloadSpec
from xattn.tensor import atomic_write_bytes, load_tensor, save_tensor

logger = logging.getLogger("xattn.workloads")

SPEC_FILE = "workload.json"


def _unit(rng: np.random.Generator, d: int) -> np.ndarray:
    u = rng.standard_normal(d)
    return u / np.linalg.norm(u)


def _plant_columns(
    q: np.ndarray, k: np.ndarray, columns: list[int], strength: float, u: np.ndarray
) -> None:
    d = q.shape[1]
    q -= np.outer(q @ u, u)
    q += u
    for c in columns:
        k[c] = strength * math.sqrt(d) * u


def _plant_slash(q: np.ndarray, k: np.ndarray, offset: int, strength: float) -> None:
    L, d = q.shape
    if offset >= L:
        return
    targets = q[offset:]
    norms = np.einsum("ij,ij->i", targets, targets)[:, None]
    k[: L - offset] += strength * math.sqrt(d) * targets / norms


def _generate_head(spec: WorkloadSpec, head: int) -> AttentionInputs:
    rng = np.random.default_rng([spec.seed, head])
    L, d = spec.length, spec.d_h

    q = rng.standard_normal((L, d)) / math.sqrt(d)
    k = rng.standard_normal((L, d)) / math.sqrt(d)
    v = rng.standard_normal((L, d))

    if spec.kind == WorkloadKind.VERTICAL:
        _plant_columns(q, k, spec.columns, spec.strength, _unit(rng, d))

    elif spec.kind == WorkloadKind.SLASH:
        _plant_slash(q, k, spec.offset, spec.strength)

    elif spec.kind == WorkloadKind.SINK_RECENT:
        _plant_columns(q, k, list(range(spec.sinks)), spec.strength, _unit(rng, d))
        for offset in range(spec.window):
            _plant_slash(q, k, offset, spec.strength)

    elif spec.kind == WorkloadKind.BLOCK_LOCAL:
        n_groups = -(-L // spec.width)
        latents = np.stack([_unit(rng, d) for _ in range(n_groups)])
        groups = np.arange(L) // spec.width
        scale = math.sqrt(spec.strength * math.sqrt(d))
        q += scale * latents[groups]
        k += scale * latents[groups]

    return AttentionInputs(q=q, k=k, v=v, causal=spec.causal, head=head)


def generate(spec: WorkloadSpec) -> list[AttentionInputs]:
    """One AttentionInputs per head; a pure function of ``spec``."""
    heads = [_generate_head(spec, h) for h in range(spec.heads)]
    logger.info(
        f"Generated {spec.kind.value} workload: L={spec.length} d_h={spec.d_h} "
        f"heads={spec.heads} seed={spec.seed}"
    )
    return heads


def load_spec(path: str | Path) -> WorkloadSpec:
    """Read a WorkloadSpec from JSON."""
    return WorkloadSpec.model_validate_json(Path(path).read_text(encoding="utf-8"))


def save_workload(
    spec: WorkloadSpec, heads: list[AttentionInputs], out_dir: str | Path
) -> Path:
    """Write the spec and the H×L×d_h Q/K/V stacks into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(out / SPEC_FILE, spec.model_dump_json(indent=2).encode("utf-8"))
    for name in ("q", "k", "v"):
        save_tensor(np.stack([getattr(h, name) for h in heads]), out / f"{name}.xatn")
    logger.info(f"Saved workload with {len(heads)} heads to {out}")
    return out


def load_workload(
    workload_dir: str | Path, causal: bool | None = None
) -> tuple[WorkloadSpec, list[AttentionInputs]]:
    """Read a workload directory; ``causal`` overrides the stored flag."""
    root = Path(workload_dir)
    spec = load_spec(root / SPEC_FILE)
    stacks = {name: load_tensor(root / f"{name}.xatn") for name in ("q", "k", "v")}
    for name, stack in stacks.items():
        if stack.ndim == 2:
            stacks[name] = stack[None]

    flag = spec.causal if causal is None else causal
    heads = [
        AttentionInputs(
            q=stacks["q"][h], k=stacks["k"][h], v=stacks["v"][h], causal=flag, head=h
        )
        for h in range(stacks["q"].shape[0])
    ]
    return spec, heads

