"""Artifact emission: snapshot CSVs, metrics JSON, SVG scatter figures.

Floats in CSVs are rendered with 17 significant digits so re-parsing
reproduces the doubles bit-exactly.  Reruns with the same config and seed
produce byte-identical CSVs and metrics; wall-clock timestamps live only in
the manifest, which is written atomically once everything else exists.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from safeflow.diagnostics import BarrierTrace, DecayReport
from safeflow.integrate import FlowRun


def render_float(x: float) -> str:
    """Decimal rendering that round-trips double precision."""
    return format(float(x), ".17g")


@dataclass
class RunManifest:
    scenario: str
    label: str
    seed: int
    config_hash: str
    code_version: str
    started: str
    finished: str
    outputs: list = field(default_factory=list)
    initial_sha256: str = ""

    def write(self, path: Path):
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        os.replace(tmp, path)


def write_snapshot_csv(path: Path, t: float, states: np.ndarray):
    n = states.shape[1]
    header = "t,particle_id," + ",".join(f"x{j + 1}" for j in range(n))
    lines = [header]
    t_str = render_float(t)
    for i, row in enumerate(states):
        lines.append(t_str + f",{i}," + ",".join(render_float(v) for v in row))
    tmp = path.with_suffix(".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_snapshot_csv(path: Path) -> tuple[float, np.ndarray]:
    """Re-ingest a snapshot CSV; exact inverse of write_snapshot_csv."""
    lines = Path(path).read_text().strip().split("\n")
    rows = [line.split(",") for line in lines[1:]]
    t = float(rows[0][0])
    states = np.array([[float(v) for v in row[2:]] for row in rows])
    return t, states


def _metrics_payload(run: FlowRun, trace: BarrierTrace, decay: DecayReport | None, divergence):
    payload = {
        "scenario": run.scenario_name,
        "label": run.label,
        "times": [float(t) for t in trace.times],
        "constraint_labels": list(trace.labels),
        "barrier": [[float(v) for v in row] for row in trace.h],
        "violation_fraction": [float(v) for v in trace.violation_fraction],
        "nonzero_control_fraction": [float(v) for v in trace.nonzero_control_fraction],
        "relaxed_qp_events": int(run.relaxed_total),
        "max_relaxation": float(run.max_relaxation),
        "extra": {k: v for k, v in sorted(run.extra.items())},
    }
    if decay is not None:
        payload["decay"] = {
            "alpha": float(decay.alpha),
            "slack": [float(s) for s in np.atleast_1d(decay.slack)],
            "passed": bool(decay.passed),
            "worst_excess": float(decay.worst_excess),
            "failures": [list(f) for f in decay.failures[:10]],
        }
    payload["divergence_proxy"] = None if divergence is None else float(divergence)
    return payload


def write_metrics_json(path: Path, run, trace, decay=None, divergence=None):
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(_metrics_payload(run, trace, decay, divergence), indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


# --- SVG ------------------------------------------------------------------

_SVG_SIZE = 480.0
_MARGIN = 36.0


def _viewport(run: FlowRun) -> tuple[float, float, float, float]:
    """Square world window: bounding box of all snapshots, padded.

    Containment keeps every snapshot inside the state space, so this box is
    automatically the intersection with it.
    """
    pts = np.concatenate([ens.states for _, ens in run.snapshots], axis=0)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    pad = 0.08 * max(float(np.max(hi - lo)), 1e-6)
    lo = lo - pad
    hi = hi + pad
    center = 0.5 * (lo + hi)
    half = 0.5 * float(np.max(hi - lo))
    return center[0] - half, center[0] + half, center[1] - half, center[1] + half


def _world_to_svg(x, y, box):
    x0, x1, y0, y1 = box
    scale = (_SVG_SIZE - 2 * _MARGIN) / (x1 - x0)
    sx = _MARGIN + (x - x0) * scale
    sy = _SVG_SIZE - _MARGIN - (y - y0) * scale
    return sx, sy


def _geometry_elements(geometries, box) -> list:
    x0, x1, y0, y1 = box
    far = 4.0 * max(abs(x0), abs(x1), abs(y0), abs(y1))
    parts = []
    for geom in geometries:
        if geom is None:
            continue
        if geom["type"] == "sphere":
            cx, cy = _world_to_svg(0.0, 0.0, box)
            r = geom["radius"] * (_SVG_SIZE - 2 * _MARGIN) / (x1 - x0)
            parts.append(
                f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{r:.2f}" fill="none" stroke="#444" stroke-width="1.2"/>'
            )
        elif geom["type"] == "cone":
            dx, dy = geom["direction"]
            half = geom["half_angle"]
            for sign in (+1.0, -1.0):
                ca, sa = math.cos(sign * half), math.sin(sign * half)
                ex, ey = ca * dx - sa * dy, sa * dx + ca * dy
                ax, ay = _world_to_svg(0.0, 0.0, box)
                bx, by = _world_to_svg(far * ex, far * ey, box)
                parts.append(
                    f'<line x1="{ax:.2f}" y1="{ay:.2f}" x2="{bx:.2f}" y2="{by:.2f}" stroke="#888" stroke-width="1" stroke-dasharray="4 3"/>'
                )
        elif geom["type"] == "halfspace":
            nx, ny = geom["normal"]
            off = geom["offset"]
            # Boundary line n.x = offset, drawn across the window.
            px, py = off * nx, off * ny
            tx, ty = -ny, nx
            ax, ay = _world_to_svg(px - far * tx, py - far * ty, box)
            bx, by = _world_to_svg(px + far * tx, py + far * ty, box)
            parts.append(
                f'<line x1="{ax:.2f}" y1="{ay:.2f}" x2="{bx:.2f}" y2="{by:.2f}" stroke="#888" stroke-width="1"/>'
            )
    return parts


def write_snapshot_svg(path: Path, states, initial, geometries, box, title: str):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_SIZE:.0f}" height="{_SVG_SIZE:.0f}" viewBox="0 0 {_SVG_SIZE:.0f} {_SVG_SIZE:.0f}">',
        f'<rect width="{_SVG_SIZE:.0f}" height="{_SVG_SIZE:.0f}" fill="white"/>',
        f'<text x="{_MARGIN:.0f}" y="20" font-family="monospace" font-size="12">{title}</text>',
    ]
    parts.extend(_geometry_elements(geometries, box))
    for px, py in initial:
        sx, sy = _world_to_svg(px, py, box)
        parts.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="1.6" fill="#3366cc" fill-opacity="0.55"/>')
    for px, py in states:
        sx, sy = _world_to_svg(px, py, box)
        parts.append(
            f'<path d="M {sx - 2.4:.2f} {sy - 2.4:.2f} L {sx + 2.4:.2f} {sy + 2.4:.2f} '
            f'M {sx - 2.4:.2f} {sy + 2.4:.2f} L {sx + 2.4:.2f} {sy - 2.4:.2f}" stroke="#cc2222" stroke-width="1"/>'
        )
    parts.append("</svg>")
    tmp = path.with_suffix(".tmp")
    tmp.write_text("\n".join(parts) + "\n")
    os.replace(tmp, path)


def emit_outputs(
    run: FlowRun,
    trace: BarrierTrace,
    outdir,
    *,
    geometries=(),
    decay: DecayReport | None = None,
    divergence=None,
    config_hash: str = "",
    code_version: str = "0.1.0",
) -> RunManifest:
    """Write snapshot CSVs and SVGs, metrics JSON, then the manifest."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    outputs = []

    box = _viewport(run)
    initial = run.snapshots[0][1].states
    width = max(3, len(str(len(run.snapshots) - 1)))
    for i, (t, ens) in enumerate(run.snapshots):
        csv_path = outdir / f"snapshot_{i:0{width}d}.csv"
        write_snapshot_csv(csv_path, t, ens.states)
        outputs.append(csv_path.name)
        svg_path = outdir / f"snapshot_{i:0{width}d}.svg"
        write_snapshot_svg(
            svg_path, ens.states, initial, geometries, box,
            title=f"{run.scenario_name or run.label} t={t:g}",
        )
        outputs.append(svg_path.name)

    metrics_path = outdir / "metrics.json"
    write_metrics_json(metrics_path, run, trace, decay, divergence)
    outputs.append(metrics_path.name)

    manifest = RunManifest(
        scenario=run.scenario_name,
        label=run.label,
        seed=run.config.seed,
        config_hash=config_hash,
        code_version=code_version,
        started=started,
        finished=datetime.now(timezone.utc).isoformat(),
        outputs=sorted(outputs),
        initial_sha256=_sha256_array(initial),
    )
    manifest.write(outdir / "manifest.json")
    return manifest


def _sha256_array(a: np.ndarray) -> str:
    import hashlib

    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()
