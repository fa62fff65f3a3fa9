"""CSV tables and static figures from results documents."""

from __future__ import annotations

import csv
import io
from typing import Optional, Sequence

import numpy as np

from .exceptions import SchemaError, SpecificationError

CSV_FIELDS = ("index", "lower", "upper", "status", "margin", "splits", "u_v", "counterexample")


def _vec(v) -> str:
    return " ".join(repr(float(x)) for x in v)


def _check_results(doc: dict, name: str = "results") -> None:
    for key in ("config", "boxes", "verified_rate"):
        if key not in doc:
            raise SchemaError(f"{name}: results document is missing '{key}'")


def verdict_table(doc: dict) -> str:
    """One CSV row per box followed by a summary row."""
    _check_results(doc)
    cex = {c["box_index"]: c for c in doc.get("counterexamples", [])}
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for i, entry in enumerate(doc["boxes"]):
        c = cex.get(i)
        writer.writerow([i, _vec(entry["box"]["lower"]), _vec(entry["box"]["upper"]),
                         entry["status"], repr(float(entry["margin"])), entry["splits"],
                         _vec(entry["u_v"]), "" if c is None else _vec(c["x"])])
    n_verified = sum(e["status"] == "verified" for e in doc["boxes"])
    writer.writerow(["summary", "", "", f"{n_verified}/{len(doc['boxes'])}",
                     repr(float(doc["verified_rate"])),
                     sum(int(e["splits"]) for e in doc["boxes"]), "",
                     len(cex) if "counterexamples" in doc else ""])
    return out.getvalue()


def comparison_table(docs: Sequence[dict], names: Optional[Sequence[str]] = None) -> str:
    """Verified rate pivoted by (system, mode) rows and alpha columns."""
    names = names or [f"results[{i}]" for i in range(len(docs))]
    cells = {}
    alphas = set()
    for doc, name in zip(docs, names):
        _check_results(doc, name)
        system = doc.get("manifest", {}).get("scenario", {}).get("model", "")
        key = (system, doc["config"]["mode"])
        alpha = float(doc["config"]["alpha"])
        alphas.add(alpha)
        cells.setdefault(key, {}).setdefault(alpha, []).append(float(doc["verified_rate"]))
    alphas = sorted(alphas)
    order = {"symbolic": 0, "concrete": 1, "ibp": 2}
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["system", "mode"] + [f"alpha={a:g}" for a in alphas])
    for system, mode in sorted(cells, key=lambda k: (k[0], order.get(k[1], 9), k[1])):
        row = cells[(system, mode)]
        writer.writerow([system, mode] + [repr(float(np.mean(row[a]))) if a in row else ""
                                          for a in alphas])
    return out.getvalue()


def parse_slices(specs: Sequence[str], state_names: Sequence[str], n: int) -> dict:
    """``["2=-0.24", "theta=0.1"]`` -> ``{2: -0.24}``; dimensions by index or name."""
    slices = {}
    for spec in specs or ():
        if "=" not in spec:
            raise SpecificationError(f"slice {spec!r} must look like dim=value")
        dim, value = spec.split("=", 1)
        dim = dim.strip()
        if dim.isdigit():
            d = int(dim)
        elif dim in state_names:
            d = list(state_names).index(dim)
        else:
            raise SpecificationError(f"slice dimension {dim!r} is not an index or one of {list(state_names)}")
        if not 0 <= d < n:
            raise SpecificationError(f"slice dimension {d} out of range for a {n}-D state")
        try:
            slices[d] = float(value)
        except ValueError as exc:
            raise SpecificationError(f"slice value {value!r} is not a number") from exc
    return slices


def slice_boxes(doc: dict, slices: dict):
    """Boxes meeting every slice, with the two free dimensions."""
    _check_results(doc)
    boxes = doc["boxes"]
    n = len(boxes[0]["box"]["lower"]) if boxes else len(doc.get("domain", {}).get("lower", []))
    free = [d for d in range(n) if d not in slices]
    if boxes and len(free) != 2:
        raise SpecificationError(
            f"slices leave {len(free)} free dimensions; a figure needs exactly 2")
    picked = []
    for i, entry in enumerate(boxes):
        lo, hi = entry["box"]["lower"], entry["box"]["upper"]
        if all(lo[d] <= v <= hi[d] for d, v in slices.items()):
            picked.append((i, entry))
    return free, picked


def render_figure(doc: dict, slices: dict, path, obstacle: Optional[dict] = None,
                  state_names: Sequence[str] = ()) -> int:
    """Draw a 2-D slice of the boxes (green verified, red unknown); returns the box count."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Rectangle

    free, picked = slice_boxes(doc, slices)
    fig, ax = plt.subplots(figsize=(5, 5))
    if obstacle is not None and free == [0, 1]:
        c = np.asarray(obstacle["center"], dtype=float)
        s = np.asarray(obstacle["size"], dtype=float)
        ax.add_patch(Rectangle(tuple(c - s / 2), s[0], s[1], facecolor="0.6",
                               edgecolor="0.3", label="obstacle"))
    for _, entry in picked:
        lo = np.asarray(entry["box"]["lower"])[free]
        hi = np.asarray(entry["box"]["upper"])[free]
        color = "tab:green" if entry["status"] == "verified" else "tab:red"
        ax.add_patch(Rectangle(tuple(lo), *(hi - lo), facecolor=color, edgecolor="k",
                               linewidth=0.3, alpha=0.8))
    domain = doc.get("manifest", {}).get("scenario", {}).get("state_box")
    if domain is not None:
        ax.set_xlim(domain["lower"][free[0]], domain["upper"][free[0]])
        ax.set_ylim(domain["lower"][free[1]], domain["upper"][free[1]])
    else:
        ax.autoscale_view()
    label = lambda d: state_names[d] if d < len(state_names) else f"x{d}"
    ax.set_xlabel(label(free[0]))
    ax.set_ylabel(label(free[1]))
    title = ", ".join(f"{label(d)}={v:g}" for d, v in sorted(slices.items()))
    ax.set_title(f"{doc['config']['mode']}, alpha={doc['config']['alpha']:g}"
                 + (f" ({title})" if title else ""))
    ax.set_aspect("equal", adjustable="box")
    fig.tight_layout()
    fmt = str(path).rsplit(".", 1)[-1].lower() if "." in str(path) else "svg"
    fig.savefig(path, format=fmt, metadata={"Date": None} if fmt == "svg" else None)
    plt.close(fig)
    return len(picked)
