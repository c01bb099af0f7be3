"""Text serialization: coordinate triplets, CSV artifacts, basis files.

All floating-point output uses 17 significant digits so that artifacts are
bit-faithful round trips of the underlying doubles.
"""

from __future__ import annotations

import json
import os

import numpy as np
import scipy.sparse as sp

from .errors import CavityError
from .pod import ReducedBasis

BASIS_MAGIC = "cavityrb-basis"
BASIS_VERSION = 1


def fmt(x) -> str:
    return f"{float(x):.17g}"


def write_matrix_triplets(path, M):
    """One 'row col value' line per stored entry, row-major sorted.

    The leading '#' line carries the shape so an independent reader can
    reconstruct dimensions; triplet parsers may skip it.
    """
    C = sp.coo_matrix(M)
    order = np.lexsort((C.col, C.row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# shape {C.shape[0]} {C.shape[1]} nnz {C.nnz}\n")
        for i in order:
            fh.write(f"{C.row[i]} {C.col[i]} {fmt(C.data[i])}\n")


def read_matrix_triplets(path):
    rows, cols, vals = [], [], []
    shape = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line.split()
                shape = (int(parts[2]), int(parts[3]))
                continue
            r, c, v = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
    if shape is None:
        shape = (max(rows) + 1 if rows else 0, max(cols) + 1 if cols else 0)
    return sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()


def write_mesh(path, mesh):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"vertices {mesh.num_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{fmt(x)} {fmt(y)}\n")
        fh.write(f"edges {mesh.num_edges}\n")
        for a, b in mesh.edges:
            fh.write(f"{a} {b}\n")
        fh.write(f"triangles {mesh.num_triangles}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")


def write_csv(path, header, rows):
    """Schema-stable CSV: fixed header, floats at 17 significant digits."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for cell in row:
                if isinstance(cell, (float, np.floating)):
                    cells.append(fmt(cell))
                else:
                    cells.append(str(cell))
            fh.write(",".join(cells) + "\n")


def save_basis(path, basis: ReducedBasis):
    """Binary-free basis artifact: header, provenance, column-major values."""
    Z = np.asarray(basis.Z, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{BASIS_MAGIC} {BASIS_VERSION}\n")
        fh.write(f"n {Z.shape[0]}\n")
        fh.write(f"N {Z.shape[1]}\n")
        fh.write(f"t_ref {fmt(basis.t_ref)}\n")
        fh.write(f"gauge {basis.gauge}\n")
        fh.write(f"space {basis.space}\n")
        for j in range(Z.shape[1]):
            tag = basis.provenance[j] if j < len(basis.provenance) else "unknown"
            fh.write(f"column {j} {tag}\n")
        for j in range(Z.shape[1]):
            for i in range(Z.shape[0]):
                fh.write(fmt(Z[i, j]) + "\n")


def load_basis(path) -> ReducedBasis:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    head = lines[0].split()
    if head[0] != BASIS_MAGIC or int(head[1]) != BASIS_VERSION:
        raise CavityError(f"not a basis artifact: {path}")
    n = int(lines[1].split()[1])
    N = int(lines[2].split()[1])
    t_ref = float(lines[3].split()[1])
    gauge = lines[4].split(maxsplit=1)[1]
    space = lines[5].split(maxsplit=1)[1]
    provenance = []
    for j in range(N):
        parts = lines[6 + j].split(maxsplit=2)
        provenance.append(parts[2] if len(parts) > 2 else "unknown")
    data = np.array([float(x) for x in lines[6 + N : 6 + N + n * N]])
    if data.size != n * N:
        raise CavityError(f"basis artifact truncated: {path}")
    Z = data.reshape(N, n).T.copy()
    return ReducedBasis(Z=Z, t_ref=t_ref, gauge=gauge, provenance=provenance, space=space)


def write_tree_cotree(path, tc):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("tree " + " ".join(str(i) for i in tc.tree) + "\n")
        fh.write("cotree " + " ".join(str(i) for i in tc.cotree) + "\n")


def write_manifest(path, manifest: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


TRACE_HEADER = (
    "step", "t", "tracked_index", "mode_label", "lambda", "freq",
    "rho", "perm_index", "flags",
)


def trace_rows(trace):
    """One row per (step, tracked mode), deterministic order."""
    rows = []
    labels = trace.labels or [str(k) for k in range(len(trace.steps[0].lambdas))]
    for s_idx, step in enumerate(trace.steps):
        for k in range(len(step.lambdas)):
            lam = step.lambdas[k]
            rows.append(
                (
                    s_idx,
                    step.t,
                    k,
                    labels[k],
                    lam,
                    np.sqrt(max(lam, 0.0)) / (2.0 * np.pi),
                    step.rhos[k],
                    int(step.ranks[k]),
                    ";".join(step.flags) if step.flags else "-",
                )
            )
    return rows


GREEDY_HEADER = ("iteration", "t_star", "mode_star", "max_eta", "basis_size")

ERROR_STUDY_HEADER = (
    "basis_size", "mode", "avg_signed_error", "max_abs_error", "null_leak",
)

BENCH_HEADER = (
    "label", "dof_count", "evp_time_median", "evp_time_mean", "evp_speedup",
    "tracking_time_median", "tracking_time_mean", "tracking_speedup",
)
