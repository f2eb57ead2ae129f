"""Readers and writers for g2o pose graphs, TUM trajectories, feature-track CSV
and ATE result tables.

Floats are written with 17 significant digits so that parse(write(x)) == x.
The g2o quaternion order ``qx qy qz qw`` and g2o's translation-first
information layout are converted to the internal conventions here and
nowhere else.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, ParseError
from .factorgraph import FactorKind, NoiseModel, PoseGraph
from .frontend import BinningMask, Keypoint, TrackedFeatureFrame
from .geometry import Pose2, Pose3, Rot3

QUAT_NORM_TOL = 1e-3
DEFAULT_PRIOR_INFORMATION = 1e6


def _fmt(v: float) -> str:
    return "%.17g" % v


class FormatWarning(UserWarning):
    """Recoverable oddity in an input file."""


# --------------------------------------------------------------------------
# g2o
# --------------------------------------------------------------------------

_RECORDS = {
    # tag: (dimension, tokens after the tag)
    "VERTEX_SE2": ("SE2", 4),
    "EDGE_SE2": ("SE2", 2 + 3 + 6),
    "VERTEX_SE3:QUAT": ("SE3", 8),
    "EDGE_SE3:QUAT": ("SE3", 2 + 7 + 21),
}

# g2o tangent order -> internal: SE2 (x, y, th) -> (th, x, y); SE3 (t, r) -> (r, t)
_PERM = {"SE2": [2, 0, 1], "SE3": [3, 4, 5, 0, 1, 2]}


def upper_to_matrix(coeffs, dim: int) -> np.ndarray:
    """Row-major upper-triangular coefficients to the full symmetric matrix."""
    coeffs = list(coeffs)
    if len(coeffs) != dim * (dim + 1) // 2:
        raise InvalidArgumentError(f"expected {dim * (dim + 1) // 2} coefficients, got {len(coeffs)}")
    M = np.zeros((dim, dim))
    k = 0
    for r in range(dim):
        for c in range(r, dim):
            M[r, c] = M[c, r] = coeffs[k]
            k += 1
    return M


def matrix_to_upper(M) -> tuple:
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    return tuple(float(M[r, c]) for r in range(n) for c in range(r, n))


@dataclass
class G2oEdge:
    i: int
    j: int
    measurement: Pose2 | Pose3
    info_upper: tuple  # g2o file order (translation first)

    @property
    def information(self) -> np.ndarray:
        """Information matrix in the file's (translation-first) order."""
        return upper_to_matrix(self.info_upper, self.measurement.dim)

    def internal_information(self) -> np.ndarray:
        """Information matrix in rotation-first tangent order."""
        p = _PERM["SE2" if isinstance(self.measurement, Pose2) else "SE3"]
        return self.information[np.ix_(p, p)]


@dataclass(eq=False)
class G2oDocument:
    dimension: str
    vertices: dict = field(default_factory=dict)   # id -> pose, file order
    edges: list = field(default_factory=list)
    labels: dict = field(default_factory=dict)     # edge index -> True for inlier
    skipped_records: int = 0

    def __eq__(self, other):
        if not isinstance(other, G2oDocument):
            return NotImplemented
        return (self.dimension == other.dimension
                and list(self.vertices) == list(other.vertices)
                and all(self.vertices[k].params() == other.vertices[k].params() for k in self.vertices)
                and len(self.edges) == len(other.edges)
                and all((a.i, a.j, a.measurement.params(), tuple(a.info_upper))
                        == (b.i, b.j, b.measurement.params(), tuple(b.info_upper))
                        for a, b in zip(self.edges, other.edges))
                and self.labels == other.labels)


def _floats(tokens, lineno):
    try:
        vals = [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(f"non-numeric token: {exc}", lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise ParseError("non-finite value", lineno)
    return vals


def _int(tok, lineno) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"invalid id {tok!r}", lineno) from None


def _quat_xyzw(qx, qy, qz, qw, lineno) -> Rot3:
    n = math.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
    if abs(n - 1.0) > QUAT_NORM_TOL:
        raise ParseError(f"quaternion norm {n:.6g} is not 1", lineno)
    return Rot3((qw, qx, qy, qz))


def _se3(v, lineno) -> Pose3:
    return Pose3(_quat_xyzw(v[3], v[4], v[5], v[6], lineno), v[0:3])


def parse_g2o(text: str) -> G2oDocument:
    """Parse a g2o pose-graph file (SE2 or SE3:QUAT records, not mixed)."""
    dimension = None
    vertices: dict = {}
    edges: list = []
    labels: dict = {}
    skipped = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            tok = line[1:].split()
            if tok and tok[0] == "LABEL":
                if len(tok) != 3 or tok[2] not in ("inlier", "outlier"):
                    raise ParseError("LABEL needs an edge index and inlier|outlier", lineno)
                labels[_int(tok[1], lineno)] = tok[2] == "inlier"
            continue
        tok = line.split()
        tag = tok[0]
        if tag not in _RECORDS:
            skipped += 1
            continue
        dim, n_tok = _RECORDS[tag]
        if len(tok) - 1 != n_tok:
            raise ParseError(f"{tag} expects {n_tok} fields, got {len(tok) - 1}", lineno)
        if dimension is None:
            dimension = dim
        elif dimension != dim:
            raise ParseError(f"{tag} in a {dimension} file", lineno)
        if tag.startswith("VERTEX"):
            vid = _int(tok[1], lineno)
            if vid in vertices:
                raise ParseError(f"duplicate vertex id {vid}", lineno)
            v = _floats(tok[2:], lineno)
            vertices[vid] = Pose2(*v) if dim == "SE2" else _se3(v, lineno)
        else:
            i, j = _int(tok[1], lineno), _int(tok[2], lineno)
            v = _floats(tok[3:], lineno)
            if dim == "SE2":
                z, info = Pose2(*v[:3]), tuple(v[3:])
            else:
                z, info = _se3(v[:7], lineno), tuple(v[7:])
            edges.append(G2oEdge(i, j, z, info))
    if skipped:
        warnings.warn(f"skipped {skipped} unsupported g2o records", FormatWarning, stacklevel=2)
    for k in labels:
        if not 0 <= k < len(edges):
            raise ParseError(f"LABEL refers to missing edge {k}")
    return G2oDocument(dimension or "SE3", vertices, edges, labels, skipped)


def _pose_fields(p) -> list[float]:
    if isinstance(p, Pose2):
        return [p.x, p.y, p.theta]
    x, y, z, qw, qx, qy, qz = p.params()
    return [x, y, z, qx, qy, qz, qw]


def write_g2o(doc: G2oDocument) -> str:
    vtag, etag = ("VERTEX_SE2", "EDGE_SE2") if doc.dimension == "SE2" else ("VERTEX_SE3:QUAT", "EDGE_SE3:QUAT")
    out = io.StringIO()
    for vid, p in doc.vertices.items():
        out.write(" ".join([vtag, str(vid)] + [_fmt(v) for v in _pose_fields(p)]) + "\n")
    for e in doc.edges:
        out.write(" ".join([etag, str(e.i), str(e.j)] + [_fmt(v) for v in _pose_fields(e.measurement)]
                           + [_fmt(v) for v in e.info_upper]) + "\n")
    for k in sorted(doc.labels):
        out.write(f"# LABEL {k} {'inlier' if doc.labels[k] else 'outlier'}\n")
    return out.getvalue()


def document_to_pose_graph(doc: G2oDocument, prior_information: float = DEFAULT_PRIOR_INFORMATION
                           ) -> PoseGraph:
    """Vertices become values (file order); edges between consecutive ids become
    odometry, all others loop closures.  A prior holds the lowest-id vertex."""
    if not doc.vertices:
        raise InvalidArgumentError("g2o document has no vertices")
    g = PoseGraph(doc.dimension)
    for vid, p in doc.vertices.items():
        g.add_value(vid, p)
    first = min(doc.vertices)
    g.add_prior(first, doc.vertices[first], NoiseModel.isotropic(g.dof, prior_information))
    for e in doc.edges:
        kind = FactorKind.ODOMETRY if abs(e.j - e.i) == 1 else FactorKind.LOOP_CLOSURE
        g.add_between(e.i, e.j, e.measurement, NoiseModel(e.internal_information()), kind)
    return g


def pose_graph_to_document(graph: PoseGraph, labels: dict | None = None) -> G2oDocument:
    """Inverse of ``document_to_pose_graph``; prior factors are dropped.

    ``labels`` maps graph factor indices to inlier flags and is re-indexed to edges.
    """
    p = _PERM[graph.dimension]
    inv = np.argsort(p)
    doc = G2oDocument(graph.dimension, dict(graph.values))
    for fi, f in enumerate(graph.factors):
        if f.kind is FactorKind.PRIOR:
            continue
        info = f.noise.information[np.ix_(inv, inv)]
        if labels and fi in labels:
            doc.labels[len(doc.edges)] = bool(labels[fi])
        doc.edges.append(G2oEdge(f.keys[0], f.keys[1], f.measurement, matrix_to_upper(info)))
    return doc


# --------------------------------------------------------------------------
# TUM trajectories
# --------------------------------------------------------------------------

def parse_tum(text: str) -> list[tuple[float, Pose3]]:
    """``timestamp tx ty tz qx qy qz qw`` per line; ``#`` starts a comment."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 8:
            raise ParseError(f"TUM record expects 8 fields, got {len(tok)}", lineno)
        v = _floats(tok, lineno)
        out.append((v[0], _se3(v[1:], lineno)))
    if any(b[0] <= a[0] for a, b in zip(out, out[1:])):
        warnings.warn("TUM timestamps are not strictly increasing; order preserved",
                      FormatWarning, stacklevel=2)
    return out


def write_tum(trajectory) -> str:
    """``trajectory`` is a sequence of ``(timestamp, pose)``; SE(2) poses are lifted to z = 0."""
    lines = []
    for t, p in trajectory:
        if isinstance(p, Pose2):
            p = p.to_pose3()
        lines.append(" ".join(_fmt(v) for v in [t] + _pose_fields(p)))
    return "\n".join(lines) + ("\n" if lines else "")


# --------------------------------------------------------------------------
# feature tracks
# --------------------------------------------------------------------------

FEATURE_HEADER = ("timestamp", "track_id", "x", "y", "response")


def write_feature_csv(frames) -> str:
    out = io.StringIO()
    if frames:
        w, h = frames[0].image_size
        out.write(f"# image_size {_fmt(w)} {_fmt(h)}\n")
    wr = csv.writer(out, lineterminator="\n")
    wr.writerow(FEATURE_HEADER)
    for f in frames:
        for k in f.keypoints:
            wr.writerow([_fmt(f.timestamp), k.track_id, _fmt(k.x), _fmt(k.y), _fmt(k.response)])
    return out.getvalue()


def parse_feature_csv(text: str, image_size=None) -> list[TrackedFeatureFrame]:
    """Rows sharing a timestamp form one frame; frames keep file order.

    A leading ``# image_size W H`` comment sets the image size unless one is passed.
    """
    lines = text.splitlines()
    body = []
    for lineno, line in enumerate(lines, start=1):
        s = line.strip()
        if s.startswith("#"):
            tok = s[1:].split()
            if tok[:1] == ["image_size"] and image_size is None:
                if len(tok) != 3:
                    raise ParseError("image_size needs width and height", lineno)
                image_size = tuple(_floats(tok[1:], lineno))
            continue
        if s:
            body.append((lineno, s))
    if not body:
        return []
    header = tuple(c.strip() for c in body[0][1].split(","))
    if header != FEATURE_HEADER:
        raise ParseError(f"expected header {','.join(FEATURE_HEADER)}", body[0][0])
    if image_size is None:
        raise ParseError("image size missing")
    frames: list = []
    cur_t, cur = None, []
    for lineno, s in body[1:]:
        row = next(csv.reader([s]))
        if len(row) != 5:
            raise ParseError(f"feature row expects 5 fields, got {len(row)}", lineno)
        t, x, y, resp = _floats([row[0], row[2], row[3], row[4]], lineno)
        kp = Keypoint((x, y), resp, _int(row[1], lineno))
        if cur_t is None or t != cur_t:
            if cur_t is not None:
                frames.append(TrackedFeatureFrame(cur_t, cur, image_size))
            cur_t, cur = t, []
        cur.append(kp)
    frames.append(TrackedFeatureFrame(cur_t, cur, image_size))
    return frames


# --------------------------------------------------------------------------
# binning masks
# --------------------------------------------------------------------------

def parse_mask(text: str) -> BinningMask:
    """First line ``rows cols``, then one line per grid row of ``allow:QUOTA`` or ``deny`` tokens."""
    lines = [(n, ln.split("#", 1)[0].split()) for n, ln in enumerate(text.splitlines(), start=1)]
    lines = [(n, t) for n, t in lines if t]
    if not lines:
        raise ParseError("empty mask file")
    n0, head = lines[0]
    if len(head) != 2:
        raise ParseError("mask header must be 'rows cols'", n0)
    rows, cols = _int(head[0], n0), _int(head[1], n0)
    if rows < 1 or cols < 1:
        raise ParseError("mask grid must be at least 1x1", n0)
    if len(lines) - 1 != rows:
        raise ParseError(f"mask declares {rows} rows, found {len(lines) - 1}")
    allowed = np.zeros((rows, cols), bool)
    quota = np.zeros((rows, cols), int)
    for r, (n, toks) in enumerate(lines[1:]):
        if len(toks) != cols:
            raise ParseError(f"mask row expects {cols} cells, got {len(toks)}", n)
        for c, tok in enumerate(toks):
            if tok == "deny":
                continue
            kind, _, q = tok.partition(":")
            if kind != "allow" or not q:
                raise ParseError(f"bad mask cell {tok!r}", n)
            qv = _int(q, n)
            if qv < 0:
                raise ParseError(f"negative quota in {tok!r}", n)
            allowed[r, c], quota[r, c] = True, qv
    return BinningMask(allowed, quota)


def write_mask(mask: BinningMask) -> str:
    rows, cols = mask.shape
    out = [f"{rows} {cols}"]
    for r in range(rows):
        out.append(" ".join(f"allow:{int(mask.quota[r, c])}" if mask.allowed[r, c] else "deny"
                            for c in range(cols)))
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# ATE result rows
# --------------------------------------------------------------------------

RESULT_HEADER = ("dataset", "config", "trial", "ate_rmse")


def write_results_csv(rows) -> str:
    """Rows of ``(dataset, config, trial, ate_rmse)``; a failed run has ate_rmse None."""
    out = io.StringIO()
    wr = csv.writer(out, lineterminator="\n")
    wr.writerow(RESULT_HEADER)
    for ds, cfg, trial, ate in rows:
        wr.writerow([ds, cfg, int(trial), "" if ate is None else _fmt(ate)])
    return out.getvalue()


def parse_results_csv(text: str) -> list[tuple]:
    rd = csv.reader(io.StringIO(text))
    rows = list(rd)
    if not rows or tuple(rows[0]) != RESULT_HEADER:
        raise ParseError(f"expected header {','.join(RESULT_HEADER)}", 1)
    out = []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != 4:
            raise ParseError(f"result row expects 4 fields, got {len(r)}", lineno)
        ate = None if r[3] == "" else _floats([r[3]], lineno)[0]
        out.append((r[0], r[1], _int(r[2], lineno), ate))
    return out
