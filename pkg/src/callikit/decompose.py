"""Coarse stroke extraction from a glyph raster.

The glyph is thinned to a skeleton graph; each junction chooses how its
incident branches pair up into through-going strokes. Candidate pairings
are scored with the unsupervised stroke objective (perceptual proxy plus
lift, smoothness and start-direction penalties) and searched with a beam.
"""
from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage
from skimage.draw import line as draw_line

from . import raster
from .geometry import (Point2, Polyline, StrokePrimitive, cosine_similarity,
                       discretize, fit_error, fit_quad_bezier, pen_up)
from .utensil import FUDE_PEN, UtensilModel

#: preferred-against start direction (y up): strokes starting up-left are penalized
START_AXIS = (-math.sqrt(2.0) / 2.0, math.sqrt(2.0) / 2.0)
ANGLE_GATE = 0.5
MAX_SEGMENT_PX = 48
FIT_TOLERANCE_PX = 1.5


# ------------------------------------------------------------------ graph

@dataclass
class Node:
    pixel: tuple[int, int]  # (col, row)
    pos: Point2
    degree: int = 0
    synthetic: bool = False


@dataclass
class Edge:
    u: int
    v: int
    pixels: np.ndarray  # (k, 2) int (col, row), from node u to node v
    widths: np.ndarray  # (k,) distance-transform radius per pixel

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.pixels, axis=0), axis=1).sum())


@dataclass
class SkeletonGraph:
    nodes: list[Node]
    edges: list[Edge]
    size: int = raster.DEFAULT_SIZE

    def incident(self, k: int) -> list[tuple[int, int]]:
        """Edge ends ``(edge_index, end)`` touching node ``k``; end 0 is ``edge.u``."""
        out = []
        for i, e in enumerate(self.edges):
            if e.u == k:
                out.append((i, 0))
            if e.v == k:
                out.append((i, 1))
        return out

    def junctions(self) -> list[int]:
        """Nodes where a pairing choice exists (two or more incident ends)."""
        return [k for k in range(len(self.nodes)) if len(self.incident(k)) >= 2]

    def _refresh_degrees(self):
        for k, node in enumerate(self.nodes):
            node.degree = len(self.incident(k))


def _neighbour_count(sk: np.ndarray) -> np.ndarray:
    k = np.ones((3, 3), dtype=int)
    k[1, 1] = 0
    return ndimage.convolve(sk.astype(int), k, mode="constant") * sk


_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _bridge(a, b) -> list[tuple[int, int]]:
    """8-connected pixels from ``a`` to ``b`` (both ``(col, row)``), endpoints included."""
    rr, cc = draw_line(a[1], a[0], b[1], b[0])
    return list(zip(cc.tolist(), rr.tolist()))


def _join(chain: list, pixel) -> list:
    if not chain:
        return [tuple(pixel)]
    return chain + _bridge(chain[-1], pixel)[1:]


def build_skeleton_graph(skeleton: np.ndarray, width_map: np.ndarray | None = None,
                         spur_factor: float = 1.5, merge_factor: float = 1.5) -> SkeletonGraph:
    """Nodes at skeleton pixels without exactly two neighbours; edges in between.

    Adjacent node pixels collapse into one node. Pixel rings with no node get
    one synthetic node. With a ``width_map`` (distance transform of the ink),
    short spurs ending inside the stroke body are pruned and junctions joined
    by very short edges are merged.
    """
    sk = np.asarray(skeleton, dtype=bool)
    size = sk.shape[0]
    if width_map is None:
        width_map = np.ones(sk.shape)
    nodes: list[Node] = []
    edges: list[Edge] = []
    if not sk.any():
        return SkeletonGraph(nodes, edges, size)

    nb = _neighbour_count(sk)
    is_node = sk & (nb != 2)
    labels, n_clusters = ndimage.label(is_node, structure=np.ones((3, 3)))
    owner = {}
    for lab in range(1, n_clusters + 1):
        rows, cols = np.nonzero(labels == lab)
        cr, cc = rows.mean(), cols.mean()
        j = int(np.argmin((rows - cr) ** 2 + (cols - cc) ** 2))
        px = (int(cols[j]), int(rows[j]))
        nodes.append(Node(px, Point2(*raster.pixel_to_canvas(px, size))))
        for r, c in zip(rows, cols):
            owner[(int(c), int(r))] = lab - 1

    h, w = sk.shape

    def neigh(p):
        c, r = p
        for dr, dc in _OFFSETS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and sk[rr, cc]:
                yield (cc, rr)

    visited = set()

    def add_edge(u, v, chain):
        arr = np.array(chain, dtype=int)
        edges.append(Edge(u, v, arr, width_map[arr[:, 1], arr[:, 0]].astype(float)))

    for start_px, k in sorted(owner.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        for first in neigh(start_px):
            if first in owner or first in visited:
                continue
            chain = _join([nodes[k].pixel], start_px)
            prev, cur = start_px, first
            end_node = None
            while True:
                visited.add(cur)
                chain.append(cur)
                nxt = [q for q in neigh(cur) if q != prev]
                node_hits = [q for q in nxt if q in owner]
                if node_hits:
                    q = node_hits[0]
                    if owner[q] == k and len(chain) <= 3 and q != start_px:
                        end_node = None  # a one-pixel bridge inside the start cluster
                        break
                    end_node = owner[q]
                    chain = _join(chain, q)
                    chain = _join(chain, nodes[end_node].pixel)
                    break
                fresh = [q for q in nxt if q not in visited]
                if not fresh:
                    end_node = None
                    break
                prev, cur = cur, fresh[0]
            if end_node is not None:
                add_edge(k, end_node, chain)

    # rings without any node
    remaining = [(int(c), int(r)) for r, c in zip(*np.nonzero(sk & ~is_node))
                 if (int(c), int(r)) not in visited]
    remaining.sort(key=lambda p: (p[1], p[0]))
    for p in remaining:
        if p in visited:
            continue
        k = len(nodes)
        nodes.append(Node(p, Point2(*raster.pixel_to_canvas(p, size)), synthetic=True))
        visited.add(p)
        chain = [p]
        prev, cur = None, p
        while True:
            nxt = [q for q in neigh(cur) if q != prev and q not in visited]
            if not nxt:
                break
            prev, cur = cur, nxt[0]
            visited.add(cur)
            chain.append(cur)
        chain.append(p)
        add_edge(k, k, chain)

    graph = SkeletonGraph(nodes, edges, size)
    graph._refresh_degrees()
    if width_map is not None:
        _simplify(graph, width_map, spur_factor, merge_factor)
    return graph


def _simplify(graph: SkeletonGraph, width_map, spur_factor, merge_factor):
    changed = True
    while changed:
        changed = False
        graph._refresh_degrees()
        # spurs: endpoint-to-junction edges that stay inside the junction's ink blob
        for i, e in enumerate(graph.edges):
            du, dv = graph.nodes[e.u].degree, graph.nodes[e.v].degree
            if e.u == e.v or not ((du == 1 and dv >= 3) or (dv == 1 and du >= 3)):
                continue
            j = e.v if du == 1 else e.u
            jr = width_map[graph.nodes[j].pixel[1], graph.nodes[j].pixel[0]]
            if e.length < spur_factor * jr:
                del graph.edges[i]
                changed = True
                break
        if changed:
            _drop_orphans(graph)
            continue
        # short links between two junctions
        for i, e in enumerate(graph.edges):
            if e.u == e.v:
                continue
            nu, nv = graph.nodes[e.u], graph.nodes[e.v]
            if nu.degree < 3 or nv.degree < 3:
                continue
            reach = merge_factor * max(width_map[nu.pixel[1], nu.pixel[0]],
                                       width_map[nv.pixel[1], nv.pixel[0]])
            if e.length < reach:
                mid = e.pixels[len(e.pixels) // 2]
                _merge_nodes(graph, i, (int(mid[0]), int(mid[1])), width_map)
                changed = True
                break
        if changed:
            continue
        # degree-2 pass-through nodes left behind by pruning
        for k, node in enumerate(graph.nodes):
            inc = graph.incident(k)
            if node.synthetic or len(inc) != 2 or inc[0][0] == inc[1][0]:
                continue
            _splice(graph, k, inc, width_map)
            changed = True
            break
        if changed:
            _drop_orphans(graph)
    graph._refresh_degrees()


def _oriented(edge: Edge, end: int) -> np.ndarray:
    """Edge pixels ordered away from the given end."""
    return edge.pixels if end == 0 else edge.pixels[::-1]


def _splice(graph, k, inc, width_map):
    (i, ei), (j, ej) = inc
    a = _oriented(graph.edges[i], ei)[::-1]  # ends at node k
    b = _oriented(graph.edges[j], ej)  # starts at node k
    chain = [tuple(p) for p in a] + [tuple(p) for p in b[1:]]
    u = graph.edges[i].v if ei == 0 else graph.edges[i].u
    v = graph.edges[j].v if ej == 0 else graph.edges[j].u
    arr = np.array(chain, dtype=int)
    new = Edge(u, v, arr, width_map[arr[:, 1], arr[:, 0]].astype(float))
    for idx in sorted((i, j), reverse=True):
        del graph.edges[idx]
    graph.edges.append(new)


def _merge_nodes(graph, i, pixel, width_map):
    e = graph.edges.pop(i)
    keep, gone = e.u, e.v
    size = graph.size
    graph.nodes[keep].pixel = pixel
    graph.nodes[keep].pos = Point2(*raster.pixel_to_canvas(pixel, size))
    for ed in graph.edges:
        if ed.u == gone:
            ed.u = keep
        if ed.v == gone:
            ed.v = keep
    for ed in graph.edges:
        chain = [tuple(p) for p in ed.pixels]
        if ed.u == keep and chain[0] != pixel:
            chain = _bridge(pixel, chain[0])[:-1] + chain
        if ed.v == keep and chain[-1] != pixel:
            chain = chain + _bridge(chain[-1], pixel)[1:]
        arr = np.array(chain, dtype=int)
        ed.pixels = arr
        ed.widths = width_map[arr[:, 1], arr[:, 0]].astype(float)


def _drop_orphans(graph):
    used = sorted({e.u for e in graph.edges} | {e.v for e in graph.edges})
    remap = {old: new for new, old in enumerate(used)}
    graph.nodes = [graph.nodes[k] for k in used]
    for e in graph.edges:
        e.u, e.v = remap[e.u], remap[e.v]
    graph._refresh_degrees()


# ----------------------------------------------------------------- losses

@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.5
    lambda2: float = 0.5
    phase: int = 2

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 0.5:
                raise ValueError(f"{name} must lie in [0, 0.5], got {v}")
        if self.phase not in (1, 2):
            raise ValueError(f"phase must be 1 or 2, got {self.phase}")

    def ramped(self, frac: float) -> "LossWeights":
        return LossWeights(self.lambda1 * frac, self.lambda2 * frac, self.phase)


def _pens(strokes) -> list[int]:
    return [s.pen if isinstance(s, StrokePrimitive) else int(s) for s in strokes]


def loss_reg(strokes, T: int | None = None) -> float:
    """Fraction of lifted steps in the sequence."""
    pens = _pens(strokes)
    T = len(pens) if T is None else T
    if T <= 0:
        raise ValueError("T must be at least 1")
    return sum(1 - p for p in pens) / T


def smoothness_term(stroke: StrokePrimitive) -> float:
    c = cosine_similarity(np.subtract(stroke.o0, stroke.o1), np.subtract(stroke.o2, stroke.o1))
    if math.isnan(c):
        return 0.0
    return stroke.pen * (1.0 + c) / 2.0


def loss_smo(strokes: Sequence[StrokePrimitive]) -> float:
    """Unnormalized sum of per-segment bend penalties over drawing segments."""
    return float(sum(smoothness_term(s) for s in strokes))


def start_term(stroke: StrokePrimitive) -> float:
    c = cosine_similarity(np.subtract(stroke.o2, stroke.o0), START_AXIS)
    if math.isnan(c) or c < ANGLE_GATE:
        return 0.0
    return c


def loss_ang(strokes: Sequence[StrokePrimitive], T: int | None = None) -> float:
    """Start-direction penalty averaged over the sequence length."""
    strokes = list(strokes)
    T = len(strokes) if T is None else T
    if T <= 0:
        return 0.0
    total = 0.0
    for t, st in enumerate(strokes):
        if st.pen == 1 and (t == 0 or strokes[t - 1].pen == 0):
            total += start_term(st)
    return total / T


class PerceptualProxy:
    """Multi-scale image difference standing in for deep perceptual features.

    Level ``j`` blurs with ``sigma = 2**j`` and subsamples by ``2**j``; its
    mean absolute difference is divided by that level's running mean.
    Before any observation the divisor is 1.
    """

    def __init__(self, sigmas=(1.0, 2.0, 4.0, 8.0)):
        self.sigmas = tuple(sigmas)
        self.count = 0
        self.means = np.zeros(len(self.sigmas))

    def levels(self, img: np.ndarray) -> list[np.ndarray]:
        img = np.asarray(img, dtype=float)
        out = []
        for j, s in enumerate(self.sigmas):
            step = 2 ** j
            out.append(ndimage.gaussian_filter(img, s, mode="constant")[::step, ::step])
        return out

    def raw(self, rendered, target, target_levels=None) -> np.ndarray:
        if np.shape(rendered) != np.shape(target):
            raise ValueError(f"image shapes differ: {np.shape(rendered)} vs {np.shape(target)}")
        a = self.levels(rendered)
        b = target_levels if target_levels is not None else self.levels(target)
        return np.array([float(np.mean(np.abs(x - y))) for x, y in zip(a, b)])

    def observe(self, raw: np.ndarray) -> None:
        raw = np.atleast_2d(raw)
        for row in raw:
            self.count += 1
            self.means += (row - self.means) / self.count

    def normalize(self, raw: np.ndarray) -> float:
        div = np.where(self.means > 0, self.means, 1.0) if self.count else np.ones_like(self.means)
        return float(np.sum(raw / div))

    def __call__(self, rendered, target, target_levels=None) -> float:
        return self.normalize(self.raw(rendered, target, target_levels))

    def seeded(self, target) -> "PerceptualProxy":
        """Copy whose running mean also includes the blank-canvas loss for ``target``."""
        p = PerceptualProxy(self.sigmas)
        p.count, p.means = self.count, self.means.copy()
        p.observe(p.raw(np.zeros_like(target, dtype=float), target))
        return p


def loss_perc_proxy(rendered, target, proxy: PerceptualProxy | None = None) -> float:
    proxy = proxy or PerceptualProxy()
    return proxy(rendered, target)


# ---------------------------------------------------------- decomposition

@dataclass
class Decomposition:
    """Ordered drawing strokes; each stroke is a chain of Bezier segments."""

    strokes: list[list[StrokePrimitive]] = field(default_factory=list)
    paths: list[list[tuple[int, int]]] = field(default_factory=list)  # (edge, direction) per stroke

    @property
    def stroke_count(self) -> int:
        return len(self.strokes)

    def sequence(self) -> list[StrokePrimitive]:
        """Flat segment list with a lifted move between consecutive strokes."""
        seq: list[StrokePrimitive] = []
        for k, stroke in enumerate(self.strokes):
            if k:
                seq.append(pen_up(self.strokes[k - 1][-1].o2, stroke[0].o0))
            seq.extend(stroke)
        return seq

    @classmethod
    def from_sequence(cls, seq: Sequence[StrokePrimitive]) -> "Decomposition":
        return cls(raster.pen_down_groups(seq))


@dataclass
class LossReport:
    total: float
    perc: float
    reg: float
    smo: float
    ang: float

    def as_dict(self) -> dict:
        return {"total": self.total, "perc": self.perc, "reg": self.reg,
                "smo": self.smo, "ang": self.ang}


def default_utensil() -> UtensilModel:
    return UtensilModel(FUDE_PEN, r=0.01, l=0.01, r_min=0.0, r_max=0.5)


def loss_components(decomp: Decomposition, target, utensil: UtensilModel | None = None,
                    proxy: PerceptualProxy | None = None, target_levels=None,
                    points_per_stroke: int = 32) -> tuple[float, float, float, float]:
    utensil = utensil or default_utensil()
    size = np.shape(target)[0]
    seq = decomp.sequence()
    rendered = raster.render_strokes(seq, utensil, size, points_per_stroke)
    proxy = proxy if proxy is not None else PerceptualProxy().seeded(target)
    perc = proxy(rendered, target, target_levels)
    if not seq:
        return perc, 0.0, 0.0, 0.0
    return perc, loss_reg(seq), loss_smo(seq), loss_ang(seq)


def combine(perc, reg, smo, ang, weights: LossWeights) -> float:
    if weights.phase == 1:
        return perc + weights.lambda1 * reg
    return perc + reg + weights.lambda2 * (0.5 * smo + ang)


def composite_loss(decomp: Decomposition, target, weights: LossWeights,
                   utensil: UtensilModel | None = None, proxy: PerceptualProxy | None = None,
                   report: bool = False):
    """Stroke objective: phase 1 ``perc + l1*reg``; phase 2 ``perc + reg + l2*(smo/2 + ang)``.

    Without an explicit ``proxy`` the perceptual levels are normalized by the
    blank-canvas loss of ``target``.
    """
    perc, reg, smo, ang = loss_components(decomp, target, utensil, proxy)
    total = combine(perc, reg, smo, ang, weights)
    if report:
        return LossReport(total, perc, reg, smo, ang)
    return total


# ------------------------------------------------------------------ search

def matchings(items: Sequence) -> list[list[tuple]]:
    """All partial matchings of ``items`` (including the empty one)."""
    items = list(items)
    if not items:
        return [[]]
    first, rest = items[0], items[1:]
    out = [m for m in matchings(rest)]
    for j, other in enumerate(rest):
        for m in matchings(rest[:j] + rest[j + 1:]):
            out.append([(first, other)] + m)
    return out


def _leaving_direction(graph: SkeletonGraph, end: tuple[int, int], reach: int = 10) -> np.ndarray:
    i, e = end
    px = _oriented(graph.edges[i], e).astype(float)
    k = min(reach, len(px) - 1)
    d = px[k] - px[0]
    d[1] = -d[1]  # rows down -> y up
    return d


def _pair_angle(graph, a, b) -> float:
    c = cosine_similarity(_leaving_direction(graph, a), _leaving_direction(graph, b))
    return math.pi if math.isnan(c) else math.acos(c)


def ranked_options(graph: SkeletonGraph, node: int) -> list[list[tuple]]:
    """Pairings at ``node`` ordered by continuity: straight pass-throughs first."""
    inc = graph.incident(node)
    opts = matchings(inc)

    def key(m):
        dev = sum(math.pi - _pair_angle(graph, a, b) for a, b in m)
        unmatched = len(inc) - 2 * len(m)
        length = sum(graph.edges[a[0]].length + graph.edges[b[0]].length for a, b in m)
        return (dev + 0.5 * math.pi * (unmatched - len(inc) % 2), -length)

    return sorted(opts, key=key)


def paths_from_pairings(graph: SkeletonGraph, choice: dict[int, list[tuple]]) -> list[list[tuple[int, int]]]:
    """Walk edges into strokes; every edge is used exactly once.

    ``choice`` maps node -> list of paired edge ends. A path is a list of
    ``(edge_index, direction)`` with direction 0 meaning u->v.
    """
    partner = {}
    for pairs in choice.values():
        for a, b in pairs:
            partner[a] = b
            partner[b] = a
    used = [False] * len(graph.edges)
    paths = []

    def walk(start_end):
        path = []
        i, e = start_end
        while True:
            used[i] = True
            path.append((i, e))
            arrive = (i, 1 - e)
            nxt = partner.get(arrive)
            if nxt is None or used[nxt[0]]:
                return path
            i, e = nxt

    ends = [(i, e) for i in range(len(graph.edges)) for e in (0, 1)]
    for end in ends:  # open paths start at unpaired ends
        if not used[end[0]] and end not in partner:
            paths.append(walk(end))
    for i in range(len(graph.edges)):  # whatever is left forms closed loops
        if not used[i]:
            paths.append(walk((i, 0)))
    return paths


def _path_pixels(graph: SkeletonGraph, path) -> tuple[np.ndarray, np.ndarray]:
    pix, wid = [], []
    for i, e in path:
        p = _oriented(graph.edges[i], e)
        w = graph.edges[i].widths if e == 0 else graph.edges[i].widths[::-1]
        if pix and tuple(pix[-1]) == tuple(p[0]):
            p, w = p[1:], w[1:]
        pix.extend(map(tuple, p))
        wid.extend(w)
    return np.array(pix, dtype=float), np.array(wid, dtype=float)


def _fit_pieces(pix: np.ndarray, wid: np.ndarray, size: int) -> list[StrokePrimitive]:
    """Quadratic segments through a pixel chain (each at most ``MAX_SEGMENT_PX`` long)."""
    scale = size - 1
    pts = raster.pixel_to_canvas(pix, size)
    radius = np.maximum(wid - 0.5, 0.5)
    widths = 2.0 * radius / scale
    if len(pts) == 1:
        pts = np.vstack([pts, pts])
        widths = np.concatenate([widths, widths])
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pix if len(pix) > 1 else np.vstack([pix, pix]), axis=0), axis=1))])
    n_pieces = max(1, int(math.ceil(arc[-1] / MAX_SEGMENT_PX)))
    cuts = [0] + [int(np.searchsorted(arc, arc[-1] * k / n_pieces)) for k in range(1, n_pieces)] + [len(pts) - 1]
    cuts = sorted(set(cuts))
    spans = list(zip(cuts[:-1], cuts[1:])) or [(0, len(pts) - 1)]

    out: list[StrokePrimitive] = []
    stack = list(reversed(spans))
    while stack:
        a, b = stack.pop()
        seg_pts = pts[a:b + 1]
        seg_w = widths[a:b + 1]
        med = float(np.median(seg_w))
        w0, w1 = min(seg_w[0], med), min(seg_w[-1], med)
        if len(seg_pts) < 3:
            mid = seg_pts.mean(axis=0)
            out.append(StrokePrimitive(1, Point2(*seg_pts[0]), Point2(*mid), Point2(*seg_pts[-1]), w0, w1))
            continue
        st = fit_quad_bezier(Polyline(seg_pts, seg_w, 1), polish=False)
        err = fit_error(st, seg_pts) * scale
        worst = int(np.argmax(err))
        if err[worst] > FIT_TOLERANCE_PX and 2 <= worst <= len(seg_pts) - 3:
            stack.append((a + worst, b))
            stack.append((a, a + worst))
            continue
        out.append(StrokePrimitive(1, st.o0, st.o1, st.o2, w0, w1))
    return out


def strokes_from_paths(graph: SkeletonGraph, paths) -> list[list[StrokePrimitive]]:
    strokes = []
    for path in paths:
        pix, wid = _path_pixels(graph, path)
        strokes.append(_fit_pieces(pix, wid, graph.size))
    return strokes


def _reverse(stroke: list[StrokePrimitive]) -> list[StrokePrimitive]:
    return [s.reversed() for s in reversed(stroke)]


def _order_key(stroke: list[StrokePrimitive]):
    pts = np.vstack([discretize(s, 16).points for s in stroke])
    y_down = 1.0 - pts[:, 1]
    return (float(np.min(pts[:, 0] + y_down)), float(np.min(y_down)), float(np.min(pts[:, 0])))


def order_strokes(strokes: list[list[StrokePrimitive]], paths=None):
    """Top-left strokes first; flip a stroke when that lowers its start penalty.

    Returns the reordered strokes (and the matching reordered paths when
    ``paths`` is given, with flipped paths reversed).
    """
    if not strokes:
        return ([], []) if paths is not None else []
    items = []
    for k, stroke in enumerate(strokes):
        path = paths[k] if paths is not None else None
        flipped = _reverse(stroke)
        if start_term(flipped[0]) < start_term(stroke[0]):
            stroke = flipped
            if path is not None:
                path = [(i, 1 - e) for i, e in reversed(path)]
        items.append((_order_key(stroke), k, stroke, path))
    items.sort(key=lambda it: (it[0], it[1]))
    ordered = [it[2] for it in items]
    if paths is None:
        return ordered
    return ordered, [it[3] for it in items]


def build_decomposition(graph: SkeletonGraph, choice: dict) -> Decomposition:
    paths = paths_from_pairings(graph, choice)
    strokes = strokes_from_paths(graph, paths)
    strokes, paths = order_strokes(strokes, paths)
    return Decomposition(strokes, paths)


def _workers() -> int:
    """Scoring threads: ``CALLIKIT_THREADS`` if set, else the CPU count (at most 8)."""
    raw = os.environ.get("CALLIKIT_THREADS")
    if raw is None or not raw.strip():
        return min(8, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"CALLIKIT_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"CALLIKIT_THREADS must be a positive integer, got {raw!r}")
    return n


class _Scorer:
    def __init__(self, graph, target, utensil, proxy):
        self.graph = graph
        self.target = np.asarray(target, dtype=float)
        self.utensil = utensil or default_utensil()
        self.proxy = proxy
        self.target_levels = proxy.levels(self.target)
        self.cache: dict = {}

    def components(self, choice: dict):
        key = tuple(sorted((k, tuple(v)) for k, v in choice.items()))
        if key not in self.cache:
            dec = build_decomposition(self.graph, choice)
            comps = loss_components(dec, self.target, self.utensil, self.proxy, self.target_levels)
            self.cache[key] = (dec, comps)
        return self.cache[key]


def trace_strokes(graph: SkeletonGraph, target, weights: LossWeights = LossWeights(),
                  utensil: UtensilModel | None = None, beam: int | None = 8,
                  proxy: PerceptualProxy | None = None) -> Decomposition:
    """Beam search over junction pairings minimizing :func:`composite_loss`.

    Junctions are decided one per round; undecided junctions take their
    best-ranked pairing. The smoothness/start weights ramp linearly to their
    final value over the rounds, and the surviving beam is rescored with the
    final weights. ``beam=None`` keeps every candidate (exhaustive).
    """
    if beam is not None and beam < 1:
        raise ValueError("beam must be at least 1")
    if not graph.edges:
        return Decomposition()
    proxy = proxy if proxy is not None else PerceptualProxy().seeded(target)
    scorer = _Scorer(graph, target, utensil, proxy)
    junctions = sorted(graph.junctions(), key=lambda k: (-graph.nodes[k].degree,
                                                         graph.nodes[k].pixel[1], graph.nodes[k].pixel[0]))
    options = {k: ranked_options(graph, k) for k in junctions}
    if beam is not None:
        options = {k: v[:4 * beam] for k, v in options.items()}
    default = {k: v[0] for k, v in options.items()}

    frontier: list[dict] = [{}]
    rounds = len(junctions)
    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        for r, k in enumerate(junctions, 1):
            w = weights.ramped(r / rounds)
            cands = [{**c, k: opt} for c in frontier for opt in options[k]]
            fulls = [{**default, **c} for c in cands]
            comps = list(pool.map(scorer.components, fulls))
            scores = [combine(*cm[1], w) for cm in comps]
            order = sorted(range(len(cands)), key=lambda i: (scores[i], i))
            if beam is not None:
                order = order[:beam]
            frontier = [cands[i] for i in order]
    finals = [{**default, **c} for c in frontier]
    scored = [(combine(*scorer.components(c)[1], weights), i) for i, c in enumerate(finals)]
    best = min(scored)[1]
    return scorer.components(finals[best])[0]


def exhaustive_candidates(graph: SkeletonGraph):
    """Every combination of junction pairings (for small graphs)."""
    junctions = graph.junctions()
    opts = [matchings(graph.incident(k)) for k in junctions]
    for combo in itertools.product(*opts):
        yield dict(zip(junctions, combo))


def decompose_glyph(image, weights: LossWeights = LossWeights(), utensil: UtensilModel | None = None,
                    beam: int | None = 8, threshold: float = 0.5):
    """Binarize, thin, build the skeleton graph and trace strokes.

    Returns ``(decomposition, graph)``.
    """
    image = raster.check_image(image)
    mask = raster.binarize(image, threshold)
    skeleton = raster.thin(mask)
    widths = raster.distance_transform(mask)
    graph = build_skeleton_graph(skeleton, widths)
    return trace_strokes(graph, image, weights, utensil, beam), graph
