"""Cairo-based diagrams of a call graph's feature completeness.

Functions are drawn as discs laid out in rows by call depth: functions
nobody calls (entry points) on the top row, their callees below them and so
on. Discs are coloured by status:

* complete: every feature group present;
* incomplete: some group missing;
* external: only the universal groups present (external API calls).

Nodes which Prune would remove can additionally be drawn translucent.
"""

import time

import logging

from collections import deque

from math import pi

import cairocffi as cairo

import numpy as np

from fcg_robust.style import ElementStyle, StyleTable


logger = logging.getLogger(__name__)

COMPLETE = "complete"
INCOMPLETE = "incomplete"
EXTERNAL = "external"

default_node_style = StyleTable(ElementStyle(fill=(0.2, 0.5, 0.9, 1.0),
                                             stroke=(0.0, 0.0, 0.0, 1.0),
                                             line_width=0.03))
default_node_style.override(INCOMPLETE, fill=(0.95, 0.6, 0.1, 1.0))
default_node_style.override(EXTERNAL, fill=(0.6, 0.6, 0.6, 1.0),
                            dash=[0.05, 0.05])

default_edge_style = ElementStyle(stroke=(0.0, 0.0, 0.0, 0.4),
                                  line_width=0.02,
                                  line_cap=cairo.LINE_CAP_ROUND)


def call_depths(n, edges):
    """The call depth of every node.

    Nodes without callers have depth 0 and a callee sits one row below its
    shallowest caller. Nodes only reachable through call cycles are reached
    from the lowest numbered such node, which is given depth 0. Self-loops
    are ignored.

    Returns
    -------
    [int, ...]
    """
    callees = [[] for _ in range(n)]
    has_caller = [False] * n
    for src, dst in edges:
        if src != dst:
            callees[src].append(dst)
            has_caller[dst] = True

    depth = [None] * n

    def visit(roots):
        queue = deque(roots)
        for v in roots:
            depth[v] = 0
        while queue:
            v = queue.popleft()
            for w in callees[v]:
                if depth[w] is None:
                    depth[w] = depth[v] + 1
                    queue.append(w)

    visit([v for v in range(n) if not has_caller[v]])
    for v in range(n):
        if depth[v] is None:
            visit([v])
    return depth


def layered_layout(n, edges, spacing=1.0):
    """Node coordinates with rows by call depth, centred on x = 0.

    Within a row nodes are ordered by id.

    Returns
    -------
    {node: (x, y), ...}
    """
    rows = {}
    for v, d in enumerate(call_depths(n, edges)):
        rows.setdefault(d, []).append(v)
    positions = {}
    for d, row in rows.items():
        for num, v in enumerate(row):
            positions[v] = ((num - (len(row) - 1) / 2.0) * spacing,
                            d * spacing)
    return positions


def node_statuses(g):
    """The completeness status of every node of a featurised graph."""
    if g.mask is None:
        mask = np.ones((g.n, 0), dtype=bool)
        universal = np.zeros(0, dtype=bool)
    else:
        mask = g.mask
        universal = np.array([grp.universal for grp in g.schema], dtype=bool)
    out = []
    for node in range(g.n):
        row = mask[node]
        if g.records is not None and g.records[node].external:
            out.append(EXTERNAL)
        elif row.all():
            out.append(COMPLETE)
        elif universal.any() and not row[~universal].any():
            out.append(EXTERNAL)
        else:
            out.append(INCOMPLETE)
    return out


class Diagram(object):
    """A collation diagram of one attributed call graph.

    Sample usage::

        d = Diagram(g)
        d.draw(ctx, 1000, 1000)

    Parameters
    ----------
    g : :py:class:`~fcg_robust.graph.AttributedGraph`
        A graph with (uncollated) features.
    node_style : :py:class:`~fcg_robust.style.StyleTable`
        Overrides may be keyed by status name (``"complete"``,
        ``"incomplete"``, ``"external"``) or by node id; node id overrides
        win.
    edge_style : :py:class:`~fcg_robust.style.ElementStyle`
        Only the stroke parameters are used.
    node_diameter : float
        Diameter of a node, in units of the row spacing.
    show_pruned : bool
        Draw nodes which Prune removes (and their edges) translucent.
    pruned_alpha : float
    """

    def __init__(self, g, node_style=default_node_style,
                 edge_style=default_edge_style, node_diameter=0.6,
                 show_pruned=True, pruned_alpha=0.3):
        self.g = g
        self.node_style = node_style
        self.edge_style = edge_style.stroke_only()
        self.node_diameter = node_diameter
        self.show_pruned = show_pruned
        self.pruned_alpha = pruned_alpha

        self.statuses = node_statuses(g)
        self.positions = layered_layout(g.n, g.edges)

    def _pruned(self, node):
        return self.show_pruned and self.statuses[node] != COMPLETE

    @property
    def bbox(self):
        """The bounding box of the image (x1, y1, x2, y2)."""
        if not self.positions:
            return (-1.0, -1.0, 1.0, 1.0)
        xs = [x for x, _ in self.positions.values()]
        ys = [y for _, y in self.positions.values()]
        margin = self.node_diameter / 2.0 + 0.25
        return (min(xs) - margin, min(ys) - margin,
                max(xs) + margin, max(ys) + margin)

    def node_style_of(self, node):
        style = self.node_style.resolve(node, self.statuses[node])
        if self._pruned(node):
            style = style.faded(self.pruned_alpha)
        return style

    def _draw_edge(self, ctx, src, dst):
        (x1, y1), (x2, y2) = self.positions[src], self.positions[dst]
        style = self.edge_style
        if self._pruned(src) or self._pruned(dst):
            style = style.faded(self.pruned_alpha)
        if src == dst:
            ctx.new_sub_path()
            ctx.arc(x1, y1 - self.node_diameter / 2.0,
                    self.node_diameter / 3.0, 0.0, 2.0 * pi)
        else:
            ctx.move_to(x1, y1)
            ctx.line_to(x2, y2)
        style.paint(ctx)

    def _draw_node(self, ctx, node):
        x, y = self.positions[node]
        ctx.new_sub_path()
        ctx.arc(x, y, self.node_diameter / 2.0, 0.0, 2.0 * pi)
        self.node_style_of(node).paint(ctx)

    def draw(self, ctx, width, height):
        """Draw the diagram centred in a ``width`` x ``height`` rectangle."""
        with ctx:
            x1, y1, x2, y2 = self.bbox
            bbox_width = x2 - x1
            bbox_height = y2 - y1
            scale = min(width / bbox_width, height / bbox_height)
            ctx.scale(scale, scale)

            x1 -= ((width / scale) - bbox_width) / 2.0
            y1 -= ((height / scale) - bbox_height) / 2.0
            ctx.translate(-x1, -y1)

            for src, dst in self.g.edges:
                self._draw_edge(ctx, int(src), int(dst))
            for node in range(self.g.n):
                self._draw_node(ctx, node)


def render_png(g, path, width=1000, height=None, transparent=False,
               **kwargs):
    """Render a collation diagram of ``g`` to a PNG file.

    When ``height`` is omitted it follows the diagram's aspect ratio.
    """
    d = Diagram(g, **kwargs)
    if height is None:
        x1, y1, x2, y2 = d.bbox
        ratio = (y2 - y1) / (x2 - x1)
        if ratio < 1.0:
            height = int(width * ratio)
        else:
            height, width = width, int(width / ratio)

    logger.info("Generating {}x{} diagram...".format(width, height))
    before = time.time()
    mode = cairo.FORMAT_ARGB32 if transparent else cairo.FORMAT_RGB24
    surface = cairo.ImageSurface(mode, width, height)
    ctx = cairo.Context(surface)
    if not transparent:
        with ctx:
            ctx.rectangle(0, 0, width, height)
            ctx.set_source_rgba(1.0, 1.0, 1.0, 1.0)
            ctx.fill()
    d.draw(ctx, width, height)
    surface.write_to_png(path)
    after = time.time()
    logger.info("Generated diagram in {:.2f}s".format(after - before))
    return width, height
