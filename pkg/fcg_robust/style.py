"""Appearance of nodes and edges in collation diagrams.

An :py:class:`.ElementStyle` is an immutable bundle of Cairo drawing
parameters. A :py:class:`.StyleTable` picks the style of each diagram
element: a per-node override wins over the style of the node's completeness
status, which wins over the table default. Overrides only need to name the
parameters they change::

    >>> table = StyleTable(ElementStyle(fill=BLUE, line_width=0.03))
    >>> table.override("incomplete", fill=ORANGE)
    >>> table.override(7, stroke=RED)
    >>> s = table.resolve(7, "incomplete")
    >>> s.fill == ORANGE, s.stroke == RED, s.line_width
    (True, True, 0.03)
"""

from collections import namedtuple

from six import iteritems


class ElementStyle(namedtuple("ElementStyle",
                              "fill stroke line_width dash line_cap")):
    """Drawing parameters of one element; None leaves Cairo's default.

    ``fill`` and ``stroke`` are ``(r, g, b, a)`` tuples, ``dash`` a list of
    dash lengths and ``line_cap`` a ``cairo.LINE_CAP_*`` constant.
    """

    __slots__ = ()

    def __new__(cls, fill=None, stroke=None, line_width=None, dash=None,
                line_cap=None):
        return super(ElementStyle, cls).__new__(cls, fill, stroke,
                                                line_width, dash, line_cap)

    def faded(self, alpha):
        """This style with fill and stroke opacity multiplied by ``alpha``."""
        def fade(colour):
            if colour is None:
                return None
            r, g, b, a = colour
            return (r, g, b, a * alpha)
        return self._replace(fill=fade(self.fill), stroke=fade(self.stroke))

    def stroke_only(self):
        return self._replace(fill=None)

    def paint(self, ctx):
        """Fill then stroke the current path of ``ctx``.

        The path is consumed; the context's other state is restored.
        """
        ctx.save()
        try:
            if self.line_width is not None:
                ctx.set_line_width(self.line_width)
            if self.dash is not None:
                ctx.set_dash(self.dash)
            if self.line_cap is not None:
                ctx.set_line_cap(self.line_cap)
            if self.fill is not None:
                ctx.set_source_rgba(*self.fill)
                if self.stroke is not None:
                    ctx.fill_preserve()
                else:
                    ctx.fill()
            if self.stroke is not None:
                ctx.set_source_rgba(*self.stroke)
                ctx.stroke()
            ctx.new_path()
        finally:
            ctx.restore()


class StyleTable(object):
    """Element styles keyed by node id or status name.

    Parameters
    ----------
    default : :py:class:`.ElementStyle`
    """

    def __init__(self, default=None):
        self.default = ElementStyle() if default is None else default
        self._overrides = {}

    def override(self, key, **fields):
        """Change some parameters for the elements matching ``key``."""
        unknown = set(fields).difference(ElementStyle._fields)
        if unknown:
            raise ValueError("Unknown style fields {}".format(sorted(unknown)))
        self._overrides.setdefault(key, {}).update(fields)

    def __contains__(self, key):
        return key in self._overrides

    def copy(self):
        other = StyleTable(self.default)
        other._overrides = {k: dict(v) for k, v in iteritems(self._overrides)}
        return other

    def resolve(self, *keys):
        """The style of an element matching ``keys``, most specific first."""
        fields = {}
        for key in reversed(keys):
            fields.update(self._overrides.get(key, {}))
        return self.default._replace(**fields)
