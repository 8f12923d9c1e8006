"""Plain-text network, parameter and config files.

All three share one grammar: a header line ``relaynet-<kind> <version>``,
then whitespace-separated records, one per line. ``#`` starts a comment.
Layer numbers in files are 1-based. Floats are written with ``repr`` so they
read back bit-exactly.

Network file (``relaynet-network 1``)::

    layers <d>
    sizes <N_1> ... <N_d>
    receivers <M>
    h <i>                 followed by 1 line of N_i floats
    F <i> <l>             optional, l < i; N_i lines of N_l floats (row-major)
    g <i>                 N_i lines of M floats
    spatial               optional block, see below
    end

Every ``h`` and ``g`` block must be present; absent ``F`` blocks are zero.
The optional spatial block records how a random network was generated::

    spatial
    seed <int>
    n_relays <int>  cell_radius <f>  sector_deg <f>  alpha <f>  beam_deg <f>
    n_receivers <int>  receiver_angles_deg <f> ...      (one key per line)
    relay_positions       N lines "x y", generation order
    receiver_positions    M lines "x y"
    relay_order           1 line: generation index of each layered-network slot
    relay_layers          1 line: 1-based layer of each relay, generation order
    endspatial

Params file (``relaynet-params 1``)::

    layers <d>
    sizes <N_1> ... <N_d>
    w <i>                 1 line of N_i floats
    b <i>                 1 line of N_i floats
    polarity <p_1> ... <p_M>     optional receiver polarity (+1/-1)
    end

Config file (``relaynet-config 1``): one ``key value...`` pair per line;
keys are the long CLI option names without dashes (``pmax 0.64``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import DimensionError, LayeredNetwork, RelayParams

NETWORK_HEADER = "relaynet-network"
PARAMS_HEADER = "relaynet-params"
CONFIG_HEADER = "relaynet-config"
VERSION = 1
SPATIAL_KEYS = ("seed", "n_relays", "cell_radius", "sector_deg", "alpha", "beam_deg", "n_receivers",
                "receiver_angles_deg")


class FormatError(ValueError):
    def __init__(self, path, line, field, msg):
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: {field}: {msg}")
        self.line = line
        self.field = field


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


class _Reader:
    def __init__(self, path):
        self.path = path
        with open(path) as f:
            raw = f.read().splitlines()
        self.lines = []
        for no, text in enumerate(raw, 1):
            text = text.split("#", 1)[0].strip()
            if text:
                self.lines.append((no, text.split()))
        self.pos = 0

    def error(self, field, msg, line=None):
        if line is None:
            line = self.lines[min(self.pos, len(self.lines) - 1)][0] if self.lines else 0
        return FormatError(self.path, line, field, msg)

    def next(self, field):
        if self.pos >= len(self.lines):
            raise self.error(field, "unexpected end of file")
        item = self.lines[self.pos]
        self.pos += 1
        return item

    def header(self, kind):
        no, tok = self.next("header")
        if tok[0] != kind or len(tok) != 2:
            raise self.error("header", f"expected '{kind} {VERSION}'", no)
        if tok[1] != str(VERSION):
            raise self.error("header", f"unsupported format version {tok[1]}", no)

    def ints(self, tok, field, no, count=None):
        try:
            vals = [int(t) for t in tok]
        except ValueError:
            raise self.error(field, "expected integers", no) from None
        if count is not None and len(vals) != count:
            raise self.error(field, f"expected {count} values, got {len(vals)}", no)
        return vals

    def floats(self, field, count):
        no, tok = self.next(field)
        if len(tok) != count:
            raise self.error(field, f"expected {count} values, got {len(tok)}", no)
        try:
            return [float(t) for t in tok]
        except ValueError:
            raise self.error(field, "expected numbers", no) from None

    def matrix(self, field, rows, cols):
        return np.array([self.floats(field, cols) for _ in range(rows)]).reshape(rows, cols)

    def keyed(self, key, count=1):
        no, tok = self.next(key)
        if tok[0] != key:
            raise self.error(key, f"expected '{key}', got '{tok[0]}'", no)
        return no, tok[1:]


def _layer_index(reader, tok, field, no, d, count=1):
    idx = reader.ints(tok, field, no, count)
    if any(not 1 <= i <= d for i in idx):
        raise reader.error(field, f"layer index out of range 1..{d}", no)
    return [i - 1 for i in idx]


def _read_dims(reader):
    no, tok = reader.keyed("layers")
    (d,) = reader.ints(tok, "layers", no, 1)
    if d < 1:
        raise reader.error("layers", "need at least one layer", no)
    no, tok = reader.keyed("sizes")
    sizes = reader.ints(tok, "sizes", no, d)
    if any(n < 1 for n in sizes):
        raise reader.error("sizes", "layer sizes must be positive", no)
    return d, sizes


@dataclass
class SpatialRecord:
    settings: dict
    relay_pos: np.ndarray
    rx_pos: np.ndarray
    order: np.ndarray
    layer: np.ndarray  # 0-based


def save_network(net: LayeredNetwork, path, spatial=None) -> None:
    """Write ``net``; pass a :class:`~deeprelay.topology.SpatialNetwork` to keep its geometry."""
    out = [f"{NETWORK_HEADER} {VERSION}", f"layers {net.d}", "sizes " + " ".join(map(str, net.layer_sizes)),
           f"receivers {net.M}"]
    for i in range(net.d):
        out += [f"h {i + 1}", _fmt(net.h[i])]
    for (i, l) in sorted(net.F):
        out.append(f"F {i + 1} {l + 1}")
        out += [_fmt(row) for row in net.F[(i, l)]]
    for i in range(net.d):
        out.append(f"g {i + 1}")
        out += [_fmt(row) for row in net.g[i]]
    if spatial is not None:
        cfg = spatial.config
        out.append("spatial")
        out.append(f"seed {int(cfg.seed)}")
        out.append(f"n_relays {int(cfg.n_relays)}")
        for key in ("cell_radius", "sector_deg", "alpha", "beam_deg"):
            out.append(f"{key} {float(getattr(cfg, key))!r}")
        out.append(f"n_receivers {int(cfg.n_receivers)}")
        out.append("receiver_angles_deg " + _fmt(np.degrees(cfg.receiver_angles())))
        out.append("relay_positions")
        out += [_fmt(p) for p in spatial.relay_pos]
        out.append("receiver_positions")
        out += [_fmt(p) for p in spatial.rx_pos]
        out.append("relay_order " + " ".join(map(str, spatial.order)))
        out.append("relay_layers " + " ".join(str(int(k) + 1) for k in spatial.layer))
        out.append("endspatial")
    out.append("end")
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")


def read_network_file(path):
    """Parse a network file; returns ``(LayeredNetwork, SpatialRecord | None)``."""
    r = _Reader(path)
    r.header(NETWORK_HEADER)
    d, sizes = _read_dims(r)
    no, tok = r.keyed("receivers")
    (M,) = r.ints(tok, "receivers", no, 1)
    if M < 1:
        raise r.error("receivers", "need at least one receiver", no)
    h, g, F = [None] * d, [None] * d, {}
    spatial = None
    while True:
        no, tok = r.next("record")
        key = tok[0]
        if key == "end":
            break
        if key == "h":
            (i,) = _layer_index(r, tok[1:], "h", no, d)
            h[i] = np.array(r.floats(f"h {i + 1}", sizes[i]))
        elif key == "g":
            (i,) = _layer_index(r, tok[1:], "g", no, d)
            g[i] = r.matrix(f"g {i + 1}", sizes[i], M)
        elif key == "F":
            i, l = _layer_index(r, tok[1:], "F", no, d, 2)
            if l >= i:
                raise r.error("F", f"block F {i + 1} {l + 1} would create a loop (need l < i)", no)
            F[(i, l)] = r.matrix(f"F {i + 1} {l + 1}", sizes[i], sizes[l])
        elif key == "spatial":
            spatial = _read_spatial(r, sum(sizes), M)
        else:
            raise r.error("record", f"unknown record '{key}'", no)
    for name, blocks in (("h", h), ("g", g)):
        missing = [i + 1 for i, blk in enumerate(blocks) if blk is None]
        if missing:
            raise r.error(name, f"missing block for layer(s) {missing}", 0)
    try:
        net = LayeredNetwork(h=tuple(h), g=tuple(g), F=F)
    except DimensionError as e:
        raise FormatError(path, 0, "network", str(e)) from e
    return net, spatial


def _read_spatial(r, N, M):
    settings = {}
    for key in SPATIAL_KEYS:
        no, tok = r.keyed(key)
        if key == "receiver_angles_deg":
            settings[key] = tuple(float(t) for t in tok)
        elif key in ("seed", "n_relays", "n_receivers"):
            (settings[key],) = r.ints(tok, key, no, 1)
        else:
            settings[key] = float(tok[0])
    if settings["n_relays"] != N or settings["n_receivers"] != M:
        raise r.error("spatial", "relay/receiver counts disagree with the network dimensions")
    r.keyed("relay_positions")
    relay_pos = r.matrix("relay_positions", N, 2)
    r.keyed("receiver_positions")
    rx_pos = r.matrix("receiver_positions", M, 2)
    no, tok = r.keyed("relay_order")
    order = np.array(r.ints(tok, "relay_order", no, N))
    no, tok = r.keyed("relay_layers")
    layer = np.array(r.ints(tok, "relay_layers", no, N)) - 1
    r.keyed("endspatial")
    return SpatialRecord(settings, relay_pos, rx_pos, order, layer)


def load_network(path) -> LayeredNetwork:
    return read_network_file(path)[0]


def save_params(params: RelayParams, path, polarity=None) -> None:
    sizes = [len(v) for v in params.w]
    out = [f"{PARAMS_HEADER} {VERSION}", f"layers {len(sizes)}", "sizes " + " ".join(map(str, sizes))]
    for i, v in enumerate(params.w):
        out += [f"w {i + 1}", _fmt(v)]
    for i, v in enumerate(params.b):
        out += [f"b {i + 1}", _fmt(v)]
    if polarity is not None:
        out.append("polarity " + _fmt(polarity))
    out.append("end")
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")


def load_params(path):
    """Returns ``(RelayParams, polarity | None)``."""
    r = _Reader(path)
    r.header(PARAMS_HEADER)
    d, sizes = _read_dims(r)
    w, b = [None] * d, [None] * d
    polarity = None
    while True:
        no, tok = r.next("record")
        key = tok[0]
        if key == "end":
            break
        if key in ("w", "b"):
            (i,) = _layer_index(r, tok[1:], key, no, d)
            (w if key == "w" else b)[i] = np.array(r.floats(f"{key} {i + 1}", sizes[i]))
        elif key == "polarity":
            try:
                polarity = np.array([float(t) for t in tok[1:]])
            except ValueError:
                raise r.error("polarity", "expected numbers", no) from None
            if polarity.size == 0 or np.any(np.abs(polarity) != 1):
                raise r.error("polarity", "entries must be +1 or -1", no)
        else:
            raise r.error("record", f"unknown record '{key}'", no)
    for name, blocks in (("w", w), ("b", b)):
        missing = [i + 1 for i, blk in enumerate(blocks) if blk is None]
        if missing:
            raise r.error(name, f"missing block for layer(s) {missing}", 0)
    return RelayParams(tuple(w), tuple(b)), polarity


def read_config(path) -> dict:
    """``key -> list of string tokens`` from a config file."""
    r = _Reader(path)
    r.header(CONFIG_HEADER)
    out = {}
    for no, tok in r.lines[r.pos:]:
        if tok[0] == "end":
            break
        if len(tok) < 2:
            raise r.error(tok[0], "missing value", no)
        out[tok[0].replace("-", "_")] = tok[1:]
    return out
