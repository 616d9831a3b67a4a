"""Reader and canonical writer for ``.ganet`` network files.

Format (line based, ``#`` starts a comment line)::

    [system]
    title = "three coupled systems"
    n = 3
    inputs = 1

    [row 1]
    agg = sum
    gain 3 = "0.9*r"
    external = "r"

    [dynamics 1]              # optional, all or none
    self = 1.0
    agg = sum
    state 3 = "0.9*r"
    input 1 = "r"

    [lyapunov 1]              # optional, all or none
    shape = abs               # abs | scaled:<c> | quadratic:<w>
    agg = sum
    rate = "0.05*r"
    gain 3 = "inv(0.95*r) o 0.9*r"
    external = "inv(0.95*r)"

    [analysis]                # optional
    grid = 0.001, 1000.0, 121
    alpha = 0.1
    ...

Indices are 1-based.  Unknown sections and keys are rejected.  Leading
comment lines are kept and written back; :func:`format_spec` emits the
canonical layout, so canonical files survive a read/write cycle unchanged.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from .dynamics import VectorFieldSpec
from .kfun import ExprSyntaxError, FnClass, GridSpec, KFunError, ScalarFn, Zero, format_fn, parse_fn
from .lyapunov import ABS, QUADRATIC, SCALED, LyapunovFn
from .network import MAX, SUM, GainNetwork, NetworkError


class SpecError(ValueError):
    """Syntax or semantic error with a 1-based line/column position."""

    def __init__(self, message: str, line: int, col: int, expected=()):
        self.message = message
        self.line = line
        self.col = col
        self.expected = list(expected)
        text = f"line {line}, col {col}: {message}"
        if self.expected:
            text += "; expected: " + ", ".join(self.expected)
        super().__init__(text)


@dataclass(frozen=True)
class AnalysisConfig:
    grid: GridSpec = GridSpec()
    alpha: tuple = (1.0, 0.5, 0.2, 0.1, 0.05, 0.01)
    rays: int = 512
    seeds: int = 16
    iterations: int = 200
    cycle_cap: int = 10_000
    samples: int = 10_000
    horizon: float = 60.0
    dt: float = 1e-3


@dataclass
class SpecModel:
    title: str
    network: GainNetwork
    inputs: int = 1
    dynamics: Optional[VectorFieldSpec] = None
    lyapunov: Optional[list] = None
    analysis: Optional[AnalysisConfig] = None
    comments: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.network.n

    def config(self) -> AnalysisConfig:
        return self.analysis if self.analysis is not None else AnalysisConfig()


# --------------------------------------------------------------------------
# reading

_SECTION = re.compile(r"^\[\s*([A-Za-z_]+)(?:\s+(\S+))?\s*\]\s*$")
_KEY = re.compile(r"^([A-Za-z_]+)(?:\s+(\S+))?\s*=\s*(.*)$")

_ROW_KEYS = ["agg", "gain <j>", "external"]
_DYN_KEYS = ["self", "agg", "state <j>", "input <k>"]
_LYA_KEYS = ["shape", "agg", "rate", "gain <j>", "external"]
_SYS_KEYS = ["title", "n", "inputs"]
_ANA_KEYS = ["grid", "alpha", "rays", "seeds", "iterations", "cycle_cap", "samples", "horizon", "dt"]
_INDEXED = {"row": ("gain",), "dynamics": ("state", "input"), "lyapunov": ("gain",)}


@dataclass
class _Entry:
    key: str
    index: Optional[int]
    value: str
    line: int
    col: int  # column of the value


@dataclass
class _Section:
    kind: str
    index: Optional[int]
    line: int
    end: tuple = (0, 0)
    entries: list = field(default_factory=list)


def _unquote(e: _Entry) -> tuple:
    v = e.value.strip()
    if not (len(v) >= 2 and v[0] == '"' and v[-1] == '"'):
        raise SpecError(f"value of '{e.key}' must be a quoted string", e.line, e.col, ['"..."'])
    body = v[1:-1]
    out = []
    k = 0
    while k < len(body):
        ch = body[k]
        if ch == "\\" and k + 1 < len(body) and body[k + 1] in '"\\':
            out.append(body[k + 1])
            k += 2
            continue
        if ch == '"':
            raise SpecError("unescaped quote in string", e.line, e.col + 1 + k)
        out.append(ch)
        k += 1
    return "".join(out), e.col + 1


def _expr(e: _Entry) -> ScalarFn:
    text, col = _unquote(e)
    if "\\" in text or '"' in text:
        raise SpecError("expression contains escape characters", e.line, col)
    try:
        return parse_fn(text)
    except ExprSyntaxError as exc:
        raise SpecError(f"bad expression: {exc.message}", e.line, col + exc.pos, exc.expected) from None


def _int(e: _Entry, lo: int = 0) -> int:
    try:
        v = int(e.value.strip())
    except ValueError:
        raise SpecError(f"'{e.key}' must be an integer", e.line, e.col, ["integer"]) from None
    if v < lo:
        raise SpecError(f"'{e.key}' must be at least {lo}", e.line, e.col)
    return v


def _float(e: _Entry, text: Optional[str] = None) -> float:
    try:
        return float((text if text is not None else e.value).strip())
    except ValueError:
        raise SpecError(f"'{e.key}' must be a number", e.line, e.col, ["number"]) from None


def _agg(e: _Entry) -> str:
    v = e.value.strip()
    if v not in (SUM, MAX):
        raise SpecError(f"aggregation must be 'sum' or 'max', got {v!r}", e.line, e.col, [SUM, MAX])
    return v


def _scan(text: str):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    comments = []
    sections = []
    cur = None
    for ln, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r")
        s = line.strip()
        if not s or s.startswith("#"):
            if not sections and s.startswith("#"):
                comments.append(s)
            continue
        m = _SECTION.match(s)
        if m:
            if cur is not None:
                cur.end = (ln, 1)
            kind, idx = m.group(1), m.group(2)
            if kind not in ("system", "row", "dynamics", "lyapunov", "analysis"):
                raise SpecError(f"unknown section [{kind}]", ln, line.index("[") + 2,
                                ["system", "row <i>", "dynamics <i>", "lyapunov <i>", "analysis"])
            if kind in _INDEXED:
                if idx is None or not idx.isdigit():
                    raise SpecError(f"section [{kind}] needs a positive index", ln, len(line.rstrip()), ["<i>"])
                idx = int(idx)
            elif idx is not None:
                raise SpecError(f"section [{kind}] takes no index", ln, line.index(idx) + 1, ["]"])
            cur = _Section(kind, idx, ln)
            sections.append(cur)
            continue
        if cur is None:
            raise SpecError("entry outside of any section", ln, 1, ["[system]"])
        m = _KEY.match(s)
        col0 = len(line) - len(line.lstrip()) + 1
        if not m:
            raise SpecError("expected 'key = value'", ln, col0, ["="])
        key, idx, _ = m.groups()
        valid = _valid_keys(cur.kind)
        if key not in [k.split()[0] for k in valid]:
            raise SpecError(f"unknown key '{key}' in [{cur.kind}]", ln, col0, valid)
        needs_idx = key in _INDEXED.get(cur.kind, ())
        if needs_idx and (idx is None or not idx.isdigit()):
            raise SpecError(f"key '{key}' needs a positive index", ln, col0 + len(key) + 1, ["<j>"])
        if not needs_idx and idx is not None:
            raise SpecError(f"key '{key}' takes no index", ln, line.index(idx, col0 - 1) + 1, ["="])
        vcol = line.index("=", col0 - 1) + 2
        while vcol - 1 < len(line) and line[vcol - 1] == " ":
            vcol += 1
        cur.entries.append(_Entry(key, int(idx) if needs_idx else None, m.group(3).strip(), ln, vcol))
    eof = (len(lines) + 1, 1)
    if cur is not None:
        cur.end = eof
    return comments, sections, eof


def _valid_keys(kind: str):
    return {"system": _SYS_KEYS, "row": _ROW_KEYS, "dynamics": _DYN_KEYS,
            "lyapunov": _LYA_KEYS, "analysis": _ANA_KEYS}[kind]


def _missing(sec: _Section, keys, eof):
    have = {e.key for e in sec.entries}
    miss = [k for k in keys if k not in have]
    if miss:
        where = "end of file" if sec.end == eof else f"end of section [{sec.kind}{'' if sec.index is None else ' ' + str(sec.index)}]"
        raise SpecError(f"unexpected {where}: missing required key", sec.end[0], sec.end[1], miss)


def _unique(sec: _Section):
    seen = {}
    for e in sec.entries:
        k = (e.key, e.index)
        if k in seen:
            raise SpecError(f"duplicate key '{e.key}{'' if e.index is None else ' ' + str(e.index)}'", e.line, 1)
        seen[k] = e


def _index(e: _Entry, n: int, what: str) -> int:
    if not 1 <= e.index <= n:
        raise SpecError(f"{what} index {e.index} out of range 1..{n}", e.line, 1)
    return e.index - 1


def parse_spec(text: str) -> SpecModel:
    """Parse ``.ganet`` text; raises :class:`SpecError` with a position."""
    comments, sections, eof = _scan(text)
    by_kind = {}
    for sec in sections:
        _unique(sec)
        key = (sec.kind, sec.index)
        if key in by_kind:
            raise SpecError(f"duplicate section [{sec.kind}{'' if sec.index is None else ' ' + str(sec.index)}]", sec.line, 1)
        by_kind[key] = sec
    if ("system", None) not in by_kind:
        raise SpecError("missing [system] section", eof[0], eof[1], ["[system]"])
    sysec = by_kind[("system", None)]
    _missing(sysec, ["n"], eof)
    vals = {e.key: e for e in sysec.entries}
    n = _int(vals["n"], 1)
    title = _unquote(vals["title"])[0] if "title" in vals else ""
    m_inputs = _int(vals["inputs"], 0) if "inputs" in vals else 1

    for (kind, idx), sec in by_kind.items():
        if idx is not None and not 1 <= idx <= n:
            raise SpecError(f"section index {idx} out of range 1..{n}", sec.line, 1)

    # rows
    agg, gamma, ext = [], [], []
    for i in range(1, n + 1):
        sec = by_kind.get(("row", i))
        if sec is None:
            raise SpecError(f"missing section [row {i}]", eof[0], eof[1], [f"[row {i}]"])
        _missing(sec, ["agg"], eof)
        row = [Zero()] * n
        e_ext = Zero()
        a = SUM
        for e in sec.entries:
            if e.key == "agg":
                a = _agg(e)
            elif e.key == "gain":
                j = _index(e, n, "gain")
                f = _expr(e)
                if j == i - 1 and not isinstance(f, Zero):
                    raise SpecError(f"row {i}: diagonal gain must be absent (zero)", e.line, 1)
                if not isinstance(f, Zero) and f.tag != FnClass.KINF:
                    raise SpecError(f"row {i}: gain {e.index} is not of class K-infinity", e.line, e.col)
                row[j] = f
            else:
                e_ext = _expr(e)
        agg.append(a)
        gamma.append(tuple(row))
        ext.append(e_ext)
    try:
        net = GainNetwork(tuple(agg), tuple(gamma), tuple(ext))
    except NetworkError as exc:
        raise SpecError(str(exc), by_kind[("row", 1)].line, 1) from None

    dyn = _parse_dynamics(by_kind, n, m_inputs, eof)
    lya = _parse_lyapunov(by_kind, n, agg, eof)
    ana = _parse_analysis(by_kind.get(("analysis", None)))
    return SpecModel(title, net, m_inputs, dyn, lya, ana, comments)


def _all_or_none(by_kind, kind, n, eof):
    present = [i for i in range(1, n + 1) if (kind, i) in by_kind]
    if present and len(present) != n:
        missing = [i for i in range(1, n + 1) if i not in present][0]
        raise SpecError(f"[{kind}] sections must cover every subsystem", eof[0], eof[1], [f"[{kind} {missing}]"])
    return bool(present)


def _parse_dynamics(by_kind, n, m, eof):
    if not _all_or_none(by_kind, "dynamics", n, eof):
        return None
    rates, agg, state, inputs = [], [], [], []
    for i in range(1, n + 1):
        sec = by_kind[("dynamics", i)]
        _missing(sec, ["self", "agg"], eof)
        row = [Zero()] * n
        inp = [Zero()] * m
        for e in sec.entries:
            if e.key == "self":
                rates.append(_float(e))
                if not rates[-1] > 0:
                    raise SpecError("self rate must be positive", e.line, e.col)
            elif e.key == "agg":
                agg.append(_agg(e))
            elif e.key == "state":
                j = _index(e, n, "state")
                if j == i - 1:
                    raise SpecError(f"dynamics {i}: self coupling belongs in 'self'", e.line, 1)
                row[j] = _expr(e)
            else:
                row_k = _index(e, m, "input")
                inp[row_k] = _expr(e)
        state.append(tuple(row))
        inputs.append(tuple(inp))
    return VectorFieldSpec(tuple(rates), tuple(agg), tuple(state), tuple(inputs))


def _parse_lyapunov(by_kind, n, row_agg, eof):
    if not _all_or_none(by_kind, "lyapunov", n, eof):
        return None
    parts = []
    for i in range(1, n + 1):
        sec = by_kind[("lyapunov", i)]
        _missing(sec, ["shape", "rate"], eof)
        shape, param, rate, agg = ABS, 1.0, None, row_agg[i - 1]
        gains = [Zero()] * n
        ext = Zero()
        for e in sec.entries:
            if e.key == "shape":
                kind, _, par = e.value.strip().partition(":")
                if kind not in (ABS, SCALED, QUADRATIC) or (kind == ABS) == bool(par):
                    raise SpecError(f"bad shape {e.value.strip()!r}", e.line, e.col,
                                    ["abs", "scaled:<c>", "quadratic:<w>"])
                shape = kind
                if par:
                    param = _float(e, par)
                    if not param > 0:
                        raise SpecError("shape parameter must be positive", e.line, e.col)
            elif e.key == "agg":
                agg = _agg(e)
            elif e.key == "rate":
                rate = _expr(e)
            elif e.key == "gain":
                j = _index(e, n, "gain")
                if j == i - 1:
                    raise SpecError(f"lyapunov {i}: diagonal gain must be absent (zero)", e.line, 1)
                gains[j] = _expr(e)
            else:
                ext = _expr(e)
        parts.append(LyapunovFn(i - 1, shape, param, rate, agg, tuple(gains), ext))
    return parts


def _parse_analysis(sec):
    if sec is None:
        return None
    kw = {}
    for e in sec.entries:
        if e.key == "grid":
            parts = [p for p in e.value.split(",")]
            if len(parts) != 3:
                raise SpecError("grid needs 'r_min, r_max, points'", e.line, e.col, ["r_min, r_max, points"])
            try:
                kw["grid"] = GridSpec(float(parts[0]), float(parts[1]), int(parts[2]))
            except (ValueError, KFunError) as exc:
                raise SpecError(f"bad grid: {exc}", e.line, e.col) from None
        elif e.key == "alpha":
            vals = tuple(_float(e, p) for p in e.value.split(","))
            if not vals or any(v <= 0 for v in vals):
                raise SpecError("alpha values must be positive", e.line, e.col)
            kw["alpha"] = vals
        elif e.key in ("horizon", "dt"):
            kw[e.key] = _float(e)
        else:
            kw[e.key] = _int(e, 1)
    return AnalysisConfig(**kw)


def read_spec(path) -> SpecModel:
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read())


# --------------------------------------------------------------------------
# writing


def _q(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def format_spec(model: SpecModel) -> str:
    """Canonical text of ``model``; ``parse_spec(format_spec(m))`` equals ``m``."""
    out = list(model.comments)
    if out:
        out.append("")
    net = model.network
    out += ["[system]", f"title = {_q(model.title)}", f"n = {net.n}", f"inputs = {model.inputs}"]
    for i in range(net.n):
        out += ["", f"[row {i + 1}]", f"agg = {net.agg[i]}"]
        out += [f"gain {j + 1} = {_q(format_fn(net.gamma[i][j]))}" for j in net.nonzero(i)]
        if not isinstance(net.external[i], Zero):
            out.append(f"external = {_q(format_fn(net.external[i]))}")
    if model.dynamics is not None:
        d = model.dynamics
        for i in range(d.n):
            out += ["", f"[dynamics {i + 1}]", f"self = {d.rates[i]!r}", f"agg = {d.agg[i]}"]
            out += [f"state {j + 1} = {_q(format_fn(g))}" for j, g in enumerate(d.state[i]) if not isinstance(g, Zero)]
            out += [f"input {k + 1} = {_q(format_fn(g))}" for k, g in enumerate(d.inputs[i]) if not isinstance(g, Zero)]
    if model.lyapunov is not None:
        for p in sorted(model.lyapunov, key=lambda p: p.index):
            out += ["", f"[lyapunov {p.index + 1}]", f"shape = {p.shape_text()}", f"agg = {p.agg}",
                    f"rate = {_q(format_fn(p.rate))}"]
            out += [f"gain {j + 1} = {_q(format_fn(g))}" for j, g in enumerate(p.gains) if not isinstance(g, Zero)]
            if not isinstance(p.external, Zero):
                out.append(f"external = {_q(format_fn(p.external))}")
    if model.analysis is not None:
        a = model.analysis
        g = a.grid
        out += [
            "",
            "[analysis]",
            f"grid = {g.r_min!r}, {g.r_max!r}, {g.points}",
            "alpha = " + ", ".join(repr(float(c)) for c in a.alpha),
            f"rays = {a.rays}",
            f"seeds = {a.seeds}",
            f"iterations = {a.iterations}",
            f"cycle_cap = {a.cycle_cap}",
            f"samples = {a.samples}",
            f"horizon = {a.horizon!r}",
            f"dt = {a.dt!r}",
        ]
    return "\n".join(out) + "\n"


def write_spec(model: SpecModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_spec(model))


def model_equal(a: SpecModel, b: SpecModel) -> bool:
    """Structural equality of two parsed models (via their canonical text)."""
    return format_spec(a) == format_spec(b)
