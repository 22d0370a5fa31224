"""Model files: JSON descriptions of a structure, its singular set and measure.

Schema (keys not listed are rejected)::

    name          string
    dim           integer n
    params        {name: rational}; usable inside expressions, overridable
    fields        list of r component lists, each n expression strings
    singular_set  {"psi": expr, "solve_for": i}                    (optional)
    measure       {"kind": "popp", "closed_form": expr}            (closed form optional)
                  {"kind": "lebesgue"} | {"kind": "density", "expr": expr}
    distance      expr, exact distance from the singular set      (optional)
    box           n pairs [lo, hi]
    signs         {"x1": 1, ...} chart signs when no sides are given
    sides         {"pos"|"neg": {"signs", "fields", "measure",
                                 "validation_margin", "extras"}}
    eps           positive float                                   (optional)
    max_depth     bracket depth for flags (default 4)
    validation_margin  distance from Z kept by validation samples (default 0.05)
    separable     {"periodic": i, "transverse": j}                 (optional)

Per-side ``fields`` entries are keyed by 1-based field number and replace
that field on the side; per-side ``measure`` replaces the measure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from . import expr as ex
from .errors import (DomainError, ModelError, NotBracketGenerating,
                     ParseError)
from .operators import MeasureDensity
from .popp import popp_density
from .srgeom import (Chart, Hypersurface, SRStructure, VectorField, characteristic_test,
                     field_pairings, flag_at, is_equiregular_on)

TOP_KEYS = {"name", "dim", "params", "fields", "singular_set", "measure", "distance", "box",
            "signs", "sides", "eps", "max_depth", "validation_margin", "separable"}
SIDE_KEYS = {"signs", "fields", "measure", "validation_margin", "extras"}
BUNDLED = ("grushin", "martinet", "kmartinet", "ex52", "ex53")
VALIDATION_SAMPLES = 12
ZGRID_PER_PARAM = 5


@dataclass
class SideModel:
    label: str
    structure: SRStructure
    measure: MeasureDensity
    measure_kind: str
    delta: ex.Expr | None
    signs: dict
    margin: float
    extras: list = field(default_factory=list)


@dataclass
class Model:
    name: str
    dim: int
    params: dict
    box: list
    Z: Hypersurface | None
    sides: dict
    eps: float | None
    max_depth: int
    separable: dict | None
    source: dict = field(repr=False, default_factory=dict)
    notes: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def zbox(self):
        if self.Z is None:
            return []
        return [self.box[i - 1] for i in self.Z.param_indices]

    def side(self, label: str | None = None) -> SideModel:
        if label is None:
            label = next(iter(self.sides))
        if label not in self.sides:
            raise ModelError(f"model has no side {label!r}; sides are {sorted(self.sides)}")
        return self.sides[label]

    def structures(self) -> dict:
        return {k: v.structure for k, v in self.sides.items()}


def bundled_path(name: str) -> Path:
    stem = name[:-6] if name.endswith(".model") else name
    return Path(str(resources.files("srqc") / "models" / f"{stem}.model"))


def resolve(path_or_name: str) -> Path:
    p = Path(path_or_name)
    if p.exists():
        return p
    b = bundled_path(p.name)
    if b.exists():
        return b
    raise ModelError(f"no such model file or bundled model: {path_or_name}")


def _require(cond, msg, path):
    if not cond:
        raise ModelError(msg, path)


def _parse(text, dim, signs, params, path):
    if not isinstance(text, str):
        text = str(text)
    try:
        return ex.parse(text, dim, signs=signs, params=params)
    except ParseError as e:
        raise ModelError(f"{e} in {text!r}", path) from None


def _signs(raw, dim, path):
    out = {}
    for k, v in (raw or {}).items():
        _require(isinstance(k, str) and k.startswith("x") and k[1:].isdigit(),
                 f"bad variable name {k!r}", path)
        i = int(k[1:])
        _require(1 <= i <= dim, f"variable {k} outside the chart", path)
        _require(v in (1, -1), "signs must be +1 or -1", path)
        out[i] = int(v)
    return out


def _measure(raw, dim, signs, params, path):
    _require(isinstance(raw, dict) and "kind" in raw, "measure needs a kind", path)
    kind = raw["kind"]
    if kind == "lebesgue":
        return MeasureDensity.lebesgue(), "lebesgue"
    if kind == "popp":
        if "closed_form" in raw:
            rho = _parse(raw["closed_form"], dim, signs, params, f"{path}.closed_form")
            return MeasureDensity(rho, "popp-closed-form"), "popp"
        return None, "popp"
    if kind == "density":
        _require("expr" in raw, "density measure needs expr", path)
        return MeasureDensity(_parse(raw["expr"], dim, signs, params, f"{path}.expr"), "user"), "density"
    raise ModelError(f"unknown measure kind {kind!r}", f"{path}.kind")


def load_model(path_or_name, params=None, validate: bool = True, seed: int = 0) -> Model:
    path = resolve(str(path_or_name))
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ModelError(f"invalid JSON: {e}", str(path)) from None
    return build_model(raw, params=params, validate=validate, seed=seed, origin=str(path))


def build_model(raw: dict, params=None, validate: bool = True, seed: int = 0,
                origin: str = "<model>") -> Model:
    _require(isinstance(raw, dict), "top level must be an object", origin)
    unknown = set(raw) - TOP_KEYS
    _require(not unknown, f"unknown keys {sorted(unknown)}", origin)
    for k in ("name", "dim", "fields", "measure", "box"):
        _require(k in raw, f"missing required key {k!r}", origin)
    dim = raw["dim"]
    _require(isinstance(dim, int) and dim >= 1, "dim must be a positive integer", "dim")
    prm = {k: Fraction(str(v)) for k, v in (raw.get("params") or {}).items()}
    for k, v in (params or {}).items():
        _require(k in prm, f"unknown parameter {k!r}", "params")
        prm[k] = Fraction(str(v))
    fields_raw = raw["fields"]
    _require(isinstance(fields_raw, list) and fields_raw, "fields must be a non-empty list", "fields")
    for i, f in enumerate(fields_raw):
        _require(isinstance(f, list) and len(f) == dim,
                 f"field {i + 1} needs {dim} components", f"fields[{i}]")
    box = raw["box"]
    _require(isinstance(box, list) and len(box) == dim and all(len(b) == 2 and b[0] < b[1] for b in box),
             "box needs one [lo, hi] pair per coordinate", "box")
    box = [(float(a), float(b)) for a, b in box]

    Z = None
    if raw.get("singular_set") is not None:
        ss = raw["singular_set"]
        _require(isinstance(ss, dict) and "psi" in ss, "singular_set needs psi", "singular_set")
        psi = _parse(ss["psi"], dim, {}, prm, "singular_set.psi")
        solve_for = int(ss.get("solve_for", 1))
        _require(1 <= solve_for <= dim, "solve_for outside the chart", "singular_set.solve_for")
        Z = Hypersurface(psi, dim, solve_for)

    sides_raw = raw.get("sides")
    if sides_raw is None:
        labels = ("pos", "neg") if Z is not None else ("all",)
        sides_raw = {lab: {"signs": raw.get("signs", {})} for lab in labels}
    else:
        _require(isinstance(sides_raw, dict) and sides_raw, "sides must be an object", "sides")
        if Z is None:
            raise ModelError("sides need a singular_set", "sides")
        for lab in sides_raw:
            _require(lab in ("pos", "neg"), f"side labels are pos and neg, got {lab!r}", "sides")

    default_margin = float(raw.get("validation_margin", 0.05))
    sides = {}
    for lab in ("pos", "neg", "all"):
        if lab not in sides_raw:
            continue
        sr = sides_raw[lab] or {}
        sp = f"sides.{lab}"
        unknown = set(sr) - SIDE_KEYS
        _require(not unknown, f"unknown keys {sorted(unknown)}", sp)
        signs = _signs(sr.get("signs", raw.get("signs")), dim, f"{sp}.signs")
        comps = [list(f) for f in fields_raw]
        for key, comp in (sr.get("fields") or {}).items():
            i = int(key) - 1
            _require(0 <= i < len(comps) and len(comp) == dim, f"bad field override {key}",
                     f"{sp}.fields")
            comps[i] = comp
        vfs = [VectorField([_parse(c, dim, signs, prm, f"fields[{i}][{j}]")
                            for j, c in enumerate(f)]) for i, f in enumerate(comps)]
        chart = Chart(dim, signs, tuple(box))
        m, kind = _measure(sr.get("measure", raw["measure"]), dim, signs, prm, f"{sp}.measure")
        s = SRStructure(vfs, chart)
        if m is None:
            depth = int(raw.get("max_depth", 4))
            m = MeasureDensity(None, "popp-closed-form",
                               numeric=lambda p, s=s, depth=depth: popp_density(s, p, max_depth=depth).density)
        d = _parse(raw["distance"], dim, signs, prm, "distance") if raw.get("distance") else None
        extras = [tuple(map(float, p)) for p in sr.get("extras", [])]
        sides[lab] = SideModel(lab, s, m, kind, d, signs,
                               float(sr.get("validation_margin", default_margin)), extras)

    eps = raw.get("eps")
    model = Model(raw["name"], dim, prm, box, Z, sides, None if eps is None else float(eps),
                  int(raw.get("max_depth", 4)), raw.get("separable"), raw)
    if validate:
        validate_model(model, seed=seed)
    return model


def side_samples(model: Model, side: SideModel, count: int, rng) -> np.ndarray:
    """Random chart points on ``side`` at least the validation margin away from Z."""
    lo = np.array([b[0] for b in model.box])
    hi = np.array([b[1] for b in model.box])
    out = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > 200 * count:
            raise ModelError(f"cannot sample side {side.label!r} away from Z")
        p = rng.uniform(lo, hi)
        if model.Z is not None and side.label in ("pos", "neg"):
            v = model.Z.value(p)
            if np.sign(v) != model.Z.side_sign(side.label) or abs(v) < side.margin:
                continue
        out.append(p)
    return np.array(out)


def z_points(model: Model, per_param: int = ZGRID_PER_PARAM) -> np.ndarray:
    from .distance import z_grid
    us = z_grid(model.Z, model.zbox, per_param)
    return np.array([model.Z.point_on(u) for u in us])


def validate_model(model: Model, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    zdesc = f"{{{ex.to_string(model.Z.psi)}=0}}" if model.Z is not None else "the chart"
    for lab, side in model.sides.items():
        pts = side_samples(model, side, VALIDATION_SAMPLES, rng)
        try:
            flags = [flag_at(side.structure, p, model.max_depth) for p in pts]
        except NotBracketGenerating as e:
            raise ModelError(f"side {lab}: {e}") from None
        if side.measure_kind == "popp":
            eq = is_equiregular_on(side.structure, pts, max_depth=model.max_depth)
            if not eq:
                raise ModelError(f"side {lab}: Popp measure needs an equiregular region, "
                                 f"flags differ at {eq.witness[0]} and {eq.witness[2]}")
            where = f"off {zdesc}" if model.Z is not None else "on the chart"
            model.notes.append(f"{lab}: equiregular {where}, growth vector {flags[0].dims}")
            if side.measure.symbolic:
                err = 0.0
                for p in pts:
                    num = popp_density(side.structure, p, max_depth=model.max_depth).density
                    cf = side.measure.at(p)
                    err = max(err, abs(num - cf) / abs(num))
                if err > 1e-8:
                    raise ModelError(f"side {lab}: declared Popp closed form disagrees with "
                                     f"the computed density (relative error {err:.3g})")
                model.notes.append(f"{lab}: Popp closed form matches computed density "
                                   f"(max relative error {err:.1e})")
        else:
            model.notes.append(f"{lab}: bracket-generating at {len(pts)} samples, "
                               f"growth vector {flags[0].dims}")
        if side.measure.symbolic:
            for p in pts:
                try:
                    v = side.measure.at(p)
                except DomainError as e:
                    raise ModelError(f"side {lab}: measure undefined at {tuple(p)}: {e}") from None
                if not v > 0:
                    raise ModelError(f"side {lab}: measure density not positive at {tuple(p)}")
    if model.Z is None:
        model.notes.append("no singular set: complete smooth case, reported informationally")
        return
    zs = z_points(model)
    for q in zs:
        if not model.Z.is_submersion_at(q):
            raise ModelError(f"d psi vanishes on Z at {tuple(q)}")
    model.notes.append(f"psi is a submersion on the Z-grid ({len(zs)} points)")
    for lab, side in model.sides.items():
        char, skipped = 0, 0
        for q in zs:
            undefined = [v is None for v in field_pairings(side.structure, model.Z, q)]
            if any(undefined):
                skipped += 1
            try:
                if characteristic_test(side.structure, model.Z, q):
                    char += 1
            except DomainError:
                pass
        if skipped:
            model.warnings.append(f"{lab}: some fields cannot be evaluated on Z; "
                                  f"they were left out of the characteristic sweep")
        if char:
            model.warnings.append(f"{lab}: {char} characteristic points on the Z-grid")
        else:
            model.notes.append(f"{lab}: no characteristic points on Z-grid")
