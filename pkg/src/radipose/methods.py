"""Method spec strings: ``ENGINE[:lambda-list][+prior|+prior-calibrated][+shared][@blocks]``.

Examples::

    7pt                      pinhole 7-point solver on raw points (lambda 0)
    7pt:0,-0.6,-1.2+shared   distortion sampling with a shared lambda
    8pt+prior-calibrated     prior lambdas and focals, essential projection
    9ptFlambda               the 9-point F + lambda solver
    7pt:-0.9@R/t/l1/l2       refine only rotation, translation and lambdas

Refinement block tokens are ``R t f1 f2 l1 l2`` separated by ``/``; ``@none``
disables local optimization and omitting ``@`` refines every block.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .geometry import LAMBDA_RANGE
from .robust import BLOCKS, ENGINES, PriorInjection, RansacConfig, SamplingStrategy

BLOCK_TOKENS = {"R": "rotation", "t": "translation", "f1": "focal1", "f2": "focal2",
                "l1": "lambda1", "l2": "lambda2"}
_TOKEN_OF = {v: k for k, v in BLOCK_TOKENS.items()}
PRIOR_MODES = ("prior", "prior-calibrated")


class MethodSpecError(ValueError):
    pass


def _fmt(v: float) -> str:
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


@dataclass(frozen=True)
class MethodSpec:
    engine: str
    lambdas: Optional[tuple] = None
    prior: Optional[str] = None
    shared: bool = False
    blocks: frozenset = frozenset(BLOCKS)

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise MethodSpecError(f"unknown engine {self.engine!r}; valid engines: {', '.join(ENGINES)}")
        if self.prior is not None and self.prior not in PRIOR_MODES:
            raise MethodSpecError(f"unknown prior mode {self.prior!r}")
        if self.engine == "9ptFlambda" and (self.lambdas is not None or self.prior):
            raise MethodSpecError("9ptFlambda estimates lambda itself; no lambda list or prior allowed")
        if self.lambdas is not None:
            if self.prior:
                raise MethodSpecError("a lambda list and a prior are mutually exclusive")
            lams = tuple(float(v) for v in self.lambdas)
            if not lams:
                raise MethodSpecError("empty lambda list")
            bad = [v for v in lams if not LAMBDA_RANGE[0] <= v <= LAMBDA_RANGE[1]]
            if bad:
                raise MethodSpecError(f"lambda candidates {bad} outside {LAMBDA_RANGE}")
            object.__setattr__(self, "lambdas", lams)
        blocks = frozenset(self.blocks)
        if blocks - set(BLOCKS):
            raise MethodSpecError(f"unknown refinement blocks {sorted(blocks - set(BLOCKS))}")
        object.__setattr__(self, "blocks", blocks)

    @property
    def candidates(self) -> tuple:
        return self.lambdas if self.lambdas is not None else (0.0,)

    def render(self) -> str:
        out = self.engine
        if self.lambdas is not None:
            out += ":" + ",".join(_fmt(v) for v in self.lambdas)
        if self.prior:
            out += "+" + self.prior
        if self.shared:
            out += "+shared"
        if self.blocks != frozenset(BLOCKS):
            out += "@" + self.refinement
        return out

    __str__ = render

    @property
    def refinement(self) -> str:
        """Refinement blocks in canonical order, ``none`` when empty."""
        toks = [_TOKEN_OF[b] for b in BLOCKS if b in self.blocks]
        return "/".join(toks) if toks else "none"

    @property
    def sample(self) -> str:
        """Short description of what the solver is fed, for report rows."""
        if self.engine == "9ptFlambda":
            return "solver"
        if self.prior:
            return self.prior
        return "{" + ";".join(_fmt(v) for v in self.candidates) + "}"

    def strategy(self, priors: Optional[PriorInjection] = None):
        if self.engine == "9ptFlambda":
            return None
        if self.prior:
            if priors is None:
                raise MethodSpecError(f"method {self.render()} needs priors")
            if self.prior == "prior":
                # lambda priors only; focals stay unknown
                return PriorInjection(priors.lambda1, priors.lambda2,
                                      gravity1=priors.gravity1, gravity2=priors.gravity2)
            if not priors.calibrated:
                raise MethodSpecError(f"method {self.render()} needs focal priors for both images")
            return priors
        return SamplingStrategy.same(self.candidates, self.shared)

    def config(self, base: RansacConfig = RansacConfig()) -> RansacConfig:
        fields = {k: getattr(base, k) for k in base.__dataclass_fields__}
        fields.update(refine_blocks=self.blocks, shared=self.shared)
        return RansacConfig(**fields)


_SPEC_RE = re.compile(r"^(?P<engine>[A-Za-z0-9]+)(?::(?P<lams>[^+@]*))?(?P<mods>(?:\+[a-z-]+)*)(?:@(?P<blocks>.*))?$")


def parse_method(text: str) -> MethodSpec:
    s = text.strip()
    m = _SPEC_RE.match(s)
    if not m:
        raise MethodSpecError(f"cannot parse method spec {text!r}")
    engine = m.group("engine")
    if engine not in ENGINES:
        raise MethodSpecError(f"unknown engine {engine!r}; valid engines: {', '.join(ENGINES)}")
    lambdas = None
    if m.group("lams") is not None:
        try:
            lambdas = tuple(float(v) for v in m.group("lams").split(","))
        except ValueError:
            raise MethodSpecError(f"bad lambda list in {text!r}") from None
    prior, shared = None, False
    for mod in filter(None, m.group("mods").split("+")):
        if mod == "shared" and not shared:
            shared = True
        elif mod in PRIOR_MODES and prior is None:
            prior = mod
        else:
            raise MethodSpecError(f"unexpected modifier +{mod} in {text!r}")
    blocks = frozenset(BLOCKS)
    if m.group("blocks") is not None:
        raw = m.group("blocks")
        if raw == "none":
            blocks = frozenset()
        else:
            toks = raw.split("/")
            unknown = [t for t in toks if t not in BLOCK_TOKENS]
            if unknown:
                raise MethodSpecError(f"unknown refinement blocks {unknown}; valid: {' '.join(BLOCK_TOKENS)}")
            blocks = frozenset(BLOCK_TOKENS[t] for t in toks)
    return MethodSpec(engine, lambdas, prior, shared, blocks)


def parse_method_list(text: str) -> list[MethodSpec]:
    """Split a comma-separated list of specs; commas inside lambda lists are kept."""
    engines = "|".join(sorted(map(re.escape, ENGINES), key=len, reverse=True))
    parts = re.split(rf",\s*(?=(?:{engines})(?:[:+@]|$|,))", text.strip())
    specs = [parse_method(p) for p in parts if p.strip()]
    if not specs:
        raise MethodSpecError("no methods given")
    return specs
