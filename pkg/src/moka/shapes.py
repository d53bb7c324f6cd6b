"""Adapter shape configurations, the LLaMA presets and trainable-parameter counts."""

from __future__ import annotations

from dataclasses import dataclass

from moka.adapter import PairShape

MODELS = ("llama2-7b", "llama3-8b", "custom")
VARIANTS = ("moka", "moka_s", "moka_s-qonly")

PRIMES_TO_97 = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97)

# (A rows, A cols, B rows, B cols), each instantiated twice per projection.
LLAMA_4096_SHAPES = ((64, 64, 64, 64), (32, 128, 128, 32), (128, 32, 32, 128), (16, 256, 256, 16), (256, 16, 16, 256))
LLAMA3_VALUE_SHAPES = ((32, 64, 32, 64), (16, 128, 64, 32), (64, 32, 16, 128), (8, 256, 128, 16), (128, 16, 8, 256))

# (layers, {projection: (out, in)})
MODEL_DIMS = {
    "llama2-7b": (32, {"q": (4096, 4096), "v": (4096, 4096)}),
    "llama3-8b": (32, {"q": (4096, 4096), "v": (1024, 4096)}),
}

# Published trainable-parameter counts, in millions.
REPORTED_MILLIONS = {
    ("llama2-7b", "moka"): 5.2,
    ("llama2-7b", "moka_s"): 4.2,
    ("llama3-8b", "moka"): 3.9,
    ("llama3-8b", "moka_s"): 2.1,
}


@dataclass(frozen=True)
class ProjectionSpec:
    name: str
    m: int
    n: int
    pairs: tuple[PairShape, ...]


@dataclass(frozen=True)
class ShapeConfig:
    model_name: str
    variant: str
    layer_count: int
    projections: tuple[ProjectionSpec, ...]

    def projection(self, name: str) -> ProjectionSpec:
        for p in self.projections:
            if p.name == name:
                return p
        raise KeyError(name)


@dataclass(frozen=True)
class Violation:
    projection: str
    pair_index: int
    message: str

    def __str__(self):
        return f"{self.projection}[{self.pair_index}]: {self.message}"


def twice(shapes) -> tuple[PairShape, ...]:
    return tuple(PairShape(*s) for s in shapes for _ in range(2))


def prime_pairs(m: int, n: int, width: int = 1, primes=PRIMES_TO_97) -> tuple[PairShape, ...]:
    """Identity-left pairs with ``B`` of shape ``p x width*p`` for each prime ``p``.

    The identity size is the smallest ``k`` with ``k * width * p >= n``; its
    output side ``k * p`` must then also cover ``m``.
    """
    pairs = []
    for p in primes:
        n_b = width * p
        k = max(-(-n // n_b), -(-m // p))
        pairs.append(PairShape(k, k, p, n_b, identity_a=True))
    return tuple(pairs)


def preset(model: str, variant: str) -> ShapeConfig:
    if model not in MODEL_DIMS:
        raise KeyError(f"unknown model {model!r}; choose from {sorted(MODEL_DIMS)}")
    layers, dims = MODEL_DIMS[model]
    q_m, q_n = dims["q"]
    v_m, v_n = dims["v"]
    if variant == "moka":
        v_shapes = LLAMA_4096_SHAPES if model == "llama2-7b" else LLAMA3_VALUE_SHAPES
        projections = (
            ProjectionSpec("q", q_m, q_n, twice(LLAMA_4096_SHAPES)),
            ProjectionSpec("v", v_m, v_n, twice(v_shapes)),
        )
    elif variant == "moka_s":
        # the value projection of llama3-8b maps 4096 -> 1024, hence p x 4p filters
        width = v_n // v_m
        projections = (
            ProjectionSpec("q", q_m, q_n, prime_pairs(q_m, q_n)),
            ProjectionSpec("v", v_m, v_n, prime_pairs(v_m, v_n, width=width)),
        )
    elif variant == "moka_s-qonly":
        projections = (ProjectionSpec("q", q_m, q_n, prime_pairs(q_m, q_n)),)
    else:
        raise KeyError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    return ShapeConfig(model, variant, layers, projections)


def count_trainable_params(config: ShapeConfig) -> int:
    """Factor entries plus one gate logit per pair, summed over projections and layers."""
    per_layer = sum(sum(p.num_params for p in proj.pairs) + len(proj.pairs) for proj in config.projections)
    return per_layer * config.layer_count


def format_millions(count: int) -> str:
    return f"{count / 1e6:.1f}M"


def validate_config(config: ShapeConfig) -> list[Violation]:
    out = []
    for proj in config.projections:
        if proj.m < 1 or proj.n < 1:
            out.append(Violation(proj.name, -1, f"projection dims must be positive, got {proj.m}x{proj.n}"))
            continue
        if not proj.pairs:
            out.append(Violation(proj.name, -1, "no pairs"))
        for i, s in enumerate(proj.pairs):
            if min(s.m_a, s.n_a, s.m_b, s.n_b) < 1:
                out.append(Violation(proj.name, i, "factor dims must be >= 1"))
                continue
            if s.n_a * s.n_b < proj.n:
                out.append(Violation(proj.name, i, f"n_a*n_b = {s.n_a * s.n_b} < n = {proj.n}"))
            if s.m_a * s.m_b < proj.m:
                out.append(Violation(proj.name, i, f"m_a*m_b = {s.m_a * s.m_b} < m = {proj.m}"))
            if s.identity_a and s.m_a != s.n_a:
                out.append(Violation(proj.name, i, f"identity factor must be square, got {s.m_a}x{s.n_a}"))
    if config.layer_count < 1:
        out.append(Violation("*", -1, f"layer_count must be >= 1, got {config.layer_count}"))
    return out
