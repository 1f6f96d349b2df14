"""Training configuration and the architecture-string grammar.

An architecture is a comma-separated chain like ``"Conv(2,7),Conv(2,15),
Pool(4,4),FC"``: one or more valid (no-padding, stride-1) convolutions,
optional max-pool stages, and a mandatory fully-connected head as the last
element.  The parser applies the same structural rules the inference engine
enforces when it loads a model, so a config that parses here produces an
export the engine will accept:

* the first convolution of an int8-input network reads raw int8 channels
  (the channel count need not be a power of two); every later convolution
  is binary and both its channel counts must be powers of two,
* every convolution's output channel count is a power of two,
* pooling windows must equal their stride (``Pool(k,k)``),
* the timestep chain must stay positive through every stage,
* ``FC`` terminates the chain and nothing may follow it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field


class ConfigError(ValueError):
    """An architecture string or config field that cannot be trained."""


# One conv stage must fit a 32-bit accumulator on the int8 entry layer.
MAX_INT8_DOT_LEN = 1 << 24

_CONV_RE = re.compile(r"Conv\((\d+),(\d+)\)\Z")
_POOL_RE = re.compile(r"Pool\((\d+),(\d+)\)\Z")


@dataclass(frozen=True)
class ConvStage:
    c_out: int
    k: int


@dataclass(frozen=True)
class PoolStage:
    pool_k: int
    pool_s: int


@dataclass(frozen=True)
class FcStage:
    pass


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def parse_architecture(text: str, timesteps: int, channels: int):
    """Parse and shape-check an architecture string.

    Returns ``(stages, chain)`` where ``stages`` is the list of stage
    descriptors (``FcStage`` last) and ``chain`` is the per-stage
    ``(timesteps, channels)`` shape list starting at the input shape.
    Raises :class:`ConfigError` naming the offending stage otherwise.
    """
    if timesteps < 1 or channels < 1:
        raise ConfigError(
            f"input shape ({timesteps}, {channels}) must be positive"
        )
    if not text.strip():
        raise ConfigError("architecture is empty")
    tokens = [tok.strip() for tok in text.split(",")]
    # Conv(a,b) and Pool(a,b) contain a comma, so rejoin the pieces the
    # naive split tore apart.
    merged: list[str] = []
    for tok in tokens:
        if merged and "(" in merged[-1] and ")" not in merged[-1]:
            merged[-1] = f"{merged[-1]},{tok}"
        else:
            merged.append(tok)
    if merged and merged[-1] == "":
        raise ConfigError("architecture ends with a trailing comma")

    stages: list = []
    chain: list[tuple[int, int]] = [(timesteps, channels)]
    seen_conv = False
    for i, tok in enumerate(merged):
        def bad(msg: str):
            raise ConfigError(f"stage {i} ({tok!r}): {msg}")

        if stages and isinstance(stages[-1], FcStage):
            bad("nothing may follow the fully-connected head")
        t, c = chain[-1]
        if tok == "FC":
            stages.append(FcStage())
            continue
        m = _CONV_RE.match(tok)
        if m:
            c_out, k = int(m.group(1)), int(m.group(2))
            if not _is_pow2(c_out):
                bad(f"c_out {c_out} is not a power of two")
            if k < 1:
                bad("kernel size must be >= 1")
            if seen_conv and not _is_pow2(c):
                bad(f"binary convolution input of {c} channels is not a "
                    f"power of two")
            if not seen_conv and k * c > MAX_INT8_DOT_LEN:
                bad(f"K * C_in = {k * c} exceeds the 32-bit accumulator "
                    f"bound {MAX_INT8_DOT_LEN}")
            if t < k:
                bad(f"input of {t} timesteps shorter than kernel {k}")
            chain.append((t - k + 1, c_out))
            stages.append(ConvStage(c_out, k))
            seen_conv = True
            continue
        m = _POOL_RE.match(tok)
        if m:
            pool_k, pool_s = int(m.group(1)), int(m.group(2))
            if pool_k < 1:
                bad("pool_k must be >= 1")
            if pool_k != pool_s:
                bad(f"only pool_k == pool_s is supported, got "
                    f"({pool_k}, {pool_s})")
            if not seen_conv:
                bad("int8 input must enter a convolution before pooling")
            if pool_k > t:
                bad(f"pool_k {pool_k} exceeds the {t} input timesteps")
            chain.append((t // pool_k, c))
            stages.append(PoolStage(pool_k, pool_s))
            continue
        bad("expected Conv(c_out,k), Pool(k,k), or FC")

    if not stages or not isinstance(stages[-1], FcStage):
        raise ConfigError("architecture must end with FC")
    if not seen_conv:
        raise ConfigError("architecture needs at least one convolution")
    return stages, chain


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on; two equal configs train to
    byte-identical exports.

    The recipe fields (optimizer choice is fixed to Adam, the rest live
    here) are unconstrained by the deployment format — only the exported
    integers matter downstream — so the defaults simply document what the
    synthetic-data pilot settled on.
    """

    architecture: str = "Conv(2,7),Conv(2,15),Pool(4,4),FC"
    timesteps: int = 32
    channels: int = 3
    n_classes: int = 2
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.01
    seed: int = 0
    n_train: int = 512
    n_val: int = 256
    n_manifest: int = 1000
    n_trees: int = 16
    rf_max_depth: int = 8
    stages: tuple = field(init=False, repr=False, compare=False)
    chain: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("timesteps", "channels", "n_classes", "batch_size",
                     "n_train", "n_val", "n_manifest", "n_trees",
                     "rf_max_depth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        stages, chain = parse_architecture(
            self.architecture, self.timesteps, self.channels
        )
        object.__setattr__(self, "stages", tuple(stages))
        object.__setattr__(self, "chain", tuple(chain))

    @property
    def fc_in_bits(self) -> int:
        t, c = self.chain[-1]
        return t * c
