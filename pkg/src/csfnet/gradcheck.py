"""Central finite-difference verification of every backward rule and composite block.

All checks run in float64 with step ``h = 1e-4``.  Small tensors are checked
coordinate by coordinate; large parameter tensors are checked along random
directions (one forward pair per direction), which covers every coordinate
at once.  If a relu mask or argmax differs between ``x +- h`` and ``x`` the
step straddles a kink where no derivative exists, so it is shrunk by 10x
(down to 1e-7) until both sides sit on the same smooth piece.
The error for a tensor is ``||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-6)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Tensor, default_dtype, trace_branches

H = 1e-4
MIN_H = 1e-7
TOLERANCE = 1e-4
FULL_COORDS_LIMIT = 64


@dataclass
class CheckResult:
    name: str
    module: str
    worst_error: float = 0.0
    worst_tensor: str = ""
    seeds: int = 0
    seconds: float = 0.0
    errors: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.worst_error)) and self.worst_error < TOLERANCE


def _rel_error(a: np.ndarray, n: np.ndarray) -> float:
    diff = np.linalg.norm(np.ravel(a - n))
    scale = max(np.linalg.norm(np.ravel(a)), np.linalg.norm(np.ravel(n)), 1e-6)
    return float(diff / scale)


def check_gradients(loss_fn: Callable[[], Tensor], tensors: dict[str, Tensor | list[Tensor]], h: float = H,
                    directions: int = 3, coord_limit: int = FULL_COORDS_LIMIT,
                    rng: np.random.Generator | None = None) -> dict[str, float]:
    """Relative error of analytic vs central-difference gradients for each named entry.

    An entry is a tensor or a list of tensors perturbed jointly.  Single
    tensors with at most ``coord_limit`` elements are checked coordinate-wise,
    everything else along ``directions`` random unit directions.  ``loss_fn``
    must rebuild the graph from the current ``.data`` and return a scalar.
    """
    rng = rng or np.random.default_rng(0)
    groups = {k: (list(v) if isinstance(v, (list, tuple)) else [v]) for k, v in tensors.items()}
    members = {id(t): t for g in groups.values() for t in g}.values()
    for t in members:
        if t.dtype != np.float64:
            raise TypeError("gradient checks need float64 tensors")
        t.grad = None
    loss_fn().backward()
    analytic = {id(t): (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for t in members}
    for t in members:
        t.grad = None

    def f() -> tuple[float, list]:
        with trace_branches() as trace:
            value = float(loss_fn().data)
        return value, trace

    _, base_trace = f()

    def central(set_offset: Callable[[float], None]) -> float:
        """Central difference, shrinking the step while a relu/max branch flips inside it."""
        step = h
        while True:
            set_offset(step)
            fp, tp = f()
            set_offset(-step)
            fm, tm = f()
            set_offset(0.0)
            if (tp == base_trace and tm == base_trace) or step / 10 < MIN_H:
                return (fp - fm) / (2 * step)
            step /= 10

    errors = {}
    for name, group in groups.items():
        if len(group) == 1 and group[0].size <= coord_limit:
            t = group[0]
            numeric = np.zeros_like(t.data)
            flat, nflat = t.data.reshape(-1), numeric.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]

                def set_offset(d, i=i, orig=orig):
                    flat[i] = orig + d
                nflat[i] = central(set_offset)
            errors[name] = _rel_error(analytic[id(t)], numeric)
            continue
        originals = [t.data.copy() for t in group]
        a_dir, n_dir = [], []
        for _ in range(directions):
            vs = [rng.standard_normal(t.shape) for t in group]
            norm = np.sqrt(sum(float((v * v).sum()) for v in vs))
            vs = [v / norm for v in vs]

            def set_offset(d, vs=vs):
                for t, o, v in zip(group, originals, vs):
                    t.data[...] = o + d * v
            a_dir.append(sum(float((analytic[id(t)] * v).sum()) for t, v in zip(group, vs)))
            n_dir.append(central(set_offset))
        errors[name] = _rel_error(np.array(a_dir), np.array(n_dir))
    return errors


# ---------------------------------------------------------------------------
# check builders: each returns (loss_fn, tensors) for a given generator
# ---------------------------------------------------------------------------


def _leaf(rng, *shape, low=-1.0, high=1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _away_from_zero(rng, *shape) -> Tensor:
    mag = rng.uniform(0.05, 1.0, size=shape)
    return Tensor(mag * rng.choice([-1.0, 1.0], size=shape), requires_grad=True)


def _distinct(rng, *shape) -> Tensor:
    """Values on a 0.05 grid in random order so maxima never tie within h."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) * 0.05 - 0.025 * n + rng.uniform(-0.01, 0.01, size=n)).reshape(shape)
    return Tensor(vals, requires_grad=True)


def _op_check(build):
    def make(rng):
        tensors, fn = build(rng)
        w = Tensor(rng.standard_normal(fn().shape))
        return (lambda: T.sum_(fn() * w)), tensors
    return make


def _simple(rng, op, *shapes, sampler=_leaf):
    tensors = {f"x{i}": sampler(rng, *s) for i, s in enumerate(shapes)}
    args = list(tensors.values())
    return tensors, (lambda: op(*args))


OP_CHECKS = {
    "add": _op_check(lambda r: _simple(r, T.add, (2, 3, 4), (1, 3, 1))),
    "mul": _op_check(lambda r: _simple(r, T.mul, (2, 3, 4), (2, 1, 4))),
    "neg": _op_check(lambda r: _simple(r, T.neg, (3, 4))),
    "relu": _op_check(lambda r: _simple(r, T.relu, (4, 4, 4), sampler=_away_from_zero)),
    "sigmoid": _op_check(lambda r: _simple(r, T.sigmoid, (4, 4, 4))),
    "softmax": _op_check(lambda r: _simple(r, lambda x: T.softmax(x, axis=1), (3, 5, 2))),
    "concat": _op_check(lambda r: _simple(r, lambda a, b: T.concat([a, b], axis=1), (1, 2, 2, 2, 2), (1, 3, 2, 2, 2))),
    "reshape": _op_check(lambda r: _simple(r, lambda x: T.reshape(x, (6, 4)), (2, 3, 4))),
    "transpose": _op_check(lambda r: _simple(r, lambda x: T.transpose(x, (2, 0, 1)), (2, 3, 4))),
    "sum": _op_check(lambda r: _simple(r, lambda x: T.sum_(x, axis=1), (3, 4, 2))),
    "mean": _op_check(lambda r: _simple(r, lambda x: T.mean(x, axis=(0, 2), keepdims=True), (3, 4, 2))),
    "max": _op_check(lambda r: _simple(r, lambda x: T.max_(x, axis=1), (3, 5, 2), sampler=_distinct)),
    "matmul": _op_check(lambda r: _simple(r, T.matmul, (2, 3, 4), (2, 4, 5))),
    "linear": _op_check(lambda r: _simple(r, T.linear, (4, 5), (3, 5), (3,))),
    "conv3d": _op_check(lambda r: _simple(r, lambda x, w, b: T.conv3d(x, w, b, 1, 1), (1, 2, 3, 3, 3), (2, 2, 3, 3, 3), (2,))),
    "conv3d_strided": _op_check(lambda r: _simple(r, lambda x, w, b: T.conv3d(x, w, b, 2, 1), (1, 2, 4, 4, 4), (2, 2, 3, 3, 3), (2,))),
    "pool3d_avg": _op_check(lambda r: _simple(r, lambda x: T.pool3d(x, "avg", 2, 2), (1, 2, 4, 4, 2))),
    "pool3d_max": _op_check(lambda r: _simple(r, lambda x: T.pool3d(x, "max", 2, 1), (1, 2, 3, 3, 3), sampler=_distinct)),
    "global_pool": _op_check(lambda r: _simple(r, lambda x: T.global_pool3d(x, "avg") + T.global_pool3d(x, "max"),
                                              (2, 2, 2, 2, 4), sampler=_distinct)),
    "upsample3d": _op_check(lambda r: _simple(r, lambda x: T.upsample3d(x, 2), (1, 2, 2, 2, 2))),
}


def _cross_entropy_check(rng):
    logits = _leaf(rng, 5, 2, low=-2, high=2)
    labels = rng.integers(0, 2, size=5)
    return (lambda: T.cross_entropy(logits, labels)), {"logits": logits}


def _diamond_check(rng):
    x = _leaf(rng, 3, 4)
    w = Tensor(rng.standard_normal((3, 4)))
    # x feeds two branches that meet again
    return (lambda: T.sum_((T.sigmoid(x) * x + T.mul(x, x)) * w)), {"x": x}


OP_CHECKS["cross_entropy"] = _cross_entropy_check
OP_CHECKS["diamond"] = _diamond_check


def _generic_point(module, rng) -> None:
    """Move zero-initialized biases off zero so dead regions do not sit exactly on a relu kink."""
    for name, p in module.named_parameters():
        if name.endswith("bias"):
            p.data[...] = rng.uniform(-0.1, 0.1, size=p.shape)


def _grouped(module, depth: int) -> dict[str, list]:
    groups: dict[str, list] = {}
    for name, p in module.named_parameters():
        groups.setdefault(".".join(name.split(".")[:depth]), []).append(p)
    return groups


def _module_check(module, forward, inputs: dict[str, Tensor], rng, group_depth: int | None = None):
    _generic_point(module, rng)
    out_shape = forward().shape
    w = Tensor(rng.standard_normal(out_shape))
    tensors = dict(inputs)
    tensors.update(_grouped(module, group_depth) if group_depth else dict(module.named_parameters()))
    return (lambda: T.sum_(forward() * w)), tensors


def _channel_attention(rng):
    from .spatial import ChannelAttention
    m = ChannelAttention(8, 4, rng)
    x = _leaf(rng, 2, 8, 2, 3, 3)
    return _module_check(m, lambda: m(x), {"input": x}, rng)


def _spatial_attention(rng):
    from .spatial import SpatialAttention
    m = SpatialAttention(3, rng)
    x = _leaf(rng, 1, 4, 3, 3, 3)
    return _module_check(m, lambda: m(x), {"input": x}, rng)


def _cbam(rng):
    from .spatial import CBAM
    m = CBAM(8, 4, 3, rng)
    x = _leaf(rng, 1, 8, 2, 4, 4)
    return _module_check(m, lambda: m(x), {"input": x}, rng)


def _residual_block(rng):
    from .spatial import ResidualBlock
    m = ResidualBlock(2, 4, rng)
    x = _leaf(rng, 1, 2, 3, 3, 3)
    return _module_check(m, lambda: m(x), {"input": x}, rng)


def _extract(rng):
    from .spatial import BackboneConfig, SpatialExtractor
    m = SpatialExtractor(BackboneConfig(input_shape=(8, 16, 16)), rng)
    x = _leaf(rng, 1, 1, 8, 16, 16, low=0.0, high=1.0)
    return _module_check(m, lambda: m(x), {"input": x}, rng, group_depth=3)


def _trf_refine(rng):
    from .trf import TemporalResidualFusion
    m = TemporalResidualFusion(4, rng)
    t0, t1 = _leaf(rng, 1, 4, 2, 2, 2), _leaf(rng, 1, 4, 2, 2, 2)
    return _module_check(m, lambda: m.refine(t0, t1), {"t0": t0, "t1": t1}, rng)


def _trf(rng):
    from .trf import TemporalResidualFusion
    m = TemporalResidualFusion(4, rng)
    m.lambda0.data[...] = rng.normal()
    m.lambda1.data[...] = rng.normal()
    t0, t1 = _leaf(rng, 1, 4, 2, 2, 2), _leaf(rng, 1, 4, 2, 2, 2)
    return _module_check(m, lambda: m(t0, t1), {"t0": t0, "t1": t1}, rng)


def _cross_attention(rng):
    from .cmaf import CrossModalAttention
    m = CrossModalAttention(6, 5, rng, attn_dim=4)
    x, y = _leaf(rng, 2, 3, 6), _leaf(rng, 2, 4, 5)

    def forward():
        ai, at = m(x, y)
        return T.concat([T.reshape(ai, (2, -1)), T.reshape(at, (2, -1))], axis=1)
    return _module_check(m, forward, {"x": x, "y": y}, rng)


def _classify(rng):
    from .cmaf import ClassifierHead, ClinicalEncoder, CrossModalAttention, classify
    enc = ClinicalEncoder(5, rng)
    att = CrossModalAttention(6, 5, rng, attn_dim=4)
    head = ClassifierHead(12, rng, hidden=8, zero_output=False)
    x, z = _leaf(rng, 2, 3, 6), _leaf(rng, 2, 4)
    labels = rng.integers(0, 2, size=2)

    def loss():
        ai, at = att(x, enc(z))
        return T.cross_entropy(classify(ai, at, x, head), labels)
    tensors = {"x": x, "clinical": z}
    for prefix, mod in (("encoder", enc), ("attention", att), ("head", head)):
        _generic_point(mod, rng)
        tensors.update({f"{prefix}.{k}": p for k, p in mod.named_parameters()})
    return loss, tensors


def _full_network(rng):
    from .model import CSFNet, ModelConfig
    from .spatial import BackboneConfig
    cfg = ModelConfig(backbone=BackboneConfig(input_shape=(8, 16, 16)))
    net = CSFNet(cfg, seed=int(rng.integers(1 << 30)))
    _generic_point(net, rng)
    net.head.fc2.weight.data[...] = rng.uniform(-0.3, 0.3, size=net.head.fc2.weight.shape)
    t0 = _leaf(rng, 1, 1, 8, 16, 16, low=0.0, high=1.0)
    t1 = _leaf(rng, 1, 1, 8, 16, 16, low=0.0, high=1.0)
    z = _leaf(rng, 1, 4)
    labels = rng.integers(0, 2, size=1)
    tensors = {"t0": t0, "t1": t1, "clinical": z}
    tensors.update(_grouped(net, 3))
    return (lambda: T.cross_entropy(net(t0, t1, z), labels)), tensors


MODULE_CHECKS: dict[str, dict[str, Callable]] = {
    "conv": OP_CHECKS,
    "cbam": {
        "channel_attention": _channel_attention,
        "spatial_attention": _spatial_attention,
        "cbam": _cbam,
        "residual_block": _residual_block,
        "extract": _extract,
    },
    "trf": {"trf_refine": _trf_refine, "trf": _trf},
    "cmaf": {"cross_attention": _cross_attention, "classify": _classify, "full_network": _full_network},
}

# expensive composites run on fewer seeds unless the caller asks otherwise
HEAVY = {"extract", "full_network"}


def run_check(name: str, builder: Callable, seeds: list[int], module: str = "") -> CheckResult:
    result = CheckResult(name=name, module=module)
    start = time.perf_counter()
    with default_dtype(np.float64):
        for seed in seeds:
            rng = np.random.default_rng(np.random.SeedSequence([seed, sum(map(ord, name))]))
            loss_fn, tensors = builder(rng)
            errs = check_gradients(loss_fn, tensors, rng=rng,
                                   directions=2 if name in HEAVY else 3,
                                   coord_limit=0 if name in HEAVY else FULL_COORDS_LIMIT)
            worst_name = max(errs, key=errs.get)
            result.errors.append(errs[worst_name])
            if errs[worst_name] >= result.worst_error or not np.isfinite(errs[worst_name]):
                result.worst_error = errs[worst_name]
                result.worst_tensor = worst_name
            result.seeds += 1
    result.seconds = time.perf_counter() - start
    return result


def run_suite(module: str = "all", seed: int = 0, n_seeds: int = 20, heavy_seeds: int | None = None) -> list[CheckResult]:
    """Run the checks of one module group (``conv``, ``cbam``, ``trf``, ``cmaf``) or ``all``."""
    if module != "all" and module not in MODULE_CHECKS:
        raise ValueError(f"unknown gradcheck module {module!r}; choose from all, {', '.join(MODULE_CHECKS)}")
    groups = MODULE_CHECKS if module == "all" else {module: MODULE_CHECKS[module]}
    heavy_seeds = n_seeds if heavy_seeds is None else heavy_seeds
    results = []
    for group, checks in groups.items():
        for name, builder in checks.items():
            count = heavy_seeds if name in HEAVY else n_seeds
            results.append(run_check(name, builder, list(range(seed, seed + count)), group))
    return results


def format_report(results: list[CheckResult]) -> str:
    lines = [f"{'module':<6} {'check':<18} {'seeds':>5} {'worst rel err':>14} {'tensor':<28} {'time s':>7}  status"]
    for r in results:
        lines.append(f"{r.module:<6} {r.name:<18} {r.seeds:>5} {r.worst_error:>14.3e} {r.worst_tensor[:28]:<28} "
                     f"{r.seconds:>7.2f}  {'PASS' if r.passed else 'FAIL'}")
    lines.append("")
    for module in dict.fromkeys(r.module for r in results):
        group = [r for r in results if r.module == module]
        worst = max(group, key=lambda r: r.worst_error)
        lines.append(f"worst {module}: {worst.worst_error:.3e} ({worst.name})")
    return "\n".join(lines)
