"""Named gradient-check suites for every differentiable operation.

Checks run under the 64-bit switch: central differences on deep composites
are meaningless at 32-bit for small-gradient coordinates, and the dtype
switch exists precisely to tighten this verification. Tolerances stay at
their contract values (1e-2; 2e-2 for the whole-model subset).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import asbe as ab
from . import eulerff as ef
from . import hvda as hv
from . import model as M
from . import nn
from . import stairconv as sc
from . import tensor as T
from .tensor import GradcheckReport, ParamStore, Tensor, gradcheck

EPS = 1e-5
MODEL_TOL_FACTOR = 2.0  # whole-model subset runs at 2x the base tolerance


@dataclass
class CheckRow:
    name: str
    max_rel_err: float
    passed: bool
    n_checked: int


def _rx(shape, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return Tensor(scale * rng.standard_normal(shape))


def _merge(name: str, tol: float, reports: list[GradcheckReport]) -> CheckRow:
    err = max(r.max_rel_err for r in reports)
    return CheckRow(name, err, err <= tol, sum(r.n_checked for r in reports))


def _probe_loss(y: Tensor, probe: Tensor) -> Tensor:
    return T.tsum(T.mul(y, probe))


# ---------------------------------------------------------------------------
# per-scope checks; each returns a CheckRow

def check_elementwise(tol):
    x = _rx((10,), 1, 0.8)

    def f(v):
        a = T.silu(v)
        b = T.tanh(T.mul(a, a))
        c = T.add(T.sin(b), T.cos(T.softplus(a)))
        return T.tsum(T.mul(c, T.exp(T.relu(b) * -0.5)))

    return _merge("tensor.elementwise_chain", tol, [gradcheck(f, x, EPS, tol)])


def check_matmul(tol):
    a = _rx((3, 4), 2)
    b = _rx((4, 3), 3)
    r1 = gradcheck(lambda v: T.tsum(T.mul(T.matmul(v, b), T.matmul(v, b))), a, EPS, tol)
    r2 = gradcheck(lambda v: T.tsum(T.mul(T.matmul(a, v), T.matmul(a, v))), b, EPS, tol)
    return _merge("tensor.matmul", tol, [r1, r2])


def check_softmax(tol):
    x = _rx((3, 5), 4)
    probe = _rx((3, 5), 5)
    return _merge("tensor.softmax_rows", tol,
                  [gradcheck(lambda v: _probe_loss(T.softmax_rows(v), probe), x, EPS, tol)])


def check_conv2d(tol):
    x = _rx((1, 4, 5, 2), 6)
    w = _rx((3, 2, 2, 3), 7)
    b = _rx((3,), 8)
    kw = dict(stride=2, pad=(1, 0, 2, 1))
    probe = _rx((1, 2, 4, 3), 9)
    r1 = gradcheck(lambda v: _probe_loss(nn.conv2d(v, w, b, **kw), probe), x, EPS, tol)
    r2 = gradcheck(lambda v: _probe_loss(nn.conv2d(x, v, b, **kw), probe), w, EPS, tol)
    r3 = gradcheck(lambda v: _probe_loss(nn.conv2d(x, w, v, **kw), probe), b, EPS, tol)
    return _merge("nn.conv2d", tol, [r1, r2, r3])


def check_conv2d_groups(tol):
    x = _rx((1, 3, 3, 4), 10)
    w = _rx((1, 3, 2, 2), 11)
    probe = _rx((1, 3, 3, 2), 12)
    r = gradcheck(lambda v: _probe_loss(
        nn.conv2d(x, v, pad=(0, 0, 1, 1), groups=2), probe), w, EPS, tol)
    return _merge("nn.conv2d_groups", tol, [r])


def check_conv2d_transpose(tol):
    x = _rx((1, 3, 3, 2), 13)
    w = _rx((2, 2, 3, 2), 14)
    probe = _rx((1, 6, 6, 3), 15)
    r1 = gradcheck(lambda v: _probe_loss(nn.conv2d_transpose(v, w), probe), x, EPS, tol)
    r2 = gradcheck(lambda v: _probe_loss(nn.conv2d_transpose(x, v), probe), w, EPS, tol)
    return _merge("nn.conv2d_transpose", tol, [r1, r2])


def check_batch_norm(tol):
    x = _rx((2, 3, 3, 2), 16)
    probe = _rx((2, 3, 3, 2), 17)
    gamma, beta = _rx((2,), 18), _rx((2,), 19)

    def make_state():
        return nn.NormState(gamma, beta, np.zeros(2), np.ones(2))

    r1 = gradcheck(lambda v: _probe_loss(nn.batch_norm(v, make_state(), True), probe),
                   x, EPS, tol)
    r2 = gradcheck(lambda v: _probe_loss(
        nn.batch_norm(x, nn.NormState(v, beta, np.zeros(2), np.ones(2)), True), probe),
        gamma, EPS, tol)
    return _merge("nn.batch_norm", tol, [r1, r2])


def check_layer_norm(tol):
    x = _rx((1, 2, 2, 3), 20)
    probe = _rx((1, 2, 2, 3), 21)
    gamma, beta = _rx((3,), 22), _rx((3,), 23)
    r1 = gradcheck(lambda v: _probe_loss(nn.layer_norm(v, gamma, beta), probe), x, EPS, tol)
    r2 = gradcheck(lambda v: _probe_loss(nn.layer_norm(x, v, beta), probe), gamma, EPS, tol)
    return _merge("nn.layer_norm", tol, [r1, r2])


def check_avg_pool(tol):
    x = _rx((1, 4, 4, 2), 24)
    probe = _rx((1, 4, 4, 2), 25)
    return _merge("nn.avg_pool", tol,
                  [gradcheck(lambda v: _probe_loss(nn.avg_pool(v, 3), probe), x, EPS, tol)])


def check_mlp(tol):
    store = ParamStore()
    mlp = nn.Mlp(store, "m", np.random.default_rng(26), 4)
    x = _rx((1, 2, 2, 4), 27)
    probe = _rx((1, 2, 2, 4), 28)
    r1 = gradcheck(lambda v: _probe_loss(mlp(v), probe), x, EPS, tol)

    def fw(v):
        store.set_value("m.w1", v)
        return _probe_loss(mlp(x), probe)

    r2 = gradcheck(fw, store.value("m.w1"), EPS, tol)
    return _merge("nn.mlp_block", tol, [r1, r2])


def check_res_block(tol):
    store = ParamStore()
    blk = nn.ResBlock(store, "rb", np.random.default_rng(29), 2)
    x = _rx((1, 4, 4, 2), 30)
    probe = _rx((1, 4, 4, 2), 31)
    snap = store.snapshot_buffers()

    def f(v):
        store.load_buffers(snap)
        return _probe_loss(blk(v, training=True), probe)

    return _merge("nn.res_block", tol, [gradcheck(f, x, EPS, tol)])


def _stair_check(axis, seed, tol):
    store = ParamStore()
    stair = sc.StairConv(store, "s", np.random.default_rng(seed), axis, 2, 4, k=2)
    x = _rx((1, 4, 4, 2), seed + 1)
    probe = _rx((1, 4, 4, 4), seed + 2)
    snap = store.snapshot_buffers()

    def f(v):
        store.load_buffers(snap)
        return _probe_loss(stair(v, training=True), probe)

    def fw(v):
        store.load_buffers(snap)
        store.set_value("s.b2_" + ("left" if axis == sc.HORIZONTAL else "down") + ".conv.w", v)
        return _probe_loss(stair(x, training=True), probe)

    w0 = store.value("s.b2_" + ("left" if axis == sc.HORIZONTAL else "down") + ".conv.w")
    return [gradcheck(f, x, EPS, tol), gradcheck(fw, w0, EPS, tol)]


def check_stair_h(tol):
    return _merge("stair.horizontal", tol, _stair_check(sc.HORIZONTAL, 32, tol))


def check_stair_v(tol):
    return _merge("stair.vertical", tol, _stair_check(sc.VERTICAL, 36, tol))


def check_hvda_branch(tol):
    store = ParamStore()
    branch = hv.HvdaBranch(store, "br", np.random.default_rng(40), 2)
    x = _rx((1, 4, 4, 2), 41)
    probe = _rx((1, 4, 4, 2), 42)
    snap = store.snapshot_buffers()

    def f(v):
        store.load_buffers(snap)
        return _probe_loss(branch(v, training=True), probe)

    return _merge("hvda.branch", tol, [gradcheck(f, x, EPS, tol)])


def check_hvda_attention(tol):
    store = ParamStore()
    attn = hv.HvdaAttention(store, "at", np.random.default_rng(43), 2)
    x = _rx((1, 4, 4, 2), 44)
    probe = _rx((1, 4, 4, 2), 45)
    snap = store.snapshot_buffers()

    def f(v):
        store.load_buffers(snap)
        return _probe_loss(attn(v, training=True), probe)

    def fq(v):
        store.load_buffers(snap)
        store.set_value("at.proj_q.w", v)
        return _probe_loss(attn(x, training=True), probe)

    return _merge("hvda.attention", tol,
                  [gradcheck(f, x, EPS, tol),
                   gradcheck(fq, store.value("at.proj_q.w"), EPS, tol)])


def check_details_block(tol):
    store = ParamStore()
    blk = hv.DetailsTransformerBlock(store, "dtb", np.random.default_rng(46), 4)
    x = _rx((1, 4, 4, 4), 47)
    probe = _rx((1, 4, 4, 4), 48)
    snap = store.snapshot_buffers()

    def f(v):
        store.load_buffers(snap)
        return _probe_loss(blk(v, training=True), probe)

    return _merge("hvda.details_block", tol, [gradcheck(f, x, EPS, tol)])


def check_arconv(tol):
    store = ParamStore()
    ar = ab.ArConv(store, "ar", np.random.default_rng(49), 2)
    x = _rx((1, 5, 5, 2), 50)
    probe = _rx((1, 5, 5, 2), 51)
    r1 = gradcheck(lambda v: _probe_loss(ar(v), probe), x, EPS, tol)

    def fs(v):
        store.set_value("ar.shape2.w", v)
        return _probe_loss(ar(x), probe)

    def fk(v):
        store.set_value("ar.w", v)
        return _probe_loss(ar(x), probe)

    r2 = gradcheck(fs, store.value("ar.shape2.w"), EPS, tol)
    r3 = gradcheck(fk, store.value("ar.w"), EPS, tol)
    return _merge("asbe.arconv", tol, [r1, r2, r3])


def check_asbe_stem(tol):
    store = ParamStore()
    stem = ab.AsbeStem(store, "st", np.random.default_rng(52), 1, c_stem=4, c_mid=2)
    x = _rx((1, 6, 6, 1), 53)
    probe = _rx((1, 6, 6, 4), 54)
    return _merge("asbe.stem", tol,
                  [gradcheck(lambda v: _probe_loss(stem(v), probe), x, EPS, tol)])


def check_euler_expand(tol):
    store = ParamStore()
    stream = ef.EulerStream(store, "es", np.random.default_rng(55), 2)
    x = _rx((1, 3, 3, 2), 56)
    probe = _rx((1, 3, 3, 4), 57)
    return _merge("euler.expand", tol,
                  [gradcheck(lambda v: _probe_loss(stream.expand(v, "h"), probe), x, EPS, tol)])


def check_euler_stream(tol):
    store = ParamStore()
    stream = ef.EulerStream(store, "es", np.random.default_rng(58), 2)
    x = _rx((1, 4, 4, 2), 59)
    probe = _rx((1, 4, 4, 2), 60)
    return _merge("euler.stream", tol,
                  [gradcheck(lambda v: _probe_loss(stream(v), probe), x, EPS, tol)])


def check_euler_fuse(tol):
    store = ParamStore()
    fuse = ef.EulerFusion(store, "ff", np.random.default_rng(61), 2)
    xd = _rx((1, 3, 3, 2), 62)
    probe = _rx((1, 3, 3, 2), 63)
    xs = _rx((1, 3, 3, 2), 64)
    r1 = gradcheck(lambda v: _probe_loss(fuse(v, xd), probe), xs, EPS, tol)
    r2 = gradcheck(lambda v: _probe_loss(fuse(xs, v), probe), xd, EPS, tol)
    return _merge("euler.fuse", tol, [r1, r2])


def check_loss(tol):
    rng = np.random.default_rng(65)
    labels = rng.integers(0, 3, size=(1, 4, 4))
    x = Tensor(rng.standard_normal((1, 4, 4, 3)))
    return _merge("model.loss", tol,
                  [gradcheck(lambda v: M.segmentation_loss(v, labels), x, EPS, tol)])


def check_model_subset(tol):
    """sum(logits) gradient w.r.t. 20 random parameter coordinates.

    One taped backward supplies all analytic values; each coordinate is then
    verified by central differences with buffers restored between probes.
    """
    tol = tol * MODEL_TOL_FACTOR
    cfg = M.ModelConfig(h=32, w=32, in_channels=1, num_classes=4, base_width=16,
                        variant="full", seed=3)
    model = M.RdteUnet(cfg)
    store = model.store
    rng = np.random.default_rng(66)
    x = Tensor(rng.standard_normal((1, 32, 32, 1)))
    names = store.names()
    picks = []
    for _ in range(20):
        name = names[rng.integers(0, len(names))]
        flat = int(rng.integers(0, store.value(name).size))
        picks.append((name, flat))
    snap = store.snapshot_buffers()

    def loss_value() -> float:
        store.load_buffers(snap)
        with T.Tape():
            return T.tsum(model(x, training=True)).item()

    if loss_value() != loss_value():
        raise T.NondeterminismError("model forward not deterministic; check invalid")

    store.load_buffers(snap)
    with T.Tape() as tape:
        loss = T.tsum(model(x, training=True))
        grads = tape.grad(loss, [store.value(n) for n, _ in picks])

    max_rel = 0.0
    for (name, flat), g in zip(picks, grads):
        analytic = float(g.reshape(-1)[flat])
        base = store.value(name).data
        for sign in (+1.0, -1.0):
            arr = base.copy()
            arr.reshape(-1)[flat] += sign * EPS
            store.set_value(name, Tensor(arr))
            if sign > 0:
                hi_coord = float(arr.reshape(-1)[flat])
                f_plus = loss_value()
            else:
                lo_coord = float(arr.reshape(-1)[flat])
                f_minus = loss_value()
        store.set_value(name, Tensor(base))
        numeric = (f_plus - f_minus) / (hi_coord - lo_coord)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        max_rel = max(max_rel, rel)
    return CheckRow("model.param_subset", max_rel, max_rel <= tol, len(picks))


SCOPES = {
    "tensor": [check_elementwise, check_matmul, check_softmax],
    "nn": [check_conv2d, check_conv2d_groups, check_conv2d_transpose, check_batch_norm,
           check_layer_norm, check_avg_pool, check_mlp, check_res_block],
    "stair": [check_stair_h, check_stair_v],
    "hvda": [check_hvda_branch, check_hvda_attention, check_details_block],
    "asbe": [check_arconv, check_asbe_stem],
    "euler": [check_euler_expand, check_euler_stream, check_euler_fuse],
    "model": [check_loss, check_model_subset],
}


def run_suite(scope: str, tol: float = 1e-2) -> list[CheckRow]:
    """Run one scope (or 'all'); always under the float64 switch."""
    if scope == "all":
        names = list(SCOPES)
    elif scope in SCOPES:
        names = [scope]
    else:
        raise T.ConfigError(f"unknown gradcheck scope {scope!r}; "
                            f"choose from {list(SCOPES) + ['all']}")
    rows = []
    with T.using_dtype(np.float64):
        for s in names:
            for fn in SCOPES[s]:
                rows.append(fn(tol))
    return rows
