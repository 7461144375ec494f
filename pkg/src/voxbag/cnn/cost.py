"""Operation-count model for the convolutional extractor and the ensemble.

A convolution over an ``M x N x K`` grid with ``W`` filters of size
``n x n x t`` over ``c`` channels costs ``M*N*K*n^2*t*c*W`` multiply-adds;
the bagged ensemble costs ``B*D``.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError
from . import layers as L
from .network import NetworkSpec


@dataclass(frozen=True)
class CostParams:
    M: int = 1
    N: int = 1
    K: int = 1
    n: int = 1
    t: int = 1
    c: int = 1
    W: int = 1
    B: int = 1
    D: int = 1

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if int(value) != value or value < 1:
                raise ConfigError(f"cost parameter {name} must be a positive integer, got {value}")


def conv_cost(p: CostParams) -> int:
    return p.M * p.N * p.K * p.n * p.n * p.c * p.t * p.W


def ensemble_cost(p: CostParams) -> int:
    return p.B * p.D


def network_cost(network: NetworkSpec, n_bags: int, n_classifiers: int | None = None) -> dict:
    """Per-conv-layer and total cost of a network followed by the ensemble.

    Each conv layer is charged over its output grid with ``t`` the depth
    extent of its kernel and ``n`` its in-plane extent.
    """
    shapes = network.shapes()
    rows = []
    for i, layer in enumerate(network.layers):
        if not isinstance(layer, L.Conv):
            continue
        _, dd, hh, ww = shapes[i + 1]
        kd, kh, kw = layer.kernel
        if kh != kw:
            raise ConfigError(f"layer {i}: cost model assumes a square in-plane kernel, got {layer.kernel}")
        p = CostParams(M=dd, N=hh, K=ww, n=kh, t=kd, c=layer.in_ch, W=layer.out_ch)
        rows.append({"layer": i, "M": dd, "N": hh, "K": ww, "n": kh, "t": kd,
                     "c": layer.in_ch, "W": layer.out_ch, "macs": conv_cost(p)})
    ens = ensemble_cost(CostParams(B=n_bags, D=n_classifiers or n_bags))
    conv_total = sum(r["macs"] for r in rows)
    return {"conv_layers": rows, "conv_total": conv_total, "ensemble": ens, "total": conv_total + ens}
