"""Small builders shared by the test modules."""
from isosched.graph import ConvDims, LayerKind, LayerNode, MatMulDims, TaskDag, WorkloadSet


def conv(i, H=8, W=4, C=8, k=3, C_in=None, wb=4096, fill=None):
    return LayerNode(i, LayerKind.CONV, ConvDims(W, H, C, k, k, C if C_in is None else C_in), weight_bits=wb, fill=fill)


def matmul(i, N_k=16, h=2, d_k=8, n_q=16, wb=0, fill=None):
    return LayerNode(i, LayerKind.MATMUL, MatMulDims(N_k, h, d_k, n_q), weight_bits=wb, fill=fill)


def elementwise(i):
    return LayerNode(i, LayerKind.ELEMENTWISE)


def chain_task(d, layers, deadline=1000, **kw):
    return TaskDag(d, tuple(layers), tuple((k, k + 1) for k in range(len(layers) - 1)), deadline=deadline, **kw)


def single(task):
    return WorkloadSet((task,))
