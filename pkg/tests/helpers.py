import numpy as np

from spikeconv.netspec import LayerSpec, NetworkSpec


def one_by_one(w=1.0, b=0.0, alpha=0.1, activation="none", shape=(1, 1, 1)):
    """Single 1x1 conv with one channel."""
    layer = LayerSpec("conv2d", weights=np.full((1, 1, 1, 1), w), bias=[b], activation=activation)
    if activation == "none":
        return NetworkSpec((layer,), shape, alpha)
    head = LayerSpec("conv2d", weights=np.ones((1, 1, 1, 1)), bias=[0.0], activation="none")
    return NetworkSpec((layer, head), shape, alpha)


# Acceptance verdicts, printed again in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def verdict(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
