import numpy as np

from dcbench.trace import Trace, TraceMeta


def random_trace(seed, n, nodes=16, span_us=10_000_000, ports=False, names=True):
    rng = np.random.default_rng(seed)
    ts = np.sort(rng.integers(0, span_us, n))
    if n:
        ts -= ts[0]
    frame = rng.integers(64, 9217, n)
    payload = (frame * rng.random(n)).astype(np.int64)
    src = rng.integers(0, nodes, n)
    dst = (src + rng.integers(1, nodes, n)) % nodes
    cols = dict(timestamp_us=ts, frame_bytes=frame, payload_bytes=payload, src=src, dst=dst)
    if ports:
        cols["ingress"] = rng.integers(-1, 48, n)
        cols["egress"] = rng.integers(-1, 48, n)
    meta = TraceMeta(
        topology_kind="spine-leaf",
        switch_kind="ToR",
        application_label=f"random-{seed}",
        node_names=tuple(f"10.0.0.{i}:80" for i in range(nodes)) if names else (),
        epoch_us=1_600_000_000_000_000 + seed,
    )
    return Trace.from_columns(meta, **cols)
