"""
Calibrating the latency model
=============================

Five speed measurements of PointPillars variants on a mobile GPU pin down a
linear cost model: MACs times a per-scheme slowdown, over a device
throughput, plus a fixed per-layer overhead.
"""

from importlib import resources

from prunesearch import calibrate_latency_model
from prunesearch.evaluators import load_measurements

rows = load_measurements(resources.files("prunesearch.data").joinpath("pointpillars_measurements.json"))
model = calibrate_latency_model(rows)

print(f"throughput {model.device_throughput / 1e9:.1f} GMAC/s, overhead {model.per_layer_overhead_ms:.2f} ms")
for scheme, factor in sorted(model.scheme_factors.items(), key=lambda kv: kv[1]):
    print(f"  {scheme:8s} x{factor:.3f}")

# Every measurement is reproduced to within a few percent.
for m in rows:
    pred = model.layer_ms(m.macs, m.scheme, m.layers)
    print(f"{m.label:22s} measured {m.measured_ms:6.1f}  predicted {pred:6.1f}  ({(pred - m.measured_ms) / m.measured_ms:+.1%})")

# With only the three 0.24 m rows there is no overhead term, but the
# filter < pattern ordering already shows.
small = calibrate_latency_model(rows[:3])
print("three rows: filter", round(small.scheme_factors["filter"], 3), "pattern", round(small.scheme_factors["pattern"], 3))
