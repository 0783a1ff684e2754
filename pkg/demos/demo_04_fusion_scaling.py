"""
How fusion cost grows with the number of attribute types
========================================================

The TASIF layer builds one attention matrix per stream (|A| + 1), while a
cross-attention fusion over every pair of sources builds (|A| + 2)^2. We
time both on random inputs and fit log-log slopes.
"""

from tasif.bench import bench_scaling

# Small shapes so this runs in a few seconds; the acceptance suite uses n = d = 64.
records, slopes = bench_scaling((1, 2, 4, 8), n=32, d=32, batch=8, trials=5)
for r in records:
    print(f"{r.model_variant:<15} |A|={r.attribute_count}  matrices={r.attention_matrix_count:>3}  "
          f"{r.fusion_layer_wall_time * 1e3:7.2f} ms")
print("slopes", {k: round(v, 2) for k, v in slopes.items()})
