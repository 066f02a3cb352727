"""
Picking k from a criterion curve
================================

The criterion is the within-cluster dispersion at k relative to k = 1. The
table below lists first and second differences, the elbow flag and its
relative strength; the strongest elbow wins.
"""

from segforge.selection import elbow_table, optimal_k

# a 20-point curve with a clear bend at 8
criterion = [1.0, 0.975, 0.883, 0.82, 0.794, 0.755, 0.73, 0.686, 0.686, 0.682,
             0.646, 0.646, 0.646, 0.637, 0.637, 0.632, 0.594, 0.594, 0.59, 0.59]
table = elbow_table(criterion)

print(" k  criterion      d1      d2  elbow  strength")
for k, c, d1, d2, e, s in table.rows():
    print(f"{k:2d}  {c:9.3f}  {d1:6.3f}  {d2:6.3f}  {e:5.0f}  {s:8.4f}")

# every flagged k, then the winner
print("elbows:", table.elbows)
print("optimal k:", optimal_k(table))
