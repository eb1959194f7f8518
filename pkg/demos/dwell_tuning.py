"""Tune the cyclic policy's dwell time and see why two conventions exist.

The patrol objective f trades residual backlog left at departure against
the fraction of each sweep lost to travel.  It is quasiconvex in the
per-location dwell, so both an integer scan and a continuous minimiser
followed by a floor are reasonable; they disagree on some instances by
one slot.  The benchmark grid uses the floor convention.

Run with:  python3 demos/dwell_tuning.py
"""

from eslsim import continuous_dwell, dwell_objective, optimize_dwell, tuned_dwell

p, n = 0.2 / 3, 3  # per-location rate and block size for 2 robots at load 0.2
print(f"rate p={p:.4f}, {n} locations per robot\n")
print(" t   f(3t)")
for t in range(1, 13):
    marker = " <- scan argmin" if t == optimize_dwell(p, n) else ""
    print(f"{t:>2}   {dwell_objective(p, n, float(n * t)):8.3f}{marker}")

u = continuous_dwell(p, n)
print(f"\ncontinuous argmin u* = {u:.4f}, floor -> {tuned_dwell(p, n)}")

print("\nbenchmark dwell choices (floor convention):")
for m, n_block in ((2, 3), (3, 2)):
    row = [tuned_dwell(alpha * m / 6, n_block) for alpha in (0.2, 0.5, 0.8)]
    scan = [optimize_dwell(alpha * m / 6, n_block) for alpha in (0.2, 0.5, 0.8)]
    print(f"  {m} robots: loads 0.2/0.5/0.8 -> dwell {row}  (scan picks {scan})")
