"""
Synthetic air-to-ground cities
==============================

Each city profile is a dual-slope path-loss law with a break distance,
log-normal shadowing, and a distance-dependent mix of LOS / NLOS / no-link
states.  Every link record carries a 5-value condition (relative position
plus a one-hot gNB type) and 20 paths of 6 parameters each.
"""
import numpy as np

from fedchan import synth

# one dataset per city, deterministic in the profile seed
data = {c: synth.generate_city(p, 3000) for c, p in synth.DEFAULT_PROFILES.items()}

# state mix: the three cities differ in how quickly LOS gives way to NLOS
for city, ds in data.items():
    freq = np.bincount(ds.states, minlength=3) / len(ds)
    print(f"{city:8s} NoLink {freq[0]:.2f}  LOS {freq[1]:.2f}  NLOS {freq[2]:.2f}")

# strongest-path loss grows with horizontal distance, steeper past the break
ds = data["charlie"].linked()
d2 = np.hypot(ds.conditions[:, 0], ds.conditions[:, 1])
pl = ds.strongest_path_loss()
for lo, hi in [(0, 50), (50, 100), (100, 200), (200, 400)]:
    sel = (d2 >= lo) & (d2 < hi)
    print(f"charlie {lo:3d}-{hi:3d} m: median strongest path loss {np.median(pl[sel]):6.1f} dB ({sel.sum()} links)")

# one record, path by path: unused slots hold the 200 dB sentinel
rec = next(iter(ds))
table = rec.paths.reshape(synth.N_PATHS, synth.N_PARAMS)
print("gNB type", rec.gnb_type, "state", rec.state)
print("first paths (loss dB, delay ns, aoa az, aoa el, aod az, aod el):")
print(np.array2string(table[:4], precision=3, suppress_small=False))

# the stratified 80/20 split keeps the state mix in both parts
train, test = synth.split_train_test(data["alpha"], 0.2, np.random.default_rng(0))
print("alpha split", len(train), len(test),
      "test state mix", np.round(np.bincount(test.states) / len(test), 3))
