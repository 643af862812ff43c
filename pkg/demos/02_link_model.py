"""
Link-state classifier
=====================

The first stage maps a link condition to NoLink / LOS / NLOS.  It is a
5 -> 25 -> 10 -> 3 softmax network trained per city with cross-entropy and
Adam, and stays on the station that trained it.
"""
import numpy as np

from fedchan import linkmodel, synth

profile = synth.DEFAULT_PROFILES["bravo"]
ds = synth.generate_city(profile, 5000)
train, test = synth.split_train_test(ds, 0.2, np.random.default_rng(1))

model = linkmodel.train_link_model(train)
print("loss per epoch:", np.round(model.losses[::5], 3))
print("test accuracy (sampled states):", round(linkmodel.accuracy(model, test), 3))

# states are random given the condition; with hard states the label is a
# function of the condition and the classifier can only lose by underfitting
hard = synth.CityProfile(**{**synth.profile_dict(profile), "hard_states": True, "shadow_sigma": 0.0})
ds = synth.generate_city(hard, 5000)
train, test = synth.split_train_test(ds, 0.2, np.random.default_rng(1))
model = linkmodel.train_link_model(train)
print("test accuracy (hard states):", round(linkmodel.accuracy(model, test), 3))

# predicted probabilities along a ray away from a terrestrial gNB at 60 m
for d in (50, 200, 400, 600):
    p = model.predict(synth.make_condition(d, 0.0, 60.0, "terrestrial")[None, :])[0]
    print(f"d = {d:3d} m  P(NoLink, LOS, NLOS) = {np.round(p, 3)}")
