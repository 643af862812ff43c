import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedchan import federated as fed
from fedchan import gan, nn, vae


# -- aggregation ------------------------------------------------------------------

def test_single_client_is_identity(rng):
    v = rng.normal(size=50)
    out = fed.aggregate_weighted([v], [37])
    assert out.tobytes() == v.tobytes()


def test_equal_counts_average():
    np.testing.assert_array_equal(fed.aggregate_weighted([np.array([0.0, 2.0]), np.array([2.0, 4.0])], [5, 5]),
                                  [1.0, 3.0])


def test_weighted_scalars():
    # 0 * 1/4 + 4 * 3/4
    assert fed.aggregate_weighted([np.array([0.0]), np.array([4.0])], [1, 3])[0] == 3.0


def test_aggregation_errors():
    with pytest.raises(ValueError):
        fed.aggregate_weighted([np.zeros(3), np.zeros(4)], [1, 1])
    with pytest.raises(ValueError):
        fed.aggregate_weighted([np.zeros(3)], [0])
    with pytest.raises(ValueError):
        fed.aggregate_weighted([np.zeros(3), np.zeros(3)], [1])
    with pytest.raises(ValueError):
        fed.aggregate_weighted([], [])


_vectors = st.integers(1, 6).flatmap(lambda k: st.tuples(
    st.lists(arrays(np.float64, 16, elements=st.floats(-1e3, 1e3)), min_size=k, max_size=k),
    st.lists(arrays(np.float64, 16, elements=st.floats(-1e3, 1e3)), min_size=k, max_size=k),
    st.lists(st.integers(1, 40000), min_size=k, max_size=k)))


@settings(max_examples=200, deadline=None)
@given(_vectors, st.floats(-10, 10), st.floats(-10, 10))
def test_linearity(vs, a, b):
    us, ws, counts = vs
    lhs = fed.aggregate_weighted([a * u + b * w for u, w in zip(us, ws)], counts)
    rhs = a * fed.aggregate_weighted(us, counts) + b * fed.aggregate_weighted(ws, counts)
    mags = sum((abs(a) * np.abs(u) + abs(b) * np.abs(w)) for u, w in zip(us, ws))
    assert np.all(np.abs(lhs - rhs) <= 1e-12 * np.maximum(mags, 1e-300))


@settings(max_examples=200, deadline=None)
@given(_vectors, st.randoms(use_true_random=False))
def test_permutation_invariance(vs, r):
    us, _, counts = vs
    perm = list(range(len(us)))
    r.shuffle(perm)
    a = fed.aggregate_weighted(us, counts)
    b = fed.aggregate_weighted([us[i] for i in perm], [counts[i] for i in perm])
    mags = sum(np.abs(u) for u in us)
    assert np.all(np.abs(a - b) <= 1e-12 * np.maximum(mags, 1e-300))


@settings(max_examples=200, deadline=None)
@given(_vectors)
def test_convex_combination(vs):
    us, _, counts = vs
    out = fed.aggregate_weighted(us, counts)
    stack = np.array(us)
    slack = 1e-12 * np.abs(stack).max(axis=0)
    assert np.all(out >= stack.min(axis=0) - slack) and np.all(out <= stack.max(axis=0) + slack)
    # weights n_k / n sum to one
    w = [c / sum(counts) for c in counts]
    assert abs(np.sum(w) - 1.0) < 1e-12


def test_pairwise_sum_order_is_fixed(rng):
    terms = [rng.normal(size=8) for _ in range(7)]
    expected = (((terms[0] + terms[1]) + (terms[2] + terms[3])) + ((terms[4] + terms[5]) + terms[6]))
    assert fed.pairwise_sum(terms).tobytes() == expected.tobytes()


def test_aggregate_params_averages_each_part(rng):
    a, b = vae.init_vae(rng), vae.init_vae(rng)
    out = fed.aggregate_params([a, b], [1, 3])
    np.testing.assert_allclose(out.encoder.flat, 0.25 * a.encoder.flat + 0.75 * b.encoder.flat, rtol=1e-15)
    np.testing.assert_allclose(out.decoder.flat, 0.25 * a.decoder.flat + 0.75 * b.decoder.flat, rtol=1e-15)


# -- rounds ----------------------------------------------------------------------------

def _tiny_params(kind, rng):
    if kind == "vae":
        return vae.init_vae(rng, nn.dense_stack(7, [6], 4), nn.dense_stack(4, [6], 10))
    return gan.init_gan(rng, nn.dense_stack(5, [6], 10), nn.dense_stack(7, [6], 1, output_activation="sigmoid"))


def _clients(rng, sizes=(40, 70, 55)):
    return [fed.ClientHandle(f"c{i}", vae.PathData(rng.uniform(-1, 1, (n, 5)), rng.uniform(-1, 1, (n, 2))), 100 + i)
            for i, n in enumerate(sizes)]


@pytest.mark.parametrize("kind", ["vae", "gan"])
def test_single_client_round_equals_local_training(kind, rng):
    cfg = fed.FedConfig(rounds=1, local_epochs=2, batch_size=16, learning_rate=1e-3, model_kind=kind)
    p0 = _tiny_params(kind, rng)
    client = _clients(rng, (45,))[0]
    new, record = fed.fed_round(p0, [client], cfg, round_index=3)
    local, _ = fed.KINDS[kind].train(p0, client.data, cfg.local_config(client.seed), fed.round_seed(client.seed, 3))
    assert fed.params_checksum(new) == fed.params_checksum(local)
    assert record.checksum == fed.params_checksum(new) and record.round == 3


def test_identical_clients_give_that_client(rng):
    cfg = fed.FedConfig(rounds=1, local_epochs=1, batch_size=10, learning_rate=1e-3)
    data = vae.PathData(rng.uniform(-1, 1, (30, 5)), rng.uniform(-1, 1, (30, 2)))
    clients = [fed.ClientHandle(c, data, 7) for c in "abc"]
    p0 = _tiny_params("vae", rng)
    new, _ = fed.fed_round(p0, clients, cfg)
    single, _ = fed.fed_round(p0, clients[:1], cfg)
    np.testing.assert_allclose(new.encoder.flat, single.encoder.flat, rtol=1e-15, atol=0)


def test_zero_local_epochs_leave_global_unchanged(rng):
    cfg = fed.FedConfig(rounds=1, local_epochs=0, model_kind="gan")
    p0 = _tiny_params("gan", rng)
    new, _ = fed.fed_round(p0, _clients(rng), cfg)
    np.testing.assert_allclose(new.generator.flat, p0.generator.flat, rtol=1e-15, atol=0)
    np.testing.assert_allclose(new.discriminator.flat, p0.discriminator.flat, rtol=1e-15, atol=0)


def test_rounds_zero_returns_initial(rng):
    p0 = _tiny_params("vae", rng)
    out, hist = fed.run_federation(fed.FedConfig(rounds=0), _clients(rng), init_params=p0)
    assert out is p0 and len(hist) == 0


def test_defaults_match_published_settings():
    cfg = fed.FedConfig()
    assert (cfg.rounds, cfg.local_epochs, cfg.batch_size, cfg.learning_rate) == (100, 5, 100, 1e-4)


@pytest.mark.parametrize("kind", ["vae", "gan"])
def test_federation_is_deterministic_and_parallel_safe(kind, rng, tmp_path):
    p0 = _tiny_params(kind, rng)
    clients = _clients(rng)
    cfg = fed.FedConfig(rounds=3, local_epochs=2, batch_size=16, learning_rate=1e-3, model_kind=kind)
    _, h1 = fed.run_federation(cfg, clients, p0)
    _, h2 = fed.run_federation(cfg, clients, p0)
    _, h3 = fed.run_federation(fed.FedConfig(**{**cfg.__dict__, "workers": 3}), clients, p0)
    _, h4 = fed.run_federation(cfg, clients, p0, exchange_dir=tmp_path)
    assert h1.checksums() == h2.checksums() == h3.checksums() == h4.checksums()
    assert len(h1) == 3
    assert (tmp_path / "round_2" / "global.fcw").exists()
    assert (tmp_path / "round_0" / "client_c1.fcw").exists()
    rows = (tmp_path / "history.csv").read_text().splitlines()
    assert rows[0] == "round,client,mean_local_loss,checksum" and len(rows) == 1 + 3 * 3


def test_client_failure_names_the_client(rng):
    p0 = _tiny_params("vae", rng)
    bad = fed.ClientHandle("broken", vae.PathData(np.zeros((5, 4)), np.zeros((5, 2))), 1)  # wrong width
    with pytest.raises(fed.ClientError, match="broken") as info:
        fed.fed_round(p0, _clients(rng)[:1] + [bad], fed.FedConfig(local_epochs=1))
    assert info.value.client_id == "broken"


def test_empty_client_rejected():
    with pytest.raises(ValueError):
        fed.ClientHandle("x", vae.PathData(np.zeros((0, 5)), np.zeros((0, 2))), 0)
    with pytest.raises(ValueError):
        fed.run_federation(fed.FedConfig(rounds=1), [])
    with pytest.raises(ValueError):
        fed.FedConfig(model_kind="flow")


@pytest.mark.parametrize("kind", ["vae", "gan"])
def test_single_client_federation_matches_standalone(kind, rng):
    p0 = _tiny_params(kind, rng)
    client = _clients(rng, (33,))[0]
    cfg = fed.FedConfig(rounds=4, local_epochs=2, batch_size=10, learning_rate=1e-3, model_kind=kind)
    final, hist = fed.run_federation(cfg, [client], p0)
    alone, sums, _ = fed.train_standalone(kind, p0, client.data, 8, cfg, client.seed)
    assert hist.checksums() == sums
    assert fed.params_checksum(final) == fed.params_checksum(alone)


# -- payloads -------------------------------------------------------------------------------

def test_payload_round_trip(tmp_path, rng):
    p = _tiny_params("gan", rng)
    path = fed.write_payload(tmp_path / "x.fcw", "gan", fed.Payload(p, 4, "alpha", 123))
    back = fed.read_payload(path, "gan", 4, like=p)
    assert (back.round, back.client_id, back.n_samples) == (4, "alpha", 123)
    assert back.params.generator.flat.tobytes() == p.generator.flat.tobytes()
    assert back.params.discriminator.flat.tobytes() == p.discriminator.flat.tobytes()


def test_payload_rejections(tmp_path, rng):
    p = _tiny_params("vae", rng)
    path = fed.write_payload(tmp_path / "x.fcw", "vae", fed.Payload(p, 2, "a", 5))
    with pytest.raises(fed.ProtocolError, match="round"):
        fed.read_payload(path, "vae", 3)
    with pytest.raises(fed.ProtocolError):
        fed.read_payload(path, "gan", 2)
    other = vae.init_vae(rng, nn.dense_stack(7, [5], 4), nn.dense_stack(4, [6], 10))
    with pytest.raises(fed.ProtocolError, match="shapes"):
        fed.read_payload(path, "vae", 2, like=other)
    path.write_bytes(b"JUNK" + path.read_bytes()[4:])
    with pytest.raises(fed.ProtocolError, match="magic"):
        fed.read_payload(path, "vae", 2)


def test_full_vae_payload_size(tmp_path):
    p = vae.init_vae(np.random.default_rng(0))
    path = fed.write_payload(tmp_path / "v.fcw", "vae", fed.Payload(p, 0, "alpha", 1))
    blob = path.read_bytes()
    header_len = struct.unpack("<I", blob[4:8])[0]
    n_params = p.encoder.n_params + p.decoder.n_params
    assert n_params == 44520 + 66520  # dense counts of the two networks
    assert len(blob) == 8 + header_len + 8 * n_params
