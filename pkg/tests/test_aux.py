import json
import math

import numpy as np
import pytest
from conftest import random_dataset

from sp2rec.core import ContractError, Hyperparams, PublicModel
from sp2rec.server import build_aux, decode_aux, encode_aux, kmeans_items, read_aux, train_joint, train_public, write_aux
from sp2rec.server.aux import (
    CLUSTER,
    JOINT,
    NAIVE,
    aux_size_bytes,
    decode_model,
    default_bloom_bits,
    encode_model,
    item_factor_megabytes,
    payload_bytes,
    top_r,
)
from sp2rec.server.bloom import BloomFilter, bits_per_item, decode_membership, encode_membership, hash_pairs


@pytest.fixture(scope="module")
def trained():
    ds = random_dataset(0, n_users=25, n_items=60, n_ratings=500)
    hp = Hyperparams(k=6, epochs=5, seed=1)
    return ds, hp, train_public(ds, hp), train_joint(ds, hp, z=5)


# ---------------------------------------------------------------- bloom


def test_bloom_no_false_negatives_and_low_fp():
    members = list(range(0, 4000, 4))
    bf = BloomFilter.for_items(members, 0.01)
    assert all(i in bf for i in members)
    others = [i for i in range(4000, 24000)]
    fp = sum(i in bf for i in others) / len(others)
    assert fp < 0.02


def test_bloom_vectorized_matches_scalar():
    bf = BloomFilter.for_items(range(0, 300, 3), 0.05)
    h1, h2 = hash_pairs(1000)
    vec = bf.contains_many(h1, h2)
    assert vec.tolist() == [i in bf for i in range(1000)]


def test_bloom_bytes_round_trip():
    bf = BloomFilter.for_items([1, 5, 9])
    back = BloomFilter.from_bytes(bf.to_bytes())
    assert (back.n_bits, back.n_hashes) == (bf.n_bits, bf.n_hashes)
    assert np.array_equal(back.bits, bf.bits)


def test_bloom_sizing():
    assert bits_per_item(0.01) == pytest.approx(9.585, abs=1e-3)
    bf = BloomFilter.for_items(range(1000), 0.01)
    assert bf.n_bits == math.ceil(1000 * bits_per_item(0.01))
    assert bf.n_hashes == 7


def test_membership_decoding_lowest_id():
    rng = np.random.default_rng(0)
    membership = rng.integers(0, 8, 500)
    decoded, ambiguous = decode_membership(encode_membership(membership, 8), 500)
    # no false negatives, so each decoded id is at most the true id
    assert np.all(decoded <= membership) and np.all(decoded >= 0)
    wrong = decoded != membership
    assert wrong.sum() <= ambiguous
    assert ambiguous < 0.15 * 500


# ---------------------------------------------------------------- sizes


def test_size_formula_power_of_two():
    assert item_factor_megabytes(100, 2**17) == 100.0
    assert (aux_size_bytes(NAIVE, 100, 2**17) - 8 * 2**17) / 2**20 == 100.0


def test_size_formula_reported_figures():
    # about 1 million items at k = 100: "around 763MB"
    assert round(item_factor_megabytes(100, 10**6)) == 763
    # the 4 MB and 10 MB figures correspond to these item counts under the same formula
    for mb in (4, 10):
        n = mb * 2**20 // 800
        assert item_factor_megabytes(100, n) == pytest.approx(mb, abs=1e-3)


def test_movielens_naive_payload():
    assert item_factor_megabytes(100, 1682) == pytest.approx(1.283, abs=5e-4)


def test_cluster_and_joint_formulas():
    assert aux_size_bytes(CLUSTER, 100, 1682, K=50) == 8 * 101 * 50 + 6728
    bloom = aux_size_bytes(CLUSTER, 100, 1682, K=50, bloom_bits_per_item=default_bloom_bits())
    assert bloom == 8 * 101 * 50 + math.ceil(bits_per_item(0.01) * 1682 / 8)
    assert aux_size_bytes(JOINT, 100, 1682, z=10, R=3) == 8000 + 8 * 1682 + 36 * 1682
    with pytest.raises(ContractError):
        aux_size_bytes(JOINT, 100, 1682, z=2, R=3)


def test_joint_order_of_magnitude_smaller():
    naive = aux_size_bytes(NAIVE, 100, 1682)
    for z in (5, 10, 25, 50, 75):
        assert naive / aux_size_bytes(JOINT, 100, 1682, z=z, R=3) >= 10


def test_size_monotone_in_k():
    naive = {aux_size_bytes(NAIVE, 100, 1682) for _ in range(3)}
    assert len(naive) == 1
    cl = [aux_size_bytes(CLUSTER, 100, 1682, K=K) for K in (10, 50, 100, 200)]
    jo = [aux_size_bytes(JOINT, 100, 1682, z=z, R=3) for z in (10, 50, 100, 200)]
    assert cl == sorted(cl) and jo == sorted(jo)


# ---------------------------------------------------------------- build and payload


def test_naive_aux_contents(trained):
    _, _, model, _ = trained
    aux = build_aux(model, NAIVE)
    assert np.array_equal(aux.item_vec, model.item_vec) and aux.mu == model.mu
    assert payload_bytes(aux) == aux_size_bytes(NAIVE, model.k, model.n_items)


def test_cluster_aux_singletons_equal_items(trained):
    _, _, model, _ = trained
    aux = build_aux(model, CLUSTER, K=model.n_items)
    membership, _ = aux.resolve_membership()
    assert np.array_equal(aux.centroid_vec[membership], model.item_vec)
    assert np.array_equal(aux.centroid_bias[membership], model.item_bias)
    assert payload_bytes(aux) == aux_size_bytes(CLUSTER, model.k, model.n_items, K=model.n_items)


def test_cluster_aux_bloom(trained):
    _, _, model, _ = trained
    clusters = kmeans_items(model, 6, seed=0)
    aux = build_aux(model, CLUSTER, clusters=clusters, bloom=True)
    assert aux.bloom and len(aux.filters) == 6
    decoded, _ = aux.resolve_membership()
    assert np.all(decoded <= clusters.membership)


def test_top_r_sorted_descending():
    W = np.array([[0.1, 0.5, 0.0, 0.3], [0.2, 0.2, 0.9, 0.0]])
    w, ids = top_r(W, 3)
    assert ids.tolist() == [[1, 3, 0], [2, 0, 1]]
    np.testing.assert_array_equal(w, [[0.5, 0.3, 0.1], [0.9, 0.2, 0.2]])


def test_joint_aux_contract(trained):
    _, _, model, joint = trained
    aux = build_aux(joint, JOINT, R=3)
    assert aux.R == 3 and aux.z == 5
    assert np.all(np.diff(aux.top_weights, axis=1) <= 0)
    with pytest.raises(ContractError):
        build_aux(joint, JOINT, R=6)
    with pytest.raises(ContractError):
        build_aux(model, JOINT, R=2)
    with pytest.raises(ContractError):
        build_aux(joint, NAIVE)


def test_aux_carries_no_user_factors(trained):
    _, _, model, joint = trained
    for aux in (build_aux(model, NAIVE), build_aux(model, CLUSTER, K=4), build_aux(joint, JOINT, R=2)):
        blob = encode_aux(aux)
        assert model.user_vec.tobytes()[:64] not in blob
        assert joint.user_vec.tobytes()[:64] not in blob


# ---------------------------------------------------------------- wire format


def assert_same(a, b):
    assert type(a) is type(b) and a.mu == b.mu
    for name, part in a.sections():
        other = dict(b.sections())[name]
        if isinstance(part, bytes):
            assert part == other
        else:
            assert np.array_equal(part, other) and np.asarray(part).dtype == np.asarray(other).dtype


@pytest.mark.parametrize("variant", ["naive", "cluster", "cluster-bloom", "joint"])
def test_round_trip_bit_exact(trained, variant, tmp_path):
    _, _, model, joint = trained
    aux = {
        "naive": lambda: build_aux(model, NAIVE),
        "cluster": lambda: build_aux(model, CLUSTER, K=7),
        "cluster-bloom": lambda: build_aux(model, CLUSTER, K=7, bloom=True),
        "joint": lambda: build_aux(joint, JOINT, R=3),
    }[variant]()
    blob = encode_aux(aux)
    back = decode_aux(blob)
    assert_same(aux, back)
    assert encode_aux(back) == blob
    sidecar = write_aux(aux, tmp_path / "aux.bin")
    info = json.loads(sidecar.read_text())
    assert info["total_bytes"] == len(blob) and info["variant"] == aux.variant
    assert encode_aux(read_aux(tmp_path / "aux.bin")) == blob


def test_read_aux_detects_tampering(trained, tmp_path):
    _, _, model, _ = trained
    write_aux(build_aux(model, NAIVE), tmp_path / "a.bin")
    data = bytearray((tmp_path / "a.bin").read_bytes())
    data[-1] ^= 1
    (tmp_path / "a.bin").write_bytes(bytes(data))
    with pytest.raises(ValueError):
        read_aux(tmp_path / "a.bin")


def test_encoding_is_deterministic(trained):
    _, _, model, _ = trained
    assert encode_aux(build_aux(model, CLUSTER, K=5, seed=3)) == encode_aux(build_aux(model, CLUSTER, K=5, seed=3))


def test_model_checkpoint_round_trip(trained):
    _, _, model, _ = trained
    blob = encode_model(model)
    back = decode_model(blob)
    assert isinstance(back, PublicModel)
    for a, b in [(model.user_vec, back.user_vec), (model.item_vec, back.item_vec), (model.user_bias, back.user_bias)]:
        assert np.array_equal(a, b)
    assert encode_model(back) == blob
    with pytest.raises(ValueError):
        decode_aux(blob)


def test_garbage_rejected():
    with pytest.raises(ValueError):
        decode_aux(b"not an aux payload at all")
