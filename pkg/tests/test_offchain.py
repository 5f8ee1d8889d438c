import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdm.errors import EmptyPayload
from tdm.offchain import ContentStore, LivenessProof, content_hash, verify


def test_put_abc_vector():
    store = ContentStore()
    h = store.put(b"abc")
    assert h.hex() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    assert store.put(b"abc") == h
    assert len(store.blobs) == 1


def test_put_empty():
    with pytest.raises(EmptyPayload):
        ContentStore().put(b"")


def test_get_round_trip_and_absent():
    store = ContentStore()
    h = store.put(b"hello")
    assert store.get(h) == b"hello"
    assert store.get(b"\0" * 32) is None


def test_drop_probability_one_clears_store():
    store = ContentStore(drop_probability="1", rng_seed=4)
    h = store.put(b"x")
    store.advance_epoch()
    assert store.get(h) is None


def test_fault_model_is_deterministic():
    def run(seed):
        store = ContentStore(drop_probability="0.3", rng_seed=seed)
        for i in range(200):
            store.put(f"blob-{i}".encode())
        for _ in range(3):
            store.advance_epoch()
        return sorted(store.blobs)

    assert run(9) == run(9)
    assert run(9) != run(10)


def test_prove_with_zero_nonce():
    store = ContentStore()
    h = store.put(b"data")
    proof = store.prove(h, bytes(32))
    assert proof.response == hashlib.sha256(b"data" + bytes(32)).digest()
    assert verify(b"data", proof)


def test_prove_absent():
    assert ContentStore().prove(b"\0" * 32, bytes(32)) is None
    assert not verify(b"data", None)


def test_directory_persistence(tmp_path):
    store = ContentStore()
    hs = [store.put(p) for p in (b"a", b"bb", b"ccc")]
    store.save_dir(tmp_path)
    assert sorted(f.name for f in tmp_path.iterdir()) == sorted(h.hex() for h in hs)
    again = ContentStore.load_dir(tmp_path)
    assert again.blobs == store.blobs


@settings(max_examples=1000)
@given(st.binary(min_size=1, max_size=64), st.binary(min_size=32, max_size=32), st.integers(0, 8 * 64 - 1))
def test_proofs_sound_under_bit_flips(payload, nonce, bit):
    store = ContentStore()
    h = store.put(payload)
    proof = store.prove(h, nonce)
    assert verify(payload, proof)
    i, b = divmod(bit % (8 * len(payload)), 8)
    corrupt = bytearray(payload)
    corrupt[i] ^= 1 << b
    forged = LivenessProof(h, nonce, hashlib.sha256(bytes(corrupt) + nonce).digest())
    assert not verify(payload, forged)
    assert content_hash(bytes(corrupt)) != h
