import os
import stat

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vaefqa.secure_store import (
    AuthorityPrivateKey,
    AuthorityPublicKey,
    IntegrityError,
    RecordFormatError,
    SealedCrop,
    SecureStore,
    StoreError,
    WrongKeyError,
    deserialize_crop,
    keygen,
    load_private_key,
    load_public_key,
    open_record,
    purge,
    seal,
    serialize_crop,
    write_keypair,
)


@pytest.fixture(scope="module")
def keys():
    return keygen(2048)


@pytest.fixture(scope="module")
def other_keys():
    return keygen(2048)


@pytest.fixture
def crop(rng):
    return rng.random((16, 16))


META = {"track_id": 3, "frame_index": 17, "bbox": [1.0, 2.0, 30.0, 30.0], "score": -412.5}


class TestKeys:
    def test_distinct(self, keys, other_keys):
        assert keys[0].fingerprint != other_keys[0].fingerprint
        assert keys[0] != other_keys[0]

    def test_pem_round_trip(self, keys, tmp_path):
        pub_path, key_path = write_keypair(*keys, tmp_path)
        assert load_public_key(pub_path) == keys[0]
        assert load_private_key(key_path).public() == keys[0]
        assert stat.S_IMODE(os.stat(key_path).st_mode) == 0o600

    def test_password_protected(self, keys, tmp_path):
        _, key_path = write_keypair(*keys, tmp_path, password=b"hunter22")
        assert load_private_key(key_path, b"hunter22").public() == keys[0]
        with pytest.raises(WrongKeyError):
            load_private_key(key_path, b"wrong")

    def test_public_file_is_not_private(self, keys, tmp_path):
        pub_path, _ = write_keypair(*keys, tmp_path)
        with pytest.raises(WrongKeyError):
            load_private_key(pub_path)

    def test_type_checks(self):
        with pytest.raises(TypeError):
            AuthorityPublicKey(object())
        with pytest.raises(TypeError):
            AuthorityPrivateKey(object())


class TestSeal:
    def test_round_trip(self, keys, crop):
        rec = seal(crop, META, keys[0])
        out, meta = open_record(rec, keys[1])
        assert out.tobytes() == crop.tobytes()
        assert {k: meta[k] for k in META} == META
        assert meta["key_fingerprint"] == keys[0].fingerprint

    def test_bytes_round_trip(self, keys, crop):
        rec = seal(crop, META, keys[0], created_at=123.5, record_id="abc")
        back = SealedCrop.from_bytes(rec.to_bytes())
        assert back == rec
        assert open_record(rec.to_bytes(), keys[1])[0].tobytes() == crop.tobytes()

    def test_fresh_keys_and_nonces(self, keys, crop):
        a, b = seal(crop, META, keys[0]), seal(crop, META, keys[0])
        assert a.ciphertext != b.ciphertext
        assert a.nonce != b.nonce and a.wrapped_key != b.wrapped_key

    def test_plaintext_not_in_record(self, keys, crop):
        assert crop.tobytes()[:64] not in seal(crop, META, keys[0]).to_bytes()

    def test_public_key_cannot_open(self, keys, crop):
        rec = seal(crop, META, keys[0])
        with pytest.raises(TypeError):
            open_record(rec, keys[0])

    def test_seal_needs_public_key(self, keys, crop):
        with pytest.raises(TypeError):
            seal(crop, META, keys[1])

    def test_wrong_authority(self, keys, other_keys, crop):
        with pytest.raises(WrongKeyError):
            open_record(seal(crop, META, keys[0]), other_keys[1])

    def test_every_ciphertext_byte(self, keys, rng):
        small = rng.random((2, 3))
        rec = seal(small, META, keys[0])
        raw = rec.to_bytes()
        start = len(rec.associated_data())
        for off in range(start, len(raw)):
            bad = bytearray(raw)
            bad[off] ^= 0x01
            with pytest.raises(IntegrityError):
                open_record(bytes(bad), keys[1])

    @pytest.mark.parametrize("region", ["meta", "wrapped", "nonce"])
    def test_header_mutations(self, keys, crop, region):
        rec = seal(crop, META, keys[0])
        raw = rec.to_bytes()
        prefix = 10
        spans = {
            "meta": (prefix, prefix + len(rec.meta_bytes)),
            "wrapped": (prefix + len(rec.meta_bytes) + 2, prefix + len(rec.meta_bytes) + 2 + len(rec.wrapped_key)),
        }
        spans["nonce"] = (spans["wrapped"][1], spans["wrapped"][1] + 12)
        lo, hi = spans[region]
        for off in np.linspace(lo, hi - 1, 12).astype(int):
            bad = bytearray(raw)
            bad[off] ^= 0x20
            with pytest.raises(StoreError):
                open_record(bytes(bad), keys[1])

    @pytest.mark.parametrize("cut", [0, 3, 11, 200, -1])
    def test_truncation(self, keys, crop, cut):
        raw = seal(crop, META, keys[0]).to_bytes()
        with pytest.raises(RecordFormatError):
            SealedCrop.from_bytes(raw[:cut])

    def test_crop_serialization(self, rng):
        c = rng.random((3, 5))
        np.testing.assert_array_equal(deserialize_crop(serialize_crop(c)), c)
        with pytest.raises(ValueError):
            serialize_crop(np.zeros(4))


class FakeClock:
    def __init__(self, t):
        self.t = t

    def __call__(self):
        return self.t


class TestStore:
    def test_empty(self, tmp_path):
        s = SecureStore(tmp_path / "s")
        assert len(s) == 0 and purge(s, 10.0) == 0

    def test_put_get(self, keys, crop, tmp_path):
        s = SecureStore(tmp_path / "s", clock=FakeClock(100.0))
        rec = s.seal_and_put(crop, META, keys[0])
        assert rec.created_at == 100.0
        assert s.index() == [(rec.record_id, 100.0)]
        got = s.get(rec.record_id)
        assert got == rec
        assert open_record(got, keys[1])[0].tobytes() == crop.tobytes()
        assert sorted(os.listdir(s.directory)) == sorted(["index.jsonl", rec.record_id + ".rec"])

    def test_missing(self, tmp_path):
        with pytest.raises(KeyError):
            SecureStore(tmp_path).get("nothere")

    def test_bad_record_id(self, tmp_path):
        with pytest.raises(RecordFormatError):
            SecureStore(tmp_path).get("../escape")

    def test_file_length_prefix_checked(self, keys, crop, tmp_path):
        s = SecureStore(tmp_path)
        rec = s.seal_and_put(crop, META, keys[0])
        path = os.path.join(s.directory, rec.record_id + ".rec")
        with open(path, "ab") as fh:
            fh.write(b"x")
        with pytest.raises(RecordFormatError):
            s.get(rec.record_id)

    def test_ttl_zero_removes_all(self, keys, crop, tmp_path):
        clock = FakeClock(50.0)
        s = SecureStore(tmp_path, clock=clock)
        for t in (10.0, 20.0, 50.0):
            clock.t = t
            s.seal_and_put(crop, META, keys[0])
        assert s.purge(0.0) == 3
        assert len(s) == 0 and [f for f in os.listdir(tmp_path) if f.endswith(".rec")] == []

    def test_negative_ttl(self, tmp_path):
        with pytest.raises(ValueError):
            SecureStore(tmp_path).purge(-1.0)

    def test_torn_index_line_ignored(self, keys, crop, tmp_path):
        s = SecureStore(tmp_path)
        rec = s.seal_and_put(crop, META, keys[0])
        with open(os.path.join(tmp_path, "index.jsonl"), "a") as fh:
            fh.write('{"record_id": "abc", "crea')
        assert [rid for rid, _ in s.index()] == [rec.record_id]

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.integers(0, 1000), max_size=12), st.integers(0, 600), st.integers(0, 1200))
    def test_purge_matches_filter(self, keys, tmp_path_factory, stamps, ttl, now):
        d = tmp_path_factory.mktemp("p")
        clock = FakeClock(0.0)
        s = SecureStore(d, clock=clock)
        ids = {}
        for t in stamps:
            clock.t = float(t)
            rec = seal(np.zeros((1, 1)), {}, keys[0], created_at=float(t))
            s.put(rec)
            ids[rec.record_id] = float(t)
        want_removed = {rid for rid, t in ids.items() if now - t >= ttl}
        assert s.purge(float(ttl), now=float(now)) == len(want_removed)
        left = {rid for rid, _ in s.index()}
        assert left == set(ids) - want_removed
        assert all(ids[rid] > now - ttl for rid in left)
