import numpy as np
import pytest

from func.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from data.exceptions import CheckpointError


def _as_float32(array):
    return array.astype(np.float32).astype(np.float64)


class TestCheckpoint:

    def test_projb_round_trip(self, tmp_path, small_projb):
        path = tmp_path.joinpath('checkpoint.bin')
        save_checkpoint(small_projb, path)
        loaded = load_checkpoint(path)
        assert loaded.mode == 'projb'
        assert loaded.activation == small_projb.activation
        for name in ('W_E', 'W_R', 'b_p', 'B_PE', 'B_QR', 'D_E', 'D_R'):
            np.testing.assert_array_equal(getattr(loaded, name), _as_float32(getattr(small_projb, name)))
        np.testing.assert_array_equal(loaded.entity_cluster, small_projb.entity_cluster)
        np.testing.assert_array_equal(loaded.relation_cluster, small_projb.relation_cluster)
        assert loaded.entity_centers.shape == (small_projb.C_E, small_projb.k_e)

    def test_proje_round_trip(self, tmp_path, small_proje):
        path = tmp_path.joinpath('checkpoint.bin')
        save_checkpoint(small_proje, path)
        loaded = load_checkpoint(path)
        assert loaded.mode == 'proje'
        np.testing.assert_array_equal(loaded.d_r, _as_float32(small_proje.d_r))
        assert loaded.B_PE is None

    def test_same_params_same_bytes(self, small_projb):
        assert checkpoint_bytes(small_projb) == checkpoint_bytes(small_projb.copy())

    def test_corrupted_byte(self, tmp_path, small_projb):
        path = tmp_path.joinpath('checkpoint.bin')
        save_checkpoint(small_projb, path)
        blob = bytearray(path.read_bytes())
        blob[60] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path, small_projb):
        path = tmp_path.joinpath('checkpoint.bin')
        path.write_bytes(checkpoint_bytes(small_projb)[:20])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path.joinpath('checkpoint.bin')
        path.write_bytes(b'\x00' * 128)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path.joinpath('absent.bin'))
