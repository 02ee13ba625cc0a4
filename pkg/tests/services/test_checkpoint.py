"""Checkpoint binary format."""

import hashlib
import struct

import numpy as np
import pytest

from grm.core.errors import CheckpointVersionError, UsageError
from grm.models.network import GRMNetwork
from grm.services.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    deserialize_checkpoint,
    load_checkpoint,
    save_checkpoint,
    serialize_checkpoint,
)
from tests.factories import tiny_model_config


@pytest.fixture
def network():
    return GRMNetwork.initialize(tiny_model_config(), 0)


class TestSerialization:
    def test_round_trip(self, network):
        data = serialize_checkpoint(network.cfg, network.store.state_dict())
        checkpoint = deserialize_checkpoint(data)
        assert checkpoint.model == network.cfg
        assert checkpoint.state.keys() == network.store.state_dict().keys()
        for name, value in network.store.state_dict().items():
            np.testing.assert_array_equal(checkpoint.state[name], value)
        assert serialize_checkpoint(checkpoint.model, checkpoint.state) == data

    def test_header(self, network):
        data = serialize_checkpoint(network.cfg, network.store.state_dict())
        assert data[:4] == MAGIC
        assert struct.unpack("<I", data[4:8]) == (FORMAT_VERSION,)

    def test_insertion_order_does_not_matter(self, network):
        state = network.store.state_dict()
        reversed_state = dict(reversed(list(state.items())))
        assert serialize_checkpoint(network.cfg, state) == serialize_checkpoint(network.cfg, reversed_state)

    def test_restored_network_matches(self, network):
        restored = deserialize_checkpoint(serialize_checkpoint(network.cfg, network.store.state_dict())).to_network()
        np.testing.assert_array_equal(restored.store["embed.pos_x"].data, network.store["embed.pos_x"].data)


class TestCorruption:
    def test_bad_magic(self, network):
        data = serialize_checkpoint(network.cfg, network.store.state_dict())
        with pytest.raises(CheckpointVersionError) as excinfo:
            deserialize_checkpoint(b"XXXX" + data[4:])
        assert excinfo.value.exit_code == 4

    def test_future_version(self, network):
        data = serialize_checkpoint(network.cfg, network.store.state_dict())
        with pytest.raises(CheckpointVersionError):
            deserialize_checkpoint(data[:4] + struct.pack("<I", FORMAT_VERSION + 1) + data[8:])

    def test_truncated(self, network):
        data = serialize_checkpoint(network.cfg, network.store.state_dict())
        with pytest.raises(CheckpointVersionError):
            deserialize_checkpoint(data[:-8])

    def test_trailing_bytes(self, network):
        data = serialize_checkpoint(network.cfg, network.store.state_dict())
        with pytest.raises(CheckpointVersionError):
            deserialize_checkpoint(data + b"\x00")


class TestFiles:
    def test_save_returns_file_digest(self, network, tmp_path):
        path = tmp_path / "nested" / "model.grmc"
        digest = save_checkpoint(path, network.cfg, network.store.state_dict())
        assert digest == hashlib.sha256(path.read_bytes()).hexdigest()
        assert load_checkpoint(path).model == network.cfg

    def test_missing_file(self, tmp_path):
        with pytest.raises(UsageError):
            load_checkpoint(tmp_path / "absent.grmc")
