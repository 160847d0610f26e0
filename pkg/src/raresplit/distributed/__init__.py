"""Client/server fixed-level splitting and whole-instance distribution."""
from .client import client_loop
from .instances import InstanceConfig, InstancesResult, distribute_instances
from .protocol import ProtocolError, decode, encode
from .server import DistributedError, RunSpec, distributed_fixed_level, serve, serve_socket
from .transport import connect, loopback_pair

__all__ = ["client_loop", "serve", "serve_socket", "RunSpec", "distributed_fixed_level",
           "distribute_instances", "InstanceConfig", "InstancesResult", "encode", "decode",
           "ProtocolError", "DistributedError", "connect", "loopback_pair"]
