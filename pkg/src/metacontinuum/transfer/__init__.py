from .protocols import SMP, Protocol, UnknownProtocol, get_protocol, register_protocol, reply_code
from .stream import (Channel, ChannelState, Command, FailPolicy, Outcome, Pair, Parser, Request,
                     parse_matches_send, request_fail_policy)
from .transports import channel_open, sim_connector, socket_connector

__all__ = [
    "Channel", "ChannelState", "Command", "FailPolicy", "Outcome", "Pair", "Parser", "Protocol",
    "Request", "SMP", "UnknownProtocol", "channel_open", "get_protocol", "parse_matches_send",
    "register_protocol", "reply_code", "request_fail_policy", "sim_connector", "socket_connector",
]
