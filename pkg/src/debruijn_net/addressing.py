"""Embedding de Bruijn ToR addresses into IPv4 prefixes.

Layout: ``p`` base-network bits, then ``s * d`` ToR bits (``s`` bits per
symbol, most significant symbol first), then host bits.
"""
from __future__ import annotations

import ipaddress
from dataclasses import dataclass

from .debruijn import DeBruijnAddress

ADDRESS_BITS = 32


@dataclass(frozen=True)
class IpAddressingScheme:
    base_prefix: ipaddress.IPv4Network
    b: int
    d: int

    def __post_init__(self):
        if isinstance(self.base_prefix, str):
            object.__setattr__(self, "base_prefix", ipaddress.IPv4Network(self.base_prefix))
        if self.base_len + self.tor_bits > ADDRESS_BITS:
            raise ValueError(
                f"/{self.base_len} base plus {self.tor_bits} ToR bits exceeds {ADDRESS_BITS} bits"
            )

    @classmethod
    def from_parts(cls, base: str, base_len: int, b: int, d: int) -> "IpAddressingScheme":
        return cls(ipaddress.IPv4Network(f"{base}/{base_len}"), b, d)

    @property
    def base_len(self) -> int:
        return self.base_prefix.prefixlen

    @property
    def bits_per_symbol(self) -> int:
        return (self.b - 1).bit_length()

    @property
    def tor_bits(self) -> int:
        return self.bits_per_symbol * self.d

    @property
    def host_bits(self) -> int:
        return ADDRESS_BITS - self.base_len - self.tor_bits

    def symbols_prefix(self, symbols) -> ipaddress.IPv4Network:
        """IP prefix covering every ToR whose address starts with ``symbols``."""
        s = self.bits_per_symbol
        bits = 0
        for x in symbols:
            if not 0 <= x < self.b:
                raise ValueError(f"symbol {x} outside [0, {self.b - 1}]")
            bits = (bits << s) | x
        length = self.base_len + s * len(symbols)
        value = int(self.base_prefix.network_address) | (bits << (ADDRESS_BITS - length))
        return ipaddress.IPv4Network((value, length))

    def tor_prefix(self, tor: DeBruijnAddress) -> ipaddress.IPv4Network:
        self._check(tor)
        return self.symbols_prefix(tor.symbols)

    def address_to_ip(self, tor: DeBruijnAddress, host_index: int) -> ipaddress.IPv4Address:
        if not 0 <= host_index < 2**self.host_bits:
            raise ValueError(f"host index {host_index} needs more than {self.host_bits} bits")
        net = self.tor_prefix(tor)
        return ipaddress.IPv4Address(int(net.network_address) + host_index)

    def _check(self, tor: DeBruijnAddress) -> None:
        if tor.b != self.b or tor.d != self.d:
            raise ValueError(f"ToR {tor} does not belong to DB({self.b},{self.d})")


def tor_prefix(scheme: IpAddressingScheme, tor: DeBruijnAddress) -> ipaddress.IPv4Network:
    return scheme.tor_prefix(tor)


def address_to_ip(scheme: IpAddressingScheme, tor: DeBruijnAddress, host_index: int) -> ipaddress.IPv4Address:
    return scheme.address_to_ip(tor, host_index)
