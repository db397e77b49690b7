"""TTL-bounded record cache shared by the forwarder and recursive models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

from .wire import DnsName, Rcode, ResourceRecord, RRType

MAX_CHAIN = 8


@dataclass
class CacheEntry:
    records: tuple[ResourceRecord, ...]
    inserted: float
    expires: float
    negative: bool = False
    rcode: int = Rcode.NOERROR
    soa: Optional[ResourceRecord] = None

    def fresh(self, now: float) -> bool:
        return now < self.expires

    def remaining(self, now: float) -> int:
        return max(0, int(self.expires - now))


class RecordCache:
    """Map of ``(name, rrtype)`` to record sets or negative answers.

    Keys use the name's case-folded labels, so two names that differ only
    in a raw byte (``www.target.com`` vs ``www.target.com\\000.test.com``)
    never collide.
    """

    def __init__(self):
        self._entries: dict[tuple[tuple[bytes, ...], int], CacheEntry] = {}

    def __len__(self):
        return len(self._entries)

    def __bool__(self):
        return bool(self._entries)

    def clear(self):
        self._entries.clear()

    def put(self, name: DnsName, rrtype: int, records, ttl: int, now: float) -> None:
        if ttl <= 0:
            return
        self._entries[(name.key(), rrtype)] = CacheEntry(tuple(records), now, now + ttl)

    def put_negative(
        self, name: DnsName, rrtype: int, soa: ResourceRecord, rcode: int, now: float
    ) -> None:
        ttl = min(soa.ttl, soa.rdata.minimum)
        if ttl <= 0:
            return
        self._entries[(name.key(), rrtype)] = CacheEntry(
            (), now, now + ttl, negative=True, rcode=rcode, soa=soa
        )

    def get(self, name: DnsName, rrtype: int, now: float) -> Optional[CacheEntry]:
        key = (name.key(), rrtype)
        entry = self._entries.get(key)
        if entry is None:
            return None
        if not entry.fresh(now):
            del self._entries[key]
            return None
        return entry

    def lookup_chain(self, name: DnsName, qtype: int, now: float):
        """Follow cached CNAMEs from ``name``.

        Returns ``(chain, terminal)``: ``chain`` holds the CNAME records walked
        (TTLs set to their remaining lifetime) and ``terminal`` the entry found
        for the final name, or ``None`` if nothing is cached there.
        """
        chain = []
        current = name
        for _ in range(MAX_CHAIN + 1):
            entry = self.get(current, qtype, now)
            if entry is not None:
                return chain, entry
            if qtype == RRType.CNAME:
                break
            alias = self.get(current, RRType.CNAME, now)
            if alias is None or not alias.records:
                break
            rr = alias.records[0]
            chain.append(rr.with_ttl(alias.remaining(now)))
            current = rr.rdata
        return chain, None

    def items(self, now: Optional[float] = None) -> Iterator[tuple[tuple, CacheEntry]]:
        for key, entry in list(self._entries.items()):
            if now is None or entry.fresh(now):
                yield key, entry

    def records(self, now: Optional[float] = None) -> Iterator[ResourceRecord]:
        for _, entry in self.items(now):
            yield from entry.records
