"""How much randomness a spoofer has to beat, per router behaviour.

    python3 demos/entropy_race.py [runs]

A forwarder that copies the client's TXID leaves only the port to guess;
one that randomizes both leaves 2**32 combinations for a 2**16 budget.
"""

import sys

from fwdlab.harness import run_static_port_attack, run_txid_known_attack

CASES = [
    ("txid copied, port fixed at boot", run_txid_known_attack, "dproxy-like", {}),
    ("txid and port random", run_txid_known_attack, "dnsmasq-like", {"race_window": 65536}),
    ("fixed port, random txid", run_static_port_attack, "static-port-nocache", {"race_window": 65536}),
]


def main(runs=20):
    for title, attack, profile, kw in CASES:
        outcomes = [attack(profile, 65536, seed=s, **kw) for s in range(runs)]
        wins = [o for o in outcomes if o.success]
        mean = sum(o.packets_sent_by_attacker for o in wins) / len(wins) if wins else 0
        print(f"{title:34} {profile:22} {len(wins):3}/{runs} poisoned"
              + (f", {mean:8.0f} spoofed packets on average" if wins else ""))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 20)
