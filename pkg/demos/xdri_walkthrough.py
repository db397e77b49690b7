"""Walk through the chase-triggered injection against a naive forwarder.

    python3 demos/xdri_walkthrough.py [profile]

Prints every packet of the scenario, then what the router's cache holds.
"""

import sys

from fwdlab.harness import run_xdri_cname_chase


def main(profile="dproxy-like"):
    out = run_xdri_cname_chase(profile, seed=1)
    print(out.render(transcript=True))
    print()
    if out.success:
        name, addr = out.poisoned_mapping
        print(f"Every client behind this router now resolves {name} to {addr}.")
    else:
        print("The router kept the hidden name apart from the victim name.")


if __name__ == "__main__":
    main(*sys.argv[1:2])
