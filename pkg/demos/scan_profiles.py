"""Scan every built-in profile and print the verdict table.

    python3 demos/scan_profiles.py
"""

from fwdlab.forwarder import BUILTIN_PROFILES
from fwdlab.scanner import LETTERS, SimTarget, render_table, scan_target


def main():
    reports = [scan_target(SimTarget(name)) for name in [*BUILTIN_PROFILES, "nat-rule"]]
    print(render_table(reports))
    print()
    for letter, meaning in LETTERS.items():
        print(f"({letter}) {meaning}")


if __name__ == "__main__":
    main()
