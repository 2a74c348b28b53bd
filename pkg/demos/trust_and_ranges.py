"""How a unit's trust value sets its local range.

A unit's range around its threshold eta is built from the k training
errors on either side of eta, with k growing as trust falls. Errors below
the range go to the Normal model, errors above it to the Attack model and
everything in between to the Regular model.

Note what the printout shows: as trust falls, hi widens but lo also moves
up towards eta, because lo = eta - errs[idx - k] subtracts a larger error
for larger k.

    python3 demos/trust_and_ranges.py
"""
import numpy as np

from tieredids import autoencoder as ae


def main() -> None:
    print("hand case errs=[0.1..0.5], eta=0.3, trust=0.6:",
          ae.compute_local_range([0.1, 0.2, 0.3, 0.4, 0.5], 0.3, 0.6))

    rng = np.random.default_rng(0)
    normal = rng.exponential(0.3, 400)
    attack = 1.0 + rng.exponential(0.8, 40)
    errors = np.concatenate([normal, attack])
    labels = np.concatenate([np.zeros(400, int), np.ones(40, int)])
    eta, acc = ae.best_threshold(errors, labels)
    print(f"\nsynthetic unit: eta={eta:.4f}, training accuracy {acc:.4f}")
    print(" trust      lo      hi   share routed to Regular")
    for trust in (1.0, 0.99, 0.95, 0.9, 0.8, 0.6, 0.4):
        lo, hi = ae.compute_local_range(np.sort(errors), eta, trust)
        regular = np.mean((errors >= lo) & (errors <= hi))
        print(f"{trust:6.2f} {lo:7.4f} {hi:7.4f}   {regular:6.1%}")


if __name__ == "__main__":
    main()
