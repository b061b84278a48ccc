"""When the embedding keeps every distance ordering, greedy is optimal.

A corridor mapped onto the number line keeps all orderings, and greedy
agrees with the optimal policy everywhere. Swapping two cells breaks the
ordering and one state now steps the wrong way.
"""
from metricrl.harness import path_fixture, verify_theorem


def main():
    for swap in (False, True):
        index, latents = path_fixture(6, swap=swap)
        rep = verify_theorem(latents, index)
        print("swapped" if swap else "isometric")
        for line in rep.lines():
            print("  " + line)
        for state, got, best in rep.disagreements:
            print(f"  state {state}: greedy action {got}, optimal {best}")


if __name__ == "__main__":
    main()
