"""Batch counts, balanced-split sizes and Anglicism error rates for the corpus sizes used in the experiments."""
from mtlg2p.lexicon import num_batches
from mtlg2p.metrics import aer

BATCH = 25
TRAIN_SETS = {"base lexicon": 62_427, "combined lexicon": 71_102}
POSITIVES = {"train": 10_063, "valid": 516}
FLAGGED, RECOGNIZED = 1_362, {"baseline": 824, "multitask": 840}


def main():
    for name, n in TRAIN_SETS.items():
        print(f"{name}: {n} entries -> {num_batches(n, BATCH)} batches per epoch")
    for split, pos in POSITIVES.items():
        print(f"balanced {split}: 2 x {pos} = {2 * pos} entries")
    print(f"balanced train: {num_batches(2 * POSITIVES['train'], BATCH)} batches per epoch")
    for name, rec in RECOGNIZED.items():
        print(f"AER {name}: {aer(FLAGGED, rec):.2f} % ({rec}/{FLAGGED} recognized)")
    print(f"Anglicism share 1386/62427 = {100 * 1386 / 62_427:.2f} %")


if __name__ == "__main__":
    main()
