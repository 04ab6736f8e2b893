"""Write the bundled synthetic lexicon and its Anglicism word list."""
import argparse
from pathlib import Path

from mtlg2p.lexicon import write_lexicon
from mtlg2p.toydata import synthetic_lexicon

DATA = Path(__file__).resolve().parents[1] / "src" / "mtlg2p" / "data"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--ratio", type=float, default=0.3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", type=Path, default=DATA)
    args = ap.parse_args()
    entries = synthetic_lexicon(args.n, args.ratio, args.seed)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_lexicon(entries, args.out_dir / "toy_lexicon.tsv", with_flag=False)
    words = [e.word for e in entries if e.anglicism]
    (args.out_dir / "toy_wordlist.txt").write_text("\n".join(words) + "\n", encoding="utf-8")
    print(f"{len(entries)} entries, {len(words)} flagged -> {args.out_dir}")


if __name__ == "__main__":
    main()
