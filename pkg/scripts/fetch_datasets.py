"""Check or install the benchmark files under ``data/``.

Nothing is downloaded. Each dataset lives in ``data/<name>/`` as
``train.txt``, ``valid.txt`` and ``test.txt`` with one ``head<TAB>relation<TAB>tail``
triple per line. Public copies:

* UMLS and Kinship: the ``umls`` and ``kinship`` folders of the
  ``pykeen`` wheel (``pykeen/datasets/{umls,kinship}/*.tsv``), or the
  ConvE / MINERVA repositories.
* FB15k-237 and WN18RR: the original release archives (``Release/`` and
  ``WN18RR/text/``).

    python scripts/fetch_datasets.py                    # report what is present
    python scripts/fetch_datasets.py --install umls DIR # copy DIR/{train,valid,test}.(txt|tsv)
"""
import argparse
import shutil
import sys
from pathlib import Path

from sarmp.data import DatasetError, load_dataset

DATA = Path(__file__).resolve().parents[1] / "data"

# (entities, base relations, train, valid, test) of the standard splits
EXPECTED = {
    "umls": (135, 46, 5216, 652, 661),
    "kinship": (104, 25, 8544, 1068, 1074),
    "fb15k-237": (14541, 237, 272115, 17535, 20466),
    "wn18rr": (40943, 11, 86835, 3034, 3134),
}


def check(name: str) -> bool:
    path = DATA / name
    try:
        kg = load_dataset(path)
    except DatasetError as exc:
        print(f"{name:<10} missing or invalid: {exc}")
        return False
    got = (kg.num_entities, kg.num_base_relations, len(kg.train), len(kg.valid), len(kg.test))
    ok = got == EXPECTED.get(name, got)
    print(f"{name:<10} {'ok' if ok else 'UNEXPECTED SIZES'} entities={got[0]} relations={got[1]} "
          f"train/valid/test={got[2]}/{got[3]}/{got[4]}")
    return ok


def install(name: str, src: Path):
    dst = DATA / name
    dst.mkdir(parents=True, exist_ok=True)
    for split in ("train", "valid", "test"):
        for ext in (".txt", ".tsv"):
            f = src / f"{split}{ext}"
            if f.is_file():
                shutil.copyfile(f, dst / f"{split}.txt")
                break
        else:
            raise SystemExit(f"{src}: no {split}.txt or {split}.tsv")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--install", nargs=2, metavar=("NAME", "DIR"))
    args = ap.parse_args()
    if args.install:
        install(args.install[0], Path(args.install[1]))
    names = sorted(set(EXPECTED) | {p.name for p in DATA.iterdir() if p.is_dir()}) if DATA.is_dir() else sorted(EXPECTED)
    results = [check(n) for n in names]
    return 0 if any(results) else 1


if __name__ == "__main__":
    sys.exit(main())
