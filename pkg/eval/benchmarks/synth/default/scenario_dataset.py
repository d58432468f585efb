import json
import sys

from pathlib import Path

ROOT = Path(__file__).resolve().parents[4]
sys.path.append(str(ROOT))

from core.dataset import SynthSpec, generate_synthetic, load_dataset, write_dataset

ROOT_PATH = Path(__file__).resolve().parent


def load_spec() -> SynthSpec:
    with open(ROOT_PATH / "config.json", 'r') as fr:
        return SynthSpec.from_dict(json.load(fr))


def main():
    # 1. generating
    dataset = generate_synthetic(load_spec())

    # 2. saving
    data_dir = ROOT_PATH / "data"
    if not (data_dir / "dataset.json").exists():
        write_dataset(dataset, data_dir)
    else:
        print("Dataset already exists!")

    # 3. loading
    dataset = load_dataset(data_dir)
    print(dataset)


if __name__ == '__main__':
    main()
