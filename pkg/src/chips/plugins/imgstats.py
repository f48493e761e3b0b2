"""Demo plugin: summarize a directory of pulled instances.

Counts the .dcm files under the input directory, sums their voxel
placeholder payloads (PixelData element lengths) and total bytes, and
writes results.tsv in the output directory. Runs as
``python -m chips.plugins.imgstats --inputdir input --outputdir output``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from chips.dicom import DicomError, parse_dataset
from chips.dicom.tags import DicomTag

PIXEL_DATA = DicomTag(0x7FE0, 0x0010)


def run(input_dir: Path, output_dir: Path, fail_with: int = 0) -> int:
    if fail_with:
        print(f"imgstats: failing on request with exit {fail_with}", file=sys.stderr)
        return fail_with
    if not input_dir.is_dir():
        print(f"imgstats: input directory missing: {input_dir}", file=sys.stderr)
        return 2
    file_count = 0
    voxel_bytes = 0
    byte_total = 0
    for path in sorted(input_dir.rglob("*.dcm")):
        file_count += 1
        data = path.read_bytes()
        byte_total += len(data)
        try:
            dataset = parse_dataset(data)
        except DicomError as exc:
            print(f"imgstats: skipping {path.name}: {exc}", file=sys.stderr)
            continue
        pixel = dataset.get(PIXEL_DATA)
        if pixel is not None:
            voxel_bytes += pixel.length
    output_dir.mkdir(parents=True, exist_ok=True)
    with open(output_dir / "results.tsv", "w", encoding="utf-8") as fh:
        fh.write(f"file_count\t{file_count}\n")
        fh.write(f"voxel_bytes\t{voxel_bytes}\n")
        fh.write(f"byte_total\t{byte_total}\n")
    print(f"imgstats: {file_count} files, {voxel_bytes} voxel bytes")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="imgstats")
    parser.add_argument("--inputdir", default="input")
    parser.add_argument("--outputdir", default="output")
    parser.add_argument("--fail-with", type=int, default=0,
                        help="exit with this code instead of running (test hook)")
    args = parser.parse_args(argv)
    return run(Path(args.inputdir), Path(args.outputdir), fail_with=args.fail_with)


if __name__ == "__main__":
    raise SystemExit(main())
