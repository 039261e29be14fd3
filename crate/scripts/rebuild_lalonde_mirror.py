"""Rebuild the local LaLonde mirror under data/lalonde/.

The Dehejia-Wahba files are normally served from
https://users.nber.org/~rdehejia/data/. When that host is unreachable the
same records can be recovered from the DAAG tables redistributed by the
`rdatasets` package:

    nsw74demo (trt == 1) -> nswre74_treated.txt   (185 rows)
    psid1                -> psid_controls.txt      (2490 rows)
    cps1                 -> cps_controls.txt       (15992 rows)

Column order: treat age educ black hisp married nodegree re74 re75 re78.
"""
import pathlib
import rdatasets

COLS = ["trt", "age", "educ", "black", "hisp", "marr", "nodeg", "re74", "re75", "re78"]
OUT = pathlib.Path(__file__).resolve().parent.parent / "data" / "lalonde"


def write(frame, name):
    lines = []
    for row in frame[COLS].itertuples(index=False):
        ints = [f"{int(v)}" for v in row[:7]]
        reals = [f"{float(v):.4f}" for v in row[7:]]
        lines.append("  ".join(ints + reals))
    (OUT / name).write_text("\n".join(lines) + "\n")
    print(name, len(lines))


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    demo = rdatasets.data("DAAG", "nsw74demo")
    write(demo[demo.trt == 1], "nswre74_treated.txt")
    write(rdatasets.data("DAAG", "psid1"), "psid_controls.txt")
    write(rdatasets.data("DAAG", "cps1"), "cps_controls.txt")


if __name__ == "__main__":
    main()
