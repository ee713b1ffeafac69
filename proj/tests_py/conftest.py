import glob
import os
import shutil
import sys

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def _stage_package():
    candidates = sorted(
        p
        for p in glob.glob(os.path.join(ROOT, "build*", "**", "_core*.so"), recursive=True)
        if "pytest_pkg" not in p
    )
    if not candidates:
        raise RuntimeError(
            "_core extension not found; build it first:\n"
            "  cmake -S . -B build -DFACL_BUILD_PYTHON=ON\n"
            "  cmake --build build --target _core"
        )
    stage = os.path.join(ROOT, "build", "pytest_pkg")
    pkg = os.path.join(stage, "facl")
    os.makedirs(pkg, exist_ok=True)
    shutil.copy2(os.path.join(ROOT, "python", "facl", "__init__.py"), pkg)
    shutil.copy2(candidates[-1], pkg)
    return stage


sys.path.insert(0, _stage_package())
