from src.modules.errors import FixtureMismatch
from src.modules.fixtures import MANIFEST, regenerate_fixtures


def run(args):
    try:
        changed = regenerate_fixtures(args.manifest or MANIFEST, check=args.check)
    except FixtureMismatch as e:
        print(e)
        return 2
    print("fixtures changed: " + ", ".join(changed) if changed else "fixtures unchanged")
    return 0
