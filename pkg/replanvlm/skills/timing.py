from replanvlm.errors import ArityError
from replanvlm.world import HERE, PrimitiveStep


def register(reg):
    def wait(args, ctx):
        n = args[0]
        if isinstance(n, bool) or not isinstance(n, int) or n < 0:
            raise ArityError(f"wait expects a non-negative integer step count, got {n!r}")
        return [PrimitiveStep("MoveAbove", HERE) for _ in range(n)]

    reg("wait", wait)
