from replanvlm.errors import UnresolvableSelector
from replanvlm.world import PULL, PrimitiveStep


def register(reg):
    def open_drawer(args, ctx):
        snap = ctx["snapshot"]
        name = str(args[0]).strip().lower()
        drawers = [c for c in snap.containers if c.kind == "drawer"]
        found = [c for c in drawers if c.id.lower() == name] or [c for c in drawers if name in (c.kind, f"the {c.kind}")]
        if not found:
            raise UnresolvableSelector(str(args[0]), f"no drawer matches '{args[0]}'")
        drawer = sorted(found, key=lambda c: c.id)[0]
        if not drawer.open and drawer.id not in ctx["opened"]:
            ctx["opened"].append(drawer.id)
        return [
            PrimitiveStep("MoveAbove", drawer.id),
            PrimitiveStep("Lower"),
            PrimitiveStep("CloseGripper"),
            PrimitiveStep("Transfer", PULL),
            PrimitiveStep("OpenGripper"),
            PrimitiveStep("Lift"),
        ]

    reg("open_drawer", open_drawer)
