from replanvlm.world import PrimitiveStep


def register(reg):
    def pick(args, ctx):
        target = ctx["bind_object"](args[0])
        return [
            PrimitiveStep("MoveAbove", target),
            PrimitiveStep("Lower"),
            PrimitiveStep("CloseGripper"),
            PrimitiveStep("Lift"),
        ]

    reg("pick", pick)
