from replanvlm.world import USER, PrimitiveStep


def register(reg):
    def place(args, ctx):
        dest = ctx["bind_destination"](args[0])
        return [PrimitiveStep("Transfer", dest), PrimitiveStep("Lower"), PrimitiveStep("OpenGripper")]

    def give(args, ctx):
        # the delivery pose is fixed
        return [PrimitiveStep("Transfer", USER), PrimitiveStep("OpenGripper")]

    reg("place", place); reg("give", give)
