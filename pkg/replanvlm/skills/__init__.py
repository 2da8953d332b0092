from . import grasp as grasp
from . import release as release
from . import drawer as drawer
from . import timing as timing


def register_all(registry: dict, register_skill):
    for mod in (grasp, release, drawer, timing):
        if hasattr(mod, "register"):
            mod.register(register_skill)
