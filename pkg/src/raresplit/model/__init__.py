"""Guarded-command stochastic models: parsing and simulation."""
from .engine import (CompiledModel, ModelState, StateSpaceError, compile_model,
                     exact_distribution, initial_state, step)
from .lang import (Branch, Command, ModelAst, ModelError, ModuleDef, VarDecl,
                   format_model, parse_model)

__all__ = ["Branch", "Command", "CompiledModel", "ModelAst", "ModelError", "ModelState",
           "ModuleDef", "StateSpaceError", "VarDecl", "compile_model", "exact_distribution",
           "format_model", "initial_state", "parse_model", "step"]
