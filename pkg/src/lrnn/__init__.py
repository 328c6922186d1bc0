"""Lifted relational neural networks.

Weighted Datalog templates are grounded against each example's facts; the
resulting derivations become a per-example computation graph whose weights
are shared across all examples and trained with ADAM.
"""
from .autodiff import (AdamState, Batch, GradientTape, ParameterStore, adam_step, backward,
                       init_params, load_checkpoint, save_checkpoint)
from .errors import (CompileError, DataError, GroundingError, LrnnError, ParseError, ShapeError,
                     TemplateError)
from .graph import ComputationGraph, compile_graph, export_dot, forward, to_json
from .grounder import HerbrandModel, dump_derivations, ground, ground_naive_oracle
from .kernels import BACKEND
from .logic import Atom, Constant, Predicate, Substitution, Variable, apply, atom, match
from .parser import (Example, RuleAst, Template, WeightSpec, expand_layers, parse_examples,
                     parse_template, render)

__version__ = "0.1.0"
