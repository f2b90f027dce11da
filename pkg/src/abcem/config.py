"""XML model configuration: parsing, structural validation, overrides.

Schema (element names; every leaf holds a single value)::

    <simulation>
      <settings>             numSteps, deltaT, startPrice, repetitions?, seed?
      <randomNumberGenerator>?  algorithm?, mode?, poolSize?
      <agents>               one or more <agent> blocks, see AGENT_SCHEMAS
      <excessDemandCalculatorSettings>  excessDemandCalculatorClass, marketDepth?
      <priceCalculatorSettings>         priceCalculatorClass + class keys
      <dataWriterSettings>?  format?, directory?
      <recording>?           zero or more <observable> names
    </simulation>

Unknown elements, missing required keys and malformed values raise
:class:`ConfigError` naming the element path.
"""
from __future__ import annotations

import itertools
import math
import os
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from .cross import CrossParams
from .harras import HarrasParams
from .lls import LLSGroup, LLSParams
from .market import BisectionSettings, PriceRuleSpec
from .population import BISECTION, TRADING_VOLUME
from .rng import MT_ALGORITHM, GeneratorSpec

SEED_ENV = "ABCEM_SEED"
OUTPUT_FORMATS = ("csv", "container")

REQUIRED = object()


class ConfigError(ValueError):
    pass


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text):
    return int(text.strip())


def _float(text):
    value = float(text.strip())
    if math.isnan(value):
        raise ValueError("NaN is not allowed")
    return value


def _str(text):
    return text.strip()


SETTINGS_SCHEMA = {
    "numSteps": (_int, REQUIRED),
    "deltaT": (_float, REQUIRED),
    "startPrice": (_float, REQUIRED),
    "repetitions": (_int, 1),
    "seed": (_int, 0),
}
RNG_SCHEMA = {
    "algorithm": (_str, MT_ALGORITHM),
    "mode": (_str, "pooled"),
    "poolSize": (_int, 65536),
}
WRITER_SCHEMA = {
    "format": (_str, "csv"),
    "directory": (_str, "output"),
}

# key -> (parser, default, dataclass field)
AGENT_SCHEMAS = {
    "AgentCross": {
        "name": (_str, "cross", None),
        "count": (_int, REQUIRED, None),
        "A1": (_float, 0.1, "A1"),
        "A2": (_float, 0.3, "A2"),
        "b1": (_float, 25.0, "b1"),
        "b2": (_float, 100.0, "b2"),
        "wealth": (_bool, False, "wealth"),
        "r": (_float, 0.01, "r"),
        "gamma": (_float, 0.5, "gamma"),
    },
    "AgentLLS": {
        "name": (_str, "lls", None),
        "sigma_gamma": (_float, 0.0, "sigma_gamma"),
        "r": (_float, 0.04, "r"),
        "z1": (_float, 0.05, "z1"),
        "z2": (_float, 0.05, "z2"),
        "mu_h": (_float, 0.0415, "mu_h"),
        "sigma_h": (_float, 0.003, "sigma_h"),
        "scaling_mode": (_str, "fixed-memory", "scaling_mode"),
        "return_denominator": (_str, "previous", "return_denominator"),
        "noise_mode": (_str, "admissible", "noise_mode"),
        "noise_width": (_float, 2.0, "noise_width"),
        "initial_wealth": (_float, 1000.0, "w0"),
        "initial_shares": (_float, 100.0, "n0"),
        "initial_gamma": (_float, 0.4, "gamma0"),
        "initial_dividend": (_float, 0.2, "d0"),
    },
    "AgentHarras": {
        "name": (_str, "harras", None),
        "count": (_int, REQUIRED, None),
        "C1": (_float, 0.0, "C1"),
        "C2": (_float, 1.0, "C2"),
        "C3": (_float, 1.0, "C3"),
        "Omega": (_float, 2.0, "Omega"),
        "g": (_float, 0.02, "g"),
        "alpha": (_float, 0.95, "alpha"),
        "lambda": (_float, 0.25, "lam"),
        "opinion_variant": (_str, "normalized-quarter", "opinion_variant"),
        "sigma_floor": (_float, 1e-8, "sigma_floor"),
    },
}
LLS_GROUP_SCHEMA = {"count": (_int, REQUIRED), "memory": (_int, REQUIRED)}
AGENT_CAPABILITIES = {"AgentCross": frozenset(),
                      "AgentLLS": frozenset({BISECTION}),
                      "AgentHarras": frozenset({TRADING_VOLUME})}

ED_SCHEMAS = {
    "ExcessDemandCalculatorMean": {},
    "ExcessDemandCalculatorHarras": {"marketDepth": (_float, None)},
}
ED_REQUIREMENTS = {"ExcessDemandCalculatorMean": frozenset(),
                   "ExcessDemandCalculatorHarras": frozenset({TRADING_VOLUME})}

PRICE_SCHEMAS = {
    "PriceCalculatorCross": {"theta": (_float, 0.0), "marketDepth": (_float, 0.2)},
    "PriceCalculatorGeneral": {"theta": (_float, 0.0),
                               "marketDepth": (_float, 0.2),
                               "drift": (_str, "F1-ed-derivative"),
                               "diffusion": (_str, "cross-heteroskedastic")},
    "PriceCalculatorHarras": {},
    "PriceCalculatorBisection": {"epsilon": (_float, REQUIRED),
                                 "maxIterations": (_int, REQUIRED),
                                 "lowerBound": (_float, REQUIRED),
                                 "upperBound": (_float, REQUIRED),
                                 "relativeBounds": (_bool, False),
                                 "maxExpansions": (_int, 0),
                                 "scanPoints": (_int, 0),
                                 # accepted for compatibility, unused by bisection
                                 "theta": (_float, 0.0),
                                 "marketDepth": (_float, 0.2)},
}
PRICE_VARIANT = {"PriceCalculatorCross": "cross-exponential",
                 "PriceCalculatorGeneral": "general-sde",
                 "PriceCalculatorHarras": "harras-log",
                 "PriceCalculatorBisection": "bisection-rational"}
PRICE_REQUIREMENTS = {"PriceCalculatorBisection": frozenset({BISECTION})}


@dataclass(frozen=True)
class AgentBlock:
    agent_class: str
    name: str
    count: int
    params: object  # CrossParams | LLSParams | HarrasParams

    @property
    def capabilities(self):
        return AGENT_CAPABILITIES[self.agent_class]


@dataclass(frozen=True)
class EDCalculatorSpec:
    calculator_class: str
    market_depth: float | None = None


@dataclass(frozen=True)
class RunPlan:
    num_steps: int
    delta_t: float
    start_price: float
    repetitions: int = 1
    seed: int = 0


@dataclass(frozen=True)
class OutputSpec:
    format: str = "csv"
    directory: str = "output"


@dataclass(frozen=True)
class SimulationConfig:
    run: RunPlan
    agents: tuple
    excess_demand: EDCalculatorSpec
    price: PriceRuleSpec
    price_class: str
    rng_mode: str = "pooled"
    pool_size: int = 65536
    rng_algorithm: str = MT_ALGORITHM
    output: OutputSpec = OutputSpec()
    recording: tuple | None = None
    source_text: str = field(default="", compare=False, repr=False)

    @property
    def num_agents(self) -> int:
        return sum(b.count for b in self.agents)

    def generator_spec(self, seed: int) -> GeneratorSpec:
        return GeneratorSpec(seed=seed, mode=self.rng_mode, pool_size=self.pool_size,
                             algorithm=self.rng_algorithm)


# parsing -------------------------------------------------------------------


def _leaves(elem, path, schema, allowed_children=()):
    """Read the leaf children of ``elem`` according to ``schema``."""
    values = {}
    for child in elem:
        if child.tag in allowed_children:
            continue
        cpath = f"{path}/{child.tag}"
        if child.tag not in schema:
            raise ConfigError(f"unknown element {cpath}")
        if len(child):
            raise ConfigError(f"element {cpath} must not have children")
        if child.tag in values:
            raise ConfigError(f"duplicate element {cpath}")
        parser = schema[child.tag][0]
        try:
            values[child.tag] = parser(child.text or "")
        except ValueError as exc:
            raise ConfigError(f"invalid value {child.text!r} for {cpath}: {exc}") from None
    for key, spec in schema.items():
        if key not in values:
            if spec[1] is REQUIRED:
                raise ConfigError(f"missing required element {path}/{key}")
            values[key] = spec[1]
    return values


def _class_of(elem, path, tag):
    found = elem.findall(tag)
    if len(found) != 1:
        raise ConfigError(f"{path} needs exactly one <{tag}>")
    return (found[0].text or "").strip()


def _unique(root, tag, required=True):
    found = root.findall(tag)
    if len(found) > 1:
        raise ConfigError(f"duplicate section simulation/{tag}")
    if not found:
        if required:
            raise ConfigError(f"missing section simulation/{tag}")
        return None
    return found[0]


def _agent_block(elem, path, index):
    cls = _class_of(elem, path, "agentClass")
    if cls not in AGENT_SCHEMAS:
        raise ConfigError(f"unknown agent class {cls!r} at {path}/agentClass")
    schema = AGENT_SCHEMAS[cls]
    leaf_schema = {k: v[:2] for k, v in schema.items()}
    children = ("agentClass", "group") if cls == "AgentLLS" else ("agentClass",)
    values = _leaves(elem, path, leaf_schema, children)
    kwargs = {v[2]: values[k] for k, v in schema.items() if v[2] is not None}
    try:
        if cls == "AgentCross":
            params = CrossParams(**kwargs)
            count = values["count"]
        elif cls == "AgentHarras":
            params = HarrasParams(**kwargs)
            count = values["count"]
        else:
            groups = []
            for j, g in enumerate(elem.findall("group")):
                gv = _leaves(g, f"{path}/group[{j}]", LLS_GROUP_SCHEMA)
                groups.append(LLSGroup(gv["count"], gv["memory"]))
            if not groups:
                raise ConfigError(f"{path} needs at least one <group>")
            params = LLSParams(groups=tuple(groups), **kwargs)
            count = params.size
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid parameters in {path}: {exc}") from None
    if count < 1:
        raise ConfigError(f"{path}/count must be positive")
    return AgentBlock(cls, values["name"], count, params)


def parse_config_text(text: str) -> SimulationConfig:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise ConfigError(f"malformed XML: {exc}") from None
    if root.tag != "simulation":
        raise ConfigError(f"root element must be <simulation>, got <{root.tag}>")
    sections = ("settings", "randomNumberGenerator", "agents", "excessDemandCalculatorSettings",
                "priceCalculatorSettings", "dataWriterSettings", "recording")
    for child in root:
        if child.tag not in sections:
            raise ConfigError(f"unknown element simulation/{child.tag}")

    s = _leaves(_unique(root, "settings"), "simulation/settings", SETTINGS_SCHEMA)
    if s["numSteps"] < 0:
        raise ConfigError("simulation/settings/numSteps must be non-negative")
    if not s["deltaT"] > 0:
        raise ConfigError("simulation/settings/deltaT must be positive")
    if not s["startPrice"] > 0:
        raise ConfigError("simulation/settings/startPrice must be positive")
    if s["repetitions"] < 1:
        raise ConfigError("simulation/settings/repetitions must be positive")
    if not 0 <= s["seed"] < 2**64:
        raise ConfigError("simulation/settings/seed must be a 64-bit unsigned integer")
    run = RunPlan(num_steps=s["numSteps"], delta_t=s["deltaT"], start_price=s["startPrice"],
                  repetitions=s["repetitions"], seed=s["seed"])

    rng_elem = _unique(root, "randomNumberGenerator", required=False)
    r = _leaves(rng_elem if rng_elem is not None else ET.Element("x"),
                "simulation/randomNumberGenerator", RNG_SCHEMA)
    try:
        GeneratorSpec(seed=0, mode=r["mode"], pool_size=r["poolSize"], algorithm=r["algorithm"])
    except ValueError as exc:
        raise ConfigError(f"simulation/randomNumberGenerator: {exc}") from None

    agents_elem = _unique(root, "agents")
    blocks = []
    for i, child in enumerate(agents_elem):
        path = f"simulation/agents/agent[{i}]"
        if child.tag != "agent":
            raise ConfigError(f"unknown element simulation/agents/{child.tag}")
        blocks.append(_agent_block(child, path, i))
    if not blocks:
        raise ConfigError("simulation/agents needs at least one <agent>")
    names = [b.name for b in blocks]
    if len(set(names)) != len(names):
        raise ConfigError(f"agent block names must be unique, got {names}")

    ed_elem = _unique(root, "excessDemandCalculatorSettings")
    ed_path = "simulation/excessDemandCalculatorSettings"
    ed_cls = _class_of(ed_elem, ed_path, "excessDemandCalculatorClass")
    if ed_cls not in ED_SCHEMAS:
        raise ConfigError(f"unknown excess demand calculator {ed_cls!r}")
    ev = _leaves(ed_elem, ed_path, ED_SCHEMAS[ed_cls], ("excessDemandCalculatorClass",))
    depth = ev.get("marketDepth")
    if depth is not None and not depth > 0:
        raise ConfigError(f"{ed_path}/marketDepth must be positive")
    ed_spec = EDCalculatorSpec(ed_cls, depth)

    price_elem = _unique(root, "priceCalculatorSettings")
    price_cls = _class_of(price_elem, "priceCalculatorSettings", "priceCalculatorClass")
    if price_cls not in PRICE_SCHEMAS:
        raise ConfigError(f"unknown price calculator {price_cls!r}")
    pv = _leaves(price_elem, "priceCalculatorSettings", PRICE_SCHEMAS[price_cls],
                 ("priceCalculatorClass",))
    try:
        kwargs = {"variant": PRICE_VARIANT[price_cls]}
        if "theta" in pv:
            kwargs["theta"] = pv["theta"]
        if "marketDepth" in pv:
            kwargs["kappa"] = pv["marketDepth"]
        if price_cls == "PriceCalculatorGeneral":
            kwargs["drift"], kwargs["diffusion"] = pv["drift"], pv["diffusion"]
        if price_cls == "PriceCalculatorBisection":
            kwargs["bisection"] = BisectionSettings(
                epsilon=pv["epsilon"], max_iterations=pv["maxIterations"],
                lower_bound=pv["lowerBound"], upper_bound=pv["upperBound"],
                relative_bounds=pv["relativeBounds"], max_expansions=pv["maxExpansions"],
                scan_points=pv["scanPoints"])
        price = PriceRuleSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"priceCalculatorSettings: {exc}") from None

    writer_elem = _unique(root, "dataWriterSettings", required=False)
    w = _leaves(writer_elem if writer_elem is not None else ET.Element("x"),
                "simulation/dataWriterSettings", WRITER_SCHEMA)
    if w["format"] not in OUTPUT_FORMATS:
        raise ConfigError(f"simulation/dataWriterSettings/format must be one of {OUTPUT_FORMATS}")

    rec_elem = _unique(root, "recording", required=False)
    recording = None
    if rec_elem is not None:
        recording = []
        for child in rec_elem:
            if child.tag != "observable":
                raise ConfigError(f"unknown element simulation/recording/{child.tag}")
            recording.append((child.text or "").strip())
        recording = tuple(recording)

    config = SimulationConfig(run=run, agents=tuple(blocks), excess_demand=ed_spec,
                              price=price, price_class=price_cls, rng_mode=r["mode"],
                              pool_size=r["poolSize"], rng_algorithm=r["algorithm"],
                              output=OutputSpec(w["format"], w["directory"]),
                              recording=recording, source_text=text)
    validate_assembly(config)
    return config


def parse_config(path) -> SimulationConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not text.strip():
        raise ConfigError(f"config {path} is empty")
    return parse_config_text(text)


def validate_assembly(config: SimulationConfig) -> SimulationConfig:
    """Structural compatibility of agents, ED calculator and price calculator.

    Every agent block must offer the capabilities the market blocks require.
    Whether the combination is a sensible economic model is not checked.
    """
    need = set(ED_REQUIREMENTS[config.excess_demand.calculator_class])
    need |= PRICE_REQUIREMENTS.get(config.price_class, frozenset())
    for block in config.agents:
        missing = need - block.capabilities
        if missing:
            raise ConfigError(
                f"agent block {block.name!r} ({block.agent_class}) lacks capability "
                f"{sorted(missing)} required by {config.excess_demand.calculator_class} / "
                f"{config.price_class}")
        if block.agent_class == "AgentHarras" and math.isqrt(block.count) ** 2 != block.count:
            raise ConfigError(f"agent block {block.name!r}: Harras agents need a perfect "
                              f"square count, got {block.count}")
    return config


# overrides and sweeps ------------------------------------------------------

_STEP = re.compile(r"^([A-Za-z_][\w.-]*)(?:\[(\d+)\])?$")


def _apply_override(root, path: str, value: str) -> None:
    parts = path.strip("/").split("/")
    if parts and parts[0] == "simulation":
        parts = parts[1:]
    if not parts:
        raise ConfigError(f"empty override path {path!r}")
    node = root
    for depth, part in enumerate(parts):
        m = _STEP.match(part)
        if not m:
            raise ConfigError(f"malformed override path {path!r}")
        tag, idx = m.group(1), int(m.group(2) or 0)
        found = node.findall(tag)
        if idx < len(found):
            node = found[idx]
        elif idx == len(found) and depth == len(parts) - 1:
            node = ET.SubElement(node, tag)
        else:
            raise ConfigError(f"override path {path!r}: no element {part!r}")
    if len(node):
        raise ConfigError(f"override path {path!r} does not name a leaf element")
    node.text = str(value)


def with_overrides(config: SimulationConfig, overrides: dict) -> SimulationConfig:
    """Rewrite leaf values (``path -> value``) in the config text and reparse."""
    root = ET.fromstring(config.source_text)
    for path, value in overrides.items():
        _apply_override(root, path, value)
    return parse_config_text(ET.tostring(root, encoding="unicode"))


def resolve_seed(config: SimulationConfig, cli_seed: int | None = None,
                 environ=None) -> SimulationConfig:
    """Seed precedence: command line, then the ABCEM_SEED variable, then the file."""
    environ = os.environ if environ is None else environ
    if cli_seed is not None:
        seed = cli_seed
    elif environ.get(SEED_ENV, "").strip():
        try:
            seed = int(environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be a decimal integer") from None
    else:
        return config
    return with_overrides(config, {"settings/seed": seed})


def expand_sweep(config: SimulationConfig, params: dict) -> list:
    """Cartesian product over ``path -> [values]``, paths in lexicographic order.

    Returns a list of ``(assignment, config)`` pairs.
    """
    paths = sorted(params)
    out = []
    for combo in itertools.product(*(params[p] for p in paths)):
        assignment = dict(zip(paths, combo))
        out.append((assignment, with_overrides(config, assignment)))
    return out


def bundled_config(name: str):
    """Path of a config shipped with the package, e.g. ``bundled_config("cross_base")``."""
    from importlib.resources import files
    path = files("abcem") / "configs" / f"{name}.xml"
    if not path.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return path
