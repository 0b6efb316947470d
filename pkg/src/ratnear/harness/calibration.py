"""Frozen stand-ins for the implicit constants of the reference inequalities.

Every bound-shape assertion in the test suite compares against constants
fitted once by `ratnear calibrate` and frozen into a JSON manifest; CI then
asserts with zero slack against the frozen values, which keeps the suite
deterministic while the underlying constants are merely existential.

The manifest hash is the sha256 of the canonical JSON (sorted keys, no
whitespace) with the `created` timestamp removed, so regenerating an
identical calibration on a different day yields the same hash.
"""

import hashlib
import json
from dataclasses import dataclass, field
from importlib.resources import files

from ..errors import ConfigError

SCHEMA_TAG = "calibration-v1"

# constants every per-(map, theta) entry must define, all positive
MAP_CONSTANT_KEYS = ("E_S", "E_sharp", "K0", "C0", "c_inclusion", "C_lower", "C_semi", "C_tile")


def theta_key(theta) -> str:
    """Canonical render of a shift for manifest lookup (shortest float repr)."""
    return ",".join(repr(float(v)) for v in theta)


def map_key(descriptor: str, theta) -> str:
    return f"{descriptor}|theta={theta_key(theta)}"


@dataclass(frozen=True)
class CalibrationManifest:
    schema: str
    created: str  # ISO date, excluded from the hash
    seed: int
    grids: dict  # fit metadata: which grids/budgets produced the constants
    global_consts: dict  # map-independent entries, e.g. dual_band per dimension
    maps: dict  # map_key -> {constant: value}

    def __post_init__(self):
        if self.schema != SCHEMA_TAG:
            raise ConfigError(f"unsupported calibration schema {self.schema!r}")
        for key, consts in self.maps.items():
            for name in MAP_CONSTANT_KEYS:
                if name not in consts:
                    raise ConfigError(f"manifest entry {key!r} lacks {name}")
                if not float(consts[name]) > 0:
                    raise ConfigError(f"manifest entry {key!r}: {name} must be positive")

    def canonical_dict(self) -> dict:
        return {
            "schema": self.schema,
            "seed": self.seed,
            "grids": self.grids,
            "global": self.global_consts,
            "maps": self.maps,
        }

    def sha256(self) -> str:
        blob = json.dumps(self.canonical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def constants(self, descriptor: str, theta) -> dict:
        key = map_key(descriptor, theta)
        if key not in self.maps:
            raise ConfigError(f"no calibration entry for {key!r}")
        return dict(self.maps[key])

    def dual_band(self, k: int) -> tuple:
        band = self.global_consts.get("dual_band", {}).get(str(k))
        if band is None:
            raise ConfigError(f"no dual band calibrated for dimension {k}")
        return float(band[0]), float(band[1])

    def to_json(self, path) -> None:
        payload = dict(self.canonical_dict())
        payload["created"] = self.created
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def from_payload(payload: dict) -> "CalibrationManifest":
        try:
            return CalibrationManifest(
                schema=payload["schema"],
                created=payload.get("created", ""),
                seed=int(payload["seed"]),
                grids=payload["grids"],
                global_consts=payload["global"],
                maps=payload["maps"],
            )
        except KeyError as exc:
            raise ConfigError(f"calibration manifest missing field {exc}") from exc

    @staticmethod
    def from_json(path) -> "CalibrationManifest":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load calibration manifest {path}: {exc}") from exc
        return CalibrationManifest.from_payload(payload)


def default_manifest_path():
    """Path of the manifest shipped with the package."""
    return files("ratnear") / "data" / "calibration.json"


def load_manifest(path=None) -> CalibrationManifest:
    if path is not None:
        return CalibrationManifest.from_json(path)
    res = default_manifest_path()
    try:
        payload = json.loads(res.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load packaged calibration manifest: {exc}") from exc
    return CalibrationManifest.from_payload(payload)
