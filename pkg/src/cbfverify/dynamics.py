"""Control-affine dynamics ``x' = f(x) + g(x) u`` and their first-order Taylor bounds."""

from __future__ import annotations

import abc
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import DomainError, NumericError, SchemaError, SpecificationError
from .geometry import HyperBox, interval_matvec_arrays

DOMAIN_TOL = 1e-12


class DynamicsModel(abc.ABC):
    """Control-affine system with analytic Jacobian and Hessian-norm bounds.

    ``f`` and ``g`` accept a single state or a batch with leading axes.
    """

    name = "model"
    state_names: tuple = ()
    control_names: tuple = ()
    is_linear = False

    def __init__(self, state_domain: Optional[HyperBox] = None,
                 control_domain: Optional[HyperBox] = None):
        self.state_domain = state_domain if state_domain is not None else self.default_state_domain()
        self.control_domain = (control_domain if control_domain is not None
                               else self.default_control_domain())
        if self.state_domain.dims != self.state_dim:
            raise SpecificationError(f"{self.name}: state domain must be {self.state_dim}-D")
        if self.control_domain.dims != self.control_dim:
            raise SpecificationError(f"{self.name}: control domain must be {self.control_dim}-D")

    @property
    @abc.abstractmethod
    def state_dim(self) -> int: ...

    @property
    @abc.abstractmethod
    def control_dim(self) -> int: ...

    @abc.abstractmethod
    def default_state_domain(self) -> HyperBox: ...

    @abc.abstractmethod
    def default_control_domain(self) -> HyperBox: ...

    @abc.abstractmethod
    def f(self, x) -> np.ndarray: ...

    @abc.abstractmethod
    def g(self, x) -> np.ndarray: ...

    @abc.abstractmethod
    def jacobian_h(self, x, u) -> np.ndarray:
        """``d h / d x`` at ``(x, u)``, shape ``(n, n)``."""

    @abc.abstractmethod
    def hessian_norm_bound(self, box: HyperBox, u) -> np.ndarray:
        """Per-entry bound on the spectral norm of ``d^2 h_i / dx^2`` over ``box`` at fixed ``u``."""

    def h(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return self.f(x) + np.einsum("...ij,...j->...i", self.g(x), u)

    def params(self) -> dict:
        return {}

    def check_state(self, x, tol: float = DOMAIN_TOL):
        if not self.state_domain.contains(x, tol):
            raise DomainError(f"{self.name}: state {np.asarray(x).tolist()} outside domain "
                              f"{self.state_domain.to_dict()}")

    def check_state_box(self, box: HyperBox, tol: float = DOMAIN_TOL):
        if box.dims != self.state_dim:
            raise SpecificationError(f"{self.name}: box is {box.dims}-D, state is {self.state_dim}-D")
        if not self.state_domain.contains_box(box, tol):
            raise DomainError(f"{self.name}: box {box.to_dict()} leaves state domain "
                              f"{self.state_domain.to_dict()}")

    def check_control(self, u, tol: float = DOMAIN_TOL):
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.size != self.control_dim:
            raise SpecificationError(f"{self.name}: control has length {u.size}, expected {self.control_dim}")
        if not self.control_domain.contains(u, tol):
            raise DomainError(f"{self.name}: control {u.tolist()} outside control domain "
                              f"{self.control_domain.to_dict()}")

    def __repr__(self):
        return f"{type(self).__name__}({self.params()})"


class LinearModel(DynamicsModel):
    """``x' = A x + B u``."""

    is_linear = True
    A: np.ndarray
    B: np.ndarray

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def control_dim(self) -> int:
        return self.B.shape[1]

    def f(self, x):
        return np.asarray(x, dtype=float) @ self.A.T

    def g(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.B, x.shape[:-1] + self.B.shape)

    def jacobian_h(self, x, u):
        return self.A.copy()

    def hessian_norm_bound(self, box, u):
        return np.zeros(self.state_dim)


class DoubleIntegrator1D(LinearModel):
    name = "double_integrator_1d"
    state_names = ("p", "v")
    control_names = ("a",)
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])

    def default_state_domain(self):
        return HyperBox([-1.0, -1.0], [1.0, 1.0])

    def default_control_domain(self):
        return HyperBox([-1.0], [1.0])


class PointRobot(LinearModel):
    """Planar double integrator without gravity."""

    name = "point_robot"
    state_names = ("px", "py", "vx", "vy")
    control_names = ("ax", "ay")
    A = np.block([[np.zeros((2, 2)), np.eye(2)], [np.zeros((2, 2)), np.zeros((2, 2))]])
    B = np.vstack([np.zeros((2, 2)), np.eye(2)])

    def default_state_domain(self):
        return HyperBox([0.0, 0.0, -1.0, -1.0], [4.0, 4.0, 1.0, 1.0])

    def default_control_domain(self):
        return HyperBox([-1.0, -1.0], [1.0, 1.0])


class DubinsCar(DynamicsModel):
    """Kinematic car ``(v cos th, v sin th, w)`` with speed and turn rate as controls."""

    name = "dubins_car"
    state_names = ("px", "py", "theta")
    control_names = ("v", "omega")

    def __init__(self, state_domain=None, control_domain=None, radius: float = 0.175):
        self.radius = float(radius)  # body radius; only used for drawing
        super().__init__(state_domain, control_domain)

    @property
    def state_dim(self):
        return 3

    @property
    def control_dim(self):
        return 2

    def default_state_domain(self):
        return HyperBox([0.0, 0.0, 0.0], [4.0, 4.0, math.pi])

    def default_control_domain(self):
        return HyperBox([-1.0, -1.0], [1.0, 1.0])

    def f(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def g(self, x):
        x = np.asarray(x, dtype=float)
        th = x[..., 2]
        out = np.zeros(x.shape[:-1] + (3, 2))
        out[..., 0, 0] = np.cos(th)
        out[..., 1, 0] = np.sin(th)
        out[..., 2, 1] = 1.0
        return out

    def jacobian_h(self, x, u):
        th = float(np.asarray(x)[2])
        v = float(np.asarray(u)[0])
        J = np.zeros((3, 3))
        J[0, 2] = -v * math.sin(th)
        J[1, 2] = v * math.cos(th)
        return J

    def hessian_norm_bound(self, box, u):
        v = abs(float(np.asarray(u)[0]))
        return np.array([v, v, 0.0])

    def params(self):
        return {"radius": self.radius}


class PlanarQuadrotor(DynamicsModel):
    """Planar quadrotor driven by two rotor thrusts.

    State ``(px, py, theta, vx, vy, omega)``; the moment of inertia defaults
    to ``0.2 * mass * arm**2``.
    """

    name = "planar_quadrotor"
    state_names = ("px", "py", "theta", "vx", "vy", "omega")
    control_names = ("u1", "u2")

    def __init__(self, state_domain=None, control_domain=None, mass: float = 1.0,
                 arm: float = 0.3, gravity: float = 9.81, inertia: Optional[float] = None):
        self.mass = float(mass)
        self.arm = float(arm)
        self.gravity = float(gravity)
        self.inertia = float(inertia) if inertia is not None else 0.2 * self.mass * self.arm ** 2
        if self.mass <= 0 or self.inertia <= 0:
            raise SpecificationError("mass and inertia must be positive")
        super().__init__(state_domain, control_domain)

    @property
    def state_dim(self):
        return 6

    @property
    def control_dim(self):
        return 2

    def default_state_domain(self):
        return HyperBox([0.0, 0.0, -0.1, -1.0, -1.0, -1.0], [4.0, 4.0, 0.1, 1.0, 1.0, 1.0])

    def default_control_domain(self):
        return HyperBox([4.0, 4.0], [6.0, 6.0])

    def f(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., 0] = x[..., 3]
        out[..., 1] = x[..., 4]
        out[..., 2] = x[..., 5]
        out[..., 4] = -self.gravity
        return out

    def g(self, x):
        x = np.asarray(x, dtype=float)
        th = x[..., 2]
        out = np.zeros(x.shape[:-1] + (6, 2))
        s = -np.sin(th) / self.mass
        c = np.cos(th) / self.mass
        k = self.arm / (2 * self.inertia)
        out[..., 3, 0] = s
        out[..., 3, 1] = s
        out[..., 4, 0] = c
        out[..., 4, 1] = c
        out[..., 5, 0] = -k
        out[..., 5, 1] = k
        return out

    def jacobian_h(self, x, u):
        th = float(np.asarray(x)[2])
        thrust = float(np.sum(u))
        J = np.zeros((6, 6))
        J[0, 3] = J[1, 4] = J[2, 5] = 1.0
        J[3, 2] = -thrust * math.cos(th) / self.mass
        J[4, 2] = -thrust * math.sin(th) / self.mass
        return J

    def hessian_norm_bound(self, box, u):
        m = abs(float(np.sum(u))) / self.mass
        return np.array([0.0, 0.0, 0.0, m, m, 0.0])

    def params(self):
        return {"mass": self.mass, "arm": self.arm, "gravity": self.gravity,
                "inertia": self.inertia}


BUILTIN_MODELS = {cls.name: cls for cls in (DoubleIntegrator1D, PointRobot, DubinsCar, PlanarQuadrotor)}


def make_model(name: str, params: Optional[dict] = None, state_domain=None,
               control_domain=None) -> DynamicsModel:
    try:
        cls = BUILTIN_MODELS[name]
    except KeyError:
        raise SchemaError(f"unknown model {name!r}; choose from {sorted(BUILTIN_MODELS)}") from None
    params = dict(params or {})
    try:
        return cls(state_domain=state_domain, control_domain=control_domain, **params)
    except TypeError as exc:
        raise SchemaError(f"bad parameters for {name}: {exc}") from exc


@dataclass(frozen=True)
class DynamicsBounds:
    """``W x + b_lo <= h(x, u_v) <= W x + b_hi`` on ``box``."""

    W: np.ndarray
    b_lo: np.ndarray
    b_hi: np.ndarray
    box: HyperBox
    u_v: np.ndarray

    def concretized(self) -> "DynamicsBounds":
        """Constant bounds: slope zero, offsets at the interval ends over the box."""
        lo, hi = interval_matvec_arrays(self.W, self.box.lower, self.box.upper)
        return DynamicsBounds(np.zeros_like(self.W), lo + self.b_lo, hi + self.b_hi,
                              self.box, self.u_v)

    def lower(self, X) -> np.ndarray:
        return np.asarray(X) @ self.W.T + self.b_lo

    def upper(self, X) -> np.ndarray:
        return np.asarray(X) @ self.W.T + self.b_hi

    def to_dict(self) -> dict:
        return {"W": self.W.tolist(), "b_lo": self.b_lo.tolist(), "b_hi": self.b_hi.tolist(),
                "u_v": self.u_v.tolist()}


def taylor_bounds(model: DynamicsModel, box: HyperBox, u_v, check_domain: bool = True) -> DynamicsBounds:
    """First-order Taylor enclosure of ``h(., u_v)`` expanded at the box center.

    The remainder is ``0.5 * ||upper - lower||_2^2 * M_i`` per entry, with
    ``M_i`` from ``model.hessian_norm_bound``. Linear models get the exact
    ``(A, B u_v)`` pair.
    """
    u_v = np.asarray(u_v, dtype=float).reshape(-1)
    if check_domain:
        model.check_state_box(box)
        model.check_control(u_v)
    elif box.dims != model.state_dim:
        raise SpecificationError(f"{model.name}: box is {box.dims}-D, state is {model.state_dim}-D")
    if model.is_linear:
        b = model.B @ u_v
        return DynamicsBounds(model.A.copy(), b.copy(), b.copy(), box, u_v)
    x0 = box.center
    W = np.asarray(model.jacobian_h(x0, u_v), dtype=float)
    if not np.all(np.isfinite(W)):
        raise NumericError(f"{model.name}: non-finite Jacobian at {x0.tolist()}")
    base = model.h(x0, u_v) - W @ x0
    M = np.asarray(model.hessian_norm_bound(box, u_v), dtype=float)
    rem = 0.5 * float(np.sum(box.widths ** 2)) * M
    return DynamicsBounds(W, base - rem, base + rem, box, u_v)


@dataclass
class Scenario:
    model: DynamicsModel
    state_box: HyperBox
    control_box: HyperBox
    obstacle: Optional[dict] = None
    params: dict = field(default_factory=dict)
    source: Optional[str] = None

    def to_dict(self) -> dict:
        doc = {"model": self.model.name, "state_box": self.state_box.to_dict(),
               "control_box": self.control_box.to_dict(), "params": self.params}
        if self.obstacle is not None:
            doc["obstacle"] = self.obstacle
        return doc


def scenario_from_dict(data: dict, source: Optional[str] = None) -> Scenario:
    if not isinstance(data, dict) or "model" not in data:
        raise SchemaError("scenario needs a 'model' field")
    params = data.get("params") or {}
    if not isinstance(params, dict):
        raise SchemaError("scenario 'params' must be an object")
    try:
        state_box = HyperBox.from_dict(data["state_box"]) if "state_box" in data else None
        control_box = HyperBox.from_dict(data["control_box"]) if "control_box" in data else None
    except SpecificationError as exc:
        raise SchemaError(f"scenario box: {exc}") from exc
    model = make_model(data["model"], params, state_box, control_box)
    obstacle = data.get("obstacle")
    if obstacle is not None and not ({"center", "size"} <= set(obstacle)):
        raise SchemaError("scenario 'obstacle' needs 'center' and 'size'")
    return Scenario(model, model.state_domain, model.control_domain, obstacle, params, source)


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from exc
    try:
        return scenario_from_dict(data, str(path))
    except (SchemaError, SpecificationError) as exc:
        raise SchemaError(f"{path}: {exc}") from exc


# obstacle shared by the built-in planar environments: center (2, 1), size 1 x 2
DEFAULT_OBSTACLE = {"center": [2.0, 1.0], "size": [1.0, 2.0]}
