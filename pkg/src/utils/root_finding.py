"""
単調関数の求根

原点から幾何的にブラケットを広げ、符号変化を見つけたら Brent 法で解く。
"""
from dataclasses import dataclass
import math
from typing import Callable, Optional, Tuple

from scipy.optimize import brentq

from src.core.errors import BracketError, SolverError
from src.utils.logger import logger
from config.settings import SOLVER


@dataclass(frozen=True)
class RootResult:
    """求根結果"""
    root: float
    residual: float
    iterations: int
    bracket: Tuple[float, float]


def expand_bracket(
    func: Callable[[float], float],
    start: float = 0.0,
    step: float = 1.0,
    factor: float = SOLVER['bracket_factor'],
    cap: float = SOLVER['bracket_cap']
) -> Tuple[float, float, float, float]:
    """
    start から両側に step·factor^k ずつ広げて符号変化を探す

    Returns:
        (a, b, f(a), f(b))、f(a)·f(b) <= 0
    """
    f0 = func(start)
    if f0 == 0.0:
        return start, start, f0, f0
    width = step
    a, fa = start, f0
    b, fb = start, f0
    while width <= cap:
        left, right = start - width, start + width
        f_left, f_right = func(left), func(right)
        if math.copysign(1.0, f_right) != math.copysign(1.0, f0) or f_right == 0.0:
            return b, right, fb, f_right
        if math.copysign(1.0, f_left) != math.copysign(1.0, f0) or f_left == 0.0:
            return left, a, f_left, fa
        a, fa = left, f_left
        b, fb = right, f_right
        width *= factor
    raise BracketError("No sign change found", (a, b), (fa, fb))


def _refine(
    func: Callable[[float], float],
    x: float,
    fx: float,
    bracket: Tuple[float, float],
    f_left: float,
    tol: float
) -> Tuple[float, float, int]:
    """|f(x)| <= tol になるまでブラケットを二分する（隣接する浮動小数点数で打ち切り）"""
    lo, hi = bracket
    best = (x, fx)
    evaluations = 0
    if abs(fx) > tol:
        # Brent の根の ±tol に符号変化があればそこから始める
        left, right = max(lo, x - tol), min(hi, x + tol)
        f_lo, f_hi = func(left), func(right)
        evaluations += 2
        for point in ((left, f_lo), (right, f_hi)):
            if abs(point[1]) < abs(best[1]):
                best = point
        if (f_lo > 0.0) == (f_left > 0.0) and (f_hi > 0.0) != (f_left > 0.0):
            lo, hi = left, right
    while abs(fx) > tol and abs(best[1]) > tol:
        if (fx > 0.0) == (f_left > 0.0):
            if lo < x < hi:
                lo, f_left = x, fx
        elif lo < x < hi:
            hi = x
        mid = lo + 0.5 * (hi - lo)
        if not lo < mid < hi:
            break
        x, fx = mid, func(mid)
        evaluations += 1
        if abs(fx) < abs(best[1]):
            best = (x, fx)
    return best[0], best[1], evaluations


def solve_monotone(
    func: Callable[[float], float],
    start: float = 0.0,
    step: float = 1.0,
    abs_tol: Optional[float] = None,
    name: str = "root"
) -> RootResult:
    """
    単調関数 func の根をブラケット拡大 + Brent 法で求める

    Brent 法の停止条件は x についての許容誤差なので、根での残差 |func(root)| が
    abs_tol を超える場合は二分法で詰める。詰めても max(abs_tol, SOLVER['residual_tol'])
    を超える残差が残る場合（不連続な関数など）は失敗とする。

    Raises:
        BracketError: 上限までに符号変化が見つからない場合
        SolverError: Brent 法が収束しない場合、または残差が許容誤差を超える場合
    """
    abs_tol = abs_tol or SOLVER['abs_tol']
    a, b, fa, fb = expand_bracket(func, start, step)
    if a == b:
        return RootResult(a, fa, 0, (a, b))
    if fa == 0.0:
        return RootResult(a, 0.0, 0, (a, b))
    if fb == 0.0:
        return RootResult(b, 0.0, 0, (a, b))
    try:
        root, info = brentq(
            func, a, b,
            xtol=abs_tol,
            rtol=4 * 2.220446049250313e-16,
            maxiter=SOLVER['max_iter'],
            full_output=True
        )
    except (RuntimeError, ValueError) as e:
        logger.error(f"Brent solve for {name} failed on [{a}, {b}]: {e}")
        raise SolverError(f"Root solve for {name} did not converge: {e}") from e
    residual = func(root)
    root, residual, extra = _refine(func, root, residual, (a, b), fa, abs_tol)
    iterations = info.iterations + extra
    residual_tol = max(abs_tol, SOLVER['residual_tol'])
    if not abs(residual) <= residual_tol:
        logger.error(
            f"Root for {name} at {root} leaves residual {residual:.3e} "
            f"(tolerance {residual_tol:.1e})"
        )
        raise SolverError(
            f"Root solve for {name} left residual {residual:.3e} above {residual_tol:.1e}"
        )
    logger.debug(
        f"Solved {name} = {root} in {iterations} iterations, residual {residual:.3e}"
    )
    return RootResult(root, residual, iterations, (a, b))
