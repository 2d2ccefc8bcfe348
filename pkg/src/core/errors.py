from typing import Any, Optional, Tuple


class ImpactPricerError(Exception):
    """impact_pricer の基本例外クラス"""
    code = "error"
    exit_code = 1


class ConfigError(ImpactPricerError):
    """シナリオ設定・CLI引数の検証エラー"""
    code = "config_error"
    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class SolverError(ImpactPricerError):
    """求根・均衡計算の失敗"""
    code = "solver_error"
    exit_code = 3


class BracketError(SolverError):
    """ブラケット拡大に失敗した場合のエラー（最後のブラケットを保持）"""
    code = "bracket_failure"

    def __init__(self, message: str, bracket: Tuple[float, float], values: Tuple[float, float]):
        self.bracket = bracket
        self.values = values
        super().__init__(
            f"{message} (last bracket {bracket}, residuals {values})"
        )


class NoFiniteDemandError(SolverError):
    """需要が有限にならない価格（効用需要裁定）"""
    code = "no_finite_demand"


class DegenerateMarketError(SolverError):
    """PEPQ の一意性条件が満たされない市場"""
    code = "degenerate_market"


class PathFailureError(SolverError):
    """非有限な H を持つパスが多すぎる場合のエラー"""
    code = "path_failure"


class UnsupportedExpressionError(ImpactPricerError):
    """エンジンが扱えない確率変数表現"""
    code = "unsupported_expression"
    exit_code = 3


class NumericOverflowError(ImpactPricerError):
    """期待値評価での非有限値"""
    code = "numeric_overflow"
    exit_code = 4

    def __init__(self, message: str, hint: Optional[Any] = None):
        self.hint = hint
        if hint:
            message = f"{message}; {hint}"
        super().__init__(message)
