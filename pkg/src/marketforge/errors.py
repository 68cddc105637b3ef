"""Exception hierarchy shared across the package.

Three broad families matter to callers: configuration problems
(:class:`ConfigError`), bad or missing data (:class:`DataError` and
subclasses), and runtime failures in environments, agents, or solvers.
The CLI maps these onto exit codes 2 / 3 / 4.
"""


class MarketForgeError(Exception):
    """Base class for all package errors."""


class ConfigError(MarketForgeError):
    """Invalid or inconsistent run configuration."""


# ---------------------------------------------------------------- data layer


class DataError(MarketForgeError):
    """Problems ingesting, merging, or validating market data."""


class SchemaMismatch(DataError):
    """CSV header (or wire payload) does not match the expected schema."""


class MalformedRow(DataError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class DuplicateKey(DataError):
    """Repeated (ticker, timestamp) pair in one source or across sources."""


class IntervalMismatch(DataError):
    """Raw tables with different bar intervals cannot be merged."""


class EmptyInput(DataError):
    """No tables (or no rows) supplied where at least one is required."""


class HttpError(DataError):
    def __init__(self, status: int, message: str = ""):
        super().__init__(f"HTTP {status}" + (f": {message}" if message else ""))
        self.status = status


class RateLimited(HttpError):
    """HTTP 429 persisted past the retry budget."""

    def __init__(self, message: str = ""):
        super().__init__(429, message)


class EmptyResponse(DataError):
    """Remote source returned zero bars for the requested range."""


class NonPsdCorrelation(DataError):
    """Correlation matrix is not positive semi-definite within tolerance."""


# ------------------------------------------------------------- feature layer


class WindowTooLarge(DataError):
    """Indicator window does not fit the dataset."""


class NameCollision(DataError):
    """A feature column with this name already exists."""


# --------------------------------------------------------- environment layer


class EnvError(MarketForgeError):
    """Errors raised while stepping market environments."""


class EpisodeFinished(EnvError):
    """step() called after the final bar."""


class NonFiniteAction(EnvError):
    """Action contained NaN or +/-inf where a finite value is required."""


class FractionOutOfRange(EnvError):
    """Liquidation fraction outside [0, 1]."""


class ShapeMismatch(MarketForgeError):
    """Vector/matrix dimensions do not line up."""


# -------------------------------------------------------------- agent layer


class AgentError(MarketForgeError):
    """Errors in learning machinery."""


class NoCachedForward(AgentError):
    """backward() called before forward() cached activations."""


class BufferTooSmall(AgentError):
    """Replay buffer holds fewer transitions than one batch."""


class EmptyRollout(AgentError):
    """On-policy update requested with no transitions collected."""


# ------------------------------------------------------------ strategy layer


class WindowTooShort(MarketForgeError):
    """Moment-estimation window too short for the number of assets."""


# ----------------------------------------------------------------- eval layer


class ZeroVolatility(MarketForgeError):
    """Return series has zero standard deviation; ratio is undefined."""


class TooFewYears(MarketForgeError):
    """Yearly-return volatility needs at least two yearly observations."""


# -------------------------------------------------------------- pipeline layer


class OverlappingSplits(ConfigError):
    """Train/validation/test ranges overlap or are out of order."""


class EmptySlice(DataError):
    """A requested date range selects no rows."""


class InsufficientData(DataError):
    """Dataset too short for even one rolling window."""
