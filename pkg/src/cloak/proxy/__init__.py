from cloak.proxy.engine import (
    AddressError,
    BatchPlan,
    Cache,
    ProxyConfig,
    ProxyEngine,
    Response,
)

__all__ = ["AddressError", "BatchPlan", "Cache", "ProxyConfig", "ProxyEngine", "Response"]
