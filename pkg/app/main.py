"""
Main FastAPI application for the MDI-QKD analysis API
"""
import logging
import time
from contextlib import asynccontextmanager
from typing import Callable

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from mdiqkd import __version__ as library_version
from mdiqkd.exceptions import QKDError

from .config import config, setup_logging, validate_settings
from .routes import analysis_router, health_router, optimizer_router, simulation_router

setup_logging(config)

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Application lifespan manager"""
    # Startup
    logger.info("🚀 Starting MDI-QKD analysis API...")

    try:
        validate_settings(config)
        logger.info(f"✅ Analysis library {library_version} ready "
                    f"(quadrature_points={config.QUADRATURE_POINTS}, lp_cutoff={config.LP_CUTOFF})")
    except Exception as e:
        logger.error(f"❌ Application startup failed: {str(e)}")
        raise

    yield

    # Shutdown
    logger.info("🛑 Shutting down MDI-QKD analysis API...")


async def request_timing_middleware(request: Request, call_next: Callable) -> Response:
    """Log every request with its processing time"""
    start_time = time.time()
    response = await call_next(request)
    processing_time = time.time() - start_time

    response.headers["X-Processing-Time"] = f"{processing_time:.4f}"
    response.headers["X-MDIQKD-Version"] = library_version

    if processing_time > 5.0:
        logger.warning(f"Slow request {request.method} {request.url.path}: {processing_time:.2f}s")
    else:
        logger.debug(f"{request.method} {request.url.path} -> {response.status_code} in {processing_time:.3f}s")
    return response


async def qkd_error_handler(request: Request, exc: QKDError) -> JSONResponse:
    """Analysis errors are caller input problems"""
    logger.warning(f"❌ {request.url.path} rejected: {type(exc).__name__}: {exc}")
    return JSONResponse(
        status_code=422,
        content={"detail": str(exc), "error_type": type(exc).__name__},
    )


# Create FastAPI app
def create_app() -> FastAPI:
    """Create and configure FastAPI application"""

    app = FastAPI(
        title=config.TITLE,
        description=config.DESCRIPTION,
        version=config.VERSION,
        docs_url="/docs",
        redoc_url="/redoc",
        lifespan=lifespan,
    )

    app.add_middleware(
        CORSMiddleware,
        allow_origins=config.ALLOWED_ORIGINS,
        allow_credentials=False,
        allow_methods=["GET", "POST", "OPTIONS"],
        allow_headers=["Content-Type"],
        expose_headers=["X-Processing-Time", "X-MDIQKD-Version"],
    )
    app.middleware("http")(request_timing_middleware)
    app.add_exception_handler(QKDError, qkd_error_handler)

    app.include_router(health_router)
    app.include_router(analysis_router)
    app.include_router(simulation_router)
    app.include_router(optimizer_router)
    logger.info("✅ API routers registered")

    @app.get("/", tags=["System Information"])
    async def root():
        return {
            "service": config.TITLE,
            "version": config.VERSION,
            "library_version": library_version,
            "endpoints": {
                "health": "/health",
                "key_rate": "/api/key-rate",
                "analyze": "/api/analyze",
                "expected_tallies": "/api/expected-tallies",
                "optimize": "/api/optimize",
                "docs": "/docs",
            },
        }

    return app


app = create_app()
