import os
import sys
import asyncio
import logging
from pathlib import Path

# Add the current directory to Python path
sys.path.insert(0, str(Path(__file__).parent))

from mdiqkd.logging_setup import configure_logging  # noqa: E402

configure_logging(os.getenv("LOG_LEVEL", "INFO"))
logger = logging.getLogger(__name__)


async def check_dependencies():
    """Check that the numeric stack is importable and the LP solver answers"""
    logger.info("Checking dependencies...")

    try:
        import numpy
        import pandas
        import scipy
        logger.info(f"✓ numpy {numpy.__version__}, scipy {scipy.__version__}, pandas {pandas.__version__}")
    except ImportError as e:
        logger.error(f"✗ Numeric stack missing: {e}")
        return False

    try:
        from scipy.optimize import linprog
        result = await asyncio.to_thread(linprog, [1.0], bounds=[(0.0, 1.0)], method="highs")
        if not result.success:
            raise RuntimeError(result.message)
        logger.info("✓ HiGHS linear-program solver is working")
    except Exception as e:
        logger.error(f"✗ LP solver check failed: {e}")
        return False

    logger.info("All dependency checks passed!")
    return True


async def check_reference_data():
    """Load the packaged reference run and published tables"""
    logger.info("Checking reference data...")

    try:
        from mdiqkd.io import load_published_key_params, load_published_tables, load_run_config
        from mdiqkd.decoy import key_rate

        load_run_config()
        load_published_tables()
        report = key_rate(**load_published_key_params()["key_rate"])
        logger.info(f"✓ Published-parameter key rate R={report.rate:.3e}, L={report.key_length}")
        return True

    except Exception as e:
        logger.error(f"✗ Reference data check failed: {e}")
        return False


def main():
    """Main startup function"""
    logger.info("=" * 50)
    logger.info("MDI-QKD Analysis API - Starting Up")
    logger.info("=" * 50)

    # Load environment variables
    from dotenv import load_dotenv
    load_dotenv()

    # Run async checks
    async def startup_checks():
        deps_ok = await check_dependencies()
        if not deps_ok:
            logger.error("Dependency checks failed. Exiting.")
            sys.exit(1)

        data_ok = await check_reference_data()
        if not data_ok:
            logger.error("Reference data checks failed. Exiting.")
            sys.exit(1)

        logger.info("✓ All startup checks passed!")
        logger.info("Starting FastAPI server...")

    asyncio.run(startup_checks())

    import uvicorn

    host = os.environ.get("HOST", "0.0.0.0")
    port = int(os.environ.get("PORT", "8000"))

    logger.info("Server configuration:")
    logger.info(f"  Host: {host}")
    logger.info(f"  Port: {port}")
    logger.info("=" * 50)

    try:
        import app
        logger.info("✓ App module imports successfully")

        uvicorn.run(
            app.app,
            host=host,
            port=port,
            log_level="info",
            access_log=True
        )
    except KeyboardInterrupt:
        logger.info("Server stopped by user")
    except Exception as e:
        logger.error(f"Server failed to start: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
