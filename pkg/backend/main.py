# backend/main.py
import logging

from fastapi import FastAPI

from config import APP_VERSION, LOG_LEVEL
from routes import estimate_routes, sweep_routes

app = FastAPI(
    title="XL-MIMO Near-Field Channel Estimation",
    description="Simulated near-field XL-MIMO uplink with ASSBL and baseline channel estimators",
    version=APP_VERSION,
)

# Include routers
app.include_router(estimate_routes.router, tags=["Estimation"])
app.include_router(sweep_routes.router, tags=["Benchmark"])


@app.get("/")
async def root():
    """Root endpoint with API information"""
    return {
        "message": "XL-MIMO Near-Field Channel Estimation",
        "version": APP_VERSION,
        "status": "operational",
        "endpoints": {
            "/estimate": "POST - Simulate one instance and compare estimators",
            "/sweep": "POST - Run an SNR or pilot-length Monte Carlo sweep",
            "/health": "GET - Health check",
        },
        "estimators": ["assbl", "ssbl_fixed", "dft_ssbl", "polar_omp", "oracle_ls"],
    }


@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {"status": "healthy", "version": APP_VERSION}


def serve(host: str = "0.0.0.0", port: int = 8000):
    import uvicorn

    logger = logging.getLogger(__name__)
    logger.info("=" * 60)
    logger.info("🚀 Starting XL-MIMO estimation service")
    logger.info("📍 Server: http://localhost:%d", port)
    logger.info("📖 Docs: http://localhost:%d/docs", port)
    logger.info("=" * 60)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    logging.basicConfig(level=LOG_LEVEL, format="%(message)s")
    serve()
