from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import IsoSchedError, SchedulerError
from . import schemas, service

app = FastAPI(title="isosched", version=__version__)


@app.exception_handler(IsoSchedError)
async def isosched_error(request: Request, exc: IsoSchedError):
    # scheduling failures are a property of the input, everything else is a bad request
    status = 409 if isinstance(exc, SchedulerError) else 422
    return JSONResponse(status_code=status, content={"module": exc.module, "error": str(exc),
                                                     "type": type(exc).__name__})


@app.exception_handler(ValueError)
async def value_error(request: Request, exc: ValueError):
    return JSONResponse(status_code=422, content={"module": "isosched", "error": str(exc), "type": "ValueError"})


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/schedule", response_model=schemas.ScheduleResponse)
def schedule(req: schemas.ScheduleRequest):
    return service.schedule(req)


@app.post("/simulate", response_model=schemas.RunReport)
def simulate(req: schemas.SimulateRequest):
    return service.simulate_run(req)


@app.post("/sweep-lbt", response_model=schemas.LbtResponse)
def sweep_lbt(req: schemas.LbtRequest):
    return service.sweep_lbt(req)


@app.post("/bench-mcu", response_model=schemas.BenchMcuResponse)
def bench_mcu(req: schemas.BenchMcuRequest):
    return service.bench_mcu(req)


@app.post("/gen-workload", response_model=schemas.GenWorkloadResponse)
def gen_workload(req: schemas.GenWorkloadRequest):
    return service.gen_workload(req)


@app.post("/validate", response_model=schemas.ValidateResponse)
def validate(req: schemas.ValidateRequest):
    return service.validate(req)
