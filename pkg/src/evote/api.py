"""HTTP/JSON surface of the election service.

All bodies are UTF-8 JSON; ciphertexts travel as lowercase hex value +
hex key fingerprint.  Voter endpoints authenticate with a bearer session
token, admin endpoints with an X-Admin-Token header.
"""

from __future__ import annotations

from typing import List, Optional

from fastapi import FastAPI, Header, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import election as el
from . import ledger as lg
from .election import ElectionService
from .schema import AnswerSet, SchemaError, batch_from_wire


class CiphertextWire(BaseModel):
    value: str
    fingerprint: str


class BatchWire(BaseModel):
    schema_id: str
    ciphertexts: List[CiphertextWire]


class AnswersWire(BaseModel):
    schema_id: str
    answers: List[int]


class RegisterBody(BaseModel):
    voter_id: str
    password: str


class LoginBody(BaseModel):
    voter_id: str
    password: str


class QuestionnaireBody(BaseModel):
    batch: BatchWire


class PlainQuestionnaireBody(BaseModel):
    answers: AnswersWire


class VoteBody(BaseModel):
    candidate: str


class AdminStateBody(BaseModel):
    target: str


class ReceiptOut(BaseModel):
    receipt_id: str
    block_index: int
    record_digest: str


class TokenOut(BaseModel):
    token: str
    expires_at: float


_ERROR_STATUS = (
    (el.SessionExpiredError, 401),
    (el.AuthenticationError, 401),
    (el.AdminAuthError, 403),
    (el.DuplicateVoterError, 409),
    (el.WeakPasswordError, 400),
    (el.QuestionnaireRequiredError, 409),
    (el.NotVotedError, 404),
    (el.ElectionStateError, 409),
    (el.BatchError, 400),
    (lg.AlreadyVotedError, 409),
    (lg.InvalidVoteError, 400),
    (lg.ReplicationError, 503),
    (lg.UnknownReceiptError, 404),
    (lg.DigestMismatchError, 500),
    (el.ServiceError, 400),
    (lg.LedgerError, 500),
    (SchemaError, 400),
)


def _status_for(exc: Exception) -> int:
    for cls, status in _ERROR_STATUS:
        if isinstance(exc, cls):
            return status
    return 500


def _receipt_out(receipt: lg.Receipt) -> dict:
    return {
        "receipt_id": receipt.receipt_id,
        "block_index": receipt.block_index,
        "record_digest": receipt.record_digest.hex(),
    }


def _bearer_token(authorization: Optional[str]) -> str:
    if not authorization or not authorization.startswith("Bearer "):
        raise el.AuthenticationError("authentication failed")
    return authorization[len("Bearer ") :]


def create_app(service: ElectionService) -> FastAPI:
    app = FastAPI(title="evote", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(Exception)
    async def _service_errors(request: Request, exc: Exception):
        if isinstance(exc, (el.ServiceError, lg.LedgerError, SchemaError, ValueError)):
            return JSONResponse(status_code=_status_for(exc), content={"error": str(exc)})
        raise exc

    @app.post("/api/register", status_code=201)
    def register(body: RegisterBody):
        record = service.register_voter(body.voter_id, body.password)
        return {"voter_id": record.voter_id}

    @app.post("/api/login", response_model=TokenOut)
    def login(body: LoginBody):
        session = service.verify_voter(body.voter_id, body.password)
        return TokenOut(token=session.token, expires_at=session.expires_at)

    @app.get("/api/election")
    def election_view():
        return service.election_view()

    @app.post("/api/questionnaire", status_code=204)
    def questionnaire(body: QuestionnaireBody, authorization: Optional[str] = Header(None)):
        token = _bearer_token(authorization)
        batch = batch_from_wire(body.batch.model_dump())
        service.collect_voter(token, batch)
        return Response(status_code=204)

    @app.post("/api/questionnaire/plain", status_code=204)
    def questionnaire_plain(
        body: PlainQuestionnaireBody, authorization: Optional[str] = Header(None)
    ):
        token = _bearer_token(authorization)
        answers = AnswerSet(body.answers.schema_id, tuple(body.answers.answers))
        service.collect_voter_plain(token, answers)
        return Response(status_code=204)

    @app.post("/api/vote", response_model=ReceiptOut)
    def cast_vote(body: VoteBody, authorization: Optional[str] = Header(None)):
        token = _bearer_token(authorization)
        receipt = service.cast_vote(token, body.candidate)
        return _receipt_out(receipt)

    @app.get("/api/vote")
    def check_vote(authorization: Optional[str] = Header(None)):
        token = _bearer_token(authorization)
        view = service.check_vote(token)
        return {
            "vote": view.vote,
            "receipt": _receipt_out(view.receipt),
            "cast_at": view.cast_at,
        }

    @app.get("/api/tally")
    def tally():
        result = service.tally_result()
        if result is None:
            return JSONResponse(status_code=404, content={"error": "tally not available"})
        return result.to_json()

    @app.post("/api/admin/state")
    def admin_state(body: AdminStateBody, x_admin_token: Optional[str] = Header(None)):
        service.transition_election(x_admin_token or "", body.target)
        return service.election_view()

    @app.get("/api/analysis")
    def analysis():
        doc = service.analysis_document()
        if doc is None:
            return JSONResponse(status_code=404, content={"error": "analysis not available"})
        return doc

    return app
