from typing import Any

from marshmallow import (
    Schema,
    ValidationError,
    post_load,
    validates_schema,
)
from marshmallow.fields import (
    Boolean,
    Date,
    Dict,
    Enum,
    Float,
    Integer,
    List,
    Nested,
    String,
    Time,
)
from marshmallow.validate import Range

from volfeedback.calibrator import CalibrationResult
from volfeedback.models import ModelParams, OptionQuote, Specification


class BaseSchema(Schema):
    class Meta:
        ordered = True
        unknown = "exclude"


def positive(**kwargs: Any) -> Float:
    return Float(validate=Range(min=0, min_inclusive=False), **kwargs)


def non_negative(**kwargs: Any) -> Float:
    return Float(validate=Range(min=0), **kwargs)


class OptionQuoteSchema(BaseSchema):
    quote_date = Date(required=True)
    timestamp = Time(required=True)
    spot = positive(required=True)
    strike = positive(required=True)
    expiry_date = Date(required=True)
    bid = non_negative(required=True)
    ask = non_negative(required=True)
    tbill_rate = Float(required=True)
    vol_proxy = positive(required=True)

    @validates_schema
    def validate_quote(self, data: dict[str, Any], **_: Any) -> None:
        if data["bid"] > data["ask"]:
            raise ValidationError(
                f"bid {data['bid']} exceeds ask {data['ask']}", "bid"
            )

        if data["expiry_date"] <= data["quote_date"]:
            raise ValidationError(
                "expiry_date must be after quote_date", "expiry_date"
            )

    @post_load
    def make_quote(self, data: dict[str, Any], **_: Any) -> OptionQuote:
        return OptionQuote(**data)


class DividendSchema(BaseSchema):
    date = Date(required=True)
    amount = non_negative(required=True)


class ContractSchema(BaseSchema):
    spot = positive(required=True)
    strike = non_negative(required=True)
    maturity_years = positive(required=True)
    rate = Float(required=True)
    x0 = Float(required=True)


class ModelParamsSchema(BaseSchema):
    r = Float()
    alpha = Float()
    gamma = Float()
    beta = Float()
    beta_q = Float()
    sigma_x = Float()
    rho_dx = Float()
    lambda_x = Float(dump_only=True)


class PathStatisticsSchema(BaseSchema):
    n_paths = Integer()
    n_steps = Integer()
    corr_dx2_dlnp = Float()
    corr_dx2_dlnd = Float()
    feedback_gap = Float()
    realized_vol_ratio = Float()
    mean_vol_ratio = Float()
    mean_rho_rx = Float()
    squared_return_autocorr = Float(allow_nan=True)


class FilterReportSchema(BaseSchema):
    input_count = Integer()
    retained = Integer()
    excluded = Dict(keys=String(), values=Integer())
    dividend_source = String()


class CalibrationResultSchema(BaseSchema):
    specification = Enum(Specification, by_value=True, required=True)
    params = Nested(ModelParamsSchema, required=True)
    estimates = Dict(keys=String(), values=Float(), required=True)
    standard_errors = Dict(keys=String(), values=Float(), allow_none=True)
    in_sample_rmse = Float(required=True)
    out_sample_rmse = Float(allow_none=True)
    n_in_sample = Integer(required=True)
    n_out_sample = Integer()
    iterations = Integer(required=True)
    evaluations = Integer(required=True)
    converged = Boolean(required=True)
    implied_lambda_x = Float(allow_none=True)
    lambda_gap = Float(allow_none=True)
    notes = List(String())
    filter_report = Nested(FilterReportSchema, allow_none=True)

    @post_load
    def make_result(self, data: dict[str, Any], **_: Any) -> CalibrationResult:
        data.pop("filter_report", None)

        return CalibrationResult(
            **{**data, "params": ModelParams(**data["params"])}
        )
